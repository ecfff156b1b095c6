//! AdamW with decoupled weight decay and the cosine learning-rate schedule.

use std::f64::consts::PI;

use super::{NumericsError, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Result<Self, NumericsError> {
        let opt = Self { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        opt.validate()?;
        Ok(opt)
    }

    fn validate(&self) -> Result<(), NumericsError> {
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(NumericsError::InvalidHyper(format!(
                "lr {} and weight decay {} must be non-negative",
                self.lr, self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(NumericsError::InvalidHyper("betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// One update of every parameter selected by `trainable`; the step
    /// counter advances once per call.
    pub fn step(
        &self,
        store: &mut ParamStore,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<(), NumericsError> {
        self.validate()?;
        store.bump_step();
        let t = store.step() as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, e) in store.entries_mut() {
            if !trainable(name) {
                continue;
            }
            if !e.grad.is_finite() {
                return Err(NumericsError::NonFinite(format!("gradient of `{name}`")));
            }
            let decay = 1.0 - self.lr * self.weight_decay;
            let n = e.value.data().len();
            for i in 0..n {
                let g = e.grad.data()[i];
                let m = self.beta1 * e.m.data()[i] + (1.0 - self.beta1) * g;
                let v = self.beta2 * e.v.data()[i] + (1.0 - self.beta2) * g * g;
                e.m.data_mut()[i] = m;
                e.v.data_mut()[i] = v;
                let mhat = m / bc1;
                let vhat = v / bc2;
                let p = e.value.data()[i] * decay;
                e.value.data_mut()[i] = p - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total))`
pub fn cosine_lr(step: u64, total_steps: u64, lr_max: f64, lr_min: f64) -> Result<f64, NumericsError> {
    if total_steps == 0 {
        return Err(NumericsError::InvalidHyper("total_steps must be positive".into()));
    }
    if step > total_steps {
        return Err(NumericsError::InvalidHyper(format!("step {step} beyond {total_steps}")));
    }
    let frac = step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * frac).cos()))
}
