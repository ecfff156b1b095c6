use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::numerics::{NumericsError, Tensor2D};

/// Learnable Fourier features of a 3D location.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierPositionEncoder {
    /// 3 × (d_f/2) frequency matrix.
    pub b: Tensor2D,
}

impl FourierPositionEncoder {
    pub fn new(b: Tensor2D) -> Result<Self, NumericsError> {
        if b.rows() != 3 || b.cols() == 0 {
            return Err(NumericsError::Shape(format!("frequency matrix must be 3×h, got {:?}", b.shape())));
        }
        if !b.is_finite() {
            return Err(NumericsError::NonFinite("frequency matrix".into()));
        }
        Ok(Self { b })
    }

    /// Standard-normal frequencies.
    pub fn random<R: Rng + ?Sized>(d_f: usize, rng: &mut R) -> Self {
        let data = (0..3 * (d_f / 2)).map(|_| rng.sample(StandardNormal)).collect();
        Self { b: Tensor2D::from_vec(3, d_f / 2, data).expect("length matches") }
    }

    pub fn width(&self) -> usize {
        2 * self.b.cols()
    }

    pub fn encode(&self, loc: [f64; 3]) -> Vec<f64> {
        let h = self.b.cols();
        let mut out = vec![0.0; 2 * h];
        for j in 0..h {
            let t = 2.0 * PI * (loc[0] * self.b.get(0, j) + loc[1] * self.b.get(1, j) + loc[2] * self.b.get(2, j));
            out[j] = t.sin();
            out[h + j] = t.cos();
        }
        out
    }
}

/// `[sin(2π·loc·B) ; cos(2π·loc·B)]`
pub fn fourier_encode(loc: [f64; 3], encoder: &FourierPositionEncoder) -> Vec<f64> {
    encoder.encode(loc)
}
