//! Central finite-difference verification of tape gradients.

use super::graph::{Graph, Var};
use super::{NumericsError, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Entries probed per parameter tensor, spread evenly; `None` probes all.
    pub max_entries_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-5, max_entries_per_param: None }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over probes of `|g_ad − g_fd| / max(1, |g_ad|, |g_fd|)`
    pub max_rel_error: f64,
    pub worst_param: String,
    pub probes: usize,
}

/// Compares reverse-mode gradients of the scalar built by `build` against
/// central differences. Only parameters bound as trainable leaves
/// (via [`ParamStore::bind`] with `trainable = true`) are probed.
pub fn grad_check<F>(
    store: &ParamStore,
    build: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, NumericsError>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    if !g.scalar(loss).is_finite() {
        return Err(NumericsError::NonFinite("loss".into()));
    }
    let grads = g.backward(loss)?;
    let eval = |s: &ParamStore| -> Result<f64, NumericsError> {
        let mut g = Graph::new();
        let l = build(&mut g, s)?;
        let v = g.scalar(l);
        if !v.is_finite() {
            return Err(NumericsError::NonFinite("loss".into()));
        }
        Ok(v)
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, worst_param: String::new(), probes: 0 };
    let mut seen = std::collections::BTreeSet::new();
    let mut work = store.clone();
    for (_, name) in g.params() {
        if !seen.insert(name.clone()) {
            continue;
        }
        // a name bound more than once accumulates across all its bindings
        let mut analytic = store.value(name)?.clone();
        analytic.fill(0.0);
        for (v2, n2) in g.params() {
            if n2 == name {
                if let Some(gr) = grads.get(*v2) {
                    analytic.add_assign(gr);
                }
            }
        }
        let n = analytic.data().len();
        let probes: Vec<usize> = match opts.max_entries_per_param {
            Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
            _ => (0..n).collect(),
        };
        for e in probes {
            let orig = work.value(name)?.data()[e];
            work.value_mut(name)?.data_mut()[e] = orig + opts.eps;
            let fp = eval(&work)?;
            work.value_mut(name)?.data_mut()[e] = orig - opts.eps;
            let fm = eval(&work)?;
            work.value_mut(name)?.data_mut()[e] = orig;
            let fd = (fp - fm) / (2.0 * opts.eps);
            let ad = analytic.data()[e];
            let rel = (ad - fd).abs() / 1f64.max(ad.abs()).max(fd.abs());
            report.probes += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = format!("{name}[{e}]");
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor2D;

    #[test]
    fn quadratic() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor2D::filled(1, 1, 3.0));
        let build = |g: &mut Graph, s: &ParamStore| {
            let x = s.bind(g, "x", true)?;
            let sq = g.matmul(x, x)?;
            Ok(g.sum(sq))
        };
        let mut g = Graph::new();
        let l = build(&mut g, &store).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(g.params()[0].0).unwrap().get(0, 0), 6.0);
        let r = grad_check(&store, build, GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error <= 1e-7, "{r:?}");
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor2D::filled(1, 1, f64::NAN));
        let r = grad_check(
            &store,
            |g, s| {
                let x = s.bind(g, "x", true)?;
                Ok(g.sum(x))
            },
            GradCheckOptions::default(),
        );
        assert!(matches!(r, Err(NumericsError::NonFinite(_))));
    }
}
