use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ModelParams;
use super::{eval, grad};
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub epsilon: f64,
    /// Check at most this many coordinates per parameter tensor (chosen
    /// uniformly with `seed`); `None` checks every coordinate.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
    /// Test hook: perturbs one analytic gradient entry so the checker's
    /// detection path can be exercised.
    pub corrupt_analytic: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_coords_per_param: None,
            seed: 0,
            corrupt_analytic: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < tol
    }
}

fn rel_error(a: f64, n: f64) -> f64 {
    if !(a.is_finite() && n.is_finite()) {
        return f64::INFINITY;
    }
    (a - n).abs() / a.abs().max(n.abs()).max(1e-12)
}

/// Compares reverse-mode gradients of `build` against central finite
/// differences and returns the worst relative error.
pub fn grad_check<F, B>(params: &ModelParams<F>, build: B, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Scalar,
    B: Fn(&mut Graph<F>, &[Var]) -> Result<Var>,
{
    let (_, mut analytic) = grad(params, &build)?;
    if opts.corrupt_analytic {
        if let Some(t) = analytic.iter_mut().find(|t| !t.is_empty()) {
            let v = t.data()[0];
            t.data_mut()[0] = v + F::of(1e-3) * (F::one() + v.abs());
        }
    }
    let eps = F::of(opts.epsilon);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    let mut probe = params.clone();
    let value_at = |p: &ModelParams<F>| -> f64 {
        eval(p, |g, vars| {
            let v = build(g, vars)?;
            g.check_finite()?;
            Ok(g.value(v).item())
        })
        .map(|v| v.as_f64())
        .unwrap_or(f64::NAN)
    };
    for slot in 0..params.len() {
        let n = params.entry(slot).tensor.len();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = params.entry(slot).tensor.data()[i];
            let (hi, lo) = (orig + eps, orig - eps);
            probe.tensor_mut(slot).data_mut()[i] = hi;
            let up = value_at(&probe);
            probe.tensor_mut(slot).data_mut()[i] = lo;
            let down = value_at(&probe);
            probe.tensor_mut(slot).data_mut()[i] = orig;
            // divide by the step actually taken after rounding
            let numeric = (up - down) / (hi - lo).as_f64();
            let err = rel_error(analytic[slot].data()[i].as_f64(), numeric);
            report.coords_checked += 1;
            if !(err <= report.max_rel_error) {
                report.max_rel_error = err;
                report.worst = Some((params.entry(slot).name.clone(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    fn quad_params() -> ModelParams<f64> {
        let mut p = ModelParams::new();
        p.insert("w", Tensor::vector(vec![0.3, -1.2, 2.5]), false).unwrap();
        p
    }

    fn quadratic(g: &mut Graph<f64>, v: &[Var]) -> Result<Var> {
        let sq = g.mul(v[0], v[0])?;
        Ok(g.sum(sq))
    }

    #[test]
    fn quadratic_is_exact() {
        let r = grad_check(&quad_params(), quadratic, &GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.coords_checked, 3);
    }

    #[test]
    fn corruption_is_detected() {
        let opts = GradCheckOptions {
            corrupt_analytic: true,
            ..GradCheckOptions::default()
        };
        let r = grad_check(&quad_params(), quadratic, &opts).unwrap();
        assert!(!r.passes(1e-5));
        assert_eq!(r.worst, Some(("w".to_string(), 0)));
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let (v, grads) = grad(&quad_params(), |g, _| Ok(g.scalar(4.0))).unwrap();
        assert_eq!(v, 4.0);
        assert!(grads[0].data().iter().all(|&x| x == 0.0));
    }
}
