//! Weibull time-to-event mathematics.
//!
//! Times are measured in window units throughout: `t_g` is the time from the
//! end of an observation window to failure (or to censoring).

pub mod special;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Adam, AdamConfig, Graph, ModelParams, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Smallest shape value produced by [`transform_outputs`].
pub const K_FLOOR: f64 = 1e-3;

/// Default lower clamp for event times before they enter the likelihood.
pub const DEFAULT_MIN_EVENT_TIME: f64 = 0.5;

/// Scale `lambda` and shape `k` of a Weibull distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams<F> {
    pub lambda: F,
    pub k: F,
}

impl<F: Scalar> WeibullParams<F> {
    pub fn new(lambda: F, k: F) -> Result<Self> {
        if !(lambda > F::zero() && lambda.is_finite() && k > F::zero() && k.is_finite()) {
            return Err(Error::domain(format!(
                "weibull params need lambda > 0, k > 0, got ({lambda}, {k})"
            )));
        }
        Ok(Self { lambda, k })
    }
}

/// Observed time with its event indicator (`true` = failure observed).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventSample<F> {
    pub t_g: F,
    pub delta: bool,
}

impl<F: Scalar> EventSample<F> {
    pub fn failed(t_g: F) -> Self {
        Self { t_g, delta: true }
    }

    pub fn censored(t_g: F) -> Self {
        Self { t_g, delta: false }
    }
}

/// Raw outputs of the Weibull head before the positivity transforms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadOutputs<F> {
    pub o1: F,
    pub o2: F,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeibullEval<F> {
    pub pdf: F,
    pub cdf: F,
    pub hazard: F,
}

pub fn weibull_eval<F: Scalar>(t: F, p: &WeibullParams<F>) -> Result<WeibullEval<F>> {
    if !(t > F::zero()) {
        return Err(Error::domain(format!("weibull_eval needs t > 0, got {t}")));
    }
    let z = t / p.lambda;
    let hazard = p.k / p.lambda * z.powf(p.k - F::one());
    let surv = (-z.powf(p.k)).exp();
    Ok(WeibullEval {
        pdf: hazard * surv,
        cdf: F::one() - surv,
        hazard,
    })
}

/// `lambda = exp(o1)`, `k = softplus(o2)` floored at [`K_FLOOR`].
pub fn transform_outputs<F: Scalar>(o: HeadOutputs<F>) -> WeibullParams<F> {
    let lambda = o.o1.exp();
    let raw_k = crate::diffcore::graph::softplus(o.o2);
    let floor = F::of(K_FLOOR);
    if raw_k < floor {
        log::warn!("weibull shape floored: softplus({}) = {} < {}", o.o2, raw_k, K_FLOOR);
    }
    WeibullParams {
        lambda,
        k: raw_k.max(floor),
    }
}

fn taylor4<F: Scalar>(u: F) -> F {
    let u2 = u * u;
    F::one() + u + u2 / F::of(2.0) + u2 * u / F::of(6.0) + u2 * u2 / F::of(24.0)
}

/// Fourth-order expansion of `(t_g / lambda)^k` around `k ln(t_g / lambda) = 0`.
pub fn poly_pow<F: Scalar>(t_g: F, p: &WeibullParams<F>) -> Result<F> {
    if !(t_g > F::zero()) {
        return Err(Error::domain(format!("poly_pow needs t_g > 0, got {t_g}")));
    }
    Ok(taylor4(p.k * (t_g / p.lambda).ln()))
}

/// Right-censored negative log-likelihood summed over `batch`, plus `l2_term`.
///
/// Every sample contributes `(t_g / lambda)^k` (the cumulative hazard);
/// failed samples additionally contribute the negative log hazard.
pub fn weibull_nll<F: Scalar>(
    batch: &[(EventSample<F>, WeibullParams<F>)],
    l2_term: F,
    use_poly: bool,
) -> Result<F> {
    if batch.is_empty() {
        return Err(Error::domain("weibull_nll on an empty batch"));
    }
    let mut total = F::zero();
    for (s, p) in batch {
        if !(s.t_g > F::zero()) {
            return Err(Error::domain(format!("weibull_nll needs t_g > 0, got {}", s.t_g)));
        }
        let log_ratio = (s.t_g / p.lambda).ln();
        let power = if use_poly {
            taylor4(p.k * log_ratio)
        } else {
            (p.k * log_ratio).exp()
        };
        let log_hazard = if s.delta {
            (p.k / p.lambda).ln() + (p.k - F::one()) * log_ratio
        } else {
            F::zero()
        };
        total += power - log_hazard;
    }
    Ok(total + l2_term)
}

/// Mean residual life `lambda Γ(1 + 1/k)`.
pub fn expected_rul<F: Scalar>(p: &WeibullParams<F>) -> F {
    p.lambda * special::gamma(F::one() + F::one() / p.k)
}

/// Probability of failing within horizon `tau`: `1 - exp(-(tau/lambda)^k)`.
pub fn failure_prob<F: Scalar>(p: &WeibullParams<F>, tau: F) -> Result<F> {
    if tau < F::zero() || tau.is_nan() {
        return Err(Error::domain(format!("failure_prob needs tau >= 0, got {tau}")));
    }
    Ok(-(-(tau / p.lambda).powf(p.k)).exp_m1())
}

pub fn gamma_fn<F: Scalar>(x: F) -> Result<F> {
    if !(x > F::zero()) {
        return Err(Error::domain(format!("gamma_fn needs x > 0, got {x}")));
    }
    Ok(special::gamma(x))
}

/// Inverse-CDF draw: `lambda (-ln u)^(1/k)`.
pub fn sample<F: Scalar>(p: &WeibullParams<F>, u: F) -> Result<F> {
    if !(u > F::zero() && u < F::one()) {
        return Err(Error::domain(format!("sample needs u in (0,1), got {u}")));
    }
    Ok(p.lambda * (-u.ln()).powf(F::one() / p.k))
}

/// Differentiable `(ln lambda, k)` from head outputs `out: [n, 2]`.
pub fn params_expr<F: Scalar>(g: &mut Graph<F>, out: Var) -> Result<(Var, Var)> {
    let log_lambda = g.slice_cols(out, 0, 1)?;
    let o2 = g.slice_cols(out, 1, 1)?;
    let sp = g.softplus(o2);
    let k = g.clamp_min(sp, F::of(K_FLOOR));
    Ok((log_lambda, k))
}

/// Differentiable censored NLL (sum over rows) for head outputs `out: [n, 2]`.
///
/// Event times must already be positive; callers clamp them first.
pub fn nll_expr<F: Scalar>(
    g: &mut Graph<F>,
    out: Var,
    samples: &[EventSample<F>],
    use_poly: bool,
) -> Result<Var> {
    let n = g.value(out).rows();
    if samples.len() != n {
        return Err(Error::config(format!(
            "nll_expr: {} samples for {} rows",
            samples.len(),
            n
        )));
    }
    if let Some(bad) = samples.iter().find(|s| !(s.t_g > F::zero())) {
        return Err(Error::domain(format!("nll_expr needs t_g > 0, got {}", bad.t_g)));
    }
    let (log_lambda, k) = params_expr(g, out)?;
    let ln_t = g.constant(Tensor::new(
        vec![n, 1],
        samples.iter().map(|s| s.t_g.ln()).collect(),
    )?);
    let delta = g.constant(Tensor::new(
        vec![n, 1],
        samples
            .iter()
            .map(|s| if s.delta { F::one() } else { F::zero() })
            .collect(),
    )?);
    let log_ratio = g.sub(ln_t, log_lambda)?;
    let u = g.mul(k, log_ratio)?;
    let power = if use_poly {
        let u2 = g.mul(u, u)?;
        let u3 = g.mul(u2, u)?;
        let u4 = g.mul(u2, u2)?;
        let t2 = g.scale(u2, F::of(0.5));
        let t3 = g.scale(u3, F::one() / F::of(6.0));
        let t4 = g.scale(u4, F::one() / F::of(24.0));
        let s = g.add(u, t2)?;
        let s = g.add(s, t3)?;
        let s = g.add(s, t4)?;
        g.add_scalar(s, F::one())
    } else {
        g.exp(u)
    };
    // ln(k/lambda) + (k-1) ln(t/lambda)
    let ln_k = g.ln(k);
    let a = g.sub(ln_k, log_lambda)?;
    let km1 = g.add_scalar(k, -F::one());
    let b = g.mul(km1, log_ratio)?;
    let log_hazard = g.add(a, b)?;
    let gated = g.mul(delta, log_hazard)?;
    let per_row = g.sub(power, gated)?;
    Ok(g.sum(per_row))
}

/// Differentiable mean residual life `exp(ln lambda + ln Γ(1 + 1/k))`, shape `[n, 1]`.
pub fn expected_rul_expr<F: Scalar>(g: &mut Graph<F>, out: Var) -> Result<Var> {
    let (log_lambda, k) = params_expr(g, out)?;
    let inv_k = g.recip(k);
    let arg = g.add_scalar(inv_k, F::one());
    let lg = g.ln_gamma(arg);
    let s = g.add(log_lambda, lg)?;
    Ok(g.exp(s))
}

/// Fits a single `(lambda, k)` shared by all samples by Adam on the
/// censored NLL, starting from `init`.
pub fn fit_constant<F: Scalar>(
    samples: &[EventSample<F>],
    init: WeibullParams<F>,
    use_poly: bool,
    steps: usize,
    learning_rate: F,
) -> Result<WeibullParams<F>> {
    let n = samples.len();
    let o2 = init.k.exp_m1().ln();
    let mut params = ModelParams::new();
    params.insert("head", Tensor::vector(vec![init.lambda.ln(), o2]), false)?;
    let mut adam = Adam::new(
        &params,
        AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        },
    );
    let scale = F::one() / F::of(n as f64);
    for _ in 0..steps {
        let (_, grads) = crate::diffcore::grad(&params, |g, vars| {
            let ones = g.constant(Tensor::full(&[n, 1], F::one()));
            let row = g.constant(Tensor::zeros(&[1, 2]));
            // Broadcast the two parameters to every row: ones @ 0 + head.
            let base = g.matmul(ones, row)?;
            let out = g.add_bias(base, vars[0])?;
            let nll = nll_expr(g, out, samples, use_poly)?;
            Ok(g.scale(nll, scale))
        })?;
        adam.step(&mut params, &grads)?;
    }
    let head = params.get("head").expect("inserted above").data();
    Ok(transform_outputs(HeadOutputs {
        o1: head[0],
        o2: head[1],
    }))
}
