//! Task losses.
//!
//! All losses are sums over windows:
//!
//! * classification `L_c = sum alpha_f f softplus(z0 - z1) + (1 - f) softplus(z1 - z0)`,
//!   the class-weighted cross entropy of the two-way softmax;
//! * regression `L_r = sum_failed (rul_hat - t_g)^2 + sum_censored max(c - rul_hat, 0)`
//!   where `c` is the window's remaining observed time;
//! * joint `J = alpha_1 L_c + alpha_2 L_r + alpha_3 |theta|^2`.

use serde::{Deserialize, Serialize};

use crate::diffcore::graph::{softplus, Graph, Var};
use crate::diffcore::{l2_expr, ModelParams, Tensor};
use crate::error::{Error, Result};
use crate::pipeline::Window;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha_1: f64,
    pub alpha_2: f64,
    pub alpha_3: f64,
    /// Weight of the failure class in `L_c`.
    pub alpha_f: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_1: 1.0,
            alpha_2: 1.0,
            alpha_3: 1e-5,
            alpha_f: 1000.0,
        }
    }
}

/// Per-window targets in window units.
#[derive(Clone, Debug, PartialEq)]
pub struct Labels<F> {
    pub fp: Vec<bool>,
    /// Remaining life, for windows whose failure time is known.
    pub t_g: Vec<Option<F>>,
    /// Remaining observed time, for censored windows.
    pub censor_remaining: Vec<Option<F>>,
}

impl<F: Scalar> Labels<F> {
    pub fn from_windows(windows: &[&Window]) -> Result<Self> {
        for w in windows {
            let ok = if w.censored {
                w.censor_remaining.is_some() && w.rul_target.is_none()
            } else {
                w.rul_target.is_some()
            };
            if !ok {
                return Err(Error::data(format!(
                    "window {}@{} lacks its RUL or censoring label",
                    w.device_id, w.end_time
                )));
            }
        }
        Ok(Self {
            fp: windows.iter().map(|w| w.fp_label).collect(),
            t_g: windows.iter().map(|w| w.rul_target.map(F::of)).collect(),
            censor_remaining: windows.iter().map(|w| w.censor_remaining.map(F::of)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.fp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fp.is_empty()
    }
}

fn column<F: Scalar>(g: &mut Graph<F>, values: impl Iterator<Item = F>, n: usize) -> Result<Var> {
    Ok(g.constant(Tensor::new(vec![n, 1], values.collect())?))
}

fn check_rows<F: Scalar>(g: &Graph<F>, v: Var, cols: usize, n: usize, what: &str) -> Result<()> {
    let t = g.value(v);
    if t.rows() != n || t.cols() != cols {
        return Err(Error::config(format!(
            "{what}: output {:?} for {n} labels, expected [{n}, {cols}]",
            t.shape()
        )));
    }
    Ok(())
}

/// `L_c` for logits `[n, 2]`.
pub fn classification_expr<F: Scalar>(g: &mut Graph<F>, logits: Var, labels: &Labels<F>, alpha_f: F) -> Result<Var> {
    let n = labels.len();
    check_rows(g, logits, 2, n, "classification loss")?;
    let z0 = g.slice_cols(logits, 0, 1)?;
    let z1 = g.slice_cols(logits, 1, 1)?;
    let d = g.sub(z1, z0)?;
    let nd = g.neg(d);
    // -ln p1 = softplus(z0 - z1), -ln p0 = softplus(z1 - z0)
    let nll1 = g.softplus(nd);
    let nll0 = g.softplus(d);
    let w1 = column(g, labels.fp.iter().map(|&f| if f { alpha_f } else { F::zero() }), n)?;
    let w0 = column(g, labels.fp.iter().map(|&f| if f { F::zero() } else { F::one() }), n)?;
    let a = g.mul(w1, nll1)?;
    let b = g.mul(w0, nll0)?;
    let s = g.add(a, b)?;
    Ok(g.sum(s))
}

/// `L_r` for predictions `[n, 1]`. Censored windows contribute the hinge
/// only when `hinge` is set.
pub fn regression_expr<F: Scalar>(g: &mut Graph<F>, rul: Var, labels: &Labels<F>, hinge: bool) -> Result<Var> {
    let n = labels.len();
    check_rows(g, rul, 1, n, "regression loss")?;
    let mask_f = column(g, labels.t_g.iter().map(|t| if t.is_some() { F::one() } else { F::zero() }), n)?;
    let target = column(g, labels.t_g.iter().map(|t| t.unwrap_or_else(F::zero)), n)?;
    let diff = g.sub(rul, target)?;
    let diff = g.mul(diff, mask_f)?;
    let sq = g.mul(diff, diff)?;
    let mut total = g.sum(sq);
    if hinge && labels.censor_remaining.iter().any(Option::is_some) {
        let mask_c = column(
            g,
            labels.censor_remaining.iter().map(|c| if c.is_some() { F::one() } else { F::zero() }),
            n,
        )?;
        let c = column(g, labels.censor_remaining.iter().map(|c| c.unwrap_or_else(F::zero)), n)?;
        let gap = g.sub(c, rul)?;
        let gap = g.relu(gap);
        let gap = g.mul(gap, mask_c)?;
        let h = g.sum(gap);
        total = g.add(total, h)?;
    }
    Ok(total)
}

/// Nodes of the joint loss and its terms.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub classification: Option<Var>,
    pub regression: Option<Var>,
    pub l2: Var,
}

/// `J = alpha_1 s L_c + alpha_2 s L_r + alpha_3 |theta|^2` where `s` is
/// `data_scale` (1 for the plain sum, `1/n` for a batch mean). Terms whose
/// head is absent or whose weight is zero are skipped.
#[allow(clippy::too_many_arguments)]
pub fn joint_loss_expr<F: Scalar>(
    g: &mut Graph<F>,
    vars: &[Var],
    params: &ModelParams<F>,
    logits: Option<Var>,
    rul: Option<Var>,
    labels: &Labels<F>,
    weights: &LossWeights,
    hinge: bool,
    data_scale: F,
) -> Result<LossTerms> {
    let mut total = g.scalar(F::zero());
    let mut classification = None;
    let mut regression = None;
    if let Some(z) = logits.filter(|_| weights.alpha_1 != 0.0) {
        let lc = classification_expr(g, z, labels, F::of(weights.alpha_f))?;
        let t = g.scale(lc, F::of(weights.alpha_1) * data_scale);
        total = g.add(total, t)?;
        classification = Some(lc);
    }
    if let Some(r) = rul.filter(|_| weights.alpha_2 != 0.0) {
        let lr = regression_expr(g, r, labels, hinge)?;
        let t = g.scale(lr, F::of(weights.alpha_2) * data_scale);
        total = g.add(total, t)?;
        regression = Some(lr);
    }
    let l2 = l2_expr(g, vars, params)?;
    if weights.alpha_3 != 0.0 {
        let t = g.scale(l2, F::of(weights.alpha_3));
        total = g.add(total, t)?;
    }
    Ok(LossTerms {
        total,
        classification,
        regression,
        l2,
    })
}

/// Censored hinge `max(c - rul_hat, 0)`.
pub fn hinge_term<F: Scalar>(rul_hat: F, censor_remaining: F) -> F {
    (censor_remaining - rul_hat).max(F::zero())
}

/// Joint loss from per-window predictions `(fp_prob, rul_hat)`; `l2` is the
/// parameters' squared norm.
pub fn mtl_loss<F: Scalar>(windows: &[&Window], predictions: &[(F, F)], weights: &LossWeights, l2: F) -> Result<F> {
    if windows.len() != predictions.len() {
        return Err(Error::data(format!(
            "{} predictions for {} windows",
            predictions.len(),
            windows.len()
        )));
    }
    let labels = Labels::<F>::from_windows(windows)?;
    let mut lc = F::zero();
    let mut lr = F::zero();
    for (i, &(p, r)) in predictions.iter().enumerate() {
        lc -= if labels.fp[i] {
            F::of(weights.alpha_f) * p.ln()
        } else {
            (-p).ln_1p()
        };
        if let Some(t) = labels.t_g[i] {
            lr += (r - t) * (r - t);
        } else if let Some(c) = labels.censor_remaining[i] {
            lr += hinge_term(r, c);
        }
    }
    Ok(F::of(weights.alpha_1) * lc + F::of(weights.alpha_2) * lr + F::of(weights.alpha_3) * l2)
}

/// `-ln p1` from logits, for reporting.
pub fn fp_nll<F: Scalar>(z: [F; 2], label: bool) -> F {
    if label {
        softplus(z[0] - z[1])
    } else {
        softplus(z[1] - z[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{eval, grad};
    use proptest::prelude::*;

    fn win(fp: bool, t_g: Option<f64>, cr: Option<f64>) -> Window {
        Window {
            device_id: "d".into(),
            end_time: 1,
            w: 1,
            d: 1,
            values: vec![0.0],
            rul_target: t_g,
            fp_label: fp,
            censored: cr.is_some(),
            censor_remaining: cr,
        }
    }

    fn eval_losses(ws: &[Window], logits: &[[f64; 2]], rul: &[f64], w: &LossWeights, params: &ModelParams<f64>) -> f64 {
        let refs: Vec<&Window> = ws.iter().collect();
        let labels = Labels::from_windows(&refs).unwrap();
        eval(params, |g, vars| {
            let z = g.constant(Tensor::new(vec![ws.len(), 2], logits.iter().flatten().copied().collect())?);
            let r = g.constant(Tensor::new(vec![ws.len(), 1], rul.to_vec())?);
            let t = joint_loss_expr(g, vars, params, Some(z), Some(r), &labels, w, true, 1.0)?;
            Ok(g.value(t.total).item())
        })
        .unwrap()
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge_term(60.0, 50.0), 0.0);
        assert_eq!(hinge_term(30.0, 50.0), 20.0);
        let ws = [win(false, None, Some(50.0))];
        let w = LossWeights { alpha_1: 0.0, alpha_3: 0.0, ..LossWeights::default() };
        let p = ModelParams::new();
        assert_eq!(eval_losses(&ws, &[[0.0, 0.0]], &[30.0], &w, &p), 20.0);
        assert_eq!(eval_losses(&ws, &[[0.0, 0.0]], &[60.0], &w, &p), 0.0);
    }

    #[test]
    fn balanced_half_probability_costs_ln2_per_window() {
        let ws = [win(true, Some(1.0), None), win(false, Some(5.0), None)];
        let w = LossWeights { alpha_f: 1.0, alpha_2: 0.0, alpha_3: 0.0, ..LossWeights::default() };
        let v = eval_losses(&ws, &[[0.3, 0.3], [-1.0, -1.0]], &[0.0, 0.0], &w, &ModelParams::new());
        assert!((v - 2.0 * 2f64.ln()).abs() < 1e-15);
        let refs: Vec<&Window> = ws.iter().collect();
        let scalar = mtl_loss(&refs, &[(0.5, 0.0), (0.5, 0.0)], &w, 0.0).unwrap();
        assert!((scalar - v).abs() < 1e-15);
    }

    #[test]
    fn graph_and_scalar_losses_agree() {
        let ws = [
            win(true, Some(1.5), None),
            win(false, Some(8.0), None),
            win(false, None, Some(3.0)),
            win(false, None, Some(0.5)),
        ];
        let logits = [[0.2, 1.0], [1.3, -0.4], [0.0, 0.7], [2.0, 1.0]];
        let rul = [1.0, 9.5, 2.0, 4.0];
        let mut params = ModelParams::new();
        params.insert("w", Tensor::vector(vec![0.5, -2.0]), false).unwrap();
        params.insert("b", Tensor::vector(vec![7.0]), true).unwrap();
        let w = LossWeights { alpha_f: 3.0, alpha_3: 0.1, ..LossWeights::default() };
        let g = eval_losses(&ws, &logits, &rul, &w, &params);
        let refs: Vec<&Window> = ws.iter().collect();
        let preds: Vec<(f64, f64)> = logits
            .iter()
            .zip(rul)
            .map(|(z, r)| (1.0 / (1.0 + (z[0] - z[1]).exp()), r))
            .collect();
        let s = mtl_loss(&refs, &preds, &w, params.l2_sum()).unwrap();
        assert!((g - s).abs() < 1e-12 * s.abs(), "{g} vs {s}");
    }

    #[test]
    fn missing_labels_are_data_errors() {
        let bad = Window { censored: false, ..win(false, None, None) };
        let refs = [&bad];
        assert!(matches!(Labels::<f64>::from_windows(&refs), Err(Error::Data(_))));
    }

    #[test]
    fn hinge_inactive_means_failed_only_squared_error() {
        let ws = [win(false, Some(2.0), None), win(false, None, Some(3.0))];
        let refs: Vec<&Window> = ws.iter().collect();
        let labels = Labels::from_windows(&refs).unwrap();
        let p = ModelParams::<f64>::new();
        let v = eval(&p, |g, _| {
            let r = g.constant(Tensor::new(vec![2, 1], vec![2.5, 3.0 + 1e-9])?);
            let l = regression_expr(g, r, &labels, true)?;
            Ok(g.value(l).item())
        })
        .unwrap();
        assert_eq!(v, 0.25);
    }

    proptest! {
        #[test]
        fn loss_decomposes_linearly(z in prop::collection::vec(-3.0f64..3.0, 8), r in prop::collection::vec(0.0f64..10.0, 4),
                                    a1 in 0.0f64..5.0, a2 in 0.0f64..5.0, a3 in 0.0f64..1.0, af in 1.0f64..100.0) {
            let ws = [win(true, Some(1.0), None), win(false, Some(6.0), None), win(false, None, Some(4.0)), win(false, None, Some(9.0))];
            let logits: Vec<[f64; 2]> = z.chunks(2).map(|c| [c[0], c[1]]).collect();
            let mut params = ModelParams::new();
            params.insert("w", Tensor::vector(vec![z[0], z[3]]), false).unwrap();
            let full = LossWeights { alpha_1: a1, alpha_2: a2, alpha_3: a3, alpha_f: af };
            let only = |a1, a2, a3| LossWeights { alpha_1: a1, alpha_2: a2, alpha_3: a3, alpha_f: af };
            let j = eval_losses(&ws, &logits, &r, &full, &params);
            let parts = eval_losses(&ws, &logits, &r, &only(a1, 0.0, 0.0), &params)
                + eval_losses(&ws, &logits, &r, &only(0.0, a2, 0.0), &params)
                + eval_losses(&ws, &logits, &r, &only(0.0, 0.0, a3), &params);
            prop_assert!((j - parts).abs() <= 1e-12 * j.abs().max(1.0));
        }
    }

    #[test]
    fn censored_hinge_changes_gradient() {
        let ws = [win(false, None, Some(4.0))];
        let refs: Vec<&Window> = ws.iter().collect();
        let labels = Labels::from_windows(&refs).unwrap();
        let mut params = ModelParams::new();
        params.insert("r", Tensor::matrix(1, 1, vec![1.0]).unwrap(), true).unwrap();
        let (v, gr) = grad(&params, |g, vars| regression_expr(g, vars[0], &labels, true)).unwrap();
        assert_eq!(v, 3.0);
        assert_eq!(gr[0].data(), &[-1.0]);
    }
}
