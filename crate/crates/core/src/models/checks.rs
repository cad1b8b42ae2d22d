//! Named gradient checks over every layer and every training objective,
//! on small networks with random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::{ArchitectureSpec, ModelKind};
use super::losses::Labels;
use super::network::{Batch, Network};
use super::train::{build_loss, Objective, TrainConfig};
use crate::diffcore::layers::{fc_expr, init_layer, lstm_sequence_expr, FcVars, LstmVars};
use crate::diffcore::{grad_check, GradCheckOptions, GradCheckReport, Graph, LayerSpec, ModelParams, Tensor, Var};
use crate::error::Result;
use crate::pipeline::Window;

pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

/// Central-difference step for the suite. Truncation error grows with the
/// step and roundoff in the loss value with its inverse; 3e-5 keeps both
/// well under the tolerance on the check networks.
pub const SUITE_EPSILON: f64 = 3e-5;

pub fn suite_options(seed: u64, corrupt_analytic: bool) -> GradCheckOptions {
    GradCheckOptions {
        epsilon: SUITE_EPSILON,
        max_coords_per_param: None,
        seed,
        corrupt_analytic,
    }
}

/// Window geometry of the check networks.
const W: usize = 3;
const D: usize = 3;

fn random_windows(n: usize, rng: &mut ChaCha8Rng) -> Vec<Window> {
    (0..n)
        .map(|i| {
            let censored = i % 3 == 2;
            let t: f64 = rng.random_range(0.6..4.0);
            Window {
                device_id: format!("g{i}"),
                end_time: W,
                w: W,
                d: D,
                values: (0..W * D).map(|_| rng.random_range(-1.5..1.5)).collect(),
                rul_target: (!censored).then_some(t),
                fp_label: !censored && t < 2.0,
                censored,
                censor_remaining: censored.then_some(t),
            }
        })
        .collect()
}

fn inputs(g: &mut Graph<f64>, windows: &[Window]) -> Result<Vec<Var>> {
    let refs: Vec<&Window> = windows.iter().collect();
    let batch = Batch::<f64>::from_windows(&refs, W, D)?;
    Ok(batch.steps.into_iter().map(|t| g.constant(t)).collect())
}

/// A fixed random linear functional of `y`, so every output coordinate
/// carries gradient.
fn project(g: &mut Graph<f64>, y: Var, rng_seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let shape = g.value(y).shape().to_vec();
    let n = shape.iter().product();
    let c = g.constant(Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?);
    let p = g.mul(y, c)?;
    Ok(g.sum(p))
}

fn layer_params(specs: &[LayerSpec], input: usize, seed: u64) -> Result<ModelParams<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::new();
    let mut width = input;
    for (i, s) in specs.iter().enumerate() {
        width = init_layer(&mut params, &format!("l{i}"), s, width, &mut rng)?;
    }
    // move biases off zero so every term is exercised
    let names: Vec<String> = params.iter().map(|e| e.name.clone()).collect();
    for n in names {
        for v in params.get_mut(&n).expect("listed").data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    Ok(params)
}

fn check_network(
    kind: ModelKind,
    objective: Objective,
    cfg: &TrainConfig,
    windows: &[Window],
    opts: &GradCheckOptions,
    seed: u64,
) -> Result<GradCheckReport> {
    let net = Network::<f64>::new(kind, ArchitectureSpec::tiny(kind, 4, 3), D, W, seed)?;
    let refs: Vec<&Window> = windows.iter().collect();
    Labels::<f64>::from_windows(&refs)?;
    // parameter values come from the leaves; `net` only supplies names
    grad_check(
        &net.params,
        |g, vars| Ok(build_loss(&net, g, vars, &refs, cfg, objective, None, true)?.total),
        opts,
    )
}

/// Moves censored windows' remaining time at least `gap` away from the
/// network's RUL prediction so the hinge is differentiable at the probe.
fn keep_off_kink(net_rul: &[f64], windows: &mut [Window], gap: f64) {
    for (w, &r) in windows.iter_mut().zip(net_rul) {
        if let Some(c) = w.censor_remaining.as_mut() {
            if (*c - r).abs() < gap {
                *c = r + if *c >= r { gap } else { -gap };
                if *c <= 0.0 {
                    *c = r + gap;
                }
            }
        }
    }
}

/// Runs every check and returns `(name, report)` pairs.
pub fn gradient_suite(opts: &GradCheckOptions) -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::new();
    let windows = random_windows(6, &mut rng);
    // parameter seeds follow the suite seed so each seed is a fresh point
    let ps = |k: u64| opts.seed.wrapping_mul(16).wrapping_add(k);

    // single layers
    let lstm = layer_params(&[LayerSpec::lstm(4)], D, ps(1))?;
    let ws = windows.clone();
    out.push((
        "layer.lstm".to_string(),
        grad_check(
            &lstm,
            |g, vars| {
                let steps = inputs(g, &ws)?;
                let p = LstmVars::lookup(&lstm, vars, "l0")?;
                let hs = lstm_sequence_expr(g, &steps, &p)?;
                project(g, *hs.last().expect("steps"), 11)
            },
            opts,
        )?,
    ));
    for (name, elu) in [("layer.fc_elu", true), ("layer.fc_linear", false)] {
        let spec = if elu { LayerSpec::elu(4, 0.0) } else { LayerSpec::linear(4) };
        let fc = layer_params(&[spec], D, ps(2))?;
        let ws = windows.clone();
        out.push((
            name.to_string(),
            grad_check(
                &fc,
                |g, vars| {
                    let steps = inputs(g, &ws)?;
                    let p = FcVars::lookup(&fc, vars, "l0")?;
                    let y = fc_expr(g, steps[0], &p, elu)?;
                    project(g, y, 12)
                },
                opts,
            )?,
        ));
    }

    let cfg = TrainConfig {
        alpha_f: 5.0,
        alpha_3: 1e-2,
        ..TrainConfig::default()
    };
    for (name, poly) in [("dw.nll_poly", true), ("dw.nll_exact", false)] {
        let c = TrainConfig { use_poly: poly, ..cfg.clone() };
        out.push((name.to_string(), check_network(ModelKind::Dw, Objective::DwNll, &c, &windows, opts, ps(3))?));
    }

    // hinge objectives: keep censored targets off the kink
    let hinge_windows = |kind: ModelKind, seed: u64| -> Result<Vec<Window>> {
        let net = Network::<f64>::new(kind, ArchitectureSpec::tiny(kind, 4, 3), D, W, seed)?;
        let recs = super::predict::predict(&net, &windows, 2.0, 1e9)?;
        let rul: Vec<f64> = recs.iter().map(|r| r.rul_hat.unwrap_or(0.0)).collect();
        let mut ws = windows.clone();
        keep_off_kink(&rul, &mut ws, 1e-3);
        Ok(ws)
    };
    let ws = hinge_windows(ModelKind::Dw, ps(4))?;
    out.push(("dw.pretrain_rul".to_string(), check_network(ModelKind::Dw, Objective::DwPretrain, &cfg, &ws, opts, ps(4))?));
    let ws = hinge_windows(ModelKind::Mtl, ps(5))?;
    out.push(("mtl.loss".to_string(), check_network(ModelKind::Mtl, Objective::Mtl, &cfg, &ws, opts, ps(5))?));
    out.push(("fp_rnn.loss".to_string(), check_network(ModelKind::FpRnn, Objective::Fp, &cfg, &windows, opts, ps(6))?));
    let ws = hinge_windows(ModelKind::RulRnn, ps(7))?;
    out.push(("rul_rnn.loss".to_string(), check_network(ModelKind::RulRnn, Objective::Rul, &cfg, &ws, opts, ps(7))?));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_at_ten_random_points() {
        for seed in 0..10 {
            for (name, r) in gradient_suite(&suite_options(seed, false)).unwrap() {
                assert!(r.passes(GRADCHECK_TOLERANCE), "seed {seed} {name}: {r:?}");
            }
        }
    }

    #[test]
    fn suite_passes_and_detects_corruption() {
        let reports = gradient_suite(&suite_options(0, false)).unwrap();
        assert_eq!(reports.len(), 9);
        for (name, r) in &reports {
            assert!(r.passes(GRADCHECK_TOLERANCE), "{name}: {r:?}");
        }
        let bad = gradient_suite(&suite_options(0, true)).unwrap();
        assert!(bad.iter().all(|(_, r)| !r.passes(GRADCHECK_TOLERANCE)));
    }
}
