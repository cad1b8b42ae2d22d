//! Minibatch training with Adam, per-epoch validation and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::{ModelKind, HEAD_FP, HEAD_RUL, HEAD_WEIBULL};
use super::losses::{joint_loss_expr, regression_expr, Labels, LossWeights};
use super::network::{Batch, Network};
use super::predict::predict;
use crate::diffcore::graph::Graph;
use crate::diffcore::{bind, l2_expr, Adam, AdamConfig, Tensor, Var};
use crate::error::{Error, Result};
use crate::metrics::{pr_auc, rmse, ScoredLabel};
use crate::pipeline::Window;
use crate::scalar::Scalar;
use crate::weibull::{expected_rul_expr, nll_expr, EventSample, DEFAULT_MIN_EVENT_TIME};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStop {
    /// Validation AUC-PR of the failure score, higher is better.
    AucPr,
    /// Validation RMSE of clipped RUL on failed windows, lower is better.
    Rmse,
    /// Validation data loss per window, lower is better.
    Loss,
}

impl EarlyStop {
    fn name(self) -> &'static str {
        match self {
            Self::AucPr => "auc_pr",
            Self::Rmse => "rmse",
            Self::Loss => "loss",
        }
    }

    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Self::AucPr => a > b,
            Self::Rmse | Self::Loss => a < b,
        }
    }
}

/// Training hyperparameters. Times are in window units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Metric for early stopping; the model kind's default when unset.
    pub early_stop: Option<EarlyStop>,
    pub alpha_1: f64,
    pub alpha_2: f64,
    pub alpha_3: f64,
    pub alpha_f: f64,
    pub seed: u64,
    /// Failure horizon for DW failure probabilities.
    pub horizon: f64,
    /// Upper clip for RUL predictions.
    pub max_rul: f64,
    /// Include the censored hinge in RUL-RNN's loss.
    pub rul_hinge: bool,
    /// Use the fourth-order polynomial for the NLL power term.
    pub use_poly: bool,
    pub min_event_time: f64,
    /// Epoch budget for DW pre-training; 0 disables it, which DW refuses.
    pub pretrain_epochs: usize,
    /// Early-stopping metric for the DW NLL phase.
    pub dw_early_stop: Option<EarlyStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 100,
            patience: 10,
            early_stop: None,
            alpha_1: w.alpha_1,
            alpha_2: w.alpha_2,
            alpha_3: w.alpha_3,
            alpha_f: w.alpha_f,
            seed: 0,
            horizon: 2.5,
            max_rul: 13.0,
            rul_hinge: true,
            use_poly: true,
            min_event_time: DEFAULT_MIN_EVENT_TIME,
            pretrain_epochs: 100,
            dw_early_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha_1: self.alpha_1,
            alpha_2: self.alpha_2,
            alpha_3: self.alpha_3,
            alpha_f: self.alpha_f,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha_1, self.alpha_2, self.alpha_3, self.alpha_f];
        if w.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::config("loss weights must be nonnegative"));
        }
        if self.patience == 0 || self.batch_size == 0 {
            return Err(Error::config("patience and batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !(self.horizon > 0.0) || !(self.max_rul > 0.0) || !(self.min_event_time > 0.0) {
            return Err(Error::config("learning_rate, horizon, max_rul and min_event_time must be > 0"));
        }
        Ok(())
    }
}

/// What a training phase minimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Mtl,
    Fp,
    Rul,
    DwPretrain,
    DwNll,
}

impl Objective {
    fn name(self) -> &'static str {
        match self {
            Self::Mtl => "mtl",
            Self::Fp => "fp",
            Self::Rul => "rul",
            Self::DwPretrain => "dw_pretrain",
            Self::DwNll => "dw_nll",
        }
    }

    fn default_stop(self) -> EarlyStop {
        match self {
            Self::Mtl | Self::Fp | Self::DwNll => EarlyStop::AucPr,
            Self::Rul | Self::DwPretrain => EarlyStop::Rmse,
        }
    }
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: String,
    pub epoch: usize,
    /// Mean training objective over batches.
    pub loss: f64,
    pub loss_c: Option<f64>,
    pub loss_r: Option<f64>,
    pub loss_nll: Option<f64>,
    pub loss_l2: f64,
    pub metric: String,
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn extend(&mut self, other: History) {
        self.records.extend(other.records);
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut out = csv::Writer::from_path(path)?;
        if self.records.is_empty() {
            out.write_record(["phase", "epoch", "loss", "loss_c", "loss_r", "loss_nll", "loss_l2", "metric", "val_metric"])?;
        }
        for r in &self.records {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &std::path::Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let records = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(Self { records })
    }
}

/// A trained network with its history. When training diverged, `network`
/// holds the last parameters that passed validation and `diverged`
/// describes the failure.
#[derive(Clone, Debug)]
pub struct TrainOutcome<F: Scalar> {
    pub network: Network<F>,
    pub history: History,
    pub best_epoch: usize,
    pub best_metric: Option<f64>,
    pub diverged: Option<String>,
}

/// Mean per-window data losses of a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub classification: Option<f64>,
    pub regression: Option<f64>,
    pub nll: Option<f64>,
    pub l2: f64,
}

/// NLL samples for windows; censored windows must have been filtered to
/// positive remaining time.
fn event_samples<F: Scalar>(windows: &[&Window], min_t: f64) -> Vec<EventSample<F>> {
    windows
        .iter()
        .map(|w| match (w.rul_target, w.censor_remaining) {
            (Some(t), _) => EventSample::failed(F::of(t.max(min_t))),
            (None, Some(c)) => EventSample::censored(F::of(c.max(min_t))),
            (None, None) => unreachable!("labels checked"),
        })
        .collect()
}

pub(crate) struct BuiltLoss {
    pub(crate) total: Var,
    classification: Option<Var>,
    regression: Option<Var>,
    nll: Option<Var>,
    l2: Var,
}

/// Builds the objective for `windows` on `g`; data terms are scaled by
/// `1 / n`. The L2 term is included iff `with_l2`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn build_loss<F: Scalar>(
    net: &Network<F>,
    g: &mut Graph<F>,
    vars: &[Var],
    windows: &[&Window],
    cfg: &TrainConfig,
    objective: Objective,
    rng: Option<&mut ChaCha8Rng>,
    with_l2: bool,
) -> Result<BuiltLoss> {
    let batch = Batch::<F>::from_windows(windows, net.window, net.input_dim)?;
    let labels = Labels::<F>::from_windows(windows)?;
    let steps: Vec<Var> = batch.steps.into_iter().map(|t| g.constant(t)).collect();
    let heads = net.forward_expr(g, vars, &steps, rng)?;
    let scale = F::one() / F::of(windows.len() as f64);
    let mut weights = cfg.weights();
    if !with_l2 {
        weights.alpha_3 = 0.0;
    }
    match objective {
        Objective::Mtl | Objective::Fp | Objective::Rul => {
            let (logits, rul, hinge) = match objective {
                Objective::Mtl => (Some(heads.get(HEAD_FP)?), Some(heads.get(HEAD_RUL)?), true),
                // single-task baselines weight their only term by 1
                Objective::Fp => {
                    (weights.alpha_1, weights.alpha_2) = (1.0, 0.0);
                    (Some(heads.get(HEAD_FP)?), None, false)
                }
                _ => {
                    (weights.alpha_1, weights.alpha_2) = (0.0, 1.0);
                    (None, Some(heads.get(HEAD_RUL)?), cfg.rul_hinge)
                }
            };
            let t = joint_loss_expr(g, vars, &net.params, logits, rul, &labels, &weights, hinge, scale)?;
            Ok(BuiltLoss {
                total: t.total,
                classification: t.classification,
                regression: t.regression,
                nll: None,
                l2: t.l2,
            })
        }
        Objective::DwPretrain => {
            let out = heads.get(HEAD_WEIBULL)?;
            let rul = expected_rul_expr(g, out)?;
            let lr = regression_expr(g, rul, &labels, true)?;
            let mut total = g.scale(lr, scale);
            let l2 = l2_expr(g, vars, &net.params)?;
            if weights.alpha_3 != 0.0 {
                let t = g.scale(l2, F::of(weights.alpha_3));
                total = g.add(total, t)?;
            }
            Ok(BuiltLoss {
                total,
                classification: None,
                regression: Some(lr),
                nll: None,
                l2,
            })
        }
        Objective::DwNll => {
            let out = heads.get(HEAD_WEIBULL)?;
            let samples = event_samples::<F>(windows, cfg.min_event_time);
            let nll = nll_expr(g, out, &samples, cfg.use_poly)?;
            let mut total = g.scale(nll, scale);
            let l2 = l2_expr(g, vars, &net.params)?;
            if weights.alpha_3 != 0.0 {
                let t = g.scale(l2, F::of(weights.alpha_3));
                total = g.add(total, t)?;
            }
            Ok(BuiltLoss {
                total,
                classification: None,
                regression: None,
                nll: Some(nll),
                l2,
            })
        }
    }
}

fn breakdown<F: Scalar>(g: &Graph<F>, b: &BuiltLoss, n: usize) -> LossBreakdown {
    let per = |v: Option<Var>| v.map(|v| g.value(v).item().as_f64() / n as f64);
    LossBreakdown {
        total: g.value(b.total).item().as_f64(),
        classification: per(b.classification),
        regression: per(b.regression),
        nll: per(b.nll),
        l2: g.value(b.l2).item().as_f64(),
    }
}

/// Deterministic (dropout-free) objective on `windows`, data terms averaged
/// per window, L2 excluded.
pub fn objective_loss<F: Scalar>(
    net: &Network<F>,
    windows: &[&Window],
    cfg: &TrainConfig,
    objective: Objective,
) -> Result<LossBreakdown> {
    if windows.is_empty() {
        return Err(Error::data("objective on an empty window set"));
    }
    crate::diffcore::eval(&net.params, |g, vars| {
        let b = build_loss(net, g, vars, windows, cfg, objective, None, false)?;
        g.check_finite()?;
        Ok(breakdown(g, &b, windows.len()))
    })
}

/// Windows an objective trains on: the DW NLL drops censored windows with
/// no remaining observed time, the pre-training and RUL objectives need
/// failed windows.
fn usable(windows: &[Window], objective: Objective) -> Vec<&Window> {
    windows
        .iter()
        .filter(|w| objective != Objective::DwNll || !w.censored || w.censor_remaining.is_some_and(|c| c > 0.0))
        .collect()
}

fn validation_metric<F: Scalar>(
    net: &Network<F>,
    val: &[Window],
    cfg: &TrainConfig,
    objective: Objective,
    stop: EarlyStop,
) -> Result<f64> {
    match stop {
        EarlyStop::Loss => Ok(objective_loss(net, &usable(val, objective), cfg, objective)?.total),
        EarlyStop::AucPr => {
            let recs = predict(net, val, F::of(cfg.horizon), F::of(cfg.max_rul))?;
            let items: Vec<ScoredLabel<f64>> = recs
                .iter()
                .zip(val)
                .map(|(r, w)| ScoredLabel::new(r.fp_score.as_f64(), w.fp_label))
                .collect();
            Ok(pr_auc(&items)?.area)
        }
        EarlyStop::Rmse => {
            let recs = predict(net, val, F::of(cfg.horizon), F::of(cfg.max_rul))?;
            let (p, t): (Vec<f64>, Vec<f64>) = recs
                .iter()
                .zip(val)
                .filter_map(|(r, w)| Some((r.rul_hat?.as_f64(), w.rul_target?)))
                .unzip();
            rmse(&p, &t)
        }
    }
}

/// Picks the early-stopping metric, falling back to the validation loss
/// when the validation windows cannot support the requested one.
fn resolve_stop(requested: EarlyStop, val: &[Window], objective: Objective) -> EarlyStop {
    let ok = match requested {
        EarlyStop::AucPr => val.iter().any(|w| w.fp_label),
        EarlyStop::Rmse => val.iter().any(|w| w.rul_target.is_some()),
        EarlyStop::Loss => !usable(val, objective).is_empty(),
    };
    if ok {
        requested
    } else {
        log::warn!(
            "{}: validation windows cannot support {}, stopping on validation loss",
            objective.name(),
            requested.name()
        );
        EarlyStop::Loss
    }
}

/// Runs one training phase on `net`.
pub fn fit<F: Scalar>(
    mut net: Network<F>,
    train: &[Window],
    val: &[Window],
    cfg: &TrainConfig,
    objective: Objective,
    stop: EarlyStop,
    max_epochs: usize,
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    let train_set = usable(train, objective);
    if train_set.is_empty() {
        return Err(Error::config(format!("{}: no training windows", objective.name())));
    }
    if matches!(objective, Objective::Rul | Objective::DwPretrain) && !train_set.iter().any(|w| w.rul_target.is_some()) {
        return Err(Error::config(format!("{}: no failed windows to train on", objective.name())));
    }
    let stop = if val.is_empty() { None } else { Some(resolve_stop(stop, val, objective)) };
    let metric_name = stop.map_or("train_loss", |s| s.name()).to_string();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9E37_79B9));
    let mut adam = Adam::new(
        &net.params,
        AdamConfig {
            learning_rate: F::of(cfg.learning_rate),
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, usize, crate::diffcore::ModelParams<F>)> = None;
    let mut since_best = 0;
    let mut diverged = None;
    'epochs: for epoch in 1..=max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sums = [0.0f64; 5];
        let mut seen = [false; 3];
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let windows: Vec<&Window> = chunk.iter().map(|&i| train_set[i]).collect();
            let mut g = Graph::new();
            let vars = bind(&mut g, &net.params);
            let built = build_loss(&net, &mut g, &vars, &windows, cfg, objective, Some(&mut dropout_rng), true)?;
            let grads = match g.backward(built.total, net.params.len()) {
                Ok(gr) => gr,
                Err(e) if e.is_numeric() => {
                    diverged = Some(format!("epoch {epoch}: {e}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            let b = breakdown(&g, &built, windows.len());
            let grads: Vec<Tensor<F>> = grads
                .into_iter()
                .zip(net.params.iter())
                .map(|(gr, p)| gr.unwrap_or_else(|| Tensor::zeros(p.tensor.shape())))
                .collect();
            if let Err(e) = adam.step(&mut net.params, &grads) {
                if e.is_numeric() {
                    diverged = Some(format!("epoch {epoch}: {e}"));
                    break 'epochs;
                }
                return Err(e);
            }
            sums[0] += b.total;
            for (k, v) in [b.classification, b.regression, b.nll].into_iter().enumerate() {
                if let Some(v) = v {
                    sums[k + 1] += v;
                    seen[k] = true;
                }
            }
            sums[4] += b.l2;
            batches += 1;
        }
        let nb = batches as f64;
        let val_metric = match stop {
            Some(s) => match validation_metric(&net, val, cfg, objective, s) {
                Ok(m) if m.is_finite() => Some(m),
                Ok(m) => {
                    diverged = Some(format!("epoch {epoch}: validation {} is {m}", s.name()));
                    break 'epochs;
                }
                Err(e) if e.is_numeric() => {
                    diverged = Some(format!("epoch {epoch}: {e}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            },
            None => None,
        };
        let record = EpochRecord {
            phase: objective.name().to_string(),
            epoch,
            loss: sums[0] / nb,
            loss_c: seen[0].then(|| sums[1] / nb),
            loss_r: seen[1].then(|| sums[2] / nb),
            loss_nll: seen[2].then(|| sums[3] / nb),
            loss_l2: sums[4] / nb,
            metric: metric_name.clone(),
            val_metric,
        };
        log::info!(
            "{} epoch {epoch}: loss {:.6} {} {:?}",
            objective.name(),
            record.loss,
            metric_name,
            val_metric
        );
        history.records.push(record);
        let score = val_metric.unwrap_or(sums[0] / nb);
        let improved = match &best {
            None => true,
            Some((b, _, _)) => stop.unwrap_or(EarlyStop::Loss).better(score, *b),
        };
        if improved {
            best = Some((score, epoch, net.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log::info!("{}: early stop at epoch {epoch}", objective.name());
                break;
            }
        }
    }
    if let Some(d) = &diverged {
        log::error!("{}: training diverged, {d}", objective.name());
    }
    let (best_metric, best_epoch) = match best {
        Some((m, e, params)) => {
            net.params = params;
            (Some(m), e)
        }
        None => {
            // diverged before any epoch finished: restore the initial state
            (None, 0)
        }
    };
    Ok(TrainOutcome {
        network: net,
        history,
        best_epoch,
        best_metric,
        diverged,
    })
}

/// Trains MTL, FP-RNN or RUL-RNN networks.
pub fn train<F: Scalar>(net: Network<F>, train_windows: &[Window], val: &[Window], cfg: &TrainConfig) -> Result<TrainOutcome<F>> {
    let objective = match net.kind {
        ModelKind::Mtl => Objective::Mtl,
        ModelKind::FpRnn => Objective::Fp,
        ModelKind::RulRnn => {
            log::info!("rul_rnn: censored hinge {}", if cfg.rul_hinge { "on" } else { "off" });
            Objective::Rul
        }
        ModelKind::Dw => {
            return Err(Error::config("DW networks train through dw_pretrain then dw_train"));
        }
    };
    let mut net = net;
    if objective != Objective::Fp {
        let mean = mean_target(train_windows)?;
        net.set_head_bias(HEAD_RUL, &[F::of(mean)])?;
    }
    let stop = cfg.early_stop.unwrap_or(objective.default_stop());
    fit(net, train_windows, val, cfg, objective, stop, cfg.max_epochs)
}

fn mean_target(windows: &[Window]) -> Result<f64> {
    let t: Vec<f64> = windows.iter().filter_map(|w| w.rul_target).collect();
    if t.is_empty() {
        return Err(Error::config("no failed windows with RUL targets"));
    }
    Ok(t.iter().sum::<f64>() / t.len() as f64)
}

/// A DW network that has completed RUL pre-training. Only
/// [`dw_pretrain`] creates one, so the NLL phase cannot run first.
#[derive(Clone, Debug)]
pub struct PretrainedDw<F: Scalar> {
    network: Network<F>,
}

impl<F: Scalar> PretrainedDw<F> {
    pub fn network(&self) -> &Network<F> {
        &self.network
    }

    pub fn into_network(self) -> Network<F> {
        self.network
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome<F: Scalar> {
    pub model: PretrainedDw<F>,
    pub history: History,
    pub diverged: Option<String>,
}

/// Pre-trains a DW network on squared error of its expected RUL (failed
/// windows) plus the censored hinge, early-stopped on validation RMSE.
pub fn dw_pretrain<F: Scalar>(net: Network<F>, train_windows: &[Window], val: &[Window], cfg: &TrainConfig) -> Result<PretrainOutcome<F>> {
    if net.kind != ModelKind::Dw {
        return Err(Error::config(format!("dw_pretrain on a {} network", net.kind.name())));
    }
    if cfg.pretrain_epochs == 0 {
        return Err(Error::config(
            "DW training requires the RUL pre-training phase; set pretrain_epochs >= 1",
        ));
    }
    let mean = mean_target(train_windows)?;
    let mut net = net;
    // start at E[T] = mean target with the default shape softplus(0) = ln 2
    let k0 = 2f64.ln();
    let o1 = mean.ln() - crate::weibull::special::ln_gamma_f64(1.0 + 1.0 / k0);
    net.set_head_bias(HEAD_WEIBULL, &[F::of(o1), F::zero()])?;
    let out = fit(net, train_windows, val, cfg, Objective::DwPretrain, EarlyStop::Rmse, cfg.pretrain_epochs)?;
    Ok(PretrainOutcome {
        model: PretrainedDw { network: out.network },
        history: out.history,
        diverged: out.diverged,
    })
}

/// Trains a pre-trained DW network on the censored Weibull NLL.
pub fn dw_train<F: Scalar>(pre: PretrainedDw<F>, train_windows: &[Window], val: &[Window], cfg: &TrainConfig) -> Result<TrainOutcome<F>> {
    let stop = cfg.dw_early_stop.unwrap_or(EarlyStop::AucPr);
    fit(pre.network, train_windows, val, cfg, Objective::DwNll, stop, cfg.max_epochs)
}
