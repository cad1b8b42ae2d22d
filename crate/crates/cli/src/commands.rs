use std::fs;
use std::path::{Path, PathBuf};

use prognostics::metrics::{Curve, EvalReport};
use prognostics::models::{
    self, checks, dw_pretrain, dw_train, evaluate, predict, write_predictions_csv, ModelKind, TrainOutcome,
};
use prognostics::pipeline::{
    apply_normalizer, balance_devices, fit_normalizer, load_backblaze, load_cmapss, make_labeled_windows,
    make_windows, positive_fraction, read_sequences_csv, read_windows_csv, split_devices, synth_weibull,
    write_sequences_csv, write_truth_csv, write_windows_csv, NormalizationStats, SensorSequence, Window,
    DEFAULT_SMART_FEATURES,
};
use prognostics::{Error, Network};
use serde::{Deserialize, Serialize};

use crate::config::{DatasetKind, RunConfig};
use crate::manifest::{load_model, save_model, Manifest, MANIFEST_FORMAT, MANIFEST_VERSION};

pub const TRAIN_FILE: &str = "train.csv";
pub const VALIDATION_FILE: &str = "validation.csv";
pub const TEST_FILE: &str = "test.csv";
pub const NORMALIZATION_FILE: &str = "normalization.json";
pub const SUMMARY_FILE: &str = "summary.json";

/// Failure modes a command reports through its exit status.
#[derive(Debug)]
pub enum Failure {
    Core(Error),
    /// Gradient check ran but at least one expression exceeded tolerance.
    GradCheck(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::GradCheck(names) => write!(f, "gradient check failed for {}", names.join(", ")),
        }
    }
}

impl Failure {
    /// 1 for numeric and training failures, 2 for configuration and input
    /// problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::GradCheck(_) => 1,
            Failure::Core(e) if e.is_numeric() => 1,
            Failure::Core(_) => 2,
        }
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

/// Counts written to `summary.json` by `prepare`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub devices: usize,
    pub failed_devices: usize,
    pub windows: usize,
    pub positive_windows: usize,
    pub positive_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub window: usize,
    pub input_dim: usize,
    pub train: SplitSummary,
    pub validation: SplitSummary,
    pub test: SplitSummary,
}

fn split_summary(seqs: usize, failed: usize, windows: &[Window]) -> SplitSummary {
    SplitSummary {
        devices: seqs,
        failed_devices: failed,
        windows: windows.len(),
        positive_windows: windows.iter().filter(|w| w.fp_label).count(),
        positive_fraction: positive_fraction(windows),
    }
}

/// Test devices with their residual life when it is known.
type TestSet = Vec<(SensorSequence, Option<usize>)>;

fn load_devices(cfg: &RunConfig) -> Result<(Vec<SensorSequence>, TestSet), Error> {
    let ds = &cfg.dataset;
    if !ds.path.exists() {
        return Err(Error::config(format!("dataset path {} does not exist", ds.path.display())));
    }
    match ds.kind {
        DatasetKind::Cmapss => {
            let data = load_cmapss(&ds.path, &ds.subset)?;
            let test = data.test.into_iter().zip(data.test_rul.into_iter().map(Some)).collect();
            Ok((data.train, test))
        }
        DatasetKind::Backblaze | DatasetKind::Sequences => {
            let all = if ds.kind == DatasetKind::Backblaze {
                let features: Vec<&str> = if ds.features.is_empty() {
                    DEFAULT_SMART_FEATURES.to_vec()
                } else {
                    ds.features.iter().map(String::as_str).collect()
                };
                load_backblaze(&ds.path, &ds.model, &features)?
            } else {
                read_sequences_csv(&ds.path)?
            };
            if all.is_empty() {
                return Err(Error::data(format!("no devices read from {}", ds.path.display())));
            }
            let (pool, test) = split_devices(all, ds.test_fraction, ds.seed)?;
            Ok((pool, test.into_iter().map(|s| (s, None)).collect()))
        }
    }
}

/// Windows for every split plus the fitted normalization, without touching
/// the file system.
pub struct Prepared {
    pub train: Vec<Window>,
    pub validation: Vec<Window>,
    pub test: Vec<Window>,
    pub normalization: Option<NormalizationStats>,
    pub summary: PrepareSummary,
}

pub fn prepare_windows(cfg: &RunConfig) -> Result<Prepared, Error> {
    let ds = &cfg.dataset;
    let (pool, test) = load_devices(cfg)?;
    let (mut train, val) = split_devices(pool, ds.validation_fraction, ds.seed.wrapping_add(1))?;
    if ds.balance {
        train = balance_devices(train, ds.seed.wrapping_add(2))?;
    }
    if train.is_empty() {
        return Err(Error::data("no training devices after splitting"));
    }
    let normalization = if ds.normalize { Some(fit_normalizer(&train)?) } else { None };
    let norm = |s: &SensorSequence| -> Result<SensorSequence, Error> {
        match &normalization {
            Some(n) => apply_normalizer(s, n),
            None => Ok(s.clone()),
        }
    };
    let win = &ds.windowing;
    let mut train_w = Vec::new();
    for s in &train {
        train_w.extend(make_windows(&norm(s)?, win));
    }
    let mut val_w = Vec::new();
    for s in &val {
        val_w.extend(make_windows(&norm(s)?, win));
    }
    let mut test_w = Vec::new();
    for (s, residual) in &test {
        let s = norm(s)?;
        test_w.extend(match residual {
            Some(r) => make_labeled_windows(&s, win, *r),
            None => make_windows(&s, win),
        });
    }
    if train_w.is_empty() {
        return Err(Error::data("no training windows; sequences are shorter than the window"));
    }
    let failed = |v: &[SensorSequence]| v.iter().filter(|s| s.failed).count();
    let test_failed = test.iter().filter(|(s, r)| s.failed || r.is_some()).count();
    let summary = PrepareSummary {
        window: win.w,
        input_dim: train_w[0].d,
        train: split_summary(train.len(), failed(&train), &train_w),
        validation: split_summary(val.len(), failed(&val), &val_w),
        test: split_summary(test.len(), test_failed, &test_w),
    };
    Ok(Prepared {
        train: train_w,
        validation: val_w,
        test: test_w,
        normalization,
        summary,
    })
}

/// Writes into a sibling temporary directory and renames it over `dir`,
/// so a failed write leaves no partial output.
fn write_atomically(dir: &Path, fill: impl FnOnce(&Path) -> Result<(), Error>) -> Result<(), Error> {
    let parent = dir.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    if let Err(e) = fill(&tmp) {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&tmp, dir)?;
    Ok(())
}

pub fn cmd_prepare(cfg: &RunConfig) -> CmdResult<PrepareSummary> {
    let p = prepare_windows(cfg)?;
    let (w, d) = (p.summary.window, p.summary.input_dim);
    write_atomically(&cfg.prepared_dir(), |dir| {
        write_windows_csv(&dir.join(TRAIN_FILE), &p.train, w, d)?;
        write_windows_csv(&dir.join(VALIDATION_FILE), &p.validation, w, d)?;
        write_windows_csv(&dir.join(TEST_FILE), &p.test, w, d)?;
        fs::write(dir.join(NORMALIZATION_FILE), serde_json::to_string_pretty(&p.normalization)?)?;
        fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&p.summary)?)?;
        cfg.write_resolved(dir)
    })?;
    let s = &p.summary;
    log::info!("prepared windows in {}", cfg.prepared_dir().display());
    println!(
        "train: {} devices ({} failed), {} windows, positive fraction {:.4}%",
        s.train.devices,
        s.train.failed_devices,
        s.train.windows,
        100.0 * s.train.positive_fraction
    );
    println!(
        "validation: {} devices, {} windows; test: {} devices, {} windows",
        s.validation.devices, s.validation.windows, s.test.devices, s.test.windows
    );
    Ok(p.summary)
}

fn read_split(dir: &Path, file: &str) -> Result<(Vec<Window>, usize, usize), Error> {
    let path = dir.join(file);
    if !path.exists() {
        return Err(Error::config(format!(
            "missing {}; run `prepare` first",
            path.display()
        )));
    }
    read_windows_csv(&path)
}

fn read_normalization(dir: &Path) -> Result<Option<NormalizationStats>, Error> {
    let path = dir.join(NORMALIZATION_FILE);
    if !path.exists() {
        return Ok(None);
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Trains one network on prepared windows. A diverged run still returns
/// its best parameters; the caller decides how to report it.
pub fn fit_model(cfg: &RunConfig, train: &[Window], val: &[Window], d: usize, w: usize) -> Result<TrainOutcome<f64>, Error> {
    let m = &cfg.model;
    let net = Network::new(m.kind, m.resolved_architecture(), d, w, m.init_seed)?;
    if m.kind == ModelKind::Dw {
        let pre = dw_pretrain(net, train, val, &m.train)?;
        if let Some(msg) = pre.diverged {
            return Ok(TrainOutcome {
                network: pre.model.into_network(),
                best_epoch: 0,
                best_metric: None,
                history: pre.history,
                diverged: Some(format!("pre-training: {msg}")),
            });
        }
        let mut out = dw_train(pre.model, train, val, &m.train)?;
        let mut history = pre.history;
        history.extend(out.history);
        out.history = history;
        Ok(out)
    } else {
        models::train(net, train, val, &m.train)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_metric: Option<f64>,
    pub test: Option<EvalReport>,
}

fn train_once(cfg: &RunConfig, dir: &Path, run: usize) -> CmdResult<RunMetrics> {
    let prepared = cfg.prepared_dir();
    let (train, w, d) = read_split(&prepared, TRAIN_FILE)?;
    let (val, vw, vd) = read_split(&prepared, VALIDATION_FILE)?;
    if (vw, vd) != (w, d) {
        return Err(Error::config("train and validation windows differ in shape").into());
    }
    let out = fit_model(cfg, &train, &val, d, w)?;
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        kind: cfg.model.kind,
        architecture: out.network.arch.clone(),
        input_dim: d,
        window: w,
        init_seed: cfg.model.init_seed,
        train: cfg.model.train.clone(),
        windowing: cfg.dataset.windowing,
        normalization: read_normalization(&prepared)?,
        best_epoch: out.best_epoch,
        best_metric: out.best_metric,
        diverged: out.diverged.clone(),
    };
    save_model(dir, &out.network, &manifest)?;
    out.history.write_csv(&dir.join("history.csv"))?;
    cfg.write_resolved(dir)?;
    if let Some(detail) = out.diverged {
        return Err(Error::Diverged {
            epoch: out.history.records.len(),
            detail: format!("{detail}; best checkpoint kept in {}", dir.display()),
        }
        .into());
    }
    let test = match read_split(&prepared, TEST_FILE) {
        Ok((ws, ..)) if !ws.is_empty() => Some(evaluate_network(&out.network, &manifest, &ws, cfg.evaluation.confusion_bins)?.report),
        _ => None,
    };
    println!(
        "run {run}: best epoch {}, validation metric {}",
        out.best_epoch,
        out.best_metric.map_or("n/a".into(), |m| format!("{m:.6}"))
    );
    Ok(RunMetrics {
        run,
        seed: cfg.model.train.seed,
        best_epoch: out.best_epoch,
        best_val_metric: out.best_metric,
        test,
    })
}

pub fn train_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("train")
}

/// Trains `repeat` runs. A single run writes into `train/`; repeated runs
/// write `train/run_<i>/` with seeds offset by `i` and a `summary.csv`.
pub fn cmd_train(cfg: &RunConfig, repeat: usize) -> CmdResult<Vec<RunMetrics>> {
    if cfg.model.kind == ModelKind::Dw && cfg.model.train.pretrain_epochs == 0 {
        return Err(Error::config(
            "DW training needs the RUL pre-training phase before the likelihood phase; set model.train.pretrain_epochs >= 1",
        )
        .into());
    }
    let base = train_dir(cfg);
    if repeat <= 1 {
        return Ok(vec![train_once(cfg, &base, 0)?]);
    }
    let mut runs = Vec::with_capacity(repeat);
    for i in 0..repeat {
        let mut c = cfg.clone();
        c.model.train.seed = cfg.model.train.seed.wrapping_add(i as u64);
        c.model.init_seed = cfg.model.init_seed.wrapping_add(i as u64);
        runs.push(train_once(&c, &base.join(format!("run_{i}")), i)?);
    }
    write_run_summary(&base.join("summary.csv"), &runs)?;
    Ok(runs)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// One row per metric: `metric,mean,std,n`, sample standard deviation.
fn write_run_summary(path: &Path, runs: &[RunMetrics]) -> Result<(), Error> {
    type Getter = fn(&RunMetrics) -> Option<f64>;
    let metrics: [(&str, Getter); 5] = [
        ("best_val_metric", |r| r.best_val_metric),
        ("rmse", |r| r.test.as_ref()?.rmse),
        ("auc_roc", |r| r.test.as_ref()?.auc_roc),
        ("auc_pr", |r| r.test.as_ref()?.auc_pr),
        ("spearman_consistency", |r| r.test.as_ref()?.spearman_consistency),
    ];
    let mut out = csv::Writer::from_path(path).map_err(Error::from)?;
    out.write_record(["metric", "mean", "std", "n"]).map_err(Error::from)?;
    for (name, get) in metrics {
        let v: Vec<f64> = runs.iter().filter_map(get).collect();
        if v.is_empty() {
            continue;
        }
        let (m, s) = mean_std(&v);
        out.write_record([name.to_string(), m.to_string(), s.to_string(), v.len().to_string()])
            .map_err(Error::from)?;
    }
    out.flush()?;
    Ok(())
}

fn check_shape(manifest: &Manifest, w: usize, d: usize, what: &Path) -> Result<(), Error> {
    if (w, d) != (manifest.window, manifest.input_dim) {
        return Err(Error::config(format!(
            "{} holds {w}x{d} windows but the model expects {}x{}",
            what.display(),
            manifest.window,
            manifest.input_dim
        )));
    }
    Ok(())
}

pub fn evaluate_network(
    net: &Network,
    manifest: &Manifest,
    windows: &[Window],
    bins: usize,
) -> Result<models::Evaluation, Error> {
    let records = predict(net, windows, manifest.train.horizon, manifest.train.max_rul)?;
    evaluate(
        manifest.kind,
        &records,
        windows,
        manifest.window as f64,
        manifest.windowing.max_rul as f64,
        bins,
    )
}

fn write_curve(path: &Path, curve: &Curve<f64>, cols: [&str; 2]) -> Result<(), Error> {
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(cols)?;
    for (a, b) in &curve.points {
        out.write_record([a.to_string(), b.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Rows are true bins, columns predicted bins, preceded by the bin edges.
fn write_confusion(path: &Path, report: &EvalReport) -> Result<(), Error> {
    let mut out = csv::Writer::from_path(path)?;
    let Some(c) = &report.confusion else {
        out.write_record(["true_lo", "true_hi"])?;
        out.flush()?;
        return Ok(());
    };
    let mut header = vec!["true_lo".to_string(), "true_hi".to_string()];
    header.extend((0..c.bins()).map(|j| format!("pred_{}_{}", c.edges[j], c.edges[j + 1])));
    out.write_record(&header)?;
    for (i, row) in c.counts.iter().enumerate() {
        let mut rec = vec![c.edges[i].to_string(), c.edges[i + 1].to_string()];
        rec.extend(row.iter().map(|n| n.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig, model_dir: Option<&Path>, windows: Option<&Path>, out: Option<&Path>) -> CmdResult<EvalReport> {
    let model_dir = model_dir.map(Path::to_path_buf).unwrap_or_else(|| train_dir(cfg));
    let (net, manifest) = load_model(&model_dir)?;
    let input = windows
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.prepared_dir().join(TEST_FILE));
    if !input.exists() {
        return Err(Error::config(format!("missing windows file {}", input.display())).into());
    }
    let (ws, w, d) = read_windows_csv(&input)?;
    check_shape(&manifest, w, d, &input)?;
    let eval = evaluate_network(&net, &manifest, &ws, cfg.evaluation.confusion_bins)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.join("evaluation"));
    fs::create_dir_all(&out)?;
    let json = serde_json::to_string_pretty(&eval.report).map_err(Error::from)?;
    fs::write(out.join("report.json"), &json)?;
    if let Some(c) = &eval.roc {
        write_curve(&out.join("roc.csv"), c, ["fpr", "tpr"])?;
    }
    if let Some(c) = &eval.pr {
        write_curve(&out.join("pr.csv"), c, ["recall", "precision"])?;
    }
    write_confusion(&out.join("confusion.csv"), &eval.report)?;
    cfg.write_resolved(&out)?;
    let r = &eval.report;
    for (name, v) in [
        ("rmse", r.rmse),
        ("auc_roc", r.auc_roc),
        ("auc_pr", r.auc_pr),
        ("spearman_consistency", r.spearman_consistency),
    ] {
        if let Some(v) = v {
            println!("{name}: {v:.6}");
        }
    }
    Ok(eval.report)
}

pub fn cmd_predict(cfg: &RunConfig, model_dir: Option<&Path>, input: &Path, output: Option<&Path>) -> CmdResult<usize> {
    let model_dir = model_dir.map(Path::to_path_buf).unwrap_or_else(|| train_dir(cfg));
    let (net, manifest) = load_model(&model_dir)?;
    if !input.exists() {
        return Err(Error::config(format!("missing windows file {}", input.display())).into());
    }
    let (ws, w, d) = read_windows_csv(input)?;
    if !ws.is_empty() {
        check_shape(&manifest, w, d, input)?;
    }
    let records = predict(&net, &ws, manifest.train.horizon, manifest.train.max_rul)?;
    let output = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join("predictions.csv"));
    if let Some(parent) = output.parent() {
        fs::create_dir_all(parent)?;
    }
    write_predictions_csv(&output, &records)?;
    println!("{} predictions written to {}", records.len(), output.display());
    Ok(records.len())
}

pub fn synth_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("synth")
}

/// Writes `synth/sequences.csv` and `synth/truth.csv`; returns the
/// censored share.
pub fn cmd_synth(cfg: &RunConfig) -> CmdResult<f64> {
    let (seqs, truth) = synth_weibull(&cfg.synth)?;
    let share = truth.iter().filter(|t| !t.failed).count() as f64 / truth.len() as f64;
    write_atomically(&synth_dir(cfg), |dir| {
        write_sequences_csv(&dir.join("sequences.csv"), &seqs)?;
        write_truth_csv(&dir.join("truth.csv"), &truth)?;
        cfg.write_resolved(dir)
    })?;
    println!(
        "{} devices written to {}; censored share {:.4}",
        seqs.len(),
        synth_dir(cfg).display(),
        share
    );
    Ok(share)
}

/// Runs the gradient suite at `points` seeds starting from `seed` and
/// prints the worst relative error per expression.
pub fn cmd_gradcheck(seed: u64, points: usize, corrupt: bool) -> CmdResult<Vec<(String, f64)>> {
    let mut worst: Vec<(String, f64, usize)> = Vec::new();
    for p in 0..points.max(1) as u64 {
        let reports = checks::gradient_suite(&checks::suite_options(seed.wrapping_add(p), corrupt))?;
        for (name, r) in reports {
            let err = if r.max_rel_error.is_nan() { f64::INFINITY } else { r.max_rel_error };
            match worst.iter_mut().find(|(n, ..)| *n == name) {
                Some(entry) => {
                    entry.1 = entry.1.max(err);
                    entry.2 += r.coords_checked;
                }
                None => worst.push((name, err, r.coords_checked)),
            }
        }
    }
    let mut failed = Vec::new();
    for (name, err, coords) in &worst {
        let ok = *err < checks::GRADCHECK_TOLERANCE;
        println!(
            "{name:<18} max_rel_error {err:.3e} over {coords} coords  {}",
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push(name.clone());
        }
    }
    if !failed.is_empty() {
        return Err(Failure::GradCheck(failed));
    }
    Ok(worst.into_iter().map(|(n, e, _)| (n, e)).collect())
}
