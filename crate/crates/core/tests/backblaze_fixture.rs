use std::path::Path;

use prognostics::pipeline::{
    apply_normalizer, balance_devices, fit_normalizer, load_backblaze, make_windows, positive_fraction, WindowingConfig,
    DEFAULT_SMART_FEATURES,
};

fn fixture() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/backblaze")
}

#[test]
fn fixture_loads_with_rare_failures() {
    let seqs = load_backblaze(&fixture(), "ST4000DM000", &DEFAULT_SMART_FEATURES).unwrap();
    assert_eq!(seqs.len(), 190);
    let failed = seqs.iter().filter(|s| s.failed).count();
    assert_eq!(failed, 6);
    assert!((failed as f64 / seqs.len() as f64) < 0.05);
    assert!(seqs.iter().all(|s| s.dim() == DEFAULT_SMART_FEATURES.len()));
}

#[test]
fn fixture_windows_after_balancing() {
    let seqs = load_backblaze(&fixture(), "ST4000DM000", &DEFAULT_SMART_FEATURES).unwrap();
    let balanced = balance_devices(seqs, 0).unwrap();
    assert_eq!(balanced.len(), 12);
    let stats = fit_normalizer(&balanced).unwrap();
    let cfg = WindowingConfig::backblaze();
    let mut windows = Vec::new();
    for s in &balanced {
        let n = apply_normalizer(s, &stats).unwrap();
        assert!(n.observations.iter().flatten().all(|v| v.is_finite()));
        windows.extend(make_windows(&n, &cfg));
    }
    assert!(!windows.is_empty());
    let p = positive_fraction(&windows);
    assert!(p > 0.0 && p < 1.0, "{p}");
    assert!(windows.iter().all(|w| w.d == stats.output_dim()));
}

#[test]
fn unknown_model_yields_no_devices() {
    let seqs = load_backblaze(&fixture(), "NO_SUCH_MODEL", &DEFAULT_SMART_FEATURES).unwrap();
    assert!(seqs.is_empty());
}
