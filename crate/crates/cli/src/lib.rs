//! Experiment runner for the prognostics engine.
//!
//! Commands, in the order a study uses them:
//!
//! | command     | reads                          | writes                                                   |
//! |-------------|--------------------------------|----------------------------------------------------------|
//! | `synth`     | config `[synth]`               | `synth/sequences.csv`, `synth/truth.csv`                 |
//! | `prepare`   | raw dataset                    | `prepared/{train,validation,test}.csv`, `normalization.json`, `summary.json` |
//! | `train`     | `prepared/`                    | `train/checkpoint.json`, `manifest.json`, `history.csv`  |
//! | `evaluate`  | model dir, test windows        | `evaluation/report.json`, `roc.csv`, `pr.csv`, `confusion.csv` |
//! | `predict`   | model dir, any window file     | `predictions.csv`                                        |
//! | `gradcheck` | nothing                        | stdout                                                   |
//!
//! All paths are relative to the configured `output_dir`. Every command
//! also writes `resolved_config.toml` next to its outputs.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::Failure;
pub use config::RunConfig;
