//! Checkpoints, configuration, metrics, reports and the experiments built on
//! `flashdiff-core`.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod report;

use std::time::Instant;

pub use config::{ExperimentConfig, FamilyKind};
pub use error::{HarnessError, Result};
pub use pipeline::OutDir;

/// Every stage followed by every experiment. Returns total seconds.
pub fn run_all(cfg: &ExperimentConfig, out: &OutDir) -> Result<f64> {
    let started = Instant::now();
    pipeline::gen_data(cfg, out)?;
    pipeline::train_ae(cfg, out)?;
    pipeline::train_score_stage(cfg, out)?;
    pipeline::train_sev_stage(cfg, out)?;
    for name in experiments::EXPERIMENTS {
        experiments::run_experiment(name, cfg, out)?;
    }
    let secs = started.elapsed().as_secs_f64();
    std::fs::write(out.stage_timing("all"), format!("stage,seconds\nall,{secs:.3}\n"))
        .map_err(error::io_err(out.stage_timing("all")))?;
    Ok(secs)
}
