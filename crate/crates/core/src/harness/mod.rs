//! Experiment orchestration: configs, the two task pipelines and their outputs.

pub mod config;
pub mod mmwave;
pub mod models;
pub mod ofdm;
pub mod report;
pub mod selftest;

pub use config::{ExperimentConfig, Preset, Scheme, Task};
pub use report::{ExperimentReport, MetricRow, METRICS_HEADER, REPORT_SCHEMA_VERSION};

use crate::error::{Error, Result};

/// Task-dispatched `run` verb. The wall time is filled in here.
pub fn run(cfg: &ExperimentConfig) -> ExperimentReport {
    timed(|| match cfg.task {
        Task::Ofdm => ofdm::run(cfg),
        Task::Mmwave => mmwave::run(cfg),
    })
}

pub fn ablate_fewshot(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if cfg.task != Task::Mmwave || !cfg.has(Scheme::Oa) {
        return Err(Error::usage(
            "ablate-fewshot needs task = mmwave with the oa scheme",
        ));
    }
    Ok(timed(|| mmwave::ablate_fewshot(cfg)))
}

pub fn pilot_study(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if cfg.task != Task::Ofdm {
        return Err(Error::usage("pilot-study needs task = ofdm"));
    }
    Ok(timed(|| ofdm::pilot_study(cfg)))
}

fn timed(f: impl FnOnce() -> ExperimentReport) -> ExperimentReport {
    let start = std::time::Instant::now();
    let mut r = f();
    r.wall_time_s = start.elapsed().as_secs_f64();
    r
}
