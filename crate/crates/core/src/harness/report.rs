//! Experiment outputs: long-format metrics, loss traces and `report.json`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::solver::oa::{write_iadm_csv, IadmRow, IADM_HEADER};
use crate::trace::{write_trace_csv, TraceRow, TRACE_HEADER};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const METRICS_HEADER: &str =
    "config_hash,seed,task,method,environment,snr_db,d_n,pilots,metric,value,artifact";

/// One long-format metric value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub config_hash: String,
    pub seed: u64,
    pub task: String,
    pub method: String,
    /// `similar`, `dissimilar`, `known`, `new` or `train`.
    pub environment: String,
    pub snr_db: Option<f64>,
    pub d_n: Option<usize>,
    pub pilots: Option<usize>,
    /// `ber`, `rate`, `final_train_loss`, ...
    pub metric: String,
    pub value: f64,
    /// Fingerprint of the offline artifacts the value was computed from.
    pub artifact: Option<String>,
}

impl MetricRow {
    fn csv(&self) -> String {
        fn opt<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map(ToString::to_string).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{},{},{},{},{:e},{}",
            self.config_hash,
            self.seed,
            self.task,
            self.method,
            self.environment,
            opt(&self.snr_db),
            opt(&self.d_n),
            opt(&self.pilots),
            self.metric,
            self.value,
            opt(&self.artifact),
        )
    }
}

/// Steps a pipeline stage actually ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: String,
    pub method: String,
    /// Adaptation / training steps taken; zero for evaluation-only stages.
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct MethodTrace {
    pub method: String,
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone)]
pub struct IadmTrace {
    pub environment: String,
    pub d_n: usize,
    pub rows: Vec<IadmRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub verb: String,
    pub config_hash: String,
    pub seed: u64,
    pub wall_time_s: f64,
    /// False when a stage failed; `error` says which.
    pub complete: bool,
    pub error: Option<String>,
    pub stages: Vec<StageLog>,
    pub metrics: Vec<MetricRow>,
    #[serde(skip)]
    pub traces: Vec<MethodTrace>,
    #[serde(skip)]
    pub iadm_traces: Vec<IadmTrace>,
}

impl ExperimentReport {
    pub fn new(verb: &str, config_hash: &str, seed: u64) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            verb: verb.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            wall_time_s: 0.0,
            complete: true,
            error: None,
            stages: Vec::new(),
            metrics: Vec::new(),
            traces: Vec::new(),
            iadm_traces: Vec::new(),
        }
    }

    pub fn stage(&mut self, stage: &str, method: &str, steps: usize) {
        self.stages.push(StageLog {
            stage: stage.to_string(),
            method: method.to_string(),
            steps,
        });
    }

    /// Values of `metric` for `method` on `environment`, in insertion order.
    pub fn values(&self, method: &str, environment: &str, metric: &str) -> Vec<&MetricRow> {
        self.metrics
            .iter()
            .filter(|r| r.method == method && r.environment == environment && r.metric == metric)
            .collect()
    }

    pub fn write_metrics<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{METRICS_HEADER}")?;
        for r in &self.metrics {
            writeln!(out, "{}", r.csv())?;
        }
        Ok(())
    }

    pub fn write_traces<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "config_hash,{TRACE_HEADER}")?;
        for t in &self.traces {
            let mut buf = Vec::new();
            write_trace_csv(&mut buf, &t.method, &t.rows)?;
            for line in String::from_utf8_lossy(&buf).lines() {
                writeln!(out, "{},{}", self.config_hash, line)?;
            }
        }
        Ok(())
    }

    pub fn write_iadm_traces<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "config_hash,environment,d_n,{IADM_HEADER}")?;
        for t in &self.iadm_traces {
            let mut buf = Vec::new();
            write_iadm_csv(&mut buf, &t.rows)?;
            // skip the header line the single-run writer emits
            for line in String::from_utf8_lossy(&buf).lines().skip(1) {
                writeln!(
                    out,
                    "{},{},{},{}",
                    self.config_hash, t.environment, t.d_n, line
                )?;
            }
        }
        Ok(())
    }

    /// Writes `metrics.csv`, `trace.csv`, `iadm_trace.csv` and `report.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let open = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
            Ok(std::io::BufWriter::new(std::fs::File::create(
                dir.join(name),
            )?))
        };
        self.write_metrics(open("metrics.csv")?)?;
        self.write_traces(open("trace.csv")?)?;
        self.write_iadm_traces(open("iadm_trace.csv")?)?;
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| crate::error::Error::Format(e.to_string()))?;
        std::fs::write(dir.join("report.json"), json + "\n")?;
        Ok(())
    }
}
