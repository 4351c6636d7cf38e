use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fewshot_core::harness::{self, ExperimentConfig, ExperimentReport, Preset};

#[derive(Parser)]
#[command(
    name = "fewshot",
    version,
    about = "Few-shot environment adaptation experiments"
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Train, adapt and evaluate every configured scheme.
    Run(Common),
    /// OA rate versus few-shot size (mmWave).
    AblateFewshot(Common),
    /// Receiver BER versus SNR for each pilot count (OFDM).
    PilotStudy(Common),
    /// Quick numeric self-checks; no files written.
    Selftest,
}

#[derive(Args)]
struct Common {
    /// TOML file merged over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value = "desk")]
    preset: String,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let preset: Preset = self.preset.parse()?;
        let base = ExperimentConfig::preset(preset);
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p, &base)?,
            None => base,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

fn finish(report: ExperimentReport, out: &Path) -> anyhow::Result<ExitCode> {
    report
        .write_dir(out)
        .with_context(|| format!("writing results to {}", out.display()))?;
    tracing::info!(
        rows = report.metrics.len(),
        seconds = report.wall_time_s,
        "wrote {}",
        out.display()
    );
    if report.complete {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "run incomplete: {}",
            report.error.as_deref().unwrap_or("unknown failure")
        );
        Ok(ExitCode::from(2))
    }
}

fn main() -> anyhow::Result<ExitCode> {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    match Cli::parse().verb {
        Verb::Run(c) => {
            let cfg = c.load()?;
            finish(harness::run(&cfg), &c.out)
        }
        Verb::AblateFewshot(c) => {
            let cfg = c.load()?;
            finish(harness::ablate_fewshot(&cfg)?, &c.out)
        }
        Verb::PilotStudy(c) => {
            let cfg = c.load()?;
            finish(harness::pilot_study(&cfg)?, &c.out)
        }
        Verb::Selftest => {
            let checks = harness::selftest::run_all();
            let mut ok = true;
            for c in &checks {
                println!(
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
                ok &= c.passed;
            }
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
