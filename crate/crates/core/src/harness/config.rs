//! Experiment configuration: presets, TOML overrides and the config hash.
//!
//! A config file is merged key by key over a preset, so a file only needs the
//! values it changes. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::models::{MmwaveModelConfig, OfdmModelConfig};
use crate::baselines::OptimizerConfig;
use crate::env::mmwave::MmwaveConfig;
use crate::error::{Error, Result};
use crate::solver::ea::{Phase1Config, Phase2Config};
use crate::solver::oa::{IadmConfig, OfflineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Ofdm,
    Mmwave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Ea,
    Oa,
    Tl,
    Mismatch,
    Nofsl,
    Sgd,
    Rmsprop,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Ea => "ea",
            Scheme::Oa => "oa",
            Scheme::Tl => "tl",
            Scheme::Mismatch => "mismatch",
            Scheme::Nofsl => "nofsl",
            Scheme::Sgd => "sgd",
            Scheme::Rmsprop => "rmsprop",
        }
    }
}

/// Which unseen environment a mmWave run deploys to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NewEnvKind {
    /// Perturbed copy of the last training scenario.
    Similar,
    /// Independently drawn scenario.
    Dissimilar,
}

impl NewEnvKind {
    pub fn name(self) -> &'static str {
        match self {
            NewEnvKind::Similar => "similar",
            NewEnvKind::Dissimilar => "dissimilar",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::usage(format!(
                "unknown preset `{other}` (expected desk or paper)"
            ))),
        }
    }
}

/// Synthetic OFDM task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmTask {
    /// Training environments.
    pub n: usize,
    /// Frames per training environment, spread evenly over `train_snr_db`.
    pub d_i: usize,
    /// Few-shot frames from the new environment.
    pub d_n: usize,
    /// Test frames per (environment, SNR) point.
    pub test_frames: usize,
    pub k_sub: usize,
    pub pilots: usize,
    pub cp_len: usize,
    pub paths: usize,
    /// Largest tap delay of a training environment. The dissimilar new
    /// environment draws an unused delay set from `1..=cp_len`.
    pub train_max_delay: usize,
    pub train_snr_db: Vec<f64>,
    pub snr_grid_db: Vec<f64>,
    /// Relative PDP perturbation that produces the similar new environment.
    pub similar_jitter: f64,
    /// Pilot counts compared by the pilot study.
    pub pilot_counts: Vec<usize>,
    pub model: OfdmModelConfig,
    pub solvers: Solvers,
    pub baselines: Baselines,
}

/// Synthetic mmWave beam-selection task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmwaveTask {
    pub n: usize,
    pub d_i: usize,
    pub d_n: usize,
    /// New-environment users given to the upper-bound model.
    pub d_full: usize,
    pub test_users: usize,
    /// Few-shot sizes swept by the ablation.
    pub d_n_list: Vec<usize>,
    pub new_env: NewEnvKind,
    /// Geometry jitter applied to build the similar scenario.
    pub similar_jitter: f64,
    pub link: MmwaveConfig,
    pub model: MmwaveModelConfig,
    pub solvers: Solvers,
    pub baselines: Baselines,
}

/// A conventional optimizer run with its own step budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineRun {
    pub optimizer: OptimizerConfig,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baselines {
    /// Joint SGD on the phase-1 problem; `steps` is the comparison budget.
    pub sgd: BaselineRun,
    pub rmsprop: BaselineRun,
    pub tl: BaselineRun,
    pub nofsl: BaselineRun,
    /// Upper-bound model trained on the full new-environment data.
    pub upper_bound: BaselineRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Solvers {
    pub phase1: Phase1Config,
    pub phase2: Phase2Config,
    pub offline: OfflineConfig,
    pub iadm: IadmConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub schemes: Vec<Scheme>,
    pub seed: u64,
    pub ofdm: OfdmTask,
    pub mmwave: MmwaveTask,
}

impl ExperimentConfig {
    /// Minutes-scale defaults.
    pub fn desk() -> Self {
        Self {
            task: Task::Ofdm,
            schemes: vec![Scheme::Ea, Scheme::Tl, Scheme::Mismatch],
            seed: 0,
            ofdm: OfdmTask {
                n: 4,
                d_i: 128,
                d_n: 16,
                test_frames: 400,
                k_sub: 24,
                pilots: 3,
                cp_len: 8,
                paths: 3,
                train_max_delay: 8,
                train_snr_db: vec![5.0, 10.0, 15.0, 20.0],
                snr_grid_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
                similar_jitter: 0.1,
                pilot_counts: vec![3, 24],
                model: OfdmModelConfig::default(),
                solvers: ofdm_solvers(),
                baselines: ofdm_baselines(),
            },
            mmwave: MmwaveTask {
                n: 4,
                d_i: 128,
                d_n: 64,
                d_full: 512,
                test_users: 200,
                d_n_list: vec![8, 16, 32, 64],
                new_env: NewEnvKind::Similar,
                similar_jitter: 1.0,
                link: MmwaveConfig::desk(),
                model: MmwaveModelConfig::default(),
                solvers: mmwave_solvers(),
                baselines: mmwave_baselines(),
            },
        }
    }

    /// Sizes of the original experiments. Hours of CPU time.
    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.ofdm.n = 60;
        c.ofdm.d_i = 500;
        c.ofdm.k_sub = 72;
        c.ofdm.pilots = 9;
        c.ofdm.pilot_counts = vec![9, 72];
        c.ofdm.cp_len = 18;
        c.ofdm.train_max_delay = 8;
        c.mmwave.n = 60;
        c.mmwave.d_i = 7240;
        c.mmwave.d_full = 7240;
        c.mmwave.link = MmwaveConfig::paper();
        c.ofdm.solvers.phase1.sigma = 25.0;
        c.ofdm.solvers.phase1.rho = 25.0;
        c
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    /// `text` merged over `base`, then validated. `origin` names the source in errors.
    pub fn from_toml_over(base: &Self, text: &str, origin: &str) -> Result<Self> {
        let parse_err = |detail: String| Error::Parse {
            path: origin.to_string(),
            detail,
        };
        let patch: toml::Table = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        let mut merged = match toml::Value::try_from(base).map_err(|e| parse_err(e.to_string()))? {
            toml::Value::Table(t) => t,
            _ => return Err(parse_err("config did not serialize to a table".into())),
        };
        merge(&mut merged, patch);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        cfg.validate().map_err(|e| parse_err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, base: &Self) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_over(base, &text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::config("schemes: at least one scheme is required"));
        }
        let o = &self.ofdm;
        for (name, v) in [
            ("ofdm.n", o.n),
            ("ofdm.d_i", o.d_i),
            ("ofdm.d_n", o.d_n),
            ("ofdm.test_frames", o.test_frames),
            ("ofdm.paths", o.paths),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if o.train_max_delay > o.cp_len {
            return Err(Error::config("ofdm.train_max_delay must not exceed cp_len"));
        }
        if o.snr_grid_db.is_empty() || o.train_snr_db.is_empty() {
            return Err(Error::config("ofdm: SNR lists must be nonempty"));
        }
        if o.d_i < o.train_snr_db.len() {
            return Err(Error::config("ofdm.d_i must cover every training SNR"));
        }
        if o.pilot_counts.is_empty() {
            return Err(Error::config("ofdm.pilot_counts must be nonempty"));
        }
        crate::env::ofdm::OfdmConfig::new(o.k_sub, o.pilots, o.cp_len)?;
        for &p in &o.pilot_counts {
            crate::env::ofdm::OfdmConfig::new(o.k_sub, p, o.cp_len)?;
        }
        let m = &self.mmwave;
        for (name, v) in [
            ("mmwave.n", m.n),
            ("mmwave.d_i", m.d_i),
            ("mmwave.d_n", m.d_n),
            ("mmwave.d_full", m.d_full),
            ("mmwave.test_users", m.test_users),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if !(m.similar_jitter >= 0.0 && m.similar_jitter.is_finite()) {
            return Err(Error::config(
                "mmwave.similar_jitter must be finite and nonnegative",
            ));
        }
        if m.d_n_list.is_empty() || m.d_n_list.contains(&0) {
            return Err(Error::config(
                "mmwave.d_n_list must be nonempty with positive sizes",
            ));
        }
        m.link.validate()?;
        for (s, b) in [(&o.solvers, &o.baselines), (&m.solvers, &m.baselines)] {
            s.phase1.validate()?;
            s.phase2.validate()?;
            s.offline.validate()?;
            s.iadm.validate()?;
            for run in [&b.sgd, &b.rmsprop, &b.tl, &b.nofsl, &b.upper_bound] {
                run.optimizer.validate()?;
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// First 16 hex digits of [`Self::hash`], carried on every metric row.
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }

    pub fn has(&self, s: Scheme) -> bool {
        self.schemes.contains(&s)
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

fn merge(base: &mut toml::Table, patch: toml::Table) {
    for (k, v) in patch {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(p)) => merge(b, p),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn ofdm_solvers() -> Solvers {
    Solvers {
        // Losses are summed over every sample of an environment, so the
        // penalty has to grow with d_i to stay inside the stable range.
        phase1: Phase1Config {
            sigma: 100.0,
            rho: 100.0,
            ..Phase1Config::default()
        },
        // lambda weighs a per-sample bit loss against a squared
        // adapter distance summed over 2C entries; eta = lambda / 0.04
        // keeps the task step equal to the transfer-learning rate.
        phase2: Phase2Config {
            eta: 7500.0,
            gamma: 500.0,
            mu: 500.0,
            lambda: 300.0,
            iterations: 300,
            ..Phase2Config::default()
        },
        offline: OfflineConfig::default(),
        iadm: IadmConfig::default(),
    }
}

fn ofdm_baselines() -> Baselines {
    Baselines {
        sgd: BaselineRun {
            optimizer: OptimizerConfig::sgd(0.03),
            steps: 2000,
        },
        rmsprop: BaselineRun {
            optimizer: OptimizerConfig::rmsprop(0.003),
            steps: 2000,
        },
        tl: BaselineRun {
            optimizer: OptimizerConfig::sgd(0.04),
            steps: 300,
        },
        nofsl: BaselineRun {
            optimizer: OptimizerConfig::rmsprop(0.003),
            steps: 2000,
        },
        upper_bound: BaselineRun {
            optimizer: OptimizerConfig::rmsprop(0.003),
            steps: 1000,
        },
    }
}

fn mmwave_solvers() -> Solvers {
    Solvers {
        // MSE on beam gains is far smaller than the bit loss, so a weaker
        // penalty is needed before the trunk fits at all.
        phase1: Phase1Config {
            sigma: 4.0,
            rho: 4.0,
            ..Phase1Config::default()
        },
        phase2: Phase2Config::default(),
        offline: OfflineConfig {
            inner_lr: 0.003,
            outer_lr: 0.003,
            ..OfflineConfig::default()
        },
        // A unit pull toward the hypernet output pins v there; the task
        // term has to dominate for the few-shot data to matter.
        iadm: IadmConfig {
            c1: 1e-4,
            ..IadmConfig::default()
        },
    }
}

fn mmwave_baselines() -> Baselines {
    let mut b = ofdm_baselines();
    b.tl = BaselineRun {
        optimizer: OptimizerConfig::rmsprop(0.01),
        steps: 300,
    };
    b
}
