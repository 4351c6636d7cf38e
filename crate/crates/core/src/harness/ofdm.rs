//! OFDM receiver experiments: adaptation comparison and pilot study.

use super::config::{ExperimentConfig, OfdmTask, Scheme};
use super::models::{hypernet_for, ofdm_model};
use super::report::{ExperimentReport, IadmTrace, MethodTrace, MetricRow};
use crate::adapters::{BaseModel, HyperNet};
use crate::baselines::{nofsl_train, tl_finetune, train_joint};
use crate::env::dataset::EnvironmentDataset;
use crate::env::ofdm::{
    dataset_ber, dissimilar_environment, ls_detect, make_dataset, perturb_environment,
    sample_resolvable_environment, to_correlation, OfdmConfig, Pdp,
};
use crate::error::Result;
use crate::nn::{LossKind, ParamVector, Sample};
use crate::rng::derive_seed;
use crate::solver::ea::{ea1_run, ea2_run, mean_objective, Phase1Output, Phase2Problem};
use crate::solver::oa::{iadm_run, oa_offline_train, OaContext};

const LOSS: LossKind = LossKind::BinaryCrossEntropy;

/// Environments, data and networks of one OFDM run.
pub struct OfdmWorld {
    pub link: OfdmConfig,
    pub train_pdps: Vec<Pdp>,
    pub similar: Pdp,
    pub dissimilar: Pdp,
    /// Correlator features of the training frames.
    pub train: Vec<Vec<Sample>>,
    pub model: BaseModel,
    pub hyper: HyperNet,
}

/// Frames split as evenly as possible over `snrs`, concatenated in SNR order.
pub fn mixed_dataset(
    link: &OfdmConfig,
    pdp: &Pdp,
    count: usize,
    snrs: &[f64],
    seed: u64,
) -> Result<EnvironmentDataset> {
    let k = snrs.len();
    let mut samples = Vec::with_capacity(count);
    for (j, &snr) in snrs.iter().enumerate() {
        let share = count / k + usize::from(j < count % k);
        if share > 0 {
            samples
                .extend(make_dataset(link, pdp, share, snr, derive_seed(seed, j as u64))?.samples);
        }
    }
    Ok(EnvironmentDataset::new(
        crate::env::dataset::TaskKind::Ofdm,
        link.k_sub,
        link.pilots,
        samples,
    ))
}

impl OfdmWorld {
    /// Environment geometry depends on the seed only, so pilot counts can be
    /// compared on identical channels.
    pub fn build(task: &OfdmTask, pilots: usize, seed: u64) -> Result<Self> {
        let link = OfdmConfig::new(task.k_sub, pilots, task.cp_len)?;
        let train_pdps = (0..task.n)
            .map(|i| {
                sample_resolvable_environment(
                    derive_seed(seed, 1000 + i as u64),
                    task.paths,
                    task.train_max_delay,
                    task.pilots,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        // close to the last training environment, while mismatch deploys the first one's adapters
        let parent = train_pdps.last().expect("n >= 1");
        let similar = perturb_environment(parent, task.similar_jitter, derive_seed(seed, 2001))?;
        let dissimilar = dissimilar_environment(
            derive_seed(seed, 2002),
            task.paths,
            &train_pdps,
            task.cp_len,
            task.pilots,
        )?;
        let train = train_pdps
            .iter()
            .enumerate()
            .map(|(i, pdp)| {
                let d = mixed_dataset(
                    &link,
                    pdp,
                    task.d_i,
                    &task.train_snr_db,
                    derive_seed(seed, 3000 + i as u64),
                )?;
                Ok(to_correlation(&link, &d.samples))
            })
            .collect::<Result<Vec<_>>>()?;
        let model = ofdm_model(&link, &task.model)?;
        let hyper = hypernet_for(&model, task.model.embed)?;
        Ok(Self {
            link,
            train_pdps,
            similar,
            dissimilar,
            train,
            model,
            hyper,
        })
    }

    pub fn train_sets(&self) -> Vec<&[Sample]> {
        self.train.iter().map(Vec::as_slice).collect()
    }

    pub fn new_env(&self, kind: NewEnv) -> &Pdp {
        match kind {
            NewEnv::Similar => &self.similar,
            NewEnv::Dissimilar => &self.dissimilar,
        }
    }

    /// Few-shot frames from a new environment, as correlator features.
    pub fn few_shot(&self, task: &OfdmTask, kind: NewEnv, seed: u64) -> Result<Vec<Sample>> {
        let d = mixed_dataset(
            &self.link,
            self.new_env(kind),
            task.d_n,
            &task.train_snr_db,
            derive_seed(seed, 4000 + kind as u64),
        )?;
        Ok(to_correlation(&self.link, &d.samples))
    }

    /// Test frames; `stream` keeps different (environment, SNR) points independent.
    pub fn test_set(
        &self,
        pdp: &Pdp,
        frames: usize,
        snr_db: f64,
        seed: u64,
        stream: u64,
    ) -> Result<TestSet> {
        let raw = make_dataset(
            &self.link,
            pdp,
            frames,
            snr_db,
            derive_seed(seed, 5000 + stream),
        )?;
        Ok(TestSet {
            features: to_correlation(&self.link, &raw.samples),
            raw,
        })
    }
}

/// Received planes for classical receivers and correlator features for learned ones.
pub struct TestSet {
    pub raw: EnvironmentDataset,
    pub features: Vec<Sample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NewEnv {
    Similar = 0,
    Dissimilar = 1,
}

impl NewEnv {
    pub const ALL: [NewEnv; 2] = [NewEnv::Similar, NewEnv::Dissimilar];

    pub fn name(self) -> &'static str {
        match self {
            NewEnv::Similar => "similar",
            NewEnv::Dissimilar => "dissimilar",
        }
    }
}

pub fn receiver_ber(
    model: &BaseModel,
    w: &ParamVector,
    v: &ParamVector,
    test: &[Sample],
) -> Result<f64> {
    dataset_ber(&model.predict(w, v, test)?, test)
}

pub fn ls_ber(link: &OfdmConfig, test: &[Sample]) -> Result<f64> {
    let preds: Vec<Vec<f64>> = test.iter().map(|s| ls_detect(link, &s.x)).collect();
    dataset_ber(&preds, test)
}

struct Rows<'a> {
    report: &'a mut ExperimentReport,
    hash: String,
    seed: u64,
}

impl Rows<'_> {
    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        method: &str,
        env: &str,
        snr: Option<f64>,
        d_n: Option<usize>,
        pilots: Option<usize>,
        metric: &str,
        value: f64,
    ) {
        self.report.metrics.push(MetricRow {
            config_hash: self.hash.clone(),
            seed: self.seed,
            task: "ofdm".into(),
            method: method.into(),
            environment: env.into(),
            snr_db: snr,
            d_n,
            pilots,
            metric: metric.into(),
            value,
            artifact: None,
        });
    }
}

/// Phase-1 trace label.
pub fn phase1_label(cfg: &ExperimentConfig) -> &'static str {
    if cfg.ofdm.solvers.phase1.second_moment {
        "iadmm-sm"
    } else {
        "iadmm"
    }
}

/// Full comparison pipeline. Failures mark the report incomplete and keep
/// whatever was computed before them.
pub fn run(cfg: &ExperimentConfig) -> ExperimentReport {
    let mut report = ExperimentReport::new("run", &cfg.short_hash(), cfg.seed);
    if let Err(e) = run_into(cfg, &mut report) {
        report.complete = false;
        report.error = Some(e.to_string());
    }
    report
}

fn run_into(cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let task = &cfg.ofdm;
    let seed = cfg.seed;
    let world = OfdmWorld::build(task, task.pilots, seed)?;
    let sets = world.train_sets();
    let hash = cfg.short_hash();
    let pilots = Some(task.pilots);

    let needs_phase1 = [Scheme::Ea, Scheme::Oa, Scheme::Tl, Scheme::Mismatch]
        .iter()
        .any(|&s| cfg.has(s));
    let mut phase1: Option<Phase1Output> = None;
    if needs_phase1 {
        let out = ea1_run(
            &world.model,
            &sets,
            LOSS,
            &cfg.ofdm.solvers.phase1,
            derive_seed(seed, 1),
        )?;
        let label = phase1_label(cfg);
        let obj = mean_objective(&world.model, &out.w, &out.vs, &sets, LOSS)?;
        report.stage("phase1", label, out.trace.len());
        Rows {
            report,
            hash: hash.clone(),
            seed,
        }
        .push(
            label,
            "train",
            None,
            Some(task.d_n),
            pilots,
            "final_train_loss",
            obj,
        );
        if let Some(last) = out.trace.last() {
            Rows {
                report,
                hash: hash.clone(),
                seed,
            }
            .push(
                label,
                "train",
                None,
                Some(task.d_n),
                pilots,
                "consensus_residual",
                last.consensus_residual,
            );
        }
        report.traces.push(MethodTrace {
            method: label.into(),
            rows: out.trace.clone(),
        });
        phase1 = Some(out);
    }
    for (scheme, run) in [
        (Scheme::Sgd, &cfg.ofdm.baselines.sgd),
        (Scheme::Rmsprop, &cfg.ofdm.baselines.rmsprop),
    ] {
        if !cfg.has(scheme) {
            continue;
        }
        let out = train_joint(
            &world.model,
            &sets,
            LOSS,
            &run.optimizer,
            run.steps,
            derive_seed(seed, 1),
        )?;
        let obj = mean_objective(&world.model, &out.w, &out.vs, &sets, LOSS)?;
        report.stage("phase1", scheme.name(), out.trace.len());
        Rows {
            report,
            hash: hash.clone(),
            seed,
        }
        .push(
            scheme.name(),
            "train",
            None,
            Some(task.d_n),
            pilots,
            "final_train_loss",
            obj,
        );
        report.traces.push(MethodTrace {
            method: scheme.name().into(),
            rows: out.trace,
        });
    }
    let nofsl = if cfg.has(Scheme::Nofsl) {
        let run = &cfg.ofdm.baselines.nofsl;
        let out = nofsl_train(
            &world.model,
            &sets,
            LOSS,
            &run.optimizer,
            run.steps,
            derive_seed(seed, 1),
        )?;
        report.stage("phase1", "nofsl", out.trace.len());
        report.traces.push(MethodTrace {
            method: "nofsl".into(),
            rows: out.trace.clone(),
        });
        Some(out.w)
    } else {
        None
    };

    // offline OA artifacts are shared by both new environments
    let u_star = match (&phase1, cfg.has(Scheme::Oa)) {
        (Some(p1), true) => {
            let ctx = OaContext {
                model: &world.model,
                hyper: &world.hyper,
                w_star: &p1.w,
                loss: LOSS,
            };
            let out = oa_offline_train(
                &ctx,
                &sets,
                &p1.vs,
                &cfg.ofdm.solvers.offline,
                derive_seed(seed, 2),
            )?;
            report.stage("offline", "oa", out.trace.len());
            Some(out.u)
        }
        _ => None,
    };

    for kind in NewEnv::ALL {
        let env = kind.name();
        let pdp = world.new_env(kind).clone();
        let few = world.few_shot(task, kind, seed)?;
        let tests = task
            .snr_grid_db
            .iter()
            .enumerate()
            .map(|(j, &snr)| {
                world.test_set(
                    &pdp,
                    task.test_frames,
                    snr,
                    seed,
                    100 * kind as u64 + j as u64,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let mut adapted: Vec<(&str, ParamVector, ParamVector)> = Vec::new();
        if let Some(p1) = &phase1 {
            let v0 = p1.vs[0].clone();
            if cfg.has(Scheme::Mismatch) {
                report.stage("adapt", "mismatch", 0);
                adapted.push(("mismatch", p1.w.clone(), v0.clone()));
            }
            if cfg.has(Scheme::Tl) {
                let run = &cfg.ofdm.baselines.tl;
                let out = tl_finetune(
                    &world.model,
                    &p1.w,
                    &v0,
                    &few,
                    LOSS,
                    &run.optimizer,
                    run.steps,
                )?;
                report.stage("adapt", "tl", out.trace.len());
                adapted.push(("tl", p1.w.clone(), out.v));
            }
            if cfg.has(Scheme::Ea) {
                let problem = Phase2Problem {
                    model: &world.model,
                    hyper: &world.hyper,
                    datasets: &sets,
                    few_shot: &few,
                    w_star: &p1.w,
                    v_star: &p1.vs,
                    loss: LOSS,
                };
                let out = ea2_run(&problem, &cfg.ofdm.solvers.phase2, derive_seed(seed, 3))?;
                report.stage("adapt", "ea", out.trace.len());
                report.traces.push(MethodTrace {
                    method: format!("ea-phase2-{env}"),
                    rows: out.trace,
                });
                adapted.push(("ea", p1.w.clone(), out.v_n));
            }
            if let Some(u_star) = &u_star {
                let ctx = OaContext {
                    model: &world.model,
                    hyper: &world.hyper,
                    w_star: &p1.w,
                    loss: LOSS,
                };
                let problem =
                    crate::solver::oa::IadmProblem::new(ctx, u_star, &few, &cfg.ofdm.solvers.iadm);
                let out = iadm_run(&problem, &cfg.ofdm.solvers.iadm)?;
                report.stage("adapt", "oa", out.trace.len());
                report.iadm_traces.push(IadmTrace {
                    environment: env.into(),
                    d_n: task.d_n,
                    rows: out.trace,
                });
                adapted.push(("oa", p1.w.clone(), out.v));
            }
        }
        if let Some(w) = &nofsl {
            report.stage("adapt", "nofsl", 0);
            adapted.push(("nofsl", w.clone(), world.model.identity_v()));
        }

        for (snr, test) in task.snr_grid_db.iter().zip(&tests) {
            let mut rows = Rows {
                report,
                hash: hash.clone(),
                seed,
            };
            rows.push(
                "ls",
                env,
                Some(*snr),
                Some(task.d_n),
                pilots,
                "ber",
                ls_ber(&world.link, &test.raw.samples)?,
            );
            for (name, w, v) in &adapted {
                let b = receiver_ber(&world.model, w, v, &test.features)?;
                rows.push(name, env, Some(*snr), Some(task.d_n), pilots, "ber", b);
            }
        }
    }
    Ok(())
}

/// BER versus SNR per pilot count, on a training (known) environment with its
/// own adapters and on the dissimilar new environment without adaptation.
pub fn pilot_study(cfg: &ExperimentConfig) -> ExperimentReport {
    let mut report = ExperimentReport::new("pilot-study", &cfg.short_hash(), cfg.seed);
    if let Err(e) = pilot_study_into(cfg, &mut report) {
        report.complete = false;
        report.error = Some(e.to_string());
    }
    report
}

fn pilot_study_into(cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let task = &cfg.ofdm;
    let seed = cfg.seed;
    let hash = cfg.short_hash();
    for &p in &task.pilot_counts {
        let world = OfdmWorld::build(task, p, seed)?;
        let sets = world.train_sets();
        let p1 = ea1_run(
            &world.model,
            &sets,
            LOSS,
            &cfg.ofdm.solvers.phase1,
            derive_seed(seed, 1),
        )?;
        report.stage("phase1", &format!("pilots-{p}"), p1.trace.len());
        report.traces.push(MethodTrace {
            method: format!("iadmm-pilots-{p}"),
            rows: p1.trace.clone(),
        });
        for (env, pdp, tag) in [
            ("known", &world.train_pdps[0], 7u64),
            ("new", &world.dissimilar, 8u64),
        ] {
            for (j, &snr) in task.snr_grid_db.iter().enumerate() {
                let test =
                    world.test_set(pdp, task.test_frames, snr, seed, 100 * tag + j as u64)?;
                let b = receiver_ber(&world.model, &p1.w, &p1.vs[0], &test.features)?;
                Rows {
                    report,
                    hash: hash.clone(),
                    seed,
                }
                .push("receiver", env, Some(snr), None, Some(p), "ber", b);
            }
        }
    }
    Ok(())
}
