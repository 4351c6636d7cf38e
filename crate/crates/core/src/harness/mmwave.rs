//! mmWave beam-selection experiments: rate comparison and few-shot ablation.

use super::config::{ExperimentConfig, MmwaveTask, NewEnvKind, Scheme};
use super::models::{hypernet_for, mmwave_model};
use super::report::{ExperimentReport, IadmTrace, MethodTrace, MetricRow};
use crate::adapters::{BaseModel, HyperNet};
use crate::baselines::{nofsl_train, tl_finetune, train_joint_from};
use crate::env::mmwave::{
    beams_from_scores, best_beam, make_bf_dataset, rate_baseline, rate_dl, spectral_efficiency,
    BfDataset, Codebook, Scenario, TimingBudget,
};
use crate::error::{Error, Result};
use crate::nn::{LossKind, ParamVector, Sample};
use crate::rng::derive_seed;
use crate::solver::ea::{ea1_run, ea2_run, Phase1Output, Phase2Problem};
use crate::solver::oa::{iadm_run, oa_offline_train, IadmProblem, OaContext};

const LOSS: LossKind = LossKind::MeanSquaredError;

/// Scenarios, data and networks of one mmWave run.
pub struct MmwaveWorld {
    pub codebook: Codebook,
    pub budget: TimingBudget,
    pub snr: f64,
    pub n_tr: usize,
    pub new_env: NewEnvKind,
    pub train: Vec<BfDataset>,
    /// New-environment pool; its head is the few-shot set.
    pub pool: BfDataset,
    pub test: BfDataset,
    pub model: BaseModel,
    pub hyper: HyperNet,
}

impl MmwaveWorld {
    pub fn build(task: &MmwaveTask, seed: u64) -> Result<Self> {
        let link = &task.link;
        let codebook = link.codebook()?;
        let scenario = |tag: u64| Scenario::new(derive_seed(seed, tag), link.clone());
        let mut train = Vec::with_capacity(task.n);
        for i in 0..task.n as u64 {
            let s = scenario(100 + i)?;
            let users = s.sample_users(task.d_i, derive_seed(seed, 200 + i));
            train.push(make_bf_dataset(
                &users,
                &codebook,
                link,
                derive_seed(seed, 300 + i),
            )?);
        }
        let fresh = match task.new_env {
            NewEnvKind::Similar => scenario(100 + task.n as u64 - 1)?
                .perturbed(task.similar_jitter, derive_seed(seed, 998)),
            NewEnvKind::Dissimilar => scenario(999)?,
        };
        let pool_size = task
            .d_full
            .max(task.d_n)
            .max(task.d_n_list.iter().copied().max().unwrap_or(0));
        let pool_users = fresh.sample_users(pool_size, derive_seed(seed, 1001));
        let pool = make_bf_dataset(&pool_users, &codebook, link, derive_seed(seed, 1002))?;
        let test_users = fresh.sample_users(task.test_users, derive_seed(seed, 1003));
        let test = make_bf_dataset(&test_users, &codebook, link, derive_seed(seed, 1004))?;
        let model = mmwave_model(link.input_len(), link.output_len(), &task.model)?;
        let hyper = hypernet_for(&model, task.model.embed)?;
        Ok(Self {
            codebook,
            budget: link.budget()?,
            snr: link.rate_snr(),
            n_tr: link.n_tr,
            new_env: task.new_env,
            train,
            pool,
            test,
            model,
            hyper,
        })
    }

    pub fn train_sets(&self) -> Vec<&[Sample]> {
        self.train
            .iter()
            .map(|d| d.data.samples.as_slice())
            .collect()
    }

    pub fn few_shot(&self, d_n: usize) -> Result<BfDataset> {
        if d_n > self.pool.len() {
            return Err(Error::usage(format!(
                "few-shot size {d_n} exceeds the new-environment pool"
            )));
        }
        self.pool.head(d_n)
    }

    /// Mean overhead-discounted rate of the beams the model picks on the test users.
    pub fn predicted_rate(&self, w: &ParamVector, v: &ParamVector) -> Result<f64> {
        let scores = self.model.predict(w, v, &self.test.data.samples)?;
        let mut total = 0.0;
        for (s, ch) in scores.iter().zip(&self.test.channels) {
            total += rate_dl(
                ch,
                &self.codebook,
                &beams_from_scores(s, self.n_tr),
                &self.budget,
                self.snr,
            )?;
        }
        Ok(total / self.test.len() as f64)
    }

    /// Mean rate of exhaustive beam training.
    pub fn baseline_rate(&self) -> Result<f64> {
        let mut total = 0.0;
        for ch in &self.test.channels {
            total += rate_baseline(ch, &self.codebook, &self.budget, self.snr)?.0;
        }
        Ok(total / self.test.len() as f64)
    }

    /// Best codebook beams with no training overhead.
    pub fn optimum_rate(&self) -> Result<f64> {
        let mut total = 0.0;
        for ch in &self.test.channels {
            let beams = (0..ch.bs)
                .map(|b| best_beam(ch, &self.codebook, b).map(|i| self.codebook.beam(i)))
                .collect::<Result<Vec<_>>>()?;
            total += spectral_efficiency(ch, &beams, self.snr)?;
        }
        Ok(total / self.test.len() as f64)
    }
}

struct Rows<'a> {
    report: &'a mut ExperimentReport,
    hash: String,
    seed: u64,
    env: &'static str,
}

impl Rows<'_> {
    fn push(
        &mut self,
        method: &str,
        d_n: Option<usize>,
        metric: &str,
        value: f64,
        artifact: Option<String>,
    ) {
        self.report.metrics.push(MetricRow {
            config_hash: self.hash.clone(),
            seed: self.seed,
            task: "mmwave".into(),
            method: method.into(),
            environment: self.env.into(),
            snr_db: None,
            d_n,
            pilots: None,
            metric: metric.into(),
            value,
            artifact,
        });
    }
}

fn phase1(
    world: &MmwaveWorld,
    cfg: &ExperimentConfig,
    report: &mut ExperimentReport,
) -> Result<Phase1Output> {
    let sets = world.train_sets();
    let out = ea1_run(
        &world.model,
        &sets,
        LOSS,
        &cfg.mmwave.solvers.phase1,
        derive_seed(cfg.seed, 1),
    )?;
    report.stage("phase1", super::ofdm::phase1_label(cfg), out.trace.len());
    report.traces.push(MethodTrace {
        method: super::ofdm::phase1_label(cfg).into(),
        rows: out.trace.clone(),
    });
    Ok(out)
}

fn offline(
    world: &MmwaveWorld,
    cfg: &ExperimentConfig,
    p1: &Phase1Output,
    report: &mut ExperimentReport,
) -> Result<ParamVector> {
    let ctx = OaContext {
        model: &world.model,
        hyper: &world.hyper,
        w_star: &p1.w,
        loss: LOSS,
    };
    let out = oa_offline_train(
        &ctx,
        &world.train_sets(),
        &p1.vs,
        &cfg.mmwave.solvers.offline,
        derive_seed(cfg.seed, 2),
    )?;
    report.stage("offline", "oa", out.trace.len());
    Ok(out.u)
}

fn online(
    world: &MmwaveWorld,
    cfg: &ExperimentConfig,
    p1: &Phase1Output,
    u_star: &ParamVector,
    few: &[Sample],
    report: &mut ExperimentReport,
) -> Result<ParamVector> {
    let ctx = OaContext {
        model: &world.model,
        hyper: &world.hyper,
        w_star: &p1.w,
        loss: LOSS,
    };
    let problem = IadmProblem::new(ctx, u_star, few, &cfg.mmwave.solvers.iadm);
    let out = iadm_run(&problem, &cfg.mmwave.solvers.iadm)?;
    report.stage("adapt", "oa", out.trace.len());
    report.iadm_traces.push(IadmTrace {
        environment: world.new_env.name().into(),
        d_n: few.len(),
        rows: out.trace,
    });
    Ok(out.v)
}

/// Fingerprint of everything the online stage consumes besides the few-shot set.
pub fn artifact_hash(p1: &Phase1Output, u_star: &ParamVector) -> String {
    let mut parts = vec![p1.w.fingerprint(), u_star.fingerprint()];
    parts.extend(p1.vs.iter().map(ParamVector::fingerprint));
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(parts.join(":").as_bytes()))[..16].to_string()
}

pub fn run(cfg: &ExperimentConfig) -> ExperimentReport {
    let mut report = ExperimentReport::new("run", &cfg.short_hash(), cfg.seed);
    if let Err(e) = run_into(cfg, &mut report) {
        report.complete = false;
        report.error = Some(e.to_string());
    }
    report
}

fn run_into(cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let task = &cfg.mmwave;
    let seed = cfg.seed;
    let hash = cfg.short_hash();
    let world = MmwaveWorld::build(task, seed)?;
    let env = world.new_env.name();
    let d_n = Some(task.d_n);
    let few = world.few_shot(task.d_n)?;
    {
        let mut rows = Rows {
            report,
            hash: hash.clone(),
            seed,
            env,
        };
        rows.push("baseline", None, "rate", world.baseline_rate()?, None);
        rows.push("optimum", None, "rate", world.optimum_rate()?, None);
    }
    let p1 = phase1(&world, cfg, report)?;
    let sets = world.train_sets();
    let v0 = p1.vs[0].clone();

    if cfg.has(Scheme::Mismatch) {
        report.stage("adapt", "mismatch", 0);
        let r = world.predicted_rate(&p1.w, &v0)?;
        Rows {
            report,
            hash: hash.clone(),
            seed,
            env,
        }
        .push("mismatch", d_n, "rate", r, None);
    }
    if cfg.has(Scheme::Tl) {
        let run = &cfg.mmwave.baselines.tl;
        let out = tl_finetune(
            &world.model,
            &p1.w,
            &v0,
            &few.data.samples,
            LOSS,
            &run.optimizer,
            run.steps,
        )?;
        report.stage("adapt", "tl", out.trace.len());
        let r = world.predicted_rate(&p1.w, &out.v)?;
        Rows {
            report,
            hash: hash.clone(),
            seed,
            env,
        }
        .push("tl", d_n, "rate", r, None);
    }
    if cfg.has(Scheme::Ea) {
        let problem = Phase2Problem {
            model: &world.model,
            hyper: &world.hyper,
            datasets: &sets,
            few_shot: &few.data.samples,
            w_star: &p1.w,
            v_star: &p1.vs,
            loss: LOSS,
        };
        let out = ea2_run(&problem, &cfg.mmwave.solvers.phase2, derive_seed(seed, 3))?;
        report.stage("adapt", "ea", out.trace.len());
        let r = world.predicted_rate(&p1.w, &out.v_n)?;
        Rows {
            report,
            hash: hash.clone(),
            seed,
            env,
        }
        .push("ea", d_n, "rate", r, None);
    }
    if cfg.has(Scheme::Oa) {
        let u_star = offline(&world, cfg, &p1, report)?;
        let artifact = artifact_hash(&p1, &u_star);
        let v = online(&world, cfg, &p1, &u_star, &few.data.samples, report)?;
        let r = world.predicted_rate(&p1.w, &v)?;
        Rows {
            report,
            hash: hash.clone(),
            seed,
            env,
        }
        .push("oa", d_n, "rate", r, Some(artifact));
    }
    if cfg.has(Scheme::Nofsl) {
        let run = &cfg.mmwave.baselines.nofsl;
        let out = nofsl_train(
            &world.model,
            &sets,
            LOSS,
            &run.optimizer,
            run.steps,
            derive_seed(seed, 1),
        )?;
        report.stage("phase1", "nofsl", out.trace.len());
        let r = world.predicted_rate(&out.w, &world.model.identity_v())?;
        Rows {
            report,
            hash: hash.clone(),
            seed,
            env,
        }
        .push("nofsl", None, "rate", r, None);
    }
    // upper bound: the phase-1 model retrained jointly on plentiful new-environment data
    let run = &cfg.mmwave.baselines.upper_bound;
    let full = world.few_shot(task.d_full)?;
    let out = train_joint_from(
        &world.model,
        p1.w.clone(),
        vec![v0],
        &[full.data.samples.as_slice()],
        LOSS,
        &run.optimizer,
        run.steps,
    )?;
    report.stage("adapt", "upper-bound", out.trace.len());
    let r = world.predicted_rate(&out.w, &out.vs[0])?;
    Rows {
        report,
        hash,
        seed,
        env,
    }
    .push("upper-bound", Some(task.d_full), "rate", r, None);
    Ok(())
}

/// OA rate for every few-shot size, all sharing one set of offline artifacts.
pub fn ablate_fewshot(cfg: &ExperimentConfig) -> ExperimentReport {
    let mut report = ExperimentReport::new("ablate-fewshot", &cfg.short_hash(), cfg.seed);
    if let Err(e) = ablate_into(cfg, &mut report) {
        report.complete = false;
        report.error = Some(e.to_string());
    }
    report
}

fn ablate_into(cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let task = &cfg.mmwave;
    let seed = cfg.seed;
    let hash = cfg.short_hash();
    let world = MmwaveWorld::build(task, seed)?;
    let env = world.new_env.name();
    Rows {
        report,
        hash: hash.clone(),
        seed,
        env,
    }
    .push("baseline", None, "rate", world.baseline_rate()?, None);
    let p1 = phase1(&world, cfg, report)?;
    let u_star = offline(&world, cfg, &p1, report)?;
    for &d_n in &task.d_n_list {
        let few = world.few_shot(d_n)?;
        // recomputed per row so a mutated artifact would show up as a hash change
        let artifact = artifact_hash(&p1, &u_star);
        let v = online(&world, cfg, &p1, &u_star, &few.data.samples, report)?;
        let r = world.predicted_rate(&p1.w, &v)?;
        Rows {
            report,
            hash: hash.clone(),
            seed,
            env,
        }
        .push("oa", Some(d_n), "rate", r, Some(artifact));
    }
    Ok(())
}
