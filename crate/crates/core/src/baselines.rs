//! Comparison methods: gradient optimizers on the joint objective,
//! transfer-learning fine-tuning of the adapters, mismatch deployment and a
//! shared-only generalist.

use serde::{Deserialize, Serialize};

use crate::adapters::BaseModel;
use crate::error::{Error, Result};
use crate::nn::{LossKind, ParamVector, Sample};
use crate::rng::seeded;
use crate::solver::ea::mean_objective;
use crate::trace::TraceRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Rmsprop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// RMSProp decay of the squared-gradient average.
    pub decay: f64,
    pub eps: f64,
    /// Starting value of the squared-gradient average.
    pub initial_r: f64,
    pub divergence_limit: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::sgd(0.01)
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            decay: 0.9,
            eps: 1e-8,
            initial_r: 0.0,
            divergence_limit: 1e6,
        }
    }

    pub fn rmsprop(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Rmsprop,
            ..Self::sgd(lr)
        }
    }

    /// `lr = 0` is accepted so that a frozen run can be expressed.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::config(
                "learning rate must be a finite nonnegative number",
            ));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::config("rmsprop decay must lie in (0, 1)"));
        }
        if !(self.eps >= 0.0) || !(self.initial_r >= 0.0) {
            return Err(Error::config("eps and initial_r must be nonnegative"));
        }
        Ok(())
    }
}

/// Per-block optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    r: Vec<f64>,
}

impl Optimizer {
    pub fn new(cfg: &OptimizerConfig, len: usize) -> Self {
        Self {
            r: vec![cfg.initial_r; len],
            cfg: cfg.clone(),
        }
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.r
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let lr = self.cfg.lr;
        match self.cfg.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Rmsprop => {
                let (d, eps) = (self.cfg.decay, self.cfg.eps);
                for ((p, g), r) in params.iter_mut().zip(grad).zip(&mut self.r) {
                    *r = d * *r + (1.0 - d) * g * g;
                    *p -= lr * g / (r.sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct JointOutput {
    pub w: ParamVector,
    pub vs: Vec<ParamVector>,
    pub trace: Vec<TraceRow>,
}

fn check_datasets(datasets: &[&[Sample]]) -> Result<()> {
    if datasets.is_empty() {
        return Err(Error::usage("at least one environment is required"));
    }
    if datasets.iter().any(|d| d.is_empty()) {
        return Err(Error::usage("every environment needs at least one sample"));
    }
    Ok(())
}

fn diverged(iteration: usize, trace: Vec<TraceRow>) -> Error {
    Error::Diverged {
        iteration,
        reason: "training loss blew up".into(),
        trace,
    }
}

/// Full-batch gradient steps on `(1/n) sum_i f_i(w, v_i)` from the same
/// initialization as phase one of effective adaptation.
pub fn train_joint(
    model: &BaseModel,
    datasets: &[&[Sample]],
    loss: LossKind,
    opt: &OptimizerConfig,
    steps: usize,
    seed: u64,
) -> Result<JointOutput> {
    let w = model.init_w(&mut seeded(seed));
    let vs = vec![model.identity_v(); datasets.len()];
    train_joint_from(model, w, vs, datasets, loss, opt, steps)
}

pub fn train_joint_from(
    model: &BaseModel,
    mut w: ParamVector,
    mut vs: Vec<ParamVector>,
    datasets: &[&[Sample]],
    loss: LossKind,
    opt: &OptimizerConfig,
    steps: usize,
) -> Result<JointOutput> {
    opt.validate()?;
    check_datasets(datasets)?;
    if vs.len() != datasets.len() {
        return Err(Error::config("one adapter vector per dataset required"));
    }
    let n = datasets.len() as f64;
    let mut w_opt = Optimizer::new(opt, w.len());
    let mut v_opts: Vec<_> = vs.iter().map(|v| Optimizer::new(opt, v.len())).collect();
    let mut trace = Vec::with_capacity(steps);
    for it in 1..=steps {
        let mut gw = w.zeros_like();
        let mut gvs = Vec::with_capacity(vs.len());
        let mut mean_loss = 0.0;
        for (v, d) in vs.iter().zip(datasets) {
            let (l, gwi, mut gvi) = model.grad(&w, v, d, loss)?;
            mean_loss += l / d.len() as f64 / n;
            gw.axpy(1.0 / n, &gwi);
            gvi.scale(1.0 / n);
            gvs.push(gvi);
        }
        let grad_norm = (gw.norm_sq() + gvs.iter().map(ParamVector::norm_sq).sum::<f64>()).sqrt();
        w_opt.step(w.as_mut_slice(), gw.as_slice());
        for ((v, g), o) in vs.iter_mut().zip(&gvs).zip(&mut v_opts) {
            o.step(v.as_mut_slice(), g.as_slice());
        }
        trace.push(TraceRow {
            iteration: it,
            mean_loss,
            consensus_residual: 0.0,
            raw_grad_norm: grad_norm,
            scaled_grad_norm: grad_norm,
        });
        if !mean_loss.is_finite() || mean_loss > opt.divergence_limit || !w.is_finite() {
            return Err(diverged(it, trace));
        }
    }
    Ok(JointOutput { w, vs, trace })
}

#[derive(Debug, Clone)]
pub struct FinetuneOutput {
    pub v: ParamVector,
    pub trace: Vec<TraceRow>,
}

/// Transfer learning: gradient steps on the adapters only, `w*` frozen.
pub fn tl_finetune(
    model: &BaseModel,
    w_star: &ParamVector,
    v_init: &ParamVector,
    few_shot: &[Sample],
    loss: LossKind,
    opt: &OptimizerConfig,
    steps: usize,
) -> Result<FinetuneOutput> {
    opt.validate()?;
    if few_shot.is_empty() && steps > 0 {
        return Err(Error::usage("fine-tuning needs at least one sample"));
    }
    let mut v = v_init.clone();
    let mut o = Optimizer::new(opt, v.len());
    let mut trace = Vec::with_capacity(steps);
    for it in 1..=steps {
        let (l, _, gv) = model.grad(w_star, &v, few_shot, loss)?;
        o.step(v.as_mut_slice(), gv.as_slice());
        let mean_loss = l / few_shot.len() as f64;
        trace.push(TraceRow {
            iteration: it,
            mean_loss,
            consensus_residual: 0.0,
            raw_grad_norm: gv.norm(),
            scaled_grad_norm: gv.norm(),
        });
        if !mean_loss.is_finite() || mean_loss > opt.divergence_limit || !v.is_finite() {
            return Err(diverged(it, trace));
        }
    }
    Ok(FinetuneOutput { v, trace })
}

/// Predictions of an unadapted model on a new environment.
pub fn mismatch_predict(
    model: &BaseModel,
    w_star: &ParamVector,
    v: &ParamVector,
    test: &[Sample],
) -> Result<Vec<Vec<f64>>> {
    model.predict(w_star, v, test)
}

/// Metric of an unadapted model on a new environment.
pub fn mismatch_eval<M>(
    model: &BaseModel,
    w_star: &ParamVector,
    v: &ParamVector,
    test: &[Sample],
    metric: impl FnOnce(&[Vec<f64>], &[Sample]) -> M,
) -> Result<M> {
    let preds = mismatch_predict(model, w_star, v, test)?;
    Ok(metric(&preds, test))
}

#[derive(Debug, Clone)]
pub struct NofslOutput {
    pub w: ParamVector,
    pub trace: Vec<TraceRow>,
}

/// Generalist: pooled training of `w` with the adapters held at identity.
pub fn nofsl_train(
    model: &BaseModel,
    datasets: &[&[Sample]],
    loss: LossKind,
    opt: &OptimizerConfig,
    steps: usize,
    seed: u64,
) -> Result<NofslOutput> {
    opt.validate()?;
    check_datasets(datasets)?;
    let identity = model.identity_v();
    let mut w = model.init_w(&mut seeded(seed));
    let mut o = Optimizer::new(opt, w.len());
    let n = datasets.len() as f64;
    let mut trace = Vec::with_capacity(steps);
    for it in 1..=steps {
        let mut gw = w.zeros_like();
        let mut mean_loss = 0.0;
        for d in datasets {
            let (l, gwi, _) = model.grad(&w, &identity, d, loss)?;
            mean_loss += l / d.len() as f64 / n;
            gw.axpy(1.0 / n, &gwi);
        }
        o.step(w.as_mut_slice(), gw.as_slice());
        trace.push(TraceRow {
            iteration: it,
            mean_loss,
            consensus_residual: 0.0,
            raw_grad_norm: gw.norm(),
            scaled_grad_norm: gw.norm(),
        });
        if !mean_loss.is_finite() || mean_loss > opt.divergence_limit || !w.is_finite() {
            return Err(diverged(it, trace));
        }
    }
    Ok(NofslOutput { w, trace })
}

/// Final loss of a joint run on the common objective, for optimizer comparisons.
pub fn joint_objective(
    model: &BaseModel,
    out: &JointOutput,
    datasets: &[&[Sample]],
    loss: LossKind,
) -> Result<f64> {
    mean_objective(model, &out.w, &out.vs, datasets, loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec, Network};
    use rand::Rng;

    fn linear_problem() -> (BaseModel, Vec<Vec<Sample>>) {
        let trunk = Network::new(vec![LayerSpec::dense(2, 1, Activation::Identity)]).unwrap();
        let model = BaseModel::new(trunk, &[]).unwrap();
        let mut rng = seeded(11);
        let sets = (0..2)
            .map(|_| {
                (0..12)
                    .map(|_| {
                        let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                        let y = vec![
                            0.7 * x[0] - 1.3 * x[1] + 0.2 + 0.05 * rng.random_range(-1.0..1.0),
                        ];
                        Sample { x, y }
                    })
                    .collect()
            })
            .collect();
        (model, sets)
    }

    /// Least-squares solution of the pooled normal equations for `[a, b, c]` in `a x0 + b x1 + c`.
    fn normal_equations(sets: &[Vec<Sample>]) -> [f64; 3] {
        let mut m = [[0.0; 4]; 3];
        for s in sets.iter().flatten() {
            let f = [s.x[0], s.x[1], 1.0];
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += f[i] * f[j];
                }
                m[i][3] += f[i] * s.y[0];
            }
        }
        for c in 0..3 {
            let p = (c..3)
                .max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))
                .unwrap();
            m.swap(c, p);
            for r in 0..3 {
                if r != c {
                    let f = m[r][c] / m[c][c];
                    for k in c..4 {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
        [m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]]
    }

    #[test]
    fn sgd_reaches_the_least_squares_optimum() {
        let (model, sets) = linear_problem();
        let refs: Vec<&[Sample]> = sets.iter().map(Vec::as_slice).collect();
        let out = train_joint(
            &model,
            &refs,
            LossKind::MeanSquaredError,
            &OptimizerConfig::sgd(0.05),
            3000,
            1,
        )
        .unwrap();
        let exact = normal_equations(&sets);
        for (a, b) in out.w.as_slice().iter().zip(exact) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_learning_rate_freezes_everything() {
        let (model, sets) = linear_problem();
        let refs: Vec<&[Sample]> = sets.iter().map(Vec::as_slice).collect();
        for cfg in [OptimizerConfig::sgd(0.0), OptimizerConfig::rmsprop(0.0)] {
            let out = train_joint(&model, &refs, LossKind::MeanSquaredError, &cfg, 5, 3).unwrap();
            assert_eq!(out.w, model.init_w(&mut seeded(3)));
        }
    }

    #[test]
    fn rmsprop_constant_gradient_step_tends_to_lr() {
        let cfg = OptimizerConfig::rmsprop(0.1);
        let mut o = Optimizer::new(&cfg, 1);
        let mut p = [0.0];
        let mut last = 0.0;
        for _ in 0..400 {
            let before = p[0];
            o.step(&mut p, &[2.5]);
            last = before - p[0];
        }
        assert!((last - 0.1 * 2.5 / (2.5 + 1e-8)).abs() < 1e-9);
    }

    #[test]
    fn rmsprop_with_unit_history_and_slow_decay_is_sgd() {
        let cfg = OptimizerConfig {
            decay: 1.0 - 1e-12,
            eps: 0.0,
            initial_r: 1.0,
            ..OptimizerConfig::rmsprop(0.3)
        };
        let mut rms = Optimizer::new(&cfg, 3);
        let mut sgd = Optimizer::new(&OptimizerConfig::sgd(0.3), 3);
        let g = [0.4, -1.1, 2.0];
        let (mut a, mut b) = ([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]);
        rms.step(&mut a, &g);
        sgd.step(&mut b, &g);
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    fn adapted_problem() -> (BaseModel, Vec<Sample>, ParamVector) {
        let trunk = Network::new(vec![
            LayerSpec::dense(3, 5, Activation::Tanh),
            LayerSpec::dense(5, 1, Activation::Identity),
        ])
        .unwrap();
        let model = BaseModel::new(trunk, &[0]).unwrap();
        let mut rng = seeded(4);
        let w = model.init_w(&mut rng);
        let data = (0..10)
            .map(|_| {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                Sample {
                    y: vec![x[0] * x[1]],
                    x,
                }
            })
            .collect();
        (model, data, w)
    }

    #[test]
    fn finetuning_touches_only_the_adapters() {
        let (model, data, w) = adapted_problem();
        let before = w.fingerprint();
        let v0 = model.identity_v();
        let out = tl_finetune(
            &model,
            &w,
            &v0,
            &data,
            LossKind::MeanSquaredError,
            &OptimizerConfig::sgd(0.05),
            50,
        )
        .unwrap();
        assert_eq!(w.fingerprint(), before);
        assert_ne!(out.v, v0);
        assert!(out.trace.last().unwrap().mean_loss < out.trace[0].mean_loss);
        let none = tl_finetune(
            &model,
            &w,
            &v0,
            &data,
            LossKind::MeanSquaredError,
            &OptimizerConfig::sgd(0.05),
            0,
        )
        .unwrap();
        assert_eq!(none.v, v0);
    }

    #[test]
    fn mismatch_on_its_own_data_is_the_training_loss() {
        let (model, data, w) = adapted_problem();
        let v = model.identity_v();
        let direct = model
            .loss(&w, &v, &data, LossKind::MeanSquaredError)
            .unwrap();
        let via = mismatch_eval(&model, &w, &v, &data, |p, s| {
            p.iter()
                .zip(s)
                .map(|(p, s)| LossKind::MeanSquaredError.value(p, &s.y).unwrap())
                .sum::<f64>()
        })
        .unwrap();
        assert_eq!(direct, via);
    }

    #[test]
    fn generalist_is_deterministic_and_learns() {
        let (model, sets) = linear_problem();
        let refs: Vec<&[Sample]> = sets.iter().map(Vec::as_slice).collect();
        let cfg = OptimizerConfig::sgd(0.05);
        let a = nofsl_train(&model, &refs, LossKind::MeanSquaredError, &cfg, 200, 9).unwrap();
        let b = nofsl_train(&model, &refs, LossKind::MeanSquaredError, &cfg, 200, 9).unwrap();
        assert_eq!(a.w, b.w);
        assert!(a.trace.last().unwrap().mean_loss < a.trace[0].mean_loss);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(OptimizerConfig {
            decay: 1.0,
            ..OptimizerConfig::rmsprop(0.1)
        }
        .validate()
        .is_err());
        assert!(OptimizerConfig::sgd(f64::NAN).validate().is_err());
        assert!(OptimizerConfig::sgd(-1.0).validate().is_err());
    }
}
