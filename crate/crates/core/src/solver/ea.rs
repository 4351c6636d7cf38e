//! Effective adaptation.
//!
//! Phase one trains shared weights `w` and per-environment adapters `v_i` by
//! consensus inexact ADMM: every environment keeps a local copy `w_i` tied to
//! the global `w` through a multiplier `pi_i`, and each subproblem is replaced
//! by one linearized proximal step. An optional second-moment variant scales
//! the `w` updates elementwise by `1 / (sqrt(r) + eps)`.
//!
//! Phase two fits the hypernetwork weights `u` (split into local copies `u_i`
//! with multipliers `z_i`) jointly with the new environment's adapters `v_n`.

use serde::{Deserialize, Serialize};

use crate::adapters::{BaseModel, HyperNet};
use crate::error::{Error, Result};
use crate::nn::{LossKind, ParamVector, Sample};
use crate::rng::seeded;
use crate::trace::TraceRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Phase1Config {
    pub sigma: f64,
    pub rho: f64,
    pub iterations: usize,
    /// Stop early once `max_i ||w_i - w||` falls below this; zero disables.
    pub consensus_tol: f64,
    pub second_moment: bool,
    /// Attenuation of the squared-gradient average.
    pub decay: f64,
    pub eps: f64,
    /// Upper bound on the elementwise scale `1 / (sqrt(r) + eps)`. The
    /// multiplier recursion `pi' = pi (1 - sigma d / (rho + sigma)) - ...`
    /// diverges once `d > 2 (rho + sigma) / sigma`; infinity keeps the raw scale.
    pub scale_cap: f64,
    /// Mean per-sample loss above which the run is declared diverged.
    pub divergence_limit: f64,
}

impl Default for Phase1Config {
    fn default() -> Self {
        Self {
            sigma: 25.0,
            rho: 25.0,
            iterations: 2000,
            consensus_tol: 0.0,
            second_moment: false,
            decay: 0.9,
            eps: 1e-8,
            scale_cap: 2.0,
            divergence_limit: 1e6,
        }
    }
}

impl Phase1Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.rho > 0.0) {
            return Err(Error::config("sigma and rho must be positive"));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::config("second-moment decay must lie in (0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("second-moment eps must be positive"));
        }
        if !(self.scale_cap > 0.0) {
            return Err(Error::config("second-moment scale cap must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Phase2Config {
    pub eta: f64,
    pub gamma: f64,
    pub mu: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub divergence_limit: f64,
}

impl Default for Phase2Config {
    fn default() -> Self {
        Self {
            eta: 50.0,
            gamma: 50.0,
            mu: 50.0,
            lambda: 1.0,
            iterations: 300,
            divergence_limit: 1e6,
        }
    }
}

impl Phase2Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.gamma > 0.0 && self.mu > 0.0) {
            return Err(Error::config("eta, gamma and mu must be positive"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::config("lambda must be positive"));
        }
        Ok(())
    }
}

/// Iterate of phase one.
#[derive(Debug, Clone, PartialEq)]
pub struct EaPhase1State {
    pub w: ParamVector,
    pub ws: Vec<ParamVector>,
    pub vs: Vec<ParamVector>,
    pub pis: Vec<ParamVector>,
    pub sigma: f64,
    pub rho: f64,
    /// Running average of the squared global gradient, zero at start.
    pub r: Vec<f64>,
    pub decay: f64,
    pub eps: f64,
    pub scale_cap: f64,
    pub iteration: usize,
}

impl EaPhase1State {
    /// Replicated random `w`, identity adapters, zero multipliers.
    pub fn init(model: &BaseModel, n: usize, cfg: &Phase1Config, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::usage("phase one needs at least one environment"));
        }
        cfg.validate()?;
        let w = model.init_w(&mut seeded(seed));
        let v = model.identity_v();
        Ok(Self {
            ws: vec![w.clone(); n],
            vs: vec![v; n],
            pis: vec![w.zeros_like(); n],
            r: vec![0.0; w.len()],
            w,
            sigma: cfg.sigma,
            rho: cfg.rho,
            decay: cfg.decay,
            eps: cfg.eps,
            scale_cap: cfg.scale_cap,
            iteration: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.ws.len()
    }

    /// `max_i ||w_i - w||`.
    pub fn consensus_residual(&self) -> f64 {
        self.ws
            .iter()
            .map(|wi| wi.distance(&self.w))
            .fold(0.0, f64::max)
    }
}

/// `(1/n) sum_i (x_i + scale * m_i / penalty)`, the exact minimizer of the
/// augmented Lagrangian in the global variable. `scale = None` means ones.
pub fn consensus_average(
    locals: &[ParamVector],
    multipliers: &[ParamVector],
    penalty: f64,
    scale: Option<&[f64]>,
) -> Result<ParamVector> {
    let first = locals
        .first()
        .ok_or_else(|| Error::usage("average over zero local copies"))?;
    if locals.len() != multipliers.len() {
        return Err(Error::config("one multiplier per local copy required"));
    }
    let n = locals.len() as f64;
    let mut acc = vec![0.0; first.len()];
    for (x, m) in locals.iter().zip(multipliers) {
        for (j, a) in acc.iter_mut().enumerate() {
            let d = scale.map_or(1.0, |s| s[j]);
            *a += x.as_slice()[j] + m.as_slice()[j] * d / penalty;
        }
    }
    for a in &mut acc {
        *a /= n;
    }
    Ok(first.with_values(acc))
}

pub fn ea1_global_w(state: &EaPhase1State) -> Result<ParamVector> {
    consensus_average(&state.ws, &state.pis, state.sigma, None)
}

/// Closed-form minimizer of the linearized local subproblem:
/// `w_i' = w - scale * (zeta + pi) / (rho + sigma)`, `v_i' = v - xi / rho`.
#[allow(clippy::too_many_arguments)]
pub fn ea1_local_update(
    w_next: &ParamVector,
    v: &ParamVector,
    pi: &ParamVector,
    zeta: &ParamVector,
    xi: &ParamVector,
    rho: f64,
    sigma: f64,
    scale: Option<&[f64]>,
) -> (ParamVector, ParamVector) {
    let wi: Vec<f64> = (0..w_next.len())
        .map(|j| {
            let d = scale.map_or(1.0, |s| s[j]);
            w_next.as_slice()[j] - (zeta.as_slice()[j] + pi.as_slice()[j]) * d / (rho + sigma)
        })
        .collect();
    let vi: Vec<f64> = v
        .as_slice()
        .iter()
        .zip(xi.as_slice())
        .map(|(a, g)| a - g / rho)
        .collect();
    (w_next.with_values(wi), v.with_values(vi))
}

/// `pi' = pi + penalty * (x_i - x)`.
pub fn multiplier_update(
    pi: &ParamVector,
    local: &ParamVector,
    global: &ParamVector,
    penalty: f64,
) -> ParamVector {
    let out: Vec<f64> = pi
        .as_slice()
        .iter()
        .zip(local.as_slice().iter().zip(global.as_slice()))
        .map(|(p, (a, b))| p + penalty * (a - b))
        .collect();
    pi.with_values(out)
}

pub fn ea1_multiplier(state: &EaPhase1State, i: usize) -> ParamVector {
    multiplier_update(&state.pis[i], &state.ws[i], &state.w, state.sigma)
}

/// Scaled subgradients `(1/n) grad f_i` at `(w_next, v_i)` plus the raw loss
/// and the raw gradient norm.
pub struct LocalGradient {
    pub loss: f64,
    pub zeta: ParamVector,
    pub xi: ParamVector,
    pub raw_norm_sq: f64,
}

pub fn ea1_local_gradient(
    model: &BaseModel,
    w_next: &ParamVector,
    v: &ParamVector,
    batch: &[Sample],
    loss: LossKind,
    n: usize,
) -> Result<LocalGradient> {
    let (value, mut gw, mut gv) = model.grad(w_next, v, batch, loss)?;
    let raw_norm_sq = gw.norm_sq() + gv.norm_sq();
    if !raw_norm_sq.is_finite() {
        return Err(Error::Numeric {
            layer: model.trunk().layers().len() - 1,
            detail: "non-finite gradient".into(),
        });
    }
    gw.scale(1.0 / n as f64);
    gv.scale(1.0 / n as f64);
    Ok(LocalGradient {
        loss: value,
        zeta: gw,
        xi: gv,
        raw_norm_sq,
    })
}

/// Local step for environment `i`: gradient at `(w_next, v_i)` then the closed form.
pub fn ea1_local(
    model: &BaseModel,
    state: &EaPhase1State,
    i: usize,
    w_next: &ParamVector,
    batch: &[Sample],
    loss: LossKind,
) -> Result<(ParamVector, ParamVector)> {
    let g = ea1_local_gradient(model, w_next, &state.vs[i], batch, loss, state.n())?;
    Ok(ea1_local_update(
        w_next,
        &state.vs[i],
        &state.pis[i],
        &g.zeta,
        &g.xi,
        state.rho,
        state.sigma,
        None,
    ))
}

fn check_datasets(state: &EaPhase1State, datasets: &[&[Sample]]) -> Result<()> {
    if datasets.len() != state.n() {
        return Err(Error::config(format!(
            "{} datasets for {} environments",
            datasets.len(),
            state.n()
        )));
    }
    if datasets.iter().any(|d| d.is_empty()) {
        return Err(Error::usage("every environment needs at least one sample"));
    }
    Ok(())
}

/// One iteration: global average, local steps, multiplier steps.
/// `scale` is the elementwise second-moment factor (ones when `None`).
pub fn ea1_iterate(
    model: &BaseModel,
    state: &mut EaPhase1State,
    datasets: &[&[Sample]],
    loss: LossKind,
    scale: Option<&[f64]>,
) -> Result<TraceRow> {
    check_datasets(state, datasets)?;
    let n = state.n();
    let w_next = consensus_average(&state.ws, &state.pis, state.sigma, scale)?;
    let mut mean_loss = 0.0;
    let mut raw = 0.0;
    for i in 0..n {
        let g = ea1_local_gradient(model, &w_next, &state.vs[i], datasets[i], loss, n)?;
        mean_loss += g.loss / datasets[i].len() as f64 / n as f64;
        raw += g.raw_norm_sq;
        let (wi, vi) = ea1_local_update(
            &w_next,
            &state.vs[i],
            &state.pis[i],
            &g.zeta,
            &g.xi,
            state.rho,
            state.sigma,
            scale,
        );
        state.pis[i] = multiplier_update(&state.pis[i], &wi, &w_next, state.sigma);
        state.ws[i] = wi;
        state.vs[i] = vi;
    }
    state.w = w_next;
    state.iteration += 1;
    Ok(TraceRow {
        iteration: state.iteration,
        mean_loss,
        consensus_residual: state.consensus_residual(),
        raw_grad_norm: raw.sqrt(),
        scaled_grad_norm: raw.sqrt() / n as f64,
    })
}

/// `r' = decay * r + (1 - decay) * g * g`.
pub fn second_moment_update(r: &mut [f64], g: &[f64], decay: f64) {
    for (ri, gi) in r.iter_mut().zip(g) {
        *ri = decay * *ri + (1.0 - decay) * gi * gi;
    }
}

/// `min(1 / (sqrt(r) + eps), cap)`.
pub fn second_moment_scale(r: &[f64], eps: f64, cap: f64) -> Vec<f64> {
    r.iter()
        .map(|ri| (1.0 / (ri.sqrt() + eps)).min(cap))
        .collect()
}

/// Second-moment iteration: refresh `r` with the mean gradient at the current
/// iterate `(w, v_i)`, then a scaled iteration.
pub fn ea1_second_moment_step(
    model: &BaseModel,
    state: &mut EaPhase1State,
    datasets: &[&[Sample]],
    loss: LossKind,
) -> Result<TraceRow> {
    check_datasets(state, datasets)?;
    let n = state.n() as f64;
    let mut g = vec![0.0; state.w.len()];
    for (v, data) in state.vs.iter().zip(datasets) {
        let (_, gw, _) = model.grad(&state.w, v, data, loss)?;
        for (a, b) in g.iter_mut().zip(gw.as_slice()) {
            *a += b / n;
        }
    }
    second_moment_update(&mut state.r, &g, state.decay);
    let scale = second_moment_scale(&state.r, state.eps, state.scale_cap);
    ea1_iterate(model, state, datasets, loss, Some(&scale))
}

#[derive(Debug, Clone)]
pub struct Phase1Output {
    pub w: ParamVector,
    pub vs: Vec<ParamVector>,
    pub trace: Vec<TraceRow>,
}

/// Run phase one from the default initialization.
pub fn ea1_run(
    model: &BaseModel,
    datasets: &[&[Sample]],
    loss: LossKind,
    cfg: &Phase1Config,
    seed: u64,
) -> Result<Phase1Output> {
    let mut state = EaPhase1State::init(model, datasets.len(), cfg, seed)?;
    ea1_run_from(model, &mut state, datasets, loss, cfg)
}

pub fn ea1_run_from(
    model: &BaseModel,
    state: &mut EaPhase1State,
    datasets: &[&[Sample]],
    loss: LossKind,
    cfg: &Phase1Config,
) -> Result<Phase1Output> {
    cfg.validate()?;
    let mut trace = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let step = if cfg.second_moment {
            ea1_second_moment_step(model, state, datasets, loss)
        } else {
            ea1_iterate(model, state, datasets, loss, None)
        };
        let row = match step {
            Ok(row) => row,
            Err(Error::Numeric { detail, .. }) => {
                return Err(Error::Diverged {
                    iteration: state.iteration + 1,
                    reason: detail,
                    trace,
                })
            }
            Err(e) => return Err(e),
        };
        let bad = !row.mean_loss.is_finite() || row.mean_loss > cfg.divergence_limit;
        let stop = row.consensus_residual < cfg.consensus_tol;
        trace.push(row);
        if bad {
            return Err(Error::Diverged {
                iteration: state.iteration,
                reason: "training loss blew up".into(),
                trace,
            });
        }
        if stop {
            break;
        }
    }
    Ok(Phase1Output {
        w: state.w.clone(),
        vs: state.vs.clone(),
        trace,
    })
}

/// Mean over environments of the per-sample loss at `(w, v_i)`.
pub fn mean_objective(
    model: &BaseModel,
    w: &ParamVector,
    vs: &[ParamVector],
    datasets: &[&[Sample]],
    loss: LossKind,
) -> Result<f64> {
    if vs.len() != datasets.len() || vs.is_empty() {
        return Err(Error::config("one adapter vector per dataset required"));
    }
    let mut total = 0.0;
    for (v, d) in vs.iter().zip(datasets) {
        total += model.loss(w, v, d, loss)? / d.len() as f64;
    }
    Ok(total / vs.len() as f64)
}

/// Iterate of phase two.
#[derive(Debug, Clone, PartialEq)]
pub struct EaPhase2State {
    pub u: ParamVector,
    pub us: Vec<ParamVector>,
    pub zs: Vec<ParamVector>,
    pub v_n: ParamVector,
    pub iteration: usize,
}

impl EaPhase2State {
    /// Replicated random `u`, zero multipliers, `v_n` at the mean of the
    /// phase-one adapters.
    pub fn init(hyper: &HyperNet, v_star: &[ParamVector], seed: u64) -> Result<Self> {
        let v_n = ParamVector::mean(v_star)?;
        let u = hyper.init_u(&mut seeded(seed));
        Ok(Self {
            us: vec![u.clone(); v_star.len()],
            zs: vec![u.zeros_like(); v_star.len()],
            u,
            v_n,
            iteration: 0,
        })
    }

    pub fn consensus_residual(&self) -> f64 {
        self.us
            .iter()
            .map(|ui| ui.distance(&self.u))
            .fold(0.0, f64::max)
    }
}

/// `v_n' = v_n - xi / eta`.
pub fn ea2_v_step(v_n: &ParamVector, xi: &ParamVector, eta: f64) -> ParamVector {
    let out = v_n
        .as_slice()
        .iter()
        .zip(xi.as_slice())
        .map(|(v, g)| v - g / eta)
        .collect();
    v_n.with_values(out)
}

/// `u_i' = u - (zeta + z) / (gamma + mu)`.
pub fn ea2_u_local(
    u: &ParamVector,
    zeta: &ParamVector,
    z: &ParamVector,
    gamma: f64,
    mu: f64,
) -> ParamVector {
    let out = u
        .as_slice()
        .iter()
        .zip(zeta.as_slice().iter().zip(z.as_slice()))
        .map(|(x, (g, m))| x - (g + m) / (gamma + mu))
        .collect();
    u.with_values(out)
}

/// Frozen inputs of phase two.
pub struct Phase2Problem<'a> {
    pub model: &'a BaseModel,
    pub hyper: &'a HyperNet,
    pub datasets: &'a [&'a [Sample]],
    pub few_shot: &'a [Sample],
    pub w_star: &'a ParamVector,
    pub v_star: &'a [ParamVector],
    pub loss: LossKind,
}

impl Phase2Problem<'_> {
    fn check(&self, state: &EaPhase2State) -> Result<()> {
        let n = self.datasets.len();
        if n == 0 || self.v_star.len() != n || state.us.len() != n || state.zs.len() != n {
            return Err(Error::config(
                "phase two needs one dataset, adapter and local copy per environment",
            ));
        }
        if self.few_shot.is_empty() {
            return Err(Error::usage("phase two needs at least one few-shot sample"));
        }
        Ok(())
    }

    /// Objective of the adaptation problem at `(u, v_n)`.
    pub fn objective(&self, u: &ParamVector, v_n: &ParamVector, lambda: f64) -> Result<f64> {
        let n = self.datasets.len() as f64;
        let mut total = 0.0;
        for (d, v) in self.datasets.iter().zip(self.v_star) {
            total += self.hyper.regression_loss(u, d, v)? / n;
        }
        total += self.hyper.regression_loss(u, self.few_shot, v_n)?;
        total += lambda
            * self
                .model
                .loss(self.w_star, v_n, self.few_shot, self.loss)?;
        Ok(total)
    }
}

/// One full phase-two iteration.
pub fn ea2_updates(
    problem: &Phase2Problem,
    state: &mut EaPhase2State,
    cfg: &Phase2Config,
) -> Result<TraceRow> {
    problem.check(state)?;
    let n = problem.datasets.len();
    let inv_n = 1.0 / n as f64;
    let u = consensus_average(&state.us, &state.zs, cfg.mu, None)?;

    // xi_n = sum_i grad_v h_i = grad_v f_n^varphi(u, v_n) + lambda grad_v f_n^phi(w*, v_n)
    let (_, _, gv_hyper) = problem
        .hyper
        .regression_grad(&u, problem.few_shot, &state.v_n)?;
    let (_, _, gv_task) =
        problem
            .model
            .grad(problem.w_star, &state.v_n, problem.few_shot, problem.loss)?;
    let mut xi = gv_hyper;
    xi.axpy(cfg.lambda, &gv_task);
    let v_next = ea2_v_step(&state.v_n, &xi, cfg.eta);

    // the new-environment part of zeta_i is shared by every i
    let (fn_hyper, gu_new, _) = problem
        .hyper
        .regression_grad(&u, problem.few_shot, &v_next)?;
    let mut raw = 0.0;
    let mut objective = fn_hyper
        + cfg.lambda
            * problem
                .model
                .loss(problem.w_star, &v_next, problem.few_shot, problem.loss)?;
    for i in 0..n {
        let (fi, mut zeta, _) =
            problem
                .hyper
                .regression_grad(&u, problem.datasets[i], &problem.v_star[i])?;
        objective += fi * inv_n;
        zeta.axpy(1.0, &gu_new);
        raw += zeta.norm_sq();
        zeta.scale(inv_n);
        let ui = ea2_u_local(&u, &zeta, &state.zs[i], cfg.gamma, cfg.mu);
        state.zs[i] = multiplier_update(&state.zs[i], &ui, &u, cfg.mu);
        state.us[i] = ui;
    }
    if !raw.is_finite() || !xi.is_finite() {
        return Err(Error::Numeric {
            layer: 0,
            detail: "non-finite hypernetwork gradient".into(),
        });
    }
    state.u = u;
    state.v_n = v_next;
    state.iteration += 1;
    Ok(TraceRow {
        iteration: state.iteration,
        mean_loss: objective,
        consensus_residual: state.consensus_residual(),
        raw_grad_norm: raw.sqrt(),
        scaled_grad_norm: raw.sqrt() * inv_n,
    })
}

#[derive(Debug, Clone)]
pub struct Phase2Output {
    pub u: ParamVector,
    pub v_n: ParamVector,
    pub trace: Vec<TraceRow>,
}

pub fn ea2_run(problem: &Phase2Problem, cfg: &Phase2Config, seed: u64) -> Result<Phase2Output> {
    cfg.validate()?;
    let mut state = EaPhase2State::init(problem.hyper, problem.v_star, seed)?;
    let mut trace = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let row = match ea2_updates(problem, &mut state, cfg) {
            Ok(row) => row,
            Err(Error::Numeric { detail, .. }) => {
                return Err(Error::Diverged {
                    iteration: state.iteration + 1,
                    reason: detail,
                    trace,
                })
            }
            Err(e) => return Err(e),
        };
        let bad = !row.mean_loss.is_finite() || row.mean_loss > cfg.divergence_limit;
        trace.push(row);
        if bad {
            return Err(Error::Diverged {
                iteration: state.iteration,
                reason: "adaptation objective blew up".into(),
                trace,
            });
        }
    }
    Ok(Phase2Output {
        u: state.u,
        v_n: state.v_n,
        trace,
    })
}

/// Response of the adapted receiver: the base model under `(w*, v_n*)`.
pub fn ea_predict(
    model: &BaseModel,
    w_star: &ParamVector,
    v_n: &ParamVector,
    x: &[f64],
) -> Result<Vec<f64>> {
    model.base_forward(w_star, v_n, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec, Network};
    use crate::rng::seeded;
    use rand::Rng;

    fn pv(values: &[f64]) -> ParamVector {
        use crate::nn::{Role, Segment};
        ParamVector::new(
            values.to_vec(),
            vec![Segment::new(0, Role::Weight, vec![values.len()])],
        )
        .unwrap()
    }

    fn toy_model() -> BaseModel {
        let trunk = Network::new(vec![
            LayerSpec::dense(3, 4, Activation::Tanh),
            LayerSpec::dense(4, 2, Activation::Sigmoid),
        ])
        .unwrap();
        BaseModel::new(trunk, &[0]).unwrap()
    }

    fn toy_data(seed: u64, count: usize) -> Vec<Sample> {
        let mut rng = seeded(seed);
        (0..count)
            .map(|_| {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y = vec![(x[0] > 0.0) as u8 as f64, (x[1] + x[2] > 0.0) as u8 as f64];
                Sample { x, y }
            })
            .collect()
    }

    #[test]
    fn global_average_cases() {
        let ws = [pv(&[1.0, 1.0]), pv(&[3.0, 3.0])];
        let pis = [pv(&[0.0, 0.0]), pv(&[0.0, 0.0])];
        assert_eq!(
            consensus_average(&ws, &pis, 25.0, None).unwrap().as_slice(),
            &[2.0, 2.0]
        );
        let w = consensus_average(&[pv(&[1.0])], &[pv(&[25.0])], 25.0, None).unwrap();
        assert_eq!(w.as_slice(), &[2.0]);
    }

    #[test]
    fn local_update_cases() {
        let zero = pv(&[0.0]);
        let (wi, vi) = ea1_local_update(
            &pv(&[0.7]),
            &pv(&[0.3]),
            &zero,
            &zero,
            &zero,
            25.0,
            25.0,
            None,
        );
        assert_eq!((wi.as_slice(), vi.as_slice()), (&[0.7][..], &[0.3][..]));
        let (wi, _) = ea1_local_update(&zero, &zero, &zero, &pv(&[2.0]), &zero, 1.0, 1.0, None);
        assert_eq!(wi.as_slice(), &[-1.0]);
    }

    #[test]
    fn multiplier_cases() {
        let pi = pv(&[0.5]);
        assert_eq!(
            multiplier_update(&pi, &pv(&[1.0]), &pv(&[1.0]), 25.0).as_slice(),
            &[0.5]
        );
        let p = multiplier_update(&pv(&[0.0]), &pv(&[0.1]), &pv(&[0.0]), 25.0);
        assert!((p.as_slice()[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn second_moment_cases() {
        let mut r = vec![0.0];
        second_moment_update(&mut r, &[1.0], 0.9);
        assert!((r[0] - 0.1).abs() < 1e-15);
        let mut r = vec![2.0, 4.0];
        for k in 1..=5 {
            second_moment_update(&mut r, &[0.0, 0.0], 0.9);
            assert!((r[0] - 2.0 * 0.9f64.powi(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn second_moment_step_matches_hand_recursion() {
        let model = toy_model();
        let data: Vec<Vec<Sample>> = (0..3).map(|s| toy_data(10 + s, 8)).collect();
        let refs: Vec<&[Sample]> = data.iter().map(Vec::as_slice).collect();
        let cfg = Phase1Config {
            second_moment: true,
            scale_cap: 5.0,
            ..Phase1Config::default()
        };
        let mut a = EaPhase1State::init(&model, 3, &cfg, 2).unwrap();
        for _ in 0..4 {
            let mut b = a.clone();
            let mut g = vec![0.0; b.w.len()];
            for (v, d) in b.vs.iter().zip(&refs) {
                let (_, gw, _) = model
                    .grad(&b.w, v, d, LossKind::BinaryCrossEntropy)
                    .unwrap();
                for (x, y) in g.iter_mut().zip(gw.as_slice()) {
                    *x += y / 3.0;
                }
            }
            let r: Vec<f64> =
                b.r.iter()
                    .zip(&g)
                    .map(|(r, g)| 0.9 * r + 0.1 * g * g)
                    .collect();
            let scale: Vec<f64> = r
                .iter()
                .map(|r| (1.0 / (r.sqrt() + 1e-8)).min(5.0))
                .collect();
            b.r = r;
            ea1_iterate(
                &model,
                &mut b,
                &refs,
                LossKind::BinaryCrossEntropy,
                Some(&scale),
            )
            .unwrap();
            ea1_second_moment_step(&model, &mut a, &refs, LossKind::BinaryCrossEntropy).unwrap();
            for (x, y) in a.w.as_slice().iter().zip(b.w.as_slice()) {
                assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in a.r.iter().zip(&b.r) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn unit_scale_reproduces_plain_iteration_bitwise() {
        let model = toy_model();
        let data: Vec<Vec<Sample>> = (0..3).map(|s| toy_data(s, 8)).collect();
        let refs: Vec<&[Sample]> = data.iter().map(Vec::as_slice).collect();
        let cfg = Phase1Config::default();
        let mut a = EaPhase1State::init(&model, 3, &cfg, 4).unwrap();
        let mut b = a.clone();
        let ones = vec![1.0; a.w.len()];
        for _ in 0..5 {
            ea1_iterate(&model, &mut a, &refs, LossKind::BinaryCrossEntropy, None).unwrap();
            ea1_iterate(
                &model,
                &mut b,
                &refs,
                LossKind::BinaryCrossEntropy,
                Some(&ones),
            )
            .unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn phase_one_is_deterministic_and_descends() {
        let model = toy_model();
        let data: Vec<Vec<Sample>> = (0..2).map(|s| toy_data(s, 16)).collect();
        let refs: Vec<&[Sample]> = data.iter().map(Vec::as_slice).collect();
        let cfg = Phase1Config {
            iterations: 200,
            ..Default::default()
        };
        let a = ea1_run(&model, &refs, LossKind::BinaryCrossEntropy, &cfg, 1).unwrap();
        let b = ea1_run(&model, &refs, LossKind::BinaryCrossEntropy, &cfg, 1).unwrap();
        assert_eq!(a.trace, b.trace);
        assert!(a.trace.last().unwrap().mean_loss < a.trace[0].mean_loss);
    }

    #[test]
    fn blow_up_is_reported_with_trace() {
        let model = toy_model();
        let data = toy_data(0, 16);
        let refs = [data.as_slice()];
        let cfg = Phase1Config {
            iterations: 10,
            divergence_limit: 1e-9,
            ..Default::default()
        };
        match ea1_run(&model, &refs, LossKind::BinaryCrossEntropy, &cfg, 1) {
            Err(Error::Diverged {
                iteration, trace, ..
            }) => {
                assert_eq!(iteration, 1);
                assert_eq!(trace.len(), 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn phase_two_cases() {
        assert_eq!(
            ea2_v_step(&pv(&[1.0]), &pv(&[100.0]), 50.0).as_slice(),
            &[-1.0]
        );
        let u = pv(&[0.4, -0.2]);
        let zero = pv(&[0.0, 0.0]);
        assert_eq!(ea2_u_local(&u, &zero, &zero, 50.0, 50.0), u);
    }

    #[test]
    fn identity_adapters_predict_like_the_trunk() {
        let model = toy_model();
        let w = model.init_w(&mut seeded(2));
        let x = [0.1, -0.4, 0.9];
        let direct = model.trunk().forward(&w, &x).unwrap();
        assert_eq!(
            ea_predict(&model, &w, &model.identity_v(), &x).unwrap(),
            direct
        );
    }
}
