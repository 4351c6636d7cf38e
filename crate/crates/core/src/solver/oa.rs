//! Online adaptation.
//!
//! Offline, the hypernetwork weights `u*` are meta-trained (first-order MAML)
//! so that `varphi(u; x)` both reproduces each old environment's adapters and
//! keeps the task loss low when plugged into the frozen base model.
//!
//! Online, only the new environment's few-shot set is used: an inexact
//! alternating direction method minimizes
//!
//! ```text
//! F(u, v) = c1 f^varphi(u, v) + c3 ||u||^2 + f^phi(w*, v) + c2 ||u - u*||^2 + c4 ||v||^2
//! ```
//!
//! with one linearized proximal step in `u` followed by one in `v`. A monitor
//! rejects any step that fails to decrease `F` and doubles the proximal
//! constants before retrying.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adapters::{BaseModel, HyperNet};
use crate::error::{Error, Result};
use crate::nn::{LossKind, ParamVector, Sample};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfflineConfig {
    /// Weight of the task loss against the adapter regression.
    pub lambda: f64,
    pub episodes: usize,
    pub inner_lr: f64,
    pub outer_lr: f64,
    /// Samples drawn for each of the support and query splits.
    pub split_size: usize,
    pub divergence_limit: f64,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            episodes: 600,
            inner_lr: 0.05,
            outer_lr: 0.05,
            split_size: 16,
            divergence_limit: 1e6,
        }
    }
}

impl OfflineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::config("offline lambda must be nonnegative"));
        }
        if !(self.inner_lr >= 0.0 && self.outer_lr > 0.0) {
            return Err(Error::config("meta step sizes must be positive"));
        }
        if self.split_size == 0 {
            return Err(Error::config(
                "support/query split needs at least one sample",
            ));
        }
        Ok(())
    }
}

/// Iterate of the offline meta-training.
#[derive(Debug, Clone, PartialEq)]
pub struct OaOfflineState {
    pub u: ParamVector,
    pub lambda: f64,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub episode: usize,
}

/// Frozen inputs shared by the offline and online phases.
#[derive(Debug, Clone, Copy)]
pub struct OaContext<'a> {
    pub model: &'a BaseModel,
    pub hyper: &'a HyperNet,
    pub w_star: &'a ParamVector,
    pub loss: LossKind,
}

impl OaContext<'_> {
    /// `lambda * sum_t loss(phi(w*, varphi(u; x_t); x_t), y_t) + sum_t ||varphi(u; x_t) - v||^2`
    /// and its gradient in `u`.
    pub fn episode_objective(
        &self,
        u: &ParamVector,
        samples: &[Sample],
        v_target: &ParamVector,
        lambda: f64,
    ) -> Result<(f64, ParamVector)> {
        let mut hs = self.hyper.scratch();
        let mut bs = self.model.scratch();
        let mut gu = u.zeros_like();
        let mut gv = vec![0.0; self.model.v_len()];
        let mut total = 0.0;
        for s in samples {
            self.hyper.forward_into(u.as_slice(), &s.x, &mut hs)?;
            gv.fill(0.0);
            let task = if lambda > 0.0 {
                self.model.sample_grad_v(
                    self.w_star.as_slice(),
                    &hs.v,
                    s,
                    self.loss,
                    &mut bs,
                    &mut gv,
                )?
            } else {
                0.0
            };
            total += lambda * task;
            for ((d, (&out, &target)), g) in hs
                .d_v
                .iter_mut()
                .zip(hs.v.iter().zip(v_target.as_slice()))
                .zip(&gv)
            {
                let r = out - target;
                total += r * r;
                *d = lambda * g + 2.0 * r;
            }
            self.hyper
                .backward_from(u.as_slice(), &mut hs, gu.as_mut_slice())?;
        }
        Ok((total, gu))
    }

    /// Offline objective: `(1/n) sum_i [lambda * task_i + f_i^varphi(u, v_i*)]`.
    pub fn offline_objective(
        &self,
        u: &ParamVector,
        datasets: &[&[Sample]],
        v_star: &[ParamVector],
        lambda: f64,
    ) -> Result<f64> {
        if datasets.is_empty() || datasets.len() != v_star.len() {
            return Err(Error::config("one adapter target per dataset required"));
        }
        let mut total = 0.0;
        for (d, v) in datasets.iter().zip(v_star) {
            total += self.episode_objective(u, d, v, lambda)?.0;
        }
        Ok(total / datasets.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub environment: usize,
    /// Query objective per sample after the inner step.
    pub query_loss: f64,
}

#[derive(Debug, Clone)]
pub struct OfflineOutput {
    pub u: ParamVector,
    pub trace: Vec<EpisodeRow>,
}

/// First-order MAML: per episode sample an environment, adapt on a support
/// split, and apply the query-split gradient at the adapted point to `u`.
pub fn oa_offline_train(
    ctx: &OaContext,
    datasets: &[&[Sample]],
    v_star: &[ParamVector],
    cfg: &OfflineConfig,
    seed: u64,
) -> Result<OfflineOutput> {
    cfg.validate()?;
    if datasets.is_empty() || datasets.len() != v_star.len() {
        return Err(Error::config("one adapter target per dataset required"));
    }
    if datasets.iter().any(|d| d.is_empty()) {
        return Err(Error::usage("every environment needs at least one sample"));
    }
    let mut rng = seeded(seed);
    let mut state = OaOfflineState {
        u: ctx.hyper.init_u(&mut rng),
        lambda: cfg.lambda,
        inner_lr: cfg.inner_lr,
        outer_lr: cfg.outer_lr,
        episode: 0,
    };
    let mut trace = Vec::with_capacity(cfg.episodes);
    let mut order: Vec<Vec<usize>> = datasets.iter().map(|d| (0..d.len()).collect()).collect();
    for _ in 0..cfg.episodes {
        let i = rng.random_range(0..datasets.len());
        let row = oa_offline_episode(
            ctx,
            &mut state,
            datasets[i],
            &v_star[i],
            cfg.split_size,
            &mut order[i],
            &mut rng,
        )
        .map(|query_loss| EpisodeRow {
            episode: state.episode,
            environment: i,
            query_loss,
        });
        let row = match row {
            Ok(r) => r,
            Err(Error::Numeric { detail, .. }) => {
                return Err(Error::Diverged {
                    iteration: state.episode,
                    reason: detail,
                    trace: Vec::new(),
                })
            }
            Err(e) => return Err(e),
        };
        trace.push(row);
        if !row.query_loss.is_finite()
            || row.query_loss > cfg.divergence_limit
            || !state.u.is_finite()
        {
            return Err(Error::Diverged {
                iteration: state.episode,
                reason: "meta-training objective blew up".into(),
                trace: Vec::new(),
            });
        }
    }
    Ok(OfflineOutput { u: state.u, trace })
}

/// One episode; returns the per-sample query objective at the adapted point.
pub fn oa_offline_episode<R: Rng + ?Sized>(
    ctx: &OaContext,
    state: &mut OaOfflineState,
    data: &[Sample],
    v_target: &ParamVector,
    split_size: usize,
    order: &mut [usize],
    rng: &mut R,
) -> Result<f64> {
    order.shuffle(rng);
    let k = split_size.min(data.len().div_ceil(2)).max(1);
    let support: Vec<Sample> = order.iter().take(k).map(|&j| data[j].clone()).collect();
    let query: Vec<Sample> = if data.len() > k {
        order
            .iter()
            .skip(k)
            .take(k)
            .map(|&j| data[j].clone())
            .collect()
    } else {
        support.clone()
    };
    let (_, g_in) = ctx.episode_objective(&state.u, &support, v_target, state.lambda)?;
    let mut adapted = state.u.clone();
    adapted.axpy(-state.inner_lr / support.len() as f64, &g_in);
    let (q, g_out) = ctx.episode_objective(&adapted, &query, v_target, state.lambda)?;
    state.u.axpy(-state.outer_lr / query.len() as f64, &g_out);
    state.episode += 1;
    Ok(q / query.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IadmConfig {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    /// Initial (and minimum) proximal constant for `u`.
    pub tau0: f64,
    /// Initial (and minimum) proximal constant for `v`.
    pub kappa0: f64,
    pub max_iterations: usize,
    /// Stop once `||u' - u|| + ||v' - v||` falls below this.
    pub tol: f64,
    pub growth: f64,
    pub shrink: f64,
    pub shrink_after: usize,
    pub max_rejections: usize,
}

impl Default for IadmConfig {
    fn default() -> Self {
        Self {
            c1: 1.0,
            c2: 0.1,
            c3: 1e-4,
            c4: 1e-4,
            tau0: 1.0,
            kappa0: 1.0,
            max_iterations: 500,
            tol: 1e-4,
            growth: 2.0,
            shrink: 0.9,
            shrink_after: 10,
            max_rejections: 60,
        }
    }
}

impl IadmConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.c1, self.c2, self.c3, self.c4]
            .iter()
            .any(|c| !(*c > 0.0))
        {
            return Err(Error::config("penalty constants c1..c4 must be positive"));
        }
        if !(self.tau0 > 0.0 && self.kappa0 > 0.0) {
            return Err(Error::config("tau0 and kappa0 must be positive"));
        }
        if !(self.growth > 1.0) || !(self.shrink > 0.0 && self.shrink <= 1.0) {
            return Err(Error::config(
                "growth must exceed 1 and shrink lie in (0, 1]",
            ));
        }
        Ok(())
    }
}

/// Problem data of the online phase.
pub struct IadmProblem<'a> {
    pub ctx: OaContext<'a>,
    pub u_star: &'a ParamVector,
    pub few_shot: &'a [Sample],
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

/// Terms of `F` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FTerms {
    /// `f^varphi(u, v)`
    pub regression: f64,
    /// `f^phi(w*, v)`
    pub task: f64,
    pub u_norm_sq: f64,
    pub prior_dist_sq: f64,
    pub v_norm_sq: f64,
}

impl IadmProblem<'_> {
    pub fn new<'a>(
        ctx: OaContext<'a>,
        u_star: &'a ParamVector,
        few_shot: &'a [Sample],
        cfg: &IadmConfig,
    ) -> IadmProblem<'a> {
        IadmProblem {
            ctx,
            u_star,
            few_shot,
            c1: cfg.c1,
            c2: cfg.c2,
            c3: cfg.c3,
            c4: cfg.c4,
        }
    }

    pub fn terms(&self, u: &ParamVector, v: &ParamVector) -> Result<FTerms> {
        Ok(FTerms {
            regression: self.ctx.hyper.regression_loss(u, self.few_shot, v)?,
            task: self
                .ctx
                .model
                .loss(self.ctx.w_star, v, self.few_shot, self.ctx.loss)?,
            u_norm_sq: u.norm_sq(),
            prior_dist_sq: u.distance(self.u_star).powi(2),
            v_norm_sq: v.norm_sq(),
        })
    }

    pub fn combine(&self, t: &FTerms) -> f64 {
        self.g_of(t) + t.task + self.c2 * t.prior_dist_sq + self.c4 * t.v_norm_sq
    }

    fn g_of(&self, t: &FTerms) -> f64 {
        self.c1 * t.regression + self.c3 * t.u_norm_sq
    }

    /// `F(u, v)`.
    pub fn f_eval(&self, u: &ParamVector, v: &ParamVector) -> Result<f64> {
        Ok(self.combine(&self.terms(u, v)?))
    }

    /// `zeta = grad_u g(u, v) = c1 grad_u f^varphi + 2 c3 u`.
    pub fn zeta(&self, u: &ParamVector, v: &ParamVector) -> Result<ParamVector> {
        let (_, mut gu, _) = self.ctx.hyper.regression_grad(u, self.few_shot, v)?;
        gu.scale(self.c1);
        gu.axpy(2.0 * self.c3, u);
        Ok(gu)
    }

    /// `xi = grad_v f^phi(w*, v)`.
    pub fn xi(&self, v: &ParamVector) -> Result<ParamVector> {
        let (_, _, gv) = self
            .ctx
            .model
            .grad(self.ctx.w_star, v, self.few_shot, self.ctx.loss)?;
        Ok(gv)
    }
}

/// `argmin <zeta, u> + tau ||u - u_l||^2 + c2 ||u - u*||^2`.
pub fn iadm_u_step(
    u: &ParamVector,
    u_star: &ParamVector,
    zeta: &ParamVector,
    tau: f64,
    c2: f64,
) -> ParamVector {
    let out = (0..u.len())
        .map(|j| {
            (tau * u.as_slice()[j] + c2 * u_star.as_slice()[j] - 0.5 * zeta.as_slice()[j])
                / (tau + c2)
        })
        .collect();
    u.with_values(out)
}

/// `argmin c1 sum_t ||s_t - v||^2 + <xi, v> + kappa ||v - v_l||^2 + c4 ||v||^2`
/// given `varphi_sum = sum_t s_t` over `d_n` samples.
pub fn iadm_v_step(
    v: &ParamVector,
    varphi_sum: &ParamVector,
    xi: &ParamVector,
    c1: f64,
    c4: f64,
    kappa: f64,
    d_n: usize,
) -> ParamVector {
    let denom = c1 * d_n as f64 + c4 + kappa;
    let out = (0..v.len())
        .map(|j| {
            (c1 * varphi_sum.as_slice()[j] + kappa * v.as_slice()[j] - 0.5 * xi.as_slice()[j])
                / denom
        })
        .collect();
    v.with_values(out)
}

/// Descriptive quantities from the convergence analysis, estimated along the
/// trajectory. None of them drives the iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TheoryEstimates {
    /// `F` at the starting point; the level set `F <= f0` is the region the analysis works in.
    pub f0: f64,
    /// Radius bound for `||u - u*||^2` using the largest `||grad_u g||` seen.
    pub delta_u: f64,
    /// Radius bound for `||v||^2` using the largest `||grad_v f^phi||` seen.
    pub delta_v: f64,
    /// Largest observed Taylor remainder ratio of `g` in `u` (lower bound on the smoothness constant).
    pub tau_lower: f64,
    /// Same for `f^phi` in `v`.
    pub kappa_lower: f64,
}

/// Accept/reject bookkeeping for the proximal constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceMonitor {
    pub last_f: f64,
    pub tau: f64,
    pub kappa: f64,
    pub tau_floor: f64,
    pub kappa_floor: f64,
    pub growth: f64,
    pub shrink: f64,
    pub shrink_after: usize,
    pub max_rejections: usize,
    pub consecutive_rejections: usize,
    pub consecutive_accepts: usize,
    pub total_rejections: usize,
    pub theory: TheoryEstimates,
}

impl ConvergenceMonitor {
    pub fn new(f0: f64, cfg: &IadmConfig) -> Self {
        Self {
            last_f: f0,
            tau: cfg.tau0,
            kappa: cfg.kappa0,
            tau_floor: cfg.tau0,
            kappa_floor: cfg.kappa0,
            growth: cfg.growth,
            shrink: cfg.shrink,
            shrink_after: cfg.shrink_after,
            max_rejections: cfg.max_rejections,
            consecutive_rejections: 0,
            consecutive_accepts: 0,
            total_rejections: 0,
            theory: TheoryEstimates {
                f0,
                ..Default::default()
            },
        }
    }

    /// Strict decrease test. Updates the constants and the counters.
    pub fn judge(&mut self, f_new: f64) -> Result<bool> {
        if f_new < self.last_f {
            self.last_f = f_new;
            self.consecutive_rejections = 0;
            self.consecutive_accepts += 1;
            if self.consecutive_accepts >= self.shrink_after {
                self.consecutive_accepts = 0;
                self.tau = (self.tau * self.shrink).max(self.tau_floor);
                self.kappa = (self.kappa * self.shrink).max(self.kappa_floor);
            }
            Ok(true)
        } else {
            self.consecutive_accepts = 0;
            self.consecutive_rejections += 1;
            self.total_rejections += 1;
            if self.consecutive_rejections > self.max_rejections {
                return Err(Error::StepOverflow {
                    rejections: self.consecutive_rejections,
                });
            }
            self.tau *= self.growth;
            self.kappa *= self.growth;
            Ok(false)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IadmRow {
    pub iteration: usize,
    /// `F` at the proposed point.
    pub f: f64,
    pub tau: f64,
    pub kappa: f64,
    pub accepted: bool,
    /// `||u' - u|| + ||v' - v||` of the proposal.
    pub step: f64,
}

pub const IADM_HEADER: &str = "iteration,F,tau,kappa,accepted,step";

pub fn write_iadm_csv<W: Write>(out: &mut W, rows: &[IadmRow]) -> std::io::Result<()> {
    writeln!(out, "{IADM_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{},{:e}",
            r.iteration, r.f, r.tau, r.kappa, r.accepted as u8, r.step
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct IadmOutput {
    pub u: ParamVector,
    pub v: ParamVector,
    /// Every proposal, accepted or not.
    pub trace: Vec<IadmRow>,
    /// `F` after each accepted step, starting with `F` at the initial point.
    pub f_accepted: Vec<f64>,
    pub converged: bool,
    pub final_step: f64,
    pub monitor: ConvergenceMonitor,
}

/// Online adaptation from `u = u*`, `v = (1/d_n) sum_t varphi(u*; x_t)`.
pub fn iadm_run(problem: &IadmProblem, cfg: &IadmConfig) -> Result<IadmOutput> {
    cfg.validate()?;
    if problem.few_shot.is_empty() {
        return Err(Error::usage(
            "online adaptation needs at least one few-shot sample",
        ));
    }
    let v0 = problem
        .ctx
        .hyper
        .v_average(problem.u_star, problem.few_shot)?;
    iadm_run_from(problem, cfg, problem.u_star.clone(), v0)
}

pub fn iadm_run_from(
    problem: &IadmProblem,
    cfg: &IadmConfig,
    u0: ParamVector,
    v0: ParamVector,
) -> Result<IadmOutput> {
    cfg.validate()?;
    let d_n = problem.few_shot.len();
    if d_n == 0 {
        return Err(Error::usage(
            "online adaptation needs at least one few-shot sample",
        ));
    }
    let (mut u, mut v) = (u0, v0);
    let mut terms = problem.terms(&u, &v)?;
    let mut f = problem.combine(&terms);
    let mut monitor = ConvergenceMonitor::new(f, cfg);
    let mut trace = Vec::new();
    let mut f_accepted = vec![f];
    let mut converged = false;
    let mut final_step = f64::INFINITY;
    let (mut max_zeta_sq, mut max_xi_sq) = (0.0f64, 0.0f64);

    'outer: for iteration in 1..=cfg.max_iterations {
        let zeta = problem.zeta(&u, &v)?;
        let xi = problem.xi(&v)?;
        max_zeta_sq = max_zeta_sq.max(zeta.norm_sq());
        max_xi_sq = max_xi_sq.max(xi.norm_sq());
        loop {
            let u_new = iadm_u_step(&u, problem.u_star, &zeta, monitor.tau, problem.c2);
            let s = problem.ctx.hyper.v_sum(&u_new, problem.few_shot)?;
            let v_new = iadm_v_step(&v, &s, &xi, problem.c1, problem.c4, monitor.kappa, d_n);
            let step = u_new.distance(&u) + v_new.distance(&v);
            let new_terms = problem.terms(&u_new, &v_new)?;
            let f_new = problem.combine(&new_terms);
            let (tau, kappa) = (monitor.tau, monitor.kappa);
            let accepted = if f_new.is_finite() {
                monitor.judge(f_new)?
            } else {
                monitor.judge(f64::INFINITY)?
            };
            trace.push(IadmRow {
                iteration,
                f: f_new,
                tau,
                kappa,
                accepted,
                step,
            });
            if accepted {
                record_curvature(
                    problem,
                    &mut monitor.theory,
                    &u,
                    &v,
                    &u_new,
                    &v_new,
                    &zeta,
                    &xi,
                    &terms,
                )?;
                u = u_new;
                v = v_new;
                terms = new_terms;
                f = f_new;
                f_accepted.push(f);
                final_step = step;
                if step < cfg.tol {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            if step < cfg.tol {
                // even the damped proposal is below tolerance: stationary up to rounding
                final_step = step;
                converged = true;
                break 'outer;
            }
        }
    }
    let th = &mut monitor.theory;
    th.delta_u = 3.0 / problem.c2 * th.f0 + 2.0 / (problem.c2 * problem.c2) * max_zeta_sq;
    th.delta_v = 3.0 / problem.c4 * th.f0 + 2.0 / (problem.c4 * problem.c4) * max_xi_sq;
    Ok(IadmOutput {
        u,
        v,
        trace,
        f_accepted,
        converged,
        final_step,
        monitor,
    })
}

#[allow(clippy::too_many_arguments)]
fn record_curvature(
    problem: &IadmProblem,
    th: &mut TheoryEstimates,
    u: &ParamVector,
    v: &ParamVector,
    u_new: &ParamVector,
    v_new: &ParamVector,
    zeta: &ParamVector,
    xi: &ParamVector,
    terms: &FTerms,
) -> Result<()> {
    let du_sq = u_new.distance(u).powi(2);
    if du_sq > 0.0 {
        let g_old = problem.g_of(terms);
        let g_new = problem.c1
            * problem
                .ctx
                .hyper
                .regression_loss(u_new, problem.few_shot, v)?
            + problem.c3 * u_new.norm_sq();
        let lin: f64 = zeta
            .as_slice()
            .iter()
            .zip(u_new.as_slice().iter().zip(u.as_slice()))
            .map(|(g, (a, b))| g * (a - b))
            .sum();
        th.tau_lower = th.tau_lower.max((g_new - g_old - lin) / du_sq);
    }
    let dv_sq = v_new.distance(v).powi(2);
    if dv_sq > 0.0 {
        let f_new = problem.ctx.model.loss(
            problem.ctx.w_star,
            v_new,
            problem.few_shot,
            problem.ctx.loss,
        )?;
        let lin: f64 = xi
            .as_slice()
            .iter()
            .zip(v_new.as_slice().iter().zip(v.as_slice()))
            .map(|(g, (a, b))| g * (a - b))
            .sum();
        th.kappa_lower = th.kappa_lower.max((f_new - terms.task - lin) / dv_sq);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec, Network, Role, Segment};
    use crate::solver::toy::OaToy;

    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::new(
            values.to_vec(),
            vec![Segment::new(0, Role::Weight, vec![values.len()])],
        )
        .unwrap()
    }

    #[test]
    fn u_step_cases() {
        let u = pv(&[0.3, -1.0]);
        assert_eq!(iadm_u_step(&u, &u, &pv(&[0.0, 0.0]), 2.0, 0.1), u);
        let out = iadm_u_step(&pv(&[0.0]), &pv(&[2.0]), &pv(&[0.0]), 1.0, 1.0);
        assert_eq!(out.as_slice(), &[1.0]);
    }

    #[test]
    fn v_step_cases() {
        let out = iadm_v_step(&pv(&[1.0]), &pv(&[3.0]), &pv(&[0.0]), 1.0, 0.0, 1.0, 1);
        assert_eq!(out.as_slice(), &[2.0]);
        // varphi outputs all equal to v and no gradient; c4 is the only pull
        let v = pv(&[0.5, -0.25]);
        let sum = pv(&[1.5, -0.75]);
        let out = iadm_v_step(&v, &sum, &pv(&[0.0, 0.0]), 1.0, 0.0, 3.0, 3);
        for (a, b) in out.as_slice().iter().zip(v.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn monitor_backtracks_and_overflows() {
        let cfg = IadmConfig {
            max_rejections: 3,
            tau0: 1.0,
            kappa0: 2.0,
            ..Default::default()
        };
        let mut m = ConvergenceMonitor::new(10.0, &cfg);
        assert!(!m.judge(10.0).unwrap());
        assert_eq!((m.tau, m.kappa), (2.0, 4.0));
        assert!(m.judge(9.0).unwrap());
        assert!(!m.judge(9.0).unwrap());
        assert!(!m.judge(9.5).unwrap());
        assert!(!m.judge(9.5).unwrap());
        assert!(matches!(
            m.judge(9.5),
            Err(Error::StepOverflow { rejections: 4 })
        ));
    }

    #[test]
    fn monitor_shrinks_after_accept_streak_but_not_below_floor() {
        let cfg = IadmConfig::default();
        let mut m = ConvergenceMonitor::new(100.0, &cfg);
        m.judge(200.0).unwrap();
        m.judge(200.0).unwrap();
        assert_eq!(m.tau, 4.0);
        for k in 0..10 {
            assert!(m.judge(99.0 - k as f64).unwrap());
        }
        assert!((m.tau - 3.6).abs() < 1e-12);
        for k in 0..200 {
            m.judge(80.0 - k as f64 * 0.1).unwrap();
        }
        assert_eq!(m.tau, cfg.tau0);
    }

    fn toy() -> (BaseModel, HyperNet, Vec<Sample>) {
        let trunk = Network::new(vec![
            LayerSpec::dense(3, 4, Activation::Tanh),
            LayerSpec::dense(4, 2, Activation::Identity),
        ])
        .unwrap();
        let model = BaseModel::new(trunk, &[0]).unwrap();
        let embed = Network::new(vec![LayerSpec::dense(3, 3, Activation::Tanh)]).unwrap();
        let gen = Network::new(vec![LayerSpec::dense(3, 8, Activation::Identity)]).unwrap();
        let hyper = HyperNet::new(embed, vec![gen], &model).unwrap();
        let data = (0..6)
            .map(|t| {
                let x: Vec<f64> = (0..3).map(|j| ((t * 3 + j) as f64 * 0.37).sin()).collect();
                Sample {
                    y: vec![x[0] * 0.5, x[1] - x[2]],
                    x,
                }
            })
            .collect();
        (model, hyper, data)
    }

    #[test]
    fn f_is_the_sum_of_its_terms() {
        let (model, hyper, data) = toy();
        let mut rng = seeded(3);
        let w = model.init_w(&mut rng);
        let u_star = hyper.init_u(&mut rng);
        let u = hyper.init_u(&mut rng);
        let v = hyper.v_average(&u, &data).unwrap();
        let cfg = IadmConfig::default();
        let ctx = OaContext {
            model: &model,
            hyper: &hyper,
            w_star: &w,
            loss: LossKind::MeanSquaredError,
        };
        let p = IadmProblem::new(ctx, &u_star, &data, &cfg);
        let by_hand = cfg.c1 * hyper.regression_loss(&u, &data, &v).unwrap()
            + cfg.c3 * u.norm_sq()
            + model
                .loss(&w, &v, &data, LossKind::MeanSquaredError)
                .unwrap()
            + cfg.c2 * u.distance(&u_star).powi(2)
            + cfg.c4 * v.norm_sq();
        let f = p.f_eval(&u, &v).unwrap();
        assert!((f - by_hand).abs() <= 1e-12 * by_hand.abs());
        assert!(f >= 0.0);

        let doubled = IadmConfig {
            c4: 2.0 * cfg.c4,
            ..cfg.clone()
        };
        let ctx = OaContext {
            model: &model,
            hyper: &hyper,
            w_star: &w,
            loss: LossKind::MeanSquaredError,
        };
        let p2 = IadmProblem::new(ctx, &u_star, &data, &doubled);
        let f2 = p2.f_eval(&u, &v).unwrap();
        assert!((f2 - f - cfg.c4 * v.norm_sq()).abs() < 1e-12);
    }

    #[test]
    fn online_run_descends_strictly_and_settles() {
        let toy = OaToy::new(0, 16).unwrap();
        let cfg = IadmConfig {
            max_iterations: 5000,
            ..Default::default()
        };
        let out = iadm_run(&toy.problem(&cfg), &cfg).unwrap();
        assert!(out.f_accepted.windows(2).all(|w| w[1] < w[0]));
        assert!(out.converged, "final step {}", out.final_step);
        assert!(out.final_step < cfg.tol);
        let accepted: Vec<_> = out.trace.iter().filter(|r| r.accepted).collect();
        assert_eq!(accepted.len() + 1, out.f_accepted.len());
        assert!(out.monitor.theory.tau_lower > 0.0);
    }

    #[test]
    fn starts_from_the_prior_and_the_average_adapter() {
        let toy = OaToy::new(1, 16).unwrap();
        let cfg = IadmConfig {
            max_iterations: 0,
            ..Default::default()
        };
        let out = iadm_run(&toy.problem(&cfg), &cfg).unwrap();
        assert_eq!(out.u, toy.u_star);
        assert_eq!(
            out.v,
            toy.hyper.v_average(&toy.u_star, &toy.few_shot).unwrap()
        );
    }

    #[test]
    fn huge_c2_pins_u_to_the_prior() {
        let toy = OaToy::new(2, 16).unwrap();
        let cfg = IadmConfig {
            c2: 1e7,
            max_iterations: 200,
            ..Default::default()
        };
        let out = iadm_run(&toy.problem(&cfg), &cfg).unwrap();
        assert!(out.u.distance(&toy.u_star) < 1e-3);
    }

    #[test]
    fn larger_c4_shrinks_the_adapters() {
        let norm = |c4: f64| -> f64 {
            (0..5)
                .map(|seed| {
                    let toy = OaToy::new(seed, 16).unwrap();
                    let cfg = IadmConfig {
                        c4,
                        max_iterations: 300,
                        ..Default::default()
                    };
                    iadm_run(&toy.problem(&cfg), &cfg).unwrap().v.norm()
                })
                .sum::<f64>()
                / 5.0
        };
        let (a, b, c) = (norm(1e-4), norm(1e-1), norm(1.0));
        assert!(b <= a && c <= b, "{a} {b} {c}");
    }

    #[test]
    fn zero_state_has_zero_objective() {
        let toy = OaToy::new(3, 4).unwrap();
        let zero_w = toy.w_star.zeros_like();
        let zero_u = toy.u_star.zeros_like();
        let data: Vec<Sample> = toy
            .few_shot
            .iter()
            .map(|s| Sample {
                x: s.x.clone(),
                y: vec![0.0; s.y.len()],
            })
            .collect();
        let cfg = IadmConfig::default();
        let ctx = OaContext {
            model: &toy.model,
            hyper: &toy.hyper,
            w_star: &zero_w,
            loss: LossKind::MeanSquaredError,
        };
        let p = IadmProblem::new(ctx, &zero_u, &data, &cfg);
        let v = toy.model.identity_v().zeros_like();
        assert_eq!(p.f_eval(&zero_u, &v).unwrap(), 0.0);
    }

    #[test]
    fn iadm_csv_has_one_row_per_proposal() {
        let toy = OaToy::new(4, 16).unwrap();
        let cfg = IadmConfig {
            max_iterations: 20,
            ..Default::default()
        };
        let out = iadm_run(&toy.problem(&cfg), &cfg).unwrap();
        let mut buf = Vec::new();
        write_iadm_csv(&mut buf, &out.trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), IADM_HEADER);
        assert_eq!(text.lines().count(), out.trace.len() + 1);
    }

    #[test]
    fn first_order_maml_is_deterministic_and_fits_equal_targets() {
        let (model, hyper, data) = toy();
        let mut rng = seeded(8);
        let w = model.init_w(&mut rng);
        let target = hyper
            .hyper_forward(&hyper.init_u(&mut rng), &[0.0; 3])
            .unwrap();
        let refs = [data.as_slice(), data.as_slice()];
        let vs = [target.clone(), target.clone()];
        let ctx = OaContext {
            model: &model,
            hyper: &hyper,
            w_star: &w,
            loss: LossKind::MeanSquaredError,
        };
        let cfg = OfflineConfig {
            lambda: 0.0,
            episodes: 400,
            inner_lr: 0.02,
            outer_lr: 0.05,
            split_size: 3,
            ..Default::default()
        };
        let a = oa_offline_train(&ctx, &refs, &vs, &cfg, 1).unwrap();
        let b = oa_offline_train(&ctx, &refs, &vs, &cfg, 1).unwrap();
        assert_eq!(a.u, b.u);
        let end = ctx.offline_objective(&a.u, &refs, &vs, 0.0).unwrap() / data.len() as f64;
        assert!(end < 1e-3, "{end}");
    }

    proptest::proptest! {
        // the surrogate gradients vanish at the closed-form points
        #[test]
        fn steps_zero_their_surrogate_gradients(
            u in proptest::collection::vec(-3.0f64..3.0, 3),
            us in proptest::collection::vec(-3.0f64..3.0, 3),
            g in proptest::collection::vec(-3.0f64..3.0, 3),
            s in proptest::collection::vec(-3.0f64..3.0, 3),
            tau in 0.1f64..10.0,
            c1 in 0.0f64..3.0,
            c2 in 0.0f64..3.0,
            d_n in 1usize..20,
        ) {
            let out = iadm_u_step(&pv(&u), &pv(&us), &pv(&g), tau, c2);
            for j in 0..3 {
                let x = out.as_slice()[j];
                let grad = g[j] + 2.0 * tau * (x - u[j]) + 2.0 * c2 * (x - us[j]);
                proptest::prop_assert!(grad.abs() < 1e-9);
            }
            let out = iadm_v_step(&pv(&u), &pv(&s), &pv(&g), c1, c2, tau, d_n);
            for j in 0..3 {
                let x = out.as_slice()[j];
                let grad = 2.0 * c1 * (d_n as f64 * x - s[j]) + g[j] + 2.0 * tau * (x - u[j]) + 2.0 * c2 * x;
                proptest::prop_assert!(grad.abs() < 1e-9);
            }
        }
    }
}
