//! End-to-end acceptance checks. Each criterion prints one `PASS` or `FAIL`
//! line with the measured numbers; a FAIL is a finding, not a test failure.
//! Run with `cargo test -p fewshot-core --test acceptance -- --nocapture` to
//! see the lines next to the libtest output (they go to stderr either way).

#![allow(clippy::needless_range_loop)]

use std::io::Write;
use std::time::Instant;

use fewshot_core::baselines::train_joint;
use fewshot_core::env::mmwave::{delay_taps, gen_channel, MmwaveConfig, Scenario};
use fewshot_core::env::ofdm::{
    correlation_features, dissimilar_environment, perturb_environment, rayleigh_gain,
    sample_environment, sample_resolvable_environment, OfdmConfig,
};
use fewshot_core::harness::models::{hypernet_for, mmwave_model, ofdm_model, OfdmModelConfig};
use fewshot_core::harness::ofdm::OfdmWorld;
use fewshot_core::harness::{self, ExperimentConfig, ExperimentReport, Scheme, Task};
use fewshot_core::nn::{central_difference, relative_error, Role, Segment};
use fewshot_core::rng::{derive_seed, seeded};
use fewshot_core::solver::ea::{
    ea1_local_update, ea1_run, ea2_u_local, ea2_v_step, mean_objective,
};
use fewshot_core::solver::oa::{iadm_run, iadm_u_step, iadm_v_step, IadmConfig};
use fewshot_core::solver::toy::OaToy;
use fewshot_core::{Activation, LossKind, ParamVector, Sample};
use num_complex::Complex64;
use rand::Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn emit(v: &Verdict) {
    let line = format!(
        "criterion {:>2} {:<22} {}  {}\n",
        v.id,
        v.name,
        if v.pass { "PASS" } else { "FAIL" },
        v.detail
    );
    // written straight to the handle so libtest capture does not swallow it
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn judge(
    id: u32,
    name: &'static str,
    f: impl FnOnce() -> Result<(bool, String), String>,
) -> Verdict {
    let (pass, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    let v = Verdict {
        id,
        name,
        pass,
        detail,
    };
    emit(&v);
    v
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn complete(r: ExperimentReport) -> Result<ExperimentReport, String> {
    match (&r.error, r.complete) {
        (Some(e), _) => Err(e.clone()),
        (None, false) => Err("incomplete report".into()),
        _ => Ok(r),
    }
}

fn value(
    r: &ExperimentReport,
    method: &str,
    env: &str,
    snr: Option<f64>,
    d_n: Option<usize>,
) -> Result<f64, String> {
    r.metrics
        .iter()
        .find(|m| {
            m.method == method
                && m.environment == env
                && snr.is_none_or(|s| m.snr_db == Some(s))
                && d_n.is_none_or(|d| m.d_n == Some(d))
        })
        .map(|m| m.value)
        .ok_or_else(|| format!("no {method}/{env} row"))
}

fn descent() -> Result<(bool, String), String> {
    let cfg = IadmConfig::default();
    let (mut strict, mut settled, mut fast) = (0, 0, 0);
    let mut worst_step = 0.0f64;
    let mut slowest = 0.0f64;
    for seed in 0..10 {
        let toy = OaToy::new(seed, 16).map_err(|e| e.to_string())?;
        let t = Instant::now();
        let out = iadm_run(&toy.problem(&cfg), &cfg).map_err(|e| e.to_string())?;
        let secs = t.elapsed().as_secs_f64();
        strict += out.f_accepted.windows(2).all(|w| w[1] < w[0]) as usize;
        settled += (out.converged && out.final_step < 1e-4) as usize;
        fast += (secs < 60.0) as usize;
        worst_step = worst_step.max(out.final_step);
        slowest = slowest.max(secs);
    }
    Ok((
        strict == 10 && settled == 10 && fast == 10,
        format!(
            "strict descent {strict}/10, step below 1e-4 within {} iterations {settled}/10 (worst final step {worst_step:.2e}), slowest seed {slowest:.2}s",
            cfg.max_iterations
        ),
    ))
}

fn consensus() -> Result<(bool, String), String> {
    let cfg = ExperimentConfig::desk();
    let world = OfdmWorld::build(&cfg.ofdm, cfg.ofdm.pilots, 0).map_err(|e| e.to_string())?;
    let sets = world.train_sets();
    let mut p1 = cfg.ofdm.solvers.phase1.clone();
    p1.second_moment = false;
    p1.iterations = 2000;
    let t = Instant::now();
    let out = ea1_run(
        &world.model,
        &sets,
        LossKind::BinaryCrossEntropy,
        &p1,
        derive_seed(0, 1),
    )
    .map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let hit = out.trace.iter().position(|r| r.consensus_residual < 1e-3);
    let last = out.trace.last().map_or(f64::NAN, |r| r.consensus_residual);
    Ok((
        hit.is_some() && secs < 120.0,
        format!(
            "{} environments, residual below 1e-3 at iteration {}, final residual {last:.2e}, {secs:.1}s",
            sets.len(),
            hit.map_or("never".into(), |i| (i + 1).to_string())
        ),
    ))
}

fn gradients() -> Result<(bool, String), String> {
    let link = OfdmConfig::new(8, 2, 2).map_err(|e| e.to_string())?;
    let receiver = ofdm_model(
        &link,
        &OfdmModelConfig {
            hidden: 4,
            hidden_layers: 1,
            activation: Activation::Tanh,
            embed: 3,
        },
    )
    .map_err(|e| e.to_string())?;
    let beams = mmwave_model(
        10,
        6,
        &fewshot_core::harness::models::MmwaveModelConfig {
            hidden: 5,
            hidden_layers: 2,
            embed: 3,
        },
    )
    .map_err(|e| e.to_string())?;
    let mut probes = 0;
    let mut worst = 0.0f64;
    for (k, (model, loss)) in [
        (&receiver, LossKind::BinaryCrossEntropy),
        (&beams, LossKind::MeanSquaredError),
    ]
    .into_iter()
    .enumerate()
    {
        let hyper = hypernet_for(model, 3).map_err(|e| e.to_string())?;
        for seed in 0..10u64 {
            let mut rng = seeded(derive_seed(seed, 70 + k as u64));
            let w = model.init_w(&mut rng);
            let v = ParamVector::new(
                (0..model.v_len())
                    .map(|_| rng.random_range(0.5..1.5))
                    .collect(),
                model.v_layout(),
            )
            .map_err(|e| e.to_string())?;
            let batch: Vec<Sample> = (0..3)
                .map(|_| {
                    let x = if k == 0 {
                        let raw: Vec<f64> = (0..link.input_len())
                            .map(|_| rng.random_range(-1.0..1.0))
                            .collect();
                        correlation_features(&link, &raw)
                    } else {
                        (0..model.input_len())
                            .map(|_| rng.random_range(-1.0..1.0))
                            .collect()
                    };
                    let y = (0..model.output_len())
                        .map(|_| rng.random_range(0..2) as f64)
                        .collect();
                    Sample { x, y }
                })
                .collect();
            let (_, gw, gv) = model
                .grad(&w, &v, &batch, loss)
                .map_err(|e| e.to_string())?;
            let fw = central_difference(
                |p| model.loss(&w.with_values(p.to_vec()), &v, &batch, loss),
                w.as_slice(),
                1e-5,
            )
            .map_err(|e| e.to_string())?;
            let fv = central_difference(
                |p| model.loss(&w, &v.with_values(p.to_vec()), &batch, loss),
                v.as_slice(),
                1e-5,
            )
            .map_err(|e| e.to_string())?;
            let u = hyper.init_u(&mut rng);
            let (_, gu, _) = hyper
                .regression_grad(&u, &batch, &v)
                .map_err(|e| e.to_string())?;
            let fu = central_difference(
                |p| hyper.regression_loss(&u.with_values(p.to_vec()), &batch, &v),
                u.as_slice(),
                1e-5,
            )
            .map_err(|e| e.to_string())?;
            for (g, f) in [
                (gw.as_slice(), &fw),
                (gv.as_slice(), &fv),
                (gu.as_slice(), &fu),
            ] {
                worst = worst.max(relative_error(g, f));
                probes += 1;
            }
        }
    }
    Ok((
        probes >= 50 && worst < 1e-6,
        format!(
            "{probes} probes over trunk, adapters and hypernet, worst relative error {worst:.2e}"
        ),
    ))
}

/// Minimizer of a smooth function by Newton steps on central-difference
/// derivatives; exact up to rounding for quadratics.
fn numeric_argmin(f: &dyn Fn(&[f64]) -> f64, dim: usize) -> Vec<f64> {
    let h = 1e-2;
    let grad = |x: &[f64]| -> Vec<f64> {
        (0..dim)
            .map(|i| {
                let (mut a, mut b) = (x.to_vec(), x.to_vec());
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    };
    let mut x = vec![0.0; dim];
    for _ in 0..3 {
        let g = grad(&x);
        let mut m: Vec<Vec<f64>> = (0..dim)
            .map(|j| {
                let (mut a, mut b) = (x.clone(), x.clone());
                a[j] += h;
                b[j] -= h;
                let (ga, gb) = (grad(&a), grad(&b));
                let mut row: Vec<f64> = (0..dim).map(|i| (ga[i] - gb[i]) / (2.0 * h)).collect();
                row.push(-g[j]);
                row
            })
            .collect();
        // Gaussian elimination with partial pivoting on [H | -g]
        for c in 0..dim {
            let p = (c..dim)
                .max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))
                .unwrap();
            m.swap(c, p);
            for r in 0..dim {
                if r != c {
                    let k = m[r][c] / m[c][c];
                    for j in c..=dim {
                        m[r][j] -= k * m[c][j];
                    }
                }
            }
        }
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += m[i][dim] / m[i][i];
        }
    }
    x
}

fn pv(values: Vec<f64>) -> ParamVector {
    let n = values.len();
    ParamVector::new(values, vec![Segment::new(0, Role::Weight, vec![n])]).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn closed_forms() -> Result<(bool, String), String> {
    const DIM: usize = 4;
    let mut rng = seeded(404);
    let vec_of = |rng: &mut dyn rand::RngCore| -> Vec<f64> {
        (0..DIM).map(|_| rng.random_range(-2.0..2.0)).collect()
    };
    let mut worst = [0.0f64; 6];
    for _ in 0..20 {
        let (a, b, c, d) = (
            vec_of(&mut rng),
            vec_of(&mut rng),
            vec_of(&mut rng),
            vec_of(&mut rng),
        );
        let (p1, p2) = (rng.random_range(0.5..5.0), rng.random_range(0.5..5.0));
        // local update: linearized loss plus multiplier and both proximal terms
        let (wi, vi) = ea1_local_update(
            &pv(a.clone()),
            &pv(d.clone()),
            &pv(c.clone()),
            &pv(b.clone()),
            &pv(c.clone()),
            p1,
            p2,
            None,
        );
        let bw = numeric_argmin(
            &|x| dot(&b, &dist(x, &a)) + dot(&c, &dist(x, &a)) + 0.5 * (p1 + p2) * dist_sq(x, &a),
            DIM,
        );
        worst[0] = worst[0].max(max_abs(wi.as_slice(), &bw));
        let bv = numeric_argmin(&|x| dot(&c, &dist(x, &d)) + 0.5 * p1 * dist_sq(x, &d), DIM);
        worst[1] = worst[1].max(max_abs(vi.as_slice(), &bv));
        // adapter step of the second phase
        let vn = ea2_v_step(&pv(a.clone()), &pv(b.clone()), p1);
        let bn = numeric_argmin(&|x| dot(&b, &dist(x, &a)) + 0.5 * p1 * dist_sq(x, &a), DIM);
        worst[2] = worst[2].max(max_abs(vn.as_slice(), &bn));
        // hypernet local step of the second phase
        let ui = ea2_u_local(&pv(a.clone()), &pv(b.clone()), &pv(c.clone()), p1, p2);
        let bu = numeric_argmin(
            &|x| dot(&b, &dist(x, &a)) + dot(&c, &dist(x, &a)) + 0.5 * (p1 + p2) * dist_sq(x, &a),
            DIM,
        );
        worst[3] = worst[3].max(max_abs(ui.as_slice(), &bu));
        // online u step
        let c2 = rng.random_range(0.05..2.0);
        let uo = iadm_u_step(&pv(a.clone()), &pv(d.clone()), &pv(b.clone()), p1, c2);
        let bo = numeric_argmin(
            &|x| dot(&b, x) + p1 * dist_sq(x, &a) + c2 * dist_sq(x, &d),
            DIM,
        );
        worst[4] = worst[4].max(max_abs(uo.as_slice(), &bo));
        // online v step over a few hypernet outputs
        let d_n = rng.random_range(1..6);
        let outs: Vec<Vec<f64>> = (0..d_n).map(|_| vec_of(&mut rng)).collect();
        let sum: Vec<f64> = (0..DIM).map(|j| outs.iter().map(|o| o[j]).sum()).collect();
        let (c1, c4) = (rng.random_range(0.01..2.0), rng.random_range(0.0..1.0));
        let vo = iadm_v_step(&pv(a.clone()), &pv(sum), &pv(b.clone()), c1, c4, p2, d_n);
        let bvo = numeric_argmin(
            &|x| {
                c1 * outs.iter().map(|o| dist_sq(o, x)).sum::<f64>()
                    + dot(&b, x)
                    + p2 * dist_sq(x, &a)
                    + c4 * dot(x, x)
            },
            DIM,
        );
        worst[5] = worst[5].max(max_abs(vo.as_slice(), &bvo));
    }
    let names = [
        "local w",
        "local v",
        "new-env v",
        "hypernet u",
        "online u",
        "online v",
    ];
    let detail = names
        .iter()
        .zip(worst)
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((
        worst.iter().all(|&e| e < 1e-8),
        format!("20 instances each, max deviation: {detail}"),
    ))
}

fn dist(x: &[f64], base: &[f64]) -> Vec<f64> {
    x.iter().zip(base).map(|(a, b)| a - b).collect()
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn optimizer_ordering() -> Result<(bool, String), String> {
    let cfg = ExperimentConfig::desk();
    let loss = LossKind::BinaryCrossEntropy;
    let mut plain = cfg.ofdm.solvers.phase1.clone();
    // the original, weaker penalty: the comparison is about training speed
    plain.sigma = 25.0;
    plain.rho = 25.0;
    plain.second_moment = false;
    let mut sm = plain.clone();
    sm.second_moment = true;
    let b = &cfg.ofdm.baselines;
    let mut rows: [Vec<f64>; 4] = Default::default();
    for &seed in &SEEDS {
        let world =
            OfdmWorld::build(&cfg.ofdm, cfg.ofdm.pilots, seed).map_err(|e| e.to_string())?;
        let sets = world.train_sets();
        for (k, p) in [&plain, &sm].into_iter().enumerate() {
            let mut p = p.clone();
            p.iterations = b.sgd.steps;
            let out = ea1_run(&world.model, &sets, loss, &p, derive_seed(seed, 1))
                .map_err(|e| e.to_string())?;
            rows[k].push(
                mean_objective(&world.model, &out.w, &out.vs, &sets, loss)
                    .map_err(|e| e.to_string())?,
            );
        }
        for (k, run) in [(2, &b.sgd), (3, &b.rmsprop)] {
            let obj = match train_joint(
                &world.model,
                &sets,
                loss,
                &run.optimizer,
                b.sgd.steps,
                derive_seed(seed, 1),
            ) {
                Ok(out) => mean_objective(&world.model, &out.w, &out.vs, &sets, loss)
                    .map_err(|e| e.to_string())?,
                Err(_) => f64::INFINITY,
            };
            rows[k].push(obj);
        }
    }
    let m: Vec<f64> = rows.iter().map(|r| mean(r)).collect();
    Ok((
        m[1] <= m[3] && m[0] <= m[2],
        format!(
            "{} steps, mean loss iadmm+sm {:.5} vs rmsprop {:.5}, iadmm {:.5} vs sgd {:.5}",
            b.sgd.steps, m[1], m[3], m[0], m[2]
        ),
    ))
}

fn adaptation_ordering() -> Result<(bool, String), String> {
    let mut sums = std::collections::BTreeMap::<(&str, &str), Vec<f64>>::new();
    for &seed in &SEEDS {
        let mut cfg = ExperimentConfig::desk();
        cfg.seed = seed;
        cfg.schemes = vec![Scheme::Ea, Scheme::Tl, Scheme::Mismatch];
        let r = complete(harness::run(&cfg))?;
        for env in ["similar", "dissimilar"] {
            for m in ["ea", "tl", "mismatch"] {
                sums.entry((env, m))
                    .or_default()
                    .push(value(&r, m, env, Some(10.0), None)?);
            }
        }
    }
    let g = |env, m| mean(&sums[&(env, m)]);
    let (de, dt, dm) = (
        g("dissimilar", "ea"),
        g("dissimilar", "tl"),
        g("dissimilar", "mismatch"),
    );
    let (se, st, sm) = (
        g("similar", "ea"),
        g("similar", "tl"),
        g("similar", "mismatch"),
    );
    Ok((
        de < dt && dt < dm && se <= st && st < sm,
        format!("BER at 10 dB, dissimilar ea {de:.4} tl {dt:.4} mismatch {dm:.4}; similar ea {se:.4} tl {st:.4} mismatch {sm:.4}"),
    ))
}

fn mmwave_cfg(seed: u64, schemes: Vec<Scheme>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.task = Task::Mmwave;
    cfg.seed = seed;
    cfg.schemes = schemes;
    cfg
}

fn rate_ordering() -> Result<(bool, String), String> {
    let names = ["baseline", "tl", "oa", "upper-bound", "optimum"];
    let mut acc = vec![Vec::new(); names.len()];
    let mut env = "";
    for &seed in &SEEDS {
        let cfg = mmwave_cfg(seed, vec![Scheme::Tl, Scheme::Oa]);
        env = cfg.mmwave.new_env.name();
        let r = complete(harness::run(&cfg))?;
        for (k, n) in names.iter().enumerate() {
            acc[k].push(value(&r, n, env, None, None)?);
        }
    }
    let m: Vec<f64> = acc.iter().map(|a| mean(a)).collect();
    Ok((
        m.windows(2).all(|w| w[0] <= w[1]),
        format!(
            "{env} environment, mean rate baseline {:.3} tl {:.3} oa {:.3} upper-bound {:.3} optimum {:.3}",
            m[0], m[1], m[2], m[3], m[4]
        ),
    ))
}

fn fewshot_ablation() -> Result<(bool, String), String> {
    let probe = mmwave_cfg(0, vec![Scheme::Oa]);
    let sizes = probe.mmwave.d_n_list.clone();
    let mut acc = vec![Vec::new(); sizes.len()];
    for &seed in &SEEDS {
        let cfg = mmwave_cfg(seed, vec![Scheme::Oa]);
        let r = complete(harness::ablate_fewshot(&cfg).map_err(|e| e.to_string())?)?;
        for (k, &d) in sizes.iter().enumerate() {
            acc[k].push(value(&r, "oa", cfg.mmwave.new_env.name(), None, Some(d))?);
        }
    }
    let m: Vec<f64> = acc.iter().map(|a| mean(a)).collect();
    let detail = sizes
        .iter()
        .zip(&m)
        .map(|(d, r)| format!("d_n {d}: {r:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((
        m.windows(2).all(|w| w[0] <= w[1]),
        format!("mean OA rate {detail}"),
    ))
}

fn channel_statistics() -> Result<(bool, String), String> {
    let mut rng = seeded(9);
    let n = 1_000_000;
    let power = (0..n)
        .map(|_| rayleigh_gain(&mut rng).norm_sqr())
        .sum::<f64>()
        / n as f64;
    let mut pdp_err = 0.0f64;
    for seed in 0..200u64 {
        let a = sample_environment(seed, 1 + (seed % 6) as usize).map_err(|e| e.to_string())?;
        let b = sample_resolvable_environment(seed, 3, 8, 3).map_err(|e| e.to_string())?;
        let c = perturb_environment(&b, 0.1, seed).map_err(|e| e.to_string())?;
        let d = dissimilar_environment(seed, 3, std::slice::from_ref(&b), 8, 3)
            .map_err(|e| e.to_string())?;
        for p in [&a, &b, &c, &d] {
            pdp_err = pdp_err.max((p.powers().iter().sum::<f64>() - 1.0).abs());
        }
    }
    let mut dft_err = 0.0f64;
    for seed in 0..5u64 {
        let sc = Scenario::new(seed, MmwaveConfig::desk()).map_err(|e| e.to_string())?;
        let env = sc.env_at(5.0 + 7.0 * seed as f64);
        let taps = delay_taps(&env, seed).map_err(|e| e.to_string())?;
        let ch = gen_channel(&env, seed).map_err(|e| e.to_string())?;
        for b in 0..env.bs() {
            for k in 0..env.subcarriers {
                for m in 0..env.antennas {
                    let direct: Complex64 = (0..env.taps)
                        .map(|d| {
                            let phase = -2.0 * std::f64::consts::PI * (k * d) as f64
                                / env.subcarriers as f64;
                            taps[b][d][m] * Complex64::from_polar(1.0, phase)
                        })
                        .sum();
                    dft_err = dft_err.max((direct - ch.get(b, k)[m]).norm());
                }
            }
        }
    }
    Ok((
        (0.99..=1.01).contains(&power) && pdp_err < 1e-12 && dft_err < 1e-10,
        format!("E|alpha|^2 {power:.4}, worst PDP sum error {pdp_err:.1e}, worst DFT deviation {dft_err:.1e}"),
    ))
}

fn pilot_study() -> Result<(bool, String), String> {
    let cfg = ExperimentConfig::desk();
    let (few, full) = (
        cfg.ofdm.pilot_counts[0],
        *cfg.ofdm.pilot_counts.last().unwrap(),
    );
    let snrs: Vec<f64> = cfg
        .ofdm
        .snr_grid_db
        .iter()
        .copied()
        .filter(|&s| s >= 5.0)
        .collect();
    let mut acc = vec![(Vec::new(), Vec::new()); snrs.len()];
    for &seed in &SEEDS {
        let mut c = cfg.clone();
        c.seed = seed;
        let r = complete(harness::pilot_study(&c).map_err(|e| e.to_string())?)?;
        for (k, &snr) in snrs.iter().enumerate() {
            let pick = |p: usize| {
                r.metrics
                    .iter()
                    .find(|m| {
                        m.method == "receiver"
                            && m.environment == "new"
                            && m.snr_db == Some(snr)
                            && m.pilots == Some(p)
                    })
                    .map(|m| m.value)
                    .ok_or_else(|| format!("missing pilot row {p} at {snr} dB"))
            };
            acc[k].0.push(pick(few)?);
            acc[k].1.push(pick(full)?);
        }
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for (snr, (a, b)) in snrs.iter().zip(&acc) {
        let (fa, fb) = (mean(a), mean(b));
        ok &= fb < fa;
        parts.push(format!("{snr} dB {fb:.4} vs {fa:.4}"));
    }
    Ok((
        ok,
        format!(
            "new-environment BER, {full} vs {few} pilots: {}",
            parts.join(", ")
        ),
    ))
}

#[test]
fn acceptance_report() {
    let verdicts = [
        judge(1, "descent", descent),
        judge(2, "consensus", consensus),
        judge(3, "gradients", gradients),
        judge(4, "closed forms", closed_forms),
        judge(5, "optimizer ordering", optimizer_ordering),
        judge(6, "adaptation ordering", adaptation_ordering),
        judge(7, "mmwave rates", rate_ordering),
        judge(8, "few-shot ablation", fewshot_ablation),
        judge(9, "channel statistics", channel_statistics),
        judge(10, "pilot study", pilot_study),
    ];
    let passed = verdicts.iter().filter(|v| v.pass).count();
    let _ = std::io::stderr()
        .write_all(format!("acceptance: {passed}/{} criteria pass\n", verdicts.len()).as_bytes());
    let summary: String = verdicts
        .iter()
        .map(|v| {
            format!(
                "criterion {} {} {} {}\n",
                v.id,
                v.name,
                if v.pass { "PASS" } else { "FAIL" },
                v.detail
            )
        })
        .collect();
    let _ = std::fs::write(
        concat!(env!("CARGO_TARGET_TMPDIR"), "/acceptance.txt"),
        summary,
    );
}
