//! Seconds-scale sanity checks behind the `selftest` verb.

use crate::env::ofdm::{rayleigh_gain, sample_environment};
use crate::nn::{relative_error, Activation, LayerSpec, LossKind, Network, Sample};
use crate::rng::seeded;
use crate::solver::oa::{iadm_run, IadmConfig};
use crate::solver::toy::OaToy;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> crate::Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check {
            name,
            passed,
            detail,
        },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

pub fn run_all() -> Vec<Check> {
    vec![
        check("gradient", || {
            let net = Network::new(vec![
                LayerSpec::conv1d(2, 3, 3, 6, Activation::Tanh),
                LayerSpec::dense(18, 4, Activation::Sigmoid),
            ])?;
            let mut rng = seeded(11);
            let p = net.init(&mut rng);
            let batch: Vec<Sample> = (0..3)
                .map(|i| Sample {
                    x: (0..12)
                        .map(|j| ((i * 12 + j) as f64 * 0.37).sin())
                        .collect(),
                    y: vec![0.0, 1.0, 1.0, 0.0],
                })
                .collect();
            let g = net.grad(&p, &batch, LossKind::BinaryCrossEntropy)?;
            let fd = net.finite_diff(&p, &batch, LossKind::BinaryCrossEntropy, 1e-5)?;
            let err = relative_error(g.as_slice(), fd.as_slice());
            Ok((err < 1e-6, format!("relative error {err:.2e}")))
        }),
        check("rayleigh-power", || {
            let mut rng = seeded(5);
            let n = 100_000;
            let p = (0..n)
                .map(|_| rayleigh_gain(&mut rng).norm_sqr())
                .sum::<f64>()
                / n as f64;
            Ok(((0.99..=1.01).contains(&p), format!("mean power {p:.4}")))
        }),
        check("pdp-normalized", || {
            let pdp = sample_environment(3, 4)?;
            let s: f64 = pdp.powers().iter().sum();
            Ok(((s - 1.0).abs() < 1e-12, format!("power sum {s:.15}")))
        }),
        check("online-descent", || {
            let toy = OaToy::new(0, 16)?;
            let cfg = IadmConfig::default();
            let out = iadm_run(&toy.problem(&cfg), &cfg)?;
            let strict = out.f_accepted.windows(2).all(|w| w[1] < w[0]);
            Ok((
                strict,
                format!(
                    "{} accepted steps, final step {:.2e}",
                    out.f_accepted.len() - 1,
                    out.final_step
                ),
            ))
        }),
    ]
}
