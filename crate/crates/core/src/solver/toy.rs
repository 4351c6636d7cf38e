//! Small reproducible problems shared by tests, the selftest verb and the
//! benches.

use rand::Rng;

use crate::adapters::{BaseModel, HyperNet};
use crate::error::Result;
use crate::nn::{Activation, LayerSpec, LossKind, Network, ParamVector, Sample};
use crate::rng::seeded;

use super::oa::{IadmConfig, IadmProblem, OaContext};

/// Online-adaptation toy: tanh trunk with one adapter, tanh hypernetwork,
/// random frozen `w*` and `u*`, and a smooth regression target.
#[derive(Debug, Clone)]
pub struct OaToy {
    pub model: BaseModel,
    pub hyper: HyperNet,
    pub w_star: ParamVector,
    pub u_star: ParamVector,
    pub few_shot: Vec<Sample>,
}

pub const OA_TOY_INPUTS: usize = 4;

impl OaToy {
    pub fn new(seed: u64, d_n: usize) -> Result<Self> {
        Self::with_widths(seed, d_n, 8, 6)
    }

    /// `hidden` trunk channels (each adapted) and `embed` hypernetwork features.
    pub fn with_widths(seed: u64, d_n: usize, hidden: usize, embed: usize) -> Result<Self> {
        let trunk = Network::new(vec![
            LayerSpec::dense(OA_TOY_INPUTS, hidden, Activation::Tanh),
            LayerSpec::dense(hidden, 2, Activation::Identity),
        ])?;
        let model = BaseModel::new(trunk, &[0])?;
        let gen = Network::new(vec![LayerSpec::dense(
            embed,
            2 * hidden,
            Activation::Identity,
        )])?;
        let embed = Network::new(vec![LayerSpec::dense(
            OA_TOY_INPUTS,
            embed,
            Activation::Tanh,
        )])?;
        let hyper = HyperNet::new(embed, vec![gen], &model)?;
        let mut rng = seeded(seed);
        let w_star = model.init_w(&mut rng);
        let u_star = hyper.init_u(&mut rng);
        let mix: Vec<f64> = (0..OA_TOY_INPUTS)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let few_shot = (0..d_n)
            .map(|_| {
                let x: Vec<f64> = (0..OA_TOY_INPUTS)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                let s: f64 = x.iter().zip(&mix).map(|(a, b)| a * b).sum();
                Sample {
                    y: vec![s.tanh(), (x[0] - x[1]) * 0.5],
                    x,
                }
            })
            .collect();
        Ok(Self {
            model,
            hyper,
            w_star,
            u_star,
            few_shot,
        })
    }

    pub fn context(&self) -> OaContext<'_> {
        OaContext {
            model: &self.model,
            hyper: &self.hyper,
            w_star: &self.w_star,
            loss: LossKind::MeanSquaredError,
        }
    }

    pub fn problem(&self, cfg: &IadmConfig) -> IadmProblem<'_> {
        IadmProblem::new(self.context(), &self.u_star, &self.few_shot, cfg)
    }
}
