//! Network presets for the two tasks.

use serde::{Deserialize, Serialize};

use crate::adapters::{BaseModel, HyperNet};
use crate::env::ofdm::{correlation_channels, OfdmConfig};
use crate::error::{Error, Result};
use crate::nn::{Activation, LayerSpec, Network};

/// Learned receiver: the fixed correlator front end followed by
/// position-shared (kernel one) layers over the subcarriers, an adapter after
/// every hidden layer and a sigmoid bit probability per subcarrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfdmModelConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    /// Width of the hypernetwork embedding.
    pub embed: usize,
}

impl Default for OfdmModelConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            hidden_layers: 1,
            activation: Activation::Identity,
            embed: 16,
        }
    }
}

/// Receiver over [`correlation_features`](crate::env::ofdm::correlation_features) of `link`.
pub fn ofdm_model(link: &OfdmConfig, m: &OfdmModelConfig) -> Result<BaseModel> {
    if m.hidden_layers == 0 || m.hidden == 0 {
        return Err(Error::config("receiver needs at least one hidden layer"));
    }
    let k = link.k_sub;
    let mut layers = Vec::with_capacity(m.hidden_layers + 1);
    let mut channels = correlation_channels(link);
    for _ in 0..m.hidden_layers {
        layers.push(LayerSpec::conv1d(channels, m.hidden, 1, k, m.activation));
        channels = m.hidden;
    }
    layers.push(LayerSpec::conv1d(channels, 1, 1, k, Activation::Sigmoid));
    let trunk = Network::new(layers)?;
    let adapted: Vec<usize> = (0..m.hidden_layers).collect();
    BaseModel::new(trunk, &adapted)
}

/// Dense embedding of the received frame feeding one linear generator per adapter.
pub fn hypernet_for(model: &BaseModel, embed: usize) -> Result<HyperNet> {
    let e = Network::new(vec![LayerSpec::dense(
        model.input_len(),
        embed,
        Activation::Tanh,
    )])?;
    let gens = model
        .adapters()
        .iter()
        .map(|a| {
            Network::new(vec![LayerSpec::dense(
                embed,
                2 * a.channels,
                Activation::Identity,
            )])
        })
        .collect::<Result<Vec<_>>>()?;
    HyperNet::new(e, gens, model)
}

/// Tanh MLP scoring every (BS, beam) pair, adapters after each hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MmwaveModelConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub embed: usize,
}

impl Default for MmwaveModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            hidden_layers: 2,
            embed: 32,
        }
    }
}

pub fn mmwave_model(
    input_len: usize,
    output_len: usize,
    m: &MmwaveModelConfig,
) -> Result<BaseModel> {
    if m.hidden_layers == 0 || m.hidden == 0 {
        return Err(Error::config(
            "beam predictor needs at least one hidden layer",
        ));
    }
    let mut widths = vec![input_len];
    widths.extend(std::iter::repeat_n(m.hidden, m.hidden_layers));
    widths.push(output_len);
    let trunk = Network::mlp(&widths, Activation::Tanh, Activation::Sigmoid)?;
    let adapted: Vec<usize> = (0..m.hidden_layers).collect();
    BaseModel::new(trunk, &adapted)
}
