//! Dense and circular 1-D convolution stacks with hand-written backprop.
//!
//! Parameters are laid out layer by layer, weights first then biases. Dense
//! weights are `[out][in]`, convolution weights `[out][in][kernel]`. Activations
//! are flattened channel-major (`[channel][position]`).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::LossKind;
use super::param::{ParamVector, Role, Segment};
use super::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerKind {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// "Same"-length convolution with circular padding; `kernel` must be odd.
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        length: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense { inputs, outputs },
            activation,
        }
    }

    pub fn conv1d(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        length: usize,
        activation: Activation,
    ) -> Self {
        Self {
            kind: LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
                length,
            },
            activation,
        }
    }

    pub fn input_len(&self) -> usize {
        match self.kind {
            LayerKind::Dense { inputs, .. } => inputs,
            LayerKind::Conv1d {
                in_channels,
                length,
                ..
            } => in_channels * length,
        }
    }

    pub fn output_len(&self) -> usize {
        self.channels() * self.positions()
    }

    /// Output channels (dense units count as channels of length one).
    pub fn channels(&self) -> usize {
        match self.kind {
            LayerKind::Dense { outputs, .. } => outputs,
            LayerKind::Conv1d { out_channels, .. } => out_channels,
        }
    }

    pub fn positions(&self) -> usize {
        match self.kind {
            LayerKind::Dense { .. } => 1,
            LayerKind::Conv1d { length, .. } => length,
        }
    }

    pub fn weight_count(&self) -> usize {
        match self.kind {
            LayerKind::Dense { inputs, outputs } => inputs * outputs,
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => in_channels * out_channels * kernel,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.channels()
    }

    fn fans(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Dense { inputs, outputs } => (inputs, outputs),
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (in_channels * kernel, out_channels * kernel),
        }
    }

    fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Dense { inputs, outputs } => vec![outputs, inputs],
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![out_channels, in_channels, kernel],
        }
    }
}

/// Per-layer channel modulation read from an adapter vector.
///
/// `offsets[layer] = Some(start)` means the layer's pre-activation becomes
/// `scale ⊙ (W x) + bias + shift` with `scale = v[start..start+C]` and
/// `shift = v[start+C..start+2C]`.
#[derive(Clone, Copy)]
pub(crate) struct Modulation<'a> {
    pub v: &'a [f64],
    pub offsets: &'a [Option<usize>],
}

impl<'a> Modulation<'a> {
    fn at(&self, layer: usize) -> Option<usize> {
        self.offsets.get(layer).copied().flatten()
    }
}

/// Activations recorded during a forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Tape {
    /// `acts[l]` is the input of layer `l`; the last entry is the output.
    acts: Vec<Vec<f64>>,
    /// `W x` before bias, scale and shift.
    lin: Vec<Vec<f64>>,
    d_act: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("tape has at least the input")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<LayerSpec>,
    offsets: Vec<usize>,
    total: usize,
}

impl Network {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if let LayerKind::Conv1d { kernel, length, .. } = l.kind {
                if kernel % 2 == 0 || kernel == 0 {
                    return Err(Error::config(format!("layer {i}: kernel must be odd")));
                }
                if length == 0 {
                    return Err(Error::config(format!("layer {i}: zero length")));
                }
            }
            if l.input_len() == 0 || l.output_len() == 0 {
                return Err(Error::config(format!("layer {i}: zero width")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_len() != pair[1].input_len() {
                return Err(Error::config(format!(
                    "layer {} emits {} values but layer {} expects {}",
                    i,
                    pair[0].output_len(),
                    i + 1,
                    pair[1].input_len()
                )));
            }
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.param_count();
        }
        Ok(Self {
            layers,
            offsets,
            total,
        })
    }

    /// Dense stack `widths[0] -> widths[1] -> ...`; `hidden` on all but the last layer.
    pub fn mlp(widths: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::config("mlp needs at least input and output widths"));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                LayerSpec::dense(widths[i], widths[i + 1], act)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].input_len()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().unwrap().output_len()
    }

    pub fn param_count(&self) -> usize {
        self.total
    }

    pub(crate) fn layer_offset(&self, layer: usize) -> usize {
        self.offsets[layer]
    }

    pub fn layout(&self) -> Vec<Segment> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            out.push(Segment::new(i, Role::Weight, l.weight_shape()));
            out.push(Segment::new(i, Role::Bias, vec![l.channels()]));
        }
        out
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut values = vec![0.0; self.total];
        for (l, off) in self.layers.iter().zip(&self.offsets) {
            let (fan_in, fan_out) = l.fans();
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut values[*off..off + l.weight_count()] {
                *w = rng.random_range(-a..a);
            }
        }
        ParamVector::new(values, self.layout()).expect("layout built from the network")
    }

    pub(crate) fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.total {
            return Err(Error::config(format!(
                "network has {} parameters, got {}",
                self.total,
                params.len()
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::config(format!(
                "network expects input of length {}, got {}",
                self.input_len(),
                x.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn new_tape(&self) -> Tape {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(vec![0.0; self.input_len()]);
        for l in &self.layers {
            acts.push(vec![0.0; l.output_len()]);
        }
        let lin = self
            .layers
            .iter()
            .map(|l| vec![0.0; l.output_len()])
            .collect();
        let mut d_act = Vec::with_capacity(self.layers.len() + 1);
        d_act.push(vec![0.0; self.input_len()]);
        for l in &self.layers {
            d_act.push(vec![0.0; l.output_len()]);
        }
        Tape { acts, lin, d_act }
    }

    pub fn forward(&self, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        self.check_input(x)?;
        let mut tape = self.new_tape();
        self.forward_tape(params.as_slice(), None, x, &mut tape)?;
        Ok(tape.output().to_vec())
    }

    pub(crate) fn forward_tape(
        &self,
        params: &[f64],
        modulation: Option<Modulation<'_>>,
        x: &[f64],
        tape: &mut Tape,
    ) -> Result<()> {
        tape.acts[0].copy_from_slice(x);
        for (li, layer) in self.layers.iter().enumerate() {
            let off = self.offsets[li];
            let w = &params[off..off + layer.weight_count()];
            let b = &params[off + layer.weight_count()..off + layer.param_count()];
            let (head, tail) = tape.acts.split_at_mut(li + 1);
            let input = &head[li];
            let out = &mut tail[0];
            let lin = &mut tape.lin[li];
            linear_forward(layer, w, input, lin);

            let ch = layer.channels();
            let pos = layer.positions();
            let m = modulation.and_then(|m| m.at(li).map(|s| (m.v, s)));
            for c in 0..ch {
                let (scale, shift) = match m {
                    Some((v, s)) => (v[s + c], v[s + ch + c]),
                    None => (1.0, 0.0),
                };
                let bias = b[c] + shift;
                for p in 0..pos {
                    let k = c * pos + p;
                    out[k] = layer.activation.apply(scale * lin[k] + bias);
                }
            }
            if let Some(bad) = out.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer: li,
                    detail: format!("output {bad} is not finite"),
                });
            }
        }
        Ok(())
    }

    /// Backpropagate `d_out` through a recorded tape, accumulating into
    /// `grad_params` and, when given, the modulation gradient. With
    /// `input_grad` the gradient with respect to the network input is left in
    /// the tape and returned; otherwise the returned slice is all zeros.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward_tape<'t>(
        &self,
        params: &[f64],
        modulation: Option<Modulation<'_>>,
        tape: &'t mut Tape,
        d_out: &[f64],
        grad_params: &mut [f64],
        mut grad_mod: Option<&mut [f64]>,
        input_grad: bool,
    ) -> Result<&'t [f64]> {
        let last = self.layers.len();
        tape.d_act[last].copy_from_slice(d_out);
        for li in (0..last).rev() {
            let layer = &self.layers[li];
            let off = self.offsets[li];
            let wc = layer.weight_count();
            let ch = layer.channels();
            let pos = layer.positions();
            let m = modulation.and_then(|m| m.at(li).map(|s| (m.v, s)));

            // d pre-activation, in place over d_act[li + 1]
            let (d_lo, d_hi) = tape.d_act.split_at_mut(li + 1);
            let d_pre = &mut d_hi[0];
            let out = &tape.acts[li + 1];
            for (d, &y) in d_pre.iter_mut().zip(out.iter()) {
                *d *= layer.activation.derivative_from_output(y);
            }
            let lin = &tape.lin[li];
            let gb = &mut grad_params[off + wc..off + wc + ch];
            for c in 0..ch {
                let row = &d_pre[c * pos..(c + 1) * pos];
                let s: f64 = row.iter().sum();
                gb[c] += s;
                if let Some((v, start)) = m {
                    if let Some(g) = grad_mod.as_deref_mut() {
                        let ds: f64 = row
                            .iter()
                            .zip(&lin[c * pos..(c + 1) * pos])
                            .map(|(a, b)| a * b)
                            .sum();
                        g[start + c] += ds;
                        g[start + ch + c] += s;
                    }
                    let scale = v[start + c];
                    for d in &mut d_pre[c * pos..(c + 1) * pos] {
                        *d *= scale;
                    }
                }
            }
            if let Some(bad) = d_pre.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer: li,
                    detail: format!("gradient {bad} is not finite"),
                });
            }
            // d_pre now holds d(W x)
            let w = &params[off..off + wc];
            let gw = &mut grad_params[off..off + wc];
            let dx = if li > 0 || input_grad {
                Some(&mut d_lo[li][..])
            } else {
                None
            };
            linear_backward(layer, w, &tape.acts[li], d_pre, gw, dx);
        }
        if !input_grad {
            tape.d_act[0].fill(0.0);
        }
        Ok(&tape.d_act[0])
    }

    /// Summed loss over the batch.
    pub fn loss_eval(&self, params: &ParamVector, batch: &[Sample], loss: LossKind) -> Result<f64> {
        self.check_params(params)?;
        let mut tape = self.new_tape();
        let mut total = 0.0;
        for s in batch {
            self.check_input(&s.x)?;
            self.forward_tape(params.as_slice(), None, &s.x, &mut tape)?;
            total += loss
                .value(tape.output(), &s.y)
                .map_err(|detail| Error::Numeric {
                    layer: self.layers.len() - 1,
                    detail,
                })?;
        }
        Ok(total)
    }

    /// Gradient of the summed batch loss with respect to every parameter.
    pub fn grad(
        &self,
        params: &ParamVector,
        batch: &[Sample],
        loss: LossKind,
    ) -> Result<ParamVector> {
        if batch.is_empty() {
            return Err(Error::usage("gradient of an empty batch"));
        }
        self.check_params(params)?;
        let mut g = params.zeros_like();
        let mut tape = self.new_tape();
        let mut d_out = vec![0.0; self.output_len()];
        for s in batch {
            self.check_input(&s.x)?;
            self.forward_tape(params.as_slice(), None, &s.x, &mut tape)?;
            loss.gradient(tape.output(), &s.y, &mut d_out)
                .map_err(|detail| Error::Numeric {
                    layer: self.layers.len() - 1,
                    detail,
                })?;
            self.backward_tape(
                params.as_slice(),
                None,
                &mut tape,
                &d_out,
                g.as_mut_slice(),
                None,
                false,
            )?;
        }
        Ok(g)
    }

    /// Central-difference estimate of [`Network::grad`].
    pub fn finite_diff(
        &self,
        params: &ParamVector,
        batch: &[Sample],
        loss: LossKind,
        step: f64,
    ) -> Result<ParamVector> {
        let g = super::central_difference(
            |p| self.loss_eval(&params.with_values(p.to_vec()), batch, loss),
            params.as_slice(),
            step,
        )?;
        Ok(params.with_values(g))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..n {
        s += a[j] * b[j];
    }
    s
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

/// `y[p] += alpha * x[(p + shift) mod len]`
#[inline]
fn axpy_circular(y: &mut [f64], alpha: f64, x: &[f64], shift: usize) {
    let n = y.len();
    let split = n - shift;
    axpy(&mut y[..split], alpha, &x[shift..]);
    axpy(&mut y[split..], alpha, &x[..shift]);
}

/// `sum_p y[p] * x[(p + shift) mod len]`
#[inline]
fn dot_circular(y: &[f64], x: &[f64], shift: usize) -> f64 {
    let n = y.len();
    let split = n - shift;
    dot(&y[..split], &x[shift..]) + dot(&y[split..], &x[..shift])
}

#[inline]
fn conv_shift(j: usize, kernel: usize, length: usize) -> usize {
    let half = kernel / 2;
    (j + length - half % length) % length
}

fn linear_forward(layer: &LayerSpec, w: &[f64], x: &[f64], lin: &mut [f64]) {
    match layer.kind {
        LayerKind::Dense { inputs, outputs } => {
            for o in 0..outputs {
                lin[o] = dot(&w[o * inputs..(o + 1) * inputs], x);
            }
        }
        LayerKind::Conv1d {
            in_channels,
            out_channels,
            kernel: 1,
            length,
        } => {
            // per-position dense map; sparse inputs skip their column
            lin.fill(0.0);
            for c in 0..in_channels {
                for (p, &xv) in x[c * length..(c + 1) * length].iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    for o in 0..out_channels {
                        lin[o * length + p] += w[o * in_channels + c] * xv;
                    }
                }
            }
        }
        LayerKind::Conv1d {
            in_channels,
            out_channels,
            kernel,
            length,
        } => {
            lin.fill(0.0);
            for o in 0..out_channels {
                let out = &mut lin[o * length..(o + 1) * length];
                for c in 0..in_channels {
                    let xc = &x[c * length..(c + 1) * length];
                    for j in 0..kernel {
                        let wv = w[(o * in_channels + c) * kernel + j];
                        axpy_circular(out, wv, xc, conv_shift(j, kernel, length));
                    }
                }
            }
        }
    }
}

/// Accumulates the weight gradient into `gw` and, when `dx` is given,
/// overwrites it with the input gradient.
fn linear_backward(
    layer: &LayerSpec,
    w: &[f64],
    x: &[f64],
    d_lin: &[f64],
    gw: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    if let Some(dx) = dx.as_deref_mut() {
        dx.fill(0.0);
    }
    match layer.kind {
        LayerKind::Dense { inputs, outputs } => {
            for o in 0..outputs {
                let d = d_lin[o];
                if d == 0.0 {
                    continue;
                }
                axpy(&mut gw[o * inputs..(o + 1) * inputs], d, x);
                if let Some(dx) = dx.as_deref_mut() {
                    axpy(dx, d, &w[o * inputs..(o + 1) * inputs]);
                }
            }
        }
        LayerKind::Conv1d {
            in_channels,
            out_channels,
            kernel: 1,
            length,
        } => {
            for c in 0..in_channels {
                for (p, &xv) in x[c * length..(c + 1) * length].iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    for o in 0..out_channels {
                        gw[o * in_channels + c] += d_lin[o * length + p] * xv;
                    }
                }
            }
            if let Some(dx) = dx {
                for o in 0..out_channels {
                    let d = &d_lin[o * length..(o + 1) * length];
                    for c in 0..in_channels {
                        axpy(
                            &mut dx[c * length..(c + 1) * length],
                            w[o * in_channels + c],
                            d,
                        );
                    }
                }
            }
        }
        LayerKind::Conv1d {
            in_channels,
            out_channels,
            kernel,
            length,
        } => {
            for o in 0..out_channels {
                let d = &d_lin[o * length..(o + 1) * length];
                for c in 0..in_channels {
                    let xc = &x[c * length..(c + 1) * length];
                    for j in 0..kernel {
                        let shift = conv_shift(j, kernel, length);
                        let idx = (o * in_channels + c) * kernel + j;
                        gw[idx] += dot_circular(d, xc, shift);
                        if let Some(dx) = dx.as_deref_mut() {
                            // dx[(p + shift) mod L] += w d[p]  <=>  dx[q] += w d[(q - shift) mod L]
                            let back = (length - shift) % length;
                            axpy_circular(&mut dx[c * length..(c + 1) * length], w[idx], d, back);
                        }
                    }
                }
            }
        }
    }
}
