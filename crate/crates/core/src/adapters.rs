//! Base model with channel-wise scale/shift adapters, and the hypernetwork
//! that generates adapter parameters from a received-signal sample.
//!
//! An adapter layer is an ordinary trunk layer whose weights `W_a` are scaled
//! per output channel by `alpha_k` and whose bias gets `beta_k` added:
//! `act(alpha ⊙ (W_a x) + b_a + beta)`. The concatenation of every
//! `(alpha_k, beta_k)` is the particular-parameter vector `v`; all trunk
//! weights (adapter layers included) form the shared vector `w`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    concat_layouts, LossKind, Modulation, Network, ParamVector, Role, Sample, Segment, Tape,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterSpec {
    /// Adapter index `k`.
    pub index: usize,
    /// Trunk layer the adapter modulates.
    pub layer: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseModel {
    trunk: Network,
    adapters: Vec<AdapterSpec>,
    /// Per trunk layer: start of its `(alpha, beta)` block inside `v`.
    v_offsets: Vec<Option<usize>>,
    v_len: usize,
}

impl BaseModel {
    /// Attach adapters to the given trunk layers (in increasing order).
    pub fn new(trunk: Network, adapter_layers: &[usize]) -> Result<Self> {
        let mut v_offsets = vec![None; trunk.layers().len()];
        let mut adapters = Vec::with_capacity(adapter_layers.len());
        let mut v_len = 0;
        let mut prev = None;
        for (k, &layer) in adapter_layers.iter().enumerate() {
            let spec = trunk.layers().get(layer).ok_or_else(|| {
                Error::config(format!("adapter {k} targets missing layer {layer}"))
            })?;
            if prev.is_some_and(|p| p >= layer) {
                return Err(Error::config("adapter layers must be strictly increasing"));
            }
            prev = Some(layer);
            let channels = spec.channels();
            v_offsets[layer] = Some(v_len);
            v_len += 2 * channels;
            adapters.push(AdapterSpec {
                index: k,
                layer,
                channels,
            });
        }
        Ok(Self {
            trunk,
            adapters,
            v_offsets,
            v_len,
        })
    }

    pub fn trunk(&self) -> &Network {
        &self.trunk
    }

    pub fn adapters(&self) -> &[AdapterSpec] {
        &self.adapters
    }

    pub fn input_len(&self) -> usize {
        self.trunk.input_len()
    }

    pub fn output_len(&self) -> usize {
        self.trunk.output_len()
    }

    pub fn w_len(&self) -> usize {
        self.trunk.param_count()
    }

    pub fn v_len(&self) -> usize {
        self.v_len
    }

    pub fn v_layout(&self) -> Vec<Segment> {
        let mut out = Vec::with_capacity(2 * self.adapters.len());
        for a in &self.adapters {
            out.push(Segment::new(a.index, Role::Scale, vec![a.channels]));
            out.push(Segment::new(a.index, Role::Shift, vec![a.channels]));
        }
        out
    }

    /// Weights plus biases of the adapted trunk layers, i.e. what
    /// conventional fine-tuning of those layers would update.
    pub fn adapter_weight_count(&self) -> usize {
        self.adapters
            .iter()
            .map(|a| self.trunk.layers()[a.layer].param_count())
            .sum()
    }

    pub fn init_w<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        self.trunk.init(rng)
    }

    /// `alpha = 1`, `beta = 0` for every adapter.
    pub fn identity_v(&self) -> ParamVector {
        let mut values = Vec::with_capacity(self.v_len);
        for a in &self.adapters {
            values.extend(std::iter::repeat_n(1.0, a.channels));
            values.extend(std::iter::repeat_n(0.0, a.channels));
        }
        ParamVector::new(values, self.v_layout()).expect("identity matches layout")
    }

    fn modulation<'a>(&'a self, v: &'a [f64]) -> Modulation<'a> {
        Modulation {
            v,
            offsets: &self.v_offsets,
        }
    }

    fn check(&self, w: &ParamVector, v: &ParamVector) -> Result<()> {
        self.trunk.check_params(w)?;
        if v.len() != self.v_len {
            return Err(Error::config(format!(
                "adapter vector has {} values, model expects {}",
                v.len(),
                self.v_len
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::config(format!(
                "model expects input of length {}, got {}",
                self.input_len(),
                x.len()
            )));
        }
        Ok(())
    }

    pub fn base_forward(&self, w: &ParamVector, v: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
        self.check(w, v)?;
        self.check_input(x)?;
        let mut tape = self.trunk.new_tape();
        self.trunk.forward_tape(
            w.as_slice(),
            Some(self.modulation(v.as_slice())),
            x,
            &mut tape,
        )?;
        Ok(tape.output().to_vec())
    }

    pub fn predict(
        &self,
        w: &ParamVector,
        v: &ParamVector,
        xs: &[Sample],
    ) -> Result<Vec<Vec<f64>>> {
        self.check(w, v)?;
        let mut tape = self.trunk.new_tape();
        let m = Some(self.modulation(v.as_slice()));
        xs.iter()
            .map(|s| {
                self.check_input(&s.x)?;
                self.trunk.forward_tape(w.as_slice(), m, &s.x, &mut tape)?;
                Ok(tape.output().to_vec())
            })
            .collect()
    }

    /// `f^phi(w, v) = sum_t loss(phi(w, v; x_t), y_t)`.
    pub fn loss(
        &self,
        w: &ParamVector,
        v: &ParamVector,
        batch: &[Sample],
        loss: LossKind,
    ) -> Result<f64> {
        self.check(w, v)?;
        let mut tape = self.trunk.new_tape();
        let m = Some(self.modulation(v.as_slice()));
        let mut total = 0.0;
        for s in batch {
            self.check_input(&s.x)?;
            self.trunk.forward_tape(w.as_slice(), m, &s.x, &mut tape)?;
            total += loss
                .value(tape.output(), &s.y)
                .map_err(|d| self.loss_error(d))?;
        }
        Ok(total)
    }

    fn loss_error(&self, detail: String) -> Error {
        Error::Numeric {
            layer: self.trunk.layers().len() - 1,
            detail,
        }
    }

    /// Loss and gradients with respect to `w` and `v` of the summed batch loss.
    pub fn grad(
        &self,
        w: &ParamVector,
        v: &ParamVector,
        batch: &[Sample],
        loss: LossKind,
    ) -> Result<(f64, ParamVector, ParamVector)> {
        if batch.is_empty() {
            return Err(Error::usage("gradient of an empty batch"));
        }
        self.check(w, v)?;
        let mut gw = w.zeros_like();
        let mut gv = v.zeros_like();
        let mut tape = self.trunk.new_tape();
        let mut d_out = vec![0.0; self.output_len()];
        let m = Some(self.modulation(v.as_slice()));
        let mut total = 0.0;
        for s in batch {
            self.check_input(&s.x)?;
            self.trunk.forward_tape(w.as_slice(), m, &s.x, &mut tape)?;
            total += loss
                .value(tape.output(), &s.y)
                .map_err(|d| self.loss_error(d))?;
            loss.gradient(tape.output(), &s.y, &mut d_out)
                .map_err(|d| self.loss_error(d))?;
            self.trunk.backward_tape(
                w.as_slice(),
                m,
                &mut tape,
                &d_out,
                gw.as_mut_slice(),
                Some(gv.as_mut_slice()),
                false,
            )?;
        }
        Ok((total, gw, gv))
    }

    /// Per-sample loss and its gradient with respect to `v` only.
    pub(crate) fn sample_grad_v(
        &self,
        w: &[f64],
        v: &[f64],
        sample: &Sample,
        loss: LossKind,
        scratch: &mut BaseScratch,
        gv: &mut [f64],
    ) -> Result<f64> {
        let m = Some(self.modulation(v));
        self.trunk
            .forward_tape(w, m, &sample.x, &mut scratch.tape)?;
        let value = loss
            .value(scratch.tape.output(), &sample.y)
            .map_err(|d| self.loss_error(d))?;
        loss.gradient(scratch.tape.output(), &sample.y, &mut scratch.d_out)
            .map_err(|d| self.loss_error(d))?;
        scratch.gw.fill(0.0);
        self.trunk.backward_tape(
            w,
            m,
            &mut scratch.tape,
            &scratch.d_out,
            &mut scratch.gw,
            Some(gv),
            false,
        )?;
        Ok(value)
    }

    pub(crate) fn scratch(&self) -> BaseScratch {
        BaseScratch {
            tape: self.trunk.new_tape(),
            d_out: vec![0.0; self.output_len()],
            gw: vec![0.0; self.w_len()],
        }
    }
}

pub(crate) struct BaseScratch {
    tape: Tape,
    d_out: Vec<f64>,
    gw: Vec<f64>,
}

/// Hypernetwork `varphi(u; x)`: a shared embedding followed by one parameter
/// generator per adapter, generator `k` emitting `alpha_k ⊕ beta_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperNet {
    embed: Network,
    generators: Vec<Network>,
    /// `(alpha, beta)` widths per generator.
    channels: Vec<usize>,
    /// Start of each generator's parameters inside `u`.
    gen_offsets: Vec<usize>,
    u_len: usize,
    v_layout: Vec<Segment>,
}

impl HyperNet {
    pub fn new(embed: Network, generators: Vec<Network>, model: &BaseModel) -> Result<Self> {
        if generators.len() != model.adapters().len() {
            return Err(Error::config(format!(
                "{} generators for {} adapters",
                generators.len(),
                model.adapters().len()
            )));
        }
        let mut gen_offsets = Vec::with_capacity(generators.len());
        let mut u_len = embed.param_count();
        for (g, a) in generators.iter().zip(model.adapters()) {
            if g.input_len() != embed.output_len() {
                return Err(Error::config(format!(
                    "generator {} expects {} inputs, embedding emits {}",
                    a.index,
                    g.input_len(),
                    embed.output_len()
                )));
            }
            if g.output_len() != 2 * a.channels {
                return Err(Error::config(format!(
                    "generator {} emits {} values, adapter needs {}",
                    a.index,
                    g.output_len(),
                    2 * a.channels
                )));
            }
            gen_offsets.push(u_len);
            u_len += g.param_count();
        }
        Ok(Self {
            channels: model.adapters().iter().map(|a| a.channels).collect(),
            embed,
            generators,
            gen_offsets,
            u_len,
            v_layout: model.v_layout(),
        })
    }

    pub fn embed(&self) -> &Network {
        &self.embed
    }

    pub fn generators(&self) -> &[Network] {
        &self.generators
    }

    pub fn input_len(&self) -> usize {
        self.embed.input_len()
    }

    pub fn u_len(&self) -> usize {
        self.u_len
    }

    pub fn v_len(&self) -> usize {
        self.channels.iter().map(|c| 2 * c).sum()
    }

    pub fn u_layout(&self) -> Vec<Segment> {
        let mut parts = vec![self.embed.layout()];
        parts.extend(self.generators.iter().map(Network::layout));
        concat_layouts(&parts)
    }

    /// Glorot weights; generator biases start at the adapter identity
    /// (`alpha = 1`, `beta = 0`).
    pub fn init_u<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut values = self.embed.init(rng).into_values();
        for (g, &c) in self.generators.iter().zip(&self.channels) {
            let mut p = g.init(rng).into_values();
            let last = g.layers().len() - 1;
            let bias_start = g.layer_offset(last) + g.layers()[last].weight_count();
            for b in &mut p[bias_start..bias_start + c] {
                *b = 1.0;
            }
            values.extend(p);
        }
        ParamVector::new(values, self.u_layout()).expect("layout built from the networks")
    }

    fn check_u(&self, u: &ParamVector) -> Result<()> {
        if u.len() != self.u_len {
            return Err(Error::config(format!(
                "hypernetwork has {} parameters, got {}",
                self.u_len,
                u.len()
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::config(format!(
                "hypernetwork expects input of length {}, got {}",
                self.input_len(),
                x.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn scratch(&self) -> HyperScratch {
        HyperScratch {
            embed: self.embed.new_tape(),
            gens: self.generators.iter().map(Network::new_tape).collect(),
            d_embed: vec![0.0; self.embed.output_len()],
            v: vec![0.0; self.v_len()],
            d_v: vec![0.0; self.v_len()],
        }
    }

    /// Forward into `scratch.v`.
    pub(crate) fn forward_into(
        &self,
        u: &[f64],
        x: &[f64],
        scratch: &mut HyperScratch,
    ) -> Result<()> {
        let embed_len = self.embed.param_count();
        self.embed
            .forward_tape(&u[..embed_len], None, x, &mut scratch.embed)?;
        let e = scratch.embed.output();
        let mut start = 0;
        for (k, g) in self.generators.iter().enumerate() {
            let off = self.gen_offsets[k];
            g.forward_tape(
                &u[off..off + g.param_count()],
                None,
                e,
                &mut scratch.gens[k],
            )?;
            let out = scratch.gens[k].output();
            scratch.v[start..start + out.len()].copy_from_slice(out);
            start += out.len();
        }
        Ok(())
    }

    /// Backpropagate `scratch.d_v` through the last forward pass.
    pub(crate) fn backward_from(
        &self,
        u: &[f64],
        scratch: &mut HyperScratch,
        grad_u: &mut [f64],
    ) -> Result<()> {
        let embed_len = self.embed.param_count();
        scratch.d_embed.fill(0.0);
        let mut start = 0;
        for (k, g) in self.generators.iter().enumerate() {
            let off = self.gen_offsets[k];
            let n = g.output_len();
            let d_in = g.backward_tape(
                &u[off..off + g.param_count()],
                None,
                &mut scratch.gens[k],
                &scratch.d_v[start..start + n],
                &mut grad_u[off..off + g.param_count()],
                None,
                true,
            )?;
            for (a, b) in scratch.d_embed.iter_mut().zip(d_in) {
                *a += b;
            }
            start += n;
        }
        self.embed.backward_tape(
            &u[..embed_len],
            None,
            &mut scratch.embed,
            &scratch.d_embed,
            &mut grad_u[..embed_len],
            None,
            false,
        )?;
        Ok(())
    }

    pub fn hyper_forward(&self, u: &ParamVector, x: &[f64]) -> Result<ParamVector> {
        self.check_u(u)?;
        self.check_input(x)?;
        let mut s = self.scratch();
        self.forward_into(u.as_slice(), x, &mut s)?;
        ParamVector::new(s.v, self.v_layout.clone())
    }

    /// `(1/d) sum_t varphi(u; x_t)`.
    pub fn v_average(&self, u: &ParamVector, samples: &[Sample]) -> Result<ParamVector> {
        let sum = self.v_sum(u, samples)?;
        let mut out = sum;
        out.scale(1.0 / samples.len() as f64);
        Ok(out)
    }

    /// `sum_t varphi(u; x_t)`.
    pub fn v_sum(&self, u: &ParamVector, samples: &[Sample]) -> Result<ParamVector> {
        if samples.is_empty() {
            return Err(Error::usage(
                "hypernetwork average over an empty sample set",
            ));
        }
        self.check_u(u)?;
        let mut s = self.scratch();
        let mut acc = vec![0.0; self.v_len()];
        for smp in samples {
            self.check_input(&smp.x)?;
            self.forward_into(u.as_slice(), &smp.x, &mut s)?;
            for (a, b) in acc.iter_mut().zip(&s.v) {
                *a += b;
            }
        }
        ParamVector::new(acc, self.v_layout.clone())
    }

    /// `f^varphi(u, v) = sum_t ||varphi(u; x_t) - v||^2`.
    pub fn regression_loss(
        &self,
        u: &ParamVector,
        samples: &[Sample],
        v: &ParamVector,
    ) -> Result<f64> {
        self.check_u(u)?;
        let mut s = self.scratch();
        let mut total = 0.0;
        for smp in samples {
            self.check_input(&smp.x)?;
            self.forward_into(u.as_slice(), &smp.x, &mut s)?;
            total +=
                s.v.iter()
                    .zip(v.as_slice())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
        }
        Ok(total)
    }

    /// `f^varphi` together with its gradients in `u` and in `v`.
    pub fn regression_grad(
        &self,
        u: &ParamVector,
        samples: &[Sample],
        v: &ParamVector,
    ) -> Result<(f64, ParamVector, ParamVector)> {
        self.check_u(u)?;
        if v.len() != self.v_len() {
            return Err(Error::config(
                "adapter vector does not match hypernetwork output",
            ));
        }
        let mut s = self.scratch();
        let mut gu = u.zeros_like();
        let mut gv = v.zeros_like();
        let mut total = 0.0;
        for smp in samples {
            self.check_input(&smp.x)?;
            self.forward_into(u.as_slice(), &smp.x, &mut s)?;
            for ((d, &out), &target) in s.d_v.iter_mut().zip(&s.v).zip(v.as_slice()) {
                let r = out - target;
                total += r * r;
                *d = 2.0 * r;
            }
            for (g, d) in gv.as_mut_slice().iter_mut().zip(&s.d_v) {
                *g -= d;
            }
            self.backward_from(u.as_slice(), &mut s, gu.as_mut_slice())?;
        }
        Ok((total, gu, gv))
    }
}

pub(crate) struct HyperScratch {
    embed: Tape,
    gens: Vec<Tape>,
    d_embed: Vec<f64>,
    pub v: Vec<f64>,
    pub d_v: Vec<f64>,
}
