//! Geometric wideband mmWave channels, quantized beam codebooks and
//! overhead-discounted achievable rates.
//!
//! Every base station carries a uniform linear array of `m` antennas. A
//! [`Scenario`] is a street with `b` base stations and a few scatterers; each
//! user position along the street yields one [`MmwaveEnv`] (a list of clusters
//! per base station). Different scenario ids give different geometry, which is
//! what makes environments differ.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{EnvironmentDataset, TaskKind};
use crate::error::{Error, Result};
use crate::nn::Sample;
use crate::rng::{derive_seed, seeded};

/// Static sizes and link constants of the beamforming task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmwaveConfig {
    /// Base stations serving the user.
    pub bs: usize,
    /// Antennas per base station.
    pub antennas: usize,
    pub subcarriers: usize,
    /// Codebook size.
    pub n_tr: usize,
    /// Clusters per base station (line of sight plus scatterers).
    pub clusters: usize,
    /// Delay taps kept from the pulse.
    pub taps: usize,
    /// Phase-shifter resolution in bits.
    pub phase_bits: u32,
    /// SNR inside the rate expression.
    pub rate_snr_db: f64,
    /// SNR of the omni uplink pilot features.
    pub pilot_snr_db: f64,
    /// Beam coherence time in pilot durations.
    pub coherence_pilots: f64,
}

impl MmwaveConfig {
    pub fn desk() -> Self {
        Self {
            bs: 2,
            antennas: 16,
            subcarriers: 32,
            n_tr: 16,
            clusters: 3,
            taps: 16,
            phase_bits: 3,
            rate_snr_db: 0.0,
            pilot_snr_db: 20.0,
            coherence_pilots: 64.0,
        }
    }

    pub fn paper() -> Self {
        Self {
            antennas: 64,
            subcarriers: 64,
            n_tr: 64,
            taps: 32,
            coherence_pilots: 256.0,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bs == 0 || self.antennas == 0 || self.subcarriers == 0 || self.taps == 0 {
            return Err(Error::config("mmWave sizes must be positive"));
        }
        if self.clusters == 0 {
            return Err(Error::config("need at least one cluster"));
        }
        if self.n_tr == 0 {
            return Err(Error::usage("empty codebook"));
        }
        self.budget()?;
        Ok(())
    }

    pub fn budget(&self) -> Result<TimingBudget> {
        TimingBudget::new(self.coherence_pilots, 1.0, self.n_tr)
    }

    pub fn codebook(&self) -> Result<Codebook> {
        Codebook::quantized(self.antennas, self.n_tr, self.phase_bits)
    }

    pub fn rate_snr(&self) -> f64 {
        10f64.powf(self.rate_snr_db / 10.0)
    }

    /// Model input length: real and imaginary omni pilot per (subcarrier, BS).
    pub fn input_len(&self) -> usize {
        2 * self.bs * self.subcarriers
    }

    /// Model output length: one rate per beam per BS.
    pub fn output_len(&self) -> usize {
        self.bs * self.n_tr
    }
}

/// One representative ray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Delay in sampling periods.
    pub delay: f64,
    /// Azimuth from array broadside.
    pub theta: f64,
    /// Elevation.
    pub vartheta: f64,
    pub gain: Complex64,
}

/// Channel geometry for one user position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmwaveEnv {
    pub antennas: usize,
    pub subcarriers: usize,
    pub taps: usize,
    /// Clusters seen by each base station.
    pub clusters: Vec<Vec<Cluster>>,
    /// Path loss per base station.
    pub path_loss: Vec<f64>,
    /// Std of a random per-cluster phase added by [`gen_channel`].
    pub phase_jitter: f64,
}

impl MmwaveEnv {
    pub fn bs(&self) -> usize {
        self.clusters.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 || self.subcarriers == 0 || self.taps == 0 {
            return Err(Error::config("mmWave sizes must be positive"));
        }
        if self.clusters.is_empty() || self.clusters.len() != self.path_loss.len() {
            return Err(Error::config(
                "need one cluster list and one path loss per base station",
            ));
        }
        if self.clusters.iter().any(Vec::is_empty) {
            return Err(Error::config(
                "every base station needs at least one cluster",
            ));
        }
        if self.path_loss.iter().any(|&p| !(p.is_finite() && p > 0.0)) {
            return Err(Error::config("path loss must be positive"));
        }
        Ok(())
    }
}

/// ULA steering vector `exp(j pi m sin(theta) cos(vartheta))`.
pub fn array_response(m: usize, theta: f64, vartheta: f64) -> Vec<Complex64> {
    let psi = theta.sin() * vartheta.cos();
    (0..m)
        .map(|i| Complex64::from_polar(1.0, PI * i as f64 * psi))
        .collect()
}

/// `<a, b> = sum conj(a_i) b_i`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Band-limited pulse `sinc(t)` with `t` in sampling periods.
pub fn pulse(t: f64) -> f64 {
    if t.abs() < 1e-12 {
        1.0
    } else {
        (PI * t).sin() / (PI * t)
    }
}

/// Frequency-domain channels `h[b][k]`, each a length-`m` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Channels {
    pub bs: usize,
    pub subcarriers: usize,
    pub antennas: usize,
    values: Vec<Complex64>,
}

impl Channels {
    pub fn get(&self, b: usize, k: usize) -> &[Complex64] {
        let m = self.antennas;
        let start = (b * self.subcarriers + k) * m;
        &self.values[start..start + m]
    }

    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// `|<h_{k,b}, f>|^2` for every subcarrier.
    pub fn beam_gains(&self, b: usize, beam: &[Complex64]) -> Vec<f64> {
        (0..self.subcarriers)
            .map(|k| inner(self.get(b, k), beam).norm_sqr())
            .collect()
    }

    pub fn received_power(&self, b: usize, beam: &[Complex64]) -> f64 {
        self.beam_gains(b, beam).iter().sum()
    }
}

/// Delay-domain taps `h[b][d]`, each a length-`m` vector.
pub fn delay_taps(env: &MmwaveEnv, seed: u64) -> Result<Vec<Vec<Vec<Complex64>>>> {
    env.validate()?;
    let mut rng = seeded(derive_seed(seed, 0xbeef));
    let m = env.antennas;
    let mut out = Vec::with_capacity(env.bs());
    for (clusters, &rho) in env.clusters.iter().zip(&env.path_loss) {
        let scale = (m as f64 / rho).sqrt();
        let rays: Vec<(Complex64, f64, Vec<Complex64>)> = clusters
            .iter()
            .map(|c| {
                let jitter = if env.phase_jitter > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    Complex64::from_polar(1.0, env.phase_jitter * z)
                } else {
                    Complex64::new(1.0, 0.0)
                };
                (
                    c.gain * jitter,
                    c.delay,
                    array_response(m, c.theta, c.vartheta),
                )
            })
            .collect();
        let taps = (0..env.taps)
            .map(|d| {
                let mut h = vec![Complex64::new(0.0, 0.0); m];
                for (g, delay, a) in &rays {
                    let w = g * (scale * pulse(d as f64 - delay));
                    for (hi, ai) in h.iter_mut().zip(a) {
                        *hi += w * ai;
                    }
                }
                h
            })
            .collect();
        out.push(taps);
    }
    Ok(out)
}

/// Frequency channels of `env`. The seed only feeds the optional phase jitter.
pub fn gen_channel(env: &MmwaveEnv, seed: u64) -> Result<Channels> {
    let taps = delay_taps(env, seed)?;
    let (kk, m) = (env.subcarriers, env.antennas);
    // twiddles exp(-j 2 pi k d / K) indexed by (k d) mod K
    let twiddle: Vec<Complex64> = (0..kk)
        .map(|i| Complex64::from_polar(1.0, -2.0 * PI * i as f64 / kk as f64))
        .collect();
    let mut values = Vec::with_capacity(env.bs() * kk * m);
    for bs_taps in &taps {
        for k in 0..kk {
            let mut h = vec![Complex64::new(0.0, 0.0); m];
            for (d, tap) in bs_taps.iter().enumerate() {
                let w = twiddle[(k * d) % kk];
                for (hi, ti) in h.iter_mut().zip(tap) {
                    *hi += w * ti;
                }
            }
            values.extend(h);
        }
    }
    let ch = Channels {
        bs: env.bs(),
        subcarriers: kk,
        antennas: m,
        values,
    };
    if !ch.is_finite() {
        return Err(Error::Numeric {
            layer: 0,
            detail: "non-finite channel coefficient".into(),
        });
    }
    Ok(ch)
}

/// Analog beams with quantized phases and entries of modulus `1/sqrt(m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    antennas: usize,
    beams: Vec<Vec<Complex64>>,
}

impl Codebook {
    /// `n_tr` beams steered uniformly over `sin(theta)` in (-1, 1), phases
    /// rounded to `bits` bits.
    pub fn quantized(antennas: usize, n_tr: usize, bits: u32) -> Result<Self> {
        if n_tr == 0 {
            return Err(Error::usage("empty codebook"));
        }
        if antennas == 0 || bits == 0 || bits > 16 {
            return Err(Error::config(
                "codebook needs antennas > 0 and 1..=16 phase bits",
            ));
        }
        let step = 2.0 * PI / (1u32 << bits) as f64;
        let amp = 1.0 / (antennas as f64).sqrt();
        let beams = (0..n_tr)
            .map(|n| {
                let psi = -1.0 + (2 * n + 1) as f64 / n_tr as f64;
                (0..antennas)
                    .map(|i| {
                        let phase = (PI * i as f64 * psi / step).round() * step;
                        Complex64::from_polar(amp, phase)
                    })
                    .collect()
            })
            .collect();
        Ok(Self { antennas, beams })
    }

    /// Arbitrary beams; each entry must have modulus `1/sqrt(m)`.
    pub fn from_beams(beams: Vec<Vec<Complex64>>) -> Result<Self> {
        let antennas = beams.first().map_or(0, Vec::len);
        if beams.is_empty() {
            return Err(Error::usage("empty codebook"));
        }
        let amp = 1.0 / (antennas as f64).sqrt();
        for beam in &beams {
            if beam.len() != antennas || beam.iter().any(|c| (c.norm() - amp).abs() > 1e-12) {
                return Err(Error::config(
                    "beam entries must all have modulus 1/sqrt(M)",
                ));
            }
        }
        Ok(Self { antennas, beams })
    }

    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn beam(&self, i: usize) -> &[Complex64] {
        &self.beams[i]
    }

    pub fn beams(&self) -> &[Vec<Complex64>] {
        &self.beams
    }
}

/// Beam coherence time, pilot time and codebook size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingBudget {
    pub t_b: f64,
    pub t_p: f64,
    pub n_tr: usize,
}

impl TimingBudget {
    pub fn new(t_b: f64, t_p: f64, n_tr: usize) -> Result<Self> {
        if !(t_b > 0.0 && t_p > 0.0) {
            return Err(Error::config("timing constants must be positive"));
        }
        if 2.0 * t_p >= t_b {
            return Err(Error::config(
                "two pilot slots must fit in the beam coherence time",
            ));
        }
        Ok(Self { t_b, t_p, n_tr })
    }

    pub fn t_tr(&self) -> f64 {
        self.n_tr as f64 * self.t_p
    }

    /// Overhead factor of exhaustive beam training, zero once training fills the block.
    pub fn prefactor_baseline(&self) -> f64 {
        (1.0 - self.t_tr() / self.t_b).max(0.0)
    }

    /// Overhead factor of the learned path: one omni pilot plus one beamformed pilot.
    pub fn prefactor_dl(&self) -> f64 {
        1.0 - 2.0 * self.t_p / self.t_b
    }
}

/// `(1/K) sum_k log2(1 + snr * (sum_b |<h_{k,b}, f_b>|^2)^2)` without the prefactor.
pub fn spectral_efficiency(ch: &Channels, beams: &[&[Complex64]], snr: f64) -> Result<f64> {
    if beams.len() != ch.bs {
        return Err(Error::usage(format!(
            "{} beams for {} base stations",
            beams.len(),
            ch.bs
        )));
    }
    let mut power = vec![0.0; ch.subcarriers];
    for (b, beam) in beams.iter().enumerate() {
        if beam.len() != ch.antennas {
            return Err(Error::config("beam length differs from antenna count"));
        }
        for (p, g) in power.iter_mut().zip(ch.beam_gains(b, beam)) {
            *p += g;
        }
    }
    Ok(power
        .iter()
        .map(|p| (1.0 + snr * p * p).log2())
        .sum::<f64>()
        / ch.subcarriers as f64)
}

/// Index of the beam with the largest received power at base station `b`.
pub fn best_beam(ch: &Channels, codebook: &Codebook, b: usize) -> Result<usize> {
    if codebook.is_empty() {
        return Err(Error::usage("empty codebook"));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, beam) in codebook.beams().iter().enumerate() {
        let p = ch.received_power(b, beam);
        if p > best.1 {
            best = (i, p);
        }
    }
    Ok(best.0)
}

/// Exhaustive beam training per base station, then the discounted rate.
pub fn rate_baseline(
    ch: &Channels,
    codebook: &Codebook,
    budget: &TimingBudget,
    snr: f64,
) -> Result<(f64, Vec<usize>)> {
    let chosen = (0..ch.bs)
        .map(|b| best_beam(ch, codebook, b))
        .collect::<Result<Vec<_>>>()?;
    let beams: Vec<&[Complex64]> = chosen.iter().map(|&i| codebook.beam(i)).collect();
    let se = spectral_efficiency(ch, &beams, snr)?;
    Ok((budget.prefactor_baseline() * se, chosen))
}

/// Discounted rate of predicted beam indices.
pub fn rate_dl(
    ch: &Channels,
    codebook: &Codebook,
    beams: &[usize],
    budget: &TimingBudget,
    snr: f64,
) -> Result<f64> {
    if let Some(&bad) = beams.iter().find(|&&i| i >= codebook.len()) {
        return Err(Error::usage(format!("beam index {bad} outside codebook")));
    }
    let refs: Vec<&[Complex64]> = beams.iter().map(|&i| codebook.beam(i)).collect();
    Ok(budget.prefactor_dl() * spectral_efficiency(ch, &refs, snr)?)
}

/// Per-BS argmax over blocks of `n_tr` predicted scores.
pub fn beams_from_scores(scores: &[f64], n_tr: usize) -> Vec<usize> {
    scores
        .chunks(n_tr)
        .map(|block| {
            block
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map_or(0, |(i, _)| i)
        })
        .collect()
}

/// Street geometry for one environment id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: u64,
    pub config: MmwaveConfig,
    /// Street segment users move along, `[0, length]` on the x axis.
    pub length: f64,
    /// Base station (x, y, height).
    pub stations: Vec<[f64; 3]>,
    /// Scatterer (x, y) and reflection magnitude.
    pub scatterers: Vec<([f64; 2], f64)>,
    /// Wavelength that sets how fast ray phases rotate along the street.
    pub wavelength: f64,
    /// Delay (sampling periods) per unit of excess path length.
    pub delay_per_unit: f64,
}

const REFERENCE_DISTANCE: f64 = 8.0;

impl Scenario {
    /// Deterministic geometry for environment `id`.
    pub fn new(id: u64, config: MmwaveConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(derive_seed(id, 0x5ce0));
        let length = 40.0;
        let stations = (0..config.bs)
            .map(|b| {
                let side = if b % 2 == 0 { 1.0 } else { -1.0 };
                [
                    rng.random_range(0.0..length),
                    side * rng.random_range(6.0..14.0),
                    rng.random_range(2.0..6.0),
                ]
            })
            .collect();
        let scatterers = (0..config.clusters - 1)
            .map(|_| {
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                (
                    [
                        rng.random_range(-5.0..length + 5.0),
                        side * rng.random_range(3.0..12.0),
                    ],
                    rng.random_range(0.3..0.8),
                )
            })
            .collect();
        Ok(Self {
            id,
            config,
            length,
            stations,
            scatterers,
            wavelength: rng.random_range(5.0..9.0),
            delay_per_unit: 0.35,
        })
    }

    /// Same layout with positions and reflection strengths moved by up to
    /// `jitter` (absolute units, and relative for reflections).
    pub fn perturbed(&self, jitter: f64, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let mut out = self.clone();
        let mut nudge = |v: &mut f64| *v += rng.random_range(-jitter..=jitter);
        for s in &mut out.stations {
            nudge(&mut s[0]);
            nudge(&mut s[1]);
        }
        for (p, _) in &mut out.scatterers {
            nudge(&mut p[0]);
            nudge(&mut p[1]);
        }
        for (_, r) in &mut out.scatterers {
            *r *= 1.0 + rng.random_range(-0.1..=0.1);
        }
        out.id = derive_seed(self.id, seed);
        out
    }

    /// Channel geometry seen by a user at `x` along the street.
    pub fn env_at(&self, x: f64) -> MmwaveEnv {
        let user = [x, 0.0];
        let dist2 =
            |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let mut clusters = Vec::with_capacity(self.stations.len());
        let mut path_loss = Vec::with_capacity(self.stations.len());
        for st in &self.stations {
            let base = [st[0], st[1]];
            let los = dist2(base, user);
            let mut rays = Vec::with_capacity(self.config.clusters);
            let mut push = |toward: [f64; 2], length: f64, refl: f64| {
                let (dx, dy) = (toward[0] - base[0], toward[1] - base[1]);
                let horiz = (dx * dx + dy * dy).sqrt().max(1e-9);
                let theta = (dx / horiz).asin();
                let vartheta = (st[2] / horiz).atan();
                let amp = refl * REFERENCE_DISTANCE / length.max(1.0);
                rays.push(Cluster {
                    delay: 1.0 + self.delay_per_unit * (length - los),
                    theta,
                    vartheta,
                    gain: Complex64::from_polar(amp, -2.0 * PI * length / self.wavelength),
                });
            };
            push(user, los, 1.0);
            for &(s, refl) in &self.scatterers {
                push(s, dist2(base, s) + dist2(s, user), refl);
            }
            // drop rays that fall outside the tap window
            let max_delay = self.config.taps as f64 - 2.0;
            rays.retain(|r| r.delay <= max_delay);
            clusters.push(rays);
            path_loss
                .push(self.config.antennas as f64 * (los / REFERENCE_DISTANCE).powi(2).max(0.25));
        }
        MmwaveEnv {
            antennas: self.config.antennas,
            subcarriers: self.config.subcarriers,
            taps: self.config.taps,
            clusters,
            path_loss,
            phase_jitter: 0.0,
        }
    }

    /// `count` user positions drawn uniformly along the street.
    pub fn sample_users(&self, count: usize, seed: u64) -> Vec<MmwaveEnv> {
        let mut rng = seeded(derive_seed(seed, self.id));
        (0..count)
            .map(|_| self.env_at(rng.random_range(0.0..self.length)))
            .collect()
    }
}

/// Beamforming samples plus the channels needed to score predicted beams.
#[derive(Debug, Clone, PartialEq)]
pub struct BfDataset {
    pub data: EnvironmentDataset,
    pub channels: Vec<Channels>,
}

impl BfDataset {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn head(&self, n: usize) -> Result<Self> {
        Ok(Self {
            data: self.data.head(n)?,
            channels: self.channels[..n].to_vec(),
        })
    }
}

/// Omni pilot features: first-antenna response per (BS, subcarrier) plus noise,
/// real parts then imaginary parts.
pub fn pilot_features<R: Rng + ?Sized>(ch: &Channels, pilot_snr_db: f64, rng: &mut R) -> Vec<f64> {
    let sigma = (10f64.powf(-pilot_snr_db / 10.0) / 2.0).sqrt();
    let n = ch.bs * ch.subcarriers;
    let mut x = vec![0.0; 2 * n];
    for b in 0..ch.bs {
        for k in 0..ch.subcarriers {
            let i = b * ch.subcarriers + k;
            let h = ch.get(b, k)[0];
            let (nr, ni): (f64, f64) = if sigma > 0.0 {
                (StandardNormal.sample(rng), StandardNormal.sample(rng))
            } else {
                (0.0, 0.0)
            };
            x[i] = h.re + sigma * nr;
            x[n + i] = h.im + sigma * ni;
        }
    }
    x
}

/// Single-BS spectral efficiency of every beam, scaled so the best beam of
/// each base station scores 1.
pub fn beam_labels(ch: &Channels, codebook: &Codebook, snr: f64) -> Vec<f64> {
    let mut y = Vec::with_capacity(ch.bs * codebook.len());
    for b in 0..ch.bs {
        let rates: Vec<f64> = codebook
            .beams()
            .iter()
            .map(|f| {
                ch.beam_gains(b, f)
                    .iter()
                    .map(|g| (1.0 + snr * g * g).log2())
                    .sum::<f64>()
                    / ch.subcarriers as f64
            })
            .collect();
        let max = rates.iter().cloned().fold(0.0, f64::max);
        y.extend(rates.iter().map(|r| if max > 0.0 { r / max } else { 0.0 }));
    }
    y
}

/// One sample per user environment.
pub fn make_bf_dataset(
    envs: &[MmwaveEnv],
    codebook: &Codebook,
    config: &MmwaveConfig,
    seed: u64,
) -> Result<BfDataset> {
    if envs.is_empty() {
        return Err(Error::usage(
            "beamforming dataset needs at least one environment",
        ));
    }
    let mut rng = seeded(derive_seed(seed, 0xbf));
    let snr = config.rate_snr();
    let mut samples = Vec::with_capacity(envs.len());
    let mut channels = Vec::with_capacity(envs.len());
    for (i, env) in envs.iter().enumerate() {
        let ch = gen_channel(env, derive_seed(seed, i as u64))?;
        samples.push(Sample {
            x: pilot_features(&ch, config.pilot_snr_db, &mut rng),
            y: beam_labels(&ch, codebook, snr),
        });
        channels.push(ch);
    }
    Ok(BfDataset {
        data: EnvironmentDataset::new(TaskKind::Mmwave, config.subcarriers, config.n_tr, samples),
        channels,
    })
}
