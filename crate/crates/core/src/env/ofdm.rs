//! Symbol-spaced multipath OFDM environments.
//!
//! An environment is a power delay profile. Each frame draws fresh Rayleigh
//! taps `sqrt(P_l) * alpha_l` with `E|alpha_l|^2 = 1`, passes a pilot block and
//! a BPSK data block through a cyclic-prefix OFDM link and adds white Gaussian
//! noise. The channel stays fixed for the whole frame.
//!
//! Model inputs are four planes of `k_sub` values each: real and imaginary
//! parts of the received pilot block, then of the received data block.
//! Labels are the `k_sub` transmitted data bits.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::dataset::{EnvironmentDataset, TaskKind};
use crate::error::{Error, Result};
use crate::nn::Sample;
use crate::rng::{derive_seed, seeded};

/// Largest delay (in samples) drawn for training-family environments.
pub const DEFAULT_MAX_DELAY: usize = 3;

/// Power delay profile: strictly increasing delays with powers summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pdp {
    delays: Vec<usize>,
    powers: Vec<f64>,
}

impl Pdp {
    pub fn new(delays: Vec<usize>, powers: Vec<f64>) -> Result<Self> {
        if delays.is_empty() || delays.len() != powers.len() {
            return Err(Error::config(
                "delay and power lists must be nonempty and equally long",
            ));
        }
        if delays.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("delays must be strictly increasing"));
        }
        if powers.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::config("powers must be finite and nonnegative"));
        }
        let total: f64 = powers.iter().sum();
        if total <= 0.0 {
            return Err(Error::config("power delay profile has zero total power"));
        }
        let mut powers: Vec<f64> = powers.iter().map(|p| p / total).collect();
        // push the rounding residue onto the strongest path
        let residue = 1.0 - powers.iter().sum::<f64>();
        let strongest = powers
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        powers[strongest] += residue;
        Ok(Self { delays, powers })
    }

    pub fn delays(&self) -> &[usize] {
        &self.delays
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn paths(&self) -> usize {
        self.delays.len()
    }

    pub fn max_delay(&self) -> usize {
        *self.delays.last().unwrap()
    }

    /// RMS delay spread in samples.
    pub fn delay_spread(&self) -> f64 {
        let mean: f64 = self
            .delays
            .iter()
            .zip(&self.powers)
            .map(|(&d, p)| d as f64 * p)
            .sum();
        let second: f64 = self
            .delays
            .iter()
            .zip(&self.powers)
            .map(|(&d, p)| (d as f64).powi(2) * p)
            .sum();
        (second - mean * mean).max(0.0).sqrt()
    }
}

/// Random normalized PDP with `paths` taps; the first tap sits at delay zero.
pub fn sample_environment(seed: u64, paths: usize) -> Result<Pdp> {
    sample_with_support(
        seed,
        paths,
        1,
        DEFAULT_MAX_DELAY.max(paths.saturating_sub(1)),
        None,
        0.4..1.5,
    )
}

/// Like [`sample_environment`] with delays in `1..=max_delay`, pairwise
/// distinct modulo `pilots`. A comb of `pilots` evenly spaced pilots sees
/// delays that agree modulo `pilots` as the same tap, so this keeps the
/// channel identifiable from the pilots once the delays are known.
pub fn sample_resolvable_environment(
    seed: u64,
    paths: usize,
    max_delay: usize,
    pilots: usize,
) -> Result<Pdp> {
    sample_with_support(seed, paths, 1, max_delay, Some(pilots), 1.5..4.0)
}

/// A PDP close to `base`: same delays, every power jittered by at most `jitter` (relative).
pub fn perturb_environment(base: &Pdp, jitter: f64, seed: u64) -> Result<Pdp> {
    if !(0.0..1.0).contains(&jitter) {
        return Err(Error::usage("jitter must lie in [0, 1)"));
    }
    let mut rng = seeded(seed);
    let powers = base
        .powers
        .iter()
        .map(|p| p * (1.0 + rng.random_range(-jitter..=jitter)))
        .collect();
    Pdp::new(base.delays.clone(), powers)
}

/// A flat-profile PDP on `1..=max_delay` whose delay set matches no
/// training environment, with delays pairwise distinct modulo `pilots`.
/// Training environments decay steeply, so this one spreads its power over
/// delays they barely use.
pub fn dissimilar_environment(
    seed: u64,
    paths: usize,
    training: &[Pdp],
    max_delay: usize,
    pilots: usize,
) -> Result<Pdp> {
    for attempt in 0..1000 {
        let pdp = sample_with_support(
            derive_seed(seed, attempt),
            paths,
            1,
            max_delay,
            Some(pilots),
            6.0..12.0,
        )?;
        if training.iter().all(|t| t.delays() != pdp.delays()) {
            return Ok(pdp);
        }
    }
    Err(Error::usage(format!(
        "no unused delay support for {paths} paths within {max_delay} samples"
    )))
}

fn sample_with_support(
    seed: u64,
    paths: usize,
    lo: usize,
    hi: usize,
    distinct_mod: Option<usize>,
    decay: std::ops::Range<f64>,
) -> Result<Pdp> {
    if paths == 0 {
        return Err(Error::usage(
            "a power delay profile needs at least one path",
        ));
    }
    if distinct_mod == Some(0) {
        return Err(Error::usage("residue modulus must be positive"));
    }
    let mut rng = seeded(seed);
    let residue = |d: usize| distinct_mod.map_or(d, |m| d % m);
    let mut candidates: Vec<usize> = (lo.max(1)..=hi)
        .filter(|&d| residue(d) != residue(0))
        .collect();
    let mut delays = vec![0];
    for _ in 1..paths {
        if candidates.is_empty() {
            return Err(Error::usage(format!(
                "cannot place {paths} distinguishable paths in delay support [{lo}, {hi}]"
            )));
        }
        let d = candidates.swap_remove(rng.random_range(0..candidates.len()));
        candidates.retain(|&c| residue(c) != residue(d));
        // keep the draw order independent of the retain above
        candidates.sort_unstable();
        delays.push(d);
    }
    delays.sort_unstable();
    let rate = rng.random_range(decay);
    let powers = delays
        .iter()
        .map(|&d| (-(d as f64) / rate).exp() * rng.random_range(0.6..1.4))
        .collect();
    Pdp::new(delays, powers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfdmConfig {
    pub k_sub: usize,
    pub pilots: usize,
    pub cp_len: usize,
}

impl OfdmConfig {
    pub fn new(k_sub: usize, pilots: usize, cp_len: usize) -> Result<Self> {
        if k_sub == 0 || pilots == 0 || pilots > k_sub {
            return Err(Error::config(format!(
                "need 1 <= pilots <= k_sub, got {pilots} pilots for {k_sub} subcarriers"
            )));
        }
        Ok(Self {
            k_sub,
            pilots,
            cp_len,
        })
    }

    /// Comb pilots centred in equal slices of the band.
    pub fn pilot_positions(&self) -> Vec<usize> {
        (0..self.pilots)
            .map(|i| ((2 * i + 1) * self.k_sub) / (2 * self.pilots))
            .collect()
    }

    pub fn input_len(&self) -> usize {
        4 * self.k_sub
    }
}

/// One transmitted frame: a pilot block and a BPSK data block.
#[derive(Debug, Clone, PartialEq)]
pub struct OfdmFrame {
    pub k_sub: usize,
    pub pilot_positions: Vec<usize>,
    pub pilot_values: Vec<Complex64>,
    /// Transmitted bits, one per subcarrier of the data block.
    pub bits: Vec<u8>,
}

impl OfdmFrame {
    pub fn random<R: Rng + ?Sized>(cfg: &OfdmConfig, rng: &mut R) -> Self {
        let positions = cfg.pilot_positions();
        Self {
            k_sub: cfg.k_sub,
            pilot_values: vec![Complex64::new(1.0, 0.0); positions.len()],
            pilot_positions: positions,
            bits: (0..cfg.k_sub).map(|_| rng.random_range(0..2u8)).collect(),
        }
    }

    pub fn pilot_block(&self) -> Vec<Complex64> {
        let mut block = vec![Complex64::new(0.0, 0.0); self.k_sub];
        for (&p, &v) in self.pilot_positions.iter().zip(&self.pilot_values) {
            block[p] = v;
        }
        block
    }

    /// BPSK: bit 1 -> +1, bit 0 -> -1.
    pub fn data_block(&self) -> Vec<Complex64> {
        self.bits
            .iter()
            .map(|&b| Complex64::new(if b == 1 { 1.0 } else { -1.0 }, 0.0))
            .collect()
    }
}

/// Tap gains for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub delays: Vec<usize>,
    pub taps: Vec<Complex64>,
}

impl ChannelRealization {
    pub fn draw<R: Rng + ?Sized>(pdp: &Pdp, rng: &mut R) -> Self {
        let taps = pdp
            .powers
            .iter()
            .map(|&p| p.sqrt() * rayleigh_gain(rng))
            .collect();
        Self {
            delays: pdp.delays.clone(),
            taps,
        }
    }

    /// Frequency response on `k_sub` subcarriers.
    pub fn frequency_response(&self, k_sub: usize) -> Vec<Complex64> {
        (0..k_sub)
            .map(|k| {
                self.delays
                    .iter()
                    .zip(&self.taps)
                    .map(|(&d, &h)| {
                        h * Complex64::from_polar(1.0, -2.0 * PI * (k * d) as f64 / k_sub as f64)
                    })
                    .sum()
            })
            .collect()
    }
}

/// `alpha ~ CN(0, 1)`.
pub fn rayleigh_gain<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Noise variance per complex sample for an SNR referenced to unit symbol energy.
pub fn noise_variance(snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        10f64.powf(-snr_db / 10.0)
    }
}

/// CP-OFDM link with unitary transforms.
pub struct OfdmLink {
    cfg: OfdmConfig,
    ifft: Arc<dyn Fft<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl OfdmLink {
    pub fn new(cfg: OfdmConfig) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            ifft: planner.plan_fft_inverse(cfg.k_sub),
            fft: planner.plan_fft_forward(cfg.k_sub),
            cfg,
        }
    }

    pub fn config(&self) -> &OfdmConfig {
        &self.cfg
    }

    /// One OFDM block through the channel: IFFT, cyclic prefix, FIR channel,
    /// AWGN, prefix removal, FFT.
    pub fn transmit_block<R: Rng + ?Sized>(
        &self,
        symbols: &[Complex64],
        channel: &ChannelRealization,
        noise_var: f64,
        rng: &mut R,
    ) -> Result<Vec<Complex64>> {
        let k = self.cfg.k_sub;
        let cp = self.cfg.cp_len;
        if channel.delays.iter().any(|&d| d > cp) {
            return Err(Error::config(format!(
                "channel delay exceeds the cyclic prefix of {cp} samples"
            )));
        }
        let norm = 1.0 / (k as f64).sqrt();
        let mut time = symbols.to_vec();
        self.ifft.process(&mut time);
        for s in &mut time {
            *s *= norm;
        }
        let mut with_cp = Vec::with_capacity(cp + k);
        with_cp.extend_from_slice(&time[k - cp..]);
        with_cp.extend_from_slice(&time);

        let sigma = (noise_var / 2.0).sqrt();
        let mut rx: Vec<Complex64> = (cp..cp + k)
            .map(|n| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (&d, &h) in channel.delays.iter().zip(&channel.taps) {
                    acc += h * with_cp[n - d];
                }
                acc
            })
            .collect();
        if sigma > 0.0 {
            for r in &mut rx {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                *r += Complex64::new(sigma * re, sigma * im);
            }
        }
        self.fft.process(&mut rx);
        for s in &mut rx {
            *s *= norm;
        }
        Ok(rx)
    }

    /// Received pilot and data blocks for one frame, both through `channel`.
    pub fn receive_frame<R: Rng + ?Sized>(
        &self,
        frame: &OfdmFrame,
        channel: &ChannelRealization,
        noise_var: f64,
        rng: &mut R,
    ) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        let pilot = self.transmit_block(&frame.pilot_block(), channel, noise_var, rng)?;
        let data = self.transmit_block(&frame.data_block(), channel, noise_var, rng)?;
        Ok((pilot, data))
    }
}

/// Flatten received blocks into the model input planes.
pub fn model_input(pilot: &[Complex64], data: &[Complex64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(4 * pilot.len());
    x.extend(pilot.iter().map(|c| c.re));
    x.extend(pilot.iter().map(|c| c.im));
    x.extend(data.iter().map(|c| c.re));
    x.extend(data.iter().map(|c| c.im));
    x
}

/// Draw a channel from `pdp`, send `frame`, return the model input.
pub fn transmit_receive(
    cfg: &OfdmConfig,
    pdp: &Pdp,
    frame: &OfdmFrame,
    snr_db: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let link = OfdmLink::new(*cfg);
    let mut rng = seeded(seed);
    let channel = ChannelRealization::draw(pdp, &mut rng);
    let (p, d) = link.receive_frame(frame, &channel, noise_variance(snr_db), &mut rng)?;
    Ok(model_input(&p, &d))
}

/// `count` frames from one environment, each with its own channel draw.
pub fn make_dataset(
    cfg: &OfdmConfig,
    pdp: &Pdp,
    count: usize,
    snr_db: f64,
    seed: u64,
) -> Result<EnvironmentDataset> {
    make_dataset_coherent(cfg, pdp, count, 1, snr_db, seed)
}

/// Like [`make_dataset`] but consecutive groups of `frames_per_block` frames
/// share one channel realization.
pub fn make_dataset_coherent(
    cfg: &OfdmConfig,
    pdp: &Pdp,
    count: usize,
    frames_per_block: usize,
    snr_db: f64,
    seed: u64,
) -> Result<EnvironmentDataset> {
    if count == 0 {
        return Err(Error::usage("dataset needs at least one frame"));
    }
    if frames_per_block == 0 {
        return Err(Error::usage("coherence block needs at least one frame"));
    }
    let link = OfdmLink::new(*cfg);
    let mut rng = seeded(derive_seed(seed, 0x0fd3));
    let noise_var = noise_variance(snr_db);
    let mut samples = Vec::with_capacity(count);
    let mut channel = ChannelRealization::draw(pdp, &mut rng);
    for t in 0..count {
        if t > 0 && t % frames_per_block == 0 {
            channel = ChannelRealization::draw(pdp, &mut rng);
        }
        let frame = OfdmFrame::random(cfg, &mut rng);
        let (p, d) = link.receive_frame(&frame, &channel, noise_var, &mut rng)?;
        samples.push(Sample {
            x: model_input(&p, &d),
            y: frame.bits.iter().map(|&b| b as f64).collect(),
        });
    }
    Ok(EnvironmentDataset::new(
        TaskKind::Ofdm,
        cfg.k_sub,
        cfg.pilots,
        samples,
    ))
}

/// Fraction of hard-decision errors (`p >= 0.5` decides 1).
pub fn ber(outputs: &[f64], bits: &[f64]) -> Result<f64> {
    if outputs.len() != bits.len() {
        return Err(Error::usage(format!(
            "{} outputs for {} bits",
            outputs.len(),
            bits.len()
        )));
    }
    if outputs.is_empty() {
        return Err(Error::usage("bit error rate of zero bits"));
    }
    let errors = outputs
        .iter()
        .zip(bits)
        .filter(|(&p, &b)| (p >= 0.5) != (b >= 0.5))
        .count();
    Ok(errors as f64 / outputs.len() as f64)
}

/// BER of per-sample predictions against a dataset's labels.
pub fn dataset_ber(predictions: &[Vec<f64>], data: &[Sample]) -> Result<f64> {
    if predictions.len() != data.len() {
        return Err(Error::usage("prediction count does not match sample count"));
    }
    let flat_p: Vec<f64> = predictions.iter().flatten().copied().collect();
    let flat_y: Vec<f64> = data.iter().flat_map(|s| s.y.iter().copied()).collect();
    ber(&flat_p, &flat_y)
}

/// Pilots each subcarrier is correlated with in [`correlation_features`].
pub const CORRELATED_PILOTS: usize = 3;

/// Subcarriers per pilot period: the comb repeats every `k_sub / pilots`
/// subcarriers when that divides evenly, otherwise no two subcarriers share
/// a pilot geometry.
pub fn pilot_period(cfg: &OfdmConfig) -> usize {
    if cfg.k_sub.is_multiple_of(cfg.pilots) {
        cfg.k_sub / cfg.pilots
    } else {
        cfg.k_sub
    }
}

/// Pilot lags in the statistics channel of [`correlation_features`].
pub const STAT_LAGS: usize = 3;

// two slots per lag, and the channel is only `k_sub` long
fn stat_lags(cfg: &OfdmConfig) -> usize {
    cfg.pilots
        .saturating_sub(1)
        .min(STAT_LAGS)
        .min(cfg.k_sub / 2)
}

/// Channels of [`correlation_features`]: one group of
/// `2 * min(pilots, CORRELATED_PILOTS)` per phase of the pilot period, then
/// one statistics channel.
pub fn correlation_channels(cfg: &OfdmConfig) -> usize {
    2 * cfg.pilots.min(CORRELATED_PILOTS) * pilot_period(cfg) + 1
}

/// Length of [`correlation_features`] for `cfg`.
pub fn correlation_len(cfg: &OfdmConfig) -> usize {
    correlation_channels(cfg) * cfg.k_sub
}

/// Pilots (indices into `positions`) closest to subcarrier `k` on the circular
/// band, ordered by signed offset `k - p`. Subcarriers one pilot period apart
/// get the same offset pattern.
fn nearest_pilots(cfg: &OfdmConfig, positions: &[usize], k: usize) -> Vec<usize> {
    let n = cfg.k_sub as i64;
    let offset = |p: usize| {
        let d = (k as i64 - p as i64).rem_euclid(n);
        if 2 * d > n {
            d - n
        } else {
            d
        }
    };
    let mut idx: Vec<usize> = (0..positions.len()).collect();
    idx.sort_by_key(|&i| (offset(positions[i]).abs(), offset(positions[i])));
    idx.truncate(CORRELATED_PILOTS);
    idx.sort_by_key(|&i| offset(positions[i]));
    idx
}

/// Correlator front end of the learned receiver, laid out channel-major over
/// the `k_sub` subcarrier positions.
///
/// At subcarrier `k` the real and imaginary parts of `y_k conj(y_p)` for its
/// nearest pilots `p` fill the channel group of `k`'s phase within the pilot
/// period; every other channel is zero there. A coherent BPSK decision under
/// any linear pilot interpolation is linear in these values, and a
/// position-shared layer sees the same geometry in every period.
///
/// The last channel starts with the pilot autocorrelation
/// `sum_p y_p conj(y_{p+m}) / sum_p |y_p|^2` for lags `m = 1..=STAT_LAGS`
/// (real and imaginary parts, lags capped at `pilots - 1` and `k_sub / 2`). It is free of the
/// data bits and tracks the frequency correlation, hence the delay profile.
pub fn correlation_features(cfg: &OfdmConfig, x: &[f64]) -> Vec<f64> {
    let k = cfg.k_sub;
    let positions = cfg.pilot_positions();
    let period = pilot_period(cfg);
    let group = 2 * cfg.pilots.min(CORRELATED_PILOTS);
    let rx = |plane: usize, i: usize| Complex64::new(x[plane * k + i], x[(plane + 1) * k + i]);
    let yp: Vec<Complex64> = positions.iter().map(|&p| rx(0, p)).collect();
    let mut out = vec![0.0; correlation_len(cfg)];
    for i in 0..k {
        let yd = rx(2, i);
        let phase = (i + k - positions[0]) % period;
        for (j, p) in nearest_pilots(cfg, &positions, i).into_iter().enumerate() {
            let z = yd * yp[p].conj();
            let ch = phase * group + 2 * j;
            out[ch * k + i] = z.re;
            out[(ch + 1) * k + i] = z.im;
        }
    }
    let stats = (correlation_channels(cfg) - 1) * k;
    let np = yp.len();
    let power: f64 = yp.iter().map(|p| p.norm_sqr()).sum();
    if power > 0.0 {
        for m in 1..=stat_lags(cfg) {
            let r: Complex64 = (0..np)
                .map(|p| yp[p] * yp[(p + m) % np].conj())
                .sum::<Complex64>()
                / power;
            out[stats + 2 * (m - 1)] = r.re;
            out[stats + 2 * (m - 1) + 1] = r.im;
        }
    }
    out
}

/// Dataset with every input replaced by its [`correlation_features`].
pub fn to_correlation(cfg: &OfdmConfig, data: &[Sample]) -> Vec<Sample> {
    data.iter()
        .map(|s| Sample {
            x: correlation_features(cfg, &s.x),
            y: s.y.clone(),
        })
        .collect()
}

/// Least-squares channel estimate at the pilots, linear interpolation around
/// the (circular) band, then coherent BPSK decisions. Returns hard bits.
pub fn ls_detect(cfg: &OfdmConfig, x: &[f64]) -> Vec<f64> {
    let k = cfg.k_sub;
    let pilots = cfg.pilot_positions();
    let rx = |plane: usize, i: usize| Complex64::new(x[plane * k + i], x[(plane + 1) * k + i]);
    // pilot values are all +1
    let est: Vec<Complex64> = pilots.iter().map(|&p| rx(0, p)).collect();
    let mut h = vec![Complex64::new(0.0, 0.0); k];
    let np = pilots.len();
    for i in 0..k {
        // pilot at or before i, circularly
        let j = match pilots.iter().rposition(|&p| p <= i) {
            Some(j) => j,
            None => np - 1,
        };
        let next = (j + 1) % np;
        let (p0, p1) = (pilots[j], pilots[next]);
        let span = (p1 + k - p0) % k;
        h[i] = if span == 0 {
            est[j]
        } else {
            let t = ((i + k - p0) % k) as f64 / span as f64;
            est[j] * (1.0 - t) + est[next] * t
        };
    }
    (0..k)
        .map(|i| {
            let y = rx(2, i);
            if (y * h[i].conj()).re >= 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}
