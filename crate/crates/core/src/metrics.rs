//! Complexity accounting and Monte-Carlo error-rate estimation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncodingParams, SpikeRaster};
use crate::link::{self, gray_distance, LinkConfig, PamFrame};
use crate::seed::{mix, stream_rng, Stream};
use crate::snn::{self, NeuronConfig, SnnParams};
use crate::{Error, Result};

/// Equalizer input window length.
pub const N_TAP: usize = 7;
/// PAM-4 classes.
pub const N_OUT: usize = 4;
/// Symbols per Monte-Carlo frame. Each frame has its own random stream, so
/// results do not depend on how frames are grouped for parallel work.
pub const EVAL_FRAME: usize = 1 << 16;
/// z-score of a two-sided 95% interval.
pub const Z_95: f64 = 1.96;

/// Multiply-accumulates per inference: `N_hid (7 J + N_out) K`.
pub fn mac_count(j: u64, k: u64, n_hid: u64, n_out: u64) -> u64 {
    param_count(j, n_hid, n_out) * k
}

/// Weights of both linear layers: `N_hid (7 J + N_out)`.
pub fn param_count(j: u64, n_hid: u64, n_out: u64) -> u64 {
    n_hid * (N_TAP as u64 * j + n_out)
}

/// Relative reduction `1 - value / reference`.
pub fn reduction(value: f64, reference: f64) -> f64 {
    1.0 - value / reference
}

/// Wilson score interval for a proportion at 95% confidence.
pub fn confidence_interval(p: f64, n: u64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::Domain("confidence interval needs at least one trial".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("proportion {p} outside [0, 1]")));
    }
    let n = n as f64;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z_95 / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Ok(((center - half).max(0.0), (center + half).min(1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub class: u8,
    pub input_spikes: u32,
    pub hidden_spikes: u32,
}

/// A symbol classifier over a window of receive samples.
pub trait Demapper: Sync {
    type Scratch: Default + Send;

    fn n_tap(&self) -> usize;

    fn demap(&self, taps: &[f64], scratch: &mut Self::Scratch) -> Decision;

    /// `(#MAC, parameter count)` per inference.
    fn complexity(&self) -> (u64, u64) {
        (0, 0)
    }
}

/// Three-threshold slicer on the center sample.
#[derive(Debug, Clone)]
pub struct HardSlicer {
    pub thresholds: [f64; 3],
}

impl HardSlicer {
    pub fn for_link(cfg: &LinkConfig) -> Self {
        Self { thresholds: cfg.slicer_thresholds() }
    }
}

impl Demapper for HardSlicer {
    type Scratch = ();

    fn n_tap(&self) -> usize {
        1
    }

    fn demap(&self, taps: &[f64], _: &mut ()) -> Decision {
        Decision { class: link::slice(taps[0], &self.thresholds), input_spikes: 0, hidden_spikes: 0 }
    }
}

/// Encoder followed by the spiking network.
#[derive(Debug, Clone)]
pub struct SnnDemapper {
    pub encoder: EncodingParams,
    pub params: SnnParams,
    pub neuron: NeuronConfig,
    n_tap: usize,
}

#[derive(Debug, Default)]
pub struct SnnScratch {
    raster: Option<SpikeRaster>,
    net: snn::Scratch,
}

impl SnnDemapper {
    pub fn new(encoder: EncodingParams, params: SnnParams, neuron: NeuronConfig, n_tap: usize) -> Result<Self> {
        encoder.validate()?;
        neuron.validate()?;
        let dims = params.dims();
        if dims.n_in != n_tap * encoder.channels {
            return Err(Error::Validation(format!(
                "network has N_in = {} but the encoder produces {} x {} inputs",
                dims.n_in, n_tap, encoder.channels
            )));
        }
        if dims.n_out != N_OUT {
            return Err(Error::Validation(format!("network has {} outputs, expected {N_OUT}", dims.n_out)));
        }
        Ok(Self { encoder, params, neuron, n_tap })
    }
}

impl Demapper for SnnDemapper {
    type Scratch = SnnScratch;

    fn n_tap(&self) -> usize {
        self.n_tap
    }

    fn demap(&self, taps: &[f64], s: &mut SnnScratch) -> Decision {
        let raster = s
            .raster
            .get_or_insert_with(|| SpikeRaster::silent(self.encoder.steps, taps.len() * self.encoder.channels));
        self.encoder.encode_into(taps, raster);
        let hidden = snn::infer(raster, &self.params, &self.neuron, &mut s.net).expect("shape checked at construction");
        Decision {
            class: snn::decide(&s.net.scores) as u8,
            input_spikes: raster.spike_count() as u32,
            hidden_spikes: hidden as u32,
        }
    }

    fn complexity(&self) -> (u64, u64) {
        let d = self.params.dims();
        let j = self.encoder.channels as u64;
        let per_step = d.n_hid as u64 * (self.n_tap as u64 * j + d.n_out as u64);
        (per_step * self.encoder.steps as u64, per_step)
    }
}

/// Integer tallies of one or more frames; merging is exact in any order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorTally {
    pub symbols: u64,
    pub symbol_errors: u64,
    pub bit_errors: u64,
    pub input_spikes: u64,
    pub hidden_spikes: u64,
    pub confusion: [[u64; N_OUT]; N_OUT],
}

impl ErrorTally {
    pub fn record(&mut self, label: u8, d: Decision) {
        self.symbols += 1;
        if d.class != label {
            self.symbol_errors += 1;
            self.bit_errors += u64::from(gray_distance(label, d.class));
        }
        self.input_spikes += u64::from(d.input_spikes);
        self.hidden_spikes += u64::from(d.hidden_spikes);
        self.confusion[label as usize][d.class as usize] += 1;
    }

    pub fn merge(mut self, other: &Self) -> Self {
        self.symbols += other.symbols;
        self.symbol_errors += other.symbol_errors;
        self.bit_errors += other.bit_errors;
        self.input_spikes += other.input_spikes;
        self.hidden_spikes += other.hidden_spikes;
        for (a, b) in self.confusion.iter_mut().zip(&other.confusion) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ber: f64,
    pub ber_lo: f64,
    pub ber_hi: f64,
    pub ser: f64,
    pub bit_errors: u64,
    pub symbol_errors: u64,
    /// Mean spikes per inference, input plus hidden.
    pub z_avg: f64,
    pub z_input_avg: f64,
    pub z_hidden_avg: f64,
    pub mac_count: u64,
    pub param_count: u64,
    pub n_eval: u64,
    #[serde(with = "crate::link::db_or_off")]
    pub noise_power_db: f64,
    pub seed: u64,
}

impl MetricsReport {
    pub fn from_tally(t: &ErrorTally, complexity: (u64, u64), noise_power_db: f64, seed: u64) -> Result<Self> {
        let n = t.symbols;
        let ber = t.bit_errors as f64 / (2 * n) as f64;
        let (ber_lo, ber_hi) = confidence_interval(ber, 2 * n)?;
        Ok(Self {
            ber,
            ber_lo,
            ber_hi,
            ser: t.symbol_errors as f64 / n as f64,
            bit_errors: t.bit_errors,
            symbol_errors: t.symbol_errors,
            z_avg: (t.input_spikes + t.hidden_spikes) as f64 / n as f64,
            z_input_avg: t.input_spikes as f64 / n as f64,
            z_hidden_avg: t.hidden_spikes as f64 / n as f64,
            mac_count: complexity.0,
            param_count: complexity.1,
            n_eval: n,
            noise_power_db,
            seed,
        })
    }

    /// True if the two 95% intervals are disjoint with `self` strictly better.
    pub fn strictly_beats(&self, other: &Self) -> bool {
        self.ber_hi < other.ber_lo
    }
}

/// Runs one evaluation frame with its own random stream.
pub fn evaluate_frame<D: Demapper>(
    demapper: &D,
    link_cfg: &LinkConfig,
    seed: u64,
    frame: u64,
    n_symbols: usize,
    scratch: &mut D::Scratch,
) -> Result<ErrorTally> {
    let mut rng = stream_rng(mix(seed, Stream::Evaluation as u64), frame);
    let pam = PamFrame::random(n_symbols, &mut rng);
    let record = link::simulate_link(&pam, link_cfg, &mut rng)?;
    let windows = link::sliding_taps(&record, demapper.n_tap())?;
    let mut tally = ErrorTally::default();
    for (taps, label) in windows.iter() {
        tally.record(label, demapper.demap(taps, scratch));
    }
    Ok(tally)
}

/// Monte-Carlo error rates over `n_samples` fresh symbols, processed in
/// fixed [`EVAL_FRAME`]-symbol frames. `frames_per_block` only bounds memory
/// and parallel granularity; the result is identical for any value.
pub fn estimate_ber_blocked<D: Demapper>(
    demapper: &D,
    link_cfg: &LinkConfig,
    n_samples: u64,
    seed: u64,
    frames_per_block: usize,
) -> Result<MetricsReport> {
    if n_samples == 0 {
        return Err(Error::Argument("n_samples must be >= 1".into()));
    }
    link_cfg.validate()?;
    let n_frames = n_samples.div_ceil(EVAL_FRAME as u64);
    let frame_len = |f: u64| (n_samples - f * EVAL_FRAME as u64).min(EVAL_FRAME as u64) as usize;
    let block = frames_per_block.max(1) as u64;
    let mut total = ErrorTally::default();
    let mut start = 0;
    while start < n_frames {
        let end = (start + block).min(n_frames);
        let tallies: Vec<Result<ErrorTally>> = (start..end)
            .into_par_iter()
            .map_init(D::Scratch::default, |s, f| evaluate_frame(demapper, link_cfg, seed, f, frame_len(f), s))
            .collect();
        for t in tallies {
            total = total.merge(&t?);
        }
        start = end;
    }
    MetricsReport::from_tally(&total, demapper.complexity(), link_cfg.noise_power_db, seed)
}

pub fn estimate_ber<D: Demapper>(demapper: &D, link_cfg: &LinkConfig, n_samples: u64, seed: u64) -> Result<MetricsReport> {
    estimate_ber_blocked(demapper, link_cfg, n_samples, seed, 2 * rayon::current_num_threads())
}
