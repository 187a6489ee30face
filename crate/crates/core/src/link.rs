//! PAM-4 transmission over a dispersive IM/DD fiber link.
//!
//! The simulated chain is: Gray mapping, upsampling, root-raised-cosine pulse
//! shaping, DC bias, chromatic dispersion (cyclic frequency-domain all-pass),
//! square-law photodetection, additive white Gaussian electrical noise, matched
//! filtering and symbol-rate sampling. All filters are cyclic and centered, so
//! the sampling delay is zero and a random guard of [`GUARD_SYMBOLS`] symbols on
//! either side of the payload absorbs the wrap-around.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Random symbols prepended and appended to every frame before the cyclic
/// filters; they are discarded after detection.
pub const GUARD_SYMBOLS: usize = 512;

/// Noiseless receive value of the highest PAM level on an undispersed link.
pub const NOMINAL_PEAK: f64 = 7.0;

/// Total frame lengths are padded (inside the suffix guard) to a multiple of
/// this many symbols so the FFT sizes stay smooth.
const FRAME_GRANULE: usize = 256;

/// Gray map from level index to bit pair, `00 -> 0, 01 -> 1, 11 -> 2, 10 -> 3`.
pub const GRAY_BITS: [[u8; 2]; 4] = [[0, 0], [0, 1], [1, 1], [1, 0]];

pub fn gray_level(b0: u8, b1: u8) -> u8 {
    match (b0, b1) {
        (0, 0) => 0,
        (0, 1) => 1,
        (1, 1) => 2,
        _ => 3,
    }
}

/// Number of differing bits between the Gray labels of two levels.
pub fn gray_distance(a: u8, b: u8) -> u32 {
    let (x, y) = (GRAY_BITS[a as usize], GRAY_BITS[b as usize]);
    u32::from(x[0] != y[0]) + u32::from(x[1] != y[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    /// Symbols per second.
    pub baud_rate: f64,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
    /// Dispersion parameter `D` in ps/(nm km).
    pub dispersion_ps_nm_km: f64,
    /// Fiber length in meters.
    pub fiber_length: f64,
    /// Samples per symbol.
    pub oversampling: usize,
    /// Root-raised-cosine roll-off factor.
    pub rolloff: f64,
    /// Pulse-shaping filter half-length in symbols.
    pub rrc_span: usize,
    /// Electrical noise power in dB relative to unit power; `null` in JSON
    /// (negative infinity here) disables the noise source.
    #[serde(with = "db_or_off")]
    pub noise_power_db: f64,
    /// DC bias added to the shaped field, in level units.
    pub bias: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            baud_rate: 112e9,
            wavelength: 1270e-9,
            dispersion_ps_nm_km: -5.0,
            fiber_length: 5000.0,
            oversampling: 4,
            rolloff: 0.2,
            rrc_span: 16,
            noise_power_db: -20.0,
            bias: 2.25,
        }
    }
}

pub(crate) mod db_or_off {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
        if value.is_finite() {
            s.serialize_f64(*value)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Validation(format!("link: {msg}")));
        if !(self.baud_rate.is_finite() && self.baud_rate > 0.0) {
            return fail("baud_rate must be positive");
        }
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return fail("wavelength must be positive");
        }
        if !self.dispersion_ps_nm_km.is_finite() {
            return fail("dispersion_ps_nm_km must be finite");
        }
        if !(self.fiber_length.is_finite() && self.fiber_length >= 0.0) {
            return fail("fiber_length must be >= 0");
        }
        if self.oversampling < 2 {
            return fail("oversampling must be >= 2");
        }
        if !(0.0..=1.0).contains(&self.rolloff) {
            return fail("rolloff must lie in [0, 1]");
        }
        if self.rrc_span == 0 {
            return fail("rrc_span must be >= 1");
        }
        if self.noise_power_db.is_nan() || self.noise_power_db == f64::INFINITY {
            return fail("noise_power_db must be finite or off");
        }
        if !(self.bias.is_finite() && self.bias >= 0.0) {
            return fail("bias must be >= 0");
        }
        Ok(())
    }

    /// Dispersion parameter in s/m².
    pub fn dispersion_coeff(&self) -> f64 {
        // 1 ps/(nm km) = 1e-12 s / (1e-9 m * 1e3 m)
        self.dispersion_ps_nm_km * 1e-6
    }

    /// Group-velocity dispersion `beta2 = -D lambda^2 / (2 pi c)` in s²/m.
    pub fn beta2(&self) -> f64 {
        -self.dispersion_coeff() * self.wavelength * self.wavelength / (2.0 * PI * SPEED_OF_LIGHT)
    }

    pub fn sample_rate(&self) -> f64 {
        self.baud_rate * self.oversampling as f64
    }

    /// Linear noise variance at the symbol-rate output; zero when noise is off.
    pub fn noise_variance(&self) -> f64 {
        if self.noise_power_db.is_finite() {
            10f64.powf(self.noise_power_db / 10.0)
        } else {
            0.0
        }
    }

    pub fn noiseless(&self) -> Self {
        Self { noise_power_db: f64::NEG_INFINITY, ..self.clone() }
    }

    /// Field scale so that a constant top-level symbol stream detects to
    /// [`NOMINAL_PEAK`].
    fn field_scale(&self) -> f64 {
        NOMINAL_PEAK.sqrt() / (3.0 + self.bias)
    }

    /// Noiseless symbol-rate receive values of the four levels on an
    /// undispersed link.
    pub fn nominal_levels(&self) -> [f64; 4] {
        let s = self.field_scale();
        std::array::from_fn(|a| (s * (a as f64 + self.bias)).powi(2))
    }

    /// Midpoints between adjacent [`nominal_levels`](Self::nominal_levels).
    pub fn slicer_thresholds(&self) -> [f64; 3] {
        let l = self.nominal_levels();
        [0.5 * (l[0] + l[1]), 0.5 * (l[1] + l[2]), 0.5 * (l[2] + l[3])]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PamFrame {
    pub bits: Vec<u8>,
    /// Level values in `{0, 1, 2, 3}`.
    pub symbols: Vec<f64>,
    pub labels: Vec<u8>,
}

impl PamFrame {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Frame of `n_symbols` uniformly random Gray-mapped symbols.
    pub fn random<R: Rng + ?Sized>(n_symbols: usize, rng: &mut R) -> Self {
        let bits: Vec<u8> = (0..2 * n_symbols).map(|_| rng.random_range(0..2u8)).collect();
        map_bits_to_pam(&bits).expect("even bit count")
    }
}

pub fn map_bits_to_pam(bits: &[u8]) -> Result<PamFrame> {
    if bits.len() % 2 != 0 {
        return Err(Error::Length(format!("PAM-4 mapping needs an even bit count, got {}", bits.len())));
    }
    if let Some(b) = bits.iter().find(|&&b| b > 1) {
        return Err(Error::Argument(format!("bit value {b} is not 0 or 1")));
    }
    let labels: Vec<u8> = bits.chunks_exact(2).map(|p| gray_level(p[0], p[1])).collect();
    Ok(PamFrame {
        bits: bits.to_vec(),
        symbols: labels.iter().map(|&l| f64::from(l)).collect(),
        labels,
    })
}

/// FFT bin frequencies in Hz for an `n`-point transform at `sample_rate`.
fn fft_frequency(k: usize, n: usize, sample_rate: f64) -> f64 {
    let k = if k < n.div_ceil(2) { k as f64 } else { k as f64 - n as f64 };
    k * sample_rate / n as f64
}

fn dispersion_response(config: &LinkConfig, n: usize) -> Vec<Complex64> {
    let phase_coeff = 0.5 * config.beta2() * config.fiber_length;
    let fs = config.sample_rate();
    (0..n)
        .map(|k| {
            let w = 2.0 * PI * fft_frequency(k, n, fs);
            Complex64::from_polar(1.0, phase_coeff * w * w)
        })
        .collect()
}

/// Chromatic-dispersion all-pass `H[f] = exp(j beta2 L (2 pi f)^2 / 2)` on the
/// `n_fft`-point FFT grid at the link's sample rate.
pub fn cd_frequency_response(config: &LinkConfig, n_fft: usize) -> Result<Vec<Complex64>> {
    if n_fft < 2 {
        return Err(Error::Argument(format!("n_fft must be >= 2, got {n_fft}")));
    }
    if !n_fft.is_power_of_two() {
        return Err(Error::Argument(format!("n_fft must be a power of two, got {n_fft}")));
    }
    Ok(dispersion_response(config, n_fft))
}

/// Unit-energy root-raised-cosine taps, `2 * span * sps + 1` long and centered.
pub fn rrc_taps(sps: usize, rolloff: f64, span: usize) -> Vec<f64> {
    let half = (span * sps) as isize;
    let b = rolloff;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|i| {
            let t = i as f64 / sps as f64;
            if t == 0.0 {
                1.0 - b + 4.0 * b / PI
            } else if b > 0.0 && ((4.0 * b * t).abs() - 1.0).abs() < 1e-9 {
                b / 2f64.sqrt()
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * b)).sin()
                        + (1.0 - 2.0 / PI) * (PI / (4.0 * b)).cos())
            } else {
                let num = (PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos();
                let den = PI * t * (1.0 - (4.0 * b * t).powi(2));
                num / den
            }
        })
        .collect();
    let norm = taps.iter().map(|x| x * x).sum::<f64>().sqrt();
    taps.iter_mut().for_each(|x| *x /= norm);
    taps
}

/// Cyclic convolution of `signal` with centered real `taps` via the FFT.
fn cyclic_filter(signal: &mut [Complex64], taps: &[f64], planner: &mut FftPlanner<f64>) {
    let n = signal.len();
    let half = (taps.len() / 2) as isize;
    let mut kernel = vec![Complex64::new(0.0, 0.0); n];
    for (i, &t) in taps.iter().enumerate() {
        let idx = (i as isize - half).rem_euclid(n as isize) as usize;
        kernel[idx].re += t;
    }
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    fwd.process(&mut kernel);
    fwd.process(signal);
    let scale = 1.0 / n as f64;
    for (s, k) in signal.iter_mut().zip(&kernel) {
        *s *= k * scale;
    }
    inv.process(signal);
}

struct PulseFilters {
    tx: Vec<f64>,
    rx: Vec<f64>,
    rx_energy: f64,
}

impl PulseFilters {
    fn new(config: &LinkConfig) -> Self {
        let proto = rrc_taps(config.oversampling, config.rolloff, config.rrc_span);
        let dc: f64 = proto.iter().sum();
        // TX: a constant symbol stream `a` shapes to the constant field `a`.
        let tx = proto.iter().map(|p| p * config.oversampling as f64 / dc).collect();
        // RX: unit DC gain, so detected intensity levels pass unchanged.
        let rx: Vec<f64> = proto.iter().map(|p| p / dc).collect();
        let rx_energy = rx.iter().map(|x| x * x).sum();
        Self { tx, rx, rx_energy }
    }
}

/// Upsampled, pulse-shaped and biased optical field (cyclic over the frame).
pub fn shape_field(levels: &[f64], config: &LinkConfig) -> Vec<Complex64> {
    let mut planner = FftPlanner::new();
    shape_field_with(levels, config, &PulseFilters::new(config), &mut planner)
}

fn shape_field_with(
    levels: &[f64],
    config: &LinkConfig,
    filters: &PulseFilters,
    planner: &mut FftPlanner<f64>,
) -> Vec<Complex64> {
    let os = config.oversampling;
    let mut field = vec![Complex64::new(0.0, 0.0); levels.len() * os];
    for (i, &a) in levels.iter().enumerate() {
        field[i * os].re = a;
    }
    cyclic_filter(&mut field, &filters.tx, planner);
    let scale = config.field_scale();
    for s in field.iter_mut() {
        *s = Complex64::new((s.re + config.bias) * scale, s.im * scale);
    }
    field
}

/// Applies the chromatic-dispersion all-pass to a sample-rate field in place.
pub fn apply_dispersion(field: &mut [Complex64], config: &LinkConfig) {
    let mut planner = FftPlanner::new();
    apply_dispersion_with(field, config, &mut planner);
}

fn apply_dispersion_with(field: &mut [Complex64], config: &LinkConfig, planner: &mut FftPlanner<f64>) {
    if config.fiber_length == 0.0 || config.beta2() == 0.0 || field.is_empty() {
        return;
    }
    let n = field.len();
    let h = dispersion_response(config, n);
    planner.plan_fft_forward(n).process(field);
    let scale = 1.0 / n as f64;
    for (s, hk) in field.iter_mut().zip(&h) {
        *s *= hk * scale;
    }
    planner.plan_fft_inverse(n).process(field);
}

/// Square-law photodetection.
pub fn detect(field: &[Complex64]) -> Vec<f64> {
    field.iter().map(|s| s.norm_sqr()).collect()
}

fn matched_filter_downsample(
    intensity: Vec<f64>,
    config: &LinkConfig,
    filters: &PulseFilters,
    planner: &mut FftPlanner<f64>,
) -> Vec<f64> {
    let mut buf: Vec<Complex64> = intensity.into_iter().map(|x| Complex64::new(x, 0.0)).collect();
    cyclic_filter(&mut buf, &filters.rx, planner);
    buf.iter().step_by(config.oversampling).map(|s| s.re).collect()
}

/// Noiseless symbol-rate receive values for a cyclic level sequence (no guard).
pub fn noiseless_response(levels: &[f64], config: &LinkConfig) -> Vec<f64> {
    let filters = PulseFilters::new(config);
    let mut planner = FftPlanner::new();
    let mut field = shape_field_with(levels, config, &filters, &mut planner);
    apply_dispersion_with(&mut field, config, &mut planner);
    matched_filter_downsample(detect(&field), config, &filters, &mut planner)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReceiveRecord {
    /// One post-detection, post-noise sample per symbol.
    pub samples: Vec<f64>,
    pub labels: Vec<u8>,
    pub y_max_observed: f64,
}

impl ReceiveRecord {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Sends `frame` through the link. Guard symbols are drawn from `rng` first and
/// the noise afterwards, so a noiseless configuration with the same seed yields
/// the same guards and hence the exact noiseless counterpart.
pub fn simulate_link<R: Rng + ?Sized>(
    frame: &PamFrame,
    config: &LinkConfig,
    rng: &mut R,
) -> Result<ReceiveRecord> {
    if frame.is_empty() {
        return Err(Error::Length("cannot transmit an empty frame".into()));
    }
    config.validate()?;
    let n = frame.len();
    let total = (n + 2 * GUARD_SYMBOLS).div_ceil(FRAME_GRANULE) * FRAME_GRANULE;
    let suffix = total - n - GUARD_SYMBOLS;

    let mut levels = Vec::with_capacity(total);
    levels.extend((0..GUARD_SYMBOLS).map(|_| f64::from(rng.random_range(0..4u8))));
    levels.extend_from_slice(&frame.symbols);
    levels.extend((0..suffix).map(|_| f64::from(rng.random_range(0..4u8))));

    let filters = PulseFilters::new(config);
    let mut planner = FftPlanner::new();
    let mut field = shape_field_with(&levels, config, &filters, &mut planner);
    apply_dispersion_with(&mut field, config, &mut planner);
    let mut intensity = detect(&field);

    let variance = config.noise_variance();
    if variance > 0.0 {
        // White noise at the sample rate whose matched-filter output has the
        // configured variance per symbol-rate sample.
        let sigma = (variance / filters.rx_energy).sqrt();
        for x in intensity.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *x += sigma * z;
        }
    }

    let received = matched_filter_downsample(intensity, config, &filters, &mut planner);
    let samples = received[GUARD_SYMBOLS..GUARD_SYMBOLS + n].to_vec();
    let y_max_observed = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ReceiveRecord { samples, labels: frame.labels.clone(), y_max_observed })
}

/// Hard three-threshold decision on one sample.
pub fn slice(sample: f64, thresholds: &[f64; 3]) -> u8 {
    thresholds.iter().filter(|&&t| sample >= t).count() as u8
}

/// Equalizer input windows over a receive record, edge samples replicated.
#[derive(Debug, Clone)]
pub struct TapWindows {
    padded: Vec<f64>,
    labels: Vec<u8>,
    n_tap: usize,
}

impl TapWindows {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_tap(&self) -> usize {
        self.n_tap
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Window centered on symbol `i`.
    pub fn taps(&self, i: usize) -> &[f64] {
        &self.padded[i..i + self.n_tap]
    }

    pub fn get(&self, i: usize) -> (&[f64], u8) {
        (self.taps(i), self.labels[i])
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&[f64], u8)> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }
}

pub fn sliding_taps(record: &ReceiveRecord, n_tap: usize) -> Result<TapWindows> {
    if n_tap % 2 == 0 {
        return Err(Error::Argument(format!("n_tap must be odd, got {n_tap}")));
    }
    if n_tap > record.len() {
        return Err(Error::Argument(format!(
            "n_tap = {n_tap} exceeds the record length {}",
            record.len()
        )));
    }
    let half = n_tap / 2;
    let first = record.samples[0];
    let last = *record.samples.last().expect("non-empty");
    let mut padded = Vec::with_capacity(record.len() + 2 * half);
    padded.extend(std::iter::repeat_n(first, half));
    padded.extend_from_slice(&record.samples);
    padded.extend(std::iter::repeat_n(last, half));
    Ok(TapWindows { padded, labels: record.labels.clone(), n_tap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;

    #[test]
    fn gray_mapping_of_all_pairs() {
        let frame = map_bits_to_pam(&[0, 0, 0, 1, 1, 1, 1, 0]).unwrap();
        assert_eq!(frame.labels, vec![0, 1, 2, 3]);
        assert_eq!(frame.symbols, vec![0.0, 1.0, 2.0, 3.0]);
        for level in 0..4u8 {
            let [b0, b1] = GRAY_BITS[level as usize];
            assert_eq!(gray_level(b0, b1), level);
        }
    }

    #[test]
    fn empty_and_odd_inputs() {
        assert!(map_bits_to_pam(&[]).unwrap().is_empty());
        assert!(matches!(map_bits_to_pam(&[1, 0, 1]), Err(Error::Length(_))));
        assert!(matches!(map_bits_to_pam(&[2, 0]), Err(Error::Argument(_))));
    }

    #[test]
    fn adjacent_levels_differ_in_one_bit() {
        for a in 0..3u8 {
            assert_eq!(gray_distance(a, a + 1), 1);
        }
        assert_eq!(gray_distance(0, 2), 2);
        assert_eq!(gray_distance(0, 3), 1);
    }

    #[test]
    fn label_histogram_is_uniform() {
        let mut rng = stream_rng(11, 0);
        let n = 1_000_000;
        let frame = PamFrame::random(n, &mut rng);
        let mut counts = [0usize; 4];
        for &l in &frame.labels {
            counts[l as usize] += 1;
        }
        // multinomial: var = n p (1 - p), p = 1/4
        let sd = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 / 4.0).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn beta2_of_default_link() {
        let b2 = LinkConfig::default().beta2();
        // 5e-6 s/m^2 * (1270e-9 m)^2 / (2 pi c)
        let expected = 5e-6 * 1270e-9f64.powi(2) / (2.0 * PI * SPEED_OF_LIGHT);
        assert!((b2 - expected).abs() < 1e-40);
        assert!((b2 - 4.2817e-27).abs() < 1e-30, "{b2:e}");
        // 4.28 ps^2/km
        assert!((b2 * 1e24 * 1e3 - 4.2817).abs() < 1e-3);
    }

    #[test]
    fn cd_response_is_all_pass_and_identity_at_zero_length() {
        let cfg = LinkConfig::default();
        let h = cd_frequency_response(&cfg, 4096).unwrap();
        let worst = h.iter().map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-12);
        assert_eq!(h[0], Complex64::new(1.0, 0.0));

        let flat = LinkConfig { fiber_length: 0.0, ..cfg };
        let h0 = cd_frequency_response(&flat, 64).unwrap();
        assert!(h0.iter().all(|z| *z == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn cd_response_rejects_bad_sizes() {
        let cfg = LinkConfig::default();
        assert!(cd_frequency_response(&cfg, 0).is_err());
        assert!(cd_frequency_response(&cfg, 1).is_err());
        assert!(cd_frequency_response(&cfg, 96).is_err());
        assert!(cd_frequency_response(&cfg, 2).is_ok());
    }

    #[test]
    fn dispersion_preserves_energy() {
        let cfg = LinkConfig { fiber_length: 20_000.0, ..LinkConfig::default() };
        let mut rng = stream_rng(3, 0);
        let frame = PamFrame::random(300, &mut rng);
        let mut field = shape_field(&frame.symbols, &cfg);
        let before: f64 = field.iter().map(|s| s.norm_sqr()).sum();
        apply_dispersion(&mut field, &cfg);
        let after: f64 = field.iter().map(|s| s.norm_sqr()).sum();
        assert!(((after - before) / before).abs() < 1e-9);
    }

    #[test]
    fn rrc_taps_have_unit_energy_and_symmetry() {
        for rolloff in [0.0, 0.2, 0.25, 1.0] {
            let taps = rrc_taps(4, rolloff, 8);
            assert_eq!(taps.len(), 65);
            let e: f64 = taps.iter().map(|x| x * x).sum();
            assert!((e - 1.0).abs() < 1e-12);
            for i in 0..taps.len() {
                assert!((taps[i] - taps[taps.len() - 1 - i]).abs() < 1e-12);
            }
            assert!(taps.iter().all(|t| t.is_finite()));
        }
    }

    #[test]
    fn nominal_levels_span_zero_to_peak() {
        let l = LinkConfig::default().nominal_levels();
        assert!((l[3] - NOMINAL_PEAK).abs() < 1e-12);
        assert!(l.windows(2).all(|w| w[0] < w[1]));
        assert!(l[0] > 0.0);
    }

    #[test]
    fn undispersed_noiseless_link_is_sliced_without_errors() {
        let cfg = LinkConfig { fiber_length: 0.0, ..LinkConfig::default() }.noiseless();
        let mut rng = stream_rng(5, 0);
        let frame = PamFrame::random(20_000, &mut rng);
        let rec = simulate_link(&frame, &cfg, &mut rng).unwrap();
        let th = cfg.slicer_thresholds();
        let levels = cfg.nominal_levels();
        let mut worst: f64 = 0.0;
        for (&y, &l) in rec.samples.iter().zip(&rec.labels) {
            assert_eq!(slice(y, &th), l);
            worst = worst.max((y - levels[l as usize]).abs());
        }
        // residual square-law cross-talk stays inside the narrowest decision cell
        assert!(worst < 0.5 * (levels[1] - levels[0]), "worst {worst}");
    }

    #[test]
    fn dispersion_causes_slicer_errors() {
        let cfg = LinkConfig::default().noiseless();
        let mut rng = stream_rng(5, 1);
        let frame = PamFrame::random(50_000, &mut rng);
        let rec = simulate_link(&frame, &cfg, &mut rng).unwrap();
        let th = cfg.slicer_thresholds();
        let errors = rec
            .samples
            .iter()
            .zip(&rec.labels)
            .filter(|(&y, &l)| slice(y, &th) != l)
            .count();
        assert!(errors > 0);
    }

    #[test]
    fn simulation_is_deterministic_per_seed() {
        let cfg = LinkConfig::default();
        let frame = PamFrame::random(1000, &mut stream_rng(1, 0));
        let a = simulate_link(&frame, &cfg, &mut stream_rng(9, 0)).unwrap();
        let b = simulate_link(&frame, &cfg, &mut stream_rng(9, 0)).unwrap();
        let c = simulate_link(&frame, &cfg, &mut stream_rng(10, 0)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn empty_frame_is_rejected() {
        let err = simulate_link(&PamFrame::default(), &LinkConfig::default(), &mut stream_rng(0, 0));
        assert!(matches!(err, Err(Error::Length(_))));
    }

    #[test]
    fn isolated_pulse_response_mirrors_under_dispersion_sign_flip() {
        let pos = LinkConfig { fiber_length: 10_000.0, ..LinkConfig::default() };
        let neg = LinkConfig { dispersion_ps_nm_km: -pos.dispersion_ps_nm_km, ..pos.clone() };
        let n = 64;
        let center = n / 2;
        let mut levels = vec![0.0; n];
        levels[center] = 3.0;
        let mut fp = shape_field(&levels, &pos);
        let mut fn_ = fp.clone();
        apply_dispersion(&mut fp, &pos);
        apply_dispersion(&mut fn_, &neg);
        let (ip, in_) = (detect(&fp), detect(&fn_));
        let m = ip.len() as isize;
        let c = (center * pos.oversampling) as isize;
        for i in 0..m {
            let mirrored = (2 * c - i).rem_euclid(m) as usize;
            assert!((ip[i as usize] - in_[mirrored]).abs() < 1e-9);
        }
        // the probe actually spreads
        let sym = noiseless_response(&levels, &pos);
        assert!(sym[center - 1] > pos.nominal_levels()[0] + 1e-3);
    }

    #[test]
    fn noise_calibration() {
        let cfg = LinkConfig::default();
        let frame = PamFrame::random(1_000_000, &mut stream_rng(2, 0));
        let noisy = simulate_link(&frame, &cfg, &mut stream_rng(4, 0)).unwrap();
        let clean = simulate_link(&frame, &cfg.noiseless(), &mut stream_rng(4, 0)).unwrap();
        let n = noisy.len() as f64;
        let diffs: Vec<f64> = noisy.samples.iter().zip(&clean.samples).map(|(a, b)| a - b).collect();
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = cfg.noise_variance();
        assert!(((var - target) / target).abs() < 0.05, "var {var}, target {target}");
    }

    #[test]
    fn taps_windows() {
        let record = ReceiveRecord {
            samples: (0..7).map(f64::from).collect(),
            labels: vec![0, 1, 2, 3, 0, 1, 2],
            y_max_observed: 6.0,
        };
        let w = sliding_taps(&record, 7).unwrap();
        assert_eq!(w.len(), 7);
        assert_eq!(w.taps(3), record.samples.as_slice());
        assert_eq!(w.taps(0), &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(w.taps(6), &[3.0, 4.0, 5.0, 6.0, 6.0, 6.0, 6.0]);
        for i in 0..6 {
            assert_eq!(w.taps(i)[1..], w.taps(i + 1)[..6]);
        }
        assert_eq!(w.get(2).1, 2);

        let constant = ReceiveRecord { samples: vec![1.5; 10], labels: vec![0; 10], y_max_observed: 1.5 };
        assert!(sliding_taps(&constant, 7).unwrap().iter().all(|(t, _)| t == [1.5; 7]));

        assert!(sliding_taps(&record, 6).is_err());
        assert!(sliding_taps(&record, 9).is_err());
    }

    #[test]
    fn config_json_round_trip_with_noise_off() {
        let cfg = LinkConfig::default().noiseless();
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"noise_power_db\":null"));
        let back: LinkConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.noise_variance(), 0.0);
        let partial: LinkConfig = serde_json::from_str(r#"{"fiber_length": 2000}"#).unwrap();
        assert_eq!(partial.fiber_length, 2000.0);
        assert_eq!(partial.baud_rate, 112e9);
    }

    #[test]
    fn validation() {
        assert!(LinkConfig::default().validate().is_ok());
        for bad in [
            LinkConfig { oversampling: 1, ..Default::default() },
            LinkConfig { rolloff: 1.5, ..Default::default() },
            LinkConfig { fiber_length: -1.0, ..Default::default() },
            LinkConfig { baud_rate: 0.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
