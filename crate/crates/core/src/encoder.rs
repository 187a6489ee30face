//! Time-to-first-spike encoding of receive samples.
//!
//! Channel `j` fires once, `min(alpha_j |x - chi_j|, T_max)` time units after
//! the window start. On the discrete grid the fire step is the floor of the same
//! expression saturated at `K`; a fire step of `K` means the channel stays
//! silent within the `K`-step window.
//!
//! Channel indices are zero-based throughout.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingParams {
    pub alpha: Vec<f64>,
    pub chi: Vec<f64>,
    #[serde(rename = "J")]
    pub channels: usize,
    #[serde(rename = "K")]
    pub steps: usize,
    pub t_max: f64,
}

impl EncodingParams {
    pub fn new(alpha: Vec<f64>, chi: Vec<f64>, steps: usize) -> Result<Self> {
        let params = Self { channels: alpha.len(), alpha, chi, steps, t_max: steps as f64 };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.alpha.len() != self.channels || self.chi.len() != self.channels {
            return Err(Error::Validation(format!(
                "encoder: need J >= 1 with J alphas and J chis, got J = {}, {} alphas, {} chis",
                self.channels,
                self.alpha.len(),
                self.chi.len()
            )));
        }
        if self.steps == 0 {
            return Err(Error::Validation("encoder: K must be >= 1".into()));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::Validation("encoder: T_max must be positive".into()));
        }
        if self.alpha.iter().chain(&self.chi).any(|v| !v.is_finite()) {
            return Err(Error::Validation("encoder: non-finite slope or reference".into()));
        }
        Ok(())
    }

    fn check_channel(&self, j: usize) -> Result<()> {
        if j >= self.channels {
            Err(Error::Index { index: j, len: self.channels })
        } else {
            Ok(())
        }
    }

    /// Spike delay of channel `j` in continuous time.
    pub fn fire_time_continuous(&self, x: f64, j: usize) -> Result<f64> {
        self.check_channel(j)?;
        Ok((self.alpha[j].abs() * (x - self.chi[j]).abs()).min(self.t_max))
    }

    /// Discrete fire step of channel `j` in `0..=K`; `K` means no spike.
    pub fn fire_time_discrete(&self, x: f64, j: usize) -> Result<usize> {
        self.check_channel(j)?;
        Ok(self.fire_step(x, j))
    }

    #[inline]
    fn fire_step(&self, x: f64, j: usize) -> usize {
        let k = self.steps as f64;
        // NaN distances saturate through `min`.
        (self.alpha[j].abs() * (x - self.chi[j]).abs()).min(k).floor() as usize
    }

    /// Flattened `(alpha_1..alpha_J, chi_1..chi_J)`, the vector tuned by the
    /// policy-gradient optimizer.
    pub fn to_theta(&self) -> Vec<f64> {
        self.alpha.iter().chain(&self.chi).copied().collect()
    }

    /// Inverse of [`to_theta`](Self::to_theta); slopes are projected to `|alpha|`.
    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != 2 * self.channels {
            return Err(Error::Length(format!(
                "theta has {} entries, expected {}",
                theta.len(),
                2 * self.channels
            )));
        }
        let (alpha, chi) = theta.split_at(self.channels);
        let params = Self {
            alpha: alpha.iter().map(|a| a.abs()).collect(),
            chi: chi.to_vec(),
            ..self.clone()
        };
        params.validate()?;
        Ok(params)
    }

    pub fn encode_window(&self, taps: &[f64], n_tap: usize) -> Result<SpikeRaster> {
        if taps.len() != n_tap {
            return Err(Error::Length(format!("expected {n_tap} taps, got {}", taps.len())));
        }
        Ok(self.encode(taps))
    }

    /// Raster for one window; column `m * J + j` carries channel `j` of tap `m`.
    pub fn encode(&self, taps: &[f64]) -> SpikeRaster {
        let mut raster = SpikeRaster::silent(self.steps, taps.len() * self.channels);
        self.encode_into(taps, &mut raster);
        raster
    }

    /// Re-encodes into an existing raster of matching shape.
    pub fn encode_into(&self, taps: &[f64], raster: &mut SpikeRaster) {
        debug_assert_eq!(raster.columns(), taps.len() * self.channels);
        raster.steps = self.steps;
        let mut col = 0;
        for &x in taps {
            for j in 0..self.channels {
                raster.fire[col] = self.fire_step(x, j) as u32;
                col += 1;
            }
        }
    }
}

/// `chi_j = j y_max / J` for `j = 1..J`, every `alpha_j = y_max K / 6`, `T_max = K`.
pub fn init_params(channels: usize, steps: usize, y_max: f64) -> Result<EncodingParams> {
    if channels == 0 || steps == 0 || !(y_max > 0.0) {
        return Err(Error::Argument(format!(
            "init_params needs J, K >= 1 and y_max > 0, got J = {channels}, K = {steps}, y_max = {y_max}"
        )));
    }
    let alpha = y_max * steps as f64 / 6.0;
    EncodingParams::new(
        vec![alpha; channels],
        (1..=channels).map(|j| j as f64 * y_max / channels as f64).collect(),
        steps,
    )
}

/// Binary `K x N_in` raster with at most one spike per column, stored as the
/// fire step of each column (`K` for a silent column).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeRaster {
    steps: usize,
    fire: Vec<u32>,
}

impl SpikeRaster {
    pub fn silent(steps: usize, columns: usize) -> Self {
        Self { steps, fire: vec![steps as u32; columns] }
    }

    /// Builds a raster from explicit fire steps; values `>= steps` are silent.
    pub fn from_fire_steps(steps: usize, fire: Vec<u32>) -> Self {
        let fire = fire.into_iter().map(|f| f.min(steps as u32)).collect();
        Self { steps, fire }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn columns(&self) -> usize {
        self.fire.len()
    }

    pub fn fire_steps(&self) -> &[u32] {
        &self.fire
    }

    /// Fire step of `column`, if it spikes inside the window.
    pub fn fire_step(&self, column: usize) -> Option<usize> {
        let f = self.fire[column] as usize;
        (f < self.steps).then_some(f)
    }

    pub fn get(&self, step: usize, column: usize) -> bool {
        self.fire_step(column) == Some(step)
    }

    pub fn spike_count(&self) -> usize {
        self.fire.iter().filter(|&&f| (f as usize) < self.steps).count()
    }

    /// Dense row-major `K x N_in` 0/1 matrix.
    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        (0..self.steps)
            .map(|k| (0..self.columns()).map(|c| u8::from(self.get(k, c))).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fig1(steps: usize) -> EncodingParams {
        EncodingParams::new(vec![20.0; 3], vec![0.25, 0.5, 0.75], steps).unwrap()
    }

    #[test]
    fn continuous_characteristic() {
        let p = fig1(4);
        assert_eq!(p.fire_time_continuous(0.25, 0).unwrap(), 0.0);
        assert_eq!(p.fire_time_continuous(0.5, 0).unwrap(), 4.0);
        assert!((p.fire_time_continuous(0.3, 0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn discrete_characteristic() {
        let p = fig1(4);
        // 0.3 - 0.25 rounds just below 0.05 in binary, so use exactly representable taps.
        assert_eq!(p.fire_time_discrete(0.3125, 0).unwrap(), 1);
        assert_eq!(p.fire_time_discrete(0.375, 0).unwrap(), 2);
        assert_eq!(p.fire_time_discrete(0.25, 0).unwrap(), 0);
        for x in [0.0, 0.05, 0.45, 0.5, 0.9, 1.0] {
            assert_eq!(p.fire_time_discrete(x, 0).unwrap(), 4, "x = {x}");
        }
    }

    #[test]
    fn channel_out_of_range() {
        let p = fig1(4);
        assert!(matches!(p.fire_time_discrete(0.3, 3), Err(Error::Index { index: 3, len: 3 })));
        assert!(p.fire_time_continuous(0.3, 7).is_err());
    }

    #[test]
    fn single_tap_window() {
        let p = fig1(4);
        let r = p.encode_window(&[0.3125], 1).unwrap();
        assert_eq!(r.spike_count(), 2);
        assert!(r.get(1, 0));
        assert_eq!(r.fire_step(1), Some(3));
        assert_eq!(r.fire_step(2), None);
        assert!(p.encode_window(&[0.3, 0.4], 1).is_err());
    }

    #[test]
    fn taps_at_reference_fire_immediately() {
        let p = EncodingParams::new(vec![5.0], vec![1.2], 6).unwrap();
        let r = p.encode(&[1.2; 7]);
        assert_eq!(r.spike_count(), 7);
        assert!((0..7).all(|c| r.get(0, c)));
    }

    #[test]
    fn initialization() {
        let p = init_params(10, 10, 7.0).unwrap();
        for (j, chi) in p.chi.iter().enumerate() {
            assert!((chi - 0.7 * (j + 1) as f64).abs() < 1e-12);
        }
        assert!(p.alpha.iter().all(|&a| (a - 70.0 / 6.0).abs() < 1e-12));
        assert_eq!(p.t_max, 10.0);

        let p = init_params(1, 6, 6.0).unwrap();
        assert_eq!((p.chi.clone(), p.alpha.clone()), (vec![6.0], vec![6.0]));

        let p = init_params(4, 4, 7.0).unwrap();
        assert_eq!(p.chi, vec![1.75, 3.5, 5.25, 7.0]);

        assert!(init_params(0, 4, 7.0).is_err());
        assert!(init_params(4, 0, 7.0).is_err());
        assert!(init_params(4, 4, 0.0).is_err());
    }

    #[test]
    fn theta_round_trip_projects_negative_slopes() {
        let p = fig1(4);
        let mut theta = p.to_theta();
        assert_eq!(theta.len(), 6);
        theta[1] = -3.0;
        let q = p.with_theta(&theta).unwrap();
        assert_eq!(q.alpha, vec![20.0, 3.0, 20.0]);
        assert!(p.with_theta(&theta[..5]).is_err());
    }

    #[test]
    fn json_field_names() {
        let text = serde_json::to_string(&fig1(4)).unwrap();
        assert!(text.contains("\"alpha\"") && text.contains("\"chi\""));
        assert!(text.contains("\"J\":3") && text.contains("\"K\":4"));
    }

    #[test]
    fn dense_view() {
        let r = SpikeRaster::from_fire_steps(3, vec![0, 2, 3, 9]);
        assert_eq!(r.to_dense(), vec![vec![1, 0, 0, 0], vec![0, 0, 0, 0], vec![0, 1, 0, 0]]);
    }

    proptest! {
        #[test]
        fn one_spike_per_column_at_most(
            taps in prop::collection::vec(-2.0f64..9.0, 7),
            alpha in prop::collection::vec(-30.0f64..30.0, 1..6),
            steps in 1usize..12,
        ) {
            let chi: Vec<f64> = (0..alpha.len()).map(|j| j as f64).collect();
            let p = EncodingParams::new(alpha, chi, steps).unwrap();
            let r = p.encode(&taps);
            prop_assert!(r.spike_count() <= taps.len() * p.channels);
            for c in 0..r.columns() {
                let ones = (0..steps).filter(|&k| r.get(k, c)).count();
                prop_assert!(ones <= 1);
            }
        }

        #[test]
        fn fire_times_are_symmetric_about_reference(x in -3.0f64..3.0, chi in -1.0f64..1.0, alpha in 0.1f64..40.0) {
            let p = EncodingParams::new(vec![alpha], vec![chi], 8).unwrap();
            let mirrored = 2.0 * chi - x;
            let (a, b) = (p.fire_time_continuous(x, 0).unwrap(), p.fire_time_continuous(mirrored, 0).unwrap());
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn fire_time_grows_with_distance(chi in -1.0f64..1.0, d1 in 0.0f64..2.0, d2 in 0.0f64..2.0) {
            let p = EncodingParams::new(vec![7.0], vec![chi], 8).unwrap();
            let (near, far) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(p.fire_time_continuous(chi + near, 0).unwrap() <= p.fire_time_continuous(chi + far, 0).unwrap());
            prop_assert!(p.fire_time_discrete(chi - near, 0).unwrap() <= p.fire_time_discrete(chi - far, 0).unwrap());
        }

        #[test]
        fn equal_fire_steps_give_equal_rasters(x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let p = fig1(4);
            let same = (0..3).all(|j| p.fire_time_discrete(x, j).unwrap() == p.fire_time_discrete(y, j).unwrap());
            prop_assert_eq!(same, p.encode(&[x]) == p.encode(&[y]));
        }
    }
}
