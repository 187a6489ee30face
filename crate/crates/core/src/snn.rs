//! Discrete-time spiking network: `N_in` spike inputs, `N_hid` LIF neurons,
//! `N_out` non-spiking LI readout neurons, bias-free dense layers.
//!
//! Per step `k` (hidden layer, post-reset membrane `u`):
//!
//! ```text
//! i[k] = beta_s i[k-1] + W_in x[k]
//! v[k] = beta_m u[k-1] + (1 - beta_m) i[k]
//! z[k] = H(v[k] - v_th),  u[k] = v[k] - v_th z[k]
//! ```
//!
//! The readout runs the same recurrences driven by `W_out z[k-1]` without
//! threshold or reset; class scores are the maxima over time of the readout
//! membranes. Gradients are exact reverse-mode derivatives of this unrolled
//! graph with `H'` replaced by the fast-sigmoid surrogate
//! `1 / (gamma |v - v_th| + 1)^2`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::SpikeRaster;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// Decay factors `exp(-dt / tau)`.
    #[default]
    ExponentialEuler,
    /// Decay factors `1 - dt / tau`.
    Euler,
}

/// Forward nonlinearity of the hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpikeFunction {
    /// Binary spikes; the surrogate is used only in the backward pass.
    #[default]
    Heaviside,
    /// Continuous `z = s / (1 + gamma |s|)` with `s = v - v_th`, whose exact
    /// derivative is the surrogate. The backward pass is then an exact
    /// gradient, which makes finite-difference verification possible.
    Relaxed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuronConfig {
    pub tau_m: f64,
    pub tau_s: f64,
    pub v_th: f64,
    pub dt: f64,
    pub surrogate_steepness: f64,
    pub discretization: Discretization,
    pub spike_function: SpikeFunction,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        Self {
            tau_m: 6.0,
            tau_s: 6.0,
            v_th: 1.0,
            dt: 0.5,
            surrogate_steepness: 100.0,
            discretization: Discretization::ExponentialEuler,
            spike_function: SpikeFunction::Heaviside,
        }
    }
}

impl NeuronConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.tau_m > self.dt && self.tau_s > self.dt) {
            return Err(Error::Validation(format!(
                "neuron: need tau_m, tau_s > dt > 0, got tau_m = {}, tau_s = {}, dt = {}",
                self.tau_m, self.tau_s, self.dt
            )));
        }
        if !(self.v_th > 0.0 && self.v_th.is_finite()) {
            return Err(Error::Validation("neuron: v_th must be positive".into()));
        }
        if !(self.surrogate_steepness > 0.0 && self.surrogate_steepness.is_finite()) {
            return Err(Error::Validation("neuron: surrogate_steepness must be positive".into()));
        }
        Ok(())
    }

    fn decay(&self, tau: f64) -> f64 {
        match self.discretization {
            Discretization::ExponentialEuler => (-self.dt / tau).exp(),
            Discretization::Euler => 1.0 - self.dt / tau,
        }
    }

    pub fn beta_m(&self) -> f64 {
        self.decay(self.tau_m)
    }

    pub fn beta_s(&self) -> f64 {
        self.decay(self.tau_s)
    }

    #[inline]
    pub fn surrogate(&self, v: f64) -> f64 {
        let d = self.surrogate_steepness * (v - self.v_th).abs() + 1.0;
        1.0 / (d * d)
    }

    #[inline]
    fn activate(&self, v: f64) -> f64 {
        match self.spike_function {
            SpikeFunction::Heaviside => {
                if v >= self.v_th {
                    1.0
                } else {
                    0.0
                }
            }
            SpikeFunction::Relaxed => {
                let s = v - self.v_th;
                s / (1.0 + self.surrogate_steepness * s.abs())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnnDims {
    pub n_in: usize,
    pub n_hid: usize,
    pub n_out: usize,
}

impl SnnDims {
    pub fn param_count(&self) -> usize {
        self.n_hid * (self.n_in + self.n_out)
    }
}

/// Layer weights, row-major: `w_in` is `n_hid x n_in`, `w_out` is `n_out x n_hid`.
///
/// Fields are private so that the cached transposes and the checksum used to
/// detect stale traces always match the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SnnParams {
    dims: SnnDims,
    w_in: Vec<f64>,
    w_out: Vec<f64>,
    w_in_t: Vec<f64>,
    w_out_t: Vec<f64>,
    checksum: u64,
}

fn transpose(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; m.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

fn fnv1a(dims: &SnnDims, w_in: &[f64], w_out: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let words = [dims.n_in as u64, dims.n_hid as u64, dims.n_out as u64]
        .into_iter()
        .chain(w_in.iter().chain(w_out).map(|w| w.to_bits()));
    for w in words {
        h ^= w;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl SnnParams {
    pub fn new(dims: SnnDims, w_in: Vec<f64>, w_out: Vec<f64>) -> Result<Self> {
        if w_in.len() != dims.n_hid * dims.n_in || w_out.len() != dims.n_out * dims.n_hid {
            return Err(Error::Shape(format!(
                "weights {}+{} do not fit dims {:?}",
                w_in.len(),
                w_out.len(),
                dims
            )));
        }
        if w_in.iter().chain(&w_out).any(|w| !w.is_finite()) {
            return Err(Error::Numeric("non-finite weight".into()));
        }
        let mut p = Self { dims, w_in, w_out, w_in_t: Vec::new(), w_out_t: Vec::new(), checksum: 0 };
        p.refresh();
        Ok(p)
    }

    pub fn zeros(dims: SnnDims) -> Self {
        Self::new(dims, vec![0.0; dims.n_hid * dims.n_in], vec![0.0; dims.n_out * dims.n_hid])
            .expect("consistent shapes")
    }

    fn refresh(&mut self) {
        self.w_in_t = transpose(&self.w_in, self.dims.n_hid, self.dims.n_in);
        self.w_out_t = transpose(&self.w_out, self.dims.n_out, self.dims.n_hid);
        self.checksum = fnv1a(&self.dims, &self.w_in, &self.w_out);
    }

    pub fn dims(&self) -> SnnDims {
        self.dims
    }

    pub fn w_in(&self) -> &[f64] {
        &self.w_in
    }

    pub fn w_out(&self) -> &[f64] {
        &self.w_out
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    pub fn param_count(&self) -> usize {
        self.w_in.len() + self.w_out.len()
    }

    /// Mutates both matrices through a closure, then restores the caches.
    pub fn update(&mut self, f: impl FnOnce(&mut [f64], &mut [f64])) -> Result<()> {
        f(&mut self.w_in, &mut self.w_out);
        if self.w_in.iter().chain(&self.w_out).any(|w| !w.is_finite()) {
            return Err(Error::Numeric("non-finite weight after update".into()));
        }
        self.refresh();
        Ok(())
    }

    fn check_raster(&self, raster: &SpikeRaster) -> Result<()> {
        if raster.columns() != self.dims.n_in {
            return Err(Error::Shape(format!(
                "raster has {} columns, network expects {}",
                raster.columns(),
                self.dims.n_in
            )));
        }
        Ok(())
    }
}

/// Uniform `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights per layer.
pub fn init_weights<R: Rng + ?Sized>(dims: SnnDims, rng: &mut R) -> SnnParams {
    let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
    };
    let w_in = draw(dims.n_hid * dims.n_in, dims.n_in);
    let w_out = draw(dims.n_out * dims.n_hid, dims.n_hid);
    SnnParams::new(dims, w_in, w_out).expect("finite draws")
}

/// Gradients in the layout of [`SnnParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct SnnGrads {
    pub w_in: Vec<f64>,
    pub w_out: Vec<f64>,
}

impl SnnGrads {
    pub fn zeros(dims: SnnDims) -> Self {
        Self { w_in: vec![0.0; dims.n_hid * dims.n_in], w_out: vec![0.0; dims.n_out * dims.n_hid] }
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.w_in.iter_mut().zip(&other.w_in).for_each(|(a, b)| *a += b);
        self.w_out.iter_mut().zip(&other.w_out).for_each(|(a, b)| *a += b);
    }

    pub fn scale(&mut self, s: f64) {
        self.w_in.iter_mut().chain(self.w_out.iter_mut()).for_each(|g| *g *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.w_in.iter().chain(&self.w_out).all(|g| g.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.w_in.iter().chain(&self.w_out).map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Everything the backward pass needs, recorded step by step (`K x N` row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub steps: usize,
    pub hidden_current: Vec<f64>,
    /// Pre-reset hidden membranes.
    pub hidden_membrane: Vec<f64>,
    pub hidden_spikes: Vec<f64>,
    pub output_membrane: Vec<f64>,
    pub scores: Vec<f64>,
    /// Step at which each class score was attained (earliest on ties).
    pub argmax: Vec<usize>,
    input_fire: Vec<u32>,
    checksum: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub scores: Vec<f64>,
    pub hidden_spike_count: usize,
    pub trace: ForwardTrace,
}

/// Reusable buffers for trace-free inference.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    drive: Vec<f64>,
    i_hid: Vec<f64>,
    v_hid: Vec<f64>,
    z_prev: Vec<f64>,
    i_out: Vec<f64>,
    v_out: Vec<f64>,
    pub scores: Vec<f64>,
}

struct Recorder<'a> {
    i: &'a mut [f64],
    v: &'a mut [f64],
    z: &'a mut [f64],
    vo: &'a mut [f64],
}

fn simulate(
    raster: &SpikeRaster,
    params: &SnnParams,
    cfg: &NeuronConfig,
    s: &mut Scratch,
    mut rec: Option<Recorder<'_>>,
    argmax: Option<&mut [usize]>,
) -> usize {
    let SnnDims { n_in, n_hid, n_out } = params.dims;
    let steps = raster.steps();
    let (bm, bs) = (cfg.beta_m(), cfg.beta_s());
    let gain = 1.0 - bm;

    s.drive.clear();
    s.drive.resize(steps * n_hid, 0.0);
    for c in 0..n_in {
        if let Some(k) = raster.fire_step(c) {
            let col = &params.w_in_t[c * n_hid..(c + 1) * n_hid];
            let row = &mut s.drive[k * n_hid..(k + 1) * n_hid];
            row.iter_mut().zip(col).for_each(|(d, w)| *d += w);
        }
    }
    for buf in [&mut s.i_hid, &mut s.v_hid, &mut s.z_prev] {
        buf.clear();
        buf.resize(n_hid, 0.0);
    }
    for buf in [&mut s.i_out, &mut s.v_out] {
        buf.clear();
        buf.resize(n_out, 0.0);
    }
    s.scores.clear();
    s.scores.resize(n_out, f64::NEG_INFINITY);
    let mut best = argmax;
    let mut spikes = 0;

    for k in 0..steps {
        // readout driven by the previous step's spikes
        for c in 0..n_out {
            s.i_out[c] *= bs;
        }
        for h in 0..n_hid {
            let z = s.z_prev[h];
            if z != 0.0 {
                let col = &params.w_out_t[h * n_out..(h + 1) * n_out];
                s.i_out.iter_mut().zip(col).for_each(|(i, w)| *i += w * z);
            }
        }
        for c in 0..n_out {
            s.v_out[c] = bm * s.v_out[c] + gain * s.i_out[c];
            if s.v_out[c] > s.scores[c] {
                s.scores[c] = s.v_out[c];
                if let Some(b) = best.as_deref_mut() {
                    b[c] = k;
                }
            }
        }

        let drive = &s.drive[k * n_hid..(k + 1) * n_hid];
        for h in 0..n_hid {
            let i = bs * s.i_hid[h] + drive[h];
            let v = bm * s.v_hid[h] + gain * i;
            let z = cfg.activate(v);
            if v >= cfg.v_th {
                spikes += 1;
            }
            s.i_hid[h] = i;
            s.v_hid[h] = v - cfg.v_th * z;
            s.z_prev[h] = z;
            if let Some(r) = rec.as_mut() {
                r.i[k * n_hid + h] = i;
                r.v[k * n_hid + h] = v;
                r.z[k * n_hid + h] = z;
            }
        }
        if let Some(r) = rec.as_mut() {
            r.vo[k * n_out..(k + 1) * n_out].copy_from_slice(&s.v_out);
        }
    }
    if steps == 0 {
        s.scores.iter_mut().for_each(|x| *x = 0.0);
    }
    spikes
}

/// Runs the network on one raster and records the full trace.
pub fn forward(raster: &SpikeRaster, params: &SnnParams, cfg: &NeuronConfig) -> Result<ForwardOutput> {
    params.check_raster(raster)?;
    let SnnDims { n_hid, n_out, .. } = params.dims;
    let steps = raster.steps();
    let mut trace = ForwardTrace {
        steps,
        hidden_current: vec![0.0; steps * n_hid],
        hidden_membrane: vec![0.0; steps * n_hid],
        hidden_spikes: vec![0.0; steps * n_hid],
        output_membrane: vec![0.0; steps * n_out],
        scores: Vec::new(),
        argmax: vec![0; n_out],
        input_fire: raster.fire_steps().to_vec(),
        checksum: params.checksum,
    };
    let mut scratch = Scratch::default();
    let rec = Recorder {
        i: &mut trace.hidden_current,
        v: &mut trace.hidden_membrane,
        z: &mut trace.hidden_spikes,
        vo: &mut trace.output_membrane,
    };
    let spikes = simulate(raster, params, cfg, &mut scratch, Some(rec), Some(&mut trace.argmax));
    trace.scores = scratch.scores.clone();
    Ok(ForwardOutput { scores: scratch.scores, hidden_spike_count: spikes, trace })
}

/// Trace-free forward pass; the class scores are left in `scratch.scores`.
/// Returns the hidden spike count.
pub fn infer(raster: &SpikeRaster, params: &SnnParams, cfg: &NeuronConfig, scratch: &mut Scratch) -> Result<usize> {
    params.check_raster(raster)?;
    Ok(simulate(raster, params, cfg, scratch, None, None))
}

/// Softmax cross-entropy and its gradient with respect to the scores.
pub fn ce_loss(scores: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= scores.len() {
        return Err(Error::Argument(format!("label {label} out of range for {} classes", scores.len())));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    let loss = sum.ln() + max - scores[label];
    let mut grad: Vec<f64> = exp.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Index of the largest score, earliest on ties.
pub fn decide(scores: &[f64]) -> usize {
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = c;
        }
    }
    best
}

/// Reverse-mode pass through the recorded trace, accumulating into `grads`.
pub fn backward_into(
    trace: &ForwardTrace,
    grad_scores: &[f64],
    params: &SnnParams,
    cfg: &NeuronConfig,
    grads: &mut SnnGrads,
) -> Result<()> {
    if trace.checksum != params.checksum {
        return Err(Error::StaleTrace { recorded: trace.checksum, current: params.checksum });
    }
    let SnnDims { n_in, n_hid, n_out } = params.dims;
    if grad_scores.len() != n_out {
        return Err(Error::Shape(format!("{} score gradients for {n_out} outputs", grad_scores.len())));
    }
    if grads.w_in.len() != n_hid * n_in || grads.w_out.len() != n_out * n_hid {
        return Err(Error::Shape("gradient buffers do not match the network".into()));
    }
    let steps = trace.steps;
    let (bm, bs) = (cfg.beta_m(), cfg.beta_s());
    let gain = 1.0 - bm;

    let mut lam_vo = vec![0.0; n_out];
    let mut lam_io = vec![0.0; n_out];
    let mut lam_v = vec![0.0; n_hid];
    let mut lam_i_next = vec![0.0; n_hid];
    // W_out^T lambda_io[k+1], the readout's pull on z[k]
    let mut from_out = vec![0.0; n_hid];
    let mut lam_i_all = vec![0.0; steps * n_hid];

    for k in (0..steps).rev() {
        for c in 0..n_out {
            let direct = if trace.argmax[c] == k { grad_scores[c] } else { 0.0 };
            lam_vo[c] = direct + bm * lam_vo[c];
            lam_io[c] = gain * lam_vo[c] + bs * lam_io[c];
        }

        let v_row = &trace.hidden_membrane[k * n_hid..(k + 1) * n_hid];
        for h in 0..n_hid {
            let lam_u = bm * lam_v[h];
            let lam_z = from_out[h] - cfg.v_th * lam_u;
            let lv = lam_u + cfg.surrogate(v_row[h]) * lam_z;
            let li = gain * lv + bs * lam_i_next[h];
            lam_v[h] = lv;
            lam_i_next[h] = li;
            lam_i_all[k * n_hid + h] = li;
        }

        // readout at step k consumed z[k-1]
        if k > 0 {
            let z_row = &trace.hidden_spikes[(k - 1) * n_hid..k * n_hid];
            for (h, &z) in z_row.iter().enumerate() {
                if z != 0.0 {
                    for c in 0..n_out {
                        grads.w_out[c * n_hid + h] += lam_io[c] * z;
                    }
                }
            }
        }
        for h in 0..n_hid {
            let col = &params.w_out_t[h * n_out..(h + 1) * n_out];
            from_out[h] = col.iter().zip(&lam_io).map(|(w, l)| w * l).sum();
        }
    }

    for (c, &f) in trace.input_fire.iter().enumerate() {
        let k = f as usize;
        if k < steps {
            let lam = &lam_i_all[k * n_hid..(k + 1) * n_hid];
            for (h, l) in lam.iter().enumerate() {
                grads.w_in[h * n_in + c] += l;
            }
        }
    }
    Ok(())
}

pub fn backward(trace: &ForwardTrace, grad_scores: &[f64], params: &SnnParams, cfg: &NeuronConfig) -> Result<SnnGrads> {
    let mut grads = SnnGrads::zeros(params.dims);
    backward_into(trace, grad_scores, params, cfg, &mut grads)?;
    Ok(grads)
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update over a flat parameter slice.
    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!("{} params, {} grads", params.len(), grads.len())));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient, step refused".into()));
        }
        if self.m.len() != params.len() {
            self.m = vec![0.0; params.len()];
            self.v = vec![0.0; params.len()];
            self.t = 0;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }

    /// Updates both weight matrices of `params` in place.
    pub fn step(&mut self, params: &mut SnnParams, grads: &SnnGrads) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient, step refused".into()));
        }
        let n_in = params.w_in.len();
        let mut flat: Vec<f64> = params.w_in.iter().chain(&params.w_out).copied().collect();
        let g: Vec<f64> = grads.w_in.iter().chain(&grads.w_out).copied().collect();
        self.step_slice(&mut flat, &g)?;
        params.update(|wi, wo| {
            wi.copy_from_slice(&flat[..n_in]);
            wo.copy_from_slice(&flat[n_in..]);
        })
    }
}
