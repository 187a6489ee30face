//! Alternating weight/encoder optimization and the `(J, K)` sweep.
//!
//! Every epoch draws a fresh batch from the link simulator. During the joint
//! phase one policy-gradient iteration per `pg_interval` epochs scores the
//! current encoder and `B` perturbed encoders on that same batch with the
//! current weights. Afterwards the encoder is frozen at the best point found.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::encoder::{init_params, EncodingParams, SpikeRaster};
use crate::link::{self, PamFrame, TapWindows};
use crate::metrics::{estimate_ber, MetricsReport, SnnDemapper};
use crate::policy::{sample_perturbations, stabilized_update, PolicyState, PolicyStep};
use crate::seed::{mix, rng_for, Stream};
use crate::snn::{self, init_weights, Adam, NeuronConfig, SnnGrads, SnnParams};
use crate::{Error, Result};

/// Samples per work unit in batch reductions. Fixed so that sums are taken in
/// the same order for any thread count.
pub const CHUNK: usize = 256;

/// Draws `n` fresh symbols and returns their tap windows.
pub fn draw_batch<R: Rng + ?Sized>(
    cfg: &ExperimentConfig,
    n: usize,
    rng: &mut R,
) -> Result<TapWindows> {
    let frame = PamFrame::random(n, rng);
    let record = link::simulate_link(&frame, &cfg.link, rng)?;
    link::sliding_taps(&record, cfg.train.n_tap)
}

fn chunk_ranges(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(CHUNK)).map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(n))).collect()
}

/// Mean cross-entropy over the batch and its gradient.
pub fn batch_loss_grad(
    encoder: &EncodingParams,
    params: &SnnParams,
    neuron: &NeuronConfig,
    batch: &TapWindows,
) -> Result<(f64, SnnGrads)> {
    let dims = params.dims();
    let parts: Vec<Result<(f64, SnnGrads)>> = chunk_ranges(batch.len())
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut grads = SnnGrads::zeros(dims);
            let mut raster = SpikeRaster::silent(encoder.steps, dims.n_in);
            let mut loss = 0.0;
            for i in lo..hi {
                let (taps, label) = batch.get(i);
                encoder.encode_into(taps, &mut raster);
                let out = snn::forward(&raster, params, neuron)?;
                let (l, g) = snn::ce_loss(&out.scores, label as usize)?;
                loss += l;
                snn::backward_into(&out.trace, &g, params, neuron, &mut grads)?;
            }
            Ok((loss, grads))
        })
        .collect();
    let mut loss = 0.0;
    let mut grads = SnnGrads::zeros(dims);
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grads.add_assign(&g);
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok((loss / n, grads))
}

/// Mean cross-entropy of each encoder on the same batch and weights.
pub fn batch_losses(
    encoders: &[EncodingParams],
    params: &SnnParams,
    neuron: &NeuronConfig,
    batch: &TapWindows,
) -> Result<Vec<f64>> {
    let ranges = chunk_ranges(batch.len());
    let jobs: Vec<(usize, (usize, usize))> =
        (0..encoders.len()).flat_map(|e| ranges.iter().map(move |&r| (e, r))).collect();
    let parts: Vec<Result<f64>> = jobs
        .into_par_iter()
        .map_init(snn::Scratch::default, |scratch, (e, (lo, hi))| {
            let enc = &encoders[e];
            let mut raster = SpikeRaster::silent(enc.steps, params.dims().n_in);
            let mut loss = 0.0;
            for i in lo..hi {
                let (taps, label) = batch.get(i);
                enc.encode_into(taps, &mut raster);
                snn::infer(&raster, params, neuron, scratch)?;
                loss += snn::ce_loss(&scratch.scores, label as usize)?.0;
            }
            Ok(loss)
        })
        .collect();
    let mut sums = vec![0.0; encoders.len()];
    for (k, part) in parts.into_iter().enumerate() {
        sums[k / ranges.len()] += part?;
    }
    Ok(sums.into_iter().map(|s| s / batch.len() as f64).collect())
}

/// `alpha` entries of a flattened encoder vector replaced by their magnitudes.
fn project(theta: &mut [f64], channels: usize) {
    theta[..channels].iter_mut().for_each(|a| *a = a.abs());
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Training stopped at `epoch`; the record holds the last finite state.
    Diverged { epoch: usize, message: String },
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub initial_encoder: EncodingParams,
    pub encoder: EncodingParams,
    pub params: SnnParams,
    /// Mean training cross-entropy per completed epoch.
    pub loss_curve: Vec<f64>,
    pub pg_trace: Vec<PolicyStep>,
    pub metrics: Option<MetricsReport>,
    pub status: RunStatus,
    pub wall_clock_s: f64,
}

impl RunRecord {
    pub fn demapper(&self) -> Result<SnnDemapper> {
        SnnDemapper::new(self.encoder.clone(), self.params.clone(), self.config.snn.neuron.clone(), self.config.train.n_tap)
    }
}

/// Progress notification for long runs.
#[derive(Debug, Clone, Copy)]
pub struct EpochEvent {
    pub epoch: usize,
    pub loss: f64,
    pub loss_star: Option<f64>,
}

pub fn train(cfg: &ExperimentConfig) -> Result<RunRecord> {
    train_with(cfg, |_| {})
}

pub fn train_with(cfg: &ExperimentConfig, mut observer: impl FnMut(&EpochEvent)) -> Result<RunRecord> {
    cfg.validate()?;
    let started = Instant::now();
    let j = cfg.encoder.channels;
    let initial_encoder = init_params(j, cfg.encoder.steps, cfg.encoder.y_max)?;
    let mut encoder = initial_encoder.clone();
    let mut params = init_weights(cfg.dims(), &mut rng_for(cfg.seed, Stream::WeightInit));
    let gain = cfg.train.input_gain;
    params.update(|w_in, _| w_in.iter_mut().for_each(|w| *w *= gain))?;
    let mut adam = Adam::new(cfg.train.lr);
    let mut policy = PolicyState::new(encoder.to_theta());
    let mut data_rng = rng_for(cfg.seed, Stream::TrainingData);
    let mut policy_rng = rng_for(cfg.seed, Stream::Policy);
    let mut loss_curve = Vec::with_capacity(cfg.train.epochs_total);
    let mut status = RunStatus::Completed;

    for epoch in 0..cfg.train.epochs_total {
        let joint = epoch < cfg.train.epochs_joint;
        let batch = draw_batch(cfg, cfg.train.batch_size, &mut data_rng)?;
        let (loss, grads) = batch_loss_grad(&encoder, &params, &cfg.snn.neuron, &batch)?;
        if !loss.is_finite() || !grads.is_finite() {
            status = RunStatus::Diverged { epoch, message: format!("loss {loss}, gradient norm {}", grads.norm()) };
            break;
        }

        let mut next_policy = None;
        if joint && epoch % cfg.train.pg_interval == 0 {
            let candidates = sample_perturbations(&policy.theta, &cfg.policy, &mut policy_rng);
            let encoders = candidates.iter().map(|c| encoder.with_theta(c)).collect::<Result<Vec<_>>>()?;
            let losses = batch_losses(&encoders, &params, &cfg.snn.neuron, &batch)?;
            match stabilized_update(&policy, &candidates, &losses, loss, &cfg.policy) {
                Ok(mut p) => {
                    project(&mut p.theta, j);
                    next_policy = Some(p);
                }
                Err(e) => {
                    status = RunStatus::Diverged { epoch, message: e.to_string() };
                    break;
                }
            }
        }

        let mut stepped = params.clone();
        if let Err(e) = adam.step(&mut stepped, &grads) {
            status = RunStatus::Diverged { epoch, message: e.to_string() };
            break;
        }
        params = stepped;
        loss_curve.push(loss);
        if let Some(p) = next_policy {
            policy = p;
            encoder = encoder.with_theta(&policy.theta)?;
        }
        if joint && epoch + 1 == cfg.train.epochs_joint {
            encoder = encoder.with_theta(&policy.theta_star)?;
        }
        observer(&EpochEvent {
            epoch,
            loss,
            loss_star: (!policy.history.is_empty()).then_some(policy.loss_star),
        });
    }
    // A run that stopped inside the joint phase still reports the best encoder.
    if cfg.train.epochs_joint > loss_curve.len() && !policy.history.is_empty() {
        encoder = encoder.with_theta(&policy.theta_star)?;
    }

    let mut record = RunRecord {
        config: cfg.clone(),
        initial_encoder,
        encoder,
        params,
        loss_curve,
        pg_trace: policy.history,
        metrics: None,
        status,
        wall_clock_s: 0.0,
    };
    if record.status == RunStatus::Completed {
        let demapper = record.demapper()?;
        record.metrics = Some(estimate_ber(&demapper, &cfg.link, cfg.train.eval_samples, cfg.seed)?);
    }
    record.wall_clock_s = started.elapsed().as_secs_f64();
    Ok(record)
}

/// Seed of sweep cell `(j, k)`.
pub fn cell_seed(master: u64, j: usize, k: usize) -> u64 {
    mix(master, ((j as u64) << 32) | k as u64)
}

pub fn cell_config(template: &ExperimentConfig, j: usize, k: usize) -> ExperimentConfig {
    let mut cfg = template.clone();
    cfg.encoder.channels = j;
    cfg.encoder.steps = k;
    cfg.seed = cell_seed(template.seed, j, k);
    cfg
}

#[derive(Debug)]
pub struct SweepCell {
    pub j: usize,
    pub k: usize,
    pub seed: u64,
    pub outcome: std::result::Result<RunRecord, String>,
}

/// One independent run per `(j, k)`; a failing cell is recorded and skipped.
pub fn sweep(
    template: &ExperimentConfig,
    js: &[usize],
    ks: &[usize],
    mut on_cell: impl FnMut(&SweepCell),
) -> Result<Vec<SweepCell>> {
    if js.is_empty() || ks.is_empty() {
        return Err(Error::Argument("sweep needs non-empty J and K lists".into()));
    }
    let mut cells = Vec::with_capacity(js.len() * ks.len());
    for &j in js {
        for &k in ks {
            let cfg = cell_config(template, j, k);
            let outcome = match train(&cfg) {
                Ok(r) => match &r.status {
                    RunStatus::Completed => Ok(r),
                    RunStatus::Diverged { epoch, message } => Err(format!("diverged at epoch {epoch}: {message}")),
                },
                Err(e) => Err(e.to_string()),
            };
            let cell = SweepCell { j, k, seed: cfg.seed, outcome };
            on_cell(&cell);
            cells.push(cell);
        }
    }
    Ok(cells)
}
