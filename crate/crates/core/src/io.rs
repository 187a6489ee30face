//! Checkpoints, metrics files and CSV tables.
//!
//! A run directory holds:
//!
//! | file            | content                                         |
//! |-----------------|-------------------------------------------------|
//! | `config.json`   | fully resolved [`ExperimentConfig`]             |
//! | `model.json`    | [`Checkpoint`]                                  |
//! | `metrics.json`  | [`MetricsReport`] of the checkpoint             |
//! | `loss.csv`      | `epoch,loss`                                    |
//! | `pg_trace.csv`  | `iteration,loss_theta,loss_star,theta_0,...`    |
//! | `run.json`      | status and wall-clock time                      |

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::encoder::EncodingParams;
use crate::link::LinkConfig;
use crate::metrics::{MetricsReport, SnnDemapper};
use crate::policy::PolicyStep;
use crate::snn::{NeuronConfig, SnnDims, SnnParams};
use crate::training::{RunRecord, RunStatus};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub seed: u64,
    pub neuron: NeuronConfig,
    pub dims: SnnDims,
    pub n_tap: usize,
    pub encoder: EncodingParams,
    /// Row-major `n_hid x n_in`.
    pub w_in: Vec<f64>,
    /// Row-major `n_out x n_hid`.
    pub w_out: Vec<f64>,
    /// Link the model was trained on.
    pub link: LinkConfig,
}

impl Checkpoint {
    pub fn from_record(record: &RunRecord) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: record.config.seed,
            neuron: record.config.snn.neuron.clone(),
            dims: record.params.dims(),
            n_tap: record.config.train.n_tap,
            encoder: record.encoder.clone(),
            w_in: record.params.w_in().to_vec(),
            w_out: record.params.w_out().to_vec(),
            link: record.config.link.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Validation(format!("checkpoint schema_version {} unsupported", self.schema_version)));
        }
        self.encoder.validate()?;
        self.link.validate()?;
        if self.dims.n_in != self.n_tap * self.encoder.channels {
            return Err(Error::Validation(format!(
                "checkpoint N_in = {} but n_tap * J = {}",
                self.dims.n_in,
                self.n_tap * self.encoder.channels
            )));
        }
        self.params().map(|_| ()).map_err(|e| Error::Validation(format!("checkpoint weights: {e}")))
    }

    pub fn params(&self) -> Result<SnnParams> {
        SnnParams::new(self.dims, self.w_in.clone(), self.w_out.clone())
    }

    pub fn demapper(&self) -> Result<SnnDemapper> {
        SnnDemapper::new(self.encoder.clone(), self.params()?, self.neuron.clone(), self.n_tap)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes `header` and `rows` as RFC 4180 CSV.
pub fn write_csv<W: Write, R, I>(out: W, header: &[&str], rows: R) -> Result<()>
where
    R: IntoIterator<Item = I>,
    I: IntoIterator,
    I::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_loss_csv<W: Write>(out: W, loss: &[f64]) -> Result<()> {
    write_csv(out, &["epoch", "loss"], loss.iter().enumerate().map(|(e, l)| [e.to_string(), l.to_string()]))
}

pub fn write_pg_trace_csv<W: Write>(out: W, trace: &[PolicyStep]) -> Result<()> {
    let n = trace.first().map_or(0, |s| s.theta.len());
    let mut header = vec!["iteration".to_string(), "loss_theta".into(), "loss_star".into()];
    header.extend((0..n).map(|i| format!("theta_{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = trace.iter().map(|s| {
        let mut row = vec![s.iteration.to_string(), s.loss_theta.to_string(), s.loss_star.to_string()];
        row.extend(s.theta.iter().map(f64::to_string));
        row
    });
    write_csv(out, &header, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub epochs_completed: usize,
    pub wall_clock_s: f64,
}

/// Writes every artifact of `record` into `dir`, creating it if needed.
pub fn write_run(dir: &Path, record: &RunRecord) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("config.json"), &record.config)?;
    Checkpoint::from_record(record).save(&dir.join("model.json"))?;
    if let Some(m) = &record.metrics {
        write_metrics(&dir.join("metrics.json"), m)?;
    }
    write_loss_csv(fs::File::create(dir.join("loss.csv"))?, &record.loss_curve)?;
    write_pg_trace_csv(fs::File::create(dir.join("pg_trace.csv"))?, &record.pg_trace)?;
    write_json(
        &dir.join("run.json"),
        &RunSummary {
            status: record.status.clone(),
            epochs_completed: record.loss_curve.len(),
            wall_clock_s: record.wall_clock_s,
        },
    )
}

pub fn write_metrics(path: &Path, m: &MetricsReport) -> Result<()> {
    write_json(path, m)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::train;

    fn tiny_record() -> RunRecord {
        let mut cfg = ExperimentConfig::default();
        cfg.encoder.channels = 2;
        cfg.encoder.steps = 4;
        cfg.snn.n_hid = 3;
        cfg.train.batch_size = 100;
        cfg.train.epochs_total = 3;
        cfg.train.epochs_joint = 2;
        cfg.train.eval_samples = 500;
        cfg.policy.perturbations = 3;
        train(&cfg).unwrap()
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let r = tiny_record();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let ck = Checkpoint::from_record(&r);
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params().unwrap(), r.params);
    }

    #[test]
    fn inconsistent_checkpoints_are_rejected() {
        let mut ck = Checkpoint::from_record(&tiny_record());
        ck.n_tap = 5;
        assert!(matches!(ck.validate(), Err(Error::Validation(_))));
        let mut ck = Checkpoint::from_record(&tiny_record());
        ck.w_out.pop();
        assert!(ck.validate().is_err());
    }

    #[test]
    fn run_directory_layout() {
        let r = tiny_record();
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        write_run(&dir, &r).unwrap();
        for f in ["config.json", "model.json", "metrics.json", "loss.csv", "pg_trace.csv", "run.json"] {
            assert!(dir.join(f).is_file(), "{f}");
        }
        let loss = fs::read_to_string(dir.join("loss.csv")).unwrap();
        assert_eq!(loss.lines().count(), 4);
        assert!(loss.starts_with("epoch,loss\n0,"));
        let pg = fs::read_to_string(dir.join("pg_trace.csv")).unwrap();
        assert!(pg.starts_with("iteration,loss_theta,loss_star,theta_0,theta_1,theta_2,theta_3\n"));
        assert_eq!(pg.lines().count(), 3);
        assert_eq!(load_config(&dir.join("config.json")).unwrap(), r.config);
    }
}
