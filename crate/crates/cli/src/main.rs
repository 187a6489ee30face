//! `spiketrace` command-line driver.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rand::Rng;

use spiketrace::config::{ExperimentConfig, Profile, TrainConfig};
use spiketrace::encoder::EncodingParams;
use spiketrace::io::{self as sio, Checkpoint};
use spiketrace::metrics::{estimate_ber, MetricsReport};
use spiketrace::policy::{optimize, FnObjective, PolicyConfig};
use spiketrace::seed::{rng_for, Stream};
use spiketrace::training::{self, RunRecord, SweepCell};
use spiketrace::Error;

#[derive(Debug, Parser)]
#[command(name = "spiketrace", version, about = "Spike-encoding optimization for SNN equalizers on a simulated IM/DD link")]
struct Cli {
    /// Worker threads for batch evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one encoder/SNN pair and evaluate it.
    Train(TrainArgs),
    /// Train one independent run per (J, K) cell.
    Sweep(SweepArgs),
    /// Monte-Carlo BER of a checkpoint.
    Eval(EvalArgs),
    /// BER against noise power for a checkpoint.
    Curve(CurveArgs),
    /// Tabulate the encoder characteristic over x.
    EncodeDemo(EncodeDemoArgs),
    /// Run the policy-gradient optimizer on a synthetic target.
    PgBench(PgBenchArgs),
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Experiment configuration JSON; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training scale preset; applied before config-file values.
    #[arg(long, value_parser = parse_profile)]
    profile: Option<Profile>,
    #[arg(long, env = "SPIKETRACE_SEED")]
    seed: Option<u64>,
    /// Noise power in dB; "off" disables noise.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_db)]
    noise: Option<f64>,
    /// Fiber length in meters.
    #[arg(long)]
    fiber_length: Option<f64>,
    #[arg(long)]
    n_hid: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    epochs_joint: Option<usize>,
    #[arg(long, value_parser = parse_count)]
    eval_samples: Option<u64>,
    /// Parent directory of run directories.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Print progress every N epochs (0 = quiet).
    #[arg(long, default_value_t = 100)]
    progress: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long)]
    j: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long, value_delimiter = ',', default_value = "4,6,8,10")]
    j: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "4,6,8,10")]
    k: Vec<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Noise power in dB; defaults to the training link's value.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_db)]
    noise: Option<f64>,
    #[arg(long, default_value = "1e6", value_parser = parse_count)]
    samples: u64,
    #[arg(long, env = "SPIKETRACE_SEED", default_value_t = 1)]
    seed: u64,
    /// Metrics JSON path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CurveArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Inclusive range `from..to` in dB.
    #[arg(long, allow_hyphen_values = true, default_value = "-15..-22", value_parser = parse_range)]
    noise: (f64, f64),
    #[arg(long, default_value_t = 1.0)]
    step: f64,
    #[arg(long, default_value = "1e6", value_parser = parse_count)]
    samples: u64,
    #[arg(long, env = "SPIKETRACE_SEED", default_value_t = 1)]
    seed: u64,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EncodeDemoArgs {
    #[arg(long)]
    j: usize,
    #[arg(long)]
    k: usize,
    /// One slope for every channel, or a comma-separated list of J slopes.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    chi: Vec<f64>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    from: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    to: f64,
    #[arg(long, default_value_t = 0.001)]
    step: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PgBenchArgs {
    #[arg(long, default_value = "quadratic")]
    target: String,
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long, env = "SPIKETRACE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_db(s: &str) -> Result<f64, String> {
    match s {
        "off" | "none" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|_| format!("'{s}' is not a dB value")),
    }
}

/// Accepts integers and scientific notation such as `1e7`.
fn parse_count(s: &str) -> Result<u64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a count"))?;
    if v >= 1.0 && v.fract() == 0.0 && v <= u64::MAX as f64 {
        Ok(v as u64)
    } else {
        Err(format!("'{s}' is not a positive integer count"))
    }
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("'{s}' is not a range like -15..-22"))?;
    let a = a.trim().parse().map_err(|_| format!("bad range start '{a}'"))?;
    let b = b.trim().parse().map_err(|_| format!("bad range end '{b}'"))?;
    Ok((a, b))
}

/// Failure kind, mapped to the process exit code.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn config_err<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Config(e.into())
}

/// Input problems (schema, validation, missing files) are configuration errors.
fn classify(e: Error) -> Failure {
    match &e {
        Error::Validation(_) | Error::Json(_) | Error::Argument(_) | Error::Length(_) | Error::Io(_) => config_err(e),
        _ => Failure::Runtime(e.into()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Curve(a) => cmd_curve(a),
        Command::EncodeDemo(a) => cmd_encode_demo(a),
        Command::PgBench(a) => cmd_pg_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn resolve(exp: &ExperimentArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::default();
    if let Some(p) = exp.profile {
        cfg.train = TrainConfig::profile(p);
    }
    if let Some(path) = &exp.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(config_err)?;
        // File values override the profile; absent fields keep it.
        let mut base = serde_json::to_value(&cfg).map_err(config_err)?;
        let patch: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(config_err)?;
        merge(&mut base, patch);
        cfg = serde_json::from_value(base).with_context(|| format!("in {}", path.display())).map_err(config_err)?;
    }
    if let Some(s) = exp.seed {
        cfg.seed = s;
    }
    if let Some(n) = exp.noise {
        cfg.link.noise_power_db = n;
    }
    if let Some(l) = exp.fiber_length {
        cfg.link.fiber_length = l;
    }
    if let Some(n) = exp.n_hid {
        cfg.snn.n_hid = n;
    }
    if let Some(b) = exp.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(e) = exp.epochs {
        cfg.train.epochs_total = e;
        cfg.train.epochs_joint = cfg.train.epochs_joint.min(e);
    }
    if let Some(e) = exp.epochs_joint {
        cfg.train.epochs_joint = e;
    }
    if let Some(n) = exp.eval_samples {
        cfg.train.eval_samples = n;
    }
    Ok(cfg)
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn run_dir(parent: &Path, seed: u64) -> PathBuf {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    parent.join(format!("{stamp}-seed{seed}"))
}

fn progress(every: usize) -> impl FnMut(&training::EpochEvent) {
    move |e| {
        if every > 0 && e.epoch % every == 0 {
            match e.loss_star {
                Some(s) => eprintln!("epoch {:>6}  loss {:.6}  loss* {:.6}", e.epoch, e.loss, s),
                None => eprintln!("epoch {:>6}  loss {:.6}", e.epoch, e.loss),
            }
        }
    }
}

fn summary(m: &MetricsReport) -> String {
    format!(
        "BER {:.3e} [{:.3e}, {:.3e}]  Z_avg {:.2}  #MAC {}",
        m.ber, m.ber_lo, m.ber_hi, m.z_avg, m.mac_count
    )
}

fn finish_run(record: &RunRecord, dir: &Path) -> Result<(), Failure> {
    sio::write_run(dir, record).with_context(|| format!("writing {}", dir.display()))?;
    match (&record.status, &record.metrics) {
        (training::RunStatus::Completed, Some(m)) => {
            println!("{}  ({})", summary(m), dir.display());
            Ok(())
        }
        (training::RunStatus::Diverged { epoch, message }, _) => Err(Failure::Runtime(anyhow!(
            "training diverged at epoch {epoch}: {message}; last finite state saved in {}",
            dir.display()
        ))),
        _ => Err(Failure::Runtime(anyhow!("run finished without metrics"))),
    }
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let mut cfg = resolve(&a.exp)?;
    if let Some(j) = a.j {
        cfg.encoder.channels = j;
    }
    if let Some(k) = a.k {
        cfg.encoder.steps = k;
    }
    cfg.validate().map_err(config_err)?;
    let record = training::train_with(&cfg, progress(a.exp.progress)).map_err(classify)?;
    finish_run(&record, &run_dir(&a.exp.out, cfg.seed))
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    let cfg = resolve(&a.exp)?;
    cfg.validate().map_err(config_err)?;
    if a.j.iter().chain(&a.k).any(|&v| v == 0) {
        return Err(config_err(anyhow!("J and K lists must contain positive values")));
    }
    let root = run_dir(&a.exp.out, cfg.seed);
    fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
    sio::write_json(&root.join("template.json"), &cfg).map_err(classify)?;
    let mut write_err = None;
    let cells = training::sweep(&cfg, &a.j, &a.k, |cell| {
        let dir = root.join(format!("J{}_K{}", cell.j, cell.k));
        match &cell.outcome {
            Ok(r) => {
                if let Err(e) = sio::write_run(&dir, r) {
                    write_err.get_or_insert(e);
                }
                if let Some(m) = &r.metrics {
                    eprintln!("J={:>2} K={:>2}  {}", cell.j, cell.k, summary(m));
                }
            }
            Err(e) => eprintln!("J={:>2} K={:>2}  failed: {e}", cell.j, cell.k),
        }
    })
    .map_err(classify)?;
    if let Some(e) = write_err {
        return Err(Failure::Runtime(e.into()));
    }
    let table = fs::File::create(root.join("sweep.csv")).with_context(|| "creating sweep.csv")?;
    write_sweep_table(table, &cells).map_err(classify)?;
    let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
    println!("{} cells, {} failed  ({})", cells.len(), failed, root.join("sweep.csv").display());
    if failed > 0 {
        return Err(Failure::Runtime(anyhow!("{failed} sweep cells failed")));
    }
    Ok(())
}

fn write_sweep_table<W: Write>(out: W, cells: &[SweepCell]) -> spiketrace::Result<()> {
    let header = ["J", "K", "seed", "status", "ber", "ber_lo", "ber_hi", "z_avg", "mac_count", "param_count"];
    let rows = cells.iter().map(|c| {
        let mut row = vec![c.j.to_string(), c.k.to_string(), c.seed.to_string()];
        match c.outcome.as_ref().map(|r| r.metrics.as_ref()) {
            Ok(Some(m)) => row.extend([
                "ok".to_string(),
                m.ber.to_string(),
                m.ber_lo.to_string(),
                m.ber_hi.to_string(),
                m.z_avg.to_string(),
                m.mac_count.to_string(),
                m.param_count.to_string(),
            ]),
            Ok(None) => row.extend(["no_metrics".to_string()].into_iter().chain(std::iter::repeat_n(String::new(), 6))),
            Err(e) => row.extend([format!("failed: {e}")].into_iter().chain(std::iter::repeat_n(String::new(), 6))),
        }
        row
    });
    sio::write_csv(out, &header, rows)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display())).map_err(config_err)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let demapper = ck.demapper().map_err(classify)?;
    let mut link = ck.link.clone();
    if let Some(n) = a.noise {
        link.noise_power_db = n;
    }
    let m = estimate_ber(&demapper, &link, a.samples, a.seed).map_err(classify)?;
    match &a.out {
        Some(p) => {
            sio::write_metrics(p, &m).map_err(classify)?;
            println!("{}", summary(&m));
        }
        None => println!("{}", serde_json::to_string_pretty(&m).map_err(|e| Failure::Runtime(e.into()))?),
    }
    Ok(())
}

fn cmd_curve(a: CurveArgs) -> Result<(), Failure> {
    if !(a.step > 0.0) {
        return Err(config_err(anyhow!("--step must be positive")));
    }
    let ck = load_checkpoint(&a.checkpoint)?;
    let demapper = ck.demapper().map_err(classify)?;
    let (from, to) = a.noise;
    let n = ((from - to).abs() / a.step).floor() as usize;
    let dir = if to < from { -1.0 } else { 1.0 };
    let mut rows = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let db = from + dir * a.step * i as f64;
        let mut link = ck.link.clone();
        link.noise_power_db = db;
        let m = estimate_ber(&demapper, &link, a.samples, a.seed).map_err(classify)?;
        eprintln!("{db:>7.2} dB  {}", summary(&m));
        rows.push([db.to_string(), m.ber.to_string(), m.ber_lo.to_string(), m.ber_hi.to_string()]);
    }
    sio::write_csv(output(a.out.as_deref())?, &["noise_db", "ber", "lo", "hi"], rows).map_err(classify)
}

fn cmd_encode_demo(a: EncodeDemoArgs) -> Result<(), Failure> {
    let alpha = match a.alpha.len() {
        1 => vec![a.alpha[0]; a.j],
        n if n == a.j => a.alpha.clone(),
        n => return Err(config_err(anyhow!("--alpha needs 1 or J = {} values, got {n}", a.j))),
    };
    if a.chi.len() != a.j {
        return Err(config_err(anyhow!("--chi needs J = {} values, got {}", a.j, a.chi.len())));
    }
    if !(a.step > 0.0) || a.to < a.from {
        return Err(config_err(anyhow!("need step > 0 and from <= to")));
    }
    let enc = EncodingParams::new(alpha, a.chi, a.k).map_err(classify)?;
    let mut header = vec!["x".to_string()];
    header.extend((0..a.j).map(|j| format!("f_{j}")));
    header.extend((0..a.j).map(|j| format!("k_{j}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    // Grid points are computed from an integer index to avoid drift.
    let n = ((a.to - a.from) / a.step + 1e-9).floor() as usize;
    let mut rows = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let x = a.from + i as f64 * a.step;
        let mut row = vec![format!("{x}")];
        for j in 0..a.j {
            row.push(enc.fire_time_continuous(x, j).map_err(classify)?.to_string());
        }
        for j in 0..a.j {
            row.push(enc.fire_time_discrete(x, j).map_err(classify)?.to_string());
        }
        rows.push(row);
    }
    sio::write_csv(output(a.out.as_deref())?, &header, rows).map_err(classify)
}

fn cmd_pg_bench(a: PgBenchArgs) -> Result<(), Failure> {
    if a.n == 0 {
        return Err(config_err(anyhow!("--n must be positive")));
    }
    let mut rng = rng_for(a.seed, Stream::Policy);
    // Target and start come from the optimizer's stream, before it starts.
    let c: Vec<f64> = (0..a.n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let theta0: Vec<f64> = (0..a.n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let target = c.clone();
    let loss: Box<dyn Fn(&[f64]) -> f64> = match a.target.as_str() {
        "quadratic" => Box::new(move |t: &[f64]| t.iter().zip(&target).map(|(x, y)| (x - y).powi(2)).sum::<f64>() + 0.1),
        "staircase" => Box::new(move |t: &[f64]| {
            let d = t.iter().zip(&target).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            (10.0 * d).floor() / 10.0 + 0.1
        }),
        other => return Err(config_err(anyhow!("unknown target '{other}', expected quadratic or staircase"))),
    };
    let cfg = PolicyConfig::default();
    let state = optimize(&mut FnObjective(|t: &[f64]| loss(t)), theta0, &cfg, a.iterations, &mut rng).map_err(classify)?;
    let dist = |t: &[f64]| t.iter().zip(&c).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let rows: Vec<[String; 4]> = state
        .history
        .iter()
        .map(|s| [s.iteration.to_string(), s.loss_theta.to_string(), s.loss_star.to_string(), dist(&s.theta).to_string()])
        .collect();
    sio::write_csv(output(a.out.as_deref())?, &["iteration", "loss_theta", "loss_star", "dist_inf"], rows)
        .map_err(classify)?;
    eprintln!("final loss* {:.6}  |theta* - c|_inf {:.4}", state.loss_star, dist(&state.theta_star));
    Ok(())
}

