use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spiketrace"));
    c.env_remove("SPIKETRACE_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = r#"{
  "encoder": {"J": 2, "K": 4},
  "snn": {"n_hid": 4},
  "train": {"batch_size": 200, "epochs_total": 4, "epochs_joint": 2, "eval_samples": 2000},
  "policy": {"B": 3}
}"#;

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.json");
    fs::write(&p, TINY).unwrap();
    p
}

fn only_subdir(dir: &Path) -> PathBuf {
    let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    assert_eq!(entries.len(), 1, "{entries:?}");
    entries.pop().unwrap()
}

#[test]
fn encode_demo_reproduces_the_staircase() {
    let o = run(&["encode-demo", "--j", "3", "--k", "4", "--alpha", "20", "--chi", "0.25,0.5,0.75"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x,f_0,f_1,f_2,k_0,k_1,k_2");
    let chi = [0.25, 0.5, 0.75];
    let mut n = 0;
    for (i, line) in lines.enumerate() {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        let x = i as f64 * 0.001;
        assert_eq!(cols[0], x);
        for j in 0..3 {
            let f = (20.0 * (x - chi[j]).abs()).min(4.0);
            assert_eq!(cols[1 + j], f);
            assert_eq!(cols[4 + j], f.floor());
        }
        n += 1;
    }
    assert_eq!(n, 1001);
}

#[test]
fn encode_demo_rejects_mismatched_lists() {
    let o = run(&["encode-demo", "--j", "3", "--k", "4", "--alpha", "20", "--chi", "0.25,0.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_on_missing_checkpoint_is_a_config_error() {
    let o = run(&["eval", "--checkpoint", "/nonexistent/model.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));
}

#[test]
fn bad_config_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.json");
    fs::write(&p, r#"{"train": {"batch_sise": 10}}"#).unwrap();
    let out = tmp.path().join("runs");
    let o = run(&["train", "--config", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("batch_sise"));
    fs::write(&p, r#"{"train": {"epochs_total": 1, "epochs_joint": 5}}"#).unwrap();
    let o = run(&["train", "--config", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn pg_bench_quadratic_converges() {
    let o = run(&["pg-bench", "--target", "quadratic", "--seed", "3"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<Vec<f64>> =
        text.lines().skip(1).map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    assert_eq!(text.lines().next().unwrap(), "iteration,loss_theta,loss_star,dist_inf");
    assert_eq!(rows.len(), 200);
    assert!(rows.windows(2).all(|w| w[1][2] <= w[0][2]));
    assert!(rows[199][2] < rows[0][2]);
    assert!(rows[199][3] < 0.1, "dist {}", rows[199][3]);
}

#[test]
fn train_then_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("runs");
    let o = bin()
        .args(["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--progress", "0"])
        .env("SPIKETRACE_SEED", "42")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let line = stdout(&o);
    assert!(line.contains("BER") && line.contains("Z_avg") && line.contains("#MAC 288"), "{line}");
    let dir = only_subdir(&out);
    assert!(dir.file_name().unwrap().to_str().unwrap().ends_with("-seed42"));
    for f in ["config.json", "model.json", "metrics.json", "loss.csv", "pg_trace.csv", "run.json"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let resolved: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(resolved["seed"], 42);
    assert_eq!(resolved["encoder"]["J"], 2);

    let model = dir.join("model.json");
    let m1 = tmp.path().join("m1.json");
    let m2 = tmp.path().join("m2.json");
    for m in [&m1, &m2] {
        let o = run(&["eval", "--checkpoint", model.to_str().unwrap(), "--samples", "5e3", "--out", m.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(&m1).unwrap()).unwrap();
    assert_eq!(metrics["n_eval"], 5000);

    let o = run(&["curve", "--checkpoint", model.to_str().unwrap(), "--noise", "-15..-17", "--samples", "2000"]);
    assert!(o.status.success());
    let csv = stdout(&o);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "noise_db,ber,lo,hi");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("-15,"));
    assert!(lines[3].starts_with("-17,"));
}

#[test]
fn identical_seeds_give_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let o = run(&["train", "--config", cfg.to_str().unwrap(), "--seed", "5", "--out", out.to_str().unwrap(), "--progress", "0"]);
        assert!(o.status.success());
        files.push(fs::read(only_subdir(&out).join("metrics.json")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("runs");
    let o = run(&[
        "sweep", "--config", cfg.to_str().unwrap(), "--j", "1,2", "--k", "3", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let root = only_subdir(&out);
    let table = fs::read_to_string(root.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("J,K,seed,status,ber"));
    assert!(lines[1].starts_with("1,3,"));
    // #MAC column: N_hid (7 J + 4) K with N_hid = 4
    assert!(lines[1].contains(",ok,") && lines[1].split(',').nth(8) == Some("132"));
    assert!(lines[2].split(',').nth(8) == Some("216"));
    assert!(root.join("J1_K3/model.json").is_file() && root.join("J2_K3/model.json").is_file());
}
