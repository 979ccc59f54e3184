use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use itd_core::audio::{save_stereo, StereoClip, WavEncoding};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn itd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_itd"))
        .args(args)
        .arg("--log=warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_exits_zero() {
    let o = Command::new(env!("CARGO_BIN_EXE_itd")).arg("--help").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("simulate"));
    let o = Command::new(env!("CARGO_BIN_EXE_itd")).args(["eval", "--help"]).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    let o = itd(&["simulate", "--bogus", "x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(itd(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(itd(&["sweep", "--axis", "humidity", "--out", "x.csv"]).status.code(), Some(1));
    assert_eq!(itd(&["eval", "--method", "model", "--data", "x"]).status.code(), Some(1));
}

#[test]
fn missing_input_exits_two_with_path() {
    let o = itd(&["estimate", "--input", "/nonexistent/clip.wav"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/clip.wav"), "{}", stderr(&o));
    let o = itd(&["eval", "--method", "gcc", "--data", "/nonexistent/set"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/set"));
}

#[test]
fn estimate_recovers_a_constructed_shift() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..4000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let k = 5;
    // Left hears the source k samples after the right channel.
    let left: Vec<f64> = (0..x.len()).map(|t| if t >= k { x[t - k] } else { 0.0 }).collect();
    let clip = StereoClip::from_samples(left, x, 16000).unwrap();
    let path = dir.path().join("shifted.wav");
    save_stereo(&clip, &path, WavEncoding::Float32).unwrap();

    let o = itd(&["estimate", "--input", p(&path), "--method", "gcc", "--mic-spacing", "0.3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let expected_ms = k as f64 / 16.0;
    assert!((v["delay_ms"].as_f64().unwrap() - expected_ms).abs() < 0.5 / 16.0, "{v}");
    assert_eq!(v["n_votes"], 128);
    assert!(v["angle_deg"].as_f64().unwrap() > 0.0);
}

const TINY_TRAIN: &str = r#"
loss = "crw"
max_steps = 2
eval_interval = 1
batch = 2
window = 256
step = 16
clip_len = 352

[arch]
stem_channels = 4
stem_kernel = 4
stem_stride = 4
stem_padding = 0
channels = [4, 4]
strides = [2, 2]
embed_dim = 8
magnitude_scale = 1.0
phase_scale = 0.1

[heldout_estimator]
window = 256
step = 16
"#;

const TINY_SET: &str = r#"
rooms = ["room1"]
count = 3
clip_len = 1220
"#;

#[test]
fn simulate_train_eval_sweep_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("set.toml"), TINY_SET).unwrap();
    fs::write(d.join("train.toml"), TINY_TRAIN).unwrap();

    let data = d.join("data");
    let o = itd(&["simulate", "--config", p(&d.join("set.toml")), "--seed", "4", "--out", p(&data)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest = fs::read_to_string(data.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 3);

    let again = d.join("again");
    itd(&["simulate", "--config", p(&d.join("set.toml")), "--seed", "4", "--out", p(&again)]);
    assert_eq!(manifest, fs::read_to_string(again.join("manifest.jsonl")).unwrap());
    for id in ["000000", "000002"] {
        let f = format!("{id}.wav");
        assert_eq!(fs::read(data.join(&f)).unwrap(), fs::read(again.join(&f)).unwrap());
    }

    for m in ["gcc", "random", "iid"] {
        let report = d.join(format!("{m}.csv"));
        let o = itd(&["eval", "--method", m, "--data", p(&data), "--out", p(&report)]);
        assert_eq!(o.status.code(), Some(0), "{m}: {}", stderr(&o));
        let csv = fs::read_to_string(&report).unwrap();
        assert!(csv.starts_with("# schema=itd-eval-report/1\n"));
        assert!(csv.contains("clip_id,truth_ms,pred_ms,abs_err_ms"));
        let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_eq!(summary["n"], 3);
    }

    let run = d.join("run");
    let o = itd(&[
        "train",
        "--corpus",
        p(&data),
        "--heldout",
        p(&data),
        "--config",
        p(&d.join("train.toml")),
        "--out",
        p(&run),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let done: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(done["steps_run"], 2);
    let ckpt = run.join("model.ckpt");
    assert!(ckpt.exists());

    fs::write(d.join("est.toml"), "[estimator]\nwindow = 256\nstep = 16\n").unwrap();
    let o = itd(&[
        "eval",
        "--method",
        "model",
        "--checkpoint",
        p(&ckpt),
        "--config",
        p(&d.join("est.toml")),
        "--data",
        p(&data),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let sweep = d.join("sweep.csv");
    let o = itd(&[
        "sweep",
        "--axis",
        "snr",
        "--values",
        "0,20",
        "--methods",
        "gcc,random",
        "--count",
        "1",
        "--out",
        p(&sweep),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(&sweep).unwrap();
    assert_eq!(csv.lines().count(), 2 + 4);
    assert!(csv.lines().nth(1).unwrap().starts_with("method,axis,value"));
}

#[test]
fn bad_config_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "count = \"many\"\n").unwrap();
    let o = itd(&["simulate", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.toml"));
}
