use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coded-fl"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const BASE: &str = r#"[field]
modulus = "2^200-75"

[coding]
n_clients = 10
shards = 1
privacy = 1

[model]
layer_dims = [4, 2]

[quant]
scale_bits = 2
shift = 0.0

[train]
batch_rows = 8
rounds = 15
lr = 0.001
clip_norm = 10000.0

[dropout]
model = "skewed"

[data]
source = "synthetic"
n_samples = 100
dim = 4
classes = 2
synth_seed = 9

[seeds]
sampling = 1
masks = 2
dropout = 3
quantization = 4
init = 5
"#;

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run_mode(cfg: &Path, mode: &str, out: &Path) -> Output {
    run(&["run", "--config", cfg.to_str().unwrap(), "--mode", mode, "--out", out.to_str().unwrap()])
}

#[test]
fn centralized_and_dres_csvs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "exp.toml", BASE);
    for mode in ["centralized", "dres"] {
        let o = run_mode(&cfg, mode, &dir.path().join(mode));
        assert!(o.status.success(), "{mode}: {}", stderr(&o));
    }
    let a = fs::read(dir.path().join("centralized/metrics.csv")).unwrap();
    let b = fs::read(dir.path().join("dres/metrics.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(b).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# l=2 c=0"));
    assert!(lines.next().unwrap().starts_with("# seeds sampling=1 masks=2"));
    assert_eq!(lines.next(), Some("t,survivors,skipped,grad_norm,train_loss,test_acc"));
    assert_eq!(lines.count(), 15);
}

#[test]
fn summary_echo_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "exp.toml", &BASE.replace("shift = 0.0", "shift = \"auto\""));
    assert!(run_mode(&cfg, "dres", &dir.path().join("a")).status.success());
    let summary = fs::read_to_string(dir.path().join("a/summary.toml")).unwrap();
    assert!(summary.contains("[summary]"));
    assert!(summary.contains("skipped_rounds"));
    assert!(summary.contains("final_test_acc"));
    assert!(summary.contains("wall_time_s"));
    assert!(summary.contains("shift = 0.0"), "{summary}");

    let again = dir.path().join("a/summary.toml");
    let o = run_mode(&again, "dres", &dir.path().join("b"));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(dir.path().join("a/metrics.csv")).unwrap(),
        fs::read(dir.path().join("b/metrics.csv")).unwrap()
    );
}

#[test]
fn csv_source_is_resolved_in_the_echo() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("blobs.csv");
    let o = run(&["gen-synth", "--n", "100", "--dx", "4", "--classes", "2", "--seed", "9", "--out", data.to_str().unwrap()]);
    assert!(o.status.success());
    let body = BASE.replace("source = \"synthetic\"", "source = \"blobs.csv\"");
    let cfg = write_config(dir.path(), "exp.toml", &body);
    let out = dir.path().join("out");
    assert!(run_mode(&cfg, "dres", &out).status.success());

    // same data from the synthetic generator gives the same run
    let synth = write_config(dir.path(), "synth.toml", BASE);
    assert!(run_mode(&synth, "dres", &dir.path().join("s")).status.success());
    let a = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let b = fs::read_to_string(dir.path().join("s/metrics.csv")).unwrap();
    assert_eq!(a, b);

    let elsewhere = tempfile::tempdir().unwrap();
    let moved = elsewhere.path().join("summary.toml");
    fs::copy(out.join("summary.toml"), &moved).unwrap();
    assert!(run_mode(&moved, "dres", &elsewhere.path().join("r")).status.success());
}

#[test]
fn infeasible_coding_exits_2_citing_the_inequality() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &BASE.replace("privacy = 1", "privacy = 9"));
    let o = run_mode(&cfg, "dres", &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bad.toml:5:"), "{err}");
    assert!(err.contains("D + deg_g*(K+T-1) + 1 <= N"), "{err}");
}

#[test]
fn unknown_key_exits_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &BASE.replace("rounds = 15", "rounds = 15\nepochs = 2"));
    let o = run_mode(&cfg, "dres", &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.toml:19:"), "{}", stderr(&o));
}

#[test]
fn capacity_violation_exits_2_naming_the_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cap.toml", &BASE.replace("2^200-75", "2^31-1").replace("[4, 2]", "[4, 4, 4, 2]"));
    let o = run_mode(&cfg, "dres", &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("(p-1)/2"), "{}", stderr(&o));
}

#[test]
fn missing_dataset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "exp.toml", &BASE.replace("\"synthetic\"", "\"nope.csv\""));
    let o = run_mode(&cfg, "dres", &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn fedavg_on_iid_data_converges() {
    let dir = tempfile::tempdir().unwrap();
    let body = BASE
        .replace("model = \"skewed\"", "model = \"constant\"\nrate = 0.0")
        .replace("synth_seed = 9", "synth_seed = 9\npartition = \"iid\"")
        .replace("rounds = 15", "rounds = 200");
    let cfg = write_config(dir.path(), "exp.toml", &body);
    let o = run_mode(&cfg, "fedavg", &dir.path().join("o"));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("o/metrics.csv")).unwrap();
    let losses: Vec<f64> = text
        .lines()
        .skip(3)
        .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 200);
    let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
    let tail: f64 = losses[180..].iter().sum::<f64>() / 20.0;
    assert!(tail < 0.5 * head, "head {head} tail {tail}");
}

#[test]
fn gen_synth_examples() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    for (path, classes) in [(&a, "2"), (&b, "2"), (&c, "10")] {
        let o = run(&["gen-synth", "--n", "200", "--dx", "8", "--classes", classes, "--seed", "4", "--out", path.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let text = fs::read_to_string(&a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("f_1,f_2,f_3,f_4,f_5,f_6,f_7,f_8,label"));
    let labels: Vec<String> = lines.map(|l| l.rsplit(',').next().unwrap().to_string()).collect();
    assert_eq!(labels.len(), 200);
    assert_eq!(labels.iter().filter(|l| *l == "0").count(), 100);

    let ten = fs::read_to_string(&c).unwrap();
    for k in 0..10 {
        let n = ten.lines().skip(1).filter(|l| l.ends_with(&format!(",{k}"))).count();
        assert_eq!(n, 20, "class {k}");
    }
}

#[test]
fn gen_synth_unwritable_path_exits_3() {
    let o = run(&["gen-synth", "--n", "10", "--dx", "2", "--classes", "2", "--out", "/nonexistent/dir/x.csv"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn verify_suites() {
    for suite in ["field", "coding"] {
        let o = run(&["verify", "--suite", suite]);
        assert!(o.status.success(), "{suite}: {}", String::from_utf8_lossy(&o.stdout));
        let out = String::from_utf8_lossy(&o.stdout);
        assert!(out.lines().filter(|l| l.starts_with("PASS")).count() >= 4, "{out}");
    }
    let o = run(&["verify", "--suite", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}
