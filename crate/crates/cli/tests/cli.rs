use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qfusion::synthdata::read_dataset;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

const TINY: &str = r#"
seed = 3

[generator]
num_classes = 7
train_classes = 4
identity_dim = 4
sets_per_class = 5
heldout_samples = 3

[[generator.modalities]]
dim = 6
base_noise = 0.1
min_samples = 1
max_samples = 3

[[generator.modalities]]
dim = 5
base_noise = 0.4
min_samples = 1
max_samples = 2

[model]
hidden = [12, 12]
quality_tap = 0
embed_dim = 6
fc_dropout = 0.0
quality_hidden = 4
quality_dim = 4
fnet_hidden = 6
projected_dim = 5

[trainer]
epochs = 2
batch_size = 4
checkpoint_every = 2
margin_warmup = 3

[eval.protocol]
kind = "verification"
pairs = 60
positive_fraction = 0.5
"#;

/// Small widths make the compactness gradients large relative to the
/// weights, so the fixture trains at a lower rate than the default.
const STABLE: &str = "\n[trainer.schedule]\nlr0 = 0.01\nlr_min = 1e-6\n";

fn tiny() -> String {
    format!("{TINY}{STABLE}")
}

fn qfusion(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qfusion"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = qfusion(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// The machine-readable error line of a failed run.
fn failure(args: &[&str]) -> serde_json::Value {
    let out = qfusion(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON ({e}): {line}"))
}

fn sha(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("tiny.toml"), config).unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self) -> PathBuf {
        self.path("tiny.toml")
    }

    fn gen(&self, name: &str, seed: u64) -> PathBuf {
        let out = self.path(name);
        ok(&["gen", "--config", s(&self.config()), "--out", s(&out), "--seed", &seed.to_string()]);
        out
    }

    fn train(&self, data: &Path, out: &str) -> PathBuf {
        let dir = self.path(out);
        ok(&["train", "--config", s(&self.config()), "--data", s(data), "--out", s(&dir)]);
        dir
    }
}

#[test]
fn gen_is_deterministic_and_round_trips() {
    let ws = Workspace::new(&tiny());
    let a = ws.gen("a/data.qads", 5);
    let b = ws.gen("b/data.qads", 5);
    let c = ws.gen("c/data.qads", 6);
    assert_eq!(sha(&a), sha(&b));
    assert_ne!(sha(&a), sha(&c));
    assert!(ws.path("a/config.resolved.toml").exists());

    let data = read_dataset(fs::File::open(&a).unwrap()).unwrap();
    assert_eq!(data.config.seed, 5);
    assert_eq!(data.sets.len(), 7 * 5);
    let mut again = Vec::new();
    qfusion::synthdata::write_dataset(&mut again, &data).unwrap();
    assert_eq!(again, fs::read(&a).unwrap());
}

#[test]
fn default_config_stays_within_set_budget() {
    let ws = Workspace::new("");
    let out = ws.path("default.qads");
    ok(&["gen", "--out", s(&out)]);
    let data = read_dataset(fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(data.config.num_classes, 100);
    for c in 0..100u32 {
        let n = data.sets.iter().filter(|s| s.label == c).count();
        assert!((1..=25).contains(&n), "class {c} has {n} sets");
    }
    let resolved = fs::read_to_string(ws.path("config.resolved.toml")).unwrap();
    assert!(resolved.contains("lambda_h0"));
    assert!(resolved.contains("[trainer.schedule]"));
}

#[test]
fn resume_reproduces_the_straight_run() {
    let ws = Workspace::new(&tiny());
    let data = ws.gen("data.qads", 1);
    let straight = ws.train(&data, "straight");
    let model_hash = sha(&straight.join("model.qfck"));
    let log = fs::read_to_string(straight.join("train_log.csv")).unwrap();

    // 4 training classes × 5 sets in batches of 4 → 5 steps per epoch.
    let mid = straight.join("ckpt-000004.qfck");
    assert!(mid.exists());
    assert!(straight.join("ckpt-000010.qfck").exists());

    let resumed = ws.path("resumed");
    ok(&["train", "--config", s(&ws.config()), "--data", s(&data), "--out", s(&resumed), "--resume", s(&mid)]);
    assert_eq!(sha(&resumed.join("model.qfck")), model_hash);

    // resuming inside the original directory rebuilds the same log
    ok(&["train", "--config", s(&ws.config()), "--data", s(&data), "--out", s(&straight), "--resume", s(&mid)]);
    assert_eq!(fs::read_to_string(straight.join("train_log.csv")).unwrap(), log);
    assert_eq!(sha(&straight.join("model.qfck")), model_hash);

    let again = ws.train(&data, "again");
    assert_eq!(sha(&again.join("model.qfck")), model_hash);
}

#[test]
fn log_terms_sum_to_total() {
    let ws = Workspace::new(&tiny());
    let data = ws.gen("data.qads", 2);
    let dir = ws.train(&data, "run");
    let text = fs::read_to_string(dir.join("train_log.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&header[..3], &["step", "epoch", "lr"]);
    let total_col = header.iter().position(|&h| h == "total").unwrap();
    assert!(header[total_col + 1..].iter().all(|h| h.starts_with("p_b_")));
    let mut rows = 0;
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let sum: f64 = v[3..total_col].iter().sum();
        assert!((sum - v[total_col]).abs() <= 1e-9 * v[total_col].abs().max(1.0), "{line}");
        let p: f64 = v[total_col + 1..].iter().sum();
        assert!((p - 1.0).abs() < 1e-12);
        rows += 1;
    }
    assert_eq!(rows, 10);
}

#[test]
fn corrupt_checkpoint_is_refused() {
    let ws = Workspace::new(&tiny());
    let data = ws.gen("data.qads", 1);
    let dir = ws.train(&data, "run");
    let bad = ws.path("bad.qfck");
    let mut bytes = fs::read(dir.join("model.qfck")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    fs::write(&bad, bytes).unwrap();

    let err = failure(&["eval", "--model", s(&bad), "--data", s(&data), "--report", s(&ws.path("r.json"))]);
    assert_eq!(err["error"], "crc");
    assert!(err["message"].as_str().unwrap().contains("CRC"));
    let err = failure(&[
        "train",
        "--config",
        s(&ws.config()),
        "--data",
        s(&data),
        "--out",
        s(&ws.path("resumed")),
        "--resume",
        s(&bad),
    ]);
    assert_eq!(err["error"], "crc");
}

#[test]
fn divergence_aborts_and_keeps_the_last_checkpoint() {
    let ws = Workspace::new(&tiny());
    let data = ws.gen("data.qads", 1);
    let dir = ws.train(&data, "run");
    let good = dir.join("ckpt-000004.qfck");
    let before = sha(&good);

    let wild = ws.path("wild.toml");
    fs::write(&wild, format!("{TINY}\n[trainer.schedule]\nlr0 = 1e300\n")).unwrap();
    let out = ws.path("wild");
    let err = failure(&["train", "--config", s(&wild), "--data", s(&data), "--out", s(&out), "--resume", s(&good)]);
    assert_eq!(err["error"], "training_aborted", "{err}");
    assert_eq!(sha(&good), before);
    assert!(!out.join("model.qfck").exists());
    // whatever was saved before the abort is a loadable checkpoint
    for entry in fs::read_dir(&out).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "qfck") {
            qfusion::checkpoint::load(&p).unwrap();
        }
    }
}

#[test]
fn eval_reports_are_deterministic_and_complete() {
    let ws = Workspace::new(&tiny());
    let data = ws.gen("data.qads", 4);
    let model = ws.train(&data, "run").join("model.qfck");
    let config = ws.config();
    let mut aucs = Vec::new();
    for fusion in ["quality", "avg", "sum", "major"] {
        let report = ws.path(&format!("eval/{fusion}.json"));
        let args = [
            "eval",
            "--config",
            s(&config),
            "--model",
            s(&model),
            "--data",
            s(&data),
            "--report",
            s(&report),
            "--fusion",
            fusion,
        ];
        ok(&args);
        let first = fs::read(&report).unwrap();
        ok(&args);
        assert_eq!(fs::read(&report).unwrap(), first, "{fusion} report changed between runs");

        let v: serde_json::Value = serde_json::from_slice(&first).unwrap();
        assert_eq!(v["fusion"], fusion);
        assert_eq!(v["protocol"], "verification");
        let keys: Vec<&str> = v["tar_at"].as_object().unwrap().keys().map(|k| k.as_str()).collect();
        for k in ["1e-1", "1e-2", "1e-3", "1e-4"] {
            assert!(keys.contains(&k), "{fusion}: missing tar_at key {k}");
        }
        for field in ["auc", "eer", "tar_at", "cmc", "p_b", "spearman_quality"] {
            assert!(v.get(field).is_some(), "{fusion}: missing {field}");
        }
        let auc = v["auc"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&auc));
        aucs.push(auc);
        let roc = fs::read_to_string(ws.path(&format!("eval/{fusion}.roc.csv"))).unwrap();
        assert!(roc.starts_with("threshold,far,tar\n"));
    }
    assert!(ws.path("eval/config.resolved.toml").exists());
    assert_eq!(aucs.len(), 4);
}

#[test]
fn identification_protocol_writes_cmc() {
    let ws = Workspace::new(&tiny());
    let data = ws.gen("data.qads", 4);
    let model = ws.train(&data, "run").join("model.qfck");
    let report = ws.path("id/report.json");
    ok(&[
        "eval",
        "--config",
        s(&ws.config()),
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--report",
        s(&report),
        "--protocol",
        "identification",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["protocol"], "identification");
    let cmc: Vec<f64> = v["cmc"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    // three held-out classes
    assert_eq!(cmc.len(), 3);
    assert_eq!(*cmc.last().unwrap(), 1.0);
    assert!(cmc.windows(2).all(|w| w[0] <= w[1]));
    let csv = fs::read_to_string(ws.path("id/report.cmc.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn quality_report_covers_every_sample() {
    let ws = Workspace::new(&tiny());
    let data_path = ws.gen("data.qads", 4);
    let model = ws.train(&data_path, "run").join("model.qfck");
    let out = ws.path("quality");
    ok(&["quality-report", "--model", s(&model), "--data", s(&data_path), "--out", s(&out)]);

    let data = read_dataset(fs::File::open(&data_path).unwrap()).unwrap();
    let table = fs::read_to_string(out.join("quality_table.csv")).unwrap();
    assert_eq!(table.lines().count() - 1, data.num_samples());
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("quality_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rows"], data.num_samples());
    let rho = summary["spearman_quality"]["value"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&rho));

    let hist = fs::read_to_string(out.join("quality_hist.csv")).unwrap();
    let mut lines = hist.lines();
    assert_eq!(lines.next(), Some("modality,source,level_lo,level_hi,count,fraction"));
    // 2 modalities × 2 sources × 5 levels
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 20);
    for chunk in rows.chunks(5) {
        let f: f64 = chunk.iter().map(|r| r[5].parse::<f64>().unwrap()).sum();
        assert!((f - 1.0).abs() < 1e-12);
    }
    assert!(out.join("config.resolved.toml").exists());
}

#[test]
fn constant_gamma_correlation_is_undefined() {
    let ws = Workspace::new(&format!("{}\n[generator.gamma]\nkind = \"fixed\"\nvalue = 0.3\n", tiny()));
    let data = ws.gen("data.qads", 1);
    let model = ws.train(&data, "run").join("model.qfck");
    let out = ws.path("quality");
    ok(&["quality-report", "--model", s(&model), "--data", s(&data), "--out", s(&out)]);
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("quality_summary.json")).unwrap()).unwrap();
    assert!(summary["spearman_quality"]["value"].is_null());
    assert!(summary["spearman_quality"]["undefined"].as_str().unwrap().contains("constant"));
}

#[test]
fn errors_are_machine_readable() {
    let ws = Workspace::new("sed = 4\n");
    let err = failure(&["gen", "--config", s(&ws.config()), "--out", s(&ws.path("x.qads"))]);
    assert_eq!(err["error"], "config");

    let err = failure(&["eval", "--model", "/nonexistent/m.qfck", "--data", "/nonexistent/d.qads", "--report", "r.json"]);
    assert_eq!(err["error"], "io");

    let garbage = ws.path("garbage.qads");
    fs::write(&garbage, b"not a dataset").unwrap();
    let err = failure(&["train", "--data", s(&garbage), "--out", s(&ws.path("run"))]);
    assert_eq!(err["error"], "format");
}

#[test]
fn help_documents_defaults() {
    let out = qfusion(&["train", "--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("lambda_h"));
    assert!(text.contains("--resume"));
}
