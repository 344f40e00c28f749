use std::path::Path;
use std::process::{Command, Output};

fn nolgat(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nolgat"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn nolgat")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TRAIN_CONFIG: &str = "\
# tiny run
dataset = data/features.csv
knn_k = 3
label_fraction = 0.3
epochs = 10
repetitions = 2
hidden = 8,4
heads = 2,2
mlp_hidden = 4
output_dir = out
";

fn synth_dataset(dir: &Path) {
    let out = nolgat(
        &[
            "synth",
            "longrange",
            "--nodes",
            "48",
            "--distance",
            "2",
            "--out-dir",
            "data",
        ],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_writes_both_benchmarks() {
    let dir = tempfile::tempdir().unwrap();
    synth_dataset(dir.path());
    let csv = std::fs::read_to_string(dir.path().join("data/features.csv")).unwrap();
    assert!(csv.starts_with("id,label,f0"));
    assert_eq!(csv.lines().count(), 49);
    assert!(dir.path().join("data/edges.tsv").exists());

    let out = nolgat(
        &["synth", "corpus", "--docs", "30", "--out-dir", "corpus"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let labels = std::fs::read_to_string(dir.path().join("corpus/labels.txt")).unwrap();
    assert_eq!(labels.lines().count(), 30);
}

#[test]
fn train_is_reproducible_modulo_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    synth_dataset(dir.path());
    std::fs::write(dir.path().join("exp.cfg"), TRAIN_CONFIG).unwrap();
    let mut outputs = Vec::new();
    // same output directory both times: it is echoed into the results
    for _ in 0..2 {
        let run = "results";
        let out = nolgat(
            &["train", "--config", "exp.cfg", "--output-dir", run],
            dir.path(),
        );
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).contains("nolgat"));
        let text = std::fs::read_to_string(dir.path().join(run).join("results.json")).unwrap();
        let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(json["runs"].as_array().unwrap().len(), 4);
        json["timestamp"] = serde_json::Value::Null;
        outputs.push(json);
        assert!(dir.path().join(run).join("results.csv").exists());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "epochz = 3\n").unwrap();
    let out = nolgat(&["train", "--config", "bad.cfg"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
}

#[test]
fn data_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    synth_dataset(dir.path());
    // k must stay below the node count
    let out = nolgat(
        &[
            "build-graph",
            "--dataset",
            "data/features.csv",
            "--k",
            "48",
            "--out",
            "g.tsv",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 3);
    let out = nolgat(
        &[
            "metrics",
            "--predictions",
            "missing.txt",
            "--truth",
            "missing.txt",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 3);
}

#[test]
fn gradcheck_reports_numerical_failure_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let out = nolgat(&["gradcheck", "--tolerance", "1e-14"], dir.path());
    assert_eq!(code(&out), 4);
    assert!(stdout(&out).contains("op matmul"));
}

#[test]
fn build_graph_prints_hop_statistics() {
    let dir = tempfile::tempdir().unwrap();
    synth_dataset(dir.path());
    let out = nolgat(
        &[
            "build-graph",
            "--dataset",
            "data/features.csv",
            "--k",
            "3",
            "--out",
            "g.tsv",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stats: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(stats["nodes"], 48);
    let edges = std::fs::read_to_string(dir.path().join("g.tsv")).unwrap();
    assert!(edges.lines().count() >= 48 * 3 / 2);
}

#[test]
fn metrics_scores_the_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    // tp 3, tn 2, fp 1, fn 1
    std::fs::write(dir.path().join("p.txt"), "1\n1\n1\n1\n0\n0\n0\n").unwrap();
    std::fs::write(dir.path().join("t.txt"), "1\n1\n1\n0\n1\n0\n0\n").unwrap();
    let out = nolgat(
        &["metrics", "--predictions", "p.txt", "--truth", "t.txt"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let m: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((m["macro_f1"].as_f64().unwrap() - 17.0 / 24.0).abs() < 1e-12);
}
