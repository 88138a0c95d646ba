use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn crmrank(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crmrank"))
        .current_dir(dir)
        .env_remove("CRMRANK_RUN_ROOT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = crmrank(dir, args);
    assert_eq!(
        code(&out),
        0,
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SIM: &str = r#"{"n_queries": 15, "products_per_query": 15, "feature_dim": 4, "n_interactions": 3000, "seed": 5}"#;

fn simulated() -> TempDir {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("sim.json"), SIM).unwrap();
    ok(tmp.path(), &["simulate", "--config", "sim.json", "--out", "runs/w1"]);
    tmp
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect()
}

fn manifest_names(dir: &Path) -> Vec<String> {
    let m: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["name"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn simulate_writes_a_self_describing_run() {
    let tmp = simulated();
    let run = tmp.path().join("runs/w1");
    for name in [
        "log",
        "train",
        "dev",
        "test",
        "qrels",
        "world.json",
        "logging_model",
        "config.json",
        "manifest.json",
    ] {
        assert!(run.join(name).is_file(), "missing {name}");
    }
    let names = manifest_names(&run);
    assert!(names.contains(&"log".to_string()) && names.contains(&"config.json".to_string()));
    let config: serde_json::Value = serde_json::from_slice(&fs::read(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["n_queries"], 15);
    assert_eq!(config["seed"], 5);
    assert_eq!(config["deep_browse_prob"], 0.5);
}

#[test]
fn identical_invocations_give_identical_bytes() {
    let tmp = simulated();
    let run = tmp.path().join("runs/w1");
    let first = snapshot(&run);
    ok(tmp.path(), &["simulate", "--config", "sim.json", "--out", "runs/w1"]);
    assert_eq!(first, snapshot(&run));

    let train = [
        "train-crm",
        "--log",
        "runs/w1/log",
        "--dev",
        "runs/w1/dev",
        "--epochs",
        "3",
        "--out",
        "runs/m1",
    ];
    ok(tmp.path(), &train);
    let model_run = snapshot(&tmp.path().join("runs/m1"));
    ok(tmp.path(), &train);
    assert_eq!(model_run, snapshot(&tmp.path().join("runs/m1")));
}

#[test]
fn train_evaluate_and_curve() {
    let tmp = simulated();
    let dir = tmp.path();
    ok(
        dir,
        &[
            "train-crm",
            "--log",
            "runs/w1/log",
            "--dev",
            "runs/w1/dev",
            "--lambda",
            "0.4",
            "--learning-rate",
            "0.05",
            "--out",
            "runs/m1",
        ],
    );
    let m1 = dir.join("runs/m1");
    assert!(m1.join("model").is_file());
    let history = fs::read_to_string(m1.join("history.tsv")).unwrap();
    assert!(history.starts_with("records_seen\tobjective\tS\tMAP\tNDCG@10\n"));
    let config: serde_json::Value = serde_json::from_slice(&fs::read(m1.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["lambda"], 0.4);
    assert_eq!(config["objective"], "lagrangian");

    let printed = ok(
        dir,
        &[
            "evaluate",
            "--model",
            "runs/m1/model",
            "--test",
            "runs/w1/test",
            "--ks",
            "5,10",
            "--out",
            "runs/e1",
        ],
    );
    let printed: serde_json::Value = serde_json::from_str(&printed).unwrap();
    let saved: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("runs/e1/metrics.json")).unwrap()).unwrap();
    assert_eq!(printed, saved);
    assert!(saved["P@5"].is_number() && saved["NDCG@10"].is_number() && saved["map"].is_number());
    assert!(saved.get("P@1").is_none());
    let run_file = fs::read_to_string(dir.join("runs/e1/run.txt")).unwrap();
    assert!(run_file.lines().all(|l| l.split_whitespace().count() == 6));

    let curve = ok(dir, &["learning-curve", "--checkpoints", "runs/m1", "--out", "runs/c1"]);
    assert!(curve.starts_with("records_seen\tavg_rank\tavg_dcg\tMAP\tNDCG@10"));
    assert_eq!(curve.lines().count(), history.lines().count());
    assert!(dir.join("runs/c1/curve.tsv").is_file());
}

#[test]
fn other_objectives_and_full_info() {
    let tmp = simulated();
    let dir = tmp.path();
    for objective in ["ips", "ea"] {
        let out = format!("runs/{objective}");
        ok(
            dir,
            &[
                "train-crm",
                "--log",
                "runs/w1/log",
                "--dev",
                "runs/w1/dev",
                "--objective",
                objective,
                "--epochs",
                "2",
                "--out",
                &out,
            ],
        );
        assert!(dir.join(&out).join("model").is_file());
    }
    ok(
        dir,
        &[
            "train-fullinfo",
            "--train",
            "runs/w1/train",
            "--dev",
            "runs/w1/dev",
            "--scorer",
            "mlp",
            "--hidden",
            "4",
            "--epochs",
            "2",
            "--out",
            "runs/f1",
        ],
    );
    let model: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("runs/f1/model")).unwrap()).unwrap();
    assert_eq!(model["kind"], "mlp");
    assert_eq!(model["hidden"], 4);
    let history = fs::read_to_string(dir.join("runs/f1/history.tsv")).unwrap();
    assert!(history.lines().skip(1).all(|l| l.split('\t').nth(2) == Some("NA")));
}

#[test]
fn lambda_sweep_grid_and_search() {
    let tmp = simulated();
    let dir = tmp.path();
    ok(
        dir,
        &[
            "lambda-sweep",
            "--log",
            "runs/w1/log",
            "--dev",
            "runs/w1/dev",
            "--lambdas",
            "0.2,0.5,0.8",
            "--epochs",
            "2",
            "--out",
            "runs/s1",
        ],
    );
    let sweep = fs::read_to_string(dir.join("runs/s1/sweep.tsv")).unwrap();
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(lines[0], "lambda\tS\tMAP\tNDCG@5");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0.2\t"));

    ok(
        dir,
        &[
            "lambda-sweep",
            "--log",
            "runs/w1/log",
            "--dev",
            "runs/w1/dev",
            "--epochs",
            "2",
            "--max-probes",
            "3",
            "--out",
            "runs/s2",
        ],
    );
    let probes = fs::read_to_string(dir.join("runs/s2/probes.tsv")).unwrap();
    let n_probes = probes.lines().count() - 1;
    assert!((1..=3).contains(&n_probes));
    assert_eq!(
        fs::read_to_string(dir.join("runs/s2/sweep.tsv"))
            .unwrap()
            .lines()
            .count()
            - 1,
        n_probes
    );
}

#[test]
fn aggregate_reproduces_simulated_labels() {
    let tmp = simulated();
    let dir = tmp.path();
    ok(
        dir,
        &[
            "aggregate",
            "--impressions",
            "runs/w1/impressions.tsv",
            "--positives",
            "runs/w1/positives.tsv",
            "--contexts",
            "runs/w1/contexts.tsv",
            "--out",
            "runs/a1",
        ],
    );
    let a1 = dir.join("runs/a1");
    let w1 = dir.join("runs/w1");
    assert_eq!(
        fs::read(a1.join("relevance.tsv")).unwrap(),
        fs::read(w1.join("relevance.tsv")).unwrap()
    );
    assert_eq!(fs::read(a1.join("qrels")).unwrap(), fs::read(w1.join("qrels")).unwrap());
    for name in ["train", "dev", "test", "split.json", "summary.json"] {
        assert!(a1.join(name).is_file(), "missing {name}");
    }
}

#[test]
fn run_root_from_environment() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_crmrank"))
        .current_dir(tmp.path())
        .env("CRMRANK_RUN_ROOT", tmp.path().join("root"))
        .args([
            "simulate",
            "--n-queries",
            "5",
            "--products-per-query",
            "5",
            "--feature-dim",
            "2",
            "--n-interactions",
            "50",
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("root/simulate/manifest.json").is_file());
}

#[test]
fn exit_codes() {
    let tmp = simulated();
    let dir = tmp.path();
    assert_eq!(code(&crmrank(dir, &["frobnicate"])), 1);
    assert_eq!(code(&crmrank(dir, &["train-crm", "--bogus", "1"])), 1);
    assert_eq!(code(&crmrank(dir, &["--help"])), 0);

    fs::write(dir.join("bad.json"), r#"{"lambda": 0.4, "nope": 1}"#).unwrap();
    let out = crmrank(
        dir,
        &[
            "train-crm",
            "--config",
            "bad.json",
            "--log",
            "runs/w1/log",
            "--dev",
            "runs/w1/dev",
        ],
    );
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));

    assert_eq!(
        code(&crmrank(
            dir,
            &[
                "train-crm",
                "--log",
                "runs/w1/log",
                "--dev",
                "runs/w1/dev",
                "--lambda",
                "1.5"
            ]
        )),
        1
    );
    assert_eq!(
        code(&crmrank(
            dir,
            &[
                "train-crm",
                "--log",
                "runs/w1/log",
                "--dev",
                "runs/w1/dev",
                "--objective",
                "nope"
            ]
        )),
        1
    );
    assert_eq!(code(&crmrank(dir, &["train-crm", "--dev", "runs/w1/dev"])), 1);
    assert_eq!(
        code(&crmrank(
            dir,
            &["train-crm", "--log", "missing.jsonl", "--dev", "runs/w1/dev"]
        )),
        2
    );
    assert_eq!(
        code(&crmrank(
            dir,
            &["evaluate", "--model", "runs/w1/log", "--test", "runs/w1/test"]
        )),
        1
    );
    assert_eq!(code(&crmrank(dir, &["simulate", "--config", "absent.json"])), 2);

    fs::write(dir.join("broken.jsonl"), "{\"query_id\": \"q\"}\n").unwrap();
    let out = crmrank(dir, &["train-crm", "--log", "broken.jsonl", "--dev", "runs/w1/dev"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}
