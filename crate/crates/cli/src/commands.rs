use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use crmrank::aggregation::{aggregate_feedback, build_supervised, label_all, write_relevance_table, ContextTable};
use crmrank::evaluation::{
    qrels_from_supervised, rank_metrics_with_gain, rank_supervised, write_learning_curve, write_qrels, write_trec_run,
    CurveRow, Gain, MetricsReport, DEFAULT_KS,
};
use crmrank::log_data::{parse_bandit_log, parse_supervised, split_queries, write_bandit_log, write_supervised};
use crmrank::policy::init_params;
use crmrank::simulator::{build_dataset, logging_true_risk, SimConfig};
use crmrank::training::{
    lambda_grid, lambda_search, train_counterfactual, train_full_info as fit_full_info, CrmObjective, SweepPoint,
    TrainConfig, TrainHistory,
};
use crmrank::{BanditLog64, FeatureVector64, PolicyParams64, QuerySplit, ScorerKind, SupervisedRecord64};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{
    combine, decode, default_out, in_file, invalid, io_err, open, resolve, split_own, Outcome, RunDir,
};

fn require<'a>(value: &'a Option<PathBuf>, key: &str) -> Outcome<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| invalid(format!("missing required setting `{key}`")))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config structs serialize")
}

/// Prints to stdout; a closed pipe (e.g. `| head`) is not an error.
fn say(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn read_log(path: &Path) -> Outcome<BanditLog64> {
    parse_bandit_log(open(path)?).map_err(in_file(path))
}

fn read_labeled(path: &Path) -> Outcome<(Vec<SupervisedRecord64>, usize)> {
    parse_supervised(open(path)?).map_err(in_file(path))
}

fn read_model(path: &Path) -> Outcome<PolicyParams64> {
    PolicyParams64::read_json(open(path)?).map_err(in_file(path))
}

fn split_json(split: &QuerySplit) -> Value {
    json!({ "train": split.train, "dev": split.dev, "test": split.test })
}

fn write_labeled(run: &mut RunDir, name: &str, records: &[SupervisedRecord64], dim: usize) -> Outcome<()> {
    let w = run.file(name)?;
    write_supervised(records, dim, w).map_err(in_file(&run.path(name)))?;
    Ok(())
}

// --- simulate ---------------------------------------------------------------

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateRun {
    seed: u64,
    out: Option<PathBuf>,
}

pub fn simulate<F: Serialize>(config_file: Option<&Path>, flags: &F) -> Outcome<()> {
    let mut merged = resolve(config_file, flags)?;
    let own = split_own::<SimulateRun>(&mut merged);
    let mut run_cfg: SimulateRun = decode(own)?;
    let sim: SimConfig = decode(merged)?;
    sim.validate()?;
    let out = run_cfg.out.clone().unwrap_or_else(|| default_out("simulate"));
    run_cfg.out = Some(out.clone());

    let data = build_dataset::<f64>(&sim, run_cfg.seed)?;
    let dim = data.world.feature_dim();
    let mut run = RunDir::create(out, "simulate")?;

    let path = run.path("log");
    write_bandit_log(&data.log, run.file("log")?).map_err(in_file(&path))?;
    write_labeled(&mut run, "train", &data.train, dim)?;
    write_labeled(&mut run, "dev", &data.dev, dim)?;
    write_labeled(&mut run, "test", &data.test, dim)?;
    let path = run.path("qrels");
    write_qrels(&data.relevance.grades(), run.file("qrels")?).map_err(in_file(&path))?;
    let path = run.path("relevance.tsv");
    write_relevance_table(&data.relevance, run.file("relevance.tsv")?).map_err(in_file(&path))?;
    let path = run.path("contexts.tsv");
    data.world
        .write_contexts(run.file("contexts.tsv")?)
        .map_err(in_file(&path))?;

    // Feedback as raw streams, one line per event, so `aggregate` can replay them.
    let (imp_path, pos_path) = (run.path("impressions.tsv"), run.path("positives.tsv"));
    let mut imp = run.file("impressions.tsv")?;
    let mut pos = run.file("positives.tsv")?;
    for (q, p, c) in data.feedback.iter() {
        for _ in 0..c.visibility {
            writeln!(imp, "{q}\t{p}").map_err(io_err(&imp_path))?;
        }
        for _ in 0..c.positives {
            writeln!(pos, "{q}\t{p}").map_err(io_err(&pos_path))?;
        }
    }
    imp.flush().map_err(io_err(&imp_path))?;
    pos.flush().map_err(io_err(&pos_path))?;

    let logging = data.world.logging.as_policy();
    let path = run.path("logging_model");
    logging.write_json(run.file("logging_model")?).map_err(in_file(&path))?;
    let logging_risk = logging_true_risk(&data.world, &data.world.logging)?;
    let world = json!({
        "seed": run_cfg.seed,
        "config": to_value(&sim),
        "deep_browse_prob": data.world.deep_browse_prob,
        "hidden_truth": serde_json::from_str::<Value>(&data.world.hidden_truth.to_json_string()).expect("model json"),
        "logging_policy": {
            "temperature": data.world.logging.temperature,
            "params": serde_json::from_str::<Value>(&data.world.logging.params.to_json_string()).expect("model json"),
        },
        "logging_true_risk": logging_risk,
    });
    run.write_json("world.json", &world)?;
    run.write_json("split.json", &split_json(&data.split))?;

    say(&format!(
        "simulated {} pairs; log {} records; train/dev/test {}/{}/{} records; logging true risk {}",
        data.world.pairs.len(),
        data.log.len(),
        data.train.len(),
        data.dev.len(),
        data.test.len(),
        logging_risk
    ));
    run.finish(&combine(&[to_value(&run_cfg), to_value(&sim)]))
}

// --- aggregate --------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AggregateRun {
    impressions: Option<PathBuf>,
    positives: Option<PathBuf>,
    contexts: Option<PathBuf>,
    visibility_threshold: u64,
    negative_ratio: f64,
    split: (f64, f64, f64),
    seed: u64,
    out: Option<PathBuf>,
}

impl Default for AggregateRun {
    fn default() -> Self {
        AggregateRun {
            impressions: None,
            positives: None,
            contexts: None,
            visibility_threshold: crmrank::aggregation::DEFAULT_VISIBILITY_THRESHOLD,
            negative_ratio: crmrank::aggregation::DEFAULT_NEGATIVE_RATIO,
            split: (0.6, 0.2, 0.2),
            seed: 0,
            out: None,
        }
    }
}

fn read_pairs(path: &Path) -> Outcome<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next(), cols.next()) {
            (Some(q), Some(p), None) if !q.is_empty() && !p.is_empty() => pairs.push((q.to_string(), p.to_string())),
            _ => {
                return Err(invalid(format!(
                    "{}: line {}: expected `query_id<TAB>product_id`",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(pairs)
}

/// Reads a context table: a header naming `query_id`, `product_id` and
/// feature columns `f0 .. f{d-1}`; any other columns are ignored.
fn read_contexts(path: &Path) -> Outcome<(ContextTable<f64>, usize)> {
    let mut lines = open(path)?.lines();
    let header = lines
        .next()
        .ok_or_else(|| invalid(format!("{}: empty context table", path.display())))?
        .map_err(io_err(path))?;
    let cols: Vec<&str> = header.trim_end_matches('\r').split('\t').collect();
    let find = |name: &str| cols.iter().position(|c| *c == name);
    let (qi, pi) = match (find("query_id"), find("product_id")) {
        (Some(q), Some(p)) => (q, p),
        _ => {
            return Err(invalid(format!(
                "{}: header needs query_id and product_id",
                path.display()
            )))
        }
    };
    let mut feature_cols = Vec::new();
    while let Some(i) = find(&format!("f{}", feature_cols.len())) {
        feature_cols.push(i);
    }
    if feature_cols.is_empty() {
        return Err(invalid(format!("{}: no feature columns f0, f1, ...", path.display())));
    }
    let mut table = ContextTable::default();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let line_no = i + 2;
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != cols.len() {
            return Err(invalid(format!(
                "{}: line {line_no}: expected {} columns",
                path.display(),
                cols.len()
            )));
        }
        let x = feature_cols
            .iter()
            .map(|&c| cells[c].parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| invalid(format!("{}: line {line_no}: {e}", path.display())))?;
        let x =
            FeatureVector64::from_f64(&x).map_err(|e| invalid(format!("{}: line {line_no}: {e}", path.display())))?;
        table.insert(cells[qi], cells[pi], x);
    }
    Ok((table, feature_cols.len()))
}

pub fn aggregate<F: Serialize>(config_file: Option<&Path>, flags: &F) -> Outcome<()> {
    let mut cfg: AggregateRun = decode(resolve(config_file, flags)?)?;
    let out = cfg.out.clone().unwrap_or_else(|| default_out("aggregate"));
    cfg.out = Some(out.clone());
    let impressions = read_pairs(require(&cfg.impressions, "impressions")?)?;
    let positives = read_pairs(require(&cfg.positives, "positives")?)?;
    let table = aggregate_feedback::<f64, _, _, _, _, _, _>(
        impressions.iter().map(|(q, p)| (q.as_str(), p.as_str())),
        positives.iter().map(|(q, p)| (q.as_str(), p.as_str())),
        cfg.visibility_threshold,
    )?;

    let mut run = RunDir::create(out, "aggregate")?;
    let path = run.path("relevance.tsv");
    write_relevance_table(&table, run.file("relevance.tsv")?).map_err(in_file(&path))?;
    let path = run.path("qrels");
    write_qrels(&table.grades(), run.file("qrels")?).map_err(in_file(&path))?;

    let mut summary = json!({ "pairs": table.len(), "queries": table.queries().count() });
    if let Some(ctx_path) = cfg.contexts.as_deref() {
        let (contexts, dim) = read_contexts(ctx_path)?;
        let mut shown: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (q, p) in &impressions {
            shown.entry(q.clone()).or_default().insert(p.clone());
        }
        let split = split_queries(table.queries(), cfg.split, cfg.seed)?;
        let built = build_supervised(
            &table.restrict_to(&split.train),
            &shown,
            &contexts,
            cfg.negative_ratio,
            cfg.seed,
        )?;
        for w in &built.warnings {
            eprintln!("warning: {w}");
        }
        let dev = label_all(&table, &contexts, &split.dev);
        let test = label_all(&table, &contexts, &split.test);
        write_labeled(&mut run, "train", &built.records, dim)?;
        write_labeled(&mut run, "dev", &dev, dim)?;
        write_labeled(&mut run, "test", &test, dim)?;
        run.write_json("split.json", &split_json(&split))?;
        summary["train_records"] = built.records.len().into();
        summary["dev_records"] = dev.len().into();
        summary["test_records"] = test.len().into();
        summary["warnings"] = built.warnings.into();
    }
    run.write_json("summary.json", &summary)?;
    say(&serde_json::to_string(&summary).expect("json"));
    run.finish(&to_value(&cfg))
}

// --- training ---------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Objective {
    #[default]
    Lagrangian,
    Ips,
    Ea,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ModelSettings {
    scorer: ScorerKind,
    hidden: usize,
    init_model: Option<PathBuf>,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            scorer: ScorerKind::Linear,
            hidden: 16,
            init_model: None,
        }
    }
}

fn initial_params(settings: &ModelSettings, dim: usize, seed: u64) -> Outcome<PolicyParams64> {
    let params = match &settings.init_model {
        Some(path) => read_model(path)?,
        None => {
            let hidden = if settings.scorer == ScorerKind::Linear {
                0
            } else {
                settings.hidden
            };
            init_params(settings.scorer, dim, hidden, seed)?
        }
    };
    if params.feature_dim() != dim {
        return Err(invalid(format!(
            "model has feature_dim {} but the data has {dim}",
            params.feature_dim()
        )));
    }
    Ok(params)
}

fn check_dims(log_dim: usize, dev_dim: usize) -> Outcome<()> {
    if log_dim != dev_dim {
        return Err(invalid(format!(
            "log has feature_dim {log_dim} but the dev set has {dev_dim}"
        )));
    }
    Ok(())
}

fn metrics_value(m: &MetricsReport) -> Value {
    serde_json::from_str(&m.to_json()).expect("metrics json")
}

/// Writes `model`, `history.tsv` and `checkpoints.jsonl`.
fn write_training_outputs(run: &mut RunDir, model: &PolicyParams64, history: &TrainHistory<f64>) -> Outcome<()> {
    let path = run.path("model");
    model.write_json(run.file("model")?).map_err(in_file(&path))?;
    let path = run.path("history.tsv");
    history.write_tsv(run.file("history.tsv")?).map_err(in_file(&path))?;
    let path = run.path("checkpoints.jsonl");
    let mut w = run.file("checkpoints.jsonl")?;
    for c in &history.checkpoints {
        let line = json!({
            "records_seen": c.records_seen,
            "objective": c.objective,
            "S": c.s,
            "metrics": metrics_value(&c.dev_metrics),
        });
        writeln!(w, "{line}").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))
}

fn history_summary(history: &TrainHistory<f64>) -> Value {
    let best = history.best();
    json!({
        "best_records_seen": best.records_seen,
        "optimizer_steps": history.optimizer_steps,
        "objective": best.objective,
        "S": best.s,
        "dev_metrics": metrics_value(&best.dev_metrics),
    })
}

/// Splits a merged config into the command's keys, model settings, and the
/// training config.
fn split_training<R>(mut merged: serde_json::Map<String, Value>) -> Outcome<(R, ModelSettings, TrainConfig)>
where
    R: Serialize + Default + for<'de> Deserialize<'de>,
{
    let own = split_own::<R>(&mut merged);
    let model = split_own::<ModelSettings>(&mut merged);
    let run: R = decode(own)?;
    let model: ModelSettings = decode(model)?;
    let train: TrainConfig = decode(merged)?;
    train.validate()?;
    Ok((run, model, train))
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainCrmRun {
    log: Option<PathBuf>,
    dev: Option<PathBuf>,
    objective: Objective,
    out: Option<PathBuf>,
}

pub fn train_crm<F: Serialize>(config_file: Option<&Path>, flags: &F) -> Outcome<()> {
    let (mut cfg, model_cfg, train) = split_training::<TrainCrmRun>(resolve(config_file, flags)?)?;
    let out = cfg.out.clone().unwrap_or_else(|| default_out("train-crm"));
    cfg.out = Some(out.clone());
    let log = read_log(require(&cfg.log, "log")?)?;
    let (dev, dev_dim) = read_labeled(require(&cfg.dev, "dev")?)?;
    check_dims(log.feature_dim(), dev_dim)?;
    let params0 = initial_params(&model_cfg, log.feature_dim(), train.seed)?;
    let objective = match cfg.objective {
        Objective::Lagrangian => CrmObjective::Lagrangian { lambda: train.lambda },
        Objective::Ips => CrmObjective::Ips,
        Objective::Ea => CrmObjective::EmpiricalAverage,
    };
    let outcome = train_counterfactual(&log, &dev, &params0, &train, objective)?;

    let mut run = RunDir::create(out, "train-crm")?;
    write_training_outputs(&mut run, &outcome.best, &outcome.history)?;
    let summary = history_summary(&outcome.history);
    run.write_json("summary.json", &summary)?;
    say(&serde_json::to_string(&summary).expect("json"));
    run.finish(&combine(&[to_value(&cfg), to_value(&model_cfg), to_value(&train)]))
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainFullInfoRun {
    train: Option<PathBuf>,
    dev: Option<PathBuf>,
    out: Option<PathBuf>,
}

pub fn train_full_info<F: Serialize>(config_file: Option<&Path>, flags: &F) -> Outcome<()> {
    let (mut cfg, model_cfg, train) = split_training::<TrainFullInfoRun>(resolve(config_file, flags)?)?;
    let out = cfg.out.clone().unwrap_or_else(|| default_out("train-fullinfo"));
    cfg.out = Some(out.clone());
    let (records, dim) = read_labeled(require(&cfg.train, "train")?)?;
    let (dev, dev_dim) = read_labeled(require(&cfg.dev, "dev")?)?;
    check_dims(dim, dev_dim)?;
    let params0 = initial_params(&model_cfg, dim, train.seed)?;
    let (best, history) = fit_full_info(&records, &dev, &params0, &train)?;

    let mut run = RunDir::create(out, "train-fullinfo")?;
    write_training_outputs(&mut run, &best, &history)?;
    let summary = history_summary(&history);
    run.write_json("summary.json", &summary)?;
    say(&serde_json::to_string(&summary).expect("json"));
    run.finish(&combine(&[to_value(&cfg), to_value(&model_cfg), to_value(&train)]))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SweepRun {
    log: Option<PathBuf>,
    dev: Option<PathBuf>,
    lambdas: Option<Vec<f64>>,
    probe_epochs: usize,
    out: Option<PathBuf>,
}

impl Default for SweepRun {
    fn default() -> Self {
        SweepRun {
            log: None,
            dev: None,
            lambdas: None,
            probe_epochs: 2,
            out: None,
        }
    }
}

fn write_sweep(run: &mut RunDir, points: &[SweepPoint<f64>]) -> Outcome<()> {
    let path = run.path("sweep.tsv");
    let mut w = run.file("sweep.tsv")?;
    let io = io_err(&path);
    writeln!(w, "lambda\tS\tMAP\tNDCG@5").map_err(&io)?;
    for p in points {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            p.lambda,
            p.s,
            p.dev_metrics.map,
            p.dev_metrics.ndcg(5)
        )
        .map_err(&io)?;
    }
    w.flush().map_err(&io)
}

pub fn lambda_sweep<F: Serialize>(config_file: Option<&Path>, flags: &F) -> Outcome<()> {
    let (mut cfg, model_cfg, train) = split_training::<SweepRun>(resolve(config_file, flags)?)?;
    let out = cfg.out.clone().unwrap_or_else(|| default_out("lambda-sweep"));
    cfg.out = Some(out.clone());
    let log = read_log(require(&cfg.log, "log")?)?;
    let (dev, dev_dim) = read_labeled(require(&cfg.dev, "dev")?)?;
    check_dims(log.feature_dim(), dev_dim)?;
    let params0 = initial_params(&model_cfg, log.feature_dim(), train.seed)?;

    let mut run = RunDir::create(out, "lambda-sweep")?;
    let summary = match &cfg.lambdas {
        Some(lambdas) => {
            if lambdas.is_empty() {
                return Err(invalid("lambdas must not be empty"));
            }
            let results = lambda_grid(&log, &dev, &params0, &train, lambdas)?;
            let points: Vec<SweepPoint<f64>> = results.iter().map(|(p, _)| p.clone()).collect();
            write_sweep(&mut run, &points)?;
            let mut best = 0;
            for (i, p) in points.iter().enumerate() {
                if train.dev_metric.of(&p.dev_metrics) > train.dev_metric.of(&points[best].dev_metrics) {
                    best = i;
                }
            }
            let outcome = &results[best].1;
            write_training_outputs(&mut run, &outcome.best, &outcome.history)?;
            json!({ "mode": "grid", "lambda_star": points[best].lambda, "best": history_summary(&outcome.history) })
        }
        None => {
            let search = lambda_search(&log, &dev, &params0, &train, cfg.probe_epochs)?;
            write_sweep(&mut run, &search.sweep)?;
            let path = run.path("probes.tsv");
            let mut w = run.file("probes.tsv")?;
            writeln!(w, "lambda\tS").map_err(io_err(&path))?;
            for p in &search.probes {
                writeln!(w, "{}\t{}", p.lambda, p.s).map_err(io_err(&path))?;
            }
            w.flush().map_err(io_err(&path))?;
            write_training_outputs(&mut run, &search.params, &search.history)?;
            json!({
                "mode": "search",
                "lambda_star": search.lambda_star,
                "probes": search.probes.len(),
                "best": history_summary(&search.history),
            })
        }
    };
    run.write_json("summary.json", &summary)?;
    say(&serde_json::to_string(&summary).expect("json"));
    run.finish(&combine(&[to_value(&cfg), to_value(&model_cfg), to_value(&train)]))
}

// --- evaluate ---------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum GainName {
    #[default]
    Exponential,
    Linear,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvaluateRun {
    model: Option<PathBuf>,
    test: Option<PathBuf>,
    ks: Vec<usize>,
    gain: GainName,
    run_tag: String,
    out: Option<PathBuf>,
}

impl Default for EvaluateRun {
    fn default() -> Self {
        EvaluateRun {
            model: None,
            test: None,
            ks: DEFAULT_KS.to_vec(),
            gain: GainName::Exponential,
            run_tag: "crmrank".into(),
            out: None,
        }
    }
}

pub fn evaluate<F: Serialize>(config_file: Option<&Path>, flags: &F) -> Outcome<()> {
    let mut cfg: EvaluateRun = decode(resolve(config_file, flags)?)?;
    let out = cfg.out.clone().unwrap_or_else(|| default_out("evaluate"));
    cfg.out = Some(out.clone());
    if cfg.run_tag.is_empty() || cfg.run_tag.contains(char::is_whitespace) {
        return Err(invalid("run_tag must be a single non-empty word"));
    }
    let model = read_model(require(&cfg.model, "model")?)?;
    let (records, dim) = read_labeled(require(&cfg.test, "test")?)?;
    if model.feature_dim() != dim {
        return Err(invalid(format!(
            "model has feature_dim {} but the test set has {dim}",
            model.feature_dim()
        )));
    }
    if records.is_empty() {
        return Err(invalid("test set is empty"));
    }
    let runs = rank_supervised(&model, &records)?;
    let qrels = qrels_from_supervised(&records);
    let gain = match cfg.gain {
        GainName::Exponential => Gain::Exponential,
        GainName::Linear => Gain::Linear,
    };
    let report = rank_metrics_with_gain(&runs, &qrels, &cfg.ks, gain)?;

    let mut run = RunDir::create(out, "evaluate")?;
    let path = run.path("run.txt");
    write_trec_run(&runs, &cfg.run_tag, run.file("run.txt")?).map_err(in_file(&path))?;
    let path = run.path("qrels");
    write_qrels(&qrels, run.file("qrels")?).map_err(in_file(&path))?;
    let metrics = metrics_value(&report);
    run.write_json("metrics.json", &metrics)?;
    say(&report.to_json());
    run.finish(&to_value(&cfg))
}

// --- learning curve ---------------------------------------------------------

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CurveRun {
    checkpoints: Option<PathBuf>,
    out: Option<PathBuf>,
}

#[derive(Deserialize)]
struct CheckpointLine {
    records_seen: usize,
    metrics: CheckpointMetrics,
}

#[derive(Deserialize)]
struct CheckpointMetrics {
    map: f64,
    avg_rank: f64,
    avg_dcg: f64,
    #[serde(rename = "NDCG@10")]
    ndcg10: Option<f64>,
}

pub fn learning_curve<F: Serialize>(config_file: Option<&Path>, flags: &F) -> Outcome<()> {
    let mut cfg: CurveRun = decode(resolve(config_file, flags)?)?;
    let out = cfg.out.clone().unwrap_or_else(|| default_out("learning-curve"));
    cfg.out = Some(out.clone());
    let mut source = require(&cfg.checkpoints, "checkpoints")?.to_path_buf();
    if source.is_dir() {
        source = source.join("checkpoints.jsonl");
    }
    let mut rows = Vec::new();
    for (i, line) in open(&source)?.lines().enumerate() {
        let line = line.map_err(io_err(&source))?;
        if line.trim().is_empty() {
            continue;
        }
        let c: CheckpointLine =
            serde_json::from_str(&line).map_err(|e| invalid(format!("{}: line {}: {e}", source.display(), i + 1)))?;
        rows.push(CurveRow {
            records_seen: c.records_seen,
            avg_rank: c.metrics.avg_rank,
            avg_dcg: c.metrics.avg_dcg,
            map: c.metrics.map,
            ndcg10: c.metrics.ndcg10.unwrap_or(f64::NAN),
        });
    }
    if rows.is_empty() {
        return Err(invalid(format!("{}: no checkpoints", source.display())));
    }
    let mut run = RunDir::create(out, "learning-curve")?;
    let path = run.path("curve.tsv");
    write_learning_curve(&rows, run.file("curve.tsv")?).map_err(in_file(&path))?;
    let mut table = Vec::new();
    write_learning_curve(&rows, &mut table)?;
    say(String::from_utf8_lossy(&table).trim_end());
    run.finish(&to_value(&cfg))
}
