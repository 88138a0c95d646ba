//! Ranking metrics with trec_eval conventions, TREC run/qrels files, and
//! learning-curve export.
//!
//! Relevance for MAP, MRR and P@k means grade > 0. Average precision divides
//! by the number of relevant judged items of the query, retrieved or not.
//! NDCG's ideal ordering is taken over all judged items of the query.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::log_data::{FeatureVector, SupervisedRecord};
use crate::policy::{rank_products, PolicyParams};
use crate::scalar::Scalar;
use crate::training::TrainHistory;

/// Grades keyed by query, then product. Missing pairs count as grade 0.
pub type Qrels = BTreeMap<String, BTreeMap<String, u8>>;

/// Cut-offs evaluated during training.
pub const DEFAULT_KS: [usize; 4] = [1, 3, 5, 10];

/// One query's ranking, best item first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    query_id: String,
    items: Vec<(String, f64)>,
}

impl RankedList {
    /// Scores must be non-increasing and product ids unique.
    pub fn new(query_id: impl Into<String>, items: Vec<(String, f64)>) -> Result<Self> {
        let query_id = query_id.into();
        let mut seen = BTreeSet::new();
        for (id, _) in &items {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate product {id} in ranking for {query_id}"
                )));
            }
        }
        if items.windows(2).any(|w| w[1].1 > w[0].1) {
            return Err(Error::invalid(format!("scores for {query_id} are not sorted")));
        }
        Ok(RankedList { query_id, items })
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn items(&self) -> &[(String, f64)] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Gain assigned to a relevance grade in DCG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Gain {
    /// `2^grade - 1`
    #[default]
    Exponential,
    /// `grade`, the trec_eval default.
    Linear,
}

impl Gain {
    pub fn of(self, grade: u8) -> f64 {
        match self {
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
            Gain::Linear => grade as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub map: f64,
    pub mrr: f64,
    pub p_at: BTreeMap<usize, f64>,
    pub ndcg_at: BTreeMap<usize, f64>,
    /// Mean 1-based rank of retrieved relevant items.
    pub avg_rank: f64,
    /// Mean full-list DCG over queries with relevant items.
    pub avg_dcg: f64,
    pub n_queries: usize,
}

impl MetricsReport {
    pub fn ndcg(&self, k: usize) -> f64 {
        self.ndcg_at.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn precision(&self, k: usize) -> f64 {
        self.p_at.get(&k).copied().unwrap_or(f64::NAN)
    }

    /// Flat JSON object: `map`, `mrr`, `P@k`, `NDCG@k`, `avg_rank`, `avg_dcg`, `n_queries`.
    pub fn to_json(&self) -> String {
        let mut obj = serde_json::Map::new();
        obj.insert("map".into(), self.map.into());
        obj.insert("mrr".into(), self.mrr.into());
        for (k, v) in &self.p_at {
            obj.insert(format!("P@{k}"), (*v).into());
        }
        for (k, v) in &self.ndcg_at {
            obj.insert(format!("NDCG@{k}"), (*v).into());
        }
        obj.insert("avg_rank".into(), self.avg_rank.into());
        obj.insert("avg_dcg".into(), self.avg_dcg.into());
        obj.insert("n_queries".into(), self.n_queries.into());
        serde_json::to_string_pretty(&serde_json::Value::Object(obj)).expect("finite map serializes")
    }
}

fn grade_of(qrels: &Qrels, query: &str, product: &str) -> u8 {
    qrels.get(query).and_then(|ps| ps.get(product)).copied().unwrap_or(0)
}

fn discount(rank: usize) -> f64 {
    (rank as f64 + 1.0).log2()
}

fn dcg(grades: impl Iterator<Item = u8>, gain: Gain) -> f64 {
    grades.enumerate().map(|(i, g)| gain.of(g) / discount(i + 1)).sum()
}

fn ideal_dcg(qrels: &Qrels, query: &str, k: usize, gain: Gain) -> f64 {
    let mut grades: Vec<u8> = qrels
        .get(query)
        .map(|ps| ps.values().copied().filter(|&g| g > 0).collect())
        .unwrap_or_default();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    dcg(grades.into_iter().take(k), gain)
}

fn num_relevant(qrels: &Qrels, query: &str) -> usize {
    qrels
        .get(query)
        .map(|ps| ps.values().filter(|&&g| g > 0).count())
        .unwrap_or(0)
}

pub fn rank_metrics(runs: &[RankedList], qrels: &Qrels, ks: &[usize]) -> Result<MetricsReport> {
    rank_metrics_with_gain(runs, qrels, ks, Gain::Exponential)
}

pub fn rank_metrics_with_gain(runs: &[RankedList], qrels: &Qrels, ks: &[usize], gain: Gain) -> Result<MetricsReport> {
    if runs.is_empty() {
        return Err(Error::invalid("no rankings to evaluate"));
    }
    if ks.contains(&0) {
        return Err(Error::invalid("cut-off k must be at least 1"));
    }
    let mut seen = BTreeSet::new();
    for run in runs {
        if !seen.insert(run.query_id.as_str()) {
            return Err(Error::invalid(format!("query {} ranked twice", run.query_id)));
        }
    }
    let ks: BTreeSet<usize> = ks.iter().copied().collect();

    let mut ap_sum = 0.0;
    let mut rr_sum = 0.0;
    let mut ndcg_sum: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let mut p_sum: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let mut judged_queries = 0usize;

    for run in runs {
        let grades: Vec<u8> = run
            .items
            .iter()
            .map(|(p, _)| grade_of(qrels, &run.query_id, p))
            .collect();
        for &k in &ks {
            let hits = grades.iter().take(k).filter(|&&g| g > 0).count();
            *p_sum.get_mut(&k).expect("seeded") += hits as f64 / k as f64;
        }
        let n_rel = num_relevant(qrels, &run.query_id);
        if n_rel == 0 {
            continue;
        }
        judged_queries += 1;

        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        let mut first_hit = None;
        for (i, &g) in grades.iter().enumerate() {
            if g > 0 {
                hits += 1;
                precision_sum += hits as f64 / (i + 1) as f64;
                first_hit.get_or_insert(i + 1);
            }
        }
        ap_sum += precision_sum / n_rel as f64;
        rr_sum += first_hit.map_or(0.0, |r| 1.0 / r as f64);
        for &k in &ks {
            let actual = dcg(grades.iter().copied().take(k), gain);
            let ideal = ideal_dcg(qrels, &run.query_id, k, gain);
            *ndcg_sum.get_mut(&k).expect("seeded") += actual / ideal;
        }
    }

    if judged_queries == 0 {
        return Err(Error::Degenerate("no query has a relevant item".into()));
    }
    let nq = judged_queries as f64;
    Ok(MetricsReport {
        map: ap_sum / nq,
        mrr: rr_sum / nq,
        p_at: p_sum.into_iter().map(|(k, v)| (k, v / runs.len() as f64)).collect(),
        ndcg_at: ndcg_sum.into_iter().map(|(k, v)| (k, v / nq)).collect(),
        avg_rank: average_rank_of_relevant(runs, qrels)?,
        avg_dcg: average_dcg_with_gain(runs, qrels, gain)?,
        n_queries: runs.len(),
    })
}

/// Mean 1-based rank over every (query, retrieved relevant item) pair.
pub fn average_rank_of_relevant(runs: &[RankedList], qrels: &Qrels) -> Result<f64> {
    let mut total = 0usize;
    let mut count = 0usize;
    for run in runs {
        for (i, (p, _)) in run.items.iter().enumerate() {
            if grade_of(qrels, &run.query_id, p) > 0 {
                total += i + 1;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Degenerate("no relevant item in any ranking".into()));
    }
    Ok(total as f64 / count as f64)
}

/// Mean over queries with relevant items of the DCG of the whole list,
/// with exponential gain.
pub fn average_dcg_of_relevant(runs: &[RankedList], qrels: &Qrels) -> Result<f64> {
    average_dcg_with_gain(runs, qrels, Gain::Exponential)
}

fn average_dcg_with_gain(runs: &[RankedList], qrels: &Qrels, gain: Gain) -> Result<f64> {
    let per_query: Vec<f64> = runs
        .iter()
        .filter(|run| run.items.iter().any(|(p, _)| grade_of(qrels, &run.query_id, p) > 0))
        .map(|run| dcg(run.items.iter().map(|(p, _)| grade_of(qrels, &run.query_id, p)), gain))
        .collect();
    if per_query.is_empty() {
        return Err(Error::Degenerate("no relevant item in any ranking".into()));
    }
    Ok(per_query.iter().sum::<f64>() / per_query.len() as f64)
}

/// Writes `query_id Q0 product_id rank score tag` lines.
pub fn write_trec_run<W: Write>(runs: &[RankedList], run_tag: &str, mut sink: W) -> Result<usize> {
    if run_tag.is_empty() || run_tag.contains(char::is_whitespace) {
        return Err(Error::invalid("run tag must be a single non-empty token"));
    }
    let mut lines = 0;
    for run in runs {
        if run.items.is_empty() {
            return Err(Error::invalid(format!("empty ranking for query {}", run.query_id)));
        }
        for (i, (p, score)) in run.items.iter().enumerate() {
            writeln!(sink, "{} Q0 {} {} {:.6} {}", run.query_id, p, i + 1, score, run_tag)?;
            lines += 1;
        }
    }
    sink.flush()?;
    Ok(lines)
}

/// Reads a TREC run file; items are ordered by their rank column.
pub fn read_trec_run<R: BufRead>(source: R) -> Result<Vec<RankedList>> {
    let mut by_query: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line: idx + 1, message };
        if cols.len() != 6 {
            return Err(err(format!("expected 6 columns, found {}", cols.len())));
        }
        let rank: usize = cols[3].parse().map_err(|_| err(format!("bad rank {:?}", cols[3])))?;
        let score: f64 = cols[4].parse().map_err(|_| err(format!("bad score {:?}", cols[4])))?;
        by_query
            .entry(cols[0].to_string())
            .or_default()
            .push((rank, cols[2].to_string(), score));
    }
    by_query
        .into_iter()
        .map(|(q, mut rows)| {
            rows.sort_by_key(|r| r.0);
            RankedList::new(q, rows.into_iter().map(|(_, p, s)| (p, s)).collect())
        })
        .collect()
}

/// Writes `query_id 0 product_id grade` lines.
pub fn write_qrels<W: Write>(qrels: &Qrels, mut sink: W) -> Result<usize> {
    let mut lines = 0;
    for (q, products) in qrels {
        for (p, g) in products {
            writeln!(sink, "{q} 0 {p} {g}")?;
            lines += 1;
        }
    }
    sink.flush()?;
    Ok(lines)
}

pub fn read_qrels<R: BufRead>(source: R) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 4 {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("expected 4 columns, found {}", cols.len()),
            });
        }
        let grade: u8 = cols[3].parse().map_err(|_| Error::Parse {
            line: idx + 1,
            message: format!("bad grade {:?}", cols[3]),
        })?;
        qrels
            .entry(cols[0].to_string())
            .or_default()
            .insert(cols[2].to_string(), grade);
    }
    Ok(qrels)
}

/// Grades of a supervised set as qrels.
pub fn qrels_from_supervised<T>(records: &[SupervisedRecord<T>]) -> Qrels {
    let mut qrels = Qrels::new();
    for r in records {
        qrels
            .entry(r.query_id.clone())
            .or_default()
            .insert(r.product_id.clone(), r.label);
    }
    qrels
}

/// Ranks every query of a supervised set with `params`.
pub fn rank_supervised<T: Scalar>(
    params: &PolicyParams<T>,
    records: &[SupervisedRecord<T>],
) -> Result<Vec<RankedList>> {
    let mut by_query: BTreeMap<&str, Vec<(&str, FeatureVector<T>)>> = BTreeMap::new();
    for r in records {
        by_query
            .entry(r.query_id.as_str())
            .or_default()
            .push((r.product_id.as_str(), r.context.clone()));
    }
    by_query
        .into_iter()
        .map(|(q, candidates)| {
            let ranked = rank_products(params, &candidates)?;
            RankedList::new(q, ranked.into_iter().map(|(p, s)| (p, s.as_f64())).collect())
        })
        .collect()
}

/// Ranks a supervised set and scores the rankings against its own labels.
pub fn evaluate_policy<T: Scalar>(
    params: &PolicyParams<T>,
    records: &[SupervisedRecord<T>],
    ks: &[usize],
) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let runs = rank_supervised(params, records)?;
    rank_metrics(&runs, &qrels_from_supervised(records), ks)
}

/// One learning-curve row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub records_seen: usize,
    pub avg_rank: f64,
    pub avg_dcg: f64,
    pub map: f64,
    pub ndcg10: f64,
}

pub fn learning_curve<T: Scalar>(history: &TrainHistory<T>) -> Result<Vec<CurveRow>> {
    if history.checkpoints.is_empty() {
        return Err(Error::invalid("training history has no checkpoints"));
    }
    Ok(history
        .checkpoints
        .iter()
        .map(|c| CurveRow {
            records_seen: c.records_seen,
            avg_rank: c.dev_metrics.avg_rank,
            avg_dcg: c.dev_metrics.avg_dcg,
            map: c.dev_metrics.map,
            ndcg10: c.dev_metrics.ndcg(10),
        })
        .collect())
}

pub fn write_learning_curve<W: Write>(rows: &[CurveRow], mut sink: W) -> Result<usize> {
    writeln!(sink, "records_seen\tavg_rank\tavg_dcg\tMAP\tNDCG@10")?;
    for r in rows {
        writeln!(
            sink,
            "{}\t{}\t{}\t{}\t{}",
            r.records_seen, r.avg_rank, r.avg_dcg, r.map, r.ndcg10
        )?;
    }
    sink.flush()?;
    Ok(rows.len())
}
