//! Logged bandit feedback and supervised relevance data: in-memory models,
//! line-oriented file formats, and query-level splitting.
//!
//! Bandit logs are JSON lines, one interaction per line:
//!
//! ```text
//! {"_meta":{"source":"sim"},"feature_dim":2}
//! {"query_id":"q1","product_id":"p1","features":[0.5,-1.0],"action":1,"propensity":0.8,"delta":0}
//! ```
//!
//! The optional first line carries free-form metadata under `_meta`.
//! Supervised sets are tab-separated with a mandatory header
//! `query_id product_id label nrr f0 .. f{d-1}`; an empty `nrr` cell means
//! the label was assigned without a normalized relevance rate.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::graded_label;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Smallest propensity accepted from a log. Anything below is treated as a
/// logging error rather than clipped.
pub const MIN_PROPENSITY: f64 = 1e-9;

/// Dense context features of one query-product pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T>(Vec<T>);

impl<T: Scalar> FeatureVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("feature {i} is not finite")));
        }
        Ok(FeatureVector(values))
    }

    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| T::of(v)).collect())
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|v| v.as_f64()).collect()
    }
}

/// The binary decision of a ranking policy: keep a product out of the top
/// positions, or show it there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Hide = 0,
    Show = 1,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Hide, Action::Show];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: u8) -> Option<Action> {
        match index {
            0 => Some(Action::Hide),
            1 => Some(Action::Show),
            _ => None,
        }
    }

    pub fn other(self) -> Action {
        match self {
            Action::Hide => Action::Show,
            Action::Show => Action::Hide,
        }
    }
}

/// One logged interaction: context, the logging policy's action, the
/// probability it assigned to that action, and the incurred binary loss.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditRecord<T> {
    pub query_id: String,
    pub product_id: String,
    pub context: FeatureVector<T>,
    pub action: Action,
    pub propensity: T,
    /// `true` when the interaction incurred loss.
    pub loss: bool,
}

impl<T: Scalar> BanditRecord<T> {
    pub fn new(
        query_id: impl Into<String>,
        product_id: impl Into<String>,
        context: FeatureVector<T>,
        action: Action,
        propensity: T,
        loss: bool,
    ) -> Result<Self> {
        check_propensity(propensity.as_f64()).map_err(Error::Invalid)?;
        Ok(BanditRecord {
            query_id: query_id.into(),
            product_id: product_id.into(),
            context,
            action,
            propensity,
            loss,
        })
    }

    /// The loss as a number in {0, 1}.
    pub fn loss_value(&self) -> T {
        if self.loss {
            T::one()
        } else {
            T::zero()
        }
    }
}

fn check_propensity(p: f64) -> std::result::Result<(), String> {
    if !p.is_finite() || p > 1.0 {
        Err(format!("propensity {p} outside (0, 1]"))
    } else if p < MIN_PROPENSITY {
        Err(format!("propensity {p} below minimum {MIN_PROPENSITY}"))
    } else {
        Ok(())
    }
}

/// A collection of logged interactions sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditLog<T> {
    records: Vec<BanditRecord<T>>,
    feature_dim: usize,
    pub metadata: BTreeMap<String, String>,
}

impl<T: Scalar> BanditLog<T> {
    pub fn new(records: Vec<BanditRecord<T>>, feature_dim: usize, metadata: BTreeMap<String, String>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.context.dim() != feature_dim {
                return Err(Error::Dimension {
                    line: Some(i + 1),
                    expected: feature_dim,
                    found: r.context.dim(),
                });
            }
            check_propensity(r.propensity.as_f64()).map_err(|message| Error::InvalidRecord { line: i + 1, message })?;
        }
        Ok(BanditLog {
            records,
            feature_dim,
            metadata,
        })
    }

    pub fn records(&self) -> &[BanditRecord<T>] {
        &self.records
    }

    pub fn into_records(self) -> Vec<BanditRecord<T>> {
        self.records
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct query ids in the log.
    pub fn query_ids(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.query_id.as_str()).collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    query_id: String,
    product_id: String,
    features: Vec<f64>,
    action: u8,
    propensity: f64,
    delta: u8,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaLine {
    #[serde(rename = "_meta")]
    meta: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_dim: Option<usize>,
}

/// Reads a JSON-lines bandit log. Blank lines are skipped.
pub fn parse_bandit_log<T: Scalar, R: BufRead>(source: R) -> Result<BanditLog<T>> {
    let mut records = Vec::new();
    let mut metadata = BTreeMap::new();
    let mut feature_dim: Option<usize> = None;
    let mut seen_content = false;

    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if !seen_content && text.contains("\"_meta\"") {
            seen_content = true;
            let meta: MetaLine = serde_json::from_str(text).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            metadata = meta.meta;
            feature_dim = meta.feature_dim;
            continue;
        }
        seen_content = true;

        let raw: RecordLine = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let invalid = |message: String| Error::InvalidRecord { line: line_no, message };
        let action = Action::from_index(raw.action)
            .ok_or_else(|| invalid(format!("action must be 0 or 1, got {}", raw.action)))?;
        let loss = match raw.delta {
            0 => false,
            1 => true,
            d => return Err(invalid(format!("delta must be 0 or 1, got {d}"))),
        };
        check_propensity(raw.propensity).map_err(invalid)?;
        let expected = *feature_dim.get_or_insert(raw.features.len());
        if raw.features.len() != expected {
            return Err(Error::Dimension {
                line: Some(line_no),
                expected,
                found: raw.features.len(),
            });
        }
        let context = FeatureVector::from_f64(&raw.features).map_err(|e| invalid(e.to_string()))?;
        records.push(BanditRecord {
            query_id: raw.query_id,
            product_id: raw.product_id,
            context,
            action,
            propensity: T::of(raw.propensity),
            loss,
        });
    }

    Ok(BanditLog {
        records,
        feature_dim: feature_dim.unwrap_or(0),
        metadata,
    })
}

/// Writes `log` as JSON lines, metadata line first. Returns the number of
/// interaction records written.
pub fn write_bandit_log<T: Scalar, W: Write>(log: &BanditLog<T>, mut sink: W) -> Result<usize> {
    let meta = MetaLine {
        meta: log.metadata.clone(),
        feature_dim: Some(log.feature_dim),
    };
    serde_json::to_writer(&mut sink, &meta).map_err(std::io::Error::from)?;
    sink.write_all(b"\n")?;
    for r in &log.records {
        let line = RecordLine {
            query_id: r.query_id.clone(),
            product_id: r.product_id.clone(),
            features: r.context.to_f64(),
            action: r.action.index() as u8,
            propensity: r.propensity.as_f64(),
            delta: r.loss as u8,
        };
        serde_json::to_writer(&mut sink, &line).map_err(std::io::Error::from)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(log.records.len())
}

/// A query-product pair with a graded relevance label (0..=4).
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedRecord<T> {
    pub query_id: String,
    pub product_id: String,
    pub context: FeatureVector<T>,
    pub label: u8,
    pub nrr: Option<T>,
}

impl<T: Scalar> SupervisedRecord<T> {
    pub fn validate(&self) -> Result<()> {
        if self.label > 4 {
            return Err(Error::invalid(format!("label {} outside 0..=4", self.label)));
        }
        if let Some(nrr) = self.nrr {
            let expected = graded_label(nrr)?;
            if expected != self.label {
                return Err(Error::invalid(format!(
                    "label {} disagrees with nrr {} (expected {expected})",
                    self.label, nrr
                )));
            }
        }
        Ok(())
    }
}

const SUPERVISED_HEADER: [&str; 4] = ["query_id", "product_id", "label", "nrr"];

/// Reads a supervised TSV file. Returns the records and the feature dimension
/// declared by the header.
pub fn parse_supervised<T: Scalar, R: BufRead>(source: R) -> Result<(Vec<SupervisedRecord<T>>, usize)> {
    let mut lines = source.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing header row".into(),
            })
        }
    };
    let columns: Vec<&str> = header.trim_end_matches(['\r', '\n']).split('\t').collect();
    if columns.len() < SUPERVISED_HEADER.len() || columns[..4] != SUPERVISED_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must start with {}", SUPERVISED_HEADER.join("\\t")),
        });
    }
    let dim = columns.len() - SUPERVISED_HEADER.len();

    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        let parse_err = |message: String| Error::Parse { line: line_no, message };
        if cells.len() != columns.len() {
            return Err(Error::Dimension {
                line: Some(line_no),
                expected: dim,
                found: cells.len().saturating_sub(SUPERVISED_HEADER.len()),
            });
        }
        let label: u8 = cells[2]
            .parse()
            .map_err(|_| parse_err(format!("bad label {:?}", cells[2])))?;
        let nrr = if cells[3].is_empty() {
            None
        } else {
            let v: f64 = cells[3]
                .parse()
                .map_err(|_| parse_err(format!("bad nrr {:?}", cells[3])))?;
            Some(T::of(v))
        };
        let features = cells[4..]
            .iter()
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(format!("bad feature value: {e}")))?;
        let record = SupervisedRecord {
            query_id: cells[0].to_string(),
            product_id: cells[1].to_string(),
            context: FeatureVector::from_f64(&features).map_err(|e| Error::InvalidRecord {
                line: line_no,
                message: e.to_string(),
            })?,
            label,
            nrr,
        };
        record.validate().map_err(|e| Error::InvalidRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok((records, dim))
}

/// Writes a supervised TSV file with its header. Returns the number of data
/// rows written.
pub fn write_supervised<T: Scalar, W: Write>(
    records: &[SupervisedRecord<T>],
    feature_dim: usize,
    mut sink: W,
) -> Result<usize> {
    let mut header: Vec<String> = SUPERVISED_HEADER.iter().map(|s| s.to_string()).collect();
    header.extend((0..feature_dim).map(|i| format!("f{i}")));
    writeln!(sink, "{}", header.join("\t"))?;
    for r in records {
        if r.context.dim() != feature_dim {
            return Err(Error::dimension(feature_dim, r.context.dim()));
        }
        let nrr = r.nrr.map(|v| v.as_f64().to_string()).unwrap_or_default();
        write!(sink, "{}\t{}\t{}\t{}", r.query_id, r.product_id, r.label, nrr)?;
        for v in r.context.values() {
            write!(sink, "\t{}", v.as_f64())?;
        }
        writeln!(sink)?;
    }
    sink.flush()?;
    Ok(records.len())
}

/// Disjoint train/dev/test partition of query ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QuerySplit {
    pub train: BTreeSet<String>,
    pub dev: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

/// Randomly partitions query ids by `ratios` (train, dev, test).
///
/// Dev and test sizes are floored; the remainder goes to train.
pub fn split_queries<I, S>(query_ids: I, ratios: (f64, f64, f64), seed: u64) -> Result<QuerySplit>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let (r_train, r_dev, r_test) = ratios;
    if [r_train, r_dev, r_test].iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::invalid("split ratios must be positive"));
    }
    if (r_train + r_dev + r_test - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("split ratios must sum to 1"));
    }
    let unique: BTreeSet<String> = query_ids.into_iter().map(Into::into).collect();
    if unique.is_empty() {
        return Err(Error::invalid("cannot split an empty query set"));
    }
    let mut ids: Vec<String> = unique.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n = ids.len() as f64;
    // Products like 3060 * 0.2 can land a hair under the integer.
    let n_dev = (n * r_dev + 1e-9).floor() as usize;
    let n_test = (n * r_test + 1e-9).floor() as usize;

    let mut split = QuerySplit::default();
    for (i, id) in ids.into_iter().enumerate() {
        if i < n_dev {
            split.dev.insert(id);
        } else if i < n_dev + n_test {
            split.test.insert(id);
        } else {
            split.train.insert(id);
        }
    }
    Ok(split)
}
