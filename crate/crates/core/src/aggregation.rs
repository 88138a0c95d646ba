//! Turning raw impression and feedback streams into graded relevance labels.
//!
//! Pipeline per query: drop pairs shown fewer than `visibility_threshold`
//! times, compute the relevance rate `rr = positives / visibility`, normalize
//! by the query's largest rate to get `nrr`, and grade `ceil(4 * nrr)`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::log_data::{FeatureVector, SupervisedRecord};
use crate::scalar::Scalar;

/// Visibility cut-off used when none is configured.
pub const DEFAULT_VISIBILITY_THRESHOLD: u64 = 50;

/// Negatives sampled per positive when none is configured.
pub const DEFAULT_NEGATIVE_RATIO: f64 = 4.0;

const NRR_DECIMALS: f64 = 1e12;

/// Maps a normalized relevance rate in `[0, 1]` to a grade in `0..=4`.
///
/// `nrr` is rounded to 12 decimal places first so values a few ulps above a
/// grade boundary stay in the lower grade.
pub fn graded_label<T: Scalar>(nrr: T) -> Result<u8> {
    let v = nrr.as_f64();
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(format!("nrr {v} outside [0, 1]")));
    }
    let rounded = (v * NRR_DECIMALS).round() / NRR_DECIMALS;
    Ok((4.0 * rounded).ceil() as u8)
}

/// Impression and positive-feedback counts for one query-product pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairCounts {
    pub visibility: u64,
    pub positives: u64,
}

/// Per-query, per-product feedback counts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeedbackCounts {
    by_query: BTreeMap<String, BTreeMap<String, PairCounts>>,
}

impl FeedbackCounts {
    /// Counts one impression per `impressions` item and one positive per
    /// `positives` item.
    pub fn from_streams<I, J, Q, P, Q2, P2>(impressions: I, positives: J) -> Self
    where
        I: IntoIterator<Item = (Q, P)>,
        J: IntoIterator<Item = (Q2, P2)>,
        Q: AsRef<str>,
        P: AsRef<str>,
        Q2: AsRef<str>,
        P2: AsRef<str>,
    {
        let mut counts = FeedbackCounts::default();
        for (q, p) in impressions {
            counts.entry(q.as_ref(), p.as_ref()).visibility += 1;
        }
        for (q, p) in positives {
            counts.entry(q.as_ref(), p.as_ref()).positives += 1;
        }
        counts
    }

    fn entry(&mut self, query: &str, product: &str) -> &mut PairCounts {
        if !self.by_query.contains_key(query) {
            self.by_query.insert(query.to_string(), BTreeMap::new());
        }
        let products = self.by_query.get_mut(query).expect("inserted above");
        if !products.contains_key(product) {
            products.insert(product.to_string(), PairCounts::default());
        }
        products.get_mut(product).expect("inserted above")
    }

    /// Adds pre-aggregated counts for one pair.
    pub fn add(&mut self, query: &str, product: &str, visibility: u64, positives: u64) {
        let c = self.entry(query, product);
        c.visibility += visibility;
        c.positives += positives;
    }

    pub fn get(&self, query: &str, product: &str) -> Option<PairCounts> {
        self.by_query.get(query)?.get(product).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, PairCounts)> {
        self.by_query
            .iter()
            .flat_map(|(q, ps)| ps.iter().map(move |(p, c)| (q.as_str(), p.as_str(), *c)))
    }

    /// Fails if any pair has more positives than impressions.
    pub fn check_consistency(&self) -> Result<()> {
        for (q, p, c) in self.iter() {
            if c.positives > c.visibility {
                return Err(Error::invalid(format!(
                    "pair ({q}, {p}) has {} positives but visibility {}",
                    c.positives, c.visibility
                )));
            }
        }
        Ok(())
    }

    /// Drops pairs shown fewer than `threshold` times.
    pub fn filter_visibility(mut self, threshold: u64) -> Self {
        for products in self.by_query.values_mut() {
            products.retain(|_, c| c.visibility >= threshold);
        }
        self.by_query.retain(|_, ps| !ps.is_empty());
        self
    }
}

/// Relevance quantities of one query-product pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Relevance<T> {
    pub visibility: u64,
    pub positives: u64,
    pub rr: T,
    pub nrr: T,
    pub label: u8,
}

/// Graded relevance for every pair that survived visibility filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceTable<T> {
    by_query: BTreeMap<String, BTreeMap<String, Relevance<T>>>,
}

impl<T: Scalar> RelevanceTable<T> {
    /// Builds the table from already filtered counts.
    pub fn from_counts(counts: &FeedbackCounts) -> Result<Self> {
        counts.check_consistency()?;
        let mut by_query = BTreeMap::new();
        for (query, products) in &counts.by_query {
            let rates: Vec<(String, PairCounts, T)> = products
                .iter()
                .filter(|(_, c)| c.visibility > 0)
                .map(|(p, c)| {
                    let rr = T::of(c.positives as f64) / T::of(c.visibility as f64);
                    (p.clone(), *c, rr)
                })
                .collect();
            let max_rr = rates.iter().fold(T::zero(), |m, (_, _, rr)| m.max(*rr));
            let mut row = BTreeMap::new();
            for (product, c, rr) in rates {
                // Queries without any positive feedback get nrr = 0 throughout.
                let nrr = if max_rr > T::zero() {
                    if rr == max_rr {
                        T::one()
                    } else {
                        rr / max_rr
                    }
                } else {
                    T::zero()
                };
                row.insert(
                    product,
                    Relevance {
                        visibility: c.visibility,
                        positives: c.positives,
                        rr,
                        nrr,
                        label: graded_label(nrr)?,
                    },
                );
            }
            if !row.is_empty() {
                by_query.insert(query.clone(), row);
            }
        }
        Ok(RelevanceTable { by_query })
    }

    pub fn get(&self, query: &str, product: &str) -> Option<&Relevance<T>> {
        self.by_query.get(query)?.get(product)
    }

    pub fn query(&self, query: &str) -> Option<&BTreeMap<String, Relevance<T>>> {
        self.by_query.get(query)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.by_query.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &Relevance<T>)> {
        self.by_query
            .iter()
            .flat_map(|(q, ps)| ps.iter().map(move |(p, r)| (q.as_str(), p.as_str(), r)))
    }

    pub fn len(&self) -> usize {
        self.by_query.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_query.is_empty()
    }

    /// Keeps only the given queries.
    pub fn restrict_to(&self, queries: &BTreeSet<String>) -> Self {
        RelevanceTable {
            by_query: self
                .by_query
                .iter()
                .filter(|(q, _)| queries.contains(*q))
                .map(|(q, ps)| (q.clone(), ps.clone()))
                .collect(),
        }
    }

    /// Grades keyed query -> product -> label.
    pub fn grades(&self) -> BTreeMap<String, BTreeMap<String, u8>> {
        self.by_query
            .iter()
            .map(|(q, ps)| (q.clone(), ps.iter().map(|(p, r)| (p.clone(), r.label)).collect()))
            .collect()
    }
}

/// Writes `query_id product_id visibility positives rr nrr label` rows.
pub fn write_relevance_table<T: Scalar, W: Write>(table: &RelevanceTable<T>, mut sink: W) -> Result<usize> {
    writeln!(sink, "query_id\tproduct_id\tvisibility\tpositives\trr\tnrr\tlabel")?;
    let mut n = 0;
    for (q, p, r) in table.iter() {
        writeln!(
            sink,
            "{q}\t{p}\t{}\t{}\t{}\t{}\t{}",
            r.visibility,
            r.positives,
            r.rr.as_f64(),
            r.nrr.as_f64(),
            r.label
        )?;
        n += 1;
    }
    sink.flush()?;
    Ok(n)
}

/// Counts the streams, drops low-visibility pairs, and grades the rest.
pub fn aggregate_feedback<T, I, J, Q, P, Q2, P2>(
    impressions: I,
    positives: J,
    visibility_threshold: u64,
) -> Result<RelevanceTable<T>>
where
    T: Scalar,
    I: IntoIterator<Item = (Q, P)>,
    J: IntoIterator<Item = (Q2, P2)>,
    Q: AsRef<str>,
    P: AsRef<str>,
    Q2: AsRef<str>,
    P2: AsRef<str>,
{
    if visibility_threshold < 1 {
        return Err(Error::invalid("visibility threshold must be at least 1"));
    }
    let counts = FeedbackCounts::from_streams(impressions, positives);
    counts.check_consistency()?;
    RelevanceTable::from_counts(&counts.filter_visibility(visibility_threshold))
}

/// Context features keyed by query and product.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTable<T> {
    by_query: BTreeMap<String, BTreeMap<String, FeatureVector<T>>>,
}

impl<T> Default for ContextTable<T> {
    fn default() -> Self {
        ContextTable {
            by_query: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> ContextTable<T> {
    pub fn insert(&mut self, query: impl Into<String>, product: impl Into<String>, features: FeatureVector<T>) {
        self.by_query
            .entry(query.into())
            .or_default()
            .insert(product.into(), features);
    }

    pub fn get(&self, query: &str, product: &str) -> Option<&FeatureVector<T>> {
        self.by_query.get(query)?.get(product)
    }

    pub fn query(&self, query: &str) -> Option<&BTreeMap<String, FeatureVector<T>>> {
        self.by_query.get(query)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.by_query.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &FeatureVector<T>)> {
        self.by_query
            .iter()
            .flat_map(|(q, ps)| ps.iter().map(move |(p, x)| (q.as_str(), p.as_str(), x)))
    }

    pub fn len(&self) -> usize {
        self.by_query.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_query.is_empty()
    }
}

/// Output of [`build_supervised`].
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedBuild<T> {
    pub records: Vec<SupervisedRecord<T>>,
    /// Queries that could not receive their full share of negatives.
    pub warnings: Vec<String>,
}

/// Assembles a supervised training set: every graded-positive pair plus
/// `floor(negative_ratio * positives)` negatives per query, drawn uniformly
/// without replacement from shown products that received no feedback.
pub fn build_supervised<T: Scalar>(
    table: &RelevanceTable<T>,
    shown_products: &BTreeMap<String, BTreeSet<String>>,
    contexts: &ContextTable<T>,
    negative_ratio: f64,
    seed: u64,
) -> Result<SupervisedBuild<T>> {
    if !(negative_ratio.is_finite() && negative_ratio > 0.0) {
        return Err(Error::invalid("negative_ratio must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let empty = BTreeSet::new();

    for (query, products) in &table.by_query {
        let positives: Vec<(&String, &Relevance<T>)> = products.iter().filter(|(_, r)| r.label > 0).collect();
        if positives.is_empty() {
            continue;
        }
        for (product, rel) in &positives {
            let context = contexts
                .get(query, product)
                .ok_or_else(|| Error::invalid(format!("no context for positive pair ({query}, {product})")))?;
            records.push(SupervisedRecord {
                query_id: query.clone(),
                product_id: (*product).clone(),
                context: context.clone(),
                label: rel.label,
                nrr: Some(rel.nrr),
            });
        }

        let candidates: Vec<(&String, &Relevance<T>, &FeatureVector<T>)> = shown_products
            .get(query)
            .unwrap_or(&empty)
            .iter()
            .filter_map(|p| {
                let rel = products.get(p)?;
                if rel.positives > 0 {
                    return None;
                }
                Some((p, rel, contexts.get(query, p)?))
            })
            .collect();
        let wanted = (negative_ratio * positives.len() as f64 + 1e-9).floor() as usize;
        if candidates.is_empty() {
            warnings.push(format!("query {query}: no negative candidates, emitted positives only"));
            continue;
        }
        if candidates.len() < wanted {
            warnings.push(format!(
                "query {query}: wanted {wanted} negatives but only {} candidates",
                candidates.len()
            ));
        }
        let take = wanted.min(candidates.len());
        let mut picked = rand::seq::index::sample(&mut rng, candidates.len(), take).into_vec();
        picked.sort_unstable();
        for i in picked {
            let (product, rel, context) = candidates[i];
            records.push(SupervisedRecord {
                query_id: query.clone(),
                product_id: product.clone(),
                context: context.clone(),
                label: rel.label,
                nrr: Some(rel.nrr),
            });
        }
    }
    Ok(SupervisedBuild { records, warnings })
}

/// Every graded pair of the given queries, without sampling. Pairs lacking a
/// context are skipped.
pub fn label_all<T: Scalar>(
    table: &RelevanceTable<T>,
    contexts: &ContextTable<T>,
    queries: &BTreeSet<String>,
) -> Vec<SupervisedRecord<T>> {
    table
        .iter()
        .filter(|(q, _, _)| queries.contains(*q))
        .filter_map(|(q, p, rel)| {
            Some(SupervisedRecord {
                query_id: q.to_string(),
                product_id: p.to_string(),
                context: contexts.get(q, p)?.clone(),
                label: rel.label,
                nrr: Some(rel.nrr),
            })
        })
        .collect()
}
