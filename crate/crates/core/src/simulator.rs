//! Synthetic search worlds with known relevance.
//!
//! Each query-product pair has a standard-normal context and a click
//! probability `r = logistic(theta . x + bias)` from a hidden linear scorer.
//! A logging policy built from a noisy copy of that scorer decides to show or
//! hide each product, and the logged loss follows the show/hide semantics:
//!
//! | action | user                          | loss |
//! |--------|-------------------------------|------|
//! | show   | clicks                        | 0    |
//! | show   | does not click                | 1    |
//! | hide   | browses deeper and clicks     | 1    |
//! | hide   | otherwise                     | 0    |
//!
//! so the exact risk of any policy is
//! `mean over pairs of pi(show)(1 - r) + pi(hide) * deep_browse_prob * r`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aggregation::{build_supervised, label_all, ContextTable, FeedbackCounts, RelevanceTable};
use crate::error::{Error, Result};
use crate::log_data::{split_queries, Action, BanditLog, BanditRecord, FeatureVector, QuerySplit, SupervisedRecord};
use crate::policy::{action_probabilities, ActionDistribution, PolicyParams};
use crate::scalar::{pairwise_sum, Scalar};

/// Generation settings for a world and the datasets drawn from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_queries: usize,
    pub products_per_query: usize,
    pub feature_dim: usize,
    /// Standard deviation of the hidden relevance logit across contexts.
    pub relevance_scale: f64,
    /// Offset of the hidden relevance logit; negative values make relevance sparse.
    pub relevance_bias: f64,
    /// Chance that a user looks past the top positions at a hidden product.
    pub deep_browse_prob: f64,
    /// Scale of the Gaussian perturbation of the logging scorer, relative to
    /// the hidden scorer.
    pub logging_noise: f64,
    pub logging_temperature: f64,
    /// Added to the logging policy's show logit.
    pub logging_offset: f64,
    /// Interactions in the bandit log.
    pub n_interactions: usize,
    /// Impressions per pair are drawn uniformly from this inclusive range
    /// when simulating aggregated feedback.
    pub visibility_min: u64,
    pub visibility_max: u64,
    pub visibility_threshold: u64,
    pub negative_ratio: f64,
    pub split: (f64, f64, f64),
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_queries: 100,
            products_per_query: 50,
            feature_dim: 10,
            relevance_scale: 3.0,
            relevance_bias: -4.0,
            deep_browse_prob: 0.5,
            logging_noise: 1.0,
            logging_temperature: 1.0,
            logging_offset: 0.0,
            n_interactions: 20_000,
            visibility_min: 40,
            visibility_max: 120,
            visibility_threshold: crate::aggregation::DEFAULT_VISIBILITY_THRESHOLD,
            negative_ratio: crate::aggregation::DEFAULT_NEGATIVE_RATIO,
            split: (0.6, 0.2, 0.2),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_queries == 0 || self.products_per_query == 0 || self.feature_dim == 0 {
            return Err(Error::invalid("world dimensions must be positive"));
        }
        if !(0.0..=1.0).contains(&self.deep_browse_prob) {
            return Err(Error::invalid("deep_browse_prob must lie in [0, 1]"));
        }
        if !(self.logging_temperature.is_finite() && self.logging_temperature > 0.0) {
            return Err(Error::invalid("logging_temperature must be positive"));
        }
        for (name, v) in [
            ("relevance_scale", self.relevance_scale),
            ("relevance_bias", self.relevance_bias),
            ("logging_noise", self.logging_noise),
            ("logging_offset", self.logging_offset),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite")));
            }
        }
        if self.relevance_scale < 0.0 || self.logging_noise < 0.0 {
            return Err(Error::invalid("scales must be non-negative"));
        }
        if self.visibility_min > self.visibility_max {
            return Err(Error::invalid("visibility_min exceeds visibility_max"));
        }
        Ok(())
    }
}

/// Smallest action probability the logging policy may use, keeping every
/// propensity well above the log's validity floor.
pub const MIN_LOGGING_PROB: f64 = 1e-6;

/// The policy that generated a log: a scorer whose logits are divided by
/// `temperature`, with both actions kept at probability >= [`MIN_LOGGING_PROB`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoggingPolicy<T> {
    pub params: PolicyParams<T>,
    pub temperature: T,
}

impl<T: Scalar> LoggingPolicy<T> {
    pub fn new(params: PolicyParams<T>, temperature: T) -> Result<Self> {
        if !(temperature.is_finite() && temperature > T::zero()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        Ok(LoggingPolicy { params, temperature })
    }

    pub fn probabilities(&self, context: &FeatureVector<T>) -> Result<ActionDistribution<T>> {
        let logits = self.params.logits(context)?;
        let dist = ActionDistribution::from_logits([logits[0] / self.temperature, logits[1] / self.temperature])?;
        let floor = T::of(MIN_LOGGING_PROB);
        let show = dist.show.max(floor).min(T::one() - floor);
        Ok(ActionDistribution {
            hide: T::one() - show,
            show,
        })
    }

    /// The same scorer with the temperature folded into its parameters. Its
    /// show-probability orders products exactly like the logging policy.
    pub fn as_policy(&self) -> PolicyParams<T> {
        let mut p = self.params.clone();
        match p.kind() {
            crate::policy::ScorerKind::Linear => {
                for v in p.values_mut() {
                    *v = *v / self.temperature;
                }
            }
            crate::policy::ScorerKind::Mlp => {
                for v in p.output_weight_mut() {
                    *v = *v / self.temperature;
                }
                for v in p.output_bias_mut() {
                    *v = *v / self.temperature;
                }
            }
        }
        p
    }
}

/// A query-product pair of the world.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldPair<T> {
    pub query_id: String,
    pub product_id: String,
    pub context: FeatureVector<T>,
    /// Click probability when the user examines the product.
    pub relevance: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld<T> {
    pub config: SimConfig,
    pub seed: u64,
    /// Sorted by query, then product.
    pub pairs: Vec<WorldPair<T>>,
    pub deep_browse_prob: T,
    /// Linear scorer whose show-probability is the relevance.
    pub hidden_truth: PolicyParams<T>,
    pub logging: LoggingPolicy<T>,
}

fn query_id(i: usize) -> String {
    format!("q{i:04}")
}

fn product_id(i: usize) -> String {
    format!("p{i:04}")
}

/// Draws a world: contexts, hidden relevance scorer, and logging policy.
pub fn generate_world<T: Scalar>(config: &SimConfig, seed: u64) -> Result<SyntheticWorld<T>> {
    config.validate()?;
    let d = config.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weight_dist =
        Normal::new(0.0, config.relevance_scale / (d as f64).sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
    let theta: Vec<f64> = (0..d).map(|_| weight_dist.sample(&mut rng)).collect();

    let mut truth = vec![0.0; d];
    truth.extend_from_slice(&theta);
    let hidden_truth = PolicyParams::linear(
        truth.into_iter().map(T::of).collect(),
        [T::zero(), T::of(config.relevance_bias)],
    )?;

    let noise_dist = Normal::new(0.0, config.logging_noise * config.relevance_scale / (d as f64).sqrt())
        .map_err(|e| Error::invalid(e.to_string()))?;
    let mut logging_weight = vec![0.0; d];
    logging_weight.extend(theta.iter().map(|&t| t + noise_dist.sample(&mut rng)));
    let logging_params = PolicyParams::linear(
        logging_weight.into_iter().map(T::of).collect(),
        [T::zero(), T::of(config.relevance_bias + config.logging_offset)],
    )?;
    let logging = LoggingPolicy::new(logging_params, T::of(config.logging_temperature))?;

    let mut pairs = Vec::with_capacity(config.n_queries * config.products_per_query);
    let lo = T::epsilon();
    let hi = T::one() - T::epsilon();
    for q in 0..config.n_queries {
        for p in 0..config.products_per_query {
            let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let context = FeatureVector::from_f64(&x)?;
            let relevance = action_probabilities(&hidden_truth, &context)?.show.max(lo).min(hi);
            pairs.push(WorldPair {
                query_id: query_id(q),
                product_id: product_id(p),
                context,
                relevance,
            });
        }
    }
    Ok(SyntheticWorld {
        config: config.clone(),
        seed,
        pairs,
        deep_browse_prob: T::of(config.deep_browse_prob),
        hidden_truth,
        logging,
    })
}

impl<T: Scalar> SyntheticWorld<T> {
    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn query_ids(&self) -> BTreeSet<String> {
        self.pairs.iter().map(|p| p.query_id.clone()).collect()
    }

    pub fn contexts(&self) -> ContextTable<T> {
        let mut table = ContextTable::default();
        for p in &self.pairs {
            table.insert(p.query_id.clone(), p.product_id.clone(), p.context.clone());
        }
        table
    }

    /// Simulated aggregated feedback: each pair is shown a uniform number of
    /// times in `[visibility_min, visibility_max]` and clicked with its
    /// relevance on each impression.
    pub fn simulate_feedback(&self, seed: u64) -> Result<FeedbackCounts> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = FeedbackCounts::default();
        for pair in &self.pairs {
            let visibility = rng.random_range(self.config.visibility_min..=self.config.visibility_max);
            let clicks = Binomial::new(visibility, pair.relevance.as_f64())
                .map_err(|e| Error::Numeric(e.to_string()))?
                .sample(&mut rng);
            counts.add(&pair.query_id, &pair.product_id, visibility, clicks);
        }
        Ok(counts)
    }

    /// Writes `query_id product_id relevance f0 .. f{d-1}` rows.
    pub fn write_contexts<W: Write>(&self, mut sink: W) -> Result<usize> {
        let mut header = vec!["query_id".to_string(), "product_id".into(), "relevance".into()];
        header.extend((0..self.feature_dim()).map(|i| format!("f{i}")));
        writeln!(sink, "{}", header.join("\t"))?;
        for p in &self.pairs {
            write!(sink, "{}\t{}\t{}", p.query_id, p.product_id, p.relevance.as_f64())?;
            for v in p.context.values() {
                write!(sink, "\t{}", v.as_f64())?;
            }
            writeln!(sink)?;
        }
        sink.flush()?;
        Ok(self.pairs.len())
    }
}

fn sample_interaction<T: Scalar>(
    pair: &WorldPair<T>,
    policy: &LoggingPolicy<T>,
    deep_browse_prob: f64,
    rng: &mut ChaCha8Rng,
) -> Result<BanditRecord<T>> {
    let dist = policy.probabilities(&pair.context)?;
    let u_action: f64 = rng.random();
    let u_click: f64 = rng.random();
    let u_browse: f64 = rng.random();
    let action = if u_action < dist.show.as_f64() {
        Action::Show
    } else {
        Action::Hide
    };
    let clicked = u_click < pair.relevance.as_f64();
    let loss = match action {
        Action::Show => !clicked,
        Action::Hide => u_browse < deep_browse_prob && clicked,
    };
    BanditRecord::new(
        pair.query_id.clone(),
        pair.product_id.clone(),
        pair.context.clone(),
        action,
        dist.prob(action),
        loss,
    )
}

/// Logs `n_interactions` interactions on pairs drawn uniformly from the world.
pub fn simulate_log<T: Scalar>(
    world: &SyntheticWorld<T>,
    policy: &LoggingPolicy<T>,
    n_interactions: usize,
    seed: u64,
) -> Result<BanditLog<T>> {
    simulate_log_on(world, policy, None, n_interactions, seed)
}

/// Like [`simulate_log`], restricted to pairs of `queries` when given.
pub fn simulate_log_on<T: Scalar>(
    world: &SyntheticWorld<T>,
    policy: &LoggingPolicy<T>,
    queries: Option<&BTreeSet<String>>,
    n_interactions: usize,
    seed: u64,
) -> Result<BanditLog<T>> {
    if n_interactions < 1 {
        return Err(Error::invalid("n_interactions must be at least 1"));
    }
    if policy.params.feature_dim() != world.feature_dim() {
        return Err(Error::dimension(world.feature_dim(), policy.params.feature_dim()));
    }
    let eligible: Vec<&WorldPair<T>> = world
        .pairs
        .iter()
        .filter(|p| queries.is_none_or(|qs| qs.contains(&p.query_id)))
        .collect();
    if eligible.is_empty() {
        return Err(Error::invalid("no world pairs match the requested queries"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = world.deep_browse_prob.as_f64();
    let records = (0..n_interactions)
        .map(|_| {
            let pair = eligible[rng.random_range(0..eligible.len())];
            sample_interaction(pair, policy, beta, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut metadata = BTreeMap::new();
    metadata.insert("source".to_string(), "simulator".to_string());
    metadata.insert("world_seed".to_string(), world.seed.to_string());
    metadata.insert("log_seed".to_string(), seed.to_string());
    BanditLog::new(records, world.feature_dim(), metadata)
}

fn risk_with<T, F>(world: &SyntheticWorld<T>, probabilities: F) -> Result<T>
where
    T: Scalar,
    F: Fn(&FeatureVector<T>) -> Result<ActionDistribution<T>>,
{
    if world.pairs.is_empty() {
        return Err(Error::invalid("world has no pairs"));
    }
    let beta = world.deep_browse_prob;
    let terms = world
        .pairs
        .iter()
        .map(|pair| {
            let dist = probabilities(&pair.context)?;
            let r = pair.relevance;
            Ok(dist.show * (T::one() - r) + dist.hide * beta * r)
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(pairwise_sum(&terms) / T::of(terms.len() as f64))
}

/// Exact expected loss of `params` over every pair of the world.
pub fn true_risk<T: Scalar>(world: &SyntheticWorld<T>, params: &PolicyParams<T>) -> Result<T> {
    if params.feature_dim() != world.feature_dim() {
        return Err(Error::dimension(world.feature_dim(), params.feature_dim()));
    }
    risk_with(world, |x| action_probabilities(params, x))
}

/// Exact expected loss of the logging policy, including its probability floor.
pub fn logging_true_risk<T: Scalar>(world: &SyntheticWorld<T>, policy: &LoggingPolicy<T>) -> Result<T> {
    risk_with(world, |x| policy.probabilities(x))
}

/// A world together with everything derived from it for an experiment.
#[derive(Debug, Clone)]
pub struct SimulatedDataset<T> {
    pub world: SyntheticWorld<T>,
    pub split: QuerySplit,
    /// Bandit log over training queries only.
    pub log: BanditLog<T>,
    pub feedback: FeedbackCounts,
    pub relevance: RelevanceTable<T>,
    /// Positives plus sampled negatives of the training queries.
    pub train: Vec<SupervisedRecord<T>>,
    /// Every graded pair of the dev queries.
    pub dev: Vec<SupervisedRecord<T>>,
    pub test: Vec<SupervisedRecord<T>>,
}

/// Generates a world and the full experiment data from a single seed.
pub fn build_dataset<T: Scalar>(config: &SimConfig, seed: u64) -> Result<SimulatedDataset<T>> {
    let world = generate_world::<T>(config, seed)?;
    let split = split_queries(world.query_ids(), config.split, seed.wrapping_add(1))?;
    let log = simulate_log_on(
        &world,
        &world.logging,
        Some(&split.train),
        config.n_interactions,
        seed.wrapping_add(2),
    )?;
    let feedback = world.simulate_feedback(seed.wrapping_add(3))?;
    feedback.check_consistency()?;
    let relevance = RelevanceTable::from_counts(&feedback.clone().filter_visibility(config.visibility_threshold))?;
    let contexts = world.contexts();

    let mut shown: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (q, p, _) in feedback.iter() {
        shown.entry(q.to_string()).or_default().insert(p.to_string());
    }
    let train = build_supervised(
        &relevance.restrict_to(&split.train),
        &shown,
        &contexts,
        config.negative_ratio,
        seed.wrapping_add(4),
    )?
    .records;
    let dev = label_all(&relevance, &contexts, &split.dev);
    let test = label_all(&relevance, &contexts, &split.test);
    Ok(SimulatedDataset {
        world,
        split,
        log,
        feedback,
        relevance,
        train,
        dev,
        test,
    })
}
