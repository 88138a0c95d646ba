//! Counterfactual risk estimates of a policy from a bandit log.
//!
//! With importance weights `w_i = pi(a_i | c_i) / p_i`:
//!
//! * SNIPS: `sum(delta_i w_i) / sum(w_i)`
//! * IPS: `sum(delta_i w_i) / n`
//! * empirical average: `sum over (context, action) groups of mean(delta) * pi(a | c)`
//! * Lagrangian surrogate: `sum((delta_i - lambda) w_i) / n`, i.e. `IPS - lambda * S`
//!   where `S = sum(w_i) / n` is the normalized SNIPS denominator.
//!
//! Every sum over records goes through fixed-order pairwise summation.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::log_data::{Action, BanditLog, BanditRecord, FeatureVector};
use crate::policy::{prob_logit_coefficients, ActionDistribution, PolicyParams};
use crate::scalar::{pairwise_sum, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorReport<T> {
    pub estimate: T,
    pub n: usize,
    /// Mean importance weight `S`; exactly 1 when the target equals the logger.
    pub mean_importance_weight: T,
    /// `(sum w)^2 / sum(w^2)`, in `(0, n]`.
    pub effective_sample_size: T,
}

#[derive(Serialize)]
struct ReportKv {
    estimate: f64,
    n: usize,
    #[serde(rename = "S")]
    s: f64,
    #[serde(rename = "ESS")]
    ess: f64,
}

impl<T: Scalar> EstimatorReport<T> {
    /// `{"estimate":..,"n":..,"S":..,"ESS":..}`
    pub fn to_json(&self) -> String {
        serde_json::to_string(&ReportKv {
            estimate: self.estimate.as_f64(),
            n: self.n,
            s: self.mean_importance_weight.as_f64(),
            ess: self.effective_sample_size.as_f64(),
        })
        .expect("plain struct serializes")
    }
}

/// Estimator options. Weight capping is off by default and meant for
/// diagnostics; SNIPS is already bounded without it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EstimatorConfig {
    pub max_weight: Option<f64>,
}

fn non_empty<T>(records: &[BanditRecord<T>]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("estimator needs a non-empty log"));
    }
    Ok(())
}

fn check_lambda<T: Scalar>(lambda: T) -> Result<()> {
    let l = lambda.as_f64();
    if !(0.0..=1.0).contains(&l) {
        return Err(Error::invalid(format!("lambda {l} outside [0, 1]")));
    }
    Ok(())
}

/// Target-policy probability of each logged action.
pub fn target_probabilities<T: Scalar>(records: &[BanditRecord<T>], params: &PolicyParams<T>) -> Result<Vec<T>> {
    records
        .iter()
        .map(|r| Ok(crate::policy::action_probabilities(params, &r.context)?.prob(r.action)))
        .collect()
}

/// `w_i = pi(a_i | c_i) / p_i`, optionally capped.
pub fn importance_weights<T: Scalar>(
    records: &[BanditRecord<T>],
    params: &PolicyParams<T>,
    config: &EstimatorConfig,
) -> Result<Vec<T>> {
    let probs = target_probabilities(records, params)?;
    let cap = config.max_weight.map(T::of);
    Ok(records
        .iter()
        .zip(probs)
        .map(|(r, p)| {
            let w = p / r.propensity;
            match cap {
                Some(c) => w.min(c),
                None => w,
            }
        })
        .collect())
}

struct WeightSums<T> {
    n: usize,
    weight_sum: T,
    weighted_loss: T,
    ess: T,
}

fn weight_sums<T: Scalar>(records: &[BanditRecord<T>], weights: &[T]) -> WeightSums<T> {
    let weighted: Vec<T> = records.iter().zip(weights).map(|(r, &w)| r.loss_value() * w).collect();
    let squares: Vec<T> = weights.iter().map(|&w| w * w).collect();
    let weight_sum = pairwise_sum(weights);
    WeightSums {
        n: records.len(),
        weight_sum,
        weighted_loss: pairwise_sum(&weighted),
        ess: weight_sum * weight_sum / pairwise_sum(&squares),
    }
}

fn report<T: Scalar>(sums: &WeightSums<T>, estimate: T) -> EstimatorReport<T> {
    EstimatorReport {
        estimate,
        n: sums.n,
        mean_importance_weight: sums.weight_sum / T::of(sums.n as f64),
        effective_sample_size: sums.ess,
    }
}

pub fn snips<T: Scalar>(log: &BanditLog<T>, params: &PolicyParams<T>) -> Result<EstimatorReport<T>> {
    snips_with(log, params, &EstimatorConfig::default())
}

pub fn snips_with<T: Scalar>(
    log: &BanditLog<T>,
    params: &PolicyParams<T>,
    config: &EstimatorConfig,
) -> Result<EstimatorReport<T>> {
    non_empty(log.records())?;
    let weights = importance_weights(log.records(), params, config)?;
    let sums = weight_sums(log.records(), &weights);
    Ok(report(&sums, sums.weighted_loss / sums.weight_sum))
}

pub fn ips<T: Scalar>(log: &BanditLog<T>, params: &PolicyParams<T>) -> Result<EstimatorReport<T>> {
    ips_with(log, params, &EstimatorConfig::default())
}

pub fn ips_with<T: Scalar>(
    log: &BanditLog<T>,
    params: &PolicyParams<T>,
    config: &EstimatorConfig,
) -> Result<EstimatorReport<T>> {
    non_empty(log.records())?;
    let weights = importance_weights(log.records(), params, config)?;
    let sums = weight_sums(log.records(), &weights);
    Ok(report(&sums, sums.weighted_loss / T::of(sums.n as f64)))
}

/// Logged records sharing one (query, product, action) key.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGroup<T> {
    pub query_id: String,
    pub product_id: String,
    pub action: Action,
    /// Context of the first record in the group.
    pub context: FeatureVector<T>,
    pub mean_loss: T,
    pub count: usize,
}

/// Groups records by (query, product, action), sorted by that key.
pub fn group_losses<T: Scalar>(records: &[BanditRecord<T>]) -> Vec<LossGroup<T>> {
    let mut groups: BTreeMap<(&str, &str, Action), (usize, Vec<T>)> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let entry = groups
            .entry((r.query_id.as_str(), r.product_id.as_str(), r.action))
            .or_insert((i, Vec::new()));
        entry.1.push(r.loss_value());
    }
    groups
        .into_iter()
        .map(|((q, p, action), (first, losses))| LossGroup {
            query_id: q.to_string(),
            product_id: p.to_string(),
            action,
            context: records[first].context.clone(),
            mean_loss: pairwise_sum(&losses) / T::of(losses.len() as f64),
            count: losses.len(),
        })
        .collect()
}

/// Empirical-average estimate: sum over observed (context, action) groups of
/// the group's mean loss times the target probability of that action.
pub fn empirical_average<T: Scalar>(log: &BanditLog<T>, params: &PolicyParams<T>) -> Result<EstimatorReport<T>> {
    non_empty(log.records())?;
    let groups = group_losses(log.records());
    let terms = groups
        .iter()
        .map(|g| Ok(g.mean_loss * crate::policy::action_probabilities(params, &g.context)?.prob(g.action)))
        .collect::<Result<Vec<T>>>()?;
    let weights = importance_weights(log.records(), params, &EstimatorConfig::default())?;
    let sums = weight_sums(log.records(), &weights);
    Ok(report(&sums, pairwise_sum(&terms)))
}

/// Mean importance weight `S = sum(w_i) / n`.
pub fn snips_denominator<T: Scalar>(log: &BanditLog<T>, params: &PolicyParams<T>) -> Result<T> {
    non_empty(log.records())?;
    let weights = importance_weights(log.records(), params, &EstimatorConfig::default())?;
    Ok(pairwise_sum(&weights) / T::of(weights.len() as f64))
}

/// `sum((delta_i - lambda) * w_i) / n`.
pub fn lagrangian_risk<T: Scalar>(log: &BanditLog<T>, params: &PolicyParams<T>, lambda: T) -> Result<T> {
    lagrangian_risk_on(log.records(), params, lambda)
}

/// [`lagrangian_risk`] over a bare slice of records.
pub fn lagrangian_risk_on<T: Scalar>(records: &[BanditRecord<T>], params: &PolicyParams<T>, lambda: T) -> Result<T> {
    non_empty(records)?;
    check_lambda(lambda)?;
    let weights = importance_weights(records, params, &EstimatorConfig::default())?;
    let terms: Vec<T> = records
        .iter()
        .zip(&weights)
        .map(|(r, &w)| (r.loss_value() - lambda) * w)
        .collect();
    Ok(pairwise_sum(&terms) / T::of(records.len() as f64))
}

const GRAD_BLOCK: usize = 8;

/// Sums per-item gradient contributions pairwise over blocks of items.
fn pairwise_gradient<T, I, F>(items: &[I], params: &PolicyParams<T>, add: &F) -> Result<Vec<T>>
where
    T: Scalar,
    F: Fn(&I, &mut [T]) -> Result<()>,
{
    if items.len() <= GRAD_BLOCK {
        let mut out = vec![T::zero(); params.len()];
        for item in items {
            add(item, &mut out)?;
        }
        return Ok(out);
    }
    let mid = items.len() / 2;
    let mut left = pairwise_gradient(&items[..mid], params, add)?;
    let right = pairwise_gradient(&items[mid..], params, add)?;
    for (l, r) in left.iter_mut().zip(right) {
        *l = *l + r;
    }
    Ok(left)
}

fn check_batch_dims<T: Scalar>(params: &PolicyParams<T>, contexts: impl Iterator<Item = usize>) -> Result<()> {
    for (i, d) in contexts.enumerate() {
        if d != params.feature_dim() {
            return Err(Error::Dimension {
                line: Some(i + 1),
                expected: params.feature_dim(),
                found: d,
            });
        }
    }
    Ok(())
}

/// Adds `coefficient * grad pi(action | x)` into `out`.
fn add_prob_gradient<T: Scalar>(
    params: &PolicyParams<T>,
    x: &[T],
    action: Action,
    coefficient: T,
    out: &mut [T],
) -> Result<()> {
    let fwd = params.forward(x);
    let dist = ActionDistribution::from_logits(fwd.logits)?;
    params.backprop_logits(x, &fwd, prob_logit_coefficients(&dist, action), coefficient, out);
    Ok(())
}

/// `(1/m) sum((delta_i - lambda) / p_i * grad pi(a_i | c_i))` over the batch.
pub fn lagrangian_gradient<T: Scalar>(
    batch: &[BanditRecord<T>],
    params: &PolicyParams<T>,
    lambda: T,
) -> Result<PolicyParams<T>> {
    if batch.is_empty() {
        return Err(Error::invalid("gradient needs a non-empty batch"));
    }
    check_lambda(lambda)?;
    check_batch_dims(params, batch.iter().map(|r| r.context.dim()))?;
    let sum = pairwise_gradient(batch, params, &|r: &BanditRecord<T>, out: &mut [T]| {
        let coefficient = (r.loss_value() - lambda) / r.propensity;
        add_prob_gradient(params, r.context.values(), r.action, coefficient, out)
    })?;
    let m = T::of(batch.len() as f64);
    let mut grad = params.zeros_like();
    for (g, s) in grad.values_mut().iter_mut().zip(sum) {
        *g = s / m;
    }
    Ok(grad)
}

/// `(1/m) sum(mean_loss_g * grad pi(a_g | c_g))` over a batch of groups, the
/// per-group-averaged gradient of the empirical-average estimate.
pub fn empirical_average_gradient<T: Scalar>(
    groups: &[LossGroup<T>],
    params: &PolicyParams<T>,
) -> Result<PolicyParams<T>> {
    if groups.is_empty() {
        return Err(Error::invalid("gradient needs a non-empty batch"));
    }
    check_batch_dims(params, groups.iter().map(|g| g.context.dim()))?;
    let sum = pairwise_gradient(groups, params, &|g: &LossGroup<T>, out: &mut [T]| {
        add_prob_gradient(params, g.context.values(), g.action, g.mean_loss, out)
    })?;
    let m = T::of(groups.len() as f64);
    let mut grad = params.zeros_like();
    for (g, s) in grad.values_mut().iter_mut().zip(sum) {
        *g = s / m;
    }
    Ok(grad)
}
