//! Minibatch training of ranking policies.
//!
//! Counterfactual training minimizes an importance-weighted objective over a
//! bandit log (the Lagrangian surrogate by default); the full-information
//! baseline minimizes a grade-weighted cross-entropy over labelled pairs. Both
//! share one loop: seeded shuffling per epoch, Adam updates, periodic
//! checkpoints scored on a dev set, and best-checkpoint selection.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    empirical_average, empirical_average_gradient, group_losses, ips, lagrangian_gradient, lagrangian_risk,
    snips_denominator, LossGroup,
};
use crate::evaluation::{evaluate_policy, MetricsReport, DEFAULT_KS};
use crate::log_data::{BanditLog, BanditRecord, SupervisedRecord};
use crate::policy::{ActionDistribution, PolicyParams};
use crate::scalar::{pairwise_sum, Scalar};

/// Dev-set metric used for model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DevMetric {
    #[default]
    #[serde(rename = "MAP")]
    Map,
    #[serde(rename = "NDCG@10")]
    Ndcg10,
}

impl DevMetric {
    pub fn of(self, report: &MetricsReport) -> f64 {
        match self {
            DevMetric::Map => report.map,
            DevMetric::Ndcg10 => report.ndcg(10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Lagrange multiplier for counterfactual training, in `[0, 1]`.
    pub lambda: f64,
    /// Records (or groups) processed between checkpoints.
    pub eval_every: usize,
    pub dev_metric: DevMetric,
    /// Upper bound on lambda-search probes.
    pub max_probes: usize,
    /// Cross-entropy training treats `label > positive_label_threshold` as positive.
    pub positive_label_threshold: u8,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            epochs: 10,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            lambda: 0.5,
            eval_every: 10_000,
            dev_metric: DevMetric::Map,
            max_probes: 10,
            positive_label_threshold: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::invalid("adam_eps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid("lambda must lie in [0, 1]"));
        }
        if self.eval_every < 1 {
            return Err(Error::invalid("eval_every must be at least 1"));
        }
        if self.positive_label_threshold > 3 {
            return Err(Error::invalid("positive_label_threshold must be below 4"));
        }
        Ok(())
    }
}

/// First and second moment estimates of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(num_params: usize) -> Self {
        AdamState {
            first_moment: vec![T::zero(); num_params],
            second_moment: vec![T::zero(); num_params],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Scalar>(
    params: &mut PolicyParams<T>,
    grads: &PolicyParams<T>,
    state: &mut AdamState<T>,
    config: &TrainConfig,
) -> Result<()> {
    if !params.same_shape(grads)
        || state.first_moment.len() != params.len()
        || state.second_moment.len() != params.len()
    {
        return Err(Error::dimension(params.len(), grads.len()));
    }
    state.step += 1;
    let b1 = T::of(config.adam_beta1);
    let b2 = T::of(config.adam_beta2);
    let lr = T::of(config.learning_rate);
    let eps = T::of(config.adam_eps);
    let one = T::one();
    let t = state.step as i32;
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    for (((p, &g), m), v) in params
        .values_mut()
        .iter_mut()
        .zip(grads.values())
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub records_seen: usize,
    pub dev_metrics: MetricsReport,
    /// Mean importance weight on the training log; absent for supervised training.
    pub s: Option<T>,
    pub objective: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory<T> {
    pub checkpoints: Vec<Checkpoint<T>>,
    /// Index of the checkpoint whose parameters were returned.
    pub best_index: usize,
    pub optimizer_steps: u64,
}

impl<T: Scalar> TrainHistory<T> {
    pub fn best(&self) -> &Checkpoint<T> {
        &self.checkpoints[self.best_index]
    }

    /// TSV with columns `records_seen objective S MAP NDCG@10`.
    pub fn write_tsv<W: Write>(&self, mut sink: W) -> Result<usize> {
        writeln!(sink, "records_seen\tobjective\tS\tMAP\tNDCG@10")?;
        for c in &self.checkpoints {
            let s = c.s.map(|v| v.as_f64().to_string()).unwrap_or_else(|| "NA".into());
            writeln!(
                sink,
                "{}\t{}\t{}\t{}\t{}",
                c.records_seen,
                c.objective.as_f64(),
                s,
                c.dev_metrics.map,
                c.dev_metrics.ndcg(10)
            )?;
        }
        sink.flush()?;
        Ok(self.checkpoints.len())
    }
}

/// Parameters selected on the dev set, plus the last iterate.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub best: PolicyParams<T>,
    pub last: PolicyParams<T>,
    pub history: TrainHistory<T>,
}

/// Counterfactual objective to minimize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CrmObjective {
    /// `mean((delta - lambda) * w)`, the SNIPS surrogate at a fixed denominator.
    Lagrangian { lambda: f64 },
    /// `mean(delta * w)`.
    Ips,
    /// Empirical-average loss over (query, product, action) groups.
    EmpiricalAverage,
}

fn run_training<T, U, G, E>(
    mut units: Vec<U>,
    dev: &[SupervisedRecord<T>],
    params0: &PolicyParams<T>,
    config: &TrainConfig,
    gradient: G,
    evaluate: E,
) -> Result<TrainOutcome<T>>
where
    T: Scalar,
    G: Fn(&[U], &PolicyParams<T>) -> Result<PolicyParams<T>>,
    E: Fn(&PolicyParams<T>) -> Result<(T, Option<T>)>,
{
    config.validate()?;
    if units.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if dev.is_empty() {
        return Err(Error::invalid("dev set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = params0.clone();
    let mut state = AdamState::new(params.len());
    let mut checkpoints = Vec::new();
    let mut best = (0usize, f64::NEG_INFINITY, params.clone());

    let mut checkpoint =
        |params: &PolicyParams<T>, records_seen: usize, checkpoints: &mut Vec<Checkpoint<T>>| -> Result<()> {
            let dev_metrics = evaluate_policy(params, dev, &DEFAULT_KS)?;
            let (objective, s) = evaluate(params)?;
            let score = config.dev_metric.of(&dev_metrics);
            if score > best.1 {
                best = (checkpoints.len(), score, params.clone());
            }
            checkpoints.push(Checkpoint {
                records_seen,
                dev_metrics,
                s,
                objective,
            });
            Ok(())
        };

    checkpoint(&params, 0, &mut checkpoints)?;
    let mut records_seen = 0usize;
    let mut next_eval = config.eval_every;
    for _ in 0..config.epochs {
        units.shuffle(&mut rng);
        for batch in units.chunks(config.batch_size) {
            let grad = gradient(batch, &params)?;
            adam_step(&mut params, &grad, &mut state, config)?;
            if !params.is_finite() {
                return Err(Error::Numeric(format!(
                    "parameters diverged after {} steps",
                    state.step
                )));
            }
            records_seen += batch.len();
            if records_seen >= next_eval {
                checkpoint(&params, records_seen, &mut checkpoints)?;
                while next_eval <= records_seen {
                    next_eval += config.eval_every;
                }
            }
        }
    }
    if checkpoints.last().map(|c| c.records_seen) != Some(records_seen) {
        checkpoint(&params, records_seen, &mut checkpoints)?;
    }

    Ok(TrainOutcome {
        best: best.2,
        last: params,
        history: TrainHistory {
            checkpoints,
            best_index: best.0,
            optimizer_steps: state.step,
        },
    })
}

/// Counterfactual training with any of the supported objectives.
pub fn train_counterfactual<T: Scalar>(
    train_log: &BanditLog<T>,
    dev: &[SupervisedRecord<T>],
    params0: &PolicyParams<T>,
    config: &TrainConfig,
    objective: CrmObjective,
) -> Result<TrainOutcome<T>> {
    if train_log.is_empty() {
        return Err(Error::invalid("training log is empty"));
    }
    let s_of = |p: &PolicyParams<T>| snips_denominator(train_log, p);
    match objective {
        CrmObjective::Lagrangian { lambda } => {
            let lambda_t = T::of(lambda);
            run_training(
                train_log.records().to_vec(),
                dev,
                params0,
                &TrainConfig {
                    lambda,
                    ..config.clone()
                },
                |batch: &[BanditRecord<T>], p| lagrangian_gradient(batch, p, lambda_t),
                |p| Ok((lagrangian_risk(train_log, p, lambda_t)?, Some(s_of(p)?))),
            )
        }
        CrmObjective::Ips => run_training(
            train_log.records().to_vec(),
            dev,
            params0,
            config,
            |batch: &[BanditRecord<T>], p| lagrangian_gradient(batch, p, T::zero()),
            |p| Ok((ips(train_log, p)?.estimate, Some(s_of(p)?))),
        ),
        CrmObjective::EmpiricalAverage => run_training(
            group_losses(train_log.records()),
            dev,
            params0,
            config,
            |batch: &[LossGroup<T>], p| empirical_average_gradient(batch, p),
            |p| Ok((empirical_average(train_log, p)?.estimate, Some(s_of(p)?))),
        ),
    }
}

/// Minimizes the Lagrangian surrogate at `config.lambda`; returns the
/// dev-best checkpoint.
pub fn train_crm<T: Scalar>(
    train_log: &BanditLog<T>,
    dev: &[SupervisedRecord<T>],
    params0: &PolicyParams<T>,
    config: &TrainConfig,
) -> Result<(PolicyParams<T>, TrainHistory<T>)> {
    let out = train_counterfactual(
        train_log,
        dev,
        params0,
        config,
        CrmObjective::Lagrangian { lambda: config.lambda },
    )?;
    Ok((out.best, out.history))
}

/// `lambda * 0.9` when `s > 1`, else `lambda * 1.1`.
pub fn next_lambda(lambda: f64, s: f64) -> f64 {
    if s > 1.0 {
        lambda * 0.9
    } else {
        lambda * 1.1
    }
}

/// Denominator band in which the lambda probe stops early.
pub const S_STOP_BAND: (f64, f64) = (0.95, 1.05);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaProbe<T> {
    pub lambda: f64,
    pub s: T,
}

/// Outcome of fully training at one lambda.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint<T> {
    pub lambda: f64,
    /// S of the final iterate on the training log.
    pub s: T,
    /// S of the dev-selected checkpoint.
    pub selected_s: T,
    pub dev_metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct LambdaSearch<T> {
    pub lambda_star: f64,
    pub params: PolicyParams<T>,
    pub history: TrainHistory<T>,
    pub probes: Vec<LambdaProbe<T>>,
    pub sweep: Vec<SweepPoint<T>>,
}

/// Fully trains at every lambda in `lambdas` from the same start.
pub fn lambda_grid<T: Scalar>(
    train_log: &BanditLog<T>,
    dev: &[SupervisedRecord<T>],
    params0: &PolicyParams<T>,
    config: &TrainConfig,
    lambdas: &[f64],
) -> Result<Vec<(SweepPoint<T>, TrainOutcome<T>)>> {
    lambdas
        .iter()
        .map(|&lambda| {
            let out = train_counterfactual(train_log, dev, params0, config, CrmObjective::Lagrangian { lambda })?;
            let best = out.history.best();
            let point = SweepPoint {
                lambda,
                s: snips_denominator(train_log, &out.last)?,
                selected_s: best.s.expect("counterfactual checkpoints carry S"),
                dev_metrics: best.dev_metrics.clone(),
            };
            Ok((point, out))
        })
        .collect()
}

/// Denominator-guided lambda search.
///
/// Starting from a seeded random lambda, each probe trains `probe_epochs`
/// epochs and measures S of the result: above 1 shrinks lambda by 10%,
/// otherwise it grows by 10%. Probing stops inside [`S_STOP_BAND`], after
/// `config.max_probes` probes, or when the next lambda would leave `[0, 1]`.
/// Every probed lambda is then trained for `config.epochs` and the one with
/// the best dev metric wins.
pub fn lambda_search<T: Scalar>(
    train_log: &BanditLog<T>,
    dev: &[SupervisedRecord<T>],
    params0: &PolicyParams<T>,
    config: &TrainConfig,
    probe_epochs: usize,
) -> Result<LambdaSearch<T>> {
    config.validate()?;
    if probe_epochs < 1 {
        return Err(Error::invalid("probe_epochs must be at least 1"));
    }
    if config.max_probes < 1 {
        return Err(Error::invalid("max_probes must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6c61_6d62_6461);
    let mut lambda: f64 = rng.random_range(0.0..=1.0);
    let probe_config = TrainConfig {
        epochs: probe_epochs,
        ..config.clone()
    };

    let mut probes = Vec::new();
    for _ in 0..config.max_probes {
        let out = train_counterfactual(
            train_log,
            dev,
            params0,
            &probe_config,
            CrmObjective::Lagrangian { lambda },
        )?;
        let s = snips_denominator(train_log, &out.last)?;
        probes.push(LambdaProbe { lambda, s });
        let s64 = s.as_f64();
        if (S_STOP_BAND.0..=S_STOP_BAND.1).contains(&s64) {
            break;
        }
        let next = next_lambda(lambda, s64);
        if next > 1.0 {
            break;
        }
        lambda = next;
    }

    let lambdas: Vec<f64> = probes.iter().map(|p| p.lambda).collect();
    let results = lambda_grid(train_log, dev, params0, config, &lambdas)?;
    let mut best_idx = 0;
    for (i, (point, _)) in results.iter().enumerate() {
        if config.dev_metric.of(&point.dev_metrics) > config.dev_metric.of(&results[best_idx].0.dev_metrics) {
            best_idx = i;
        }
    }
    let sweep: Vec<SweepPoint<T>> = results.iter().map(|(p, _)| p.clone()).collect();
    let (point, outcome) = results.into_iter().nth(best_idx).expect("at least one probe");
    Ok(LambdaSearch {
        lambda_star: point.lambda,
        params: outcome.best,
        history: outcome.history,
        probes,
        sweep,
    })
}

/// Per-record weight of the cross-entropy baseline: `(1 + label) / 5`.
pub fn grade_weight<T: Scalar>(label: u8) -> T {
    T::of((1.0 + label as f64) / 5.0)
}

fn binarize(label: u8, threshold: u8) -> usize {
    usize::from(label > threshold)
}

/// Mean grade-weighted binary cross-entropy of `pi(show | c)` against the
/// binarized labels.
pub fn cross_entropy<T: Scalar>(records: &[SupervisedRecord<T>], params: &PolicyParams<T>, threshold: u8) -> Result<T> {
    if records.is_empty() {
        return Err(Error::invalid("cross-entropy over an empty set"));
    }
    let terms = records
        .iter()
        .map(|r| {
            let dist = crate::policy::action_probabilities(params, &r.context)?;
            let p = if binarize(r.label, threshold) == 1 {
                dist.show
            } else {
                dist.hide
            };
            Ok(-grade_weight::<T>(r.label) * p.ln())
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(pairwise_sum(&terms) / T::of(records.len() as f64))
}

/// Gradient of [`cross_entropy`] over a batch.
pub fn cross_entropy_gradient<T: Scalar>(
    batch: &[SupervisedRecord<T>],
    params: &PolicyParams<T>,
    threshold: u8,
) -> Result<PolicyParams<T>> {
    if batch.is_empty() {
        return Err(Error::invalid("gradient needs a non-empty batch"));
    }
    let mut grad = params.zeros_like();
    let scale = T::one() / T::of(batch.len() as f64);
    for r in batch {
        if r.context.dim() != params.feature_dim() {
            return Err(Error::dimension(params.feature_dim(), r.context.dim()));
        }
        let x = r.context.values();
        let fwd = params.forward(x);
        let dist = ActionDistribution::from_logits(fwd.logits)?;
        let target = binarize(r.label, threshold);
        let mut g = [dist.hide, dist.show];
        g[target] = g[target] - T::one();
        params.backprop_logits(x, &fwd, g, grade_weight::<T>(r.label) * scale, grad.values_mut());
    }
    Ok(grad)
}

/// Full-information baseline: cross-entropy on graded labels.
pub fn train_full_info<T: Scalar>(
    train: &[SupervisedRecord<T>],
    dev: &[SupervisedRecord<T>],
    params0: &PolicyParams<T>,
    config: &TrainConfig,
) -> Result<(PolicyParams<T>, TrainHistory<T>)> {
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    for r in train {
        r.validate()?;
    }
    let threshold = config.positive_label_threshold;
    if train.iter().all(|r| r.label <= threshold) {
        return Err(Error::Degenerate("no positive labels to learn from".into()));
    }
    let out = run_training(
        train.to_vec(),
        dev,
        params0,
        config,
        |batch: &[SupervisedRecord<T>], p| cross_entropy_gradient(batch, p, threshold),
        |p| Ok((cross_entropy(train, p, threshold)?, None)),
    )?;
    Ok((out.best, out.history))
}
