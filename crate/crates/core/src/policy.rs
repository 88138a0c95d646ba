//! Stochastic show/hide policy: a scorer producing one logit per action,
//! followed by a two-way softmax.

use std::cmp::Ordering;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log_data::{Action, FeatureVector};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    /// `logits = W x + b` with `W` of shape 2 x d.
    Linear,
    /// `logits = V tanh(U x + c) + b` with one hidden layer.
    Mlp,
}

/// Parameters of a policy, stored as one flat row-major buffer.
///
/// Gradients use the same type and layout, which keeps optimizer code
/// shape-agnostic. Layout:
/// * linear: output weight (2 x d), output bias (2)
/// * mlp: hidden weight (h x d), hidden bias (h), output weight (2 x h),
///   output bias (2)
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams<T> {
    kind: ScorerKind,
    feature_dim: usize,
    hidden: usize,
    /// Seed the parameters were initialized from; informational only.
    pub seed: u64,
    values: Vec<T>,
}

/// Probabilities of the two actions under a policy for one context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDistribution<T> {
    pub hide: T,
    pub show: T,
}

impl<T: Scalar> ActionDistribution<T> {
    pub fn prob(&self, action: Action) -> T {
        match action {
            Action::Hide => self.hide,
            Action::Show => self.show,
        }
    }

    /// Stable softmax over `[hide_logit, show_logit]`.
    pub fn from_logits(logits: [T; 2]) -> Result<Self> {
        if !(logits[0].is_finite() && logits[1].is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite logits ({}, {})",
                logits[0], logits[1]
            )));
        }
        let max = logits[0].max(logits[1]);
        let e0 = (logits[0] - max).exp();
        let e1 = (logits[1] - max).exp();
        let total = e0 + e1;
        let tiny = T::min_positive_value();
        Ok(ActionDistribution {
            hide: (e0 / total).max(tiny),
            show: (e1 / total).max(tiny),
        })
    }
}

/// Activations cached from a forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Forward<T> {
    pub hidden: Vec<T>,
    pub logits: [T; 2],
}

impl<T: Scalar> PolicyParams<T> {
    fn layout_len(kind: ScorerKind, d: usize, h: usize) -> usize {
        match kind {
            ScorerKind::Linear => 2 * d + 2,
            ScorerKind::Mlp => h * d + h + 2 * h + 2,
        }
    }

    /// Builds parameters from a flat buffer in the documented layout.
    pub fn from_flat(kind: ScorerKind, feature_dim: usize, hidden: usize, values: Vec<T>) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be at least 1"));
        }
        let hidden = match kind {
            ScorerKind::Linear => 0,
            ScorerKind::Mlp if hidden == 0 => return Err(Error::invalid("mlp needs hidden >= 1")),
            ScorerKind::Mlp => hidden,
        };
        let expected = Self::layout_len(kind, feature_dim, hidden);
        if values.len() != expected {
            return Err(Error::dimension(expected, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("parameters must be finite".into()));
        }
        Ok(PolicyParams {
            kind,
            feature_dim,
            hidden,
            seed: 0,
            values,
        })
    }

    /// Linear scorer from a 2 x d row-major weight matrix and a bias per action.
    pub fn linear(weight: Vec<T>, bias: [T; 2]) -> Result<Self> {
        if !weight.len().is_multiple_of(2) {
            return Err(Error::invalid("linear weight must have 2 rows"));
        }
        let d = weight.len() / 2;
        let mut values = weight;
        values.extend_from_slice(&bias);
        Self::from_flat(ScorerKind::Linear, d, 0, values)
    }

    /// All-zero parameters of the given shape.
    pub fn zeros(kind: ScorerKind, feature_dim: usize, hidden: usize) -> Result<Self> {
        let h = if kind == ScorerKind::Linear { 0 } else { hidden };
        let n = Self::layout_len(kind, feature_dim, h);
        Self::from_flat(kind, feature_dim, hidden, vec![T::zero(); n])
    }

    pub fn zeros_like(&self) -> Self {
        PolicyParams {
            values: vec![T::zero(); self.values.len()],
            ..self.clone()
        }
    }

    pub fn kind(&self) -> ScorerKind {
        self.kind
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.kind == other.kind && self.feature_dim == other.feature_dim && self.hidden == other.hidden
    }

    fn hidden_len(&self) -> usize {
        self.hidden * self.feature_dim + self.hidden
    }

    /// Rows of the output layer, 2 x (d or h).
    pub fn output_weight(&self) -> &[T] {
        let start = self.hidden_len();
        &self.values[start..self.values.len() - 2]
    }

    pub fn output_weight_mut(&mut self) -> &mut [T] {
        let start = self.hidden_len();
        let end = self.values.len() - 2;
        &mut self.values[start..end]
    }

    pub fn output_bias(&self) -> &[T] {
        &self.values[self.values.len() - 2..]
    }

    pub fn output_bias_mut(&mut self) -> &mut [T] {
        let n = self.values.len();
        &mut self.values[n - 2..]
    }

    /// Hidden layer weight (h x d); empty for linear scorers.
    pub fn hidden_weight(&self) -> &[T] {
        &self.values[..self.hidden * self.feature_dim]
    }

    pub fn hidden_bias(&self) -> &[T] {
        &self.values[self.hidden * self.feature_dim..self.hidden_len()]
    }

    fn check_dim(&self, x: &FeatureVector<T>) -> Result<()> {
        if x.dim() != self.feature_dim {
            return Err(Error::dimension(self.feature_dim, x.dim()));
        }
        Ok(())
    }

    pub(crate) fn forward(&self, x: &[T]) -> Forward<T> {
        let d = self.feature_dim;
        let hidden: Vec<T> = match self.kind {
            ScorerKind::Linear => Vec::new(),
            ScorerKind::Mlp => {
                let w = self.hidden_weight();
                let b = self.hidden_bias();
                (0..self.hidden)
                    .map(|j| (dot(&w[j * d..(j + 1) * d], x) + b[j]).tanh())
                    .collect()
            }
        };
        let input = match self.kind {
            ScorerKind::Linear => x,
            ScorerKind::Mlp => &hidden[..],
        };
        let width = input.len();
        let w = self.output_weight();
        let b = self.output_bias();
        let logits = [dot(&w[..width], input) + b[0], dot(&w[width..2 * width], input) + b[1]];
        Forward { hidden, logits }
    }

    /// Adds `scale * d(g . logits)/d(params)` into `out`, where `g` holds one
    /// coefficient per logit.
    pub(crate) fn backprop_logits(&self, x: &[T], fwd: &Forward<T>, g: [T; 2], scale: T, out: &mut [T]) {
        let d = self.feature_dim;
        let g = [g[0] * scale, g[1] * scale];
        match self.kind {
            ScorerKind::Linear => {
                for (a, ga) in g.iter().enumerate() {
                    for (o, &xi) in out[a * d..(a + 1) * d].iter_mut().zip(x) {
                        *o = *o + *ga * xi;
                    }
                }
                let n = out.len();
                out[n - 2] = out[n - 2] + g[0];
                out[n - 1] = out[n - 1] + g[1];
            }
            ScorerKind::Mlp => {
                let h = self.hidden;
                let hw_len = h * d;
                let ow_start = hw_len + h;
                let ow = self.output_weight();
                for (a, ga) in g.iter().enumerate() {
                    let row = &mut out[ow_start + a * h..ow_start + (a + 1) * h];
                    for (o, &hj) in row.iter_mut().zip(&fwd.hidden) {
                        *o = *o + *ga * hj;
                    }
                }
                let n = out.len();
                out[n - 2] = out[n - 2] + g[0];
                out[n - 1] = out[n - 1] + g[1];
                for j in 0..h {
                    let upstream = ow[j] * g[0] + ow[h + j] * g[1];
                    let dz = upstream * (T::one() - fwd.hidden[j] * fwd.hidden[j]);
                    for (o, &xi) in out[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *o = *o + dz * xi;
                    }
                    out[hw_len + j] = out[hw_len + j] + dz;
                }
            }
        }
    }

    /// The two action logits for a context.
    pub fn logits(&self, context: &FeatureVector<T>) -> Result<[T; 2]> {
        self.check_dim(context)?;
        Ok(self.forward(context.values()).logits)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Fresh parameters: weights drawn from N(0, 1/fan_in), biases zero.
pub fn init_params<T: Scalar>(
    kind: ScorerKind,
    feature_dim: usize,
    hidden: usize,
    seed: u64,
) -> Result<PolicyParams<T>> {
    let mut params = PolicyParams::zeros(kind, feature_dim, hidden)?;
    params.seed = seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |fan_in: usize| Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
    let d = feature_dim;
    match kind {
        ScorerKind::Linear => {
            let dist = normal(d);
            for v in &mut params.values[..2 * d] {
                *v = T::of(dist.sample(&mut rng));
            }
        }
        ScorerKind::Mlp => {
            let h = params.hidden;
            let hidden_dist = normal(d);
            for v in &mut params.values[..h * d] {
                *v = T::of(hidden_dist.sample(&mut rng));
            }
            let out_dist = normal(h);
            let start = h * d + h;
            for v in &mut params.values[start..start + 2 * h] {
                *v = T::of(out_dist.sample(&mut rng));
            }
        }
    }
    Ok(params)
}

pub fn action_probabilities<T: Scalar>(
    params: &PolicyParams<T>,
    context: &FeatureVector<T>,
) -> Result<ActionDistribution<T>> {
    ActionDistribution::from_logits(params.logits(context)?)
}

/// Orders candidates by probability of being shown, highest first; equal
/// scores fall back to ascending product id.
pub fn rank_products<T, S>(params: &PolicyParams<T>, candidates: &[(S, FeatureVector<T>)]) -> Result<Vec<(String, T)>>
where
    T: Scalar,
    S: AsRef<str>,
{
    if candidates.is_empty() {
        return Err(Error::invalid("cannot rank an empty candidate list"));
    }
    let mut scored = candidates
        .iter()
        .map(|(id, x)| Ok((id.as_ref().to_string(), action_probabilities(params, x)?.show)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(scored)
}

/// Gradient of `pi(action | context)` with respect to every parameter.
pub fn grad_action_prob<T: Scalar>(
    params: &PolicyParams<T>,
    context: &FeatureVector<T>,
    action: Action,
) -> Result<PolicyParams<T>> {
    params.check_dim(context)?;
    let x = context.values();
    let fwd = params.forward(x);
    let dist = ActionDistribution::from_logits(fwd.logits)?;
    let mut grad = params.zeros_like();
    params.backprop_logits(
        x,
        &fwd,
        prob_logit_coefficients(&dist, action),
        T::one(),
        &mut grad.values,
    );
    Ok(grad)
}

/// `d pi(a) / d logit_j = pi(a) * ([j == a] - pi(j))`.
pub(crate) fn prob_logit_coefficients<T: Scalar>(dist: &ActionDistribution<T>, action: Action) -> [T; 2] {
    let pa = dist.prob(action);
    let mut g = [-pa * dist.hide, -pa * dist.show];
    g[action.index()] = g[action.index()] + pa;
    g
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    kind: ScorerKind,
    feature_dim: usize,
    hidden: usize,
    seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    hidden_weight: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    hidden_bias: Vec<f64>,
    output_weight: Vec<f64>,
    output_bias: Vec<f64>,
}

impl<T: Scalar> PolicyParams<T> {
    /// Serializes as a single JSON object with row-major parameter arrays.
    pub fn write_json<W: Write>(&self, mut sink: W) -> Result<()> {
        let f = |s: &[T]| s.iter().map(|v| v.as_f64()).collect::<Vec<_>>();
        let file = ModelFile {
            kind: self.kind,
            feature_dim: self.feature_dim,
            hidden: self.hidden,
            seed: self.seed,
            hidden_weight: f(self.hidden_weight()),
            hidden_bias: f(self.hidden_bias()),
            output_weight: f(self.output_weight()),
            output_bias: f(self.output_bias()),
        };
        serde_json::to_writer_pretty(&mut sink, &file).map_err(std::io::Error::from)?;
        sink.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_json<R: Read>(source: R) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(source).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        let mut values = file.hidden_weight;
        values.extend(file.hidden_bias);
        values.extend(file.output_weight);
        values.extend(file.output_bias);
        let mut params = Self::from_flat(
            file.kind,
            file.feature_dim,
            file.hidden,
            values.into_iter().map(T::of).collect(),
        )?;
        params.seed = file.seed;
        Ok(params)
    }

    pub fn to_json_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_json(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }
}
