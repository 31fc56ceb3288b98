//! Pluggable 4-class probabilistic classifier.
//!
//! The reference backend is multinomial logistic regression over feature
//! vectors, fit by full-batch gradient ascent on the L2-regularized mean
//! log-likelihood. It is convex, deterministic, monotone at the default
//! step size, and cheap to gradient-check, which makes the surrounding EM
//! machinery testable. A deep backbone would plug in by supplying its own
//! [`crate::features::FeatureExtractor`] and training a model over those
//! features through the same interface.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureVector};
use crate::sample::PatchLabel;
use crate::scalar::{real, real_of_usize, Real};
use crate::tiling::Patch;
use crate::CLASS_COUNT;

pub const REFERENCE_BACKEND: &str = "reference-logistic";

/// Class posterior for one patch: four nonnegative values summing to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
#[serde(bound = "")]
pub struct ProbabilityMap<S: Real>(pub [S; CLASS_COUNT]);

impl<S: Real> ProbabilityMap<S> {
    pub fn get(&self, label: PatchLabel) -> S {
        self.0[label.ordinal()]
    }

    /// Most probable class; ties resolve to the lower ordinal.
    pub fn argmax(&self) -> PatchLabel {
        let mut best = 0;
        for c in 1..CLASS_COUNT {
            if self.0[c] > self.0[best] {
                best = c;
            }
        }
        PatchLabel::from_ordinal(best).unwrap()
    }

    /// Validates nonnegativity and unit sum (tolerance 1e-9).
    pub fn validate(&self) -> Result<()> {
        let mut sum = S::zero();
        for &p in &self.0 {
            if !(p >= S::zero() && p <= S::one()) {
                return Err(Error::invalid_input("probability outside [0, 1]"));
            }
            sum += p;
        }
        if (sum - S::one()).abs() > real(1e-9) {
            return Err(Error::invalid_input("probabilities do not sum to 1"));
        }
        Ok(())
    }
}

/// Reference training configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TrainConfig<S: Real> {
    pub learning_rate: S,
    pub epochs: usize,
    pub l2: S,
    /// Carried for backends with stochastic training; the reference
    /// backend starts from zeros and never draws from it.
    pub seed: u64,
}

impl<S: Real> Default for TrainConfig<S> {
    /// Full-batch ascent on the mean objective needs depth before the
    /// minority classes of an imbalanced corpus pick up weight; the step
    /// size stays well under the curvature bound of the normalized
    /// histogram features, so every epoch still improves the objective.
    fn default() -> Self {
        Self {
            learning_rate: real(0.2),
            epochs: 12_000,
            l2: real(1e-4),
            seed: 0,
        }
    }
}

impl<S: Real> TrainConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > S::zero()) {
            return Err(Error::invalid_config("learning_rate must be > 0"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid_config("epochs must be >= 1"));
        }
        if !(self.l2 >= S::zero()) {
            return Err(Error::invalid_config("l2 must be >= 0"));
        }
        Ok(())
    }
}

/// Trained classifier parameters: a 4 x F weight matrix plus bias, tagged
/// with the backend id and the config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Model<S: Real> {
    pub version: u32,
    pub backend: String,
    pub feature_dim: usize,
    /// Row-major `CLASS_COUNT x feature_dim`.
    pub weights: Vec<S>,
    pub bias: [S; CLASS_COUNT],
    pub config: TrainConfig<S>,
}

impl<S: Real> Model<S> {
    pub fn from_parts(
        feature_dim: usize,
        weights: Vec<S>,
        bias: [S; CLASS_COUNT],
        config: TrainConfig<S>,
    ) -> Result<Self> {
        if weights.len() != CLASS_COUNT * feature_dim {
            return Err(Error::invalid_input(format!(
                "weight matrix holds {} values, expected {}",
                weights.len(),
                CLASS_COUNT * feature_dim
            )));
        }
        Ok(Self {
            version: 1,
            backend: REFERENCE_BACKEND.to_string(),
            feature_dim,
            weights,
            bias,
            config,
        })
    }

    fn scores(&self, features: &FeatureVector<S>) -> Result<[S; CLASS_COUNT]> {
        if features.dim() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                actual: features.dim(),
            });
        }
        let mut scores = self.bias;
        for (c, score) in scores.iter_mut().enumerate() {
            let row = &self.weights[c * self.feature_dim..(c + 1) * self.feature_dim];
            for (&w, &x) in row.iter().zip(&features.values) {
                *score += w * x;
            }
        }
        Ok(scores)
    }

    /// Softmax class posterior for a feature vector.
    pub fn predict_proba(&self, features: &FeatureVector<S>) -> Result<ProbabilityMap<S>> {
        let scores = self.scores(features)?;
        Ok(softmax(&scores))
    }

    /// Convenience wrapper extracting features first.
    pub fn predict_patch(
        &self,
        patch: &Patch,
        extractor: &dyn FeatureExtractor<S>,
    ) -> Result<ProbabilityMap<S>> {
        self.predict_proba(&extractor.extract(patch))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let model: Model<S> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if model.weights.len() != CLASS_COUNT * model.feature_dim {
            return Err(Error::invalid_input("model file has inconsistent dimensions"));
        }
        Ok(model)
    }
}

fn softmax<S: Real>(scores: &[S; CLASS_COUNT]) -> ProbabilityMap<S> {
    let max = scores.iter().copied().fold(S::neg_infinity(), S::max);
    let mut exps = [S::zero(); CLASS_COUNT];
    let mut total = S::zero();
    for (e, &s) in exps.iter_mut().zip(scores) {
        *e = (s - max).exp();
        total += *e;
    }
    for e in &mut exps {
        *e = *e / total;
    }
    ProbabilityMap(exps)
}

/// Objective the reference backend ascends: mean log-likelihood of the
/// labels minus `l2 * ||theta||^2` (weights and bias both regularized).
/// The mean keeps the fixed step size stable regardless of dataset size.
pub fn training_objective<S: Real>(
    model: &Model<S>,
    examples: &[(FeatureVector<S>, PatchLabel)],
) -> Result<S> {
    let (objective, _, _) = objective_and_gradient(
        model.feature_dim,
        &model.weights,
        &model.bias,
        examples,
        model.config.l2,
    )?;
    Ok(objective)
}

/// Analytic gradient of [`training_objective`] in the same layout as the
/// model parameters; exposed so it can be checked against finite
/// differences.
pub fn training_gradient<S: Real>(
    model: &Model<S>,
    examples: &[(FeatureVector<S>, PatchLabel)],
) -> Result<(Vec<S>, [S; CLASS_COUNT])> {
    let (_, grad_w, grad_b) = objective_and_gradient(
        model.feature_dim,
        &model.weights,
        &model.bias,
        examples,
        model.config.l2,
    )?;
    Ok((grad_w, grad_b))
}

fn objective_and_gradient<S: Real>(
    dim: usize,
    weights: &[S],
    bias: &[S; CLASS_COUNT],
    examples: &[(FeatureVector<S>, PatchLabel)],
    l2: S,
) -> Result<(S, Vec<S>, [S; CLASS_COUNT])> {
    if examples.is_empty() {
        return Err(Error::invalid_input("training set is empty"));
    }
    let n: S = real_of_usize(examples.len());
    let mut objective = S::zero();
    let mut grad_w = vec![S::zero(); CLASS_COUNT * dim];
    let mut grad_b = [S::zero(); CLASS_COUNT];

    for (features, label) in examples {
        if features.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: features.dim(),
            });
        }
        let mut scores = *bias;
        for (c, score) in scores.iter_mut().enumerate() {
            let row = &weights[c * dim..(c + 1) * dim];
            for (&w, &x) in row.iter().zip(&features.values) {
                *score += w * x;
            }
        }
        let max = scores.iter().copied().fold(S::neg_infinity(), S::max);
        let mut total = S::zero();
        let mut exps = [S::zero(); CLASS_COUNT];
        for (e, &s) in exps.iter_mut().zip(&scores) {
            *e = (s - max).exp();
            total += *e;
        }
        objective += scores[label.ordinal()] - max - total.ln();

        for c in 0..CLASS_COUNT {
            let p = exps[c] / total;
            let indicator = if c == label.ordinal() { S::one() } else { S::zero() };
            let coeff = indicator - p;
            grad_b[c] += coeff;
            let row = &mut grad_w[c * dim..(c + 1) * dim];
            for (g, &x) in row.iter_mut().zip(&features.values) {
                *g += coeff * x;
            }
        }
    }

    objective = objective / n;
    for g in &mut grad_w {
        *g = *g / n;
    }
    for g in &mut grad_b {
        *g = *g / n;
    }

    // L2 term over every parameter.
    let two_l2 = l2 + l2;
    let mut penalty = S::zero();
    for (g, &w) in grad_w.iter_mut().zip(weights) {
        penalty += w * w;
        *g -= two_l2 * w;
    }
    for (g, &b) in grad_b.iter_mut().zip(bias.iter()) {
        penalty += b * b;
        *g -= two_l2 * b;
    }
    objective -= l2 * penalty;

    Ok((objective, grad_w, grad_b))
}

/// Fits the reference backend: zero-initialized full-batch gradient ascent
/// for a fixed epoch count. Deterministic for fixed data and config.
pub fn train<S: Real>(
    examples: &[(FeatureVector<S>, PatchLabel)],
    config: &TrainConfig<S>,
) -> Result<Model<S>> {
    train_traced(examples, config).map(|(model, _)| model)
}

/// Like [`train`], also returning the objective value at every epoch plus
/// the final parameters (length `epochs + 1`).
pub fn train_traced<S: Real>(
    examples: &[(FeatureVector<S>, PatchLabel)],
    config: &TrainConfig<S>,
) -> Result<(Model<S>, Vec<S>)> {
    config.validate()?;
    let dim = match examples.first() {
        Some((features, _)) => features.dim(),
        None => return Err(Error::invalid_input("training set is empty")),
    };
    let mut weights = vec![S::zero(); CLASS_COUNT * dim];
    let mut bias = [S::zero(); CLASS_COUNT];
    let mut trace = Vec::with_capacity(config.epochs + 1);

    for _ in 0..config.epochs {
        let (objective, grad_w, grad_b) =
            objective_and_gradient(dim, &weights, &bias, examples, config.l2)?;
        trace.push(objective);
        for (w, g) in weights.iter_mut().zip(&grad_w) {
            *w += config.learning_rate * *g;
        }
        for (b, g) in bias.iter_mut().zip(&grad_b) {
            *b += config.learning_rate * *g;
        }
    }
    let (final_objective, _, _) =
        objective_and_gradient(dim, &weights, &bias, examples, config.l2)?;
    trace.push(final_objective);

    let model = Model::from_parts(dim, weights, bias, *config)?;
    Ok((model, trace))
}

/// Patch-level wrapper over [`train`].
pub fn train_patches<S: Real>(
    dataset: &[(Patch, PatchLabel)],
    extractor: &dyn FeatureExtractor<S>,
    config: &TrainConfig<S>,
) -> Result<Model<S>> {
    let examples: Vec<(FeatureVector<S>, PatchLabel)> = dataset
        .iter()
        .map(|(patch, label)| (extractor.extract(patch), *label))
        .collect();
    train(&examples, config)
}

/// The two-sum likelihood `Q`: log-likelihood of the annotated labels plus
/// log-likelihood of the pseudo-labels, with no normalization and no
/// penalty. Empty inputs contribute zero.
pub fn log_likelihood<S: Real>(
    model: &Model<S>,
    annotated: &[(FeatureVector<S>, PatchLabel)],
    pseudo: &[(FeatureVector<S>, PatchLabel)],
) -> Result<S> {
    let mut total = S::zero();
    for (features, label) in annotated.iter().chain(pseudo) {
        let probs = model.predict_proba(features)?;
        total += probs.get(*label).ln();
    }
    Ok(total)
}
