//! The EM loop: hard-example-mined initialization, pseudo-label E-step,
//! retraining M-step, and convergence tracking.
//!
//! Initialization splits the annotated set in half (seeded, stratified),
//! trains on one half, mines the hardest fifth of the other half, and
//! retrains on the union. Each E-step selects an effective set from the
//! unannotated pool by collaborative filtering; each M-step retrains from
//! scratch on annotated data plus the effective set's pseudo-labels, so
//! iterations stay comparable and deterministic. The loop stops early when
//! the effective set repeats, since retraining on the same data can only
//! reproduce the same model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{log_likelihood, train, Model, TrainConfig};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::metrics::{patch_metrics, PatchMetrics};
use crate::sample::{LabeledSample, PatchLabel, Sample};
use crate::scalar::{real, real_of_usize, Real};
use crate::selection::{collaborative_filter, hard_example_mining, EffectiveSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EmConfig<S: Real> {
    /// Fraction of the corpus whose labels are kept (the rest becomes the
    /// unannotated pool). Used by [`split_corpus`], echoed here so a run is
    /// fully described by its config.
    pub annotated_fraction: S,
    /// Cosine similarity threshold for collaborative filtering.
    pub sigma: S,
    pub max_iterations: usize,
    /// Hard-example quantile used at initialization.
    pub quantile: S,
    pub train: TrainConfig<S>,
    pub seed: u64,
}

impl<S: Real> Default for EmConfig<S> {
    fn default() -> Self {
        Self {
            annotated_fraction: real(0.3),
            sigma: real(0.9),
            max_iterations: 2,
            quantile: real(0.2),
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl<S: Real> EmConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if !(self.annotated_fraction > S::zero() && self.annotated_fraction <= S::one()) {
            return Err(Error::invalid_config("annotated_fraction must be in (0, 1]"));
        }
        if !(self.sigma > real(-1.0) && self.sigma <= S::one()) {
            return Err(Error::invalid_config("sigma must be in (-1, 1]"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid_config("max_iterations must be >= 1"));
        }
        if !(self.quantile > S::zero() && self.quantile <= S::one()) {
            return Err(Error::invalid_config("quantile must be in (0, 1]"));
        }
        self.train.validate()
    }
}

/// Bookkeeping for one completed EM iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct IterationRecord<S: Real> {
    pub iteration: usize,
    pub effective_count: usize,
    /// Two-sum likelihood of the retrained model over annotated data and
    /// the effective set.
    pub q_value: S,
    pub held_out: Option<PatchMetrics<S>>,
    /// Full selection audit; persisted separately as JSON lines.
    #[serde(skip)]
    pub effective: EffectiveSet<S>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EmHistory<S: Real> {
    /// Annotated-data likelihood of the initialized model.
    pub initial_q: S,
    pub initial_held_out: Option<PatchMetrics<S>>,
    pub iterations: Vec<IterationRecord<S>>,
}

impl<S: Real> EmHistory<S> {
    /// Held-out accuracy after the last completed iteration, falling back
    /// to the initialization metrics when no iteration ran.
    pub fn final_accuracy(&self) -> Option<S> {
        self.iterations
            .last()
            .and_then(|r| r.held_out.as_ref())
            .or(self.initial_held_out.as_ref())
            .map(|m| m.accuracy)
    }
}

fn to_examples<S: Real>(samples: &[LabeledSample<S>]) -> Vec<(FeatureVector<S>, PatchLabel)> {
    samples
        .iter()
        .map(|s| (s.features.clone(), s.label))
        .collect()
}

/// Stratified 50/50 split; the first half (the larger one when a class has
/// odd count) is the training half.
fn split_half<S: Real>(
    annotated: &[LabeledSample<S>],
    rng: &mut ChaCha8Rng,
) -> (Vec<LabeledSample<S>>, Vec<LabeledSample<S>>) {
    let mut train_half = Vec::new();
    let mut mine_half = Vec::new();
    for class in PatchLabel::ALL {
        let mut indices: Vec<usize> = annotated
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == class)
            .map(|(i, _)| i)
            .collect();
        indices.shuffle(rng);
        let cut = indices.len().div_ceil(2);
        for &i in &indices[..cut] {
            train_half.push(annotated[i].clone());
        }
        for &i in &indices[cut..] {
            mine_half.push(annotated[i].clone());
        }
    }
    (train_half, mine_half)
}

/// Produces the initial model: train on half the annotated data, mine the
/// hardest `quantile` of the other half, retrain on the union.
pub fn initialize<S: Real>(
    annotated: &[LabeledSample<S>],
    config: &EmConfig<S>,
) -> Result<Model<S>> {
    config.validate()?;
    if annotated.len() < 2 {
        return Err(Error::invalid_input(
            "initialization needs at least 2 annotated examples",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (train_half, mine_half) = split_half(annotated, &mut rng);

    let first = train(&to_examples(&train_half), &config.train)?;
    let mut merged = train_half;
    if !mine_half.is_empty() {
        let hard = hard_example_mining(&first, &mine_half, config.quantile)?;
        merged.extend(hard);
    }
    train(&to_examples(&merged), &config.train)
}

/// E-step: pseudo-label the unannotated pool with the current model and
/// keep the collaborative-filtering survivors.
pub fn e_step<S: Real>(
    model: &Model<S>,
    unannotated: &[Sample<S>],
    annotated: &[LabeledSample<S>],
    config: &EmConfig<S>,
) -> Result<EffectiveSet<S>> {
    config.validate()?;
    collaborative_filter(unannotated, annotated, model, config.sigma)
}

/// M-step: retrain from scratch on annotated data plus the effective set,
/// pseudo-labels entering as hard labels with full weight.
pub fn m_step<S: Real>(
    annotated: &[LabeledSample<S>],
    pool: &[Sample<S>],
    effective: &EffectiveSet<S>,
    config: &EmConfig<S>,
) -> Result<Model<S>> {
    if annotated.is_empty() {
        return Err(Error::invalid_input("annotated set is empty"));
    }
    let mut examples = to_examples(annotated);
    examples.extend(resolve_effective(pool, effective)?);
    train(&examples, &config.train)
}

fn resolve_effective<'a, S: Real>(
    pool: &'a [Sample<S>],
    effective: &EffectiveSet<S>,
) -> Result<Vec<(FeatureVector<S>, PatchLabel)>> {
    let by_id: std::collections::BTreeMap<&crate::sample::PatchId, &'a Sample<S>> =
        pool.iter().map(|s| (&s.id, s)).collect();
    effective
        .members
        .iter()
        .map(|member| {
            by_id
                .get(&member.id)
                .map(|s| (s.features.clone(), member.label))
                .ok_or_else(|| {
                    Error::invalid_input(format!(
                        "effective member {} not found in unannotated pool",
                        member.id
                    ))
                })
        })
        .collect()
}

fn held_out_metrics<S: Real>(
    model: &Model<S>,
    held_out: &[LabeledSample<S>],
) -> Result<Option<PatchMetrics<S>>> {
    if held_out.is_empty() {
        return Ok(None);
    }
    let mut predictions = Vec::with_capacity(held_out.len());
    let mut truths = Vec::with_capacity(held_out.len());
    for sample in held_out {
        predictions.push(model.predict_proba(&sample.features)?.argmax());
        truths.push(sample.label);
    }
    Ok(Some(patch_metrics(&predictions, &truths)?))
}

/// Runs the full loop: initialize, then alternate E- and M-steps for up to
/// `max_iterations`, recording per-iteration state.
pub fn run_em<S: Real>(
    annotated: &[LabeledSample<S>],
    unannotated: &[Sample<S>],
    held_out: &[LabeledSample<S>],
    config: &EmConfig<S>,
) -> Result<(Model<S>, EmHistory<S>)> {
    let mut model = initialize(annotated, config)?;
    let annotated_examples = to_examples(annotated);
    let mut history = EmHistory {
        initial_q: log_likelihood(&model, &annotated_examples, &[])?,
        initial_held_out: held_out_metrics(&model, held_out)?,
        iterations: Vec::new(),
    };

    let mut previous: Option<EffectiveSet<S>> = None;
    for iteration in 1..=config.max_iterations {
        let effective = e_step(&model, unannotated, annotated, config)?;
        if previous
            .as_ref()
            .is_some_and(|p| p.same_selection(&effective))
        {
            // Same selection means the retrained model would repeat too.
            break;
        }
        model = m_step(annotated, unannotated, &effective, config)?;
        let pseudo = resolve_effective(unannotated, &effective)?;
        let q_value = log_likelihood(&model, &annotated_examples, &pseudo)?;
        history.iterations.push(IterationRecord {
            iteration,
            effective_count: effective.len(),
            q_value,
            held_out: held_out_metrics(&model, held_out)?,
            effective: effective.clone(),
        });
        previous = Some(effective);
    }
    Ok((model, history))
}

/// A corpus split for semi-supervised experiments.
#[derive(Debug, Clone)]
pub struct CorpusSplit<S: Real> {
    pub annotated: Vec<LabeledSample<S>>,
    pub unannotated: Vec<Sample<S>>,
    /// True labels of the unannotated pool, index-aligned; audit only,
    /// never shown to training or selection.
    pub unannotated_truth: Vec<PatchLabel>,
    pub held_out: Vec<LabeledSample<S>>,
}

/// Carves a held-out evaluation set first, then keeps
/// `annotated_fraction` of the remainder as the annotated set D and hides
/// the labels of the rest to form the unannotated pool U. All draws are
/// stratified by class and seeded.
pub fn split_corpus<S: Real>(
    corpus: &[LabeledSample<S>],
    annotated_fraction: S,
    holdout_fraction: S,
    seed: u64,
) -> Result<CorpusSplit<S>> {
    if !(annotated_fraction > S::zero() && annotated_fraction <= S::one()) {
        return Err(Error::invalid_config("annotated_fraction must be in (0, 1]"));
    }
    if !(holdout_fraction >= S::zero() && holdout_fraction < S::one()) {
        return Err(Error::invalid_config("holdout_fraction must be in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = CorpusSplit {
        annotated: Vec::new(),
        unannotated: Vec::new(),
        unannotated_truth: Vec::new(),
        held_out: Vec::new(),
    };
    for class in PatchLabel::ALL {
        let mut indices: Vec<usize> = corpus
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == class)
            .map(|(i, _)| i)
            .collect();
        indices.shuffle(&mut rng);
        let n = indices.len();
        let n_hold = (holdout_fraction * real_of_usize::<S>(n))
            .round()
            .to_usize()
            .unwrap_or(0)
            .min(n);
        let remaining = n - n_hold;
        let n_annot = (annotated_fraction * real_of_usize::<S>(remaining))
            .round()
            .to_usize()
            .unwrap_or(0)
            .min(remaining);
        for &i in &indices[..n_hold] {
            split.held_out.push(corpus[i].clone());
        }
        for &i in &indices[n_hold..n_hold + n_annot] {
            split.annotated.push(corpus[i].clone());
        }
        for &i in &indices[n_hold + n_annot..] {
            split.unannotated.push(corpus[i].as_sample());
            split.unannotated_truth.push(corpus[i].label);
        }
    }
    if split.annotated.len() < 2 {
        return Err(Error::invalid_input(
            "corpus split left fewer than 2 annotated examples",
        ));
    }
    Ok(split)
}
