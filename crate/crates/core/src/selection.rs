//! Patch selection: hard-example mining and collaborative filtering.
//!
//! The effective coefficient scores how hard (and therefore how valuable)
//! an annotated patch is: ordinal distance between the predicted and true
//! class, times the predicted-class confidence. Collaborative filtering
//! pseudo-labels an unannotated patch by majority vote among
//! feature-similar annotated patches and keeps it only when the model
//! agrees with the vote.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{Model, ProbabilityMap};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::sample::{LabeledSample, PatchId, PatchLabel, Sample};
use crate::scalar::{real, real_of_usize, Real};
use crate::tiling::Patch;
use crate::CLASS_COUNT;

/// One accepted pseudo-labeled patch, with its vote counts kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EffectiveMember<S: Real> {
    pub id: PatchId,
    pub label: PatchLabel,
    pub votes: [u32; CLASS_COUNT],
    /// Model probability of the accepted pseudo-label.
    pub probability: S,
}

/// The effective set selected from the unannotated pool at one iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EffectiveSet<S: Real> {
    pub members: Vec<EffectiveMember<S>>,
}

impl<S: Real> EffectiveSet<S> {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// True when both sets pick the same patches with the same labels.
    pub fn same_selection(&self, other: &EffectiveSet<S>) -> bool {
        self.members.len() == other.members.len()
            && self
                .members
                .iter()
                .zip(&other.members)
                .all(|(a, b)| a.id == b.id && a.label == b.label)
    }

    /// One JSON object per line, so every selection decision is auditable.
    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = BufWriter::new(File::create(path)?);
        for member in &self.members {
            serde_json::to_writer(&mut file, member)?;
            file.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let file = BufReader::new(File::open(path)?);
        let mut members = Vec::new();
        for line in file.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            members.push(serde_json::from_str(&line)?);
        }
        Ok(Self { members })
    }
}

/// Difficulty score of a prediction against the true label:
/// `|c_pred - c_true| * p(c_pred)`, in [0, 3]. Zero iff the prediction is
/// correct.
pub fn effective_coefficient<S: Real>(prob: &ProbabilityMap<S>, true_label: PatchLabel) -> S {
    let predicted = prob.argmax();
    let distance: S = real_of_usize(predicted.distance(true_label));
    distance * prob.get(predicted)
}

/// Scores the pool with [`effective_coefficient`] and returns the
/// `ceil(quantile * |pool|)` hardest members, hardest first; ties at the
/// cutoff break by patch id.
pub fn hard_example_mining<S: Real>(
    model: &Model<S>,
    pool: &[LabeledSample<S>],
    quantile: S,
) -> Result<Vec<LabeledSample<S>>> {
    if pool.is_empty() {
        return Err(Error::invalid_input("hard example pool is empty"));
    }
    if !(quantile > S::zero() && quantile <= S::one()) {
        return Err(Error::invalid_config("quantile must be in (0, 1]"));
    }
    let mut scored: Vec<(S, &LabeledSample<S>)> = Vec::with_capacity(pool.len());
    for sample in pool {
        let prob = model.predict_proba(&sample.features)?;
        scored.push((effective_coefficient(&prob, sample.label), sample));
    }
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("effective coefficients are finite")
            .then_with(|| a.1.id.cmp(&b.1.id))
    });
    let count = (quantile * real_of_usize::<S>(pool.len()))
        .ceil()
        .to_usize()
        .unwrap_or(pool.len())
        .clamp(1, pool.len());
    Ok(scored[..count].iter().map(|(_, s)| (*s).clone()).collect())
}

/// Majority-vote patch selection over the unannotated pool.
///
/// For each unannotated patch: every annotated patch whose cosine
/// similarity exceeds `sigma` votes for its own label; the patch is
/// accepted with the majority label iff the model predicts that same
/// label. Patches with no votes at all, or zero-norm features on either
/// side of a pair, are skipped.
pub fn collaborative_filter<S: Real>(
    unannotated: &[Sample<S>],
    annotated: &[LabeledSample<S>],
    model: &Model<S>,
    sigma: S,
) -> Result<EffectiveSet<S>> {
    if annotated.is_empty() {
        return Err(Error::invalid_input("annotated set is empty"));
    }
    if !(sigma > real(-1.0) && sigma <= S::one()) {
        return Err(Error::invalid_config("sigma must be in (-1, 1]"));
    }

    // Precompute annotated norms once; zero-norm annotated patches are
    // excluded pair-wise, exactly as if every similarity involving them
    // were skipped.
    let mut voters: Vec<(&LabeledSample<S>, S)> = Vec::with_capacity(annotated.len());
    for sample in annotated {
        if sample.features.dim() != model.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: model.feature_dim,
                actual: sample.features.dim(),
            });
        }
        let norm = sample.features.norm();
        if norm > S::zero() {
            voters.push((sample, norm));
        }
    }

    let mut members = Vec::new();
    for patch in unannotated {
        let norm = patch.features.norm();
        if norm == S::zero() {
            continue;
        }
        let prob = model.predict_proba(&patch.features)?;
        let predicted = prob.argmax();

        let mut votes = [0u32; CLASS_COUNT];
        for (voter, voter_norm) in &voters {
            let mut dot = S::zero();
            for (&a, &b) in patch.features.values.iter().zip(&voter.features.values) {
                dot += a * b;
            }
            if dot / (norm * *voter_norm) > sigma {
                votes[voter.label.ordinal()] += 1;
            }
        }
        if votes.iter().all(|&v| v == 0) {
            continue;
        }
        if majority_label(&votes) == predicted {
            members.push(EffectiveMember {
                id: patch.id.clone(),
                label: predicted,
                votes,
                probability: prob.get(predicted),
            });
        }
    }
    Ok(EffectiveSet { members })
}

/// Patch-level wrapper over [`collaborative_filter`].
pub fn collaborative_filter_patches<S: Real>(
    unannotated: &[Patch],
    annotated: &[(Patch, PatchLabel)],
    model: &Model<S>,
    extractor: &dyn FeatureExtractor<S>,
    sigma: S,
) -> Result<EffectiveSet<S>> {
    let pool: Vec<Sample<S>> = unannotated
        .iter()
        .map(|p| Sample {
            id: p.id(),
            features: extractor.extract(p),
        })
        .collect();
    let labeled: Vec<LabeledSample<S>> = annotated
        .iter()
        .map(|(p, label)| LabeledSample {
            id: p.id(),
            features: extractor.extract(p),
            label: *label,
        })
        .collect();
    collaborative_filter(&pool, &labeled, model, sigma)
}

/// Vote argmax; ties resolve to the lower ordinal, so ambiguous votes tend
/// to disagree with the prediction and get rejected.
fn majority_label(votes: &[u32; CLASS_COUNT]) -> PatchLabel {
    let mut best = 0;
    for c in 1..CLASS_COUNT {
        if votes[c] > votes[best] {
            best = c;
        }
    }
    PatchLabel::from_ordinal(best).unwrap()
}

// The test-side oracle for collaborative filtering lives in
// tests/acceptance.rs as an independent transcription of the published
// pseudocode; the tests here pin the worked examples and the tie rules.
#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::TrainConfig;
    use crate::features::FeatureVector;

    fn prob(values: [f64; 4]) -> ProbabilityMap<f64> {
        ProbabilityMap(values)
    }

    fn sample(id: &str, values: Vec<f64>) -> Sample<f64> {
        Sample {
            id: PatchId::new(id),
            features: FeatureVector::new(values),
        }
    }

    fn labeled(id: &str, values: Vec<f64>, label: PatchLabel) -> LabeledSample<f64> {
        LabeledSample {
            id: PatchId::new(id),
            features: FeatureVector::new(values),
            label,
        }
    }

    /// Model over 2 dims predicting the given class for any input with
    /// positive first coordinate.
    fn model_predicting(class: PatchLabel) -> Model<f64> {
        let mut weights = vec![0.0f64; 8];
        weights[class.ordinal() * 2] = 5.0;
        Model::from_parts(2, weights, [0.0; 4], TrainConfig::default()).unwrap()
    }

    #[test]
    fn worked_alpha_examples() {
        let a = effective_coefficient(&prob([0.1, 0.2, 0.1, 0.6]), PatchLabel::Normal);
        assert!((a - 1.8).abs() < 1e-12);

        let b = effective_coefficient(&prob([0.4, 0.6, 0.0, 0.0]), PatchLabel::Invasive);
        assert!((b - 1.2).abs() < 1e-12);

        let correct = effective_coefficient(&prob([0.1, 0.7, 0.1, 0.1]), PatchLabel::Benign);
        assert_eq!(correct, 0.0);
    }

    #[test]
    fn alpha_argmax_tie_uses_lowest_ordinal() {
        // Ordinals 1 and 3 tie; the tie resolves to Benign, distance 1.
        let a = effective_coefficient(&prob([0.1, 0.4, 0.1, 0.4]), PatchLabel::Normal);
        assert!((a - 0.4).abs() < 1e-12);
    }

    #[test]
    fn mining_returns_quantile_count() {
        let model = model_predicting(PatchLabel::Normal);
        let pool: Vec<LabeledSample<f64>> = (0..10)
            .map(|i| {
                labeled(
                    &format!("p{i}"),
                    vec![1.0, 0.0],
                    if i < 5 {
                        PatchLabel::Normal
                    } else {
                        PatchLabel::Invasive
                    },
                )
            })
            .collect();
        let hard = hard_example_mining(&model, &pool, 0.2).unwrap();
        assert_eq!(hard.len(), 2);
        // Misclassified Invasive patches are the hard ones.
        assert!(hard.iter().all(|s| s.label == PatchLabel::Invasive));
    }

    #[test]
    fn mining_all_correct_still_returns_by_id_order() {
        let model = model_predicting(PatchLabel::Benign);
        let pool: Vec<LabeledSample<f64>> = (0..10)
            .map(|i| labeled(&format!("p{i}"), vec![1.0, 0.0], PatchLabel::Benign))
            .collect();
        let hard = hard_example_mining(&model, &pool, 0.2).unwrap();
        assert_eq!(hard.len(), 2);
        assert_eq!(hard[0].id.as_str(), "p0");
        assert_eq!(hard[1].id.as_str(), "p1");
    }

    #[test]
    fn mining_matches_independent_sort() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let model = model_predicting(PatchLabel::Normal);
        let pool: Vec<LabeledSample<f64>> = (0..37)
            .map(|i| {
                labeled(
                    &format!("p{i:02}"),
                    vec![rng.random_range(0.1..1.0), rng.random_range(0.0..1.0)],
                    PatchLabel::from_ordinal(rng.random_range(0..4)).unwrap(),
                )
            })
            .collect();
        let hard = hard_example_mining(&model, &pool, 0.2).unwrap();

        let mut oracle: Vec<(f64, String)> = pool
            .iter()
            .map(|s| {
                let p = model.predict_proba(&s.features).unwrap();
                (effective_coefficient(&p, s.label), s.id.as_str().to_string())
            })
            .collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        let expected: Vec<String> = oracle[..8].iter().map(|(_, id)| id.clone()).collect();
        let got: Vec<String> = hard.iter().map(|s| s.id.as_str().to_string()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn empty_pool_is_rejected() {
        let model = model_predicting(PatchLabel::Normal);
        assert!(hard_example_mining::<f64>(&model, &[], 0.2).is_err());
    }

    #[test]
    fn majority_agreement_accepts_with_pseudo_label() {
        // Neighbors above sigma: Benign, Benign, Invasive.
        let annotated = vec![
            labeled("a0", vec![1.0, 0.0], PatchLabel::Benign),
            labeled("a1", vec![0.999, 0.045], PatchLabel::Benign),
            labeled("a2", vec![0.99, 0.14], PatchLabel::Invasive),
        ];
        let pool = vec![sample("u0", vec![1.0, 0.05])];

        let agreeing = model_predicting(PatchLabel::Benign);
        let set = collaborative_filter(&pool, &annotated, &agreeing, 0.8).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.members[0].label, PatchLabel::Benign);
        assert_eq!(set.members[0].votes, [0, 2, 0, 1]);

        // Same neighbors, model predicts Invasive: rejected.
        let disagreeing = model_predicting(PatchLabel::Invasive);
        let set = collaborative_filter(&pool, &annotated, &disagreeing, 0.8).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn sigma_one_excludes_everything() {
        let annotated = vec![labeled("a0", vec![1.0, 0.0], PatchLabel::Benign)];
        let pool = vec![sample("u0", vec![1.0, 0.0])];
        let model = model_predicting(PatchLabel::Benign);
        // Even an exactly parallel pair has cos = 1, never > 1.
        let set = collaborative_filter(&pool, &annotated, &model, 1.0).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn zero_vote_and_zero_norm_patches_are_skipped() {
        let annotated = vec![labeled("a0", vec![1.0, 0.0], PatchLabel::Benign)];
        let pool = vec![
            sample("u0", vec![0.0, 1.0]), // orthogonal: no votes
            sample("u1", vec![0.0, 0.0]), // zero norm
        ];
        let model = model_predicting(PatchLabel::Benign);
        let set = collaborative_filter(&pool, &annotated, &model, 0.9).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn empty_annotated_set_is_rejected() {
        let pool = vec![sample("u0", vec![1.0, 0.0])];
        let model = model_predicting(PatchLabel::Benign);
        assert!(collaborative_filter::<f64>(&pool, &[], &model, 0.5).is_err());
        assert!(collaborative_filter::<f64>(&pool, &[], &model, 1.5).is_err());
    }

    #[test]
    fn raising_sigma_never_adds_votes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let annotated: Vec<LabeledSample<f64>> = (0..20)
            .map(|i| {
                labeled(
                    &format!("a{i}"),
                    vec![rng.random_range(0.01..1.0), rng.random_range(0.01..1.0)],
                    PatchLabel::from_ordinal(rng.random_range(0..4)).unwrap(),
                )
            })
            .collect();
        let pool: Vec<Sample<f64>> = (0..30)
            .map(|i| {
                sample(
                    &format!("u{i}"),
                    vec![rng.random_range(0.01..1.0), rng.random_range(0.01..1.0)],
                )
            })
            .collect();
        let model = model_predicting(PatchLabel::Normal);
        let loose = collaborative_filter(&pool, &annotated, &model, 0.7).unwrap();
        let tight = collaborative_filter(&pool, &annotated, &model, 0.95).unwrap();
        for member in &tight.members {
            if let Some(l) = loose.members.iter().find(|m| m.id == member.id) {
                for c in 0..CLASS_COUNT {
                    assert!(member.votes[c] <= l.votes[c]);
                }
            }
        }
    }

    #[test]
    fn effective_set_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("effective.jsonl");
        let set = EffectiveSet {
            members: vec![EffectiveMember {
                id: PatchId::new("s0:0:128"),
                label: PatchLabel::InSitu,
                votes: [0, 1, 5, 2],
                probability: 0.625f64,
            }],
        };
        set.save_jsonl(&path).unwrap();
        let back: EffectiveSet<f64> = EffectiveSet::load_jsonl(&path).unwrap();
        assert_eq!(back, set);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn probability_map() -> impl Strategy<Value = ProbabilityMap<f64>> {
            proptest::collection::vec(0.0f64..1.0, 4).prop_map(|raw| {
                let sum: f64 = raw.iter().sum();
                if sum == 0.0 {
                    ProbabilityMap([0.25; 4])
                } else {
                    ProbabilityMap([raw[0] / sum, raw[1] / sum, raw[2] / sum, raw[3] / sum])
                }
            })
        }

        proptest! {
            #[test]
            fn alpha_bounded_and_zero_iff_correct(
                prob in probability_map(),
                ordinal in 0usize..4,
            ) {
                let label = PatchLabel::from_ordinal(ordinal).unwrap();
                let alpha = effective_coefficient(&prob, label);
                prop_assert!(alpha >= 0.0);
                prop_assert!(alpha <= 3.0);
                prop_assert_eq!(alpha == 0.0, prob.argmax() == label);
            }
        }
    }
}
