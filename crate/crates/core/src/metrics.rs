//! Patch-wise and pixel-wise evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::ClassMap;
use crate::sample::PatchLabel;
use crate::scalar::{real_of_usize, Real};
use crate::CLASS_COUNT;

/// Patch-level scores: exact-match accuracy plus macro-averaged precision
/// and F1 over the classes present in predictions or truths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PatchMetrics<S: Real> {
    pub precision: S,
    pub accuracy: S,
    pub f1: S,
}

/// Counts indexed `[truth][prediction]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix(pub [[u64; CLASS_COUNT]; CLASS_COUNT]);

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..CLASS_COUNT).map(|c| self.0[c][c]).sum()
    }
}

pub fn confusion_matrix(
    predictions: &[PatchLabel],
    truths: &[PatchLabel],
) -> Result<ConfusionMatrix> {
    if predictions.is_empty() {
        return Err(Error::invalid_input("no predictions to score"));
    }
    if predictions.len() != truths.len() {
        return Err(Error::invalid_input(format!(
            "{} predictions vs {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut counts = [[0u64; CLASS_COUNT]; CLASS_COUNT];
    for (p, t) in predictions.iter().zip(truths) {
        counts[t.ordinal()][p.ordinal()] += 1;
    }
    Ok(ConfusionMatrix(counts))
}

/// Accuracy, macro precision, and macro F1 from the confusion matrix.
/// Classes absent from both predictions and truths are excluded from the
/// macro averages; a class with no predicted positives contributes zero
/// precision rather than dividing by zero.
pub fn patch_metrics<S: Real>(
    predictions: &[PatchLabel],
    truths: &[PatchLabel],
) -> Result<PatchMetrics<S>> {
    let cm = confusion_matrix(predictions, truths)?;
    Ok(metrics_from_confusion(&cm))
}

pub fn metrics_from_confusion<S: Real>(cm: &ConfusionMatrix) -> PatchMetrics<S> {
    let total = cm.total();
    let accuracy = ratio::<S>(cm.diagonal(), total);

    let mut precision_sum = S::zero();
    let mut f1_sum = S::zero();
    let mut present = 0usize;
    for c in 0..CLASS_COUNT {
        let tp = cm.0[c][c];
        let pred_count: u64 = (0..CLASS_COUNT).map(|t| cm.0[t][c]).sum();
        let truth_count: u64 = cm.0[c].iter().sum();
        if pred_count == 0 && truth_count == 0 {
            continue;
        }
        present += 1;
        let precision = ratio::<S>(tp, pred_count);
        let recall = ratio::<S>(tp, truth_count);
        precision_sum += precision;
        if precision + recall > S::zero() {
            let two = S::one() + S::one();
            f1_sum += two * precision * recall / (precision + recall);
        }
    }
    let present_s: S = real_of_usize(present.max(1));
    PatchMetrics {
        precision: precision_sum / present_s,
        accuracy,
        f1: f1_sum / present_s,
    }
}

fn ratio<S: Real>(num: u64, den: u64) -> S {
    if den == 0 {
        S::zero()
    } else {
        real_of_usize::<S>(num as usize) / real_of_usize::<S>(den as usize)
    }
}

/// Pixel-wise ordinal agreement between two classmaps:
/// `1 - sum(|c_pred - c_truth|) / (3 * pixels)`.
pub fn pixel_score<S: Real>(pred: &ClassMap, truth: &ClassMap) -> Result<S> {
    if pred.width != truth.width || pred.height != truth.height {
        return Err(Error::invalid_input(format!(
            "classmap dimensions differ: {}x{} vs {}x{}",
            pred.width, pred.height, truth.width, truth.height
        )));
    }
    let pixels = pred.classes.len();
    if pixels == 0 {
        return Err(Error::invalid_input("empty classmaps"));
    }
    let error: u64 = pred
        .classes
        .iter()
        .zip(&truth.classes)
        .map(|(p, t)| p.distance(*t) as u64)
        .sum();
    let three: S = real_of_usize(3);
    Ok(S::one() - real_of_usize::<S>(error as usize) / (three * real_of_usize::<S>(pixels)))
}
