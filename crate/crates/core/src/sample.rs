//! Shared sample types: the ordinal class label and feature-level patch views.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::features::FeatureVector;
use crate::scalar::Real;
use crate::CLASS_COUNT;

/// Ordinal grading class of a patch. The ordering Normal < Benign < InSitu
/// < Invasive carries diagnostic severity and drives both the effective
/// coefficient and the heatmap intensity scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PatchLabel {
    Normal = 0,
    Benign = 1,
    InSitu = 2,
    Invasive = 3,
}

impl PatchLabel {
    pub const ALL: [PatchLabel; CLASS_COUNT] = [
        PatchLabel::Normal,
        PatchLabel::Benign,
        PatchLabel::InSitu,
        PatchLabel::Invasive,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(ordinal: usize) -> Option<PatchLabel> {
        PatchLabel::ALL.get(ordinal).copied()
    }

    /// Absolute ordinal distance between two classes, in [0, 3].
    pub fn distance(self, other: PatchLabel) -> usize {
        self.ordinal().abs_diff(other.ordinal())
    }

    pub fn is_cancer(self) -> bool {
        self != PatchLabel::Normal
    }
}

impl fmt::Display for PatchLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            PatchLabel::Normal => "Normal",
            PatchLabel::Benign => "Benign",
            PatchLabel::InSitu => "InSitu",
            PatchLabel::Invasive => "Invasive",
        };
        f.write_str(name)
    }
}

/// Stable identifier of a patch, unique within a run.
///
/// Patches cut from slides use `"<slide_id>:<x>:<y>"`; synthetic corpora may
/// use any scheme as long as ids stay unique.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatchId(pub String);

impl PatchId {
    pub fn new(id: impl Into<String>) -> Self {
        PatchId(id.into())
    }

    pub fn for_tile(slide_id: &str, x: u32, y: u32) -> Self {
        PatchId(format!("{slide_id}:{x}:{y}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PatchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// An unannotated patch reduced to its feature vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Sample<S: Real> {
    pub id: PatchId,
    pub features: FeatureVector<S>,
}

/// A patch with a known (or pseudo) label.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LabeledSample<S: Real> {
    pub id: PatchId,
    pub features: FeatureVector<S>,
    pub label: PatchLabel,
}

impl<S: Real> LabeledSample<S> {
    pub fn as_sample(&self) -> Sample<S> {
        Sample {
            id: self.id.clone(),
            features: self.features.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordinal_round_trip() {
        for label in PatchLabel::ALL {
            assert_eq!(PatchLabel::from_ordinal(label.ordinal()), Some(label));
        }
        assert_eq!(PatchLabel::from_ordinal(4), None);
    }

    #[test]
    fn ordinal_distance() {
        assert_eq!(PatchLabel::Normal.distance(PatchLabel::Invasive), 3);
        assert_eq!(PatchLabel::Benign.distance(PatchLabel::Invasive), 2);
        assert_eq!(PatchLabel::InSitu.distance(PatchLabel::InSitu), 0);
    }

    #[test]
    fn label_serde_uses_names() {
        let s = serde_json::to_string(&PatchLabel::InSitu).unwrap();
        assert_eq!(s, "\"InSitu\"");
        let back: PatchLabel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, PatchLabel::InSitu);
    }
}
