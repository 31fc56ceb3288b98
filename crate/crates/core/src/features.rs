//! Patch feature vectors and similarity.
//!
//! The reference extractor produces a 64-dim descriptor: three 16-bin
//! normalized color histograms (one per channel) plus a 16-bin normalized
//! histogram of horizontal luminance gradient magnitudes. Classifier
//! backends may plug in their own extractor through [`FeatureExtractor`];
//! the dimension is whatever the backend declares.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::PatchId;
use crate::scalar::{real_of_usize, Real};
use crate::tiling::Patch;

/// Fixed-dimension real descriptor of a patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
#[serde(bound = "")]
pub struct FeatureVector<S: Real> {
    pub values: Vec<S>,
}

impl<S: Real> FeatureVector<S> {
    pub fn new(values: Vec<S>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> S {
        self.values
            .iter()
            .map(|&v| v * v)
            .fold(S::zero(), |acc, v| acc + v)
            .sqrt()
    }
}

/// Maps patches to fixed-dimension features; the seam where a different
/// classifier backbone plugs in.
pub trait FeatureExtractor<S: Real> {
    fn dim(&self) -> usize;
    fn extract(&self, patch: &Patch) -> FeatureVector<S>;
}

const COLOR_BINS: usize = 16;
const GRADIENT_BINS: usize = 16;

/// Gradient magnitudes are heavy-tailed, so the texture histogram uses
/// log-spaced bin edges; bin 0 holds exact zeros. Bin k covers
/// `[EDGES[k], EDGES[k+1])`, the last bin runs to 255.
const GRADIENT_BIN_EDGES: [u32; GRADIENT_BINS] =
    [0, 1, 2, 3, 4, 6, 8, 11, 16, 23, 32, 45, 64, 91, 128, 181];

fn gradient_bin(magnitude: u32) -> usize {
    GRADIENT_BIN_EDGES
        .iter()
        .rposition(|&edge| magnitude >= edge)
        .unwrap_or(0)
}

/// Built-in color + texture histogram extractor (64 dims).
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceExtractor;

impl ReferenceExtractor {
    pub const DIM: usize = 3 * COLOR_BINS + GRADIENT_BINS;
}

impl<S: Real> FeatureExtractor<S> for ReferenceExtractor {
    fn dim(&self) -> usize {
        Self::DIM
    }

    fn extract(&self, patch: &Patch) -> FeatureVector<S> {
        extract_features(patch)
    }
}

/// Reference feature extraction; see the module docs for the layout.
/// Every histogram block is normalized to sum 1, so features are
/// nonnegative and never zero-norm.
pub fn extract_features<S: Real>(patch: &Patch) -> FeatureVector<S> {
    let image = &patch.pixels;
    let mut counts = [0u64; 3 * COLOR_BINS + GRADIENT_BINS];

    for rgb in image.pixels.chunks_exact(3) {
        for (channel, &value) in rgb.iter().enumerate() {
            counts[channel * COLOR_BINS + value as usize / COLOR_BINS] += 1;
        }
    }

    let width = image.width as usize;
    let height = image.height as usize;
    let gradient_samples = (width.saturating_sub(1)) * height;
    if gradient_samples == 0 {
        // A one-column patch has no horizontal gradients; treat it as
        // all-zero gradient so the block still sums to 1.
        counts[3 * COLOR_BINS] = 1;
    } else {
        for y in 0..height {
            for x in 0..width - 1 {
                let a = image.luminance_at_index(y * width + x);
                let b = image.luminance_at_index(y * width + x + 1);
                counts[3 * COLOR_BINS + gradient_bin(a.abs_diff(b))] += 1;
            }
        }
    }

    let pixel_total: S = real_of_usize(image.pixel_count());
    let gradient_total: S = real_of_usize(gradient_samples.max(1));
    let values = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let c: S = real_of_usize(c as usize);
            if i < 3 * COLOR_BINS {
                c / pixel_total
            } else {
                c / gradient_total
            }
        })
        .collect();
    FeatureVector::new(values)
}

/// Cosine of the angle between two feature vectors.
pub fn cosine_similarity<S: Real>(a: &FeatureVector<S>, b: &FeatureVector<S>) -> Result<S> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let mut dot = S::zero();
    let mut norm_a = S::zero();
    let mut norm_b = S::zero();
    for (&x, &y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == S::zero() || norm_b == S::zero() {
        return Err(Error::ZeroNormFeature);
    }
    Ok(dot / (norm_a.sqrt() * norm_b.sqrt()))
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheSidecar {
    dim: usize,
    ids: Vec<PatchId>,
}

/// Writes features as rows of little-endian f64 to `path`, with a JSON
/// sidecar at `path.json` listing patch ids and the dimension.
pub fn write_feature_cache<S: Real>(
    path: impl AsRef<Path>,
    entries: &[(PatchId, FeatureVector<S>)],
) -> Result<()> {
    let path = path.as_ref();
    let dim = entries.first().map_or(0, |(_, f)| f.dim());
    let mut out = BufWriter::new(File::create(path)?);
    for (_, features) in entries {
        if features.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: features.dim(),
            });
        }
        for &v in &features.values {
            let v = v.to_f64().ok_or_else(|| {
                Error::invalid_input("feature value not representable as f64")
            })?;
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    let sidecar = CacheSidecar {
        dim,
        ids: entries.iter().map(|(id, _)| id.clone()).collect(),
    };
    let json = File::create(sidecar_path(path))?;
    serde_json::to_writer(BufWriter::new(json), &sidecar)?;
    Ok(())
}

/// Reads a feature cache written by [`write_feature_cache`].
pub fn read_feature_cache<S: Real>(
    path: impl AsRef<Path>,
) -> Result<Vec<(PatchId, FeatureVector<S>)>> {
    let path = path.as_ref();
    let sidecar: CacheSidecar =
        serde_json::from_reader(BufReader::new(File::open(sidecar_path(path))?))?;
    let mut data = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut data)?;
    let expected = sidecar.ids.len() * sidecar.dim * 8;
    if data.len() != expected {
        return Err(Error::invalid_input(format!(
            "feature cache holds {} bytes, expected {expected}",
            data.len()
        )));
    }
    let mut entries = Vec::with_capacity(sidecar.ids.len());
    let mut offset = 0;
    for id in sidecar.ids {
        let mut values = Vec::with_capacity(sidecar.dim);
        for _ in 0..sidecar.dim {
            let bytes: [u8; 8] = data[offset..offset + 8].try_into().unwrap();
            let v = f64::from_le_bytes(bytes);
            values.push(S::from_f64(v).ok_or_else(|| {
                Error::invalid_input("cached feature value not representable")
            })?);
            offset += 8;
        }
        entries.push((id, FeatureVector::new(values)));
    }
    Ok(entries)
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    os.into()
}
