//! Slide-level cancer-intensity heatmaps and their class discretization.
//!
//! Patch posteriors are collapsed to a scalar in [0, 1] (the expected class
//! ordinal over 3), painted over the slide with overlap averaging, and then
//! binned by the fixed thresholds beta = (0.1, 0.5, 0.75): [0, 0.1] Normal,
//! (0.1, 0.5] Benign, (0.5, 0.75] InSitu, (0.75, 1] Invasive.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::ProbabilityMap;
use crate::error::{Error, Result};
use crate::imaging::io::{load_indexed_png, save_gray_png, save_indexed_png};
use crate::sample::PatchLabel;
use crate::scalar::{real, real_of_usize, Real};
use crate::tiling::{Patch, Window};
use crate::CLASS_COUNT;

/// Per-pixel cancer intensity in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap<S: Real> {
    pub width: u32,
    pub height: u32,
    pub intensity: Vec<S>,
}

/// Per-pixel class raster derived from a heatmap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    pub width: u32,
    pub height: u32,
    pub classes: Vec<PatchLabel>,
}

impl ClassMap {
    pub fn filled(width: u32, height: u32, label: PatchLabel) -> Self {
        Self {
            width,
            height,
            classes: vec![label; width as usize * height as usize],
        }
    }

    pub fn class_at(&self, x: u32, y: u32) -> PatchLabel {
        self.classes[y as usize * self.width as usize + x as usize]
    }
}

/// Classmap color convention: Normal black, Benign green, InSitu blue,
/// Invasive red.
pub const CLASSMAP_PALETTE: [[u8; 3]; CLASS_COUNT] =
    [[0, 0, 0], [0, 255, 0], [0, 0, 255], [255, 0, 0]];

/// The intensity thresholds separating Normal/Benign/InSitu/Invasive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
#[serde(bound = "")]
pub struct BetaThresholds<S: Real>(pub [S; 3]);

impl<S: Real> Default for BetaThresholds<S> {
    fn default() -> Self {
        Self([real(0.1), real(0.5), real(0.75)])
    }
}

impl<S: Real> BetaThresholds<S> {
    pub fn validate(&self) -> Result<()> {
        let [b1, b2, b3] = self.0;
        if !(S::zero() < b1 && b1 < b2 && b2 < b3 && b3 < S::one()) {
            return Err(Error::invalid_config(
                "beta thresholds must satisfy 0 < b1 < b2 < b3 < 1",
            ));
        }
        Ok(())
    }

    /// Bin lookup: `[0, b1]` Normal, `(b1, b2]` Benign, `(b2, b3]` InSitu,
    /// `(b3, 1]` Invasive.
    pub fn classify(&self, intensity: S) -> PatchLabel {
        let [b1, b2, b3] = self.0;
        if intensity <= b1 {
            PatchLabel::Normal
        } else if intensity <= b2 {
            PatchLabel::Benign
        } else if intensity <= b3 {
            PatchLabel::InSitu
        } else {
            PatchLabel::Invasive
        }
    }
}

/// Expected class ordinal normalized to [0, 1]: Normal-dominant posteriors
/// land near 0, Invasive-dominant near 1.
pub fn scale_probability<S: Real>(prob: &ProbabilityMap<S>) -> S {
    let mut expected = S::zero();
    for (ordinal, &p) in prob.0.iter().enumerate() {
        expected += real_of_usize::<S>(ordinal) * p;
    }
    expected / real(3.0)
}

/// Paints tile intensities onto the slide. Each pixel takes the mean of
/// the intensities of every window covering it; uncovered pixels stay 0.
pub fn render_heatmap<S: Real>(
    tiles: &[(Window, S)],
    width: u32,
    height: u32,
) -> Result<Heatmap<S>> {
    let pixels = width as usize * height as usize;
    let mut sums = vec![S::zero(); pixels];
    let mut counts = vec![0u32; pixels];
    for (window, intensity) in tiles {
        if !window.fits_in(width, height) {
            return Err(Error::invalid_input(format!(
                "window {}x{}+{} exceeds slide bounds {width}x{height}",
                window.x, window.y, window.size
            )));
        }
        if !(*intensity >= S::zero() && *intensity <= S::one()) {
            return Err(Error::invalid_input("tile intensity outside [0, 1]"));
        }
        for y in window.y..window.y + window.size {
            let row = y as usize * width as usize;
            for x in window.x..window.x + window.size {
                sums[row + x as usize] += *intensity;
                counts[row + x as usize] += 1;
            }
        }
    }
    let intensity = sums
        .into_iter()
        .zip(&counts)
        .map(|(sum, &n)| {
            if n == 0 {
                S::zero()
            } else {
                sum / real_of_usize(n as usize)
            }
        })
        .collect();
    Ok(Heatmap {
        width,
        height,
        intensity,
    })
}

/// Patch-level wrapper over [`render_heatmap`].
pub fn render_patch_heatmap<S: Real>(
    patches: &[(Patch, S)],
    width: u32,
    height: u32,
) -> Result<Heatmap<S>> {
    let tiles: Vec<(Window, S)> = patches.iter().map(|(p, s)| (p.window, *s)).collect();
    render_heatmap(&tiles, width, height)
}

/// Discretizes a heatmap through the beta bins.
pub fn classmap_from_heatmap<S: Real>(
    heatmap: &Heatmap<S>,
    beta: &BetaThresholds<S>,
) -> Result<ClassMap> {
    beta.validate()?;
    Ok(ClassMap {
        width: heatmap.width,
        height: heatmap.height,
        classes: heatmap
            .intensity
            .iter()
            .map(|&v| beta.classify(v))
            .collect(),
    })
}

/// Heatmap as 8-bit grayscale, intensity x 255 rounded half up.
pub fn save_heatmap_png<S: Real>(heatmap: &Heatmap<S>, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = heatmap
        .intensity
        .iter()
        .map(|&v| {
            let scaled = (v * real(255.0)).to_f64().unwrap_or(0.0);
            (scaled + 0.5).floor().clamp(0.0, 255.0) as u8
        })
        .collect();
    save_gray_png(heatmap.width, heatmap.height, &bytes, path)
}

/// Classmap as an indexed PNG with the fixed palette.
pub fn save_classmap_png(classmap: &ClassMap, path: impl AsRef<Path>) -> Result<()> {
    let indices: Vec<u8> = classmap
        .classes
        .iter()
        .map(|c| c.ordinal() as u8)
        .collect();
    save_indexed_png(
        classmap.width,
        classmap.height,
        &indices,
        &CLASSMAP_PALETTE,
        path,
    )
}

pub fn load_classmap_png(path: impl AsRef<Path>) -> Result<ClassMap> {
    let (width, height, indices) = load_indexed_png(path)?;
    let classes = indices
        .into_iter()
        .map(|i| {
            PatchLabel::from_ordinal(i as usize)
                .ok_or_else(|| Error::invalid_input(format!("palette index {i} is not a class")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClassMap {
        width,
        height,
        classes,
    })
}
