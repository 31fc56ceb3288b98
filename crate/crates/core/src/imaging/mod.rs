//! Slide rasters and foreground extraction.
//!
//! The primary extractor builds the minimum spanning tree of the 4-neighbor
//! pixel grid (edge weight = Euclidean RGB distance), deletes MST edges
//! heavier than a threshold, and classifies the resulting subtrees by
//! average luminance: every subtree brighter than `u - rgb_margin`, where
//! `u` is the brightest subtree average, is background (glass), the rest is
//! tissue. An Otsu thresholder is kept alongside as the baseline.

mod mst;
mod otsu;
mod union_find;

pub mod io;

pub use mst::SubtreePartition;
pub use otsu::{luminance_histogram, otsu_threshold};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: u32,
    pub height: u32,
    /// Interleaved RGB triples, `3 * width * height` bytes.
    pub pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid_input("image dimensions must be nonzero"));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::invalid_input(format!(
                "pixel buffer holds {} bytes, expected {expected}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            pixels.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn rgb_at(&self, x: u32, y: u32) -> [u8; 3] {
        self.rgb_at_index(y as usize * self.width as usize + x as usize)
    }

    pub(crate) fn rgb_at_index(&self, index: usize) -> [u8; 3] {
        let o = index * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set_rgb(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    /// Integer luminance (r+g+b)/3 of one pixel.
    pub fn luminance_at_index(&self, index: usize) -> u32 {
        let rgb = self.rgb_at_index(index);
        (u32::from(rgb[0]) + u32::from(rgb[1]) + u32::from(rgb[2])) / 3
    }
}

/// Per-pixel foreground flag; true marks tissue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    pub width: u32,
    pub height: u32,
    pub flags: Vec<bool>,
}

impl ForegroundMask {
    pub fn new(width: u32, height: u32, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != width as usize * height as usize {
            return Err(Error::invalid_input("mask length does not match dimensions"));
        }
        Ok(Self {
            width,
            height,
            flags,
        })
    }

    pub fn filled(width: u32, height: u32, value: bool) -> Self {
        Self {
            width,
            height,
            flags: vec![value; width as usize * height as usize],
        }
    }

    pub fn is_foreground(&self, x: u32, y: u32) -> bool {
        self.flags[y as usize * self.width as usize + x as usize]
    }

    pub fn foreground_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn matches_dims(&self, image: &RasterImage) -> bool {
        self.width == image.width && self.height == image.height
    }
}

/// Tunables of the MST foreground extractor.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SegmentationParams<S: Real> {
    /// MST edges heavier than this are cut (RGB Euclidean distance).
    pub edge_threshold: S,
    /// Subtrees within this margin of the brightest subtree average are
    /// background.
    pub rgb_margin: S,
}

impl<S: Real> Default for SegmentationParams<S> {
    fn default() -> Self {
        Self {
            edge_threshold: real(100.0),
            rgb_margin: real(45.0),
        }
    }
}

impl<S: Real> SegmentationParams<S> {
    pub fn validate(&self) -> Result<()> {
        if !(self.edge_threshold > S::zero()) {
            return Err(Error::invalid_config("edge_threshold must be > 0"));
        }
        if !(self.rgb_margin >= S::zero()) {
            return Err(Error::invalid_config("rgb_margin must be >= 0"));
        }
        Ok(())
    }
}

/// Subtree partition underlying [`mst_foreground_extract`], exposed so the
/// partition itself can be inspected and verified.
pub fn mst_partition<S: Real>(
    image: &RasterImage,
    params: &SegmentationParams<S>,
) -> Result<SubtreePartition> {
    params.validate()?;
    if image.pixel_count() == 0 {
        return Err(Error::invalid_input("cannot segment an empty image"));
    }
    let threshold = params
        .edge_threshold
        .to_f64()
        .ok_or_else(|| Error::invalid_config("edge_threshold is not finite"))?;
    Ok(mst::mst_subtree_partition(image, threshold))
}

/// Graph-based foreground extraction: MST, heavy-edge deletion, then the
/// brightness rule over subtree averages. Deterministic for a fixed input.
pub fn mst_foreground_extract<S: Real>(
    image: &RasterImage,
    params: &SegmentationParams<S>,
) -> Result<ForegroundMask> {
    let partition = mst_partition(image, params)?;

    // Average luminance per subtree, from exact integer sums.
    let mut pixel_counts = vec![0u64; partition.subtree_count];
    let mut luminance_sums = vec![0u64; partition.subtree_count];
    for (index, &label) in partition.labels.iter().enumerate() {
        let rgb = image.rgb_at_index(index);
        pixel_counts[label as usize] += 1;
        luminance_sums[label as usize] +=
            u64::from(rgb[0]) + u64::from(rgb[1]) + u64::from(rgb[2]);
    }
    let three: S = real(3.0);
    let averages: Vec<S> = pixel_counts
        .iter()
        .zip(&luminance_sums)
        .map(|(&n, &sum)| {
            let sum_s = S::from_u64(sum).expect("luminance sum fits scalar");
            let n_s = S::from_u64(n).expect("pixel count fits scalar");
            sum_s / (three * n_s)
        })
        .collect();

    let brightest = averages
        .iter()
        .copied()
        .fold(S::neg_infinity(), S::max);
    let cutoff = brightest - params.rgb_margin;
    let background: Vec<bool> = averages.iter().map(|&avg| avg > cutoff).collect();

    let flags = partition
        .labels
        .iter()
        .map(|&label| !background[label as usize])
        .collect();
    ForegroundMask::new(image.width, image.height, flags)
}

/// Otsu baseline: global luminance threshold maximizing inter-class
/// variance; pixels at or below the threshold (the dark class) become
/// foreground. A constant image yields an all-background mask.
pub fn otsu_foreground_extract<S: Real>(image: &RasterImage) -> Result<ForegroundMask> {
    if image.pixel_count() == 0 {
        return Err(Error::invalid_input("cannot segment an empty image"));
    }
    let histogram = otsu::luminance_histogram(&image.pixels);
    let flags = match otsu::otsu_threshold::<S>(&histogram) {
        Some(threshold) => (0..image.pixel_count())
            .map(|i| image.luminance_at_index(i) <= u32::from(threshold))
            .collect(),
        None => vec![false; image.pixel_count()],
    };
    ForegroundMask::new(image.width, image.height, flags)
}
