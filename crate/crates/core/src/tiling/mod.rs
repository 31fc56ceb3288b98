//! Overlapping patch tiling, label extraction, and patch resizing.

mod annotations;
mod polygon;
mod resize;

pub use annotations::{AnnotationSet, Region};
pub use polygon::{covered_area, for_each_span, point_in_polygon};
pub use resize::resize_rgb;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{ForegroundMask, RasterImage};
use crate::sample::{PatchId, PatchLabel};

/// Square window in slide pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub x: u32,
    pub y: u32,
    pub size: u32,
}

impl Window {
    pub fn new(x: u32, y: u32, size: u32) -> Self {
        Self { x, y, size }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.size) * u64::from(self.size)
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        u64::from(self.x) + u64::from(self.size) <= u64::from(width)
            && u64::from(self.y) + u64::from(self.size) <= u64::from(height)
    }
}

/// A tile cut from a slide. `window` stays in slide coordinates even after
/// resizing, so label extraction and heatmap rendering keep working on the
/// original geometry.
#[derive(Debug, Clone)]
pub struct Patch {
    pub slide_id: String,
    pub window: Window,
    pub pixels: RasterImage,
    /// Fraction of window pixels flagged foreground by the mask.
    pub fg_fraction: f64,
}

impl Patch {
    pub fn id(&self) -> PatchId {
        PatchId::for_tile(&self.slide_id, self.window.x, self.window.y)
    }
}

/// Label extraction outcome: a class, or a noisy patch that must be
/// discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchLabelOutcome {
    Labeled(PatchLabel),
    Noisy,
}

impl PatchLabelOutcome {
    pub fn labeled(self) -> Option<PatchLabel> {
        match self {
            PatchLabelOutcome::Labeled(label) => Some(label),
            PatchLabelOutcome::Noisy => None,
        }
    }
}

impl fmt::Display for PatchLabelOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatchLabelOutcome::Labeled(label) => label.fmt(f),
            PatchLabelOutcome::Noisy => f.write_str("Noisy"),
        }
    }
}

/// Tiling tunables. Production defaults follow the slide-scale setup:
/// 1536-pixel patches at 50% overlap, 40% minimum foreground.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TilingParams {
    pub patch_size: u32,
    pub overlap: f64,
    pub min_fg: f64,
}

impl Default for TilingParams {
    fn default() -> Self {
        Self {
            patch_size: 1536,
            overlap: 0.5,
            min_fg: 0.4,
        }
    }
}

impl TilingParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::invalid_config("patch_size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::invalid_config("overlap must be in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.min_fg) {
            return Err(Error::invalid_config("min_fg must be in [0, 1]"));
        }
        Ok(())
    }

    /// Grid stride: `patch_size * (1 - overlap)`, at least one pixel.
    pub fn stride(&self) -> u32 {
        let stride = (f64::from(self.patch_size) * (1.0 - self.overlap)).round();
        (stride as u32).max(1)
    }
}

/// Origins along one axis: a regular grid of `stride` steps plus, when the
/// stride does not land flush, one final origin clamped to the far edge so
/// every pixel is covered.
pub fn tile_origins(extent: u32, patch_size: u32, stride: u32) -> Vec<u32> {
    debug_assert!(patch_size <= extent);
    let mut origins = Vec::new();
    let mut x = 0u64;
    while x + u64::from(patch_size) <= u64::from(extent) {
        origins.push(x as u32);
        x += u64::from(stride);
    }
    if let Some(&last) = origins.last() {
        if last + patch_size < extent {
            origins.push(extent - patch_size);
        }
    }
    origins
}

/// Cuts the slide into overlapping patches, keeping those whose foreground
/// fraction reaches `min_fg`. Output is row-major by origin.
pub fn tile_slide(
    slide_id: &str,
    image: &RasterImage,
    mask: &ForegroundMask,
    params: &TilingParams,
) -> Result<Vec<Patch>> {
    params.validate()?;
    if !mask.matches_dims(image) {
        return Err(Error::invalid_input("mask dimensions do not match image"));
    }
    if params.patch_size > image.width.min(image.height) {
        return Err(Error::invalid_input(format!(
            "patch_size {} exceeds image extent {}x{}",
            params.patch_size, image.width, image.height
        )));
    }

    // Summed-area table over the mask for O(1) foreground counts.
    let w = image.width as usize;
    let h = image.height as usize;
    let mut integral = vec![0u64; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row_sum = 0u64;
        for x in 0..w {
            row_sum += u64::from(mask.flags[y * w + x]);
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row_sum;
        }
    }
    let window_fg = |x: usize, y: usize, size: usize| -> u64 {
        integral[(y + size) * (w + 1) + x + size] + integral[y * (w + 1) + x]
            - integral[y * (w + 1) + x + size]
            - integral[(y + size) * (w + 1) + x]
    };

    let stride = params.stride();
    let size = params.patch_size;
    let xs = tile_origins(image.width, size, stride);
    let ys = tile_origins(image.height, size, stride);

    let mut patches = Vec::new();
    for &oy in &ys {
        for &ox in &xs {
            let fg = window_fg(ox as usize, oy as usize, size as usize);
            let fraction = fg as f64 / (u64::from(size) * u64::from(size)) as f64;
            if fraction < params.min_fg {
                continue;
            }
            let mut pixels = Vec::with_capacity(size as usize * size as usize * 3);
            for y in oy..oy + size {
                let start = (y as usize * w + ox as usize) * 3;
                pixels.extend_from_slice(&image.pixels[start..start + size as usize * 3]);
            }
            patches.push(Patch {
                slide_id: slide_id.to_string(),
                window: Window::new(ox, oy, size),
                pixels: RasterImage::new(size, size, pixels)?,
                fg_fraction: fraction,
            });
        }
    }
    Ok(patches)
}

/// Assigns the label of a patch window from annotation polygons.
///
/// In order: (a) two or more cancer classes each covering more than a third
/// of the window make the patch noisy; (b) total cancer cover under a third
/// means Normal; (c) otherwise the cancer class with the largest area wins,
/// ties going to the higher (more severe) ordinal.
pub fn label_window(window: &Window, annotations: &AnnotationSet) -> PatchLabelOutcome {
    let size = window.size as usize;
    let area = window.area();

    // Bit per cancer class per pixel; overlapping polygons of one class
    // count once (union semantics).
    let mut coverage = vec![0u8; size * size];
    for region in &annotations.regions {
        let bit = 1u8 << (region.class.ordinal() - 1);
        for_each_span(
            &region.polygon,
            window.x,
            window.y,
            window.size,
            window.size,
            |y, x0, x1| {
                let row = (y - window.y) as usize * size;
                for x in x0..x1 {
                    coverage[row + (x - window.x) as usize] |= bit;
                }
            },
        );
    }

    let mut class_area = [0u64; 3];
    let mut cancer_area = 0u64;
    for &bits in &coverage {
        if bits == 0 {
            continue;
        }
        cancer_area += 1;
        for class in 0..3 {
            class_area[class] += u64::from(bits >> class & 1);
        }
    }

    let over_third = class_area.iter().filter(|&&a| 3 * a > area).count();
    if over_third >= 2 {
        return PatchLabelOutcome::Noisy;
    }
    if 3 * cancer_area < area {
        return PatchLabelOutcome::Labeled(PatchLabel::Normal);
    }
    // Largest area, scanning from Invasive down so ties pick the higher
    // ordinal.
    let mut best = 2usize;
    for class in [1usize, 0] {
        if class_area[class] > class_area[best] {
            best = class;
        }
    }
    PatchLabelOutcome::Labeled(PatchLabel::from_ordinal(best + 1).unwrap())
}

/// Patch-level wrapper over [`label_window`].
pub fn extract_patch_label(patch: &Patch, annotations: &AnnotationSet) -> PatchLabelOutcome {
    label_window(&patch.window, annotations)
}

/// Bilinear resize to `target x target`; label-relevant metadata (window,
/// foreground fraction) is preserved.
pub fn resize_patch(patch: &Patch, target: u32) -> Result<Patch> {
    if target == 0 {
        return Err(Error::invalid_input("resize target must be >= 1"));
    }
    Ok(Patch {
        slide_id: patch.slide_id.clone(),
        window: patch.window,
        pixels: resize::resize_rgb(&patch.pixels, target, target),
        fg_fraction: patch.fg_fraction,
    })
}
