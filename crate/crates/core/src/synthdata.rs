//! Synthetic slides with exact ground truth, for desk-scale experiments.
//!
//! A slide is a bright glass background with tissue laid out as chains of
//! touching cancer regions (star polygons of different classes separated
//! by thin tissue gaps), plus a few cancer-free tissue blobs. Region
//! polygons are returned as annotations, so every stage downstream of the
//! generator can be checked against exact truth.
//!
//! Cancer appearance is deliberately multi-modal: each class owns a small
//! palette of tone colors sitting in interleaved histogram bands, every
//! region paints broad stripes of two tones drawn from its palette, and a
//! per-region jitter spreads each band over neighboring bins. Within one
//! region the windows stay highly similar, while regions of the same class
//! can occupy entirely different bands, so a linear classifier cannot
//! extrapolate to bands it has never seen labeled and its accuracy keeps
//! climbing with training data. The chain layout keeps most region rims
//! facing other regions rather than plain tissue, which is what makes the
//! majority-vote pseudo-labels precise enough to retrain on.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::ClassMap;
use crate::imaging::{ForegroundMask, RasterImage};
use crate::sample::PatchLabel;
use crate::tiling::{for_each_span, AnnotationSet, Region};

/// Base color plus uniform per-pixel, per-channel noise amplitude.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ColorSpec {
    pub base: [f64; 3],
    pub noise: f64,
}

impl ColorSpec {
    fn sample(&self, rng: &mut ChaCha8Rng, shift: [f64; 3]) -> [u8; 3] {
        let mut rgb = [0u8; 3];
        for c in 0..3 {
            let v = self.base[c] + shift[c] + rng.random_range(-self.noise..=self.noise);
            rgb[c] = v.round().clamp(0.0, 255.0) as u8;
        }
        rgb
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TissueSpec {
    /// Cancer region chains per slide.
    pub clusters: usize,
    /// Regions per chain, inclusive range.
    pub chain_length: (usize, usize),
    /// Tissue ring painted around every region disk.
    pub margin: f64,
    /// Standalone cancer-free tissue disks.
    pub plain_blobs: usize,
    /// Radius range of the plain disks.
    pub plain_radius: (f64, f64),
    pub color: ColorSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionSpec {
    /// Star-polygon outer radius range, pixels.
    pub radius_range: (f64, f64),
    /// Inner radius floor as a fraction of the sampled outer radius.
    pub min_radius_factor: f64,
    pub vertices: usize,
    /// Tone palettes of Benign, InSitu, Invasive, in ordinal order. A
    /// region draws two tones from its class palette and paints them as
    /// stripes.
    pub class_tones: [Vec<[f64; 3]>; 3],
    /// Per-region shift applied to both tones (uniform per channel).
    pub tone_jitter: f64,
    /// Per-pixel noise within a tone.
    pub tone_noise: f64,
    /// Stripe wavelength range, pixels.
    pub stripe_period: (f64, f64),
    /// Tissue gap between consecutive chain members; windows straddling a
    /// gap exercise the largest-area and noisy-patch labeling rules.
    pub chain_gap: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlideSpec {
    pub width: u32,
    pub height: u32,
    pub background: ColorSpec,
    pub tissue: TissueSpec,
    pub regions: RegionSpec,
    pub seed: u64,
}

/// A generated slide with every piece of ground truth the pipeline can be
/// scored against.
#[derive(Debug, Clone)]
pub struct SynthSlide {
    pub image: RasterImage,
    pub annotations: AnnotationSet,
    pub tissue_mask: ForegroundMask,
    pub truth: ClassMap,
}

impl SlideSpec {
    pub fn validate(&self) -> Result<()> {
        let extent = f64::from(self.width.min(self.height));
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid_input("slide dimensions must be nonzero"));
        }
        if self.tissue.clusters == 0 && self.tissue.plain_blobs == 0 {
            return Err(Error::invalid_input("slide needs at least one tissue shape"));
        }
        if self.tissue.plain_blobs > 0 && 2.0 * (self.tissue.plain_radius.1 + 1.0) > extent {
            return Err(Error::invalid_input(
                "plain tissue blobs larger than the slide",
            ));
        }
        if self.tissue.clusters > 0 {
            if self.tissue.chain_length.0 == 0
                || self.tissue.chain_length.1 < self.tissue.chain_length.0
            {
                return Err(Error::invalid_input("chain_length range is invalid"));
            }
            if self.tissue.margin <= 0.0 {
                return Err(Error::invalid_input("tissue margin must be positive"));
            }
            if 2.0 * (self.regions.radius_range.1 + self.tissue.margin) > extent {
                return Err(Error::invalid_input("regions larger than the slide"));
            }
            if self.regions.vertices < 3 {
                return Err(Error::invalid_input("region polygons need >= 3 vertices"));
            }
            if !(0.0 < self.regions.min_radius_factor && self.regions.min_radius_factor <= 1.0) {
                return Err(Error::invalid_input("min_radius_factor must be in (0, 1]"));
            }
            if self.regions.class_tones.iter().any(|tones| tones.is_empty()) {
                return Err(Error::invalid_input("every class needs at least one tone"));
            }
            if !(self.regions.stripe_period.0 > 0.0
                && self.regions.stripe_period.1 >= self.regions.stripe_period.0)
            {
                return Err(Error::invalid_input("stripe_period range is invalid"));
            }
        }
        Ok(())
    }

    /// Desk-scale experiment preset: 3072 x 3072 slides meant to be tiled
    /// with 256-pixel patches at 50% overlap.
    ///
    /// Appearance notes: background (~245) and tissue (~141) luminances
    /// keep every tissue/glass edge weight above the default MST threshold
    /// of 100. Cancer tones sit in histogram bands disjoint from tissue on
    /// every channel, with Benign and InSitu bands interleaved along the
    /// green channel so the band-to-class map has to be learned band by
    /// band, never interpolated.
    pub fn desk(seed: u64) -> Self {
        Self {
            width: 3072,
            height: 3072,
            background: ColorSpec {
                base: [245.0, 244.0, 246.0],
                noise: 8.0,
            },
            tissue: TissueSpec {
                clusters: 1,
                chain_length: (2, 3),
                margin: 8.0,
                plain_blobs: 1,
                plain_radius: (220.0, 300.0),
                color: ColorSpec {
                    base: [150.0, 134.0, 140.0],
                    noise: 16.0,
                },
            },
            regions: RegionSpec {
                radius_range: (130.0, 175.0),
                min_radius_factor: 0.88,
                vertices: 14,
                class_tones: [
                    vec![
                        [92.0, 48.0, 48.0],
                        [92.0, 48.0, 176.0],
                        [92.0, 176.0, 96.0],
                        [92.0, 176.0, 224.0],
                    ],
                    vec![
                        [92.0, 96.0, 96.0],
                        [92.0, 96.0, 224.0],
                        [92.0, 224.0, 48.0],
                        [92.0, 224.0, 176.0],
                    ],
                    vec![
                        [208.0, 104.0, 48.0],
                        [208.0, 104.0, 96.0],
                        [208.0, 104.0, 176.0],
                        [208.0, 104.0, 224.0],
                    ],
                ],
                tone_jitter: 18.0,
                tone_noise: 4.0,
                stripe_period: (110.0, 170.0),
                chain_gap: (48.0, 96.0),
            },
            seed,
        }
    }

    /// Scaled-down preset for fast tests: 768 x 768, tiled with 128-pixel
    /// patches.
    pub fn mini(seed: u64) -> Self {
        let mut spec = Self::desk(seed);
        spec.width = 768;
        spec.height = 768;
        spec.tissue.clusters = 1;
        spec.tissue.chain_length = (2, 3);
        spec.tissue.margin = 6.0;
        spec.tissue.plain_blobs = 1;
        spec.tissue.plain_radius = (90.0, 130.0);
        spec.regions.radius_range = (70.0, 100.0);
        spec.regions.vertices = 10;
        spec.regions.stripe_period = (60.0, 90.0);
        spec.regions.chain_gap = (24.0, 48.0);
        spec
    }

    /// Foreground-extraction benchmark: plain gray tissue on bright glass,
    /// both with +-10 noise, no cancer regions.
    pub fn foreground(seed: u64) -> Self {
        Self {
            width: 384,
            height: 384,
            background: ColorSpec {
                base: [245.0, 245.0, 245.0],
                noise: 10.0,
            },
            tissue: TissueSpec {
                clusters: 0,
                chain_length: (1, 1),
                margin: 1.0,
                plain_blobs: 2,
                plain_radius: (60.0, 120.0),
                color: ColorSpec {
                    base: [150.0, 150.0, 150.0],
                    noise: 10.0,
                },
            },
            regions: RegionSpec {
                radius_range: (0.0, 0.0),
                min_radius_factor: 1.0,
                vertices: 3,
                class_tones: [Vec::new(), Vec::new(), Vec::new()],
                tone_jitter: 0.0,
                tone_noise: 0.0,
                stripe_period: (1.0, 1.0),
                chain_gap: (1.0, 2.0),
            },
            seed,
        }
    }

    pub fn by_name(name: &str, seed: u64) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk(seed)),
            "mini" => Ok(Self::mini(seed)),
            "foreground" => Ok(Self::foreground(seed)),
            other => Err(Error::invalid_config(format!("unknown preset '{other}'"))),
        }
    }
}

/// Generates a slide and its annotations.
pub fn generate_slide(spec: &SlideSpec) -> Result<(RasterImage, AnnotationSet)> {
    generate_slide_full(spec).map(|s| (s.image, s.annotations))
}

#[derive(Debug, Clone, Copy)]
struct ChainMember {
    cx: f64,
    cy: f64,
    radius: f64,
    class: PatchLabel,
}

/// Generates a slide together with its ground-truth tissue mask and class
/// raster. Deterministic per seed.
pub fn generate_slide_full(spec: &SlideSpec) -> Result<SynthSlide> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let pixels = w as usize * h as usize;

    let mut image = RasterImage {
        width: w,
        height: h,
        pixels: vec![0u8; pixels * 3],
    };
    for i in 0..pixels {
        let rgb = spec.background.sample(&mut rng, [0.0; 3]);
        image.pixels[i * 3..i * 3 + 3].copy_from_slice(&rgb);
    }

    // Lay out region chains, then paint tissue disks (region disk plus
    // margin) and plain blobs, then the regions themselves.
    let mut members: Vec<ChainMember> = Vec::new();
    for _ in 0..spec.tissue.clusters {
        let start_class = rng.random_range(0..3usize);
        if let Some(chain) = place_chain(spec, start_class, &members, &mut rng) {
            members.extend(chain);
        }
    }

    let mut tissue = vec![false; pixels];
    for member in &members {
        paint_disk(
            &mut image,
            &mut tissue,
            member.cx,
            member.cy,
            member.radius + spec.tissue.margin,
            &spec.tissue.color,
            &mut rng,
        );
    }
    for _ in 0..spec.tissue.plain_blobs {
        for _ in 0..50 {
            let radius =
                rng.random_range(spec.tissue.plain_radius.0..=spec.tissue.plain_radius.1);
            let cx = rng.random_range(radius..=(f64::from(w) - radius));
            let cy = rng.random_range(radius..=(f64::from(h) - radius));
            // Plain tissue stays well clear of the chains so mixed
            // region/tissue windows cannot form around them.
            let clear = members.iter().all(|m| {
                ((m.cx - cx).powi(2) + (m.cy - cy).powi(2)).sqrt()
                    > m.radius + spec.tissue.margin + radius + 260.0
            });
            if clear {
                paint_disk(
                    &mut image,
                    &mut tissue,
                    cx,
                    cy,
                    radius,
                    &spec.tissue.color,
                    &mut rng,
                );
                break;
            }
        }
    }

    let mut truth = vec![PatchLabel::Normal; pixels];
    let mut regions = Vec::new();
    for member in &members {
        let polygon = build_star(spec, member.cx, member.cy, member.radius, &mut rng);
        paint_region(spec, member.class, &polygon, &mut image, &mut truth, &mut rng);
        regions.push(Region {
            class: member.class,
            polygon,
        });
    }

    let annotations = AnnotationSet { regions };
    annotations.validate(w, h)?;
    Ok(SynthSlide {
        image,
        annotations,
        tissue_mask: ForegroundMask {
            width: w,
            height: h,
            flags: tissue,
        },
        truth: ClassMap {
            width: w,
            height: h,
            classes: truth,
        },
    })
}

/// Rasterizes annotations into a class raster (Normal everywhere else),
/// with the same pixel-center rule the generator paints with.
pub fn truth_classmap(annotations: &AnnotationSet, width: u32, height: u32) -> ClassMap {
    let mut classes = vec![PatchLabel::Normal; width as usize * height as usize];
    for region in &annotations.regions {
        for_each_span(&region.polygon, 0, 0, width, height, |y, x0, x1| {
            for x in x0..x1 {
                classes[y as usize * width as usize + x as usize] = region.class;
            }
        });
    }
    ClassMap {
        width,
        height,
        classes,
    }
}

/// Builds one chain of touching regions with cycling classes. Retries the
/// whole chain until it fits inside the slide and stays clear of other
/// chains.
fn place_chain(
    spec: &SlideSpec,
    start_class: usize,
    placed: &[ChainMember],
    rng: &mut ChaCha8Rng,
) -> Option<Vec<ChainMember>> {
    let (w, h) = (f64::from(spec.width), f64::from(spec.height));
    let pad = spec.regions.radius_range.1 + spec.tissue.margin;
    'attempt: for _ in 0..60 {
        let length = rng.random_range(spec.tissue.chain_length.0..=spec.tissue.chain_length.1);
        let heading = rng.random_range(0.0..std::f64::consts::TAU);
        let mut cx = rng.random_range(pad..=(w - pad));
        let mut cy = rng.random_range(pad..=(h - pad));
        let mut radius =
            rng.random_range(spec.regions.radius_range.0..=spec.regions.radius_range.1);
        let mut chain: Vec<ChainMember> = Vec::with_capacity(length);
        for link in 0..length {
            let margin = spec.tissue.margin;
            let inside = cx - radius - margin >= 0.0
                && cy - radius - margin >= 0.0
                && cx + radius + margin <= w
                && cy + radius + margin <= h;
            if !inside {
                continue 'attempt;
            }
            // Consecutive members touch by construction; everything else
            // must stay clear.
            let too_close = placed
                .iter()
                .chain(chain.iter().take(chain.len().saturating_sub(1)))
                .any(|m| {
                    ((m.cx - cx).powi(2) + (m.cy - cy).powi(2)).sqrt()
                        < m.radius + radius + 8.0
                });
            if too_close {
                continue 'attempt;
            }
            chain.push(ChainMember {
                cx,
                cy,
                radius,
                class: PatchLabel::from_ordinal(1 + (start_class + link) % 3).unwrap(),
            });

            if link + 1 < length {
                let next_radius =
                    rng.random_range(spec.regions.radius_range.0..=spec.regions.radius_range.1);
                let gap = rng.random_range(spec.regions.chain_gap.0..=spec.regions.chain_gap.1);
                let wiggle = rng.random_range(-0.12..0.12);
                let step = radius + next_radius + gap;
                cx += step * (heading + wiggle).cos();
                cy += step * (heading + wiggle).sin();
                radius = next_radius;
            }
        }
        return Some(chain);
    }
    None
}

fn paint_disk(
    image: &mut RasterImage,
    tissue: &mut [bool],
    cx: f64,
    cy: f64,
    radius: f64,
    color: &ColorSpec,
    rng: &mut ChaCha8Rng,
) {
    let w = image.width as usize;
    let y_start = ((cy - radius - 0.5).ceil().max(0.0)) as usize;
    let y_end = ((cy + radius - 0.5).floor().min(f64::from(image.height - 1))) as usize;
    for y in y_start..=y_end {
        let dy = y as f64 + 0.5 - cy;
        let rest = radius * radius - dy * dy;
        if rest <= 0.0 {
            continue;
        }
        let half = rest.sqrt();
        let x_start = ((cx - half - 0.5).ceil().max(0.0)) as usize;
        let x_end = ((cx + half - 0.5).floor().min((w - 1) as f64)) as usize;
        for x in x_start..=x_end {
            let i = y * w + x;
            let rgb = color.sample(rng, [0.0; 3]);
            image.pixels[i * 3..i * 3 + 3].copy_from_slice(&rgb);
            tissue[i] = true;
        }
    }
}

/// Paints a region as two broad stripes of tones drawn from its class
/// palette, with a shared per-region shift.
fn paint_region(
    spec: &SlideSpec,
    class: PatchLabel,
    polygon: &[[f64; 2]],
    image: &mut RasterImage,
    truth: &mut [PatchLabel],
    rng: &mut ChaCha8Rng,
) {
    let (w, h) = (image.width, image.height);
    let palette = &spec.regions.class_tones[class.ordinal() - 1];
    let first = rng.random_range(0..palette.len());
    let mut second = rng.random_range(0..palette.len());
    if palette.len() > 1 && second == first {
        second = (first + 1 + rng.random_range(0..palette.len() - 1)) % palette.len();
    }
    let jitter = spec.regions.tone_jitter;
    let shift = [
        rng.random_range(-jitter..=jitter),
        rng.random_range(-jitter..=jitter),
        rng.random_range(-jitter..=jitter),
    ];
    let tones = [
        ColorSpec {
            base: palette[first],
            noise: spec.regions.tone_noise,
        },
        ColorSpec {
            base: palette[second],
            noise: spec.regions.tone_noise,
        },
    ];
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let (dir_y, dir_x) = angle.sin_cos();
    let period = rng.random_range(spec.regions.stripe_period.0..=spec.regions.stripe_period.1);
    let phase = rng.random_range(0.0..1.0);
    for_each_span(polygon, 0, 0, w, h, |y, x0, x1| {
        for x in x0..x1 {
            let i = y as usize * w as usize + x as usize;
            let along = (f64::from(x) + 0.5) * dir_x + (f64::from(y) + 0.5) * dir_y;
            let tone = usize::from((along / period + phase).rem_euclid(1.0) >= 0.5);
            let rgb = tones[tone].sample(rng, shift);
            image.pixels[i * 3..i * 3 + 3].copy_from_slice(&rgb);
            truth[i] = class;
        }
    });
}

/// Star polygon with `vertices` corners at radii in
/// `[min_radius_factor * r_max, r_max]`; it always stays inside the disk
/// of radius `r_max` around its center.
fn build_star(
    spec: &SlideSpec,
    cx: f64,
    cy: f64,
    r_max: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<[f64; 2]> {
    let k = spec.regions.vertices;
    let step = std::f64::consts::TAU / k as f64;
    let r_min = r_max * spec.regions.min_radius_factor;
    (0..k)
        .map(|v| {
            let angle = v as f64 * step + rng.random_range(-0.25..0.25) * step;
            let radius = rng.random_range(r_min..=r_max);
            [cx + radius * angle.cos(), cy + radius * angle.sin()]
        })
        .collect()
}

#[cfg(test)]
fn polygon_center(polygon: &[[f64; 2]]) -> (f64, f64) {
    let n = polygon.len() as f64;
    let (sx, sy) = polygon
        .iter()
        .fold((0.0, 0.0), |(sx, sy), &[x, y]| (sx + x, sy + y));
    (sx / n, sy / n)
}
