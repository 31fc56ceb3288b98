//! Otsu global thresholding, the baseline foreground extractor.

use crate::scalar::{real_of_usize, Real};

/// Picks the threshold `t` maximizing the inter-class variance of the split
/// {luminance <= t} vs {luminance > t}. Returns `None` when the variance is
/// zero at every threshold (constant image), in which case there is no
/// tissue signal to separate.
///
/// Ties keep the lowest threshold; the scan over all 256 candidates is
/// exhaustive by construction.
pub fn otsu_threshold<S: Real>(histogram: &[u64; 256]) -> Option<u8> {
    let total: u64 = histogram.iter().sum();
    if total == 0 {
        return None;
    }
    let total_s: S = real_of_usize(total as usize);
    let weighted_total: u64 = histogram
        .iter()
        .enumerate()
        .map(|(lum, &n)| lum as u64 * n)
        .sum();
    let weighted_total_s: S = real_of_usize(weighted_total as usize);

    let mut best: Option<(u8, S)> = None;
    let mut count_below = 0u64;
    let mut weighted_below = 0u64;
    for t in 0..256usize {
        count_below += histogram[t];
        weighted_below += t as u64 * histogram[t];
        let count_above = total - count_below;
        if count_below == 0 || count_above == 0 {
            continue;
        }
        let w0 = real_of_usize::<S>(count_below as usize) / total_s;
        let w1 = real_of_usize::<S>(count_above as usize) / total_s;
        let mu0 = real_of_usize::<S>(weighted_below as usize)
            / real_of_usize::<S>(count_below as usize);
        let mu1 = (weighted_total_s - real_of_usize::<S>(weighted_below as usize))
            / real_of_usize::<S>(count_above as usize);
        let diff = mu0 - mu1;
        let variance = w0 * w1 * diff * diff;
        let improves = match best {
            None => variance > S::zero(),
            Some((_, best_var)) => variance > best_var,
        };
        if improves {
            best = Some((t as u8, variance));
        }
    }
    best.map(|(t, _)| t)
}

/// 256-bin luminance histogram; luminance is the integer mean (r+g+b)/3.
pub fn luminance_histogram(pixels: &[u8]) -> [u64; 256] {
    let mut histogram = [0u64; 256];
    for rgb in pixels.chunks_exact(3) {
        let lum = (u32::from(rgb[0]) + u32::from(rgb[1]) + u32::from(rgb[2])) / 3;
        histogram[lum as usize] += 1;
    }
    histogram
}
