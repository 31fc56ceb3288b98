//! Bilinear RGB resampling.

use crate::imaging::RasterImage;

/// Bilinear resize with half-pixel-center alignment. Channel values round
/// half up; a same-size resize reproduces the input exactly.
pub fn resize_rgb(src: &RasterImage, target_w: u32, target_h: u32) -> RasterImage {
    assert!(target_w >= 1 && target_h >= 1);
    let sw = src.width as usize;
    let sh = src.height as usize;
    let scale_x = sw as f64 / target_w as f64;
    let scale_y = sh as f64 / target_h as f64;

    let mut pixels = Vec::with_capacity(target_w as usize * target_h as usize * 3);
    for dy in 0..target_h as usize {
        let src_y = (dy as f64 + 0.5) * scale_y - 0.5;
        let y0 = src_y.floor().clamp(0.0, (sh - 1) as f64) as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let fy = (src_y - y0 as f64).clamp(0.0, 1.0);
        for dx in 0..target_w as usize {
            let src_x = (dx as f64 + 0.5) * scale_x - 0.5;
            let x0 = src_x.floor().clamp(0.0, (sw - 1) as f64) as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let fx = (src_x - x0 as f64).clamp(0.0, 1.0);

            let p00 = src.rgb_at_index(y0 * sw + x0);
            let p10 = src.rgb_at_index(y0 * sw + x1);
            let p01 = src.rgb_at_index(y1 * sw + x0);
            let p11 = src.rgb_at_index(y1 * sw + x1);
            for c in 0..3 {
                let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
                let bottom = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
                let value = top * (1.0 - fy) + bottom * fy;
                pixels.push((value + 0.5).floor().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RasterImage {
        width: target_w,
        height: target_h,
        pixels,
    }
}
