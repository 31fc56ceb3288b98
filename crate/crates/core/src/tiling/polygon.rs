//! Even-odd polygon rasterization against pixel centers.
//!
//! A pixel (x, y) belongs to a polygon iff its center (x+0.5, y+0.5) is
//! inside under the even-odd rule. The scanline filler and the single-point
//! test below implement the same half-open crossing rule, so they agree
//! exactly, including on boundary pixels.

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(vertices: &[[f64; 2]], px: f64, py: f64) -> bool {
    let n = vertices.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let a = vertices[j];
        let b = vertices[i];
        if (a[1] > py) != (b[1] > py) {
            let cross_x = a[0] + (py - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if px < cross_x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Visits every covered pixel span inside the clip window, one row at a
/// time: `visit(y, x_start, x_end_exclusive)` in window-absolute pixel
/// coordinates.
pub fn for_each_span(
    vertices: &[[f64; 2]],
    clip_x: u32,
    clip_y: u32,
    clip_w: u32,
    clip_h: u32,
    mut visit: impl FnMut(u32, u32, u32),
) {
    if vertices.len() < 3 || clip_w == 0 || clip_h == 0 {
        return;
    }
    let min_y = vertices.iter().map(|v| v[1]).fold(f64::INFINITY, f64::min);
    let max_y = vertices
        .iter()
        .map(|v| v[1])
        .fold(f64::NEG_INFINITY, f64::max);
    let row_start = (min_y - 0.5).ceil().max(f64::from(clip_y)) as i64;
    let row_end = (max_y - 0.5)
        .ceil()
        .min(f64::from(clip_y + clip_h)) as i64;

    let mut crossings: Vec<f64> = Vec::new();
    for y in row_start.max(0)..row_end.max(0) {
        let py = y as f64 + 0.5;
        crossings.clear();
        let n = vertices.len();
        let mut j = n - 1;
        for i in 0..n {
            let a = vertices[j];
            let b = vertices[i];
            if (a[1] > py) != (b[1] > py) {
                crossings.push(a[0] + (py - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
            }
            j = i;
        }
        crossings.sort_unstable_by(|u, v| u.partial_cmp(v).unwrap());
        for pair in crossings.chunks_exact(2) {
            // Pixel centers x+0.5 in [pair[0], pair[1]).
            let start = (pair[0] - 0.5).ceil().max(f64::from(clip_x)) as i64;
            let end = (pair[1] - 0.5)
                .ceil()
                .min(f64::from(clip_x + clip_w)) as i64;
            if end > start {
                visit(y as u32, start as u32, end as u32);
            }
        }
    }
}

/// Number of covered pixels inside the clip window.
pub fn covered_area(vertices: &[[f64; 2]], clip_x: u32, clip_y: u32, clip_w: u32, clip_h: u32) -> u64 {
    let mut area = 0u64;
    for_each_span(vertices, clip_x, clip_y, clip_w, clip_h, |_, x0, x1| {
        area += u64::from(x1 - x0);
    });
    area
}
