//! Kruskal MST over the 4-neighbor pixel grid and its threshold partition.
//!
//! Edge weights are Euclidean distances between RGB triples. Because every
//! weight is the square root of an integer in [0, 3 * 255^2], edges are
//! ordered by their exact squared weight with a counting sort; this is a
//! stable sort by (weight, edge index) without any float comparisons.

use super::union_find::UnionFind;
use super::RasterImage;

/// Largest possible squared edge weight: 3 * 255^2.
const MAX_WEIGHT_SQ: u32 = 3 * 255 * 255;

/// Grid edges are enumerated horizontals first, then verticals, both in
/// row-major order. An edge id maps back to its pixel pair in O(1).
pub(crate) struct GridEdges {
    width: u32,
    height: u32,
    horizontal: u64,
}

impl GridEdges {
    pub(crate) fn new(width: u32, height: u32) -> Self {
        let horizontal = u64::from(height) * u64::from(width.saturating_sub(1));
        Self {
            width,
            height,
            horizontal,
        }
    }

    pub(crate) fn count(&self) -> u64 {
        self.horizontal + u64::from(self.width) * u64::from(self.height.saturating_sub(1))
    }

    /// Pixel indices joined by edge `id`.
    pub(crate) fn endpoints(&self, id: u64) -> (u32, u32) {
        let w = u64::from(self.width);
        if id < self.horizontal {
            let row = id / (w - 1);
            let col = id % (w - 1);
            let node = row * w + col;
            (node as u32, (node + 1) as u32)
        } else {
            let id = id - self.horizontal;
            let node = id; // row-major over (height - 1) x width
            (node as u32, (node + w) as u32)
        }
    }

    pub(crate) fn weight_sq(&self, image: &RasterImage, id: u64) -> u32 {
        let (a, b) = self.endpoints(id);
        let pa = image.rgb_at_index(a as usize);
        let pb = image.rgb_at_index(b as usize);
        let mut sum = 0u32;
        for c in 0..3 {
            let d = i32::from(pa[c]) - i32::from(pb[c]);
            sum += (d * d) as u32;
        }
        sum
    }
}

/// Per-pixel subtree assignment after cutting heavy MST edges.
pub struct SubtreePartition {
    /// Dense subtree label per pixel, row-major, in [0, subtree_count).
    pub labels: Vec<u32>,
    pub subtree_count: usize,
}

/// Builds the minimum spanning tree of the pixel grid (Kruskal over all
/// edges in weight order), deletes the MST edges whose weight exceeds
/// `edge_threshold`, and labels the resulting subtrees.
pub(crate) fn mst_subtree_partition(image: &RasterImage, edge_threshold: f64) -> SubtreePartition {
    let pixels = image.pixel_count();
    let edges = GridEdges::new(image.width, image.height);
    let edge_count = edges.count() as usize;

    // Squared weights, one per edge id.
    let mut weight_sq = vec![0u32; edge_count];
    for id in 0..edge_count {
        weight_sq[id] = edges.weight_sq(image, id as u64);
    }

    // Counting sort of edge ids by squared weight; stable within a bucket.
    let mut bucket_start = vec![0u32; MAX_WEIGHT_SQ as usize + 2];
    for &w in &weight_sq {
        bucket_start[w as usize + 1] += 1;
    }
    for i in 1..bucket_start.len() {
        bucket_start[i] += bucket_start[i - 1];
    }
    let mut sorted = vec![0u32; edge_count];
    for (id, &w) in weight_sq.iter().enumerate() {
        let slot = bucket_start[w as usize];
        sorted[slot as usize] = id as u32;
        bucket_start[w as usize] = slot + 1;
    }

    // Kruskal: accept every edge that joins two components.
    let mut forest = UnionFind::new(pixels);
    let mut mst_edges = Vec::with_capacity(pixels.saturating_sub(1));
    for &id in &sorted {
        let (a, b) = edges.endpoints(u64::from(id));
        if forest.union(a, b) {
            mst_edges.push(id);
            if mst_edges.len() + 1 == pixels {
                break;
            }
        }
    }

    // Delete MST edges heavier than the threshold; what remains defines the
    // subtrees. weight > t  <=>  weight_sq > t^2, exactly.
    let threshold_sq = edge_threshold * edge_threshold;
    let mut subtrees = UnionFind::new(pixels);
    for &id in &mst_edges {
        if f64::from(weight_sq[id as usize]) <= threshold_sq {
            let (a, b) = edges.endpoints(u64::from(id));
            subtrees.union(a, b);
        }
    }

    // Relabel roots densely in first-seen (row-major) order.
    let mut labels = vec![u32::MAX; pixels];
    let mut root_label = vec![u32::MAX; pixels];
    let mut next = 0u32;
    for pixel in 0..pixels as u32 {
        let root = subtrees.find(pixel) as usize;
        if root_label[root] == u32::MAX {
            root_label[root] = next;
            next += 1;
        }
        labels[pixel as usize] = root_label[root];
    }

    SubtreePartition {
        labels,
        subtree_count: next as usize,
    }
}
