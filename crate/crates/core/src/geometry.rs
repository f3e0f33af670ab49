//! Pixel boxes and patch-grid helpers shared by every stage.

use serde::{Deserialize, Serialize};

/// Axis-aligned pixel box `(x0, y0, x1, y1)`, half-open on the far edges.
///
/// Serialized as a four-element JSON array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f32; 4]", into = "[f32; 4]")]
pub struct BBox {
    pub x0: f32,
    pub y0: f32,
    pub x1: f32,
    pub y1: f32,
}

impl BBox {
    pub const fn new(x0: f32, y0: f32, x1: f32, y1: f32) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f32 {
        (self.x1 - self.x0).max(0.0)
    }

    pub fn height(&self) -> f32 {
        (self.y1 - self.y0).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() as f64 * self.height() as f64
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.x1 > self.x0 && self.y1 > self.y0)
    }

    /// Area of the intersection with `other` (0 when disjoint).
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0) as f64;
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0) as f64;
        w * h
    }

    pub fn clamp_to(&self, width: f32, height: f32) -> BBox {
        BBox {
            x0: self.x0.clamp(0.0, width),
            y0: self.y0.clamp(0.0, height),
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
        }
    }
}

impl From<[f32; 4]> for BBox {
    fn from(v: [f32; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f32; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

/// Patch-grid shape. Patch index `i` sits at row `i / cols`, column `i % cols`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub rows: usize,
    pub cols: usize,
}

impl GridDims {
    pub const fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub const fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn row_col(&self, index: u32) -> (usize, usize) {
        let i = index as usize;
        (i / self.cols, i % self.cols)
    }

    #[inline]
    pub const fn index(&self, row: usize, col: usize) -> u32 {
        (row * self.cols + col) as u32
    }
}

/// Spatial adjacency used when splitting clusters into connected pieces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

/// One run of set cells on a mask row: `[row, start_col, length]`.
pub type MaskRun = [u32; 3];

/// Run-length encodes a sorted member list row by row.
pub fn encode_runs(members: &[u32], dims: GridDims) -> Vec<MaskRun> {
    let mut runs: Vec<MaskRun> = Vec::new();
    for &m in members {
        let (r, c) = dims.row_col(m);
        match runs.last_mut() {
            Some(run) if run[0] as usize == r && (run[1] + run[2]) as usize == c => run[2] += 1,
            _ => runs.push([r as u32, c as u32, 1]),
        }
    }
    runs
}

/// Inverse of [`encode_runs`]; returns sorted patch indices.
pub fn decode_runs(runs: &[MaskRun], dims: GridDims) -> Vec<u32> {
    let mut out = Vec::new();
    for &[r, c, len] in runs {
        for k in 0..len {
            out.push(dims.index(r as usize, (c + k) as usize));
        }
    }
    out.sort_unstable();
    out
}

/// Dense boolean mask of `members` over the grid.
pub fn members_to_mask(members: &[u32], dims: GridDims) -> Vec<bool> {
    let mut mask = vec![false; dims.len()];
    for &m in members {
        mask[m as usize] = true;
    }
    mask
}

/// Intersection-over-union of two member sets (sorted or not).
pub fn mask_iou(a: &[u32], b: &[u32], dims: GridDims) -> f64 {
    let ma = members_to_mask(a, dims);
    let inter = b.iter().filter(|&&i| ma[i as usize]).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}
