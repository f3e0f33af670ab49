//! Thresholded affinity statistics over patch subsets: degrees, bisection
//! seeds, internal connectivity, the high-energy set and the dummy score.
//!
//! The affinity matrix is never materialized. Degrees are accumulated from
//! Gram tiles of at most `TILE × TILE` entries, so memory stays flat even
//! for the full 2,700-patch root of a 60×45 grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_io::{FeatureGrid, PointView};
use crate::linalg::gram_tile;

const TILE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinityParams {
    /// Pairs with `x_i · x_j > alpha` are connected.
    pub alpha: f32,
    /// Fraction of patches, by raw L1 norm, forming the high-energy set.
    pub theta_fraction: f64,
    /// Swap seed roles: first seed is the max-degree patch instead of the
    /// min-degree one.
    #[serde(default)]
    pub seeds_follow_prose: bool,
}

impl Default for AffinityParams {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            theta_fraction: 0.30,
            seeds_follow_prose: false,
        }
    }
}

impl AffinityParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Validation(format!("alpha must be in [0, 1), got {}", self.alpha)));
        }
        if !(self.theta_fraction > 0.0 && self.theta_fraction <= 1.0) {
            return Err(Error::Validation(format!(
                "theta_fraction must be in (0, 1], got {}",
                self.theta_fraction
            )));
        }
        Ok(())
    }
}

/// Affinity statistics of one subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetStats {
    /// Edge count of each member, aligned with the subset order.
    pub degree: Vec<u32>,
    pub c_total: u64,
    pub c_bar: f64,
    pub xi: f64,
}

/// Per-member degree within `subset`: the number of other members whose
/// dot product with it strictly exceeds `alpha`.
pub fn degrees(points: PointView<'_>, subset: &[u32], alpha: f32) -> Result<Vec<u32>> {
    if subset.is_empty() {
        return Err(Error::Contract("affinity degrees need a non-empty subset"));
    }
    let n = subset.len();
    let dim = points.dim();
    let mut packed = Vec::with_capacity(n * dim);
    for &i in subset {
        if i as usize >= points.len() {
            return Err(Error::Validation(format!("patch index {i} out of range")));
        }
        packed.extend_from_slice(points.row(i));
    }

    let mut degree = vec![0u32; n];
    let tile = TILE.min(n);
    let mut gram = vec![0.0f32; tile * tile];
    for i0 in (0..n).step_by(tile) {
        let m = tile.min(n - i0);
        let a = &packed[i0 * dim..(i0 + m) * dim];
        for j0 in (i0..n).step_by(tile) {
            let w = tile.min(n - j0);
            let b = &packed[j0 * dim..(j0 + w) * dim];
            gram_tile(a, m, b, w, dim, &mut gram);
            for r in 0..m {
                let row = &gram[r * w..(r + 1) * w];
                // diagonal tiles only count the strict upper triangle
                let start = if i0 == j0 { r + 1 } else { 0 };
                let mut hits = 0u32;
                for (c, &s) in row.iter().enumerate().skip(start) {
                    if s > alpha {
                        hits += 1;
                        degree[j0 + c] += 1;
                    }
                }
                degree[i0 + r] += hits;
            }
        }
    }
    Ok(degree)
}

/// Seeds `(seed_b, seed_w)` from precomputed degrees aligned with `subset`.
///
/// `seed_b` is the lowest-degree member and `seed_w` the highest-degree
/// member other than `seed_b`; ties go to the lowest patch index. With
/// `follow_prose` the two roles swap their extremum.
pub fn seeds_from_degrees(subset: &[u32], degree: &[u32], follow_prose: bool) -> Result<(u32, u32)> {
    if subset.len() < 2 {
        return Err(Error::Contract("seed selection needs at least two patches"));
    }
    debug_assert_eq!(subset.len(), degree.len());
    let keyed = || subset.iter().copied().zip(degree.iter().copied());
    let min_of = |skip: Option<u32>| {
        keyed()
            .filter(|&(p, _)| Some(p) != skip)
            .min_by_key(|&(p, d)| (d, p))
            .map(|(p, _)| p)
            .unwrap()
    };
    let max_of = |skip: Option<u32>| {
        keyed()
            .filter(|&(p, _)| Some(p) != skip)
            .min_by_key(|&(p, d)| (std::cmp::Reverse(d), p))
            .map(|(p, _)| p)
            .unwrap()
    };
    Ok(if follow_prose {
        let b = max_of(None);
        (b, min_of(Some(b)))
    } else {
        let b = min_of(None);
        (b, max_of(Some(b)))
    })
}

pub fn select_seeds(points: PointView<'_>, subset: &[u32], params: &AffinityParams) -> Result<(u32, u32)> {
    if subset.len() < 2 {
        return Err(Error::Contract("seed selection needs at least two patches"));
    }
    let degree = degrees(points, subset, params.alpha)?;
    seeds_from_degrees(subset, &degree, params.seeds_follow_prose)
}

/// `(c_total, c_bar)` from degrees. Singletons have `c_bar = 1`.
pub fn connectivity_from_degrees(degree: &[u32]) -> (u64, f64) {
    let sum: u64 = degree.iter().map(|&d| d as u64).sum();
    let c_total = sum / 2;
    let n = degree.len() as f64;
    let c_bar = if degree.len() < 2 {
        1.0
    } else {
        2.0 * c_total as f64 / (n * (n - 1.0))
    };
    (c_total, c_bar)
}

pub fn connectivity(points: PointView<'_>, subset: &[u32], params: &AffinityParams) -> Result<(u64, f64)> {
    Ok(connectivity_from_degrees(&degrees(points, subset, params.alpha)?))
}

/// The high-energy set over a whole image: membership flags per patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HighEnergySet {
    flags: Vec<bool>,
    size: usize,
}

impl HighEnergySet {
    pub fn contains(&self, patch: u32) -> bool {
        self.flags[patch as usize]
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn members(&self) -> Vec<u32> {
        (0..self.flags.len() as u32).filter(|&i| self.flags[i as usize]).collect()
    }
}

/// `ceil(theta · n)`, robust to representation error such as `0.3 · 10`.
pub fn high_energy_count(theta_fraction: f64, n: usize) -> usize {
    let raw = theta_fraction * n as f64;
    ((raw - 1e-9 * raw.max(1.0)).ceil() as usize).clamp(1, n.max(1))
}

/// Top `ceil(theta · N)` patches by raw L1 norm; ties go to lower indices.
/// All-zero rows are never members.
pub fn high_energy_set(grid: &FeatureGrid, params: &AffinityParams) -> HighEnergySet {
    high_energy_set_from_norms(grid.l1_norms(), params.theta_fraction)
}

pub fn high_energy_set_from_norms(l1_norms: &[f32], theta_fraction: f64) -> HighEnergySet {
    let n = l1_norms.len();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| {
        l1_norms[b as usize]
            .total_cmp(&l1_norms[a as usize])
            .then(a.cmp(&b))
    });
    let mut flags = vec![false; n];
    let mut size = 0;
    for &i in order.iter().take(high_energy_count(theta_fraction, n)) {
        if l1_norms[i as usize] > 0.0 {
            flags[i as usize] = true;
            size += 1;
        }
    }
    HighEnergySet { flags, size }
}

/// Fraction of `subset` inside the high-energy set.
pub fn dummy_score(subset: &[u32], high_energy: &HighEnergySet) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::Contract("dummy score needs a non-empty subset"));
    }
    let hits = subset.iter().filter(|&&p| high_energy.contains(p)).count();
    Ok(hits as f64 / subset.len() as f64)
}

pub fn subset_stats(
    points: PointView<'_>,
    subset: &[u32],
    high_energy: &HighEnergySet,
    params: &AffinityParams,
) -> Result<SubsetStats> {
    let degree = degrees(points, subset, params.alpha)?;
    let (c_total, c_bar) = connectivity_from_degrees(&degree);
    let xi = dummy_score(subset, high_energy)?;
    Ok(SubsetStats {
        degree,
        c_total,
        c_bar,
        xi,
    })
}
