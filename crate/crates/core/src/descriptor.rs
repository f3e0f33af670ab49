//! Region descriptors pooled from a descriptor map.
//!
//! A pixel footprint (a patch mask or a query box) is projected onto map
//! cells: a cell participates when at least half of its area lies under the
//! footprint. If no cell qualifies, the single best-covered cell is used.
//! Participating cells are pooled per channel and L2-normalized.

use serde::{Deserialize, Serialize};

use crate::decompose::HierarchyFile;
use crate::error::{Error, Result};
use crate::feature_io::DescriptorMap;
use crate::geometry::{BBox, GridDims};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    #[default]
    Mean,
    Max,
}

/// Minimum covered fraction of a cell's area for it to participate.
pub const PARTICIPATION_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionDescriptor {
    pub image_id: String,
    pub region_id: u32,
    pub vector: Vec<f32>,
    pub bbox: BBox,
    /// Map cells pooled.
    pub patch_count: usize,
    /// The pooled vector was zero and could not be normalized.
    pub degenerate: bool,
}

/// Descriptors of every emitted region of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDescriptors {
    pub image_id: String,
    pub dim_d: usize,
    pub regions: Vec<RegionDescriptor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub vector: Vec<f32>,
    pub cells: usize,
    pub degenerate: bool,
}

fn add_rect_coverage(map: &DescriptorMap, rect: &BBox, coverage: &mut [f64]) {
    let s = map.stride_px as f32;
    let c_lo = ((rect.x0 / s).floor().max(0.0)) as usize;
    let r_lo = ((rect.y0 / s).floor().max(0.0)) as usize;
    let c_hi = ((rect.x1 / s).ceil().max(0.0) as usize).min(map.map_w);
    let r_hi = ((rect.y1 / s).ceil().max(0.0) as usize).min(map.map_h);
    for r in r_lo..r_hi {
        for c in c_lo..c_hi {
            let cell = BBox::new(c as f32 * s, r as f32 * s, (c + 1) as f32 * s, (r + 1) as f32 * s);
            coverage[r * map.map_w + c] += cell.intersection_area(rect);
        }
    }
}

/// Cells that participate given per-cell covered area.
pub fn participating_cells(map: &DescriptorMap, coverage: &[f64]) -> Result<Vec<usize>> {
    let cell_area = map.stride_px as f64 * map.stride_px as f64;
    let cells: Vec<usize> = (0..coverage.len())
        .filter(|&i| coverage[i] >= PARTICIPATION_FRACTION * cell_area)
        .collect();
    if !cells.is_empty() {
        return Ok(cells);
    }
    let (best, &area) = coverage
        .iter()
        .enumerate()
        .fold((0, &0.0), |acc, (i, a)| if *a > *acc.1 { (i, a) } else { acc });
    if area <= 0.0 {
        return Err(Error::Validation("footprint does not overlap the descriptor map".into()));
    }
    Ok(vec![best])
}

fn pool_cells(map: &DescriptorMap, cells: &[usize], mode: PoolingMode) -> Pooled {
    let d = map.dim_d;
    let mut acc = match mode {
        PoolingMode::Mean => vec![0.0f64; d],
        PoolingMode::Max => vec![f64::NEG_INFINITY; d],
    };
    for &i in cells {
        let v = map.cell(i / map.map_w, i % map.map_w);
        for (a, &x) in acc.iter_mut().zip(v) {
            match mode {
                PoolingMode::Mean => *a += x as f64,
                PoolingMode::Max => *a = a.max(x as f64),
            }
        }
    }
    if mode == PoolingMode::Mean {
        let n = cells.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    let norm = acc.iter().map(|a| a * a).sum::<f64>().sqrt();
    let degenerate = norm == 0.0;
    let vector = if degenerate {
        vec![0.0; d]
    } else {
        acc.iter().map(|a| (a / norm) as f32).collect()
    };
    Pooled {
        vector,
        cells: cells.len(),
        degenerate,
    }
}

/// Pools a patch mask (given as member indices on a patch grid).
pub fn pool_region(
    map: &DescriptorMap,
    members: &[u32],
    dims: GridDims,
    patch_px: u32,
    mode: PoolingMode,
) -> Result<Pooled> {
    if members.is_empty() {
        return Err(Error::Contract("pooling an empty mask"));
    }
    let mut coverage = vec![0.0f64; map.map_h * map.map_w];
    let p = patch_px as f32;
    for &m in members {
        let (r, c) = dims.row_col(m);
        let rect = BBox::new(c as f32 * p, r as f32 * p, (c + 1) as f32 * p, (r + 1) as f32 * p);
        add_rect_coverage(map, &rect, &mut coverage);
    }
    let cells = participating_cells(map, &coverage)?;
    Ok(pool_cells(map, &cells, mode))
}

/// Pools the cells under a query box.
pub fn pool_query(map: &DescriptorMap, bbox: &BBox, mode: PoolingMode) -> Result<Pooled> {
    if bbox.is_degenerate() {
        return Err(Error::Contract("query box has zero area"));
    }
    let mut coverage = vec![0.0f64; map.map_h * map.map_w];
    add_rect_coverage(map, bbox, &mut coverage);
    let cells = participating_cells(map, &coverage)?;
    Ok(pool_cells(map, &cells, mode))
}

/// Descriptors for every emitted region of a stored hierarchy.
pub fn describe_hierarchy(map: &DescriptorMap, hierarchy: &HierarchyFile, mode: PoolingMode) -> Result<ImageDescriptors> {
    let dims = hierarchy.dims();
    let regions = hierarchy
        .emitted
        .iter()
        .map(|&id| {
            let pooled = pool_region(map, &hierarchy.members(id), dims, hierarchy.patch_px, mode)?;
            Ok(RegionDescriptor {
                image_id: hierarchy.image_id.clone(),
                region_id: id,
                vector: pooled.vector,
                bbox: hierarchy.nodes[id as usize].bbox,
                patch_count: pooled.cells,
                degenerate: pooled.degenerate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImageDescriptors {
        image_id: hierarchy.image_id.clone(),
        dim_d: map.dim_d,
        regions,
    })
}
