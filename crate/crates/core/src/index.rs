//! Exhaustive region-descriptor index.
//!
//! `.cix` layout, little-endian:
//!
//! ```text
//! magic       4 bytes  "CIX1"
//! dim_d       u32
//! row_count   u32
//! rows        row_count × { image_ordinal u32, region_id u32, bbox 4×f32, vector dim_d×f32 }
//! ```
//!
//! A JSON sidecar (`<file>.json`) maps image ordinals to image ids.

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::{ImageDescriptors, RegionDescriptor};
use crate::error::{Error, Result};
use crate::feature_io::{read_json, write_json};
use crate::geometry::BBox;
use crate::linalg::dot;

pub const INDEX_MAGIC: [u8; 4] = *b"CIX1";
const ROW_BLOCK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexRow {
    pub image_ordinal: u32,
    pub region_id: u32,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorIndex {
    dim_d: usize,
    image_ids: Vec<String>,
    rows: Vec<IndexRow>,
    vectors: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    dim_d: usize,
    row_count: usize,
    image_ids: Vec<String>,
}

/// One ranked image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub image_id: String,
    pub score: f32,
    pub best_region_id: u32,
    pub best_bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankedResult {
    pub entries: Vec<RankedEntry>,
}

impl RankedResult {
    pub fn image_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.image_id.as_str()).collect()
    }
}

impl DescriptorIndex {
    pub fn new(dim_d: usize) -> Self {
        Self {
            dim_d,
            image_ids: Vec::new(),
            rows: Vec::new(),
            vectors: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim_d
    }

    pub fn image_count(&self) -> usize {
        self.image_ids.len()
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn rows(&self) -> &[IndexRow] {
        &self.rows
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.vectors[row * self.dim_d..(row + 1) * self.dim_d]
    }

    /// Registers an image and returns its ordinal.
    pub fn add_image(&mut self, image_id: &str) -> u32 {
        if let Some(pos) = self.image_ids.iter().position(|id| id == image_id) {
            return pos as u32;
        }
        self.image_ids.push(image_id.to_string());
        (self.image_ids.len() - 1) as u32
    }

    /// Appends one descriptor. Degenerate descriptors are skipped and
    /// reported by returning `false`.
    pub fn push(&mut self, desc: &RegionDescriptor) -> Result<bool> {
        if desc.vector.len() != self.dim_d {
            return Err(Error::DimMismatch {
                expected: self.dim_d,
                got: desc.vector.len(),
            });
        }
        let ordinal = self.add_image(&desc.image_id);
        if desc.degenerate {
            return Ok(false);
        }
        self.rows.push(IndexRow {
            image_ordinal: ordinal,
            region_id: desc.region_id,
            bbox: desc.bbox,
        });
        self.vectors.extend_from_slice(&desc.vector);
        Ok(true)
    }

    /// Exact scoring: every image scored by its best row.
    pub fn search(&self, query: &[f32], k: usize) -> Result<RankedResult> {
        self.check_query(query, k)?;
        let best = self.best_rows(query);
        let mut entries: Vec<(usize, f32, usize)> = best
            .into_iter()
            .enumerate()
            .filter_map(|(img, b)| b.map(|(s, row)| (img, s, row)))
            .collect();
        entries.sort_by(|a, b| self.cmp_scored(a.1, a.0, b.1, b.0));
        entries.truncate(k);
        Ok(RankedResult {
            entries: entries.into_iter().map(|(_, s, row)| self.entry(row, s)).collect(),
        })
    }

    /// Image ranking by first appearance in the region-level ranking.
    pub fn image_retrieval_rank(&self, query: &[f32], k: usize) -> Result<RankedResult> {
        self.check_query(query, k)?;
        let scores: Vec<f32> = (0..self.rows.len()).map(|r| dot(query, self.vector(r))).collect();
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        order.sort_by(|&a, &b| {
            let (ia, ib) = (self.rows[a].image_ordinal as usize, self.rows[b].image_ordinal as usize);
            self.cmp_scored(scores[a], ia, scores[b], ib).then(a.cmp(&b))
        });
        let mut seen = vec![false; self.image_ids.len()];
        let mut entries = Vec::new();
        for row in order {
            let img = self.rows[row].image_ordinal as usize;
            if !seen[img] {
                seen[img] = true;
                entries.push(self.entry(row, scores[row]));
                if entries.len() == k {
                    break;
                }
            }
        }
        Ok(RankedResult { entries })
    }

    fn check_query(&self, query: &[f32], k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::Contract("k must be >= 1"));
        }
        if !self.rows.is_empty() && query.len() != self.dim_d {
            return Err(Error::DimMismatch {
                expected: self.dim_d,
                got: query.len(),
            });
        }
        Ok(())
    }

    /// Score descending, then image id ascending.
    fn cmp_scored(&self, sa: f32, ia: usize, sb: f32, ib: usize) -> Ordering {
        sb.total_cmp(&sa).then_with(|| self.image_ids[ia].cmp(&self.image_ids[ib]))
    }

    fn entry(&self, row: usize, score: f32) -> RankedEntry {
        let r = &self.rows[row];
        RankedEntry {
            image_id: self.image_ids[r.image_ordinal as usize].clone(),
            score,
            best_region_id: r.region_id,
            best_bbox: r.bbox,
        }
    }

    /// Best `(score, row)` per image. Blocks are scored in parallel and
    /// merged in block order; within an image the earliest row wins ties.
    fn best_rows(&self, query: &[f32]) -> Vec<Option<(f32, usize)>> {
        let n_images = self.image_ids.len();
        let partials: Vec<Vec<Option<(f32, usize)>>> = (0..self.rows.len())
            .collect::<Vec<_>>()
            .par_chunks(ROW_BLOCK)
            .map(|block| {
                let mut best = vec![None; n_images];
                for &row in block {
                    let s = dot(query, self.vector(row));
                    let slot: &mut Option<(f32, usize)> = &mut best[self.rows[row].image_ordinal as usize];
                    if slot.is_none_or(|(b, _)| s > b) {
                        *slot = Some((s, row));
                    }
                }
                best
            })
            .collect();
        let mut best = vec![None; n_images];
        for part in partials {
            for (slot, cand) in best.iter_mut().zip(part) {
                if let Some((s, row)) = cand {
                    if slot.is_none_or(|(b, _): (f32, usize)| s > b) {
                        *slot = Some((s, row));
                    }
                }
            }
        }
        best
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(12 + self.rows.len() * (24 + 4 * self.dim_d));
        buf.extend_from_slice(&INDEX_MAGIC);
        buf.extend_from_slice(&(self.dim_d as u32).to_le_bytes());
        buf.extend_from_slice(&(self.rows.len() as u32).to_le_bytes());
        for (i, r) in self.rows.iter().enumerate() {
            buf.extend_from_slice(&r.image_ordinal.to_le_bytes());
            buf.extend_from_slice(&r.region_id.to_le_bytes());
            for v in <[f32; 4]>::from(r.bbox) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in self.vector(i) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn decode(path: &Path, bytes: &[u8], image_ids: Vec<String>) -> Result<Self> {
        let format = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 12 || bytes[..4] != INDEX_MAGIC {
            return Err(format("missing CIX1 header".into()));
        }
        let word = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        let dim_d = word(4) as usize;
        let row_count = word(8) as usize;
        let row_bytes = 24 + 4 * dim_d;
        let expected = 12 + row_count * row_bytes;
        if bytes.len() != expected {
            return Err(Error::Length {
                path: path.to_path_buf(),
                expected,
                found: bytes.len(),
            });
        }
        let mut index = DescriptorIndex::new(dim_d);
        index.image_ids = image_ids;
        index.rows.reserve(row_count);
        index.vectors.reserve(row_count * dim_d);
        let f = |o: usize| f32::from_bits(word(o));
        for r in 0..row_count {
            let o = 12 + r * row_bytes;
            let ordinal = word(o);
            if ordinal as usize >= index.image_ids.len() {
                return Err(format(format!("row {r} references unknown image ordinal {ordinal}")));
            }
            index.rows.push(IndexRow {
                image_ordinal: ordinal,
                region_id: word(o + 4),
                bbox: BBox::new(f(o + 8), f(o + 12), f(o + 16), f(o + 20)),
            });
            for k in 0..dim_d {
                index.vectors.push(f(o + 24 + 4 * k));
            }
        }
        Ok(index)
    }
}

pub fn sidecar_path(index_path: &Path) -> PathBuf {
    let mut s = index_path.as_os_str().to_os_string();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_index(index: &DescriptorIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, index.encode()).map_err(|e| Error::io(path, e))?;
    write_json(
        &Sidecar {
            dim_d: index.dim_d,
            row_count: index.rows.len(),
            image_ids: index.image_ids.clone(),
        },
        sidecar_path(path),
    )
}

pub fn read_index(path: impl AsRef<Path>) -> Result<DescriptorIndex> {
    let path = path.as_ref();
    let sidecar: Sidecar = read_json(sidecar_path(path))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let index = DescriptorIndex::decode(path, &bytes, sidecar.image_ids)?;
    if index.dim_d != sidecar.dim_d || index.rows.len() != sidecar.row_count {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "sidecar disagrees with index header".into(),
        });
    }
    Ok(index)
}

/// Builds an index from per-image descriptor sets, in the given order.
/// Every image is registered even when it contributes no rows.
pub fn build_index<'a>(dim_d: usize, images: impl IntoIterator<Item = &'a ImageDescriptors>) -> Result<DescriptorIndex> {
    let mut index = DescriptorIndex::new(dim_d);
    for img in images {
        if img.dim_d != dim_d {
            return Err(Error::DimMismatch {
                expected: dim_d,
                got: img.dim_d,
            });
        }
        index.add_image(&img.image_id);
        for r in &img.regions {
            index.push(r)?;
        }
    }
    Ok(index)
}
