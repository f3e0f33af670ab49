//! Binary feature-grid (`.cft`) and descriptor-map (`.cdm`) files plus the
//! JSON dataset and query manifests.
//!
//! Both binary formats share one fixed little-endian layout:
//!
//! ```text
//! magic      4 bytes   "CFT1" | "CDM1"
//! field_0    u32       grid_h   | map_h
//! field_1    u32       grid_w   | map_w
//! field_2    u32       dim      | dim_d
//! field_3    u32       patch_px | stride_px
//! dtype      u32       0 = f32
//! payload    field_0 * field_1 * field_2 f32 values, row-major
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, GridDims};

pub const FEATURE_MAGIC: [u8; 4] = *b"CFT1";
pub const DESCRIPTOR_MAGIC: [u8; 4] = *b"CDM1";
pub const HEADER_BYTES: usize = 24;
const DTYPE_F32: u32 = 0;

/// Borrowed row-major matrix of `f32` points.
#[derive(Debug, Clone, Copy)]
pub struct PointView<'a> {
    data: &'a [f32],
    dim: usize,
}

impl<'a> PointView<'a> {
    pub fn new(data: &'a [f32], dim: usize) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim), "ragged point matrix");
        Self { data, dim }
    }

    #[inline]
    pub fn row(&self, i: u32) -> &'a [f32] {
        let start = i as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Patch features of one image.
///
/// Two views are kept: the raw rows as stored on disk (their L1 norms drive
/// the high-energy set) and an L2-normalized copy used for every dot product.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub grid_h: usize,
    pub grid_w: usize,
    pub dim: usize,
    pub patch_px: u32,
    raw: Vec<f32>,
    unit: Vec<f32>,
    l1_norms: Vec<f32>,
    degenerate_rows: Vec<u32>,
}

impl FeatureGrid {
    /// Builds a grid from raw (unnormalized) row-major features.
    pub fn from_raw(
        grid_h: usize,
        grid_w: usize,
        dim: usize,
        patch_px: u32,
        raw: Vec<f32>,
    ) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 || dim == 0 {
            return Err(Error::Validation(format!(
                "feature grid must be non-empty, got {grid_h}x{grid_w}x{dim}"
            )));
        }
        let expected = grid_h * grid_w * dim;
        if raw.len() != expected {
            return Err(Error::Validation(format!(
                "feature payload has {} values, expected {expected}",
                raw.len()
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("feature payload has non-finite values".into()));
        }

        let n = grid_h * grid_w;
        let mut unit = vec![0.0f32; expected];
        let mut l1_norms = Vec::with_capacity(n);
        let mut degenerate_rows = Vec::new();
        for (i, (src, dst)) in raw
            .chunks_exact(dim)
            .zip(unit.chunks_exact_mut(dim))
            .enumerate()
        {
            let l1: f64 = src.iter().map(|&v| (v as f64).abs()).sum();
            let l2: f64 = src.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            l1_norms.push(l1 as f32);
            if l2 == 0.0 {
                degenerate_rows.push(i as u32);
                continue;
            }
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s as f64 / l2) as f32;
            }
        }

        Ok(Self {
            grid_h,
            grid_w,
            dim,
            patch_px,
            raw,
            unit,
            l1_norms,
            degenerate_rows,
        })
    }

    pub fn dims(&self) -> GridDims {
        GridDims::new(self.grid_h, self.grid_w)
    }

    pub fn num_patches(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Raw rows exactly as stored.
    pub fn raw(&self) -> &[f32] {
        &self.raw
    }

    /// L2-normalized rows (zero rows stay zero).
    pub fn unit(&self) -> &[f32] {
        &self.unit
    }

    pub fn unit_points(&self) -> PointView<'_> {
        PointView::new(&self.unit, self.dim)
    }

    pub fn unit_row(&self, i: u32) -> &[f32] {
        self.unit_points().row(i)
    }

    /// Per-patch L1 norm of the raw rows.
    pub fn l1_norms(&self) -> &[f32] {
        &self.l1_norms
    }

    /// Rows whose raw vector was all zeros.
    pub fn degenerate_rows(&self) -> &[u32] {
        &self.degenerate_rows
    }

    pub fn has_degenerate_rows(&self) -> bool {
        !self.degenerate_rows.is_empty()
    }
}

/// Descriptor feature map of one image (e.g. a CNN block output).
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorMap {
    pub map_h: usize,
    pub map_w: usize,
    pub dim_d: usize,
    pub stride_px: u32,
    pub data: Vec<f32>,
}

impl DescriptorMap {
    pub fn new(map_h: usize, map_w: usize, dim_d: usize, stride_px: u32, data: Vec<f32>) -> Result<Self> {
        if map_h == 0 || map_w == 0 || dim_d == 0 {
            return Err(Error::Validation(format!(
                "descriptor map must be non-empty, got {map_h}x{map_w}x{dim_d}"
            )));
        }
        if stride_px == 0 {
            return Err(Error::Validation("descriptor map stride_px must be > 0".into()));
        }
        if data.len() != map_h * map_w * dim_d {
            return Err(Error::Validation(format!(
                "descriptor payload has {} values, expected {}",
                data.len(),
                map_h * map_w * dim_d
            )));
        }
        Ok(Self {
            map_h,
            map_w,
            dim_d,
            stride_px,
            data,
        })
    }

    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.map_w + col) * self.dim_d;
        &self.data[start..start + self.dim_d]
    }
}

fn encode(magic: [u8; 4], fields: [u32; 4], payload: &[f32]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_BYTES + payload.len() * 4);
    buf.extend_from_slice(&magic);
    for f in fields {
        buf.extend_from_slice(&f.to_le_bytes());
    }
    buf.extend_from_slice(&DTYPE_F32.to_le_bytes());
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Validation(format!("{what} = {v} does not fit in u32")))
}

/// Decodes a header + f32 payload, checking magic, dtype and payload length.
fn decode(path: &Path, bytes: &[u8], magic: [u8; 4]) -> Result<([u32; 4], Vec<f32>)> {
    if bytes.len() < 4 || bytes[..4] != magic {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(&magic),
                String::from_utf8_lossy(&bytes[..bytes.len().min(4)])
            ),
        });
    }
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected: HEADER_BYTES,
            found: bytes.len(),
        });
    }
    let word = |k: usize| {
        let o = 4 + 4 * k;
        u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]])
    };
    let fields = [word(0), word(1), word(2), word(3)];
    let dtype = word(4);
    if dtype != DTYPE_F32 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("unsupported dtype code {dtype}"),
        });
    }
    let count = fields[0] as usize * fields[1] as usize * fields[2] as usize;
    let expected = HEADER_BYTES + count * 4;
    if bytes.len() < expected {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes after payload", bytes.len() - expected),
        });
    }
    let payload = bytes[HEADER_BYTES..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((fields, payload))
}

/// Serializes the raw view of `grid` in `.cft` layout.
pub fn encode_feature_grid(grid: &FeatureGrid) -> Result<Vec<u8>> {
    let fields = [
        to_u32(grid.grid_h, "grid_h")?,
        to_u32(grid.grid_w, "grid_w")?,
        to_u32(grid.dim, "dim")?,
        grid.patch_px,
    ];
    Ok(encode(FEATURE_MAGIC, fields, &grid.raw))
}

pub fn write_feature_grid(grid: &FeatureGrid, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_feature_grid(grid)?)
}

pub fn decode_feature_grid(path: &Path, bytes: &[u8]) -> Result<FeatureGrid> {
    let (f, payload) = decode(path, bytes, FEATURE_MAGIC)?;
    FeatureGrid::from_raw(f[0] as usize, f[1] as usize, f[2] as usize, f[3], payload)
}

pub fn read_feature_grid(path: impl AsRef<Path>) -> Result<FeatureGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_grid(path, &bytes)
}

pub fn encode_descriptor_map(map: &DescriptorMap) -> Result<Vec<u8>> {
    let fields = [
        to_u32(map.map_h, "map_h")?,
        to_u32(map.map_w, "map_w")?,
        to_u32(map.dim_d, "dim_d")?,
        map.stride_px,
    ];
    Ok(encode(DESCRIPTOR_MAGIC, fields, &map.data))
}

pub fn write_descriptor_map(map: &DescriptorMap, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_descriptor_map(map)?)
}

pub fn read_descriptor_map(path: impl AsRef<Path>) -> Result<DescriptorMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (f, payload) = decode(path, &bytes, DESCRIPTOR_MAGIC)?;
    DescriptorMap::new(f[0] as usize, f[1] as usize, f[2] as usize, f[3], payload)
}

/// Ground-truth annotation attached to a manifest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub query_id: String,
    pub bbox: BBox,
    pub relevant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub feature_path: PathBuf,
    pub descriptor_path: PathBuf,
    pub image_w_px: u32,
    pub image_h_px: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<GroundTruthEntry>>,
}

/// `manifest.json`: one entry per corpus image. Relative paths resolve
/// against the manifest's own directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::Validation(format!("duplicate image_id {:?}", e.image_id)));
            }
        }
        Ok(())
    }

    /// Referenced files that do not exist, as `(image_id, path)`.
    pub fn missing_files(&self) -> Vec<(String, PathBuf)> {
        let mut out = Vec::new();
        for e in &self.entries {
            for p in [&e.feature_path, &e.descriptor_path] {
                let full = self.resolve(p);
                if !full.is_file() {
                    out.push((e.image_id.clone(), full));
                }
            }
        }
        out
    }

    pub fn entry(&self, image_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.image_id == image_id)
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    manifest.validate()?;
    manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(manifest)
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// One instance query: a box on a query image's descriptor map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub query_id: String,
    pub descriptor_path: PathBuf,
    pub bbox: BBox,
    pub image_w_px: u32,
    pub image_h_px: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuerySet {
    pub queries: Vec<QuerySpec>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl QuerySet {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

pub fn read_queries(path: impl AsRef<Path>) -> Result<QuerySet> {
    let path = path.as_ref();
    let mut set: QuerySet = read_json(path)?;
    let mut seen = HashSet::new();
    for q in &set.queries {
        if !seen.insert(q.query_id.as_str()) {
            return Err(Error::Validation(format!("duplicate query_id {:?}", q.query_id)));
        }
    }
    set.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(set)
}
