//! Synthetic corpora with planted instances.
//!
//! Each image has two to four rectangular blobs over a background. Blob
//! patches share an instance prototype (pairwise cosine ≈ 0.98) and carry
//! about three times the raw energy of background patches, whose prototype
//! is orthogonal to every blob. Some blobs contain a nested "logo" whose
//! prototype has cosine 0.1 with its host, below the affinity threshold.
//!
//! Layouts are rejection-sampled so that, under default decomposition
//! parameters, every blob lies in the high-energy set and the background's
//! dummy score stays below 0.2. Blobs sit on even patch coordinates so
//! that each 2×2 patch block maps onto exactly one descriptor cell.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::affinity::high_energy_count;
use crate::error::{Error, Result};
use crate::feature_io::{
    write_descriptor_map, write_feature_grid, write_json, DatasetManifest, DescriptorMap, FeatureGrid,
    GroundTruthEntry, ManifestEntry, QuerySet, QuerySpec,
};
use crate::geometry::{encode_runs, BBox, GridDims, MaskRun};
use crate::rng::{image_seed, rng_from_seed};

/// Cosine between a logo prototype and its host blob.
const LOGO_HOST_COSINE: f32 = 0.1;
/// Maximum background dummy score accepted for a layout.
const MAX_BACKGROUND_XI: f64 = 0.19;
const MAX_LAYOUT_ATTEMPTS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub images: usize,
    pub queries: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub dim: usize,
    pub patch_px: u32,
    pub dim_d: usize,
    pub min_blobs: usize,
    pub max_blobs: usize,
    /// Blob side lengths in patches, even, inclusive.
    pub min_side: usize,
    pub max_side: usize,
    /// Probability that a blob of side ≥ 6 hosts a nested logo.
    pub nested_probability: f64,
    /// Per-coordinate noise is `noise / sqrt(dim)`.
    pub feature_noise: f32,
    pub descriptor_noise: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            images: 50,
            queries: 20,
            grid_h: 24,
            grid_w: 32,
            dim: 64,
            patch_px: 8,
            dim_d: 256,
            min_blobs: 2,
            max_blobs: 4,
            min_side: 4,
            max_side: 8,
            nested_probability: 0.35,
            feature_noise: 0.15,
            descriptor_noise: 0.1,
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// A single 45-row, 60-column, 768-dim grid (a 480×360 image at 8 px
    /// patches) with larger blobs, used for timing.
    pub fn throughput() -> Self {
        Self {
            images: 1,
            queries: 0,
            grid_h: 45,
            grid_w: 60,
            dim: 768,
            dim_d: 64,
            min_blobs: 3,
            max_blobs: 6,
            min_side: 6,
            max_side: 14,
            ..Self::default()
        }
    }

    pub fn stride_px(&self) -> u32 {
        self.patch_px * 2
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.grid_h >= 8
            && self.grid_w >= 8
            && self.dim >= 8
            && self.dim_d >= 1
            && self.patch_px > 0
            && self.min_blobs >= 1
            && self.min_blobs <= self.max_blobs
            && self.min_side >= 2
            && self.min_side.is_multiple_of(2)
            && self.max_side >= self.min_side
            && self.queries <= self.images * self.min_blobs;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid synthetic corpus config: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    /// A blob without a logo.
    Plain,
    /// A blob hosting a logo; its mask includes the logo.
    Coarse,
    /// A logo nested inside a `Coarse` blob.
    Fine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRegion {
    pub instance_id: String,
    pub kind: PlantKind,
    /// Patch-grid rectangle `(row, col, height, width)`.
    pub rect: (usize, usize, usize, usize),
    /// Sorted member patches.
    pub members: Vec<u32>,
    pub bbox: BBox,
    /// Index of the hosting region for `Fine` plantings.
    pub host: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SynthImage {
    pub image_id: String,
    pub grid: FeatureGrid,
    pub map: DescriptorMap,
    pub planted: Vec<PlantedRegion>,
    pub image_w_px: u32,
    pub image_h_px: u32,
}

#[derive(Debug, Clone)]
pub struct SynthQuery {
    pub query_id: String,
    pub map: DescriptorMap,
    pub bbox: BBox,
    pub source_image: String,
    pub gt_bbox: BBox,
    pub instance_id: String,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub images: Vec<SynthImage>,
    pub queries: Vec<SynthQuery>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f32]) {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// `count` orthonormal vectors by Gram-Schmidt on Gaussian draws.
fn orthonormal(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f32>> {
    assert!(count <= dim);
    let mut basis: Vec<Vec<f32>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian_vec(rng, dim);
        for b in &basis {
            let d: f32 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if n > 1e-3 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    r: usize,
    c: usize,
    h: usize,
    w: usize,
}

impl Rect {
    fn area(&self) -> usize {
        self.h * self.w
    }

    /// Chebyshev cell gap of at least `gap` empty rows/cols between rects.
    fn separated(&self, o: &Rect, gap: usize) -> bool {
        self.r + self.h + gap <= o.r
            || o.r + o.h + gap <= self.r
            || self.c + self.w + gap <= o.c
            || o.c + o.w + gap <= self.c
    }

    fn cells(&self, dims: GridDims) -> Vec<u32> {
        let mut v = Vec::with_capacity(self.area());
        for r in self.r..self.r + self.h {
            for c in self.c..self.c + self.w {
                v.push(dims.index(r, c));
            }
        }
        v
    }

    fn bbox(&self, patch_px: u32) -> BBox {
        let p = patch_px as f32;
        BBox::new(
            self.c as f32 * p,
            self.r as f32 * p,
            (self.c + self.w) as f32 * p,
            (self.r + self.h) as f32 * p,
        )
    }
}

struct Layout {
    blobs: Vec<Rect>,
    /// Optional logo rect per blob.
    logos: Vec<Option<Rect>>,
}

fn even_in(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    lo + 2 * rng.random_range(0..=(hi - lo) / 2)
}

fn sample_layout(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Layout> {
    let n = cfg.grid_h * cfg.grid_w;
    let h_count = high_energy_count(0.30, n);
    for _ in 0..MAX_LAYOUT_ATTEMPTS {
        let k = rng.random_range(cfg.min_blobs..=cfg.max_blobs);
        let mut blobs: Vec<Rect> = Vec::with_capacity(k);
        let mut placed = true;
        for _ in 0..k {
            let h = even_in(rng, cfg.min_side, cfg.max_side);
            let w = even_in(rng, cfg.min_side, cfg.max_side);
            if h + 4 > cfg.grid_h || w + 4 > cfg.grid_w {
                placed = false;
                break;
            }
            let mut ok = None;
            for _ in 0..200 {
                // two-cell margin keeps the background connected
                let r = even_in(rng, 2, cfg.grid_h - h - 2);
                let c = even_in(rng, 2, cfg.grid_w - w - 2);
                let cand = Rect { r, c, h, w };
                if blobs.iter().all(|b| b.separated(&cand, 2)) {
                    ok = Some(cand);
                    break;
                }
            }
            match ok {
                Some(rect) => blobs.push(rect),
                None => {
                    placed = false;
                    break;
                }
            }
        }
        if !placed {
            continue;
        }
        let fg: usize = blobs.iter().map(Rect::area).sum();
        if fg > h_count {
            continue;
        }
        let bg_xi = (h_count - fg) as f64 / (n - fg) as f64;
        if bg_xi > MAX_BACKGROUND_XI {
            continue;
        }
        let logos = blobs
            .iter()
            .map(|b| {
                if b.h >= 6 && b.w >= 6 && rng.random_bool(cfg.nested_probability) {
                    let lh = if b.h >= 8 { 4 } else { 2 };
                    let lw = if b.w >= 8 { 4 } else { 2 };
                    Some(Rect {
                        r: b.r + even_in(rng, 2, b.h - lh - 2),
                        c: b.c + even_in(rng, 2, b.w - lw - 2),
                        h: lh,
                        w: lw,
                    })
                } else {
                    None
                }
            })
            .collect();
        return Ok(Layout { blobs, logos });
    }
    Err(Error::Validation("could not sample a synthetic layout; grid too small for blob sizes".into()))
}

/// Per-patch label: 0 = background, `1 + b` = blob `b`, `1 + k + b` = logo in blob `b`.
fn label_grid(layout: &Layout, dims: GridDims) -> Vec<usize> {
    let k = layout.blobs.len();
    let mut labels = vec![0usize; dims.len()];
    for (b, rect) in layout.blobs.iter().enumerate() {
        for p in rect.cells(dims) {
            labels[p as usize] = 1 + b;
        }
        if let Some(logo) = &layout.logos[b] {
            for p in logo.cells(dims) {
                labels[p as usize] = 1 + k + b;
            }
        }
    }
    labels
}

fn noisy(rng: &mut ChaCha8Rng, proto: &[f32], sigma: f32, scale: f32) -> impl Iterator<Item = f32> {
    let noise: Vec<f32> = (0..proto.len())
        .map(|_| StandardNormal.sample(&mut *rng))
        .collect::<Vec<f32>>();
    let mut v: Vec<f32> = proto.iter().zip(noise).map(|(p, e)| p + sigma * e).collect();
    normalize(&mut v);
    v.into_iter().map(move |x| x * scale)
}

/// Descriptor prototypes for one image: background, blobs, logos.
struct DescriptorProtos {
    background: Vec<f32>,
    blobs: Vec<Vec<f32>>,
    logos: Vec<Vec<f32>>,
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let mut v = gaussian_vec(rng, dim);
    normalize(&mut v);
    v
}

fn descriptor_map_for(
    cfg: &SynthConfig,
    labels: &[usize],
    k: usize,
    protos: &DescriptorProtos,
    rng: &mut ChaCha8Rng,
) -> Result<DescriptorMap> {
    let (mh, mw) = (cfg.grid_h.div_ceil(2), cfg.grid_w.div_ceil(2));
    let sigma = cfg.descriptor_noise / (cfg.dim_d as f32).sqrt();
    let mut data = Vec::with_capacity(mh * mw * cfg.dim_d);
    for i in 0..mh {
        for j in 0..mw {
            let label = labels[(2 * i) * cfg.grid_w + 2 * j];
            let proto = match label {
                0 => &protos.background,
                l if l <= k => &protos.blobs[l - 1],
                l => &protos.logos[l - 1 - k],
            };
            data.extend(noisy(rng, proto, sigma, 1.0));
        }
    }
    DescriptorMap::new(mh, mw, cfg.dim_d, cfg.stride_px(), data)
}

/// Generates one image from its own seed.
pub fn synth_image(image_id: &str, cfg: &SynthConfig) -> Result<SynthImage> {
    cfg.validate()?;
    let mut rng = rng_from_seed(image_seed(image_id, cfg.seed));
    let dims = GridDims::new(cfg.grid_h, cfg.grid_w);
    let layout = sample_layout(cfg, &mut rng)?;
    let k = layout.blobs.len();
    let labels = label_grid(&layout, dims);

    // feature prototypes: background, k blobs, k logo directions
    let basis = orthonormal(&mut rng, 1 + 2 * k, cfg.dim);
    let mut logo_protos = Vec::with_capacity(k);
    for b in 0..k {
        let mut v: Vec<f32> = basis[1 + b]
            .iter()
            .zip(&basis[1 + k + b])
            .map(|(h, q)| LOGO_HOST_COSINE * h + (1.0 - LOGO_HOST_COSINE * LOGO_HOST_COSINE).sqrt() * q)
            .collect();
        normalize(&mut v);
        logo_protos.push(v);
    }
    let sigma = cfg.feature_noise / (cfg.dim as f32).sqrt();
    let mut raw = Vec::with_capacity(dims.len() * cfg.dim);
    for &label in &labels {
        let (proto, scale) = match label {
            0 => (&basis[0], rng.random_range(0.8f32..1.2)),
            l if l <= k => (&basis[l], rng.random_range(2.8f32..3.4)),
            l => (&logo_protos[l - 1 - k], rng.random_range(2.8f32..3.4)),
        };
        raw.extend(noisy(&mut rng, proto, sigma, scale));
    }
    let grid = FeatureGrid::from_raw(cfg.grid_h, cfg.grid_w, cfg.dim, cfg.patch_px, raw)?;

    let protos = DescriptorProtos {
        background: random_unit(&mut rng, cfg.dim_d),
        blobs: (0..k).map(|_| random_unit(&mut rng, cfg.dim_d)).collect(),
        logos: (0..k).map(|_| random_unit(&mut rng, cfg.dim_d)).collect(),
    };
    let map = descriptor_map_for(cfg, &labels, k, &protos, &mut rng)?;

    let mut planted = Vec::new();
    for (b, rect) in layout.blobs.iter().enumerate() {
        let host_index = planted.len();
        planted.push(PlantedRegion {
            instance_id: format!("{image_id}/blob{b}"),
            kind: if layout.logos[b].is_some() {
                PlantKind::Coarse
            } else {
                PlantKind::Plain
            },
            rect: (rect.r, rect.c, rect.h, rect.w),
            members: rect.cells(dims),
            bbox: rect.bbox(cfg.patch_px),
            host: None,
        });
        if let Some(logo) = &layout.logos[b] {
            planted.push(PlantedRegion {
                instance_id: format!("{image_id}/blob{b}/logo"),
                kind: PlantKind::Fine,
                rect: (logo.r, logo.c, logo.h, logo.w),
                members: logo.cells(dims),
                bbox: logo.bbox(cfg.patch_px),
                host: Some(host_index),
            });
        }
    }
    for p in &mut planted {
        p.members.sort_unstable();
    }

    Ok(SynthImage {
        image_id: image_id.to_string(),
        grid,
        map,
        planted,
        image_w_px: cfg.grid_w as u32 * cfg.patch_px,
        image_h_px: cfg.grid_h as u32 * cfg.patch_px,
    })
}

/// Builds a query image that shows `region` (and any nested logo) verbatim
/// at a random location on a fresh background.
fn synth_query(query_id: &str, img: &SynthImage, region_index: usize, cfg: &SynthConfig) -> Result<SynthQuery> {
    let mut rng = rng_from_seed(image_seed(query_id, cfg.seed ^ 0x5155_4552_5953_4554));
    let region = &img.planted[region_index];
    let (r, c, h, w) = region.rect;
    let (mh, mw) = (img.map.map_h, img.map.map_w);
    let (ch, cw) = (h / 2, w / 2);
    let qi = rng.random_range(0..=mh - ch);
    let qj = rng.random_range(0..=mw - cw);
    let background = random_unit(&mut rng, cfg.dim_d);
    let sigma = cfg.descriptor_noise / (cfg.dim_d as f32).sqrt();
    let mut data = Vec::with_capacity(mh * mw * cfg.dim_d);
    for i in 0..mh {
        for j in 0..mw {
            if (qi..qi + ch).contains(&i) && (qj..qj + cw).contains(&j) {
                let src = img.map.cell(r / 2 + (i - qi), c / 2 + (j - qj)).to_vec();
                data.extend(noisy(&mut rng, &src, sigma, 1.0));
            } else {
                data.extend(noisy(&mut rng, &background, sigma, 1.0));
            }
        }
    }
    let s = cfg.stride_px() as f32;
    Ok(SynthQuery {
        query_id: query_id.to_string(),
        map: DescriptorMap::new(mh, mw, cfg.dim_d, cfg.stride_px(), data)?,
        bbox: BBox::new(qj as f32 * s, qi as f32 * s, (qj + cw) as f32 * s, (qi + ch) as f32 * s),
        source_image: img.image_id.clone(),
        gt_bbox: region.bbox,
        instance_id: region.instance_id.clone(),
    })
}

pub fn image_id(i: usize) -> String {
    format!("img_{i:03}")
}

pub fn query_id(i: usize) -> String {
    format!("q_{i:03}")
}

/// Generates the full corpus. Query `q` shows the first top-level blob of
/// image `q * images / queries`, so each query's instance exists in exactly
/// one corpus image.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let images = (0..cfg.images)
        .map(|i| synth_image(&image_id(i), cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut queries = Vec::with_capacity(cfg.queries);
    for q in 0..cfg.queries {
        let img = &images[q * cfg.images / cfg.queries];
        queries.push(synth_query(&query_id(q), img, 0, cfg)?);
    }
    Ok(SynthCorpus {
        config: *cfg,
        images,
        queries,
    })
}

/// Planted-region record written next to the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedFileEntry {
    pub image_id: String,
    pub instance_id: String,
    pub kind: PlantKind,
    pub host: Option<usize>,
    pub bbox: BBox,
    pub runs: Vec<MaskRun>,
}

/// Writes `features/`, `descriptors/`, `queries/`, `manifest.json`,
/// `queries.json` and `planted.json` under `dir`.
pub fn write_corpus(corpus: &SynthCorpus, dir: impl AsRef<Path>) -> Result<(DatasetManifest, QuerySet)> {
    let dir = dir.as_ref();
    for sub in ["features", "descriptors", "queries"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut manifest = DatasetManifest::default();
    let mut planted = Vec::new();
    for img in &corpus.images {
        let feature_path = Path::new("features").join(format!("{}.cft", img.image_id));
        let descriptor_path = Path::new("descriptors").join(format!("{}.cdm", img.image_id));
        write_feature_grid(&img.grid, dir.join(&feature_path))?;
        write_descriptor_map(&img.map, dir.join(&descriptor_path))?;
        let gt: Vec<GroundTruthEntry> = corpus
            .queries
            .iter()
            .filter(|q| q.source_image == img.image_id)
            .map(|q| GroundTruthEntry {
                query_id: q.query_id.clone(),
                bbox: q.gt_bbox,
                relevant: true,
            })
            .collect();
        manifest.entries.push(ManifestEntry {
            image_id: img.image_id.clone(),
            feature_path,
            descriptor_path,
            image_w_px: img.image_w_px,
            image_h_px: img.image_h_px,
            ground_truth: if gt.is_empty() { None } else { Some(gt) },
        });
        for p in &img.planted {
            planted.push(PlantedFileEntry {
                image_id: img.image_id.clone(),
                instance_id: p.instance_id.clone(),
                kind: p.kind,
                host: p.host,
                bbox: p.bbox,
                runs: encode_runs(&p.members, img.grid.dims()),
            });
        }
    }
    let mut queries = QuerySet::default();
    for q in &corpus.queries {
        let descriptor_path = Path::new("queries").join(format!("{}.cdm", q.query_id));
        write_descriptor_map(&q.map, dir.join(&descriptor_path))?;
        queries.queries.push(QuerySpec {
            query_id: q.query_id.clone(),
            descriptor_path,
            bbox: q.bbox,
            image_w_px: q.map.map_w as u32 * q.map.stride_px,
            image_h_px: q.map.map_h as u32 * q.map.stride_px,
        });
    }
    write_json(&manifest, dir.join("manifest.json"))?;
    write_json(&queries, dir.join("queries.json"))?;
    write_json(&planted, dir.join("planted.json"))?;
    manifest.base_dir = dir.to_path_buf();
    queries.base_dir = dir.to_path_buf();
    Ok((manifest, queries))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            images: 3,
            queries: 2,
            ..Default::default()
        };
        let a = generate_corpus(&cfg).unwrap();
        let b = generate_corpus(&cfg).unwrap();
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x.grid, y.grid);
            assert_eq!(x.map, y.map);
            assert_eq!(x.planted, y.planted);
        }
    }

    #[test]
    fn blobs_are_high_energy_and_disjoint() {
        let img = synth_image("x", &SynthConfig::default()).unwrap();
        let l1 = img.grid.l1_norms();
        let fg: Vec<u32> = img
            .planted
            .iter()
            .filter(|p| p.kind != PlantKind::Fine)
            .flat_map(|p| p.members.clone())
            .collect();
        let min_fg = fg.iter().map(|&i| l1[i as usize]).fold(f32::INFINITY, f32::min);
        let bg_max = (0..l1.len() as u32)
            .filter(|i| !fg.contains(i))
            .map(|i| l1[i as usize])
            .fold(0.0, f32::max);
        assert!(min_fg > bg_max);
        let mut sorted = fg.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), fg.len());
    }

    #[test]
    fn query_box_is_cell_aligned() {
        let cfg = SynthConfig {
            images: 2,
            queries: 2,
            ..Default::default()
        };
        let c = generate_corpus(&cfg).unwrap();
        for q in &c.queries {
            assert_eq!(q.bbox.x0 % 16.0, 0.0);
            assert_eq!(q.bbox.width(), q.gt_bbox.width());
            assert_eq!(q.bbox.height(), q.gt_bbox.height());
        }
    }
}
