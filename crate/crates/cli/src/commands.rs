//! Subcommand implementations. Each returns whether every item succeeded;
//! hard errors (bad config, unreadable manifest) propagate as `Err`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use claid_core::decompose::HierarchyFile;
use claid_core::descriptor::describe_hierarchy;
use claid_core::eval::{default_recall_thresholds, evaluate, ground_truth_from_manifest, recall_at_iou, EvalReport};
use claid_core::feature_io::{read_json, read_queries, write_json, ManifestEntry};
use claid_core::index::{build_index, read_index, write_index};
use claid_core::synth::{generate_corpus, synth_image, SynthConfig};
use claid_core::{
    decompose, pool_query, read_descriptor_map, read_feature_grid, read_manifest, BBox, DatasetManifest,
    FeatureGrid, ImageDescriptors, RankedEntry, RankedResult,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;

/// Whether a command processed every item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    Partial,
}

impl Outcome {
    fn from_failures(n: usize) -> Self {
        if n == 0 {
            Outcome::Complete
        } else {
            Outcome::Partial
        }
    }

    pub fn and(self, other: Outcome) -> Outcome {
        if self == Outcome::Complete && other == Outcome::Complete {
            Outcome::Complete
        } else {
            Outcome::Partial
        }
    }
}

pub fn hierarchy_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{image_id}.hier.json"))
}

pub fn descriptors_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{image_id}.desc.json"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn check_image_id(id: &str) -> Result<()> {
    ensure!(
        !id.is_empty() && !id.contains(['/', '\\']) && id != "." && id != "..",
        "image id `{id}` cannot be used as a file name"
    );
    Ok(())
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    read_manifest(path).with_context(|| format!("loading manifest {}", path.display()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageStatus {
    pub image_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cut_count: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub emitted: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncated: Option<bool>,
    pub seconds: f64,
}

impl ImageStatus {
    fn failed(image_id: &str, err: anyhow::Error, seconds: f64) -> Self {
        Self {
            image_id: image_id.to_string(),
            error: Some(format!("{err:#}")),
            cut_count: None,
            nodes: None,
            emitted: None,
            truncated: None,
            seconds,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub config: Config,
    pub images: Vec<ImageStatus>,
    pub failed: usize,
    pub seconds: f64,
}

fn stage_report(stage: &str, cfg: &Config, images: Vec<ImageStatus>, started: Instant) -> StageReport {
    StageReport {
        stage: stage.to_string(),
        config: *cfg,
        failed: images.iter().filter(|s| s.error.is_some()).count(),
        images,
        seconds: started.elapsed().as_secs_f64(),
    }
}

fn validate_grid(entry: &ManifestEntry, grid: &FeatureGrid) -> Result<()> {
    let px = grid.patch_px as usize;
    let (w, h) = (grid.grid_w * px, grid.grid_h * px);
    ensure!(
        w <= entry.image_w_px as usize && h <= entry.image_h_px as usize,
        "grid {}x{} at {} px exceeds image size {}x{}",
        grid.grid_h,
        grid.grid_w,
        grid.patch_px,
        entry.image_w_px,
        entry.image_h_px
    );
    Ok(())
}

fn decompose_one(cfg: &Config, manifest: &DatasetManifest, entry: &ManifestEntry, out: &Path) -> Result<HierarchyFile> {
    check_image_id(&entry.image_id)?;
    let grid = read_feature_grid(manifest.resolve(&entry.feature_path))?;
    validate_grid(entry, &grid)?;
    let params = cfg.decompose_params(&entry.image_id)?;
    let h = decompose(&grid, &params)?;
    let file = HierarchyFile::from_hierarchy(&h, &entry.image_id, grid.patch_px, entry.image_w_px, entry.image_h_px, &params)?;
    write_json(&file, hierarchy_path(out, &entry.image_id))?;
    Ok(file)
}

/// Decomposes every manifest image into `out/<image_id>.hier.json`.
pub fn run_decompose(cfg: &Config, manifest_path: &Path, out: &Path) -> Result<(Outcome, StageReport, Vec<HierarchyFile>)> {
    let started = Instant::now();
    let manifest = load_manifest(manifest_path)?;
    create_dir(out)?;
    let results: Vec<(ImageStatus, Option<HierarchyFile>)> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let t = Instant::now();
            match decompose_one(cfg, &manifest, entry, out) {
                Ok(file) => (
                    ImageStatus {
                        image_id: entry.image_id.clone(),
                        error: None,
                        cut_count: Some(file.cut_count),
                        nodes: Some(file.nodes.len()),
                        emitted: Some(file.emitted.len()),
                        truncated: Some(file.truncated),
                        seconds: t.elapsed().as_secs_f64(),
                    },
                    Some(file),
                ),
                Err(e) => (ImageStatus::failed(&entry.image_id, e, t.elapsed().as_secs_f64()), None),
            }
        })
        .collect();
    let (statuses, files): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let report = stage_report("decompose", cfg, statuses, started);
    write_json(&report, out.join("decompose_report.json"))?;
    Ok((Outcome::from_failures(report.failed), report, files.into_iter().flatten().collect()))
}

fn describe_one(cfg: &Config, manifest: &DatasetManifest, entry: &ManifestEntry, hier_dir: &Path, out: &Path) -> Result<ImageDescriptors> {
    check_image_id(&entry.image_id)?;
    let hier: HierarchyFile = read_json(hierarchy_path(hier_dir, &entry.image_id))?;
    ensure!(hier.image_id == entry.image_id, "hierarchy file belongs to `{}`", hier.image_id);
    let map = read_descriptor_map(manifest.resolve(&entry.descriptor_path))?;
    let desc = describe_hierarchy(&map, &hier, cfg.pooling)?;
    write_json(&desc, descriptors_path(out, &entry.image_id))?;
    Ok(desc)
}

/// Pools descriptors for every emitted region into `out/<image_id>.desc.json`.
pub fn run_describe(cfg: &Config, manifest_path: &Path, hier_dir: &Path, out: &Path) -> Result<(Outcome, StageReport)> {
    let started = Instant::now();
    let manifest = load_manifest(manifest_path)?;
    create_dir(out)?;
    let statuses: Vec<ImageStatus> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let t = Instant::now();
            match describe_one(cfg, &manifest, entry, hier_dir, out) {
                Ok(d) => ImageStatus {
                    image_id: entry.image_id.clone(),
                    error: None,
                    cut_count: None,
                    nodes: None,
                    emitted: Some(d.regions.iter().filter(|r| !r.degenerate).count()),
                    truncated: None,
                    seconds: t.elapsed().as_secs_f64(),
                },
                Err(e) => ImageStatus::failed(&entry.image_id, e, t.elapsed().as_secs_f64()),
            }
        })
        .collect();
    let report = stage_report("describe", cfg, statuses, started);
    write_json(&report, out.join("describe_report.json"))?;
    Ok((Outcome::from_failures(report.failed), report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexReport {
    pub config: Config,
    pub dim_d: usize,
    pub images: usize,
    pub rows: usize,
    pub errors: Vec<ImageStatus>,
}

/// Builds an index from `desc_dir`, in manifest order.
pub fn run_index(cfg: &Config, manifest_path: &Path, desc_dir: &Path, out: &Path) -> Result<(Outcome, IndexReport)> {
    let manifest = load_manifest(manifest_path)?;
    let mut loaded = Vec::new();
    let mut errors = Vec::new();
    for entry in &manifest.entries {
        let r = check_image_id(&entry.image_id)
            .and_then(|_| Ok(read_json::<ImageDescriptors>(descriptors_path(desc_dir, &entry.image_id))?));
        match r {
            Ok(d) if loaded.first().is_some_and(|f: &ImageDescriptors| f.dim_d != d.dim_d) => errors.push(
                ImageStatus::failed(&entry.image_id, anyhow::anyhow!("descriptor dim {} differs from {}", d.dim_d, loaded[0].dim_d), 0.0),
            ),
            Ok(d) => loaded.push(d),
            Err(e) => errors.push(ImageStatus::failed(&entry.image_id, e, 0.0)),
        }
    }
    let Some(first) = loaded.first() else {
        bail!("no descriptor files could be loaded from {}", desc_dir.display());
    };
    let index = build_index(first.dim_d, &loaded)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_index(&index, out)?;
    let report = IndexReport {
        config: *cfg,
        dim_d: index.dim(),
        images: index.image_count(),
        rows: index.row_count(),
        errors,
    };
    write_json(&report, PathBuf::from(format!("{}.report.json", out.display())))?;
    Ok((Outcome::from_failures(report.errors.len()), report))
}

/// One output line of `search`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultLine {
    pub query_id: String,
    pub rank: usize,
    pub image_id: String,
    pub score: f32,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryStatus {
    pub query_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchReport {
    pub config: Config,
    pub queries: usize,
    pub results: usize,
    pub errors: Vec<QueryStatus>,
    pub seconds: f64,
}

/// Ranks indexed images for every query and writes JSON lines.
pub fn run_search(cfg: &Config, index_path: &Path, queries_path: &Path, out: &Path) -> Result<(Outcome, SearchReport)> {
    let started = Instant::now();
    let index = read_index(index_path).with_context(|| format!("loading index {}", index_path.display()))?;
    let queries = read_queries(queries_path).with_context(|| format!("loading queries {}", queries_path.display()))?;
    let k = if cfg.top_k == 0 { index.image_count() } else { cfg.top_k };
    let ranked: Vec<Result<RankedResult>> = queries
        .queries
        .par_iter()
        .map(|q| {
            let map = read_descriptor_map(queries.resolve(&q.descriptor_path))?;
            let pooled = pool_query(&map, &q.bbox, cfg.pooling)?;
            ensure!(!pooled.degenerate, "query descriptor pooled to a zero vector");
            if k == 0 {
                return Ok(RankedResult::default());
            }
            Ok(index.search(&pooled.vector, k)?)
        })
        .collect();
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(file);
    let mut errors = Vec::new();
    let mut lines = 0;
    for (q, r) in queries.queries.iter().zip(ranked) {
        match r {
            Ok(r) => {
                for (i, e) in r.entries.iter().enumerate() {
                    let line = ResultLine {
                        query_id: q.query_id.clone(),
                        rank: i + 1,
                        image_id: e.image_id.clone(),
                        score: e.score,
                        bbox: e.best_bbox,
                    };
                    serde_json::to_writer(&mut w, &line)?;
                    w.write_all(b"\n")?;
                    lines += 1;
                }
            }
            Err(e) => errors.push(QueryStatus {
                query_id: q.query_id.clone(),
                error: format!("{e:#}"),
            }),
        }
    }
    w.flush()?;
    let report = SearchReport {
        config: *cfg,
        queries: queries.queries.len(),
        results: lines,
        errors,
        seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&report, PathBuf::from(format!("{}.report.json", out.display())))?;
    Ok((Outcome::from_failures(report.errors.len()), report))
}

/// Reads result lines back into per-query rankings ordered by rank.
pub fn read_results(path: &Path) -> Result<BTreeMap<String, RankedResult>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines: BTreeMap<String, Vec<ResultLine>> = BTreeMap::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ResultLine =
            serde_json::from_str(&line).with_context(|| format!("{}:{}: malformed result line", path.display(), n + 1))?;
        lines.entry(r.query_id.clone()).or_default().push(r);
    }
    Ok(lines
        .into_iter()
        .map(|(q, mut v)| {
            v.sort_by_key(|r| r.rank);
            let entries = v
                .into_iter()
                .map(|r| RankedEntry {
                    image_id: r.image_id,
                    score: r.score,
                    best_region_id: 0,
                    best_bbox: r.bbox,
                })
                .collect();
            (q, RankedResult { entries })
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutput {
    pub config: Config,
    #[serde(flatten)]
    pub report: EvalReport,
}

/// Region-proposal recall over every annotated box, using emitted regions
/// from `hier_dir` as proposals.
fn proposal_recall(manifest: &DatasetManifest, hier_dir: &Path) -> Result<Vec<(f64, f64)>> {
    let mut proposals = Vec::new();
    let mut gts = Vec::new();
    for entry in &manifest.entries {
        let boxes: Vec<BBox> = entry.ground_truth.iter().flatten().filter(|g| g.relevant).map(|g| g.bbox).collect();
        if boxes.is_empty() {
            continue;
        }
        let hier: HierarchyFile = read_json(hierarchy_path(hier_dir, &entry.image_id))?;
        proposals.push(hier.emitted.iter().map(|&id| hier.nodes[id as usize].bbox).collect());
        gts.push(boxes);
    }
    Ok(recall_at_iou(&proposals, &gts, &default_recall_thresholds())?)
}

/// Scores a results file against manifest ground truth.
pub fn run_eval(cfg: &Config, manifest_path: &Path, results_path: &Path, hier_dir: Option<&Path>, out: Option<&Path>) -> Result<EvalOutput> {
    let manifest = load_manifest(manifest_path)?;
    let gt = ground_truth_from_manifest(&manifest);
    let results = read_results(results_path)?;
    let curve = match hier_dir {
        Some(d) => proposal_recall(&manifest, d)?,
        None => Vec::new(),
    };
    let mut report = evaluate(&results, &gt, curve)?;
    for q in gt.keys().filter(|q| !results.contains_key(*q)) {
        report.notes.push(format!("query `{q}` has ground truth but no results"));
    }
    let output = EvalOutput { config: *cfg, report };
    if let Some(out) = out {
        write_json(&output, out)?;
    }
    Ok(output)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: Config,
    pub outcome: String,
    pub features_emitted: usize,
    /// Emitted regions the same trees give with the dummy filter disabled.
    pub features_without_dummy_filter: usize,
    /// Emitted regions the same trees give with the dummy filter enabled.
    pub features_with_dummy_filter: usize,
    pub cut_counts: BTreeMap<String, u32>,
    pub eval: Option<EvalReport>,
    pub seconds: f64,
}

/// Runs decompose, describe, index, search and (with ground truth) eval.
pub fn run_pipeline(
    cfg: &Config,
    manifest_path: &Path,
    queries_path: &Path,
    out: &Path,
    no_dummy_filter: bool,
) -> Result<(Outcome, PipelineReport)> {
    let started = Instant::now();
    let filter_tau2 = if cfg.tau2 < 0.0 {
        claid_core::DecomposeParams::default().tau2
    } else {
        cfg.tau2
    };
    let mut cfg = *cfg;
    if no_dummy_filter {
        cfg.tau2 = -1.0;
    }
    create_dir(out)?;
    let hier_dir = out.join("hierarchies");
    let desc_dir = out.join("descriptors");
    let index_path = out.join("index.cix");
    let results_path = out.join("results.jsonl");
    let (o1, _, files) = run_decompose(&cfg, manifest_path, &hier_dir)?;
    let (o2, _) = run_describe(&cfg, manifest_path, &hier_dir, &desc_dir)?;
    let (o3, _) = run_index(&cfg, manifest_path, &desc_dir, &index_path)?;
    let (o4, _) = run_search(&cfg, &index_path, queries_path, &results_path)?;
    let manifest = load_manifest(manifest_path)?;
    let eval = if manifest.entries.iter().any(|e| e.ground_truth.is_some()) {
        Some(run_eval(&cfg, manifest_path, &results_path, Some(&hier_dir), Some(&out.join("eval.json")))?.report)
    } else {
        None
    };
    let outcome = o1.and(o2).and(o3).and(o4);
    let report = PipelineReport {
        config: cfg,
        outcome: format!("{outcome:?}").to_lowercase(),
        features_emitted: files.iter().map(|f| f.emitted.len()).sum(),
        features_without_dummy_filter: files.iter().map(|f| f.count_emitted_with(-1.0, cfg.min_region_patches)).sum(),
        features_with_dummy_filter: files.iter().map(|f| f.count_emitted_with(filter_tau2, cfg.min_region_patches)).sum(),
        cut_counts: files.iter().map(|f| (f.image_id.clone(), f.cut_count)).collect(),
        eval,
        seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&report, out.join("pipeline_report.json"))?;
    Ok((outcome, report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: Config,
    pub source: String,
    pub grid: [usize; 3],
    pub repeats: usize,
    pub cut_count: u32,
    pub nodes: usize,
    /// Fastest of `repeats` single-threaded decompositions.
    pub seconds: f64,
    pub seconds_per_cut: f64,
}

/// Times single-threaded decomposition of one grid (a synthetic
/// 45×60×768 grid when `features` is `None`).
pub fn run_bench(cfg: &Config, features: Option<&Path>, repeats: usize) -> Result<BenchReport> {
    ensure!(repeats >= 1, "repeats must be >= 1");
    let (grid, source) = match features {
        Some(p) => (read_feature_grid(p)?, p.display().to_string()),
        None => (synth_image("bench", &SynthConfig::throughput())?.grid, "synthetic".to_string()),
    };
    let params = cfg.decompose_params("bench")?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..repeats {
        let t = Instant::now();
        let h = pool.install(|| decompose(&grid, &params))?;
        best = best.min(t.elapsed().as_secs_f64());
        last = Some(h);
    }
    let h = last.expect("at least one repeat");
    Ok(BenchReport {
        config: *cfg,
        source,
        grid: [grid.grid_h, grid.grid_w, grid.dim],
        repeats,
        cut_count: h.cut_count,
        nodes: h.nodes.len(),
        seconds: best,
        seconds_per_cut: if h.cut_count == 0 { 0.0 } else { best / h.cut_count as f64 },
    })
}

/// Writes a synthetic corpus with planted instances and ground truth.
pub fn run_synth(out: &Path, images: usize, queries: usize, seed: u64) -> Result<SynthConfig> {
    let cfg = SynthConfig {
        images,
        queries,
        seed,
        ..SynthConfig::default()
    };
    let corpus = generate_corpus(&cfg)?;
    claid_core::synth::write_corpus(&corpus, out)?;
    Ok(cfg)
}
