//! Hierarchical decomposition of a feature grid into candidate instance
//! regions.
//!
//! Starting from the root (every patch), nodes are popped from a FIFO
//! worklist. A popped node is emitted as a region when it is not the root,
//! its dummy score exceeds `tau2`, and it has at least `min_region_patches`
//! members. It is bisected when its average connectivity is below `tau1`;
//! each half is then split into spatially connected components and every
//! component becomes a child on the worklist. Dummy nodes are still split.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::affinity::{high_energy_set, seeds_from_degrees, subset_stats, AffinityParams};
use crate::error::{Error, Result};
use crate::feature_io::FeatureGrid;
use crate::geometry::{decode_runs, encode_runs, members_to_mask, BBox, Connectivity, GridDims, MaskRun};
use crate::ksums::{bisect, InitMode, KsumsParams};
use crate::rng::node_seed;

/// Nodes smaller than `2 * MIN_BISECT_SIZE` are never bisected.
pub const MIN_BISECT_SIZE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecomposeParams {
    /// Nodes with `c_bar >= tau1` are leaves.
    pub tau1: f64,
    /// Nodes with `xi <= tau2` are dummies. `-1` disables the filter.
    pub tau2: f64,
    pub min_region_patches: usize,
    pub max_nodes: usize,
    #[serde(default)]
    pub connectivity: Connectivity,
    pub affinity: AffinityParams,
    /// `rng_seed` here is the per-image seed; every node derives its own
    /// stream from it.
    pub ksums: KsumsParams,
}

impl Default for DecomposeParams {
    fn default() -> Self {
        Self {
            tau1: 0.97,
            tau2: 0.2,
            min_region_patches: 4,
            max_nodes: 256,
            connectivity: Connectivity::Four,
            affinity: AffinityParams::default(),
            ksums: KsumsParams::default(),
        }
    }
}

impl DecomposeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau1 > 0.0 && self.tau1 <= 1.0) {
            return Err(Error::Validation(format!("tau1 must be in (0, 1], got {}", self.tau1)));
        }
        if !(-1.0..1.0).contains(&self.tau2) {
            return Err(Error::Validation(format!("tau2 must be in [-1, 1), got {}", self.tau2)));
        }
        if self.max_nodes == 0 {
            return Err(Error::Validation("max_nodes must be >= 1".into()));
        }
        self.affinity.validate()?;
        self.ksums.validate()
    }

    /// Emission predicate shared by decomposition and re-counting.
    pub fn emits(&self, is_root: bool, xi: f64, size: usize) -> bool {
        !is_root && xi > self.tau2 && size >= self.min_region_patches
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NodeStats {
    pub size: usize,
    pub c_total: u64,
    pub c_bar: f64,
    pub xi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionNode {
    pub id: u32,
    /// Sorted patch indices.
    pub members: Vec<u32>,
    pub parent: Option<u32>,
    pub children: Vec<u32>,
    pub depth: u32,
    pub stats: NodeStats,
    pub is_dummy: bool,
    pub is_emitted: bool,
}

impl RegionNode {
    pub fn mask(&self, dims: GridDims) -> Vec<bool> {
        members_to_mask(&self.members, dims)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    pub dims: GridDims,
    /// Indexed by node id.
    pub nodes: Vec<RegionNode>,
    pub root: u32,
    pub emitted: Vec<u32>,
    pub cut_count: u32,
    /// `max_nodes` stopped at least one bisection.
    pub truncated: bool,
}

impl Hierarchy {
    pub fn node(&self, id: u32) -> &RegionNode {
        &self.nodes[id as usize]
    }

    pub fn emitted_nodes(&self) -> impl Iterator<Item = &RegionNode> {
        self.emitted.iter().map(|&id| self.node(id))
    }
}

/// Splits `members` into spatially connected components, largest first
/// (ties: smallest minimum index). Each component is sorted.
pub fn get_objects(members: &[u32], dims: GridDims, connectivity: Connectivity) -> Vec<Vec<u32>> {
    let mut inside = members_to_mask(members, dims);
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    let mut sorted = members.to_vec();
    sorted.sort_unstable();

    for &start in &sorted {
        if !inside[start as usize] {
            continue;
        }
        inside[start as usize] = false;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(p) = queue.pop_front() {
            comp.push(p);
            let (r, c) = dims.row_col(p);
            let mut visit = |dr: isize, dc: isize| {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr >= dims.rows as isize || nc >= dims.cols as isize {
                    return;
                }
                let q = dims.index(nr as usize, nc as usize);
                if inside[q as usize] {
                    inside[q as usize] = false;
                    queue.push_back(q);
                }
            };
            visit(-1, 0);
            visit(1, 0);
            visit(0, -1);
            visit(0, 1);
            if connectivity == Connectivity::Eight {
                visit(-1, -1);
                visit(-1, 1);
                visit(1, -1);
                visit(1, 1);
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    // components were discovered in order of their minimum index
    components.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    components
}

/// Tight pixel box over member cells, clamped to the image.
pub fn node_bbox(members: &[u32], dims: GridDims, patch_px: u32, image_w_px: u32, image_h_px: u32) -> Result<BBox> {
    if members.is_empty() {
        return Err(Error::Contract("bounding box of an empty node"));
    }
    let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
    for &m in members {
        let (r, c) = dims.row_col(m);
        r0 = r0.min(r);
        c0 = c0.min(c);
        r1 = r1.max(r);
        c1 = c1.max(c);
    }
    let p = patch_px as f32;
    Ok(BBox::new(c0 as f32 * p, r0 as f32 * p, (c1 + 1) as f32 * p, (r1 + 1) as f32 * p)
        .clamp_to(image_w_px as f32, image_h_px as f32))
}

/// Runs the full decomposition on one grid.
pub fn decompose(grid: &FeatureGrid, params: &DecomposeParams) -> Result<Hierarchy> {
    params.validate()?;
    let dims = grid.dims();
    let points = grid.unit_points();
    let high_energy = high_energy_set(grid, &params.affinity);

    let mut nodes = vec![RegionNode {
        id: 0,
        members: (0..grid.num_patches() as u32).collect(),
        parent: None,
        children: Vec::new(),
        depth: 0,
        stats: NodeStats::default(),
        is_dummy: true,
        is_emitted: false,
    }];
    let mut worklist = VecDeque::from([0u32]);
    let mut emitted = Vec::new();
    let mut cut_count = 0;
    let mut truncated = false;

    while let Some(id) = worklist.pop_front() {
        let idx = id as usize;
        let is_root = id == 0;
        let stats = subset_stats(points, &nodes[idx].members, &high_energy, &params.affinity)?;
        let size = nodes[idx].members.len();
        let emit = params.emits(is_root, stats.xi, size);
        {
            let node = &mut nodes[idx];
            node.stats = NodeStats {
                size,
                c_total: stats.c_total,
                c_bar: stats.c_bar,
                xi: stats.xi,
            };
            node.is_dummy = is_root || stats.xi <= params.tau2;
            node.is_emitted = emit;
        }
        if emit {
            emitted.push(id);
        }

        if stats.c_bar >= params.tau1 || size < 2 * MIN_BISECT_SIZE {
            continue;
        }
        if nodes.len() + 2 > params.max_nodes {
            truncated = true;
            continue;
        }

        let members = &nodes[idx].members;
        let ksums = KsumsParams {
            rng_seed: node_seed(params.ksums.rng_seed, id),
            ..params.ksums
        };
        let seeds = match ksums.init_mode {
            InitMode::Seeded => Some(seeds_from_degrees(
                members,
                &stats.degree,
                params.affinity.seeds_follow_prose,
            )?),
            InitMode::Random => None,
        };
        let halves = bisect(points, members, seeds, &ksums)?;
        let mut components = get_objects(&halves.members_b, dims, params.connectivity);
        components.extend(get_objects(&halves.members_w, dims, params.connectivity));
        if nodes.len() + components.len() > params.max_nodes {
            truncated = true;
            continue;
        }

        cut_count += 1;
        let depth = nodes[idx].depth + 1;
        for comp in components {
            let child = nodes.len() as u32;
            nodes[idx].children.push(child);
            nodes.push(RegionNode {
                id: child,
                members: comp,
                parent: Some(id),
                children: Vec::new(),
                depth,
                stats: NodeStats::default(),
                is_dummy: false,
                is_emitted: false,
            });
            worklist.push_back(child);
        }
    }

    Ok(Hierarchy {
        dims,
        nodes,
        root: 0,
        emitted,
        cut_count,
        truncated,
    })
}

/// On-disk node record; members are run-length-encoded mask rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: u32,
    pub parent: Option<u32>,
    pub children: Vec<u32>,
    pub depth: u32,
    pub size: usize,
    pub c_total: u64,
    pub c_bar: f64,
    pub xi: f64,
    pub is_dummy: bool,
    pub is_emitted: bool,
    pub bbox: BBox,
    pub runs: Vec<MaskRun>,
}

/// Per-image hierarchy document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyFile {
    pub image_id: String,
    pub grid_h: usize,
    pub grid_w: usize,
    pub patch_px: u32,
    pub image_w_px: u32,
    pub image_h_px: u32,
    pub params: DecomposeParams,
    pub root: u32,
    pub cut_count: u32,
    pub truncated: bool,
    pub emitted: Vec<u32>,
    pub nodes: Vec<NodeRecord>,
}

impl HierarchyFile {
    pub fn from_hierarchy(
        h: &Hierarchy,
        image_id: &str,
        patch_px: u32,
        image_w_px: u32,
        image_h_px: u32,
        params: &DecomposeParams,
    ) -> Result<Self> {
        let nodes = h
            .nodes
            .iter()
            .map(|n| {
                Ok(NodeRecord {
                    id: n.id,
                    parent: n.parent,
                    children: n.children.clone(),
                    depth: n.depth,
                    size: n.stats.size,
                    c_total: n.stats.c_total,
                    c_bar: n.stats.c_bar,
                    xi: n.stats.xi,
                    is_dummy: n.is_dummy,
                    is_emitted: n.is_emitted,
                    bbox: node_bbox(&n.members, h.dims, patch_px, image_w_px, image_h_px)?,
                    runs: encode_runs(&n.members, h.dims),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            image_id: image_id.to_string(),
            grid_h: h.dims.rows,
            grid_w: h.dims.cols,
            patch_px,
            image_w_px,
            image_h_px,
            params: *params,
            root: h.root,
            cut_count: h.cut_count,
            truncated: h.truncated,
            emitted: h.emitted.clone(),
            nodes,
        })
    }

    pub fn dims(&self) -> GridDims {
        GridDims::new(self.grid_h, self.grid_w)
    }

    pub fn members(&self, id: u32) -> Vec<u32> {
        decode_runs(&self.nodes[id as usize].runs, self.dims())
    }

    /// Number of regions the stored tree would emit under another `tau2`
    /// (the tree itself does not depend on `tau2`).
    pub fn count_emitted_with(&self, tau2: f64, min_region_patches: usize) -> usize {
        let p = DecomposeParams {
            tau2,
            min_region_patches,
            ..self.params
        };
        self.nodes
            .iter()
            .filter(|n| p.emits(n.id == self.root, n.xi, n.size))
            .count()
    }
}
