//! Class-agnostic instance-level region detection and search.
//!
//! The pipeline consumes precomputed patch features (`.cft`) and descriptor
//! maps (`.cdm`), decomposes each image into a hierarchy of spatially
//! connected regions, pools one descriptor per region, indexes them for
//! exhaustive cosine search, and scores rankings with mAP and IoU metrics.

pub mod affinity;
pub mod decompose;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod feature_io;
pub mod geometry;
pub mod index;
pub mod ksums;
pub mod linalg;
pub mod rng;
pub mod synth;

pub use affinity::{AffinityParams, HighEnergySet, SubsetStats};
pub use decompose::{decompose, get_objects, node_bbox, DecomposeParams, Hierarchy, HierarchyFile, RegionNode};
pub use descriptor::{pool_query, pool_region, ImageDescriptors, PoolingMode, RegionDescriptor};
pub use error::{Error, Result};
pub use eval::{EvalReport, QueryGroundTruth};
pub use feature_io::{
    read_descriptor_map, read_feature_grid, read_manifest, write_descriptor_map, write_feature_grid, DatasetManifest,
    DescriptorMap, FeatureGrid, PointView,
};
pub use geometry::{BBox, Connectivity, GridDims};
pub use index::{DescriptorIndex, RankedEntry, RankedResult};
pub use ksums::{bisect, Bisection, InitMode, KsumsParams};
