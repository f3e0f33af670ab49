//! Run configuration: a flat `key = value` file plus `--set key=value`
//! overrides. Every report embeds the resolved configuration.

use std::path::Path;

use anyhow::{bail, Context, Result};
use claid_core::affinity::AffinityParams;
use claid_core::ksums::{CostForm, RoundOrder};
use claid_core::rng::image_seed;
use claid_core::{Connectivity, DecomposeParams, InitMode, KsumsParams, PoolingMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub alpha: f32,
    pub theta: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub min_region_patches: usize,
    pub max_nodes: usize,
    pub max_rounds: u32,
    pub seed: u64,
    pub init_mode: InitMode,
    pub round_order: RoundOrder,
    pub cost_form: CostForm,
    pub connectivity: Connectivity,
    pub seeds_follow_prose: bool,
    pub pooling: PoolingMode,
    /// Images returned per query; 0 ranks every indexed image.
    pub top_k: usize,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
}

impl Default for Config {
    fn default() -> Self {
        let d = DecomposeParams::default();
        Self {
            alpha: d.affinity.alpha,
            theta: d.affinity.theta_fraction,
            tau1: d.tau1,
            tau2: d.tau2,
            min_region_patches: d.min_region_patches,
            max_nodes: d.max_nodes,
            max_rounds: d.ksums.max_rounds,
            seed: 0,
            init_mode: d.ksums.init_mode,
            round_order: d.ksums.round_order,
            cost_form: d.ksums.cost_form,
            connectivity: d.connectivity,
            seeds_follow_prose: d.affinity.seeds_follow_prose,
            pooling: PoolingMode::Mean,
            top_k: 0,
            threads: 0,
        }
    }
}

fn parse_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let Some((key, value)) = item.split_once('=') else {
        bail!("override `{item}` is not of the form key=value");
    };
    let (key, value) = (key.trim(), value.trim());
    let parsed = format!("{key} = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|t| t.get(key).cloned())
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    table.insert(key.to_string(), parsed);
    Ok(())
}

impl Config {
    /// Reads `file` if given, applies `overrides` in order, and validates.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            parse_override(&mut table, o)?;
        }
        let cfg: Config = toml::Value::Table(table).try_into().context("invalid configuration")?;
        cfg.decompose_params("")?;
        Ok(cfg)
    }

    /// Decomposition parameters for one image; the k-sums stream is keyed by
    /// the image id so results do not depend on processing order.
    pub fn decompose_params(&self, image_id: &str) -> Result<DecomposeParams> {
        let p = DecomposeParams {
            tau1: self.tau1,
            tau2: self.tau2,
            min_region_patches: self.min_region_patches,
            max_nodes: self.max_nodes,
            connectivity: self.connectivity,
            affinity: AffinityParams {
                alpha: self.alpha,
                theta_fraction: self.theta,
                seeds_follow_prose: self.seeds_follow_prose,
            },
            ksums: KsumsParams {
                max_rounds: self.max_rounds,
                rng_seed: image_seed(image_id, self.seed),
                init_mode: self.init_mode,
                round_order: self.round_order,
                cost_form: self.cost_form,
            },
        };
        p.validate()?;
        Ok(p)
    }
}
