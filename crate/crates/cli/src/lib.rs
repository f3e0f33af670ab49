//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on validation or input errors, 2 when some
//! images or queries failed but the rest were processed.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::commands::Outcome;
use crate::config::Config;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_PARTIAL: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "claid", version, about = "Class-agnostic instance-level region detection and search")]
pub struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Worker threads (overrides `threads` in the config).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Random seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a region hierarchy per image.
    Decompose {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pool one descriptor per emitted region.
    Describe {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        hierarchies: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a search index from region descriptors.
    Index {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank indexed images for each query box.
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score search results against manifest ground truth.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        results: PathBuf,
        /// Hierarchy directory; enables the proposal recall curve.
        #[arg(long)]
        hierarchies: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage end to end.
    Pipeline {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep dummy regions (equivalent to `--set tau2=-1`).
        #[arg(long)]
        no_dummy_filter: bool,
    },
    /// Time single-threaded decomposition of one grid.
    Bench {
        /// A `.cft` file; a synthetic 45×60×768 grid when omitted.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Write a synthetic corpus with planted instances.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        images: usize,
        #[arg(long, default_value_t = 20)]
        queries: usize,
    },
}

fn resolve_config(cli: &Cli) -> Result<Config> {
    let mut overrides = cli.overrides.clone();
    if let Some(t) = cli.threads {
        overrides.push(format!("threads={t}"));
    }
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    Config::load(cli.config.as_deref(), &overrides)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn exit_for(outcome: Outcome) -> u8 {
    match outcome {
        Outcome::Complete => EXIT_OK,
        Outcome::Partial => EXIT_PARTIAL,
    }
}

fn dispatch(cli: &Cli, cfg: &Config) -> Result<u8> {
    match &cli.command {
        Command::Decompose { manifest, out } => {
            let (o, report, _) = commands::run_decompose(cfg, manifest, out)?;
            for s in &report.images {
                match (&s.error, s.cut_count) {
                    (Some(e), _) => eprintln!("{}: error: {e}", s.image_id),
                    (None, Some(c)) => {
                        println!("{}: cuts={c} emitted={} {:.3}s", s.image_id, s.emitted.unwrap_or(0), s.seconds)
                    }
                    _ => {}
                }
            }
            Ok(exit_for(o))
        }
        Command::Describe { manifest, hierarchies, out } => {
            let (o, report) = commands::run_describe(cfg, manifest, hierarchies, out)?;
            for s in report.images.iter().filter(|s| s.error.is_some()) {
                eprintln!("{}: error: {}", s.image_id, s.error.as_deref().unwrap_or_default());
            }
            println!("described {} images, {} failed", report.images.len(), report.failed);
            Ok(exit_for(o))
        }
        Command::Index { manifest, descriptors, out } => {
            let (o, report) = commands::run_index(cfg, manifest, descriptors, out)?;
            for s in &report.errors {
                eprintln!("{}: error: {}", s.image_id, s.error.as_deref().unwrap_or_default());
            }
            println!("indexed {} rows from {} images (dim {})", report.rows, report.images, report.dim_d);
            Ok(exit_for(o))
        }
        Command::Search { index, queries, out } => {
            let (o, report) = commands::run_search(cfg, index, queries, out)?;
            for q in &report.errors {
                eprintln!("{}: error: {}", q.query_id, q.error);
            }
            println!("wrote {} result lines for {} queries", report.results, report.queries);
            Ok(exit_for(o))
        }
        Command::Eval { manifest, results, hierarchies, out } => {
            let r = commands::run_eval(cfg, manifest, results, hierarchies.as_deref(), out.as_deref())?;
            print!("{}", r.report.to_table());
            Ok(EXIT_OK)
        }
        Command::Pipeline { manifest, queries, out, no_dummy_filter } => {
            let (o, r) = commands::run_pipeline(cfg, manifest, queries, out, *no_dummy_filter)?;
            println!(
                "features: {} emitted; {} with dummy filter, {} without (delta {})",
                r.features_emitted,
                r.features_with_dummy_filter,
                r.features_without_dummy_filter,
                r.features_without_dummy_filter as i64 - r.features_with_dummy_filter as i64
            );
            if let Some(e) = &r.eval {
                print!("{}", e.to_table());
            }
            Ok(exit_for(o))
        }
        Command::Bench { features, repeats } => {
            print_json(&commands::run_bench(cfg, features.as_deref(), *repeats)?)?;
            Ok(EXIT_OK)
        }
        Command::Synth { out, images, queries } => {
            print_json(&commands::run_synth(out, *images, *queries, cfg.seed)?)?;
            Ok(EXIT_OK)
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let result = resolve_config(&cli).and_then(|cfg| {
        if cfg.threads > 0 {
            // a second global init in the same process is harmless
            let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
        }
        dispatch(&cli, &cfg)
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_INVALID
        }
    }
}
