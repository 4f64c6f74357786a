use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use garnet_core::pipeline::{self, PipelineConfig, SigmaSq};
use garnet_core::refine::RefineMode;
use garnet_core::{ErrorFamily, GarnetError};

#[derive(Parser)]
#[command(name = "garnet", version, about = "Spectral purification of perturbed graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed, build the kNN base graph and prune it.
    Purify(Overrides),
    /// Perturb a labeled graph with the configured attack.
    Attack(Overrides),
    /// Compare GCN accuracy on clean, attacked and purified graphs.
    Eval(Overrides),
    /// Time purification on SBM graphs of growing size.
    Bench(Overrides),
    /// Write a synthetic SBM dataset (graph, labels, features, splits).
    GenSbm(Overrides),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    Simplified,
}

/// Per-field overrides; any flag given wins over the config file.
#[derive(Args)]
struct Overrides {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, conflicts_with = "gamma_percentile")]
    gamma: Option<f64>,
    /// Prune at this percentile (0-100) of the edge scores.
    #[arg(long)]
    gamma_percentile: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Prior variance; a number or "inf".
    #[arg(long)]
    sigma_sq: Option<String>,
    #[arg(long)]
    concat_features: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(r) = self.r {
            cfg.r = Some(r);
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(g) = self.gamma {
            cfg.gamma = Some(g);
            cfg.gamma_percentile = None;
        }
        if let Some(q) = self.gamma_percentile {
            cfg.gamma_percentile = Some(q);
            cfg.gamma = None;
        }
        if let Some(mode) = self.mode {
            cfg.mode = match mode {
                ModeArg::Full => RefineMode::FullDistortion,
                ModeArg::Simplified => RefineMode::Simplified,
            };
        }
        if let Some(text) = &self.sigma_sq {
            let value = text.parse::<f64>().map_err(|_| {
                GarnetError::InvalidConfig(format!("--sigma-sq expects a number or inf, got {text}"))
            })?;
            cfg.sigma_sq = SigmaSq(value);
        }
        if self.concat_features {
            cfg.concat_features = true;
        }
        if let Some(seed) = self.seed {
            cfg.seed = Some(seed);
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        Ok(cfg)
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("GARNET_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| GarnetError::InvalidConfig(format!("GARNET_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the worker pool")
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Purify(o) => {
            let report = pipeline::run_purify(&o.resolve()?)?;
            println!(
                "purified: {} -> {} base -> {} edges (gamma {}), wrote {}",
                report.edges_in,
                report.edges_base,
                report.edges_out,
                report.gamma_resolved,
                report.purified_graph.display()
            );
        }
        Command::Attack(o) => {
            let report = pipeline::run_attack(&o.resolve()?)?;
            println!(
                "attacked: {} moves, {} -> {} edges, wrote {}",
                report.moves,
                report.edges_in,
                report.edges_out,
                report.attacked_graph.display()
            );
        }
        Command::Eval(o) => {
            let cfg = o.resolve()?;
            let report = pipeline::run_eval(&cfg)?;
            println!(
                "accuracy: clean {:.4} attacked {:.4} purified {:.4}",
                report.clean_acc, report.adv_acc, report.purified_acc
            );
            println!("report: {}", cfg.out.join("eval_report.json").display());
        }
        Command::Bench(o) => {
            let cfg = o.resolve()?;
            for row in pipeline::run_bench(&cfg)? {
                println!("n={} edges={} total={:.3}s", row.n, row.edges, row.timings.total);
            }
            println!("wrote {}", cfg.out.join("bench.csv").display());
        }
        Command::GenSbm(o) => {
            let cfg = o.resolve()?;
            let ds = pipeline::run_gen_sbm(&cfg)?;
            println!(
                "generated {} nodes, {} edges in {}",
                ds.labels.len(),
                ds.graph.num_edges(),
                cfg.out.display()
            );
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let family = err
        .chain()
        .find_map(|e| e.downcast_ref::<GarnetError>())
        .map_or(ErrorFamily::Config, GarnetError::family);
    family.exit_code() as u8
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
