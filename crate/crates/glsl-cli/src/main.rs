//! `glsl`: anomaly detection for wireless sensor streams. Train a
//! graph-recurrent autoencoder on a sensor grid, evaluate it with the
//! checkpoint protocol, sweep trend severities, run clustered variants,
//! or export aligned signal curves.
//!
//! Exit codes: 0 success, 1 bad config or runtime failure, 2 usage error.

mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use glsl_core::inject::AnomalyKind;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "glsl", version, about = "Self-supervised sensor-network anomaly detection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Resample a raw sensor log (or generate synthetic data) into a grid cache
    Ingest(CommonArgs),
    /// Train a model and write a checkpoint plus loss history
    Train(CommonArgs),
    /// Evaluate a checkpoint with the injected/clean checkpoint protocol
    Eval(EvalArgs),
    /// Re-evaluate a checkpoint across trend step divisors p
    Sweep(SweepArgs),
    /// Apply one anomaly to the standardized grid and save the result
    Inject(InjectArgs),
    /// Partition the network, optionally compress time, and run one model per cluster
    Clustered(ClusteredArgs),
    /// Export aligned raw/reconstruction/latent/probability series as CSV
    ExportCurves(ExportArgs),
}

/// Flags shared by every subcommand; each overrides the config file field
/// of the same name.
#[derive(Args)]
struct CommonArgs {
    /// TOML config file; flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Generate synthetic data (the default source)
    #[arg(long)]
    synthetic: bool,
    /// Raw whitespace-delimited sensor log to resample
    #[arg(long)]
    input: Option<PathBuf>,
    /// Previously ingested binary grid cache
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Node coordinate file of `id x y` lines
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    modes: Option<usize>,
    #[arg(long)]
    ticks: Option<usize>,
    /// Synthetic noise level
    #[arg(long)]
    noise: Option<f64>,
    /// Graph kernel: gat or gcn
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long)]
    latent: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Checkpoint count T for evaluation
    #[arg(long = "T")]
    samples: Option<usize>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    delay: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Trend step divisor p
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(long)]
    train_frac: Option<f64>,
    /// Topology: complete, coverage or topk
    #[arg(long)]
    topology: Option<String>,
    #[arg(long)]
    coverage: Option<f64>,
    /// Neighbor count for the topk topology
    #[arg(long)]
    topk: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained model checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma separated trend step divisors
    #[arg(long, default_value = "10,20,40,80")]
    p_values: String,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct InjectArgs {
    /// scale, negation, sudden, intermodal or internode; omit for random
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    t_start: usize,
    #[arg(long)]
    t_end: usize,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct ClusteredArgs {
    /// Cluster count
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Time compression ratio as num/den, e.g. 2/5
    #[arg(long)]
    paa: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    mode: usize,
    #[arg(long, default_value_t = 0)]
    node: usize,
    /// Tick range as start..end; defaults to the test split
    #[arg(long)]
    range: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

/// Load the config file (or defaults) and fold the flag overrides in.
fn resolve(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let sources = [
        common.synthetic,
        common.input.is_some(),
        common.grid.is_some(),
    ]
    .iter()
    .filter(|b| **b)
    .count();
    if sources > 1 {
        bail!("dataset.source: --synthetic, --input and --grid are mutually exclusive");
    }
    if common.synthetic {
        cfg.dataset.source = "synthetic".into();
        cfg.dataset.path = None;
    }
    if let Some(p) = &common.input {
        cfg.dataset.source = "raw".into();
        cfg.dataset.path = Some(p.clone());
    }
    if let Some(p) = &common.grid {
        cfg.dataset.source = "grid".into();
        cfg.dataset.path = Some(p.clone());
    }
    if let Some(p) = &common.layout {
        cfg.dataset.layout_path = Some(p.clone());
    }
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(common.out_dir.clone(), cfg.out_dir);
    set!(common.seed, cfg.seed);
    set!(common.nodes, cfg.dataset.nodes);
    set!(common.modes, cfg.dataset.modes);
    set!(common.ticks, cfg.dataset.ticks);
    set!(common.noise, cfg.dataset.noise);
    set!(common.kernel.clone(), cfg.model.kernel);
    set!(common.window, cfg.model.window);
    set!(common.embed, cfg.model.embed);
    set!(common.latent, cfg.model.latent);
    set!(common.heads, cfg.model.heads);
    set!(common.epochs, cfg.train.epochs);
    set!(common.lr, cfg.train.lr);
    set!(common.samples, cfg.eval.samples);
    set!(common.tau, cfg.eval.tau);
    set!(common.threshold, cfg.eval.threshold);
    set!(common.p, cfg.inject.p);
    set!(common.neighbors, cfg.inject.neighbors);
    set!(common.train_frac, cfg.dataset.train_frac);
    set!(common.topology.clone(), cfg.topology.kind);
    set!(common.coverage, cfg.topology.coverage);
    set!(common.topk, cfg.topology.k);
    if common.delay.is_some() {
        cfg.eval.delay = common.delay;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_p_values(s: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for tok in s.split(',') {
        let tok = tok.trim();
        if tok.is_empty() {
            continue;
        }
        let v: f64 = tok
            .parse()
            .map_err(|_| anyhow::anyhow!("--p-values: '{tok}' is not a number"))?;
        out.push(v);
    }
    if out.is_empty() {
        bail!("--p-values: no values given");
    }
    Ok(out)
}

fn parse_paa(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once('/')
        .ok_or_else(|| anyhow::anyhow!("--paa expects num/den, e.g. 2/5"))?;
    let num: usize = a.trim().parse().map_err(|_| anyhow::anyhow!("--paa: bad numerator '{a}'"))?;
    let den: usize = b.trim().parse().map_err(|_| anyhow::anyhow!("--paa: bad denominator '{b}'"))?;
    if num == 0 || den == 0 || num > den {
        bail!("--paa: ratio {num}/{den} must satisfy 0 < num <= den");
    }
    Ok((num, den))
}

fn parse_range(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| anyhow::anyhow!("--range expects start..end"))?;
    let lo: usize = a.trim().parse().map_err(|_| anyhow::anyhow!("--range: bad start '{a}'"))?;
    let hi: usize = b.trim().parse().map_err(|_| anyhow::anyhow!("--range: bad end '{b}'"))?;
    Ok((lo, hi))
}

fn run(cli: Cli) -> Result<()> {
    pipeline::thread_cap()?;
    match cli.cmd {
        Cmd::Ingest(common) => pipeline::cmd_ingest(&resolve(&common)?),
        Cmd::Train(common) => pipeline::cmd_train(&resolve(&common)?).map(|_| ()),
        Cmd::Eval(a) => pipeline::cmd_eval(&resolve(&a.common)?, &a.checkpoint).map(|_| ()),
        Cmd::Sweep(a) => {
            let ps = parse_p_values(&a.p_values)?;
            pipeline::cmd_sweep(&resolve(&a.common)?, &a.checkpoint, &ps).map(|_| ())
        }
        Cmd::Inject(a) => {
            let kind = match &a.kind {
                Some(s) => Some(s.parse::<AnomalyKind>().map_err(|e| anyhow::anyhow!("{e}"))?),
                None => None,
            };
            if a.t_end < a.t_start {
                bail!("--t-end must be >= --t-start");
            }
            pipeline::cmd_inject(&resolve(&a.common)?, kind, a.t_start, a.t_end).map(|_| ())
        }
        Cmd::Clustered(a) => {
            let paa = match &a.paa {
                Some(s) => Some(parse_paa(s)?),
                None => None,
            };
            if a.k == 0 {
                bail!("--k must be >= 1");
            }
            pipeline::cmd_clustered(&resolve(&a.common)?, a.k, paa).map(|_| ())
        }
        Cmd::ExportCurves(a) => {
            let range = match &a.range {
                Some(s) => Some(parse_range(s)?),
                None => None,
            };
            pipeline::cmd_export_curves(&resolve(&a.common)?, &a.checkpoint, a.mode, a.node, range)
                .map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
