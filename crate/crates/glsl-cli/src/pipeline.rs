//! Shared orchestration behind the subcommands: dataset preparation,
//! training, evaluation, sweeps, clustered runs and curve export. All file
//! outputs land in the config's out_dir next to a resolved config.toml.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use glsl_core::dataset::{
    parse_ibrl, resample_grid, synth_generate, window_at, zscore_apply, zscore_fit, SynthSpec,
    UniformGrid, MODE_NAMES,
};
use glsl_core::gnn::KernelKind;
use glsl_core::inject::{inject_random, AnomalyKind, InjectionContext, InjectionResult};
use glsl_core::model::{GlslModel, GraphCtx, LatentState, ModelConfig};
use glsl_core::params::ParamStore;
use glsl_core::plus::{run_clustered, ClusteredConfig, ClusteredReport};
use glsl_core::rng::rng_for;
use glsl_core::topology::{distance_matrix, NodeLayout, TopologySpec};
use glsl_core::train::{
    evaluate, sensitivity_sweep, train_two_phase, CheckpointDecision, EvalConfig, EvalReport,
    ModelDetector, Scenario, TrainConfig, TrainReport, Verdict,
};

use crate::config::RunConfig;

/// Everything a run needs: the standardized grid, its layout and adjacency,
/// the train/test split tick, and the injector context fitted on the
/// training range.
pub struct Prepared {
    pub grid: UniformGrid,
    pub layout: NodeLayout,
    pub split: usize,
    pub ictx: InjectionContext,
}

impl Prepared {
    pub fn train_grid(&self) -> UniformGrid {
        self.grid.tick_range(0..self.split)
    }

    pub fn test_grid(&self) -> UniformGrid {
        self.grid.tick_range(self.split..self.grid.ticks)
    }
}

/// Worker cap from GLSL_THREADS; unset means 1. Runs are sequential today,
/// so any cap >= 1 is honored trivially, but the value must still parse.
pub fn thread_cap() -> Result<usize> {
    match std::env::var("GLSL_THREADS") {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| anyhow!("GLSL_THREADS must be a positive integer (got '{v}')"))?;
            if n == 0 {
                bail!("GLSL_THREADS must be >= 1");
            }
            Ok(n)
        }
        Err(_) => Ok(1),
    }
}

fn circle_layout(n: usize) -> NodeLayout {
    // deterministic fallback when a raw/grid source has no coordinate file
    let coords = (0..n)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            (50.0 + 40.0 * a.cos(), 50.0 + 40.0 * a.sin())
        })
        .collect();
    NodeLayout::from_coords(coords)
}

fn topology_spec(cfg: &RunConfig) -> TopologySpec {
    match cfg.topology.kind.as_str() {
        "coverage" => TopologySpec::Coverage(cfg.topology.coverage),
        "topk" => TopologySpec::TopK(cfg.topology.k),
        _ => TopologySpec::Complete,
    }
}

pub fn model_config(cfg: &RunConfig, nodes: usize, modes: usize) -> Result<ModelConfig> {
    let kernel: KernelKind = cfg
        .model
        .kernel
        .parse()
        .map_err(|e: glsl_core::GlslError| anyhow!("{e}"))?;
    let mc = ModelConfig {
        modes,
        nodes,
        window: cfg.model.window,
        embed: cfg.model.embed,
        latent: cfg.model.latent,
        kernel,
        heads: cfg.model.heads,
        leaky_slope: cfg.model.leaky_slope,
    };
    mc.validate()?;
    Ok(mc)
}

fn load_raw_grid(cfg: &RunConfig) -> Result<(UniformGrid, NodeLayout)> {
    let ds = &cfg.dataset;
    match ds.source.as_str() {
        "synthetic" => {
            let layout = match &ds.layout_path {
                Some(p) => Some(NodeLayout::from_file(p)?),
                None => None,
            };
            let spec = SynthSpec {
                nodes: ds.nodes,
                modes: ds.modes,
                ticks: ds.ticks,
                layout,
                noise: ds.noise,
                seed: cfg.seed,
            };
            Ok(synth_generate(&spec))
        }
        "raw" => {
            let path = ds.path.as_ref().expect("validated");
            let (readings, stats) = parse_ibrl(path)?;
            if readings.is_empty() {
                bail!("dataset.path: no usable readings in {} ({} lines malformed)",
                    path.display(), stats.malformed);
            }
            let node_ids: Vec<u64> = if ds.node_ids.is_empty() {
                (1..=ds.nodes as u64).collect()
            } else {
                ds.node_ids.clone()
            };
            let mode_names: Vec<String> = if ds.mode_names.is_empty() {
                MODE_NAMES.iter().take(ds.modes).map(|s| s.to_string()).collect()
            } else {
                ds.mode_names.clone()
            };
            let grid = resample_grid(&readings, &node_ids, &mode_names, ds.period, ds.ticks)?;
            let layout = match &ds.layout_path {
                Some(p) => NodeLayout::from_file(p)?,
                None => circle_layout(grid.nodes),
            };
            Ok((grid, layout))
        }
        "grid" => {
            let grid = UniformGrid::load(ds.path.as_ref().expect("validated"))?;
            let layout = match &ds.layout_path {
                Some(p) => NodeLayout::from_file(p)?,
                None => circle_layout(grid.nodes),
            };
            Ok((grid, layout))
        }
        other => bail!("dataset.source '{other}' is not supported"),
    }
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let (raw, layout) = load_raw_grid(cfg)?;
    if layout.len() != raw.nodes {
        bail!(
            "dataset.layout_path: layout has {} nodes but the grid has {}",
            layout.len(),
            raw.nodes
        );
    }
    let split = ((raw.ticks as f64 * cfg.dataset.train_frac).round() as usize)
        .clamp(cfg.model.window + 1, raw.ticks.saturating_sub(1));
    let fit = zscore_fit(&raw, 0..split)?;
    let grid = zscore_apply(&raw, &fit)?;
    // injector excitation bounds come from the standardized training range
    let bounds = zscore_fit(&grid, 0..split)?;
    let neighbors = cfg
        .inject
        .neighbors
        .min(grid.nodes.saturating_sub(1))
        .max(1);
    let mut ictx = InjectionContext::new(bounds, cfg.inject.p, neighbors, distance_matrix(&layout));
    if !cfg.inject.kinds.is_empty() {
        let mut kinds = Vec::new();
        for name in &cfg.inject.kinds {
            let k: AnomalyKind = name
                .parse()
                .map_err(|e: glsl_core::GlslError| anyhow!("inject.kinds: {e}"))?;
            kinds.push(k);
        }
        ictx.kinds = kinds;
    }
    Ok(Prepared { grid, layout, split, ictx })
}

pub fn build_graph(cfg: &RunConfig, prep: &Prepared, kernel: KernelKind) -> Result<GraphCtx> {
    let adj = topology_spec(cfg).build(&prep.layout, true)?;
    Ok(GraphCtx::new(adj, kernel))
}

fn eval_config(cfg: &RunConfig) -> EvalConfig {
    EvalConfig {
        samples: cfg.eval.samples,
        tau: cfg.eval.tau,
        delay: cfg.eval.delay.unwrap_or(cfg.model.window),
        threshold: cfg.eval.threshold,
        seed: cfg.seed,
    }
}

fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        epochs: cfg.train.epochs,
        lr: cfg.train.lr,
        negative_quota: cfg.train.negative_quota,
        seed: cfg.seed,
    }
}

// ---------------------------------------------------------------- outputs

fn write_metrics_json(dir: &Path, report: &EvalReport) -> Result<PathBuf> {
    #[derive(serde::Serialize)]
    struct Out<'a> {
        counts: &'a glsl_core::train::ConfusionCounts,
        metrics: &'a glsl_core::train::MetricsReport,
    }
    let path = dir.join("metrics.json");
    let text = serde_json::to_string_pretty(&Out { counts: &report.counts, metrics: &report.metrics })?;
    std::fs::write(&path, text + "\n")?;
    Ok(path)
}

fn write_decisions_csv(dir: &Path, decisions: &[CheckpointDecision]) -> Result<PathBuf> {
    let mut out = String::from("checkpoint,set,kind,decision_window,verdict\n");
    for d in decisions {
        let set = match d.scenario {
            Scenario::Injected => "injected",
            Scenario::Clean => "clean",
        };
        let kind = d.kind.map(|k| k.name()).unwrap_or("");
        let win = d
            .decision_window
            .map(|w| w.to_string())
            .unwrap_or_default();
        let verdict = match d.verdict {
            Verdict::Tp => "tp",
            Verdict::Fp => "fp",
            Verdict::Tn => "tn",
            Verdict::Fn => "fn",
        };
        writeln!(out, "{},{},{},{},{}", d.checkpoint, set, kind, win, verdict).unwrap();
    }
    let path = dir.join("decisions.csv");
    std::fs::write(&path, out)?;
    Ok(path)
}

/// Wall-clock timing stays out of metrics.json so repeated runs compare
/// byte for byte; it gets its own file.
fn write_timing(dir: &Path, avg_checkpoint_seconds: f64) -> Result<()> {
    std::fs::write(
        dir.join("timing.txt"),
        format!("avg_checkpoint_seconds {avg_checkpoint_seconds:.6}\n"),
    )?;
    Ok(())
}

// ------------------------------------------------------------- subcommands

pub fn cmd_ingest(cfg: &RunConfig) -> Result<()> {
    let (grid, layout) = load_raw_grid(cfg)?;
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir)?;
    grid.save(&dir.join("grid.bin"))?;
    let mut text = String::new();
    for (i, (x, y)) in layout.coords().iter().enumerate() {
        writeln!(text, "{} {} {}", i + 1, x, y).unwrap();
    }
    std::fs::write(dir.join("layout.txt"), text)?;
    cfg.write_resolved(dir)?;
    println!(
        "ingested {} modes x {} nodes x {} ticks -> {}",
        grid.modes,
        grid.nodes,
        grid.ticks,
        dir.join("grid.bin").display()
    );
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<(GlslModel, TrainReport)> {
    let prep = prepare(cfg)?;
    let mc = model_config(cfg, prep.grid.nodes, prep.grid.modes)?;
    let graph = build_graph(cfg, &prep, mc.kernel)?;
    let mut model = GlslModel::new(mc, cfg.seed)?;
    let report = train_two_phase(&mut model, &prep.train_grid(), &graph, &prep.ictx, &train_config(cfg))?;

    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir)?;
    model.params.save(&dir.join("model.ckpt"))?;
    let mut csv = String::from("epoch,reconstruction,cross_entropy,blended\n");
    for (i, e) in report.history.iter().enumerate() {
        writeln!(csv, "{},{:.12},{:.12},{:.12}", i + 1, e.rec, e.ce, e.blended).unwrap();
    }
    std::fs::write(dir.join("loss_history.csv"), csv)?;
    cfg.write_resolved(dir)?;
    if let Some(last) = report.history.last() {
        println!(
            "trained {} epochs x {} windows, final loss rec {:.6} ce {:.6} -> {}",
            report.history.len(),
            report.windows_per_epoch,
            last.rec,
            last.ce,
            dir.join("model.ckpt").display()
        );
    }
    Ok((model, report))
}

pub fn load_model(cfg: &RunConfig, checkpoint: &Path, nodes: usize, modes: usize) -> Result<GlslModel> {
    let store = ParamStore::load(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let mc = model_config(cfg, nodes, modes)?;
    Ok(GlslModel::from_store(mc, store)?)
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<EvalReport> {
    let prep = prepare(cfg)?;
    let model = load_model(cfg, checkpoint, prep.grid.nodes, prep.grid.modes)?;
    let graph = build_graph(cfg, &prep, model.cfg.kernel)?;
    let test = prep.test_grid();
    let mut det = ModelDetector::new(&model, &graph);
    let report = evaluate(&mut det, &test, model.cfg.window, &prep.ictx, &eval_config(cfg))?;

    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir)?;
    write_metrics_json(dir, &report)?;
    write_decisions_csv(dir, &report.decisions)?;
    write_timing(dir, report.avg_checkpoint_seconds)?;
    cfg.write_resolved(dir)?;
    let m = &report.metrics;
    println!(
        "eval: precision {:.4} recall {:.4} f1 {:.4} accuracy {:.4} ({} checkpoints)",
        m.precision,
        m.recall,
        m.f1,
        m.accuracy,
        report.decisions.len()
    );
    Ok(report)
}

pub fn cmd_sweep(cfg: &RunConfig, checkpoint: &Path, p_values: &[f64]) -> Result<Vec<(f64, EvalReport)>> {
    let prep = prepare(cfg)?;
    let model = load_model(cfg, checkpoint, prep.grid.nodes, prep.grid.modes)?;
    let graph = build_graph(cfg, &prep, model.cfg.kernel)?;
    let test = prep.test_grid();
    let runs = sensitivity_sweep(&model, &graph, &test, &prep.ictx, p_values, &eval_config(cfg))?;

    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir)?;
    let mut csv = String::from("p,precision,recall,f1,accuracy,tp,fp,tn,fn\n");
    for (p, r) in &runs {
        writeln!(
            csv,
            "{},{:.6},{:.6},{:.6},{:.6},{},{},{},{}",
            p,
            r.metrics.precision,
            r.metrics.recall,
            r.metrics.f1,
            r.metrics.accuracy,
            r.counts.tp,
            r.counts.fp,
            r.counts.tn,
            r.counts.fn_
        )
        .unwrap();
    }
    std::fs::write(dir.join("sweep.csv"), csv)?;
    cfg.write_resolved(dir)?;
    for (p, r) in &runs {
        println!("p {:>6}: recall {:.4} f1 {:.4}", p, r.metrics.recall, r.metrics.f1);
    }
    Ok(runs)
}

pub fn cmd_inject(
    cfg: &RunConfig,
    kind: Option<AnomalyKind>,
    t_s: usize,
    t_e: usize,
) -> Result<InjectionResult> {
    let prep = prepare(cfg)?;
    let mut work = prep.grid.clone();
    let mut ictx = prep.ictx.clone();
    if let Some(k) = kind {
        ictx.kinds = vec![k];
    }
    let mut rng = rng_for(cfg.seed, "cli.inject");
    let r = inject_random(&mut work, t_s, t_e, &ictx, &mut rng)?;

    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir)?;
    work.save(&dir.join("injected.bin"))?;
    let csv = format!(
        "kind_requested,kind_applied,mode,node,t_s,t_e\n{},{},{},{},{},{}\n",
        r.kind_requested.name(),
        r.kind_applied.name(),
        r.mode,
        r.node,
        r.t_s,
        r.t_e
    );
    std::fs::write(dir.join("injection.csv"), csv)?;
    cfg.write_resolved(dir)?;
    println!(
        "injected {} (requested {}) at mode {} node {} ticks {}..={}",
        r.kind_applied.name(),
        r.kind_requested.name(),
        r.mode,
        r.node,
        r.t_s,
        r.t_e
    );
    Ok(r)
}

pub fn cmd_clustered(cfg: &RunConfig, k: usize, paa: Option<(usize, usize)>) -> Result<ClusteredReport> {
    thread_cap()?;
    let prep = prepare(cfg)?;
    let ccfg = ClusteredConfig {
        k,
        paa,
        topology: topology_spec(cfg),
        model: model_config(cfg, prep.grid.nodes, prep.grid.modes)?,
        train: train_config(cfg),
        eval: eval_config(cfg),
        p: cfg.inject.p,
        neighbors: cfg.inject.neighbors,
        kmeans_seed: cfg.seed,
    };
    let report = run_clustered(&prep.grid, &prep.layout, &ccfg)?;

    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir)?;
    #[derive(serde::Serialize)]
    struct ClusterOut {
        cluster: usize,
        nodes: Vec<usize>,
        counts: glsl_core::train::ConfusionCounts,
        metrics: glsl_core::train::MetricsReport,
    }
    #[derive(serde::Serialize)]
    struct Out {
        k_requested: usize,
        k_effective: usize,
        paa: Option<(usize, usize)>,
        clusters: Vec<ClusterOut>,
        counts: glsl_core::train::ConfusionCounts,
        metrics: glsl_core::train::MetricsReport,
    }
    let out = Out {
        k_requested: k,
        k_effective: report.assignment.k,
        paa,
        clusters: report
            .per_cluster
            .iter()
            .map(|c| ClusterOut {
                cluster: c.cluster,
                nodes: c.nodes.clone(),
                counts: c.counts.clone(),
                metrics: c.metrics.clone(),
            })
            .collect(),
        counts: report.counts.clone(),
        metrics: report.metrics.clone(),
    };
    std::fs::write(dir.join("clustered.json"), serde_json::to_string_pretty(&out)? + "\n")?;
    let paa_label = paa.map(|(a, b)| format!("{a}/{b}")).unwrap_or_else(|| "none".into());
    let agg = format!(
        "k,paa,precision,recall,f1,accuracy\n{},{},{:.6},{:.6},{:.6},{:.6}\n",
        report.assignment.k,
        paa_label,
        report.metrics.precision,
        report.metrics.recall,
        report.metrics.f1,
        report.metrics.accuracy
    );
    std::fs::write(dir.join("aggregate.csv"), agg)?;
    write_timing(dir, report.avg_checkpoint_seconds)?;
    cfg.write_resolved(dir)?;
    println!(
        "clustered k={} paa={}: f1 {:.4} over {} clusters, {:.4}s per checkpoint",
        report.assignment.k,
        paa_label,
        report.metrics.f1,
        report.per_cluster.len(),
        report.avg_checkpoint_seconds
    );
    Ok(report)
}

pub fn cmd_export_curves(
    cfg: &RunConfig,
    checkpoint: &Path,
    mode: usize,
    node: usize,
    range: Option<(usize, usize)>,
) -> Result<PathBuf> {
    let prep = prepare(cfg)?;
    let model = load_model(cfg, checkpoint, prep.grid.nodes, prep.grid.modes)?;
    let graph = build_graph(cfg, &prep, model.cfg.kernel)?;
    if mode >= prep.grid.modes || node >= prep.grid.nodes {
        bail!("--mode/--node out of range for {} modes x {} nodes", prep.grid.modes, prep.grid.nodes);
    }
    let w = model.cfg.window;
    let (lo, hi) = range.unwrap_or((prep.split, prep.grid.ticks));
    if hi > prep.grid.ticks || lo >= hi {
        bail!("--range {lo}..{hi} out of bounds for {} ticks", prep.grid.ticks);
    }
    let first_end = lo.max(w - 1);
    if first_end >= hi {
        bail!("--range {lo}..{hi} leaves no full window of width {w}");
    }

    let mut header = String::from("tick,raw,reconstruction,probability");
    for j in 0..model.cfg.latent {
        write!(header, ",z{j}").unwrap();
    }
    header.push('\n');
    let mut csv = header;
    let mut state = LatentState::zeros(&model.cfg);
    for end in first_end..hi {
        let wt = window_at(&prep.grid, end, w)?;
        let fwd = model.forward(&wt, &graph, &state)?;
        let recon = fwd.tape.value(fwd.recon[mode]).at(node, w - 1);
        let z = fwd.tape.value(fwd.z);
        let prob = fwd.p_anomaly();
        write!(
            csv,
            "{},{:.12},{:.12},{:.12}",
            end,
            prep.grid.get(mode, node, end),
            recon,
            prob
        )
        .unwrap();
        for j in 0..model.cfg.latent {
            write!(csv, ",{:.12}", z.at(node, j)).unwrap();
        }
        csv.push('\n');
        state = fwd.next_state;
    }

    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir)?;
    let path = dir.join("curves.csv");
    std::fs::write(&path, csv)?;
    cfg.write_resolved(dir)?;
    println!(
        "exported {} aligned rows for mode {} node {} -> {}",
        hi - first_end,
        mode,
        node,
        path.display()
    );
    Ok(path)
}
