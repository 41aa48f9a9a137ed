//! The scaling strategy: K-means partition of the node layout, block-mean
//! time compression (PAA), and independent per-cluster train/eval runs whose
//! confusion counts are summed before computing metrics.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{window_at, zscore_fit, UniformGrid, WindowTensor};
use crate::error::{GlslError, Result};
use crate::inject::{inject_random, rollback, InjectionContext};
use crate::model::{GlslModel, GraphCtx, ModelConfig};
use crate::rng::rng_for;
use crate::topology::{distance_matrix, NodeLayout, TopologySpec};
use crate::train::{
    checkpoint_positions, evaluate, metrics, train_two_phase, train_with_source,
    CheckpointDecision, ConfusionCounts, Detector, EvalConfig, EvalReport, MetricsReport,
    ModelDetector, Scenario, TrainConfig, Verdict, WindowSource,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    /// Cluster id per node.
    pub assign: Vec<usize>,
    pub centroids: Vec<(f64, f64)>,
}

impl ClusterAssignment {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assign.len()).filter(|n| self.assign[*n] == cluster).collect()
    }

    /// Sum of squared distances from each node to its assigned centroid.
    pub fn objective(&self, layout: &NodeLayout) -> f64 {
        layout
            .coords()
            .iter()
            .zip(&self.assign)
            .map(|((x, y), c)| {
                let (cx, cy) = self.centroids[*c];
                (x - cx).powi(2) + (y - cy).powi(2)
            })
            .sum()
    }
}

fn nearest_centroid(x: f64, y: f64, centroids: &[(f64, f64)]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, (cx, cy)) in centroids.iter().enumerate() {
        let d = (x - cx).powi(2) + (y - cy).powi(2);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Seeded k-means: k-means++ starting centroids, then Lloyd iterations until
/// assignments stabilize or 100 rounds pass. Ten restarts, lowest objective
/// wins; a single random start gets stuck in local optima often enough to
/// split one tight node group in two while merging another.
pub fn kmeans(layout: &NodeLayout, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = layout.len();
    if k == 0 || k > n {
        return Err(GlslError::Config(format!("kmeans: k={k} out of range for {n} nodes")));
    }
    let mut rng = rng_for(seed, "kmeans");
    let mut best: Option<(f64, ClusterAssignment)> = None;
    for _ in 0..10 {
        let cand = lloyd(layout, k, &mut rng);
        let obj = cand.objective(layout);
        if best.as_ref().map_or(true, |(b, _)| obj < *b) {
            best = Some((obj, cand));
        }
    }
    Ok(best.expect("at least one restart ran").1)
}

/// Sample starting centroids with probability proportional to squared
/// distance from the ones already chosen (k-means++), then iterate Lloyd.
/// A cluster that empties is reseeded at the node farthest from its
/// assigned centroid.
fn lloyd(layout: &NodeLayout, k: usize, rng: &mut ChaCha8Rng) -> ClusterAssignment {
    let n = layout.len();
    let mut centroids: Vec<(f64, f64)> = Vec::with_capacity(k);
    centroids.push(layout.coords()[rng.gen_range(0..n)]);
    while centroids.len() < k {
        let d2: Vec<f64> = layout
            .coords()
            .iter()
            .map(|p| {
                centroids.iter().map(|c| dist2(*p, *c)).fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut draw = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if draw < *d {
                    pick = i;
                    break;
                }
                draw -= d;
            }
            pick
        } else {
            // all nodes coincide with a centroid; any choice is equivalent
            rng.gen_range(0..n)
        };
        centroids.push(layout.coords()[next]);
    }
    let mut assign = vec![0usize; n];

    for _ in 0..100 {
        let new_assign: Vec<usize> = layout
            .coords()
            .iter()
            .map(|(x, y)| nearest_centroid(*x, *y, &centroids))
            .collect();
        let stable = new_assign == assign;
        assign = new_assign;

        for c in 0..k {
            let members: Vec<usize> = (0..n).filter(|i| assign[*i] == c).collect();
            if members.is_empty() {
                // reseed at the node farthest from its assigned centroid
                let far = (0..n)
                    .max_by(|a, b| {
                        let da = dist2(layout.coords()[*a], centroids[assign[*a]]);
                        let db = dist2(layout.coords()[*b], centroids[assign[*b]]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .expect("layout is non-empty");
                centroids[c] = layout.coords()[far];
                assign[far] = c;
                continue;
            }
            let (sx, sy) = members.iter().fold((0.0, 0.0), |(ax, ay), i| {
                let (x, y) = layout.coords()[*i];
                (ax + x, ay + y)
            });
            let m = members.len() as f64;
            centroids[c] = (sx / m, sy / m);
        }
        if stable {
            break;
        }
    }
    ClusterAssignment { k, assign, centroids }
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

/// Piecewise aggregate approximation of one series down to `m` points:
/// frame i averages the interval [i*n/m, (i+1)*n/m), splitting boundary
/// ticks by fractional overlap. No tick is dropped, the overall mean is
/// preserved exactly, and divisible lengths reduce to plain block means.
pub fn paa(series: &[f64], m: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if m == 0 || m > n {
        return Err(GlslError::Config(format!(
            "paa: target length {m} invalid for a series of {n}"
        )));
    }
    Ok((0..m).map(|i| paa_frame(series, m, i)).collect())
}

/// Value of compressed frame `i` when `series` is squeezed to `m` points.
fn paa_frame(series: &[f64], m: usize, i: usize) -> f64 {
    let n = series.len();
    let step = n as f64 / m as f64;
    let lo = i as f64 * step;
    let hi = (i + 1) as f64 * step;
    let mut acc = 0.0;
    let mut j = lo.floor() as usize;
    while (j as f64) < hi && j < n {
        let cover = ((j + 1) as f64).min(hi) - (j as f64).max(lo);
        if cover > 0.0 {
            acc += series[j] * cover;
        }
        j += 1;
    }
    acc / step
}

/// Compressed frame index range [lo, hi] overlapping raw ticks [t_s, t_e]
/// when n raw ticks compress to m frames.
fn frames_touching(t_s: usize, t_e: usize, n: usize, m: usize) -> (usize, usize) {
    let lo = t_s * m / n;
    let hi = (((t_e + 1) * m).div_ceil(n) - 1).min(m - 1);
    (lo, hi)
}

/// PAA applied to every (mode, node) series of a grid; the tick period is
/// stretched by the compression ratio so wall-clock spacing stays meaningful.
pub fn paa_grid(grid: &UniformGrid, num: usize, den: usize) -> Result<UniformGrid> {
    if num == 0 || den == 0 || num > den {
        return Err(GlslError::Config(format!("paa ratio {num}/{den} out of (0, 1]")));
    }
    let m = grid.ticks * num / den;
    if m == 0 {
        return Err(GlslError::Config(format!(
            "paa ratio {num}/{den} collapses {} ticks to nothing",
            grid.ticks
        )));
    }
    let period = grid.period * grid.ticks as f64 / m as f64;
    let mut out = UniformGrid::zeros(grid.modes, grid.nodes, m, period);
    out.node_ids = grid.node_ids.clone();
    out.mode_names = grid.mode_names.clone();
    for mi in 0..grid.modes {
        for ni in 0..grid.nodes {
            let compressed = paa(grid.series(mi, ni), m)?;
            out.series_mut(mi, ni).copy_from_slice(&compressed);
        }
    }
    Ok(out)
}

/// Window source for training against a PAA stream: each injected window
/// corrupts the raw series over the window's raw span, recomputes only the
/// compressed frames the injection touched (injectors hit exactly one
/// (mode, node) series), cuts the window, and restores both copies. This
/// keeps the training anomaly distribution identical to the evaluation
/// protocol, which also injects raw and compresses.
pub struct CompressedSource<'a> {
    raw: UniformGrid,
    comp: UniformGrid,
    comp_clean: UniformGrid,
    ictx: &'a InjectionContext,
}

impl<'a> CompressedSource<'a> {
    pub fn new(raw: &UniformGrid, comp_clean: &UniformGrid, ictx: &'a InjectionContext) -> Self {
        CompressedSource {
            raw: raw.clone(),
            comp: comp_clean.clone(),
            comp_clean: comp_clean.clone(),
            ictx,
        }
    }

    /// Raw tick interval spanned by the compressed window ending at `end`.
    fn raw_span(&self, end: usize, w: usize) -> (usize, usize) {
        let (n, m) = (self.raw.ticks, self.comp.ticks);
        // trend injectors reference t_s - 1, so clamp the interval
        let t_s = ((end + 1 - w) * n / m).max(1);
        let t_e = (((end + 1) * n).div_ceil(m) - 1).min(n - 1);
        (t_s, t_e)
    }
}

impl WindowSource for CompressedSource<'_> {
    fn ticks(&self) -> usize {
        self.comp.ticks
    }

    fn clean(&self, end: usize, w: usize) -> Result<WindowTensor> {
        window_at(&self.comp, end, w)
    }

    fn injected(&mut self, end: usize, w: usize, rng: &mut ChaCha8Rng) -> Result<WindowTensor> {
        let (n, m) = (self.raw.ticks, self.comp.ticks);
        let (t_s, t_e) = self.raw_span(end, w);
        let r = inject_random(&mut self.raw, t_s, t_e, self.ictx, rng)?;
        let (f_lo, f_hi) = frames_touching(r.t_s, r.t_e, n, m);
        let frames: Vec<f64> = (f_lo..=f_hi)
            .map(|i| paa_frame(self.raw.series(r.mode, r.node), m, i))
            .collect();
        self.comp.series_mut(r.mode, r.node)[f_lo..=f_hi].copy_from_slice(&frames);
        let wt = window_at(&self.comp, end, w)?;
        rollback(&mut self.raw, &r);
        self.comp.series_mut(r.mode, r.node)[f_lo..=f_hi]
            .copy_from_slice(&self.comp_clean.series(r.mode, r.node)[f_lo..=f_hi]);
        Ok(wt)
    }
}

#[derive(Debug, Clone)]
pub struct ClusterRun {
    pub cluster: usize,
    pub nodes: Vec<usize>,
    pub counts: ConfusionCounts,
    pub metrics: MetricsReport,
    pub avg_checkpoint_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ClusteredReport {
    pub assignment: ClusterAssignment,
    pub per_cluster: Vec<ClusterRun>,
    pub counts: ConfusionCounts,
    pub metrics: MetricsReport,
    /// Mean over clusters of the per-checkpoint inference wall-time.
    pub avg_checkpoint_seconds: f64,
}

/// Merge clusters below 2 nodes into the nearest other cluster (a graph
/// layer needs at least an edge); ids are then compacted to 0..k'.
fn merge_small_clusters(assignment: &mut ClusterAssignment) {
    loop {
        let sizes: Vec<usize> = (0..assignment.k)
            .map(|c| assignment.assign.iter().filter(|a| **a == c).count())
            .collect();
        let small = match (0..assignment.k).find(|c| sizes[*c] > 0 && sizes[*c] < 2) {
            Some(c) => c,
            None => break,
        };
        let target = (0..assignment.k)
            .filter(|c| *c != small && sizes[*c] > 0)
            .min_by(|a, b| {
                dist2(assignment.centroids[*a], assignment.centroids[small])
                    .partial_cmp(&dist2(assignment.centroids[*b], assignment.centroids[small]))
                    .unwrap()
            });
        let target = match target {
            Some(t) => t,
            None => break, // single cluster left
        };
        for a in &mut assignment.assign {
            if *a == small {
                *a = target;
            }
        }
    }
    // compact ids
    let mut map = vec![usize::MAX; assignment.k];
    let mut next = 0usize;
    for a in &mut assignment.assign {
        if map[*a] == usize::MAX {
            map[*a] = next;
            next += 1;
        }
        *a = map[*a];
    }
    let mut centroids = vec![(0.0, 0.0); next];
    for (old, new) in map.iter().enumerate() {
        if *new != usize::MAX {
            centroids[*new] = assignment.centroids[old];
        }
    }
    assignment.centroids = centroids;
    assignment.k = next;
}

/// The checkpoint protocol against a PAA-compressed stream: anomalies are
/// injected into the raw series, the stream is block-mean compressed, and
/// the detector only ever sees compressed windows. Checkpoints index raw
/// ticks; decision windows index compressed ticks.
pub fn evaluate_compressed(
    detector: &mut dyn Detector,
    raw: &UniformGrid,
    window: usize,
    ictx: &InjectionContext,
    ec: &EvalConfig,
    num: usize,
    den: usize,
) -> Result<EvalReport> {
    if num == 0 || den == 0 || num > den {
        return Err(GlslError::Config(format!(
            "paa ratio {num}/{den} must satisfy 0 < num <= den"
        )));
    }
    let m_total = raw.ticks * num / den;
    if m_total < window {
        return Err(GlslError::Config(format!(
            "paa ratio {num}/{den} leaves {m_total} ticks, fewer than window {window}"
        )));
    }
    // a compressed window of width W spans ceil(W * n / m) raw ticks
    let window_raw = (window * raw.ticks).div_ceil(m_total);
    let positions = checkpoint_positions(raw.ticks, window_raw, ec.tau, ec.delay, ec.samples)?;
    let compress = |t: usize| (t * m_total / raw.ticks).min(m_total - 1);

    let clean_comp = paa_grid(raw, num, den)?;
    let mut work = raw.clone();
    let mut rng = rng_for(ec.seed, "eval.inject");
    let mut counts = ConfusionCounts::default();
    let mut decisions = Vec::with_capacity(positions.len());
    let started = std::time::Instant::now();

    for (i, &cp) in positions.iter().enumerate() {
        detector.reset();
        if i % 2 == 0 {
            let r = inject_random(&mut work, cp, cp + ec.tau, ictx, &mut rng)?;
            let comp = paa_grid(&work, num, den)?;
            // all windows scored regardless of verdict; see `evaluate`
            let mut decision_window = None;
            for end in compress(cp)..=compress(cp + ec.delay) {
                let wt = window_at(&comp, end, window)?;
                if detector.score(&wt)? > ec.threshold && decision_window.is_none() {
                    decision_window = Some(end);
                }
            }
            rollback(&mut work, &r);
            let verdict = if decision_window.is_some() {
                counts.tp += 1;
                Verdict::Tp
            } else {
                counts.fn_ += 1;
                Verdict::Fn
            };
            decisions.push(CheckpointDecision {
                checkpoint: cp,
                scenario: Scenario::Injected,
                kind: Some(r.kind_applied),
                decision_window,
                verdict,
            });
        } else {
            let end = compress(cp);
            let wt = window_at(&clean_comp, end, window)?;
            let flagged = detector.score(&wt)? > ec.threshold;
            let verdict = if flagged {
                counts.fp += 1;
                Verdict::Fp
            } else {
                counts.tn += 1;
                Verdict::Tn
            };
            decisions.push(CheckpointDecision {
                checkpoint: cp,
                scenario: Scenario::Clean,
                kind: None,
                decision_window: if flagged { Some(end) } else { None },
                verdict,
            });
        }
    }

    let avg = started.elapsed().as_secs_f64() / positions.len() as f64;
    Ok(EvalReport {
        metrics: metrics(&counts),
        counts,
        decisions,
        avg_checkpoint_seconds: avg,
    })
}

/// Everything a clustered run needs besides the data itself.
#[derive(Debug, Clone)]
pub struct ClusteredConfig {
    pub k: usize,
    /// PAA ratio num/den; None leaves the time axis untouched.
    pub paa: Option<(usize, usize)>,
    pub topology: TopologySpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Trend step divisor for the injectors.
    pub p: f64,
    /// Neighbor count scanned by the internode injector.
    pub neighbors: usize,
    pub kmeans_seed: u64,
}

/// Partition, compress, and run one independent model per cluster. Counts
/// are summed across clusters before metrics (micro-average); timing is the
/// mean per-checkpoint inference time across clusters. Every cluster reuses
/// the caller's seeds, so k=1 without PAA reproduces a plain run exactly.
pub fn run_clustered(
    grid: &UniformGrid,
    layout: &NodeLayout,
    cfg: &ClusteredConfig,
) -> Result<ClusteredReport> {
    if layout.len() != grid.nodes {
        return Err(GlslError::Config(format!(
            "layout has {} nodes, grid has {}",
            layout.len(),
            grid.nodes
        )));
    }
    // PAA is stream preprocessing: training consumes the compressed clean
    // stream, while evaluation injects into the raw stream and compresses
    // on the fly, so anomalies pay the same information loss as the data
    let paa = match cfg.paa {
        Some((num, den)) if num != den => Some((num, den)),
        _ => None,
    };
    let train_grid = match paa {
        Some((num, den)) => paa_grid(grid, num, den)?,
        None => grid.clone(),
    };

    let mut assignment = kmeans(layout, cfg.k, cfg.kmeans_seed)?;
    merge_small_clusters(&mut assignment);

    let mut per_cluster = Vec::with_capacity(assignment.k);
    let mut counts = ConfusionCounts::default();
    let mut time_sum = 0.0;
    for c in 0..assignment.k {
        let nodes = assignment.members(c);
        let sub_layout = layout.subset(&nodes);
        let sub_train = train_grid.node_subset(&nodes);
        let sub_raw = grid.node_subset(&nodes);
        let adj = cfg.topology.build(&sub_layout, true)?;

        let mut model_cfg = cfg.model.clone();
        model_cfg.nodes = nodes.len();
        let mut model = GlslModel::new(model_cfg, cfg.train.seed)?;
        let graph = GraphCtx::new(adj, model.cfg.kernel);

        let neighbors = cfg.neighbors.min(nodes.len().saturating_sub(1)).max(1);
        let window = model.cfg.window;
        let report = match paa {
            // one raw-fitted context drives training and evaluation so both
            // draw anomalies from the same distribution
            Some((num, den)) => {
                let ictx = InjectionContext::new(
                    zscore_fit(&sub_raw, 0..sub_raw.ticks)?,
                    cfg.p,
                    neighbors,
                    distance_matrix(&sub_layout),
                );
                let mut source = CompressedSource::new(&sub_raw, &sub_train, &ictx);
                train_with_source(&mut model, &mut source, &graph, &cfg.train)?;
                let mut det = ModelDetector::new(&model, &graph);
                evaluate_compressed(&mut det, &sub_raw, window, &ictx, &cfg.eval, num, den)?
            }
            None => {
                let ictx = InjectionContext::new(
                    zscore_fit(&sub_train, 0..sub_train.ticks)?,
                    cfg.p,
                    neighbors,
                    distance_matrix(&sub_layout),
                );
                train_two_phase(&mut model, &sub_train, &graph, &ictx, &cfg.train)?;
                let mut det = ModelDetector::new(&model, &graph);
                evaluate(&mut det, &sub_raw, window, &ictx, &cfg.eval)?
            }
        };

        counts.merge(&report.counts);
        time_sum += report.avg_checkpoint_seconds;
        per_cluster.push(ClusterRun {
            cluster: c,
            nodes,
            counts: report.counts,
            metrics: report.metrics,
            avg_checkpoint_seconds: report.avg_checkpoint_seconds,
        });
    }

    let k_eff = assignment.k as f64;
    Ok(ClusteredReport {
        assignment,
        metrics: metrics(&counts),
        counts,
        avg_checkpoint_seconds: time_sum / k_eff,
        per_cluster,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob_layout() -> NodeLayout {
        // two 5-node blobs, inter-blob gap 10x the intra-blob spread
        let mut coords = Vec::new();
        for i in 0..5 {
            coords.push((i as f64 * 0.5, 0.0));
        }
        for i in 0..5 {
            coords.push((40.0 + i as f64 * 0.5, 1.0));
        }
        NodeLayout::from_coords(coords)
    }

    #[test]
    fn kmeans_k1_centroid_is_mean() {
        let l = NodeLayout::from_coords(vec![(0.0, 0.0), (2.0, 0.0), (1.0, 3.0)]);
        let a = kmeans(&l, 1, 7).unwrap();
        assert_eq!(a.assign, vec![0, 0, 0]);
        assert!((a.centroids[0].0 - 1.0).abs() < 1e-12);
        assert!((a.centroids[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kmeans_kn_singletons() {
        let l = NodeLayout::from_coords(vec![(0.0, 0.0), (5.0, 0.0), (0.0, 5.0)]);
        let a = kmeans(&l, 3, 1).unwrap();
        let mut seen = a.assign.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        let l = blob_layout();
        for seed in 0..5 {
            let a = kmeans(&l, 2, seed).unwrap();
            let first = a.assign[0];
            assert!(a.assign[..5].iter().all(|c| *c == first), "{:?}", a.assign);
            assert!(a.assign[5..].iter().all(|c| *c != first), "{:?}", a.assign);
        }
    }

    #[test]
    fn kmeans_objective_no_worse_than_start() {
        let l = blob_layout();
        let a = kmeans(&l, 2, 3).unwrap();
        // converged objective must be at or below the trivial single-cluster split
        let single = kmeans(&l, 1, 3).unwrap();
        assert!(a.objective(&l) <= single.objective(&l) + 1e-9);
    }

    #[test]
    fn kmeans_deterministic() {
        let l = blob_layout();
        let a = kmeans(&l, 2, 11).unwrap();
        let b = kmeans(&l, 2, 11).unwrap();
        assert_eq!(a.assign, b.assign);
        assert!(kmeans(&l, 0, 1).is_err());
        assert!(kmeans(&l, 11, 1).is_err());
    }

    #[test]
    fn paa_identity_and_errors() {
        let s = [3.0, -1.0, 4.0, 1.0];
        let id = paa(&s, 4).unwrap();
        assert_eq!(id, s.to_vec());
        assert!(paa(&s, 5).is_err());
        assert!(paa(&s, 0).is_err());
    }

    #[test]
    fn paa_constant_exact_at_any_ratio() {
        let s = [2.5; 11];
        for m in 1..=11 {
            let out = paa(&s, m).unwrap();
            assert_eq!(out.len(), m);
            assert!(out.iter().all(|v| (v - 2.5).abs() < 1e-12), "m={m}: {out:?}");
        }
    }

    #[test]
    fn paa_block_means_when_divisible() {
        let out = paa(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(out, vec![1.5, 3.5]);
        let s: Vec<f64> = (0..60).map(|t| (t as f64 * 0.7).sin() * 3.0 + 0.2).collect();
        let out = paa(&s, 12).unwrap();
        let m1 = s.iter().sum::<f64>() / 60.0;
        let m2 = out.iter().sum::<f64>() / 12.0;
        assert!((m1 - m2).abs() < 1e-12);
    }

    #[test]
    fn paa_fractional_frames_preserve_mean() {
        // 7 ticks into 3 frames: boundaries fall at 7/3 and 14/3, so edge
        // ticks are split by fractional overlap rather than dropped
        let s = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let out = paa(&s, 3).unwrap();
        assert_eq!(out.len(), 3);
        let m1 = s.iter().sum::<f64>() / 7.0;
        let m2 = out.iter().sum::<f64>() / 3.0;
        assert!((m1 - m2).abs() < 1e-9);
        // frame 0 covers ticks 0, 1 and a third of tick 2
        let f0 = (1.0 + 2.0 + 3.0 / 3.0) / (7.0 / 3.0);
        assert!((out[0] - f0).abs() < 1e-9);
    }

    #[test]
    fn paa_grid_stretches_period() {
        let mut g = UniformGrid::zeros(1, 1, 10, 2.0);
        g.series_mut(0, 0).copy_from_slice(&[1., 1., 2., 2., 3., 3., 4., 4., 5., 5.]);
        let out = paa_grid(&g, 1, 2).unwrap();
        assert_eq!(out.ticks, 5);
        assert_eq!(out.period, 4.0);
        assert_eq!(out.series(0, 0), &[1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn compressed_source_matches_full_recompression() {
        let n = 50;
        let mut g = UniformGrid::zeros(2, 3, n, 1.0);
        for mi in 0..2 {
            for ni in 0..3 {
                for t in 0..n {
                    g.series_mut(mi, ni)[t] = ((t as f64) * 0.3 + mi as f64).sin()
                        + 0.2 * ni as f64 * (t as f64 * 0.11).cos();
                }
            }
        }
        let layout = NodeLayout::from_coords(vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let ictx = InjectionContext::new(
            zscore_fit(&g, 0..n).unwrap(),
            10.0,
            2,
            distance_matrix(&layout),
        );
        let comp_clean = paa_grid(&g, 4, 5).unwrap();
        let mut src = CompressedSource::new(&g, &comp_clean, &ictx);
        let mut rng = rng_for(3, "src");
        let w = 8;
        for end in [9, 17, 25, 33, 39] {
            let mut twin = rng.clone();
            let wt = src.injected(end, w, &mut rng).unwrap();
            // replay the same injection on a raw copy, recompress everything
            let mut raw = g.clone();
            let (t_s, t_e) = src.raw_span(end, w);
            inject_random(&mut raw, t_s, t_e, &ictx, &mut twin).unwrap();
            let full = paa_grid(&raw, 4, 5).unwrap();
            assert_eq!(wt.modes, window_at(&full, end, w).unwrap().modes, "end {end}");
            // both working copies restored after the cut
            let clean = src.clean(end, w).unwrap();
            assert_eq!(clean.modes, window_at(&comp_clean, end, w).unwrap().modes);
        }
    }

    #[test]
    fn merge_small_clusters_absorbs_singletons() {
        let mut a = ClusterAssignment {
            k: 3,
            assign: vec![0, 0, 0, 1, 2, 2],
            centroids: vec![(0.0, 0.0), (1.0, 0.0), (10.0, 0.0)],
        };
        merge_small_clusters(&mut a);
        assert_eq!(a.k, 2);
        // the singleton at (1,0) joins the nearer cluster at (0,0)
        assert_eq!(a.assign[3], a.assign[0]);
        let sizes: Vec<usize> =
            (0..a.k).map(|c| a.assign.iter().filter(|x| **x == c).count()).collect();
        assert!(sizes.iter().all(|s| *s >= 2));
    }

    #[test]
    fn clusters_partition_the_nodes() {
        let l = blob_layout();
        for k in 1..=4 {
            let mut a = kmeans(&l, k, 5).unwrap();
            merge_small_clusters(&mut a);
            let mut all: Vec<usize> = (0..a.k).flat_map(|c| a.members(c)).collect();
            all.sort_unstable();
            assert_eq!(all, (0..10).collect::<Vec<_>>());
        }
    }
}
