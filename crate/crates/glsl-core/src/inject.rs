//! Self-supervised anomaly generators: scale, negation, sudden change, and
//! the two correlation-breaking trend-reversal injectors (intermodal and
//! internode), plus the Pearson gate they share.
//!
//! Every injector touches exactly one (mode, node) series over [t_s, t_e]
//! and records the original values so the change can be rolled back.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{NormStats, UniformGrid};
use crate::error::{GlslError, Result};
use crate::topology::DistanceMatrix;

pub const SCALE_CONSTANTS: [f64; 3] = [0.5, 1.5, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyKind {
    Scale,
    Negation,
    Sudden,
    Intermodal,
    Internode,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 5] = [
        AnomalyKind::Scale,
        AnomalyKind::Negation,
        AnomalyKind::Sudden,
        AnomalyKind::Intermodal,
        AnomalyKind::Internode,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AnomalyKind::Scale => "scale",
            AnomalyKind::Negation => "negation",
            AnomalyKind::Sudden => "sudden",
            AnomalyKind::Intermodal => "intermodal",
            AnomalyKind::Internode => "internode",
        }
    }
}

impl std::str::FromStr for AnomalyKind {
    type Err = GlslError;
    fn from_str(s: &str) -> Result<Self> {
        AnomalyKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| GlslError::Config(format!("unknown anomaly kind '{s}'")))
    }
}

#[derive(Debug, Clone)]
pub struct InjectionResult {
    pub kind_requested: AnomalyKind,
    /// Differs from the request when the correlation gate forced the
    /// trend-reversal injectors onto a basic fallback.
    pub kind_applied: AnomalyKind,
    pub t_s: usize,
    pub t_e: usize,
    pub node: usize,
    pub mode: usize,
    original: Vec<f64>,
}

impl InjectionResult {
    pub fn interval(&self) -> (usize, usize) {
        (self.t_s, self.t_e)
    }
}

/// Restore the cells an injection modified.
pub fn rollback(grid: &mut UniformGrid, result: &InjectionResult) {
    let series = grid.series_mut(result.mode, result.node);
    series[result.t_s..=result.t_e].copy_from_slice(&result.original);
}

/// Pearson correlation with a degeneracy flag: zero variance on either side
/// reports r = 0 and `degenerate = true` (treated as uncorrelated).
pub fn pearson_checked(p: &[f64], q: &[f64]) -> Result<(f64, bool)> {
    if p.len() != q.len() || p.len() < 2 {
        return Err(GlslError::Injection(format!(
            "pearson needs two equal-length vectors of length >= 2, got {} and {}",
            p.len(),
            q.len()
        )));
    }
    let n = p.len() as f64;
    let mp = p.iter().sum::<f64>() / n;
    let mq = q.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vp = 0.0;
    let mut vq = 0.0;
    for i in 0..p.len() {
        let dp = p[i] - mp;
        let dq = q[i] - mq;
        cov += dp * dq;
        vp += dp * dp;
        vq += dq * dq;
    }
    if vp == 0.0 || vq == 0.0 {
        return Ok((0.0, true));
    }
    Ok(((cov / (vp * vq).sqrt()).clamp(-1.0, 1.0), false))
}

pub fn pearson(p: &[f64], q: &[f64]) -> Result<f64> {
    pearson_checked(p, q).map(|(r, _)| r)
}

/// The strict correlation gate of the trend-reversal injectors:
/// -1 < r < -0.8 or 0.8 < r < 1. Exactly |r| = 1 fails, as written in the
/// pseudocode it implements.
pub fn correlation_gate(r: f64) -> bool {
    (r > 0.8 && r < 1.0) || (r < -0.8 && r > -1.0)
}

fn check_interval(grid: &UniformGrid, t_s: usize, t_e: usize) -> Result<()> {
    if t_s >= t_e || t_e >= grid.ticks {
        return Err(GlslError::Injection(format!(
            "bad interval [{t_s}, {t_e}] for {} ticks",
            grid.ticks
        )));
    }
    Ok(())
}

fn snapshot(grid: &UniformGrid, mode: usize, node: usize, t_s: usize, t_e: usize) -> Vec<f64> {
    grid.series(mode, node)[t_s..=t_e].to_vec()
}

/// Multiply the interval by one constant drawn from {0.5, 1.5, 2}.
pub fn inject_scale(
    grid: &mut UniformGrid,
    mode: usize,
    node: usize,
    t_s: usize,
    t_e: usize,
    rng: &mut ChaCha8Rng,
) -> Result<InjectionResult> {
    check_interval(grid, t_s, t_e)?;
    let original = snapshot(grid, mode, node, t_s, t_e);
    let c = SCALE_CONSTANTS[rng.gen_range(0..SCALE_CONSTANTS.len())];
    for v in &mut grid.series_mut(mode, node)[t_s..=t_e] {
        *v *= c;
    }
    Ok(InjectionResult {
        kind_requested: AnomalyKind::Scale,
        kind_applied: AnomalyKind::Scale,
        t_s,
        t_e,
        node,
        mode,
        original,
    })
}

/// Mirror the interval: x -> -x.
pub fn inject_negation(
    grid: &mut UniformGrid,
    mode: usize,
    node: usize,
    t_s: usize,
    t_e: usize,
) -> Result<InjectionResult> {
    check_interval(grid, t_s, t_e)?;
    let original = snapshot(grid, mode, node, t_s, t_e);
    for v in &mut grid.series_mut(mode, node)[t_s..=t_e] {
        *v = -*v;
    }
    Ok(InjectionResult {
        kind_requested: AnomalyKind::Negation,
        kind_applied: AnomalyKind::Negation,
        t_s,
        t_e,
        node,
        mode,
        original,
    })
}

/// Shift the whole interval by +-(X_up - X_down) of the mode, sign drawn
/// once per injection.
pub fn inject_sudden(
    grid: &mut UniformGrid,
    mode: usize,
    node: usize,
    t_s: usize,
    t_e: usize,
    bounds: &NormStats,
    rng: &mut ChaCha8Rng,
) -> Result<InjectionResult> {
    check_interval(grid, t_s, t_e)?;
    let span = bounds.span(mode);
    if span <= 0.0 {
        return Err(GlslError::Injection(format!(
            "mode {mode} is constant (quantile span zero), sudden change impossible"
        )));
    }
    let original = snapshot(grid, mode, node, t_s, t_e);
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    for v in &mut grid.series_mut(mode, node)[t_s..=t_e] {
        *v += sign * span;
    }
    Ok(InjectionResult {
        kind_requested: AnomalyKind::Sudden,
        kind_applied: AnomalyKind::Sudden,
        t_s,
        t_e,
        node,
        mode,
        original,
    })
}

/// Sign of the least-squares slope over the interval; zero slope counts as
/// an uptrend.
fn is_uptrend(slice: &[f64]) -> bool {
    let n = slice.len() as f64;
    let mean_t = (n - 1.0) / 2.0;
    let mean_v = slice.iter().sum::<f64>() / n;
    let mut num = 0.0;
    for (i, v) in slice.iter().enumerate() {
        num += (i as f64 - mean_t) * (v - mean_v);
    }
    num >= 0.0
}

/// The correlation-breaking walk: step the value down then up (V-shape) for
/// an uptrend, up then down for a downtrend, by span/p plus a small random
/// excitation per step.
fn trend_walk(
    grid: &mut UniformGrid,
    mode: usize,
    node: usize,
    t_s: usize,
    t_e: usize,
    base: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if t_s == 0 {
        return Err(GlslError::Injection(
            "trend-reversal injection needs t_s >= 1 (walk references t_s - 1)".into(),
        ));
    }
    let uptrend = is_uptrend(&grid.series(mode, node)[t_s..=t_e]);
    let mid = t_s + (t_e - t_s) / 2;
    let series = grid.series_mut(mode, node);
    for t in t_s..=t_e {
        // excitation sigma in (0, base/2), added or subtracted
        let sigma = rng.gen_range(0.0..base / 2.0);
        let sigma = if rng.gen_bool(0.5) { sigma } else { -sigma };
        let step = base + sigma;
        let first_half = t < mid;
        let downward = first_half == uptrend;
        series[t] = if downward {
            series[t - 1] - step
        } else {
            series[t - 1] + step
        };
    }
    Ok(())
}

fn fallback_basic(
    grid: &mut UniformGrid,
    kind_requested: AnomalyKind,
    mode: usize,
    node: usize,
    t_s: usize,
    t_e: usize,
    bounds: &NormStats,
    rng: &mut ChaCha8Rng,
) -> Result<InjectionResult> {
    let mut result = match rng.gen_range(0..3) {
        0 => inject_scale(grid, mode, node, t_s, t_e, rng)?,
        1 => inject_negation(grid, mode, node, t_s, t_e)?,
        _ => inject_sudden(grid, mode, node, t_s, t_e, bounds, rng)?,
    };
    result.kind_requested = kind_requested;
    Ok(result)
}

/// Intermodal anomaly: break the correlation between modes on one node.
/// Scans the other modes on the chosen node over the interval; the first one
/// passing the correlation gate triggers the trend-reversal walk, otherwise
/// a basic anomaly is injected instead (recorded in `kind_applied`).
pub fn inject_intermodal(
    grid: &mut UniformGrid,
    t_s: usize,
    t_e: usize,
    bounds: &NormStats,
    p: f64,
    rng: &mut ChaCha8Rng,
) -> Result<InjectionResult> {
    check_interval(grid, t_s, t_e)?;
    if grid.modes < 2 {
        return Err(GlslError::Injection("intermodal needs at least 2 modes".into()));
    }
    let node = rng.gen_range(0..grid.nodes);
    let mode = rng.gen_range(0..grid.modes);
    let inj_slice = snapshot(grid, mode, node, t_s, t_e);

    let mut correlated = false;
    for other in 0..grid.modes {
        if other == mode {
            continue;
        }
        let (r, degenerate) =
            pearson_checked(&inj_slice, &grid.series(other, node)[t_s..=t_e])?;
        if !degenerate && correlation_gate(r) {
            correlated = true;
            break;
        }
    }

    if !correlated {
        return fallback_basic(grid, AnomalyKind::Intermodal, mode, node, t_s, t_e, bounds, rng);
    }
    let base = bounds.span(mode) / p;
    trend_walk(grid, mode, node, t_s, t_e, base, rng)?;
    Ok(InjectionResult {
        kind_requested: AnomalyKind::Intermodal,
        kind_applied: AnomalyKind::Intermodal,
        t_s,
        t_e,
        node,
        mode,
        original: inj_slice,
    })
}

/// Internode anomaly: break the correlation between neighboring nodes within
/// one mode. The scan runs over the same mode on the k nearest neighbors
/// (ascending distance); the same gate and fallback rule apply.
#[allow(clippy::too_many_arguments)]
pub fn inject_internode(
    grid: &mut UniformGrid,
    t_s: usize,
    t_e: usize,
    bounds: &NormStats,
    p: f64,
    k: usize,
    distances: &DistanceMatrix,
    rng: &mut ChaCha8Rng,
) -> Result<InjectionResult> {
    check_interval(grid, t_s, t_e)?;
    if grid.nodes < 2 {
        return Err(GlslError::Injection("internode needs at least 2 nodes".into()));
    }
    let k = k.min(grid.nodes - 1);
    let node = rng.gen_range(0..grid.nodes);
    let mode = rng.gen_range(0..grid.modes);
    let inj_slice = snapshot(grid, mode, node, t_s, t_e);

    let mut correlated = false;
    for neighbor in distances.k_nearest(node, k) {
        let (r, degenerate) =
            pearson_checked(&inj_slice, &grid.series(mode, neighbor)[t_s..=t_e])?;
        if !degenerate && correlation_gate(r) {
            correlated = true;
            break;
        }
    }

    if !correlated {
        return fallback_basic(grid, AnomalyKind::Internode, mode, node, t_s, t_e, bounds, rng);
    }
    let base = bounds.span(mode) / p;
    trend_walk(grid, mode, node, t_s, t_e, base, rng)?;
    Ok(InjectionResult {
        kind_requested: AnomalyKind::Internode,
        kind_applied: AnomalyKind::Internode,
        t_s,
        t_e,
        node,
        mode,
        original: inj_slice,
    })
}

/// Everything the random dispatcher needs besides the grid and interval.
#[derive(Debug, Clone)]
pub struct InjectionContext {
    pub bounds: NormStats,
    pub p: f64,
    pub k: usize,
    pub distances: DistanceMatrix,
    /// Subset of kinds to draw from; defaults to all five.
    pub kinds: Vec<AnomalyKind>,
}

impl InjectionContext {
    pub fn new(bounds: NormStats, p: f64, k: usize, distances: DistanceMatrix) -> Self {
        InjectionContext {
            bounds,
            p,
            k,
            distances,
            kinds: AnomalyKind::ALL.to_vec(),
        }
    }
}

/// Uniformly select an anomaly kind and dispatch. Basic kinds get a random
/// (node, mode) target; the trend injectors pick their own.
pub fn inject_random(
    grid: &mut UniformGrid,
    t_s: usize,
    t_e: usize,
    ctx: &InjectionContext,
    rng: &mut ChaCha8Rng,
) -> Result<InjectionResult> {
    let kind = ctx.kinds[rng.gen_range(0..ctx.kinds.len())];
    match kind {
        AnomalyKind::Scale | AnomalyKind::Negation | AnomalyKind::Sudden => {
            let node = rng.gen_range(0..grid.nodes);
            let mode = rng.gen_range(0..grid.modes);
            match kind {
                AnomalyKind::Scale => inject_scale(grid, mode, node, t_s, t_e, rng),
                AnomalyKind::Negation => inject_negation(grid, mode, node, t_s, t_e),
                _ => inject_sudden(grid, mode, node, t_s, t_e, &ctx.bounds, rng),
            }
        }
        AnomalyKind::Intermodal => inject_intermodal(grid, t_s, t_e, &ctx.bounds, ctx.p, rng),
        AnomalyKind::Internode => inject_internode(
            grid,
            t_s,
            t_e,
            &ctx.bounds,
            ctx.p,
            ctx.k,
            &ctx.distances,
            rng,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::zscore_fit;
    use crate::rng::rng_for;

    fn grid_with(series: &[&[f64]]) -> UniformGrid {
        // series indexed [mode][values], single node
        let ticks = series[0].len();
        let mut g = UniformGrid::zeros(series.len(), 1, ticks, 1.0);
        for (m, s) in series.iter().enumerate() {
            g.series_mut(m, 0).copy_from_slice(s);
        }
        g
    }

    #[test]
    fn pearson_basics() {
        let p = [1.0, 2.0, 3.0, 4.0];
        let q: Vec<f64> = p.iter().map(|v| -v).collect();
        assert!((pearson(&p, &p).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&p, &q).unwrap() + 1.0).abs() < 1e-12);
        let a = [1.0, -1.0, 1.0, -1.0];
        let b = [1.0, 1.0, -1.0, -1.0];
        assert!(pearson(&a, &b).unwrap().abs() < 1e-12);
    }

    #[test]
    fn pearson_degenerate_flagged() {
        let (r, flag) = pearson_checked(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r, 0.0);
        assert!(flag);
    }

    #[test]
    fn pearson_symmetric() {
        let p = [0.3, -1.2, 2.5, 0.0, 1.1];
        let q = [1.0, 0.4, -0.8, 2.2, 0.9];
        assert_eq!(pearson(&p, &q).unwrap(), pearson(&q, &p).unwrap());
    }

    #[test]
    fn gate_excludes_exact_unity() {
        assert!(!correlation_gate(1.0));
        assert!(!correlation_gate(-1.0));
        assert!(correlation_gate(0.9));
        assert!(correlation_gate(-0.9));
        assert!(!correlation_gate(0.8));
        assert!(!correlation_gate(0.0));
    }

    #[test]
    fn negation_is_involution_and_local() {
        let mut g = grid_with(&[&[1.0, -2.0, 0.0, 5.0, 7.0]]);
        let before = g.clone();
        let r1 = inject_negation(&mut g, 0, 0, 1, 3).unwrap();
        assert_eq!(g.series(0, 0), &[1.0, 2.0, -0.0, -5.0, 7.0]);
        assert_eq!(g.series(0, 0)[0], before.series(0, 0)[0]);
        inject_negation(&mut g, 0, 0, 1, 3).unwrap();
        for (a, b) in g.series(0, 0).iter().zip(before.series(0, 0)) {
            assert_eq!(a, b);
        }
        assert_eq!(r1.interval(), (1, 3));
    }

    #[test]
    fn scale_constant_from_set() {
        let mut g = grid_with(&[&[3.0, 3.0, 3.0, 3.0]]);
        let mut rng = rng_for(1, "scale");
        inject_scale(&mut g, 0, 0, 1, 2, &mut rng).unwrap();
        let v = g.series(0, 0)[1];
        assert!(SCALE_CONSTANTS.iter().any(|c| (v - 3.0 * c).abs() < 1e-12));
        assert_eq!(g.series(0, 0)[0], 3.0);
        assert_eq!(g.series(0, 0)[3], 3.0);
    }

    #[test]
    fn sudden_offset_constant_over_interval() {
        let mut g = grid_with(&[&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0]]);
        let bounds = zscore_fit(&g, 0..10).unwrap();
        let span = bounds.span(0);
        assert!(span > 0.0);
        let mut rng = rng_for(2, "sudden");
        let before = g.clone();
        inject_sudden(&mut g, 0, 0, 2, 5, &bounds, &mut rng).unwrap();
        let d0 = g.series(0, 0)[2] - before.series(0, 0)[2];
        for t in 2..=5 {
            let d = g.series(0, 0)[t] - before.series(0, 0)[t];
            assert!((d - d0).abs() < 1e-12);
        }
        assert!((d0.abs() - span).abs() < 1e-12);
    }

    #[test]
    fn sudden_constant_mode_errors() {
        let mut g = grid_with(&[&[5.0; 10]]);
        let bounds = zscore_fit(&g, 0..10).unwrap();
        let mut rng = rng_for(3, "sudden");
        assert!(inject_sudden(&mut g, 0, 0, 2, 5, &bounds, &mut rng).is_err());
    }

    #[test]
    fn intermodal_reverses_lockstep_uptrend() {
        // two modes rising in near-lockstep (gate needs |r| strictly < 1)
        let m0: Vec<f64> = (0..20).map(|t| t as f64 + if t % 2 == 0 { 0.01 } else { 0.0 }).collect();
        let m1: Vec<f64> = (0..20).map(|t| 2.0 * t as f64).collect();
        let mut g = grid_with(&[&m0, &m1]);
        let bounds = zscore_fit(&g, 0..20).unwrap();
        // try seeds until the injected mode is mode 0 on an uptrend
        for seed in 0..50 {
            let mut trial = g.clone();
            let mut rng = rng_for(seed, "intermodal");
            let r = inject_intermodal(&mut trial, 4, 14, &bounds, 40.0, &mut rng).unwrap();
            assert_eq!(r.kind_applied, AnomalyKind::Intermodal);
            let s = trial.series(r.mode, 0);
            let mid = 4 + (14 - 4) / 2;
            for t in 4..mid {
                assert!(s[t] < s[t - 1], "seed {seed}: first half must fall at t={t}");
            }
            for t in mid..=14 {
                assert!(s[t] > s[t - 1], "seed {seed}: second half must rise at t={t}");
            }
            g = grid_with(&[&m0, &m1]);
        }
    }

    #[test]
    fn intermodal_uncorrelated_falls_back() {
        let m0: Vec<f64> = (0..20).map(|t| (t as f64 * 2.13).sin()).collect();
        let m1: Vec<f64> = (0..20).map(|t| (t as f64 * 0.71 + 3.0).cos()).collect();
        let r01 = pearson(&m0[4..=14], &m1[4..=14]).unwrap();
        assert!(r01.abs() <= 0.8, "fixture must be uncorrelated, r={r01}");
        let mut g = grid_with(&[&m0, &m1]);
        let bounds = zscore_fit(&g, 0..20).unwrap();
        let mut rng = rng_for(5, "fallback");
        let r = inject_intermodal(&mut g, 4, 14, &bounds, 40.0, &mut rng).unwrap();
        assert_eq!(r.kind_requested, AnomalyKind::Intermodal);
        assert!(matches!(
            r.kind_applied,
            AnomalyKind::Scale | AnomalyKind::Negation | AnomalyKind::Sudden
        ));
    }

    #[test]
    fn internode_locality_and_rollback() {
        use crate::topology::{distance_matrix, NodeLayout};
        let mut g = UniformGrid::zeros(1, 3, 30, 1.0);
        for n in 0..3 {
            for t in 0..30 {
                g.set(0, n, t, t as f64 + n as f64 * 0.013 + (t as f64 * 0.37).sin() * 0.05);
            }
        }
        let layout = NodeLayout::from_coords(vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let d = distance_matrix(&layout);
        let bounds = zscore_fit(&g, 0..30).unwrap();
        let before = g.clone();
        let mut rng = rng_for(7, "internode");
        let r = inject_internode(&mut g, 5, 15, &bounds, 40.0, 1, &d, &mut rng).unwrap();
        // cells outside the target are untouched
        for m in 0..1 {
            for n in 0..3 {
                for t in 0..30 {
                    if m == r.mode && n == r.node && (r.t_s..=r.t_e).contains(&t) {
                        continue;
                    }
                    assert_eq!(g.get(m, n, t), before.get(m, n, t));
                }
            }
        }
        rollback(&mut g, &r);
        assert_eq!(g, before);
    }

    #[test]
    fn random_dispatch_frequencies() {
        use crate::topology::{distance_matrix, NodeLayout};
        let layout = NodeLayout::from_coords(vec![(0.0, 0.0), (5.0, 0.0)]);
        let g0 = {
            let mut g = UniformGrid::zeros(2, 2, 40, 1.0);
            for m in 0..2 {
                for n in 0..2 {
                    for t in 0..40 {
                        g.set(m, n, t, (t as f64 * 0.3 + m as f64).sin() + 0.1 * n as f64);
                    }
                }
            }
            g
        };
        let bounds = zscore_fit(&g0, 0..40).unwrap();
        let ctx = InjectionContext::new(bounds, 40.0, 1, distance_matrix(&layout));
        let mut counts = [0usize; 5];
        let mut rng = rng_for(11, "dispatch");
        for _ in 0..1000 {
            let mut g = g0.clone();
            let r = inject_random(&mut g, 5, 15, &ctx, &mut rng).unwrap();
            let idx = AnomalyKind::ALL
                .iter()
                .position(|k| *k == r.kind_requested)
                .unwrap();
            counts[idx] += 1;
            assert!(r.t_e > r.t_s);
        }
        for c in counts {
            let freq = c as f64 / 1000.0;
            assert!((freq - 0.2).abs() < 0.05, "freq={freq}");
        }
    }

    #[test]
    fn random_dispatch_deterministic() {
        use crate::topology::{distance_matrix, NodeLayout};
        let layout = NodeLayout::from_coords(vec![(0.0, 0.0), (5.0, 0.0)]);
        let mut g = UniformGrid::zeros(2, 2, 40, 1.0);
        for m in 0..2 {
            for n in 0..2 {
                for t in 0..40 {
                    g.set(m, n, t, (t as f64 * 0.3).sin() + m as f64 + 0.1 * n as f64);
                }
            }
        }
        let bounds = zscore_fit(&g, 0..40).unwrap();
        let ctx = InjectionContext::new(bounds, 40.0, 1, distance_matrix(&layout));
        let mut g1 = g.clone();
        let mut g2 = g.clone();
        let r1 = inject_random(&mut g1, 5, 15, &ctx, &mut rng_for(21, "x")).unwrap();
        let r2 = inject_random(&mut g2, 5, 15, &ctx, &mut rng_for(21, "x")).unwrap();
        assert_eq!(r1.kind_applied, r2.kind_applied);
        assert_eq!(g1, g2);
    }
}
