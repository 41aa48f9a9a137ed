//! Two-phase training (reconstruction first, classification ramping in),
//! the checkpoint-based evaluation protocol, confusion metrics, and the
//! trend-step sensitivity sweep.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::dataset::{window_at, UniformGrid, WindowTensor};
use crate::error::{GlslError, Result};
use crate::inject::{inject_random, rollback, AnomalyKind, InjectionContext};
use crate::model::{blended_loss, cross_entropy, GlslModel, GraphCtx, LatentState};
use crate::rng::rng_for;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Fraction of training windows that get an injected anomaly (label 1).
    pub negative_quota: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            lr: 5e-4,
            negative_quota: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochLoss {
    pub rec: f64,
    pub ce: f64,
    pub blended: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<EpochLoss>,
    pub windows_per_epoch: usize,
}

/// Supplies training windows ending at a given tick. The plain grid source
/// is the normal path; the compressed source (scaling variant) injects into
/// the raw stream and recompresses the touched frames so training negatives
/// pay the same information loss as evaluation anomalies.
pub trait WindowSource {
    fn ticks(&self) -> usize;
    fn clean(&self, end: usize, w: usize) -> Result<WindowTensor>;
    /// Corrupt the stream over the window's span, cut the window, restore.
    fn injected(&mut self, end: usize, w: usize, rng: &mut ChaCha8Rng) -> Result<WindowTensor>;
}

/// Plain source: injections land directly on a working copy of the grid.
pub struct GridSource<'a> {
    work: UniformGrid,
    ictx: &'a InjectionContext,
}

impl<'a> GridSource<'a> {
    pub fn new(grid: &UniformGrid, ictx: &'a InjectionContext) -> Self {
        GridSource { work: grid.clone(), ictx }
    }
}

impl WindowSource for GridSource<'_> {
    fn ticks(&self) -> usize {
        self.work.ticks
    }

    fn clean(&self, end: usize, w: usize) -> Result<WindowTensor> {
        window_at(&self.work, end, w)
    }

    fn injected(&mut self, end: usize, w: usize, rng: &mut ChaCha8Rng) -> Result<WindowTensor> {
        // trend injectors reference t_s - 1, so clamp the interval
        let t_s = (end + 1 - w).max(1);
        let r = inject_random(&mut self.work, t_s, end, self.ictx, rng)?;
        let wt = window_at(&self.work, end, w)?;
        rollback(&mut self.work, &r);
        Ok(wt)
    }
}

/// Training loop: stride-1 windows over the standardized grid, one optimizer
/// step per window, recurrent state carried within an epoch and reset
/// between epochs. Roughly `negative_quota` of the windows are corrupted on
/// a working copy (restored immediately after the window is cut) and
/// labeled anomalous; the rest are labeled clean.
pub fn train_two_phase(
    model: &mut GlslModel,
    grid: &UniformGrid,
    graph: &GraphCtx,
    ictx: &InjectionContext,
    tc: &TrainConfig,
) -> Result<TrainReport> {
    let mut source = GridSource::new(grid, ictx);
    train_with_source(model, &mut source, graph, tc)
}

/// The loop itself, generic over where windows come from.
pub fn train_with_source(
    model: &mut GlslModel,
    source: &mut dyn WindowSource,
    graph: &GraphCtx,
    tc: &TrainConfig,
) -> Result<TrainReport> {
    let w = model.cfg.window;
    if source.ticks() < w + 1 {
        return Err(GlslError::Dataset(format!(
            "{} ticks cannot fit window width {w}",
            source.ticks()
        )));
    }
    if tc.epochs == 0 {
        return Err(GlslError::Config("epochs must be >= 1".into()));
    }
    let mut adam = AdamState::new(&model.params.shapes(), tc.lr);
    let window_ends: Vec<usize> = (w - 1..source.ticks()).collect();
    let mut history = Vec::with_capacity(tc.epochs);

    for epoch in 1..=tc.epochs {
        let mut rng = rng_for(tc.seed, &format!("train.epoch.{epoch}"));
        let mut state = LatentState::zeros(&model.cfg);
        let (mut sum_rec, mut sum_ce, mut sum_blend) = (0.0, 0.0, 0.0);

        for &t in &window_ends {
            let injected = rng.gen_bool(tc.negative_quota);
            let window = if injected {
                source.injected(t, w, &mut rng)?
            } else {
                source.clean(t, w)?
            };
            let label = if injected { 1.0 } else { 0.0 };

            let mut fwd = model.forward(&window, graph, &state)?;
            let l_ce = cross_entropy(&mut fwd.tape, fwd.prob, label)?;
            let loss = blended_loss(&mut fwd.tape, fwd.l_rec, l_ce, epoch)?;

            let rec_v = fwd.tape.value(fwd.l_rec).item();
            let ce_v = fwd.tape.value(l_ce).item();
            let blend_v = fwd.tape.value(loss).item();
            if !blend_v.is_finite() {
                return Err(GlslError::NonFinite {
                    op: "train_two_phase",
                    msg: format!("loss at epoch {epoch}, window ending {t}"),
                });
            }
            sum_rec += rec_v;
            sum_ce += ce_v;
            sum_blend += blend_v;

            let grads = fwd.tape.backward(loss)?;
            let gvec = model.params.collect_grads(&fwd.param_ids, &grads);
            adam.step(model.params.tensors_mut(), &gvec)?;
            state = fwd.next_state;
        }

        let n = window_ends.len() as f64;
        history.push(EpochLoss {
            rec: sum_rec / n,
            ce: sum_ce / n,
            blended: sum_blend / n,
        });
    }
    Ok(TrainReport {
        history,
        windows_per_epoch: window_ends.len(),
    })
}

/// Anything that can turn a window into an anomaly probability. The trained
/// model is the real implementation; the others exist to pin down the
/// evaluation accounting.
pub trait Detector {
    /// Clear any recurrent state before a fresh scan.
    fn reset(&mut self);
    fn score(&mut self, window: &WindowTensor) -> Result<f64>;
}

pub struct ModelDetector<'a> {
    model: &'a GlslModel,
    graph: &'a GraphCtx,
    state: LatentState,
}

impl<'a> ModelDetector<'a> {
    pub fn new(model: &'a GlslModel, graph: &'a GraphCtx) -> Self {
        let state = LatentState::zeros(&model.cfg);
        ModelDetector { model, graph, state }
    }
}

impl Detector for ModelDetector<'_> {
    fn reset(&mut self) {
        self.state = LatentState::zeros(&self.model.cfg);
    }
    fn score(&mut self, window: &WindowTensor) -> Result<f64> {
        let fwd = self.model.forward(window, self.graph, &self.state)?;
        let p = fwd.p_anomaly();
        self.state = fwd.next_state;
        Ok(p)
    }
}

/// Flags any window that deviates from a pristine copy of the stream.
pub struct PerfectDetector {
    clean: UniformGrid,
}

impl PerfectDetector {
    pub fn new(clean: UniformGrid) -> Self {
        PerfectDetector { clean }
    }
}

impl Detector for PerfectDetector {
    fn reset(&mut self) {}
    fn score(&mut self, window: &WindowTensor) -> Result<f64> {
        let reference = window_at(&self.clean, window.end, window.width())?;
        let differs = window
            .modes
            .iter()
            .zip(&reference.modes)
            .any(|(a, b)| a != b);
        Ok(if differs { 1.0 } else { 0.0 })
    }
}

/// Emits a fixed probability regardless of input.
pub struct ConstantDetector(pub f64);

impl Detector for ConstantDetector {
    fn reset(&mut self) {}
    fn score(&mut self, _: &WindowTensor) -> Result<f64> {
        Ok(self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// S1: an anomaly is injected at the checkpoint.
    Injected,
    /// S2: the stream is left clean.
    Clean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Tp,
    Fn,
    Tn,
    Fp,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

/// Confusion-count metrics with the 0/0 -> 0 convention.
pub fn metrics(c: &ConfusionCounts) -> MetricsReport {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let accuracy = ratio(c.tp + c.tn, c.total());
    MetricsReport { precision, recall, f1, accuracy }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointDecision {
    pub checkpoint: usize,
    pub scenario: Scenario,
    /// Anomaly kind actually applied (S1 only).
    pub kind: Option<AnomalyKind>,
    /// Window end that first triggered a flag, if any.
    pub decision_window: Option<usize>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Number of checkpoints T, split evenly between injected and clean.
    pub samples: usize,
    /// Injection interval length: anomalies span [cp, cp + tau].
    pub tau: usize,
    /// Allowable detection delay after an injection checkpoint.
    pub delay: usize,
    /// A window is flagged when the score strictly exceeds this.
    pub threshold: f64,
    pub seed: u64,
}

impl EvalConfig {
    pub fn defaults(window: usize, seed: u64) -> Self {
        EvalConfig {
            samples: 100,
            tau: 10,
            delay: window,
            threshold: 0.5,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub counts: ConfusionCounts,
    pub metrics: MetricsReport,
    pub decisions: Vec<CheckpointDecision>,
    /// Mean wall-clock seconds spent per checkpoint (reported separately
    /// from the metrics so outputs stay reproducible byte for byte).
    pub avg_checkpoint_seconds: f64,
}

/// Evenly spaced checkpoint positions over the valid range; deterministic
/// given T. Alternate positions are assigned the injected scenario.
pub fn checkpoint_positions(
    ticks: usize,
    window: usize,
    tau: usize,
    delay: usize,
    samples: usize,
) -> Result<Vec<usize>> {
    if samples == 0 {
        return Err(GlslError::Config("need at least one checkpoint".into()));
    }
    // trend injectors reference cp - 1, windows need W ticks of history, and
    // both the injection interval and the delay scan must fit before the end
    let lo = window.max(1);
    let reach = tau.max(delay);
    if ticks < lo + reach + 1 {
        return Err(GlslError::Config(format!(
            "{ticks} ticks leave no valid checkpoint range (window {window}, tau {tau}, delay {delay})"
        )));
    }
    let hi = ticks - 1 - reach;
    let span = hi - lo;
    if samples > span + 1 {
        return Err(GlslError::Config(format!(
            "{samples} checkpoints requested but only {} positions available",
            span + 1
        )));
    }
    let positions = if samples == 1 {
        vec![lo]
    } else {
        (0..samples)
            .map(|i| lo + (i * span + (samples - 1) / 2) / (samples - 1))
            .collect()
    };
    Ok(positions)
}

/// The checkpoint evaluation protocol. Half the checkpoints get an anomaly
/// injected over [cp, cp + tau] and count as detected (TP) if any window
/// ending within [cp, cp + delay] is flagged; the other half stay clean and
/// count as a false alarm (FP) if the single window ending at cp is flagged.
/// Works on a private copy; the caller's grid is never mutated.
pub fn evaluate(
    detector: &mut dyn Detector,
    grid: &UniformGrid,
    window: usize,
    ictx: &InjectionContext,
    ec: &EvalConfig,
) -> Result<EvalReport> {
    let positions = checkpoint_positions(grid.ticks, window, ec.tau, ec.delay, ec.samples)?;
    let mut work = grid.clone();
    let mut rng = rng_for(ec.seed, "eval.inject");
    let mut counts = ConfusionCounts::default();
    let mut decisions = Vec::with_capacity(positions.len());
    let started = Instant::now();

    for (i, &cp) in positions.iter().enumerate() {
        detector.reset();
        if i % 2 == 0 {
            let r = inject_random(&mut work, cp, cp + ec.tau, ictx, &mut rng)?;
            // every window in the allowance is scored, hit or miss, so the
            // inference cost per checkpoint does not depend on the verdict
            let mut decision_window = None;
            for end in cp..=cp + ec.delay {
                let wt = window_at(&work, end, window)?;
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
            let wt = window_at(&work, cp, window)?;
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
                decision_window: if flagged { Some(cp) } else { None },
                verdict,
            });
        }
    }
    debug_assert_eq!(work, *grid);

    let avg = started.elapsed().as_secs_f64() / positions.len() as f64;
    Ok(EvalReport {
        metrics: metrics(&counts),
        counts,
        decisions,
        avg_checkpoint_seconds: avg,
    })
}

/// Re-evaluate a frozen model across trend step divisors p; larger p means
/// gentler trend reversals, which should get harder to detect. The same
/// evaluation seed is shared so only p varies between runs.
pub fn sensitivity_sweep(
    model: &GlslModel,
    graph: &GraphCtx,
    grid: &UniformGrid,
    base_ictx: &InjectionContext,
    p_values: &[f64],
    ec: &EvalConfig,
) -> Result<Vec<(f64, EvalReport)>> {
    let mut out = Vec::with_capacity(p_values.len());
    for &p in p_values {
        if p <= 0.0 {
            return Err(GlslError::Config(format!("trend divisor p={p} must be positive")));
        }
        let mut ictx = base_ictx.clone();
        ictx.p = p;
        let mut det = ModelDetector::new(model, graph);
        let report = evaluate(&mut det, grid, model.cfg.window, &ictx, ec)?;
        out.push((p, report));
    }
    Ok(out)
}
