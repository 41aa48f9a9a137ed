//! Ingestion of raw sensor logs and synthetic streams into a uniform
//! modes x nodes x ticks grid, z-score standardization with a training-only
//! fit, and sliding-window access.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GlslError, Result};
use crate::rng::rng_for;
use crate::tensor::Tensor;
use crate::topology::NodeLayout;

pub const MODE_NAMES: [&str; 4] = ["temperature", "humidity", "light", "voltage"];

#[derive(Debug, Clone)]
pub struct RawReading {
    /// Absolute seconds.
    pub timestamp: f64,
    pub mote_id: u64,
    pub temperature: f64,
    pub humidity: f64,
    pub light: f64,
    pub voltage: f64,
}

impl RawReading {
    pub fn mode(&self, name: &str) -> Option<f64> {
        match name {
            "temperature" => Some(self.temperature),
            "humidity" => Some(self.humidity),
            "light" => Some(self.light),
            "voltage" => Some(self.voltage),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParseStats {
    pub parsed: usize,
    pub malformed: usize,
}

/// Days since 1970-01-01 for a civil date (Howard Hinnant's algorithm).
fn days_from_civil(y: i64, m: u32, d: u32) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = (y - era * 400) as u64;
    let mp = ((m + 9) % 12) as u64;
    let doy = (153 * mp + 2) / 5 + d as u64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146097 + doe as i64 - 719468
}

fn parse_datetime(date: &str, time: &str) -> Option<f64> {
    let mut dp = date.split('-');
    let y: i64 = dp.next()?.parse().ok()?;
    let m: u32 = dp.next()?.parse().ok()?;
    let d: u32 = dp.next()?.parse().ok()?;
    if !(1..=12).contains(&m) || !(1..=31).contains(&d) {
        return None;
    }
    let mut tp = time.split(':');
    let hh: f64 = tp.next()?.parse().ok()?;
    let mm: f64 = tp.next()?.parse().ok()?;
    let ss: f64 = tp.next()?.parse().ok()?;
    Some(days_from_civil(y, m, d) as f64 * 86400.0 + hh * 3600.0 + mm * 60.0 + ss)
}

fn parse_ibrl_line(line: &str) -> Option<RawReading> {
    let tok: Vec<&str> = line.split_whitespace().collect();
    // date time epoch moteid temperature humidity light voltage
    if tok.len() != 8 {
        return None;
    }
    let timestamp = parse_datetime(tok[0], tok[1])?;
    let mote_id: u64 = tok[3].parse().ok()?;
    if mote_id < 1 {
        return None;
    }
    let nums: Vec<f64> = tok[4..8]
        .iter()
        .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect::<Option<Vec<f64>>>()?;
    Some(RawReading {
        timestamp,
        mote_id,
        temperature: nums[0],
        humidity: nums[1],
        light: nums[2],
        voltage: nums[3],
    })
}

/// Parse the whitespace-separated raw log. Malformed lines are skipped and
/// counted; readings are returned in file order (the file is unordered).
pub fn parse_ibrl(path: &Path) -> Result<(Vec<RawReading>, ParseStats)> {
    let text = std::fs::read_to_string(path)?;
    parse_ibrl_text(&text)
}

pub fn parse_ibrl_text(text: &str) -> Result<(Vec<RawReading>, ParseStats)> {
    let mut readings = Vec::new();
    let mut malformed = 0usize;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_ibrl_line(line) {
            Some(r) => readings.push(r),
            None => malformed += 1,
        }
    }
    if readings.is_empty() {
        return Err(GlslError::Dataset(format!(
            "no parseable readings ({malformed} malformed lines)"
        )));
    }
    let parsed = readings.len();
    Ok((readings, ParseStats { parsed, malformed }))
}

/// Uniform modes x nodes x ticks grid; data is mode-major so each
/// (mode, node) series is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformGrid {
    pub modes: usize,
    pub nodes: usize,
    pub ticks: usize,
    pub period: f64,
    pub node_ids: Vec<u64>,
    pub mode_names: Vec<String>,
    data: Vec<f64>,
}

impl UniformGrid {
    pub fn zeros(modes: usize, nodes: usize, ticks: usize, period: f64) -> Self {
        UniformGrid {
            modes,
            nodes,
            ticks,
            period,
            node_ids: (1..=nodes as u64).collect(),
            mode_names: (0..modes).map(|m| format!("mode{m}")).collect(),
            data: vec![0.0; modes * nodes * ticks],
        }
    }

    #[inline]
    fn offset(&self, mode: usize, node: usize, t: usize) -> usize {
        (mode * self.nodes + node) * self.ticks + t
    }

    pub fn get(&self, mode: usize, node: usize, t: usize) -> f64 {
        self.data[self.offset(mode, node, t)]
    }

    pub fn set(&mut self, mode: usize, node: usize, t: usize, v: f64) {
        let o = self.offset(mode, node, t);
        self.data[o] = v;
    }

    pub fn series(&self, mode: usize, node: usize) -> &[f64] {
        let o = self.offset(mode, node, 0);
        &self.data[o..o + self.ticks]
    }

    pub fn series_mut(&mut self, mode: usize, node: usize) -> &mut [f64] {
        let o = self.offset(mode, node, 0);
        let t = self.ticks;
        &mut self.data[o..o + t]
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sub-grid restricted to a node index subset (order preserved).
    pub fn node_subset(&self, idx: &[usize]) -> UniformGrid {
        let mut g = UniformGrid::zeros(self.modes, idx.len(), self.ticks, self.period);
        g.mode_names = self.mode_names.clone();
        g.node_ids = idx.iter().map(|i| self.node_ids[*i]).collect();
        for m in 0..self.modes {
            for (nn, old) in idx.iter().enumerate() {
                g.series_mut(m, nn).copy_from_slice(self.series(m, *old));
            }
        }
        g
    }

    /// Sub-grid restricted to a tick range.
    pub fn tick_range(&self, range: Range<usize>) -> UniformGrid {
        let mut g = UniformGrid::zeros(self.modes, self.nodes, range.len(), self.period);
        g.mode_names = self.mode_names.clone();
        g.node_ids = self.node_ids.clone();
        for m in 0..self.modes {
            for n in 0..self.nodes {
                g.series_mut(m, n)
                    .copy_from_slice(&self.series(m, n)[range.clone()]);
            }
        }
        g
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(b"GLSLGRD1")?;
        f.write_all(&(self.modes as u32).to_le_bytes())?;
        f.write_all(&(self.nodes as u32).to_le_bytes())?;
        f.write_all(&(self.ticks as u64).to_le_bytes())?;
        f.write_all(&self.period.to_le_bytes())?;
        for id in &self.node_ids {
            f.write_all(&id.to_le_bytes())?;
        }
        for name in &self.mode_names {
            let b = name.as_bytes();
            f.write_all(&(b.len() as u32).to_le_bytes())?;
            f.write_all(b)?;
        }
        for v in &self.data {
            f.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != b"GLSLGRD1" {
            return Err(GlslError::Dataset(format!(
                "bad grid cache header in {}",
                path.display()
            )));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        f.read_exact(&mut b4)?;
        let modes = u32::from_le_bytes(b4) as usize;
        f.read_exact(&mut b4)?;
        let nodes = u32::from_le_bytes(b4) as usize;
        f.read_exact(&mut b8)?;
        let ticks = u64::from_le_bytes(b8) as usize;
        f.read_exact(&mut b8)?;
        let period = f64::from_le_bytes(b8);
        let mut g = UniformGrid::zeros(modes, nodes, ticks, period);
        for i in 0..nodes {
            f.read_exact(&mut b8)?;
            g.node_ids[i] = u64::from_le_bytes(b8);
        }
        for m in 0..modes {
            f.read_exact(&mut b4)?;
            let len = u32::from_le_bytes(b4) as usize;
            let mut nb = vec![0u8; len];
            f.read_exact(&mut nb)?;
            g.mode_names[m] = String::from_utf8(nb)
                .map_err(|e| GlslError::Dataset(format!("bad mode name: {e}")))?;
        }
        for i in 0..g.data.len() {
            f.read_exact(&mut b8)?;
            g.data[i] = f64::from_le_bytes(b8);
        }
        Ok(g)
    }
}

/// Resample unordered readings onto a uniform grid: per (mode, node, tick)
/// take the last reading at or before the tick; leading gaps are backfilled
/// from the first available reading.
pub fn resample_grid(
    readings: &[RawReading],
    node_ids: &[u64],
    mode_names: &[String],
    period: f64,
    ticks: usize,
) -> Result<UniformGrid> {
    if node_ids.is_empty() {
        return Err(GlslError::Dataset("no nodes requested".into()));
    }
    if period <= 0.0 {
        return Err(GlslError::Dataset("period must be positive".into()));
    }
    let missing: Vec<u64> = node_ids
        .iter()
        .filter(|id| !readings.iter().any(|r| r.mote_id == **id))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(GlslError::Dataset(format!(
            "requested nodes absent from data: {missing:?}"
        )));
    }

    let t0 = readings
        .iter()
        .filter(|r| node_ids.contains(&r.mote_id))
        .map(|r| r.timestamp)
        .fold(f64::INFINITY, f64::min);

    let mut grid = UniformGrid::zeros(mode_names.len(), node_ids.len(), ticks, period);
    grid.node_ids = node_ids.to_vec();
    grid.mode_names = mode_names.to_vec();

    for (ni, id) in node_ids.iter().enumerate() {
        let mut node_readings: Vec<&RawReading> =
            readings.iter().filter(|r| r.mote_id == *id).collect();
        node_readings.sort_by(|a, b| a.timestamp.partial_cmp(&b.timestamp).unwrap());
        for (mi, mode) in mode_names.iter().enumerate() {
            let series: Vec<(f64, f64)> = node_readings
                .iter()
                .filter_map(|r| r.mode(mode).map(|v| (r.timestamp, v)))
                .collect();
            if series.is_empty() {
                return Err(GlslError::Dataset(format!(
                    "node {id} has no readings for mode {mode}"
                )));
            }
            let out = grid.series_mut(mi, ni);
            let mut cursor = 0usize;
            for (k, slot) in out.iter_mut().enumerate().take(ticks) {
                let tick_time = t0 + k as f64 * period;
                while cursor + 1 < series.len() && series[cursor + 1].0 <= tick_time {
                    cursor += 1;
                }
                // Head backfill: before the first reading, carry it backward.
                *slot = if series[cursor].0 <= tick_time || cursor == 0 {
                    series[cursor].1
                } else {
                    series[cursor - 1].1
                };
            }
        }
    }
    Ok(grid)
}

/// Per-(mode, node) mean and population standard deviation plus per-mode
/// 1%/99% quantile bounds, fitted on a training tick range only.
#[derive(Debug, Clone)]
pub struct NormStats {
    pub modes: usize,
    pub nodes: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Per mode: 99% quantile of the training observations.
    pub upper: Vec<f64>,
    /// Per mode: 1% quantile of the training observations.
    pub lower: Vec<f64>,
    /// (mode, node) pairs where sigma was zero and epsilon substituted.
    pub zero_sigma: Vec<(usize, usize)>,
}

impl NormStats {
    pub fn mean_of(&self, mode: usize, node: usize) -> f64 {
        self.mean[mode * self.nodes + node]
    }
    pub fn std_of(&self, mode: usize, node: usize) -> f64 {
        self.std[mode * self.nodes + node]
    }
    /// The sudden-change span X_up - X_down for a mode.
    pub fn span(&self, mode: usize) -> f64 {
        self.upper[mode] - self.lower[mode]
    }
}

/// Linear-interpolation quantile of sorted values at level q in [0, 1].
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn zscore_fit(grid: &UniformGrid, train_range: Range<usize>) -> Result<NormStats> {
    if train_range.is_empty() || train_range.end > grid.ticks {
        return Err(GlslError::Dataset(format!(
            "bad training range {train_range:?} for {} ticks",
            grid.ticks
        )));
    }
    let (m, n) = (grid.modes, grid.nodes);
    let mut stats = NormStats {
        modes: m,
        nodes: n,
        mean: vec![0.0; m * n],
        std: vec![0.0; m * n],
        upper: vec![0.0; m],
        lower: vec![0.0; m],
        zero_sigma: Vec::new(),
    };
    let count = train_range.len() as f64;
    for mi in 0..m {
        let mut pooled: Vec<f64> = Vec::with_capacity(n * train_range.len());
        for ni in 0..n {
            let slice = &grid.series(mi, ni)[train_range.clone()];
            let mean = slice.iter().sum::<f64>() / count;
            let var = slice.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
            stats.mean[mi * n + ni] = mean;
            let sd = var.sqrt();
            if sd == 0.0 {
                stats.zero_sigma.push((mi, ni));
            }
            stats.std[mi * n + ni] = sd;
            pooled.extend_from_slice(slice);
        }
        pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
        stats.upper[mi] = quantile_sorted(&pooled, 0.99);
        stats.lower[mi] = quantile_sorted(&pooled, 0.01);
    }
    Ok(stats)
}

pub fn zscore_apply(grid: &UniformGrid, stats: &NormStats) -> Result<UniformGrid> {
    if stats.modes != grid.modes || stats.nodes != grid.nodes {
        return Err(GlslError::Dataset("stats do not match grid shape".into()));
    }
    let mut out = grid.clone();
    for mi in 0..grid.modes {
        for ni in 0..grid.nodes {
            let mean = stats.mean_of(mi, ni);
            let sd = stats.std_of(mi, ni).max(1e-8);
            for v in out.series_mut(mi, ni) {
                *v = (*v - mean) / sd;
            }
        }
    }
    Ok(out)
}

/// One modes x nodes x W slice ending at tick `end` (inclusive), stored as
/// one N x W tensor per mode.
#[derive(Debug, Clone)]
pub struct WindowTensor {
    pub modes: Vec<Tensor>,
    pub end: usize,
}

impl WindowTensor {
    pub fn width(&self) -> usize {
        self.modes[0].cols()
    }
}

pub fn window_at(grid: &UniformGrid, t: usize, w: usize) -> Result<WindowTensor> {
    if w == 0 || t + 1 < w || t >= grid.ticks {
        return Err(GlslError::Dataset(format!(
            "window end {t} width {w} out of range for {} ticks",
            grid.ticks
        )));
    }
    let start = t + 1 - w;
    let modes = (0..grid.modes)
        .map(|mi| {
            let mut data = Vec::with_capacity(grid.nodes * w);
            for ni in 0..grid.nodes {
                data.extend_from_slice(&grid.series(mi, ni)[start..=t]);
            }
            Tensor::from_parts(vec![grid.nodes, w], data)
        })
        .collect();
    Ok(WindowTensor { modes, end: t })
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub nodes: usize,
    pub modes: usize,
    pub ticks: usize,
    pub layout: Option<NodeLayout>,
    pub noise: f64,
    pub seed: u64,
}

/// Coupling coefficient of mode m against the shared field: mode 0 follows
/// it, mode 1 follows it positively, mode 2 negatively (mirroring a
/// temperature / co-varying / anti-varying triple), further modes alternate.
fn mode_coupling(m: usize) -> (f64, f64) {
    const COEF: [(f64, f64); 4] = [(1.0, 0.0), (0.7, 2.0), (-0.9, 10.0), (0.5, -3.0)];
    COEF[m % COEF.len()]
}

/// Deterministic synthetic stream: a shared smooth event field sampled at
/// the node coordinates (spatial correlation) plus per-mode couplings
/// (intermodal correlation) plus optional Gaussian noise.
pub fn synth_generate(spec: &SynthSpec) -> (UniformGrid, NodeLayout) {
    let mut rng = rng_for(spec.seed, "synth");
    let bounds = (100.0, 100.0);
    let layout = spec.layout.clone().unwrap_or_else(|| {
        let coords = (0..spec.nodes)
            .map(|_| (rng.gen_range(0.0..bounds.0), rng.gen_range(0.0..bounds.1)))
            .collect();
        NodeLayout::from_coords(coords)
    });

    struct Event {
        x: f64,
        y: f64,
        t: f64,
        spatial_sigma: f64,
        time_sigma: f64,
        amp: f64,
    }
    let n_events = (spec.ticks / 120).max(2);
    let events: Vec<Event> = (0..n_events)
        .map(|_| Event {
            x: rng.gen_range(0.0..bounds.0),
            y: rng.gen_range(0.0..bounds.1),
            t: rng.gen_range(0.0..spec.ticks as f64),
            spatial_sigma: rng.gen_range(25.0..70.0),
            time_sigma: rng.gen_range(10.0..35.0),
            amp: rng.gen_range(1.0..3.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
        })
        .collect();

    let field = |x: f64, y: f64, t: f64| -> f64 {
        let base = (2.0 * std::f64::consts::PI * t / 60.0).sin()
            + 0.5 * (2.0 * std::f64::consts::PI * t / 17.0 + 1.0).sin();
        let amp = 1.0 + 0.5 * x / bounds.0 - 0.3 * y / bounds.1;
        let mut v = amp * base;
        for e in &events {
            let d2 = (x - e.x).powi(2) + (y - e.y).powi(2);
            let dt = t - e.t;
            v += e.amp
                * (-d2 / (2.0 * e.spatial_sigma.powi(2))).exp()
                * (-dt * dt / (2.0 * e.time_sigma.powi(2))).exp();
        }
        v
    };

    let mut grid = UniformGrid::zeros(spec.modes, spec.nodes, spec.ticks, 1.0);
    let mut gauss = BoxMuller::new();
    for mi in 0..spec.modes {
        let (coef, offset) = mode_coupling(mi);
        for ni in 0..spec.nodes {
            let (x, y) = layout.coords()[ni];
            for t in 0..spec.ticks {
                let s = field(x, y, t as f64);
                let noise = if spec.noise > 0.0 {
                    spec.noise * gauss.next(&mut rng)
                } else {
                    0.0
                };
                grid.set(mi, ni, t, coef * s + offset + noise);
            }
        }
    }
    (grid, layout)
}

struct BoxMuller {
    spare: Option<f64>,
}

impl BoxMuller {
    fn new() -> Self {
        BoxMuller { spare: None }
    }
    fn next(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}
