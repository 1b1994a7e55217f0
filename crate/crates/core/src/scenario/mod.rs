//! Scenario orchestration: configuration, presets, event generation and the
//! result bundle with its metrics.

mod channel;
mod config;
mod engine;
mod output;
mod presets;

pub use channel::{combined_sigma, window_capture, Fate, MemoryChannel, PointModel, SectionFate};
pub use config::{Losses, MemoryConfig, PointConfig, ScenarioConfig, T0Choice, WindowSpec};
pub use engine::{reference_point, shards, FastEngine, PointCounts};
pub use output::{emit_outputs, render_svg};
pub use presets::{preset, preset_names, PRESETS};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::analysis::{
    extract_memory_efficiency, find_t0, g2_windowed, window_rates, CoincidenceHistogram,
    CoincidenceWindows, EfficiencyBudget, EfficiencyEstimate, G2Estimate,
};
use crate::detection::seconds_to_ps;
use crate::error::{Error, Result};
use crate::source::pair_rate;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Search half-width around the expected delay when locating a peak.
const T0_SEARCH: f64 = 0.8e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

/// Statistics of one coincidence peak (the transmitted peak or an echo mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakMetrics {
    pub name: String,
    /// Delay from the field model, s.
    pub delay: f64,
    pub sections: Vec<usize>,
    /// Recall probability of the mode from the field model.
    pub field_efficiency: f64,
    /// Mode bandwidth over the photon bandwidth.
    pub filtering: f64,
    pub windows: CoincidenceWindows,
    pub g2: G2Estimate,
    /// Background-subtracted coincidence rate, Hz.
    pub rate: f64,
    pub rate_sigma: f64,
    pub predicted_g2: f64,
    pub predicted_rate: f64,
    /// Against the scenario's bypass point, when it has one.
    pub eta_m: Option<EfficiencyEstimate>,
    /// Noise budget reproducing `predicted_g2`; echo modes only.
    pub budget: Option<EfficiencyBudget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub label: String,
    pub histogram_file: String,
    pub pump_power: f64,
    pub pair_rate: f64,
    pub live_time: f64,
    pub n_triggers: u64,
    pub idler_singles: f64,
    pub signal_singles: f64,
    pub transmitted: PeakMetrics,
    pub modes: Vec<PeakMetrics>,
    pub total_bandwidth: f64,
    pub max_storage_time: f64,
    pub time_bandwidth_product: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub provenance: Provenance,
    pub points: Vec<PointMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub label: String,
    pub channel: MemoryChannel,
    pub model: PointModel,
    /// Absent when the point has no live time.
    pub histogram: Option<CoincidenceHistogram>,
    pub metrics: Option<PointMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultBundle {
    pub config: ScenarioConfig,
    pub provenance: Provenance,
    pub points: Vec<PointResult>,
}

impl ResultBundle {
    pub fn is_empty(&self) -> bool {
        self.points.iter().all(|p| p.histogram.is_none())
    }

    pub fn report(&self) -> MetricsReport {
        MetricsReport {
            scenario: self.config.name.clone(),
            provenance: self.provenance.clone(),
            points: self.points.iter().filter_map(|p| p.metrics.clone()).collect(),
        }
    }

    pub fn metrics_json(&self) -> String {
        serde_json::to_string_pretty(&self.report()).expect("metrics serialize")
    }

    /// SHA-256 of the metrics JSON.
    pub fn hash(&self) -> String {
        Sha256::digest(self.metrics_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn stem(&self) -> String {
        format!("{}_{}", self.config.name, self.config.seed)
    }

    pub fn point(&self, label: &str) -> Option<&PointResult> {
        self.points.iter().find(|p| p.label == label)
    }
}

/// Default histogram range: 4 ns before the trigger to 6 ns past the last
/// echo, or further when the windows reach beyond that.
pub fn default_range(channel: &MemoryChannel, bin_ps: i64, windows: &WindowSpec) -> (i64, i64) {
    let last = channel.sections.iter().map(|s| s.delays_ps.last().copied().unwrap_or(0)).max().unwrap_or(0);
    let reach = seconds_to_ps(0.5 * windows.t_p + windows.t_bg) + 1_000;
    let hi = last + reach.max(6_000);
    (-4_000, hi.div_euclid(bin_ps) * bin_ps + bin_ps)
}

fn range_ps(point: &PointConfig, channel: &MemoryChannel, cfg: &ScenarioConfig) -> (i64, i64) {
    let bin_ps = cfg.bin_ps();
    match point.range {
        Some((lo, hi)) => {
            let lo = ((lo * 1e12).floor() as i64).div_euclid(bin_ps) * bin_ps;
            let hi = ((hi * 1e12).ceil() as i64).div_euclid(bin_ps) * bin_ps + bin_ps;
            (lo, hi)
        }
        None => default_range(channel, bin_ps, &cfg.windows),
    }
}

/// Peaks of a point: `(name, delay, sections, field efficiency)`, transmitted first.
fn peaks(channel: &MemoryChannel) -> Vec<(String, f64, Vec<usize>, f64)> {
    let mut out = vec![("transmitted".to_string(), 0.0, Vec::new(), 0.0)];
    for (k, m) in channel.modes().into_iter().enumerate() {
        out.push((format!("mode{}", k + 1), m.delay, m.sections, m.efficiency));
    }
    out
}

/// Coincidence-weighted mean delay of the given sections, s.
pub fn expected_t0(model: &PointModel, channel: &MemoryChannel, sections: &[usize]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &(k, c) in &model.section_coincidences {
        if !sections.contains(&k) {
            continue;
        }
        if let Some(s) = channel.fate_of(k) {
            num += c * s.mean_delay_ps();
            den += c;
        }
    }
    let mean = if den > 0.0 { num / den } else { 0.0 };
    mean * 1e-12
}

/// Bin edges `[a, b)` ps selected by a window `[lo, hi)` in s.
/// Expected rate integrated over `[lo, hi)` s with the same edge-bin
/// weighting as the estimator.
fn window_expectation(model: &PointModel, channel: &MemoryChannel, h: &CoincidenceHistogram, lo: f64, hi: f64) -> f64 {
    let w = h.bin_width_ps;
    let bins = h.overlaps(lo, hi);
    let (Some(&(first, _)), Some(&(last, _))) = (bins.first(), bins.last()) else {
        return 0.0;
    };
    let edge = |k: usize| h.start_ps + k as i64 * w;
    let mut rate = model.window_rate(channel, edge(first), edge(last + 1));
    for &(k, f) in &bins {
        if f < 1.0 {
            rate -= (1.0 - f) * model.window_rate(channel, edge(k), edge(k + 1));
        }
    }
    rate
}

/// Expected (peak, background) coincidence rates for windows `w`, Hz.
pub fn predicted_window_rates(
    model: &PointModel,
    channel: &MemoryChannel,
    h: &CoincidenceHistogram,
    w: &CoincidenceWindows,
) -> (f64, f64) {
    let (plo, phi) = w.peak();
    let (blo, bhi) = w.background();
    (
        window_expectation(model, channel, h, plo, phi),
        window_expectation(model, channel, h, blo, bhi),
    )
}

fn mode_filtering(cfg: &ScenarioConfig, point: &PointConfig, channel: &MemoryChannel, sections: &[usize]) -> f64 {
    let src = channel::point_source(cfg, point.pump_power);
    let (lo, hi) = src.band();
    sections
        .iter()
        .filter_map(|&k| channel.fate_of(k))
        .map(|s| (s.hi.min(hi) - s.lo.max(lo)).max(0.0))
        .sum::<f64>()
        / (hi - lo)
}

fn windows_for(cfg: &ScenarioConfig, h: &CoincidenceHistogram, expected: f64, delay: f64) -> CoincidenceWindows {
    let spec = &cfg.windows;
    let t0 = match spec.t0 {
        T0Choice::Expected => expected,
        T0Choice::Peak => find_t0(h, spec.t_p, delay - T0_SEARCH, delay + T0_SEARCH).unwrap_or(expected),
    };
    CoincidenceWindows {
        t0,
        t_p: spec.t_p,
        t_bg: spec.t_bg,
        background: spec.background,
    }
}

struct Simulated {
    label: String,
    channel: MemoryChannel,
    model: PointModel,
    histogram: Option<CoincidenceHistogram>,
    idler_singles: u64,
    signal_singles: u64,
}

fn simulate(cfg: &ScenarioConfig, index: usize) -> Result<Simulated> {
    let point = &cfg.points[index];
    let channel = MemoryChannel::build(&point.memory, &cfg.grid)?;
    let model = PointModel::new(cfg, point.pump_power, &channel);
    let live = cfg.duration * point.duration_scale;
    let mut out = Simulated {
        label: point.label.clone(),
        channel,
        model,
        histogram: None,
        idler_singles: 0,
        signal_singles: 0,
    };
    if live > 0.0 {
        let src = channel::point_source(cfg, point.pump_power);
        let range = range_ps(point, &out.channel, cfg);
        let counts = FastEngine::new(cfg, &src, &out.channel, index, range)?.run(live)?;
        out.histogram = Some(counts.histogram);
        out.idler_singles = counts.idler_singles;
        out.signal_singles = counts.signal_singles;
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn peak_metrics(
    cfg: &ScenarioConfig,
    point: &PointConfig,
    sim: &Simulated,
    h: &CoincidenceHistogram,
    peak: (String, f64, Vec<usize>, f64),
    bypass: Option<(&CoincidenceHistogram, &CoincidenceWindows)>,
) -> Result<PeakMetrics> {
    let (name, delay, sections, field_efficiency) = peak;
    let is_echo = !sections.is_empty();
    let expected = expected_t0(&sim.model, &sim.channel, &sections);
    let windows = windows_for(cfg, h, expected, delay);
    let g2 = g2_windowed(h, &windows)?;
    let rates = window_rates(h, &windows)?;
    let (p, b) = predicted_window_rates(&sim.model, &sim.channel, h, &windows);
    let scale = windows.t_p / windows.t_bg;
    let predicted_g2 = if b > 0.0 { p / (b * scale) } else { f64::INFINITY };
    let predicted_rate = p - b * scale;
    let filtering = if is_echo {
        mode_filtering(cfg, point, &sim.channel, &sections)
    } else {
        1.0
    };
    let eta_m = match bypass {
        Some((hb, wb)) if is_echo && filtering > 0.0 => {
            extract_memory_efficiency(h, &windows, hb, wb, cfg.losses.eta_t, filtering).ok()
        }
        _ => None,
    };
    let budget = if is_echo && filtering > 0.0 {
        budget_for(cfg, &sim.model, predicted_rate, b * scale, filtering).ok()
    } else {
        None
    };
    Ok(PeakMetrics {
        name,
        delay,
        sections,
        field_efficiency,
        filtering,
        windows,
        g2,
        rate: rates.r_si - rates.r_acc,
        rate_sigma: (rates.sigma_si.powi(2) + rates.sigma_acc.powi(2)).sqrt(),
        predicted_g2,
        predicted_rate,
        eta_m,
        budget,
    })
}

/// Budget whose memory efficiency carries the expected correlated rate
/// `excess` and whose noise term carries the expected accidentals `acc`,
/// both in the peak window.
pub fn budget_for(cfg: &ScenarioConfig, model: &PointModel, excess: f64, acc: f64, filtering: f64) -> Result<EfficiencyBudget> {
    let l = &cfg.losses;
    let eta_c = (l.eta_ci * l.eta_cs).sqrt();
    let eta_d = (cfg.idler_detector.efficiency * cfg.signal_detector.efficiency).sqrt();
    let r = model.pair_rate;
    let pc = 0.5 * eta_c * eta_c * eta_d * eta_d * r;
    let eta_m = (excess / (pc * l.eta_t * filtering)).clamp(0.0, 1.0);
    let bypass_singles = r * l.eta_cs * cfg.signal_detector.efficiency + cfg.signal_detector.dark_rate;
    let r_acc = model.idler_singles * bypass_singles * cfg.windows.t_p;
    let probe = EfficiencyBudget::new(eta_c, eta_d, l.eta_t, filtering, eta_m, r, r_acc, 0.0)?;
    let r_noise = (acc - probe.eta_s * r_acc).max(0.0);
    EfficiencyBudget::new(eta_c, eta_d, l.eta_t, filtering, eta_m, r, r_acc, r_noise)
}

fn point_metrics(
    cfg: &ScenarioConfig,
    index: usize,
    sim: &Simulated,
    bypass: Option<(&CoincidenceHistogram, &CoincidenceWindows)>,
) -> Result<Option<PointMetrics>> {
    let Some(h) = &sim.histogram else {
        return Ok(None);
    };
    let point = &cfg.points[index];
    let mut all = peaks(&sim.channel).into_iter();
    let transmitted = peak_metrics(cfg, point, sim, h, all.next().expect("transmitted peak"), None)?;
    let modes = all
        .map(|p| peak_metrics(cfg, point, sim, h, p, bypass))
        .collect::<Result<Vec<_>>>()?;
    let src = channel::point_source(cfg, point.pump_power);
    let rate = pair_rate(&src);
    let live = h.live_time();
    let (total_bandwidth, max_storage_time, tbp) = match (&sim.channel.profile, &point.memory) {
        (Some(p), _) => (p.total_bandwidth(), p.max_storage_time(), p.time_bandwidth_product()),
        (None, MemoryConfig::Fixed { lo, hi, delay, .. }) => (hi - lo, *delay, (hi - lo) * delay),
        _ => (0.0, 0.0, 0.0),
    };
    Ok(Some(PointMetrics {
        label: point.label.clone(),
        histogram_file: format!("{}_{}_{}.csv", cfg.name, cfg.seed, point.label),
        pump_power: src.pump_power,
        pair_rate: rate.rate,
        live_time: live,
        n_triggers: h.n_triggers,
        idler_singles: sim.idler_singles as f64 / live,
        signal_singles: sim.signal_singles as f64 / live,
        transmitted,
        modes,
        total_bandwidth,
        max_storage_time,
        time_bandwidth_product: tbp,
        warnings: rate.warning.into_iter().collect(),
    }))
}

/// Simulate every point of `cfg` and compute its metrics.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ResultBundle> {
    cfg.validate()?;
    let sims = (0..cfg.points.len())
        .into_par_iter()
        .map(|i| simulate(cfg, i))
        .collect::<Result<Vec<_>>>()?;

    let bypass = cfg
        .points
        .iter()
        .position(|p| matches!(p.memory, MemoryConfig::Bypass))
        .and_then(|i| {
            let h = sims[i].histogram.as_ref()?;
            let w = windows_for(cfg, h, expected_t0(&sims[i].model, &sims[i].channel, &[]), 0.0);
            Some((h, w))
        });

    let mut points = Vec::with_capacity(sims.len());
    for (i, sim) in sims.iter().enumerate() {
        let metrics = point_metrics(cfg, i, sim, bypass.as_ref().map(|(h, w)| (*h, w)))?;
        points.push(metrics);
    }
    let points = sims
        .into_iter()
        .zip(points)
        .map(|(s, metrics)| PointResult {
            label: s.label,
            channel: s.channel,
            model: s.model,
            histogram: s.histogram,
            metrics,
        })
        .collect();
    Ok(ResultBundle {
        config: cfg.clone(),
        provenance: Provenance {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            version: VERSION.to_string(),
        },
        points,
    })
}

/// Re-run a configuration file with the given seed.
pub fn replay(config_file: &Path, seed: u64) -> Result<ResultBundle> {
    let text = std::fs::read_to_string(config_file).map_err(|e| Error::io(config_file, e))?;
    let mut cfg = ScenarioConfig::from_json(&text)?;
    cfg.seed = seed;
    run_scenario(&cfg)
}

/// Capture fraction giving the echo of `mode` (1-based) at `point` an expected
/// g2 of `target`, clamped to `[0, 1]`.
pub fn calibrate_capture_fraction(cfg: &ScenarioConfig, point: usize, mode: usize, target: f64) -> Result<f64> {
    let p = cfg
        .points
        .get(point)
        .ok_or_else(|| Error::validation("point", format!("no point {point}")))?;
    let channel = MemoryChannel::build(&p.memory, &cfg.grid)?;
    let modes = channel.modes();
    let m = modes
        .get(mode.wrapping_sub(1))
        .ok_or_else(|| Error::validation("mode", format!("point has {} modes", modes.len())))?;
    let range = range_ps(p, &channel, cfg);
    let h = CoincidenceHistogram::empty(cfg.bin_ps(), range)?;
    let eval = |beta: f64| {
        let mut c = cfg.clone();
        c.noise.capture_fraction = beta;
        let model = PointModel::new(&c, p.pump_power, &channel);
        let t0 = expected_t0(&model, &channel, &m.sections);
        let w = CoincidenceWindows {
            t0,
            t_p: c.windows.t_p,
            t_bg: c.windows.t_bg,
            background: c.windows.background,
        };
        let (pk, bg) = predicted_window_rates(&model, &channel, &h, &w);
        (w.t_bg * pk, w.t_p * bg)
    };
    let (p0, b0) = eval(0.0);
    let (p1, b1) = eval(1.0);
    let (dp, db) = (p1 - p0, b1 - b0);
    let den = dp - target * db;
    if den == 0.0 {
        return Err(Error::Undefined("g2 does not depend on the capture fraction".into()));
    }
    Ok(((target * b0 - p0) / den).clamp(0.0, 1.0))
}

/// Expected g2 of every echo mode at `point` using model-placed windows.
pub fn predicted_mode_g2(cfg: &ScenarioConfig, point: usize) -> Result<Vec<f64>> {
    let p = &cfg.points[point];
    let channel = MemoryChannel::build(&p.memory, &cfg.grid)?;
    let model = PointModel::new(cfg, p.pump_power, &channel);
    let h = CoincidenceHistogram::empty(cfg.bin_ps(), range_ps(p, &channel, cfg))?;
    Ok(channel
        .modes()
        .iter()
        .map(|m| {
            let w = CoincidenceWindows {
                t0: expected_t0(&model, &channel, &m.sections),
                t_p: cfg.windows.t_p,
                t_bg: cfg.windows.t_bg,
                background: cfg.windows.background,
            };
            let (pk, bg) = predicted_window_rates(&model, &channel, &h, &w);
            w.t_bg * pk / (w.t_p * bg)
        })
        .collect())
}

