//! Detector and timing models: efficiency, jitter, dark counts, dead time,
//! memory re-emission noise, TDC quantization and duty-cycle gating.
//!
//! Times are integer picoseconds from the start of the first timing cycle.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::rng;

pub const TDC_BIN_PS: i64 = 80;
/// FWHM of the idler-signal delay spread from both detectors together.
pub const COINCIDENCE_JITTER_FWHM: f64 = 250e-12;
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;
/// Dwell time of the polarization state seen by the detectors.
pub const POLARIZATION_SLOT_PS: i64 = 500_000_000;

pub fn seconds_to_ps(t: f64) -> i64 {
    (t * 1e12).round() as i64
}

pub fn ps_to_seconds(t: i64) -> f64 {
    t as f64 * 1e-12
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Idler,
    Signal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Pair,
    Dark,
    MemoryNoise,
}

impl Channel {
    pub fn as_str(&self) -> &'static str {
        match self {
            Channel::Idler => "idler",
            Channel::Signal => "signal",
        }
    }
}

impl Origin {
    pub fn as_str(&self) -> &'static str {
        match self {
            Origin::Pair => "pair",
            Origin::Dark => "dark",
            Origin::MemoryNoise => "memory_noise",
        }
    }
}

/// A photon reaching a detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arrival {
    pub time_ps: i64,
    pub origin: Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeTag {
    pub channel: Channel,
    /// Multiple of [`TDC_BIN_PS`].
    pub time_ps: i64,
    pub origin: Origin,
}

impl TimeTag {
    pub fn time(&self) -> f64 {
        ps_to_seconds(self.time_ps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorModel {
    pub efficiency: f64,
    /// Per detector; two detectors in quadrature give [`COINCIDENCE_JITTER_FWHM`].
    pub jitter_fwhm: f64,
    pub dark_rate: f64,
    pub dead_time: f64,
    /// Peak-to-peak relative efficiency modulation.
    pub polarization_spread: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        DetectorModel {
            efficiency: 0.70,
            jitter_fwhm: COINCIDENCE_JITTER_FWHM / std::f64::consts::SQRT_2,
            dark_rate: 10.0,
            dead_time: 50e-9,
            polarization_spread: 0.05,
        }
    }
}

impl DetectorModel {
    pub fn ideal() -> Self {
        DetectorModel {
            efficiency: 1.0,
            jitter_fwhm: 0.0,
            dark_rate: 0.0,
            dead_time: 0.0,
            polarization_spread: 0.0,
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let field = |f: &str| format!("{name}.{f}");
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::validation(field("efficiency"), "must lie in [0, 1]"));
        }
        for (f, v) in [
            ("jitter_fwhm", self.jitter_fwhm),
            ("dark_rate", self.dark_rate),
            ("dead_time", self.dead_time),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::validation(field(f), "must be non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&self.polarization_spread) {
            return Err(Error::validation(field("polarization_spread"), "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn sigma_ps(&self) -> f64 {
        self.jitter_fwhm * 1e12 / FWHM_PER_SIGMA
    }

    /// Largest efficiency reached under polarization modulation.
    pub fn peak_efficiency(&self) -> f64 {
        (self.efficiency * (1.0 + 0.5 * self.polarization_spread)).min(1.0)
    }

    /// Efficiency during the polarization slot holding `time_ps`.
    pub fn efficiency_at(&self, key: u64, channel: Channel, time_ps: i64) -> f64 {
        if self.polarization_spread == 0.0 {
            return self.efficiency;
        }
        let slot = time_ps.div_euclid(POLARIZATION_SLOT_PS) as u64;
        let u = rng::hash_unit(key, &[channel as u64, slot]);
        (self.efficiency * (1.0 + self.polarization_spread * (u - 0.5))).min(1.0)
    }
}

pub fn quantize(t_ps: i64) -> i64 {
    t_ps.div_euclid(TDC_BIN_PS) * TDC_BIN_PS
}

fn check_sorted(a: &[Arrival]) -> Result<()> {
    if a.windows(2).any(|w| w[1].time_ps < w[0].time_ps) {
        return Err(Error::Contract("arrivals must be sorted by time".into()));
    }
    Ok(())
}

/// Detector chain for one channel over `span = [start, end)` ps.
pub fn detect(arrivals: &[Arrival], channel: Channel, model: &DetectorModel, span: (i64, i64), seed: u64) -> Result<Vec<TimeTag>> {
    model.validate("detector")?;
    let mut rng = rng::stream(seed, &[0x4445_5445, channel as u64]);
    let key = rng::derive_seed(seed, &[0x504f_4c41]);
    detect_with(arrivals, channel, model, span, &mut rng, key)
}

pub fn detect_with<R: Rng + ?Sized>(
    arrivals: &[Arrival],
    channel: Channel,
    model: &DetectorModel,
    span: (i64, i64),
    rng: &mut R,
    polarization_key: u64,
) -> Result<Vec<TimeTag>> {
    check_sorted(arrivals)?;
    let mut tags = register(arrivals, channel, model, rng, polarization_key);
    tags.extend(dark_tags(channel, model.dark_rate, span, rng));
    tags.sort_unstable_by_key(|t| t.time_ps);
    Ok(apply_dead_time(tags, seconds_to_ps(model.dead_time)))
}

/// Efficiency, jitter and quantization, without dark counts or dead time.
/// Output is unsorted.
pub fn register<R: Rng + ?Sized>(
    arrivals: &[Arrival],
    channel: Channel,
    model: &DetectorModel,
    rng: &mut R,
    polarization_key: u64,
) -> Vec<TimeTag> {
    let sigma = model.sigma_ps();
    let mut tags = Vec::with_capacity((arrivals.len() as f64 * model.efficiency) as usize + 8);
    for a in arrivals {
        let eff = model.efficiency_at(polarization_key, channel, a.time_ps);
        if eff < 1.0 && rng.random::<f64>() >= eff {
            continue;
        }
        let mut t = a.time_ps;
        if sigma > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            t += (z * sigma).round() as i64;
        }
        if t < 0 {
            continue;
        }
        tags.push(TimeTag {
            channel,
            time_ps: quantize(t),
            origin: a.origin,
        });
    }
    tags
}

/// Poisson dark counts over `[start, end)` ps.
pub fn dark_tags<R: Rng + ?Sized>(channel: Channel, rate: f64, span: (i64, i64), rng: &mut R) -> Vec<TimeTag> {
    let (start, end) = span;
    let mut out = Vec::new();
    if rate > 0.0 && end > start {
        let rate_per_ps = rate * 1e-12;
        let mut t = start as f64;
        loop {
            let gap: f64 = Exp1.sample(rng);
            t += gap / rate_per_ps;
            if t >= end as f64 {
                break;
            }
            out.push(TimeTag {
                channel,
                time_ps: quantize(t as i64),
                origin: Origin::Dark,
            });
        }
    }
    out
}

pub fn apply_dead_time(tags: Vec<TimeTag>, dead_ps: i64) -> Vec<TimeTag> {
    if dead_ps <= 0 {
        return tags;
    }
    let mut last = i64::MIN;
    tags.into_iter()
        .filter(|t| {
            if last != i64::MIN && t.time_ps - last < dead_ps {
                false
            } else {
                last = t.time_ps;
                true
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingCycle {
    pub pump: f64,
    pub wait: f64,
    pub measure: f64,
    pub excited_lifetime: f64,
    pub reemission_lifetime: f64,
}

impl Default for TimingCycle {
    fn default() -> Self {
        TimingCycle {
            pump: 0.5,
            wait: 0.3,
            measure: 0.7,
            excited_lifetime: 0.011,
            reemission_lifetime: 0.010,
        }
    }
}

impl TimingCycle {
    pub fn validate(&self) -> Result<()> {
        for (f, v) in [
            ("cycle.pump", self.pump),
            ("cycle.wait", self.wait),
            ("cycle.measure", self.measure),
            ("cycle.excited_lifetime", self.excited_lifetime),
            ("cycle.reemission_lifetime", self.reemission_lifetime),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::validation(f, "must be positive"));
            }
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        self.pump + self.wait + self.measure
    }

    pub fn duty_factor(&self) -> f64 {
        self.measure / self.period()
    }

    pub fn period_ps(&self) -> i64 {
        seconds_to_ps(self.period())
    }

    /// `[start, end)` of the measurement window of cycle `k`, ps.
    pub fn window_ps(&self, k: i64) -> (i64, i64) {
        let base = k * self.period_ps();
        (base + seconds_to_ps(self.pump + self.wait), base + self.period_ps())
    }

    pub fn in_measure(&self, t_ps: i64) -> bool {
        let r = t_ps.rem_euclid(self.period_ps());
        r >= seconds_to_ps(self.pump + self.wait)
    }

    /// Gated seconds inside `[start, end)` ps.
    pub fn live_time(&self, span: (i64, i64)) -> f64 {
        let (start, end) = span;
        if end <= start {
            return 0.0;
        }
        let p = self.period_ps();
        let mut total = 0i64;
        for k in start.div_euclid(p)..=(end - 1).div_euclid(p) {
            let (a, b) = self.window_ps(k);
            total += (b.min(end) - a.max(start)).max(0);
        }
        ps_to_seconds(total)
    }

    /// Population left in the excited level when measurement starts.
    pub fn residual_excited_fraction(&self) -> f64 {
        (-self.wait / self.excited_lifetime).exp()
    }
}

pub fn gate_to_cycle(tags: &[TimeTag], cycle: &TimingCycle) -> Vec<TimeTag> {
    tags.iter().copied().filter(|t| cycle.in_measure(t.time_ps)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryNoiseModel {
    /// Probability that an absorbed, unrecalled photon is re-emitted into the detected mode.
    pub capture_fraction: f64,
    /// Spontaneous emission into the fibre mode at the start of measurement, Hz.
    pub residual_excited_rate: f64,
}

impl Default for MemoryNoiseModel {
    fn default() -> Self {
        MemoryNoiseModel {
            capture_fraction: 0.0,
            residual_excited_rate: 0.0,
        }
    }
}

impl MemoryNoiseModel {
    /// Residual rate from the emission rate at the end of pumping, decayed over the wait.
    pub fn from_pumping_rate(capture_fraction: f64, rate_after_pumping: f64, cycle: &TimingCycle) -> Self {
        MemoryNoiseModel {
            capture_fraction,
            residual_excited_rate: rate_after_pumping * cycle.residual_excited_fraction(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.capture_fraction) {
            return Err(Error::validation("noise.capture_fraction", "must lie in [0, 1]"));
        }
        if !(self.residual_excited_rate >= 0.0) || !self.residual_excited_rate.is_finite() {
            return Err(Error::validation("noise.residual_excited_rate", "must be non-negative"));
        }
        Ok(())
    }

    pub fn is_silent(&self) -> bool {
        self.capture_fraction == 0.0 && self.residual_excited_rate == 0.0
    }

    /// Expected residual-emission photons in one measurement window.
    pub fn residual_per_window(&self, cycle: &TimingCycle) -> f64 {
        let tau = cycle.excited_lifetime;
        self.residual_excited_rate * tau * (1.0 - (-cycle.measure / tau).exp())
    }
}

/// Noise photons at the memory output: captured re-emission of absorbed
/// photons plus the decaying residual excited population, limited to `span`.
pub fn memory_noise_tags(
    absorbed_ps: &[i64],
    noise: &MemoryNoiseModel,
    cycle: &TimingCycle,
    span: (i64, i64),
    seed: u64,
) -> Result<Vec<Arrival>> {
    noise.validate()?;
    cycle.validate()?;
    let mut rng = rng::stream(seed, &[0x4e4f_4953]);
    memory_noise_with(absorbed_ps, noise, cycle, span, &mut rng)
}

pub fn memory_noise_with<R: Rng + ?Sized>(
    absorbed_ps: &[i64],
    noise: &MemoryNoiseModel,
    cycle: &TimingCycle,
    span: (i64, i64),
    rng: &mut R,
) -> Result<Vec<Arrival>> {
    let (start, end) = span;
    let mut out = Vec::new();
    if noise.capture_fraction > 0.0 {
        let tau = cycle.reemission_lifetime * 1e12;
        for &t in absorbed_ps {
            if rng.random::<f64>() >= noise.capture_fraction {
                continue;
            }
            let d: f64 = Exp1.sample(rng);
            let te = t + (d * tau).round() as i64;
            if te >= start && te < end {
                out.push(Arrival {
                    time_ps: te,
                    origin: Origin::MemoryNoise,
                });
            }
        }
    }
    let mean = noise.residual_per_window(cycle);
    if mean > 0.0 && end > start {
        let p = cycle.period_ps();
        let tau = cycle.excited_lifetime;
        let tail = (-cycle.measure / tau).exp();
        let pois = Poisson::new(mean).map_err(|e| Error::Config(e.to_string()))?;
        for k in start.div_euclid(p)..=(end - 1).div_euclid(p) {
            let (ws, _) = cycle.window_ps(k);
            let n = pois.sample(rng) as u64;
            for _ in 0..n {
                // inverse CDF of the exponential truncated to the window
                let u: f64 = rng.random();
                let dt = -tau * (1.0 - u * (1.0 - tail)).ln();
                let te = ws + seconds_to_ps(dt);
                if te >= start && te < end {
                    out.push(Arrival {
                        time_ps: te,
                        origin: Origin::MemoryNoise,
                    });
                }
            }
        }
    }
    out.sort_by_key(|a| a.time_ps);
    Ok(out)
}

pub fn write_tags_csv<W: Write>(tags: &[TimeTag], mut w: W) -> std::io::Result<()> {
    writeln!(w, "channel,time_ps,origin")?;
    for t in tags {
        writeln!(w, "{},{},{}", t.channel.as_str(), t.time_ps, t.origin.as_str())?;
    }
    Ok(())
}

pub fn read_tags_csv(text: &str) -> Result<Vec<TimeTag>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "channel,time_ps,origin" => {}
        _ => return Err(Error::validation("tags", "missing header `channel,time_ps,origin`")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |r: &str| Error::validation(format!("tags line {}", i + 1), r.to_string());
        let mut f = line.split(',');
        let channel = match f.next().map(str::trim) {
            Some("idler") => Channel::Idler,
            Some("signal") => Channel::Signal,
            _ => return Err(bad("channel must be idler or signal")),
        };
        let time_ps: i64 = f
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("time_ps must be an integer"))?;
        if time_ps < 0 || time_ps % TDC_BIN_PS != 0 {
            return Err(bad("time_ps must be a non-negative multiple of 80"));
        }
        let origin = match f.next().map(str::trim) {
            Some("pair") => Origin::Pair,
            Some("dark") => Origin::Dark,
            Some("memory_noise") => Origin::MemoryNoise,
            _ => return Err(bad("unknown origin")),
        };
        out.push(TimeTag { channel, time_ps, origin });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arrivals(times: &[i64]) -> Vec<Arrival> {
        times
            .iter()
            .map(|&t| Arrival {
                time_ps: t,
                origin: Origin::Pair,
            })
            .collect()
    }

    #[test]
    fn identity_chain_quantizes() {
        let a = arrivals(&[0, 79, 80, 1_000, 123_456]);
        let tags = detect(&a, Channel::Signal, &DetectorModel::ideal(), (0, 200_000), 1).unwrap();
        let t: Vec<i64> = tags.iter().map(|t| t.time_ps).collect();
        assert_eq!(t, vec![0, 0, 80, 960, 123_440]);
    }

    #[test]
    fn unsorted_input_rejected() {
        let a = arrivals(&[100, 50]);
        assert!(matches!(
            detect(&a, Channel::Idler, &DetectorModel::ideal(), (0, 200), 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn dead_time_enforced() {
        let mut m = DetectorModel::ideal();
        m.dead_time = 50e-9;
        let a = arrivals(&[0, 10_000, 49_000, 50_000, 60_000, 120_000]);
        let tags = detect(&a, Channel::Idler, &m, (0, 200_000), 0).unwrap();
        let t: Vec<i64> = tags.iter().map(|t| t.time_ps).collect();
        assert_eq!(t, vec![0, 50_000, 120_000]);
    }

    #[test]
    fn residual_excited_fraction_negligible() {
        let c = TimingCycle::default();
        let f = c.residual_excited_fraction();
        assert!((f - (-300.0f64 / 11.0).exp()).abs() < 1e-20);
        assert!(f < 2e-12 && f > 1e-12);
    }

    #[test]
    fn silent_noise_model() {
        let n = MemoryNoiseModel::default();
        let tags = memory_noise_tags(&[1, 2, 3], &n, &TimingCycle::default(), (0, 10_000_000_000_000), 4).unwrap();
        assert!(tags.is_empty());
    }

    #[test]
    fn gating_keeps_measure_window() {
        let c = TimingCycle::default();
        let inside = TimeTag {
            channel: Channel::Idler,
            time_ps: seconds_to_ps(0.9),
            origin: Origin::Pair,
        };
        let outside = TimeTag {
            time_ps: seconds_to_ps(0.5),
            ..inside
        };
        assert_eq!(gate_to_cycle(&[inside, outside], &c), vec![inside]);
        assert!(gate_to_cycle(&[], &c).is_empty());
    }

    #[test]
    fn live_time_of_whole_cycles() {
        let c = TimingCycle::default();
        let t = c.live_time((0, 10 * c.period_ps()));
        assert!((t - 7.0).abs() < 1e-9);
        let t = c.live_time((seconds_to_ps(1.0), seconds_to_ps(1.2)));
        assert!((t - 0.2).abs() < 1e-9);
    }

    #[test]
    fn csv_round_trip() {
        let tags = vec![
            TimeTag {
                channel: Channel::Idler,
                time_ps: 800,
                origin: Origin::Pair,
            },
            TimeTag {
                channel: Channel::Signal,
                time_ps: 1600,
                origin: Origin::MemoryNoise,
            },
        ];
        let mut buf = Vec::new();
        write_tags_csv(&tags, &mut buf).unwrap();
        assert_eq!(read_tags_csv(std::str::from_utf8(&buf).unwrap()).unwrap(), tags);
        assert!(read_tags_csv("channel,time_ps,origin\nidler,81,pair\n").is_err());
    }
}
