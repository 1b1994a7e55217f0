//! Photon-pair source: phase matching, pump-power scaling, Poisson emission
//! and beam-splitter routing.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::rng;

pub const PS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpmSpec {
    pub lambda_p: f64,
    pub lambda_s: f64,
    pub lambda_i: f64,
    pub n_p: f64,
    pub n_s: f64,
    pub n_i: f64,
}

impl QpmSpec {
    /// Degenerate pair with signal and idler at twice the pump wavelength.
    pub fn degenerate(lambda_p: f64, n_p: f64, n_si: f64) -> Self {
        QpmSpec {
            lambda_p,
            lambda_s: 2.0 * lambda_p,
            lambda_i: 2.0 * lambda_p,
            n_p,
            n_s: n_si,
            n_i: n_si,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, l) in [("lambda_p", self.lambda_p), ("lambda_s", self.lambda_s), ("lambda_i", self.lambda_i)] {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::validation(name, "wavelength must be positive"));
            }
        }
        for (name, n) in [("n_p", self.n_p), ("n_s", self.n_s), ("n_i", self.n_i)] {
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::validation(name, "index must be positive"));
            }
        }
        let pump = 1.0 / self.lambda_p;
        let sum = 1.0 / self.lambda_s + 1.0 / self.lambda_i;
        if ((pump - sum) / pump).abs() > 1e-9 {
            return Err(Error::validation("lambda_p", "energy conservation violated"));
        }
        Ok(())
    }

    /// n_p/λ_p − n_s/λ_s − n_i/λ_i, in 1/m.
    pub fn mismatch(&self) -> f64 {
        self.n_p / self.lambda_p - self.n_s / self.lambda_s - self.n_i / self.lambda_i
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Poling {
    Unpoled,
    /// `period` carries the sign of the mismatch; `reversed` is set when it is negative.
    Period { period: f64, reversed: bool },
}

pub fn qpm_period(spec: &QpmSpec) -> Result<Poling> {
    spec.validate()?;
    let k = spec.mismatch();
    // relative to the largest term, below this the mismatch is rounding noise
    let scale = spec.n_p / spec.lambda_p;
    if k.abs() <= 1e-12 * scale {
        return Ok(Poling::Unpoled);
    }
    Ok(Poling::Period {
        period: 1.0 / k,
        reversed: k < 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceConfig {
    /// W
    pub pump_power: f64,
    /// pairs/s per W
    pub rate_slope: f64,
    pub saturation_power: f64,
    pub filter_bandwidth: f64,
    /// Degeneracy point relative to the memory reference, Hz.
    pub filter_center: f64,
}

pub const DEFAULT_PUMP_POWER: f64 = 100e-6;
pub const DEFAULT_PAIR_RATE: f64 = 0.35e6;

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            pump_power: DEFAULT_PUMP_POWER,
            rate_slope: DEFAULT_PAIR_RATE / DEFAULT_PUMP_POWER,
            saturation_power: 100e-6,
            filter_bandwidth: 50e9,
            filter_center: 0.0,
        }
    }
}

impl SourceConfig {
    pub fn with_pump_power(pump_power: f64) -> Self {
        SourceConfig {
            pump_power,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pump_power >= 0.0) || !self.pump_power.is_finite() {
            return Err(Error::validation("source.pump_power", "must be non-negative"));
        }
        if !(self.rate_slope >= 0.0) || !self.rate_slope.is_finite() {
            return Err(Error::validation("source.rate_slope", "must be non-negative"));
        }
        if !(self.saturation_power >= 0.0) {
            return Err(Error::validation("source.saturation_power", "must be non-negative"));
        }
        if !(self.filter_bandwidth > 0.0) || !self.filter_bandwidth.is_finite() {
            return Err(Error::validation("source.filter_bandwidth", "must be positive"));
        }
        if !self.filter_center.is_finite() {
            return Err(Error::validation("source.filter_center", "must be finite"));
        }
        Ok(())
    }

    pub fn band(&self) -> (f64, f64) {
        let h = 0.5 * self.filter_bandwidth;
        (self.filter_center - h, self.filter_center + h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRate {
    /// pairs/s
    pub rate: f64,
    pub warning: Option<String>,
}

pub fn pair_rate(cfg: &SourceConfig) -> PairRate {
    let p = cfg.pump_power.max(0.0);
    if p > cfg.saturation_power {
        PairRate {
            rate: cfg.rate_slope * cfg.saturation_power,
            warning: Some(format!(
                "pump power {:.3e} W exceeds saturation {:.3e} W; rate clamped",
                p, cfg.saturation_power
            )),
        }
    } else {
        PairRate {
            rate: cfg.rate_slope * p,
            warning: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairEvent {
    /// s
    pub emission_time: f64,
    /// Hz, relative to the memory reference.
    pub signal_frequency: f64,
    pub idler_frequency: f64,
}

impl PairEvent {
    pub fn time_ps(&self) -> i64 {
        (self.emission_time / PS).round() as i64
    }
}

/// Draw the signal frequency uniformly in the filter band; the idler is its
/// mirror image about the degeneracy point.
pub fn conjugate_pair<R: Rng + ?Sized>(cfg: &SourceConfig, rng: &mut R) -> (f64, f64) {
    let d = (rng.random::<f64>() - 0.5) * cfg.filter_bandwidth;
    (cfg.filter_center + d, cfg.filter_center - d)
}

pub fn sample_pairs(cfg: &SourceConfig, duration: f64, seed: u64) -> Result<Vec<PairEvent>> {
    cfg.validate()?;
    if !(duration >= 0.0) || !duration.is_finite() {
        return Err(Error::validation("duration", "must be non-negative"));
    }
    let rate = pair_rate(cfg).rate;
    let mut out = Vec::new();
    if rate <= 0.0 || duration == 0.0 {
        return Ok(out);
    }
    let mut rng = rng::stream(seed, &[0x5041_4952]);
    out.reserve((rate * duration * 1.01) as usize + 16);
    let mut t = 0.0;
    loop {
        let gap: f64 = Exp1.sample(&mut rng);
        t += gap / rate;
        if t >= duration {
            break;
        }
        let (s, i) = conjugate_pair(cfg, &mut rng);
        out.push(PairEvent {
            emission_time: t,
            signal_frequency: s,
            idler_frequency: i,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Member {
    Signal,
    Idler,
}

/// One photon leaving the beam splitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmPhoton {
    pub pair: usize,
    pub member: Member,
    pub time: f64,
    pub frequency: f64,
}

/// Route both members of every pair independently and with equal probability
/// to the memory arm (first output) or the herald arm (second output).
pub fn route_beamsplitter(events: &[PairEvent], seed: u64) -> (Vec<ArmPhoton>, Vec<ArmPhoton>) {
    let mut rng = rng::stream(seed, &[0x4253_3250]);
    let mut memory_arm = Vec::with_capacity(events.len());
    let mut herald_arm = Vec::with_capacity(events.len());
    for (k, e) in events.iter().enumerate() {
        for (member, frequency) in [(Member::Signal, e.signal_frequency), (Member::Idler, e.idler_frequency)] {
            let p = ArmPhoton {
                pair: k,
                member,
                time: e.emission_time,
                frequency,
            };
            if rng.random::<bool>() {
                memory_arm.push(p);
            } else {
                herald_arm.push(p);
            }
        }
    }
    (memory_arm, herald_arm)
}

/// Pairs with exactly one member in each arm.
pub fn split_pairs(memory_arm: &[ArmPhoton], n_pairs: usize) -> usize {
    let mut count = vec![0u8; n_pairs];
    for p in memory_arm {
        count[p.pair] += 1;
    }
    count.iter().filter(|&&c| c == 1).count()
}

pub fn write_pairs_csv<W: Write>(events: &[PairEvent], mut w: W) -> std::io::Result<()> {
    writeln!(w, "emission_time_ps,signal_detuning_mhz,idler_detuning_mhz")?;
    for e in events {
        writeln!(w, "{},{:.6},{:.6}", e.time_ps(), e.signal_frequency * 1e-6, e.idler_frequency * 1e-6)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dispersionless_degenerate_is_unpoled() {
        let s = QpmSpec::degenerate(766e-9, 2.2, 2.2);
        assert_eq!(qpm_period(&s).unwrap(), Poling::Unpoled);
    }

    #[test]
    fn simple_indices_give_fifteen_micron_period() {
        let s = QpmSpec::degenerate(766e-9, 2.26, 2.21);
        match qpm_period(&s).unwrap() {
            Poling::Period { period, reversed } => {
                let want = 1.0 / (2.26 / 766e-9 - 2.0 * 2.21 / 1532e-9);
                assert!((period - want).abs() < 1e-15);
                assert!((period - 15.3e-6).abs() < 0.1e-6, "{period:e}");
                assert!(!reversed);
            }
            p => panic!("{p:?}"),
        }
    }

    #[test]
    fn negative_mismatch_is_flagged() {
        let s = QpmSpec::degenerate(766e-9, 2.1, 2.2);
        match qpm_period(&s).unwrap() {
            Poling::Period { period, reversed } => {
                assert!(period < 0.0);
                assert!(reversed);
            }
            p => panic!("{p:?}"),
        }
    }

    #[test]
    fn energy_conservation_checked() {
        let mut s = QpmSpec::degenerate(766e-9, 2.26, 2.21);
        s.lambda_i = 1500e-9;
        assert!(qpm_period(&s).is_err());
    }

    #[test]
    fn pair_rate_anchors() {
        assert_eq!(pair_rate(&SourceConfig::with_pump_power(0.0)).rate, 0.0);
        let r = pair_rate(&SourceConfig::default());
        assert!((r.rate - 0.35e6).abs() < 1e-6);
        assert!(r.warning.is_none());
        let r = pair_rate(&SourceConfig::with_pump_power(50e-6)).rate;
        assert!((r - 0.175e6).abs() < 1e-6);
    }

    #[test]
    fn pair_rate_clamps_above_saturation() {
        let r = pair_rate(&SourceConfig::with_pump_power(200e-6));
        assert!((r.rate - 0.35e6).abs() < 1e-6);
        assert!(r.warning.is_some());
    }

    #[test]
    fn pairs_are_conjugate_and_in_band() {
        let cfg = SourceConfig {
            filter_center: 3e9,
            ..Default::default()
        };
        let ev = sample_pairs(&cfg, 1e-3, 1).unwrap();
        let (lo, hi) = cfg.band();
        for e in &ev {
            assert!(e.signal_frequency >= lo && e.signal_frequency <= hi);
            assert!(e.idler_frequency >= lo && e.idler_frequency <= hi);
            assert!((e.signal_frequency + e.idler_frequency - 2.0 * cfg.filter_center).abs() < 1.0);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = SourceConfig::default();
        assert_eq!(sample_pairs(&cfg, 1e-3, 9).unwrap(), sample_pairs(&cfg, 1e-3, 9).unwrap());
        assert_ne!(sample_pairs(&cfg, 1e-3, 9).unwrap(), sample_pairs(&cfg, 1e-3, 10).unwrap());
    }

    #[test]
    fn empty_routing() {
        let (a, b) = route_beamsplitter(&[], 0);
        assert!(a.is_empty() && b.is_empty());
    }

    #[test]
    fn csv_header() {
        let ev = sample_pairs(&SourceConfig::default(), 1e-4, 2).unwrap();
        let mut buf = Vec::new();
        write_pairs_csv(&ev, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("emission_time_ps,signal_detuning_mhz,idler_detuning_mhz\n"));
        assert_eq!(s.lines().count(), ev.len() + 1);
    }
}
