//! Per-photon view of the memory and closed-form rate predictions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{MemoryConfig, ScenarioConfig};
use crate::detection::{DetectorModel, TDC_BIN_PS};
use crate::error::Result;
use crate::memory::{
    build_comb, echo_window, simulate_optical_pumping, temporal_modes, transfer_function, CombProfile, ModeCombination,
    SectionResponse, TemporalMode,
};
use crate::source::{pair_rate, SourceConfig};
use crate::spectral::{self, FrequencyGrid, SpectralField};

/// Fate probabilities and echo-delay distribution of one comb section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionFate {
    pub section: usize,
    pub lo: f64,
    pub hi: f64,
    pub transmitted: f64,
    pub recall: f64,
    pub absorbed: f64,
    pub expected_delay: f64,
    /// Peak of the echo, s.
    pub delay: f64,
    pub phase: f64,
    /// Echo arrival delays, ps, with normalized weights.
    pub delays_ps: Vec<i64>,
    pub weights: Vec<f64>,
    cdf: Vec<f64>,
}

impl SectionFate {
    #[allow(clippy::too_many_arguments)]
    fn new(section: usize, lo: f64, hi: f64, transmitted: f64, recall: f64, expected_delay: f64, phase: f64, echo: Vec<(i64, f64)>) -> Self {
        let total: f64 = echo.iter().map(|e| e.1).sum();
        let (delays_ps, weights): (Vec<i64>, Vec<f64>) = echo.into_iter().map(|(t, w)| (t, w / total)).unzip();
        let mut acc = 0.0;
        let cdf = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        let peak = delays_ps
            .iter()
            .zip(&weights)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(t, _)| *t as f64 * 1e-12)
            .unwrap_or(expected_delay);
        SectionFate {
            section,
            lo,
            hi,
            transmitted,
            recall,
            absorbed: (1.0 - transmitted - recall).max(0.0),
            expected_delay,
            delay: peak,
            phase,
            delays_ps,
            weights,
            cdf,
        }
    }

    pub fn bandwidth(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mean_delay_ps(&self) -> f64 {
        self.delays_ps.iter().zip(&self.weights).map(|(t, w)| *t as f64 * w).sum()
    }

    pub fn sample_delay<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let u: f64 = rng.random();
        let k = self.cdf.partition_point(|&c| c < u).min(self.delays_ps.len() - 1);
        self.delays_ps[k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    Transmitted,
    Recalled { section: usize, delay_ps: i64 },
    Absorbed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryChannel {
    pub bypass: bool,
    /// Ordered by frequency.
    pub sections: Vec<SectionFate>,
    pub outside_transmission: f64,
    pub combination: ModeCombination,
    /// Achieved profile for comb memories.
    pub profile: Option<CombProfile>,
}

impl MemoryChannel {
    pub fn bypass() -> Self {
        MemoryChannel {
            bypass: true,
            sections: Vec::new(),
            outside_transmission: 1.0,
            combination: ModeCombination::Incoherent,
            profile: None,
        }
    }

    pub fn build(cfg: &MemoryConfig, grid: &FrequencyGrid) -> Result<Self> {
        match cfg {
            MemoryConfig::Bypass => Ok(Self::bypass()),
            MemoryConfig::Fixed {
                lo,
                hi,
                recall,
                transmitted,
                delay,
                out_of_band_depth,
            } => Ok(MemoryChannel {
                bypass: false,
                sections: vec![SectionFate::new(
                    0,
                    *lo,
                    *hi,
                    *transmitted,
                    *recall,
                    *delay,
                    0.0,
                    vec![((delay * 1e12).round() as i64, 1.0)],
                )],
                outside_transmission: (-out_of_band_depth).exp(),
                combination: ModeCombination::Incoherent,
                profile: None,
            }),
            MemoryConfig::Comb {
                sections,
                out_of_band_depth,
                pumping,
                combination,
            } => {
                let mut profile = build_comb(sections.clone(), *out_of_band_depth)?;
                if let Some(p) = pumping {
                    profile = simulate_optical_pumping(&profile, p)?;
                }
                let h = transfer_function(&profile, grid)?;
                let mut fates = Vec::with_capacity(profile.sections.len());
                for (i, s) in profile.sections.iter().enumerate() {
                    let input = SpectralField::flat_band(*grid, s.lo(), s.hi())?;
                    let out = spectral::filter(&input, &h)?;
                    let d = s.storage_time();
                    let (wlo, whi) = echo_window(s);
                    let transmitted = out.energy_between(f64::NEG_INFINITY, 0.5 * d);
                    let decay = s.decay(d);
                    let echo: Vec<(i64, f64)> = out
                        .amplitude
                        .iter()
                        .enumerate()
                        .filter_map(|(n, a)| {
                            let t = out.time(n);
                            (t >= wlo && t < whi).then(|| ((t * 1e12).round() as i64, a.norm_sqr() * decay))
                        })
                        .collect();
                    let recall = echo.iter().map(|e| e.1).sum();
                    fates.push(SectionFate::new(i, s.lo(), s.hi(), transmitted, recall, d, s.recall_phase, echo));
                }
                fates.sort_by(|a, b| a.lo.total_cmp(&b.lo));
                Ok(MemoryChannel {
                    bypass: false,
                    sections: fates,
                    outside_transmission: (-profile.out_of_band_depth).exp(),
                    combination: *combination,
                    profile: Some(profile),
                })
            }
        }
    }

    pub fn section_at(&self, nu: f64) -> Option<&SectionFate> {
        let k = self.sections.partition_point(|s| s.hi <= nu);
        self.sections.get(k).filter(|s| nu >= s.lo && nu < s.hi)
    }

    /// Probability a photon at `nu` leaves the memory, at any time.
    pub fn survival(&self, nu: f64) -> f64 {
        match self.section_at(nu) {
            Some(s) => s.transmitted + s.recall,
            None => self.outside_transmission,
        }
    }

    pub fn max_survival(&self) -> f64 {
        self.sections
            .iter()
            .map(|s| s.transmitted + s.recall)
            .fold(self.outside_transmission, f64::max)
    }

    pub fn fate<R: Rng + ?Sized>(&self, nu: f64, rng: &mut R) -> Fate {
        let u: f64 = rng.random();
        match self.section_at(nu) {
            Some(s) => {
                if u < s.transmitted {
                    Fate::Transmitted
                } else if u < s.transmitted + s.recall {
                    Fate::Recalled {
                        section: s.section,
                        delay_ps: s.sample_delay(rng),
                    }
                } else {
                    Fate::Absorbed
                }
            }
            None => {
                if u < self.outside_transmission {
                    Fate::Transmitted
                } else {
                    Fate::Absorbed
                }
            }
        }
    }

    /// Fate of a photon known to leave the memory.
    pub fn surviving_fate<R: Rng + ?Sized>(&self, nu: f64, rng: &mut R) -> Fate {
        match self.section_at(nu) {
            Some(s) => {
                let u: f64 = rng.random::<f64>() * (s.transmitted + s.recall);
                if u < s.transmitted {
                    Fate::Transmitted
                } else {
                    Fate::Recalled {
                        section: s.section,
                        delay_ps: s.sample_delay(rng),
                    }
                }
            }
            None => Fate::Transmitted,
        }
    }

    /// Fraction of section `s` inside `[lo, hi)`.
    fn overlap(s: &SectionFate, lo: f64, hi: f64) -> f64 {
        (s.hi.min(hi) - s.lo.max(lo)).max(0.0)
    }

    /// Band-averaged (survival, absorption) for a flat spectrum over `[lo, hi)`.
    pub fn band_average(&self, lo: f64, hi: f64) -> (f64, f64) {
        if self.bypass {
            return (1.0, 0.0);
        }
        let b = hi - lo;
        let mut covered = 0.0;
        let (mut surv, mut abs) = (0.0, 0.0);
        for s in &self.sections {
            let f = Self::overlap(s, lo, hi) / b;
            covered += f;
            surv += f * (s.transmitted + s.recall);
            abs += f * s.absorbed;
        }
        let rest = (1.0 - covered).max(0.0);
        surv += rest * self.outside_transmission;
        abs += rest * (1.0 - self.outside_transmission);
        (surv, abs)
    }

    pub fn responses(&self) -> Vec<SectionResponse> {
        self.sections
            .iter()
            .map(|s| SectionResponse {
                section: s.section,
                lo: s.lo,
                hi: s.hi,
                expected_delay: s.expected_delay,
                delay: s.delay,
                recall: s.recall,
                transmitted: s.transmitted,
                absorbed: s.absorbed,
                phase: s.phase,
            })
            .collect()
    }

    /// Echo groups, 200 ps tolerance.
    pub fn modes(&self) -> Vec<TemporalMode> {
        temporal_modes(&self.responses(), 200e-12, self.combination)
    }

    pub fn fate_of(&self, section: usize) -> Option<&SectionFate> {
        self.sections.iter().find(|s| s.section == section)
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Probability that a coincidence with true delay distribution `delays`
/// lands in the histogram bins spanning `[a_ps, b_ps)`, given the combined
/// jitter `sigma_ps` and TDC quantization of both tags.
pub fn window_capture(delays: &[(i64, f64)], sigma_ps: f64, a_ps: i64, b_ps: i64) -> f64 {
    let q = TDC_BIN_PS as usize;
    let mut total = 0.0;
    for &(tau, w) in delays {
        let mut p = 0.0;
        for k in 0..q {
            let r = k as f64 + 0.5;
            let hi = b_ps as f64 - r - tau as f64;
            let lo = a_ps as f64 - r - tau as f64;
            p += if sigma_ps > 0.0 {
                normal_cdf(hi / sigma_ps) - normal_cdf(lo / sigma_ps)
            } else {
                ((lo <= 0.0) && (0.0 < hi)) as u8 as f64
            };
        }
        total += w * p / q as f64;
    }
    total
}

/// Closed-form expectations for one scenario point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointModel {
    pub pair_rate: f64,
    /// Detected singles per gated second.
    pub idler_singles: f64,
    pub signal_singles: f64,
    /// Re-emitted noise photons reaching the signal detector, per second.
    pub noise_arrivals: f64,
    pub sigma_ps: f64,
    /// True coincidence rate per section (delayed by its echo), per second.
    pub section_coincidences: Vec<(usize, f64)>,
    /// True coincidence rate of directly transmitted photons.
    pub transmitted_coincidences: f64,
    pub band_survival: f64,
    pub band_absorption: f64,
}

pub(crate) fn point_source(cfg: &ScenarioConfig, pump_power: Option<f64>) -> SourceConfig {
    SourceConfig {
        pump_power: pump_power.unwrap_or(cfg.source.pump_power),
        ..cfg.source
    }
}

pub fn combined_sigma(a: &DetectorModel, b: &DetectorModel) -> f64 {
    (a.sigma_ps().powi(2) + b.sigma_ps().powi(2)).sqrt()
}

impl PointModel {
    pub fn new(cfg: &ScenarioConfig, pump_power: Option<f64>, memory: &MemoryChannel) -> Self {
        let src = point_source(cfg, pump_power);
        let r = pair_rate(&src).rate;
        let (lo, hi) = src.band();
        let l = &cfg.losses;
        let (di, ds) = (&cfg.idler_detector, &cfg.signal_detector);
        let (surv, absorb) = memory.band_average(lo, hi);
        let eta_t = if memory.bypass { 1.0 } else { l.eta_t };
        let noise_arrivals = if memory.bypass {
            0.0
        } else {
            cfg.noise.capture_fraction * r * l.eta_cs * absorb * l.eta_t
                + cfg.noise.residual_per_window(&cfg.cycle) / cfg.cycle.measure * l.eta_t
        };
        let idler_singles = r * l.eta_ci * di.efficiency + di.dark_rate;
        let signal_singles = r * l.eta_cs * eta_t * surv * ds.efficiency + noise_arrivals * ds.efficiency + ds.dark_rate;
        let pair = 0.5 * r * l.eta_ci * l.eta_cs * di.efficiency * ds.efficiency * eta_t;
        let b = hi - lo;
        let mut transmitted = 0.0;
        let mut covered = 0.0;
        let mut section_coincidences = Vec::new();
        for s in &memory.sections {
            let f = MemoryChannel::overlap(s, lo, hi) / b;
            covered += f;
            transmitted += f * s.transmitted;
            section_coincidences.push((s.section, pair * f * s.recall));
        }
        transmitted += (1.0 - covered).max(0.0) * memory.outside_transmission;
        PointModel {
            pair_rate: r,
            idler_singles,
            signal_singles,
            noise_arrivals,
            sigma_ps: combined_sigma(di, ds),
            section_coincidences,
            transmitted_coincidences: pair * transmitted,
            band_survival: surv,
            band_absorption: absorb,
        }
    }

    /// Accidental coincidences per second in a window of `width_ps`.
    pub fn accidentals(&self, width_ps: i64) -> f64 {
        self.idler_singles * self.signal_singles * width_ps as f64 * 1e-12
    }

    /// Expected coincidences per gated second in bins `[a, b)` ps: accidentals
    /// plus every correlated contribution (transmitted peak and all echoes).
    pub fn window_rate(&self, memory: &MemoryChannel, a_ps: i64, b_ps: i64) -> f64 {
        let mut rate = self.accidentals(b_ps - a_ps);
        rate += self.transmitted_coincidences * window_capture(&[(0, 1.0)], self.sigma_ps, a_ps, b_ps);
        for &(k, c) in &self.section_coincidences {
            if let Some(s) = memory.fate_of(k) {
                rate += c * window_capture(&s.echo(), self.sigma_ps, a_ps, b_ps);
            }
        }
        rate
    }
}

impl SectionFate {
    pub fn echo(&self) -> Vec<(i64, f64)> {
        self.delays_ps.iter().copied().zip(self.weights.iter().copied()).collect()
    }
}
