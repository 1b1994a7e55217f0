//! Event generation for one scenario point.
//!
//! The fast engine only draws pairs that can reach the signal detector; herald
//! events of all other pairs are drawn only where they could fall inside the
//! histogram range of a signal tag. Work is sharded by measurement window so
//! results do not depend on the number of worker threads.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;

use super::channel::{Fate, MemoryChannel};
use super::config::{Losses, ScenarioConfig};
use crate::analysis::{accumulate, build_histogram, channel_times, CoincidenceHistogram};
use crate::detection::{
    apply_dead_time, dark_tags, detect, gate_to_cycle, memory_noise_tags, memory_noise_with, quantize, register, seconds_to_ps, Arrival, Channel,
    DetectorModel, MemoryNoiseModel, Origin, TimeTag, TimingCycle,
};
use crate::error::{Error, Result};
use crate::rng;
use crate::source::{pair_rate, route_beamsplitter, sample_pairs, SourceConfig};

const MARGIN_PS: i64 = 2_000;

/// Counts accumulated over all shards of a point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCounts {
    pub histogram: CoincidenceHistogram,
    pub idler_singles: u64,
    pub signal_singles: u64,
}

impl PointCounts {
    fn empty(bin_ps: i64, range_ps: (i64, i64)) -> Result<Self> {
        Ok(PointCounts {
            histogram: CoincidenceHistogram::empty(bin_ps, range_ps)?,
            idler_singles: 0,
            signal_singles: 0,
        })
    }

    fn merge(mut self, other: PointCounts) -> Result<Self> {
        self.histogram.merge(&other.histogram)?;
        self.idler_singles += other.idler_singles;
        self.signal_singles += other.signal_singles;
        Ok(self)
    }
}

pub(crate) fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean > 0.0 {
        Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
    } else {
        0
    }
}

/// Copy of `m` whose efficiency is relative to its polarization peak.
fn thinned(m: &DetectorModel) -> (DetectorModel, f64) {
    let peak = m.peak_efficiency();
    let mut t = *m;
    t.efficiency = if peak > 0.0 { m.efficiency / peak } else { 0.0 };
    (t, peak)
}

#[derive(Clone, Copy)]
enum Arm {
    Memory,
    Herald,
    Lost,
}

/// Measurement windows covering `live` gated seconds: `(index, start, end)` ps.
pub fn shards(cycle: &TimingCycle, live: f64) -> Vec<(u64, i64, i64)> {
    let live_ps = seconds_to_ps(live);
    let measure_ps = seconds_to_ps(cycle.measure);
    let mut out = Vec::new();
    let mut left = live_ps;
    let mut k = 0i64;
    while left > 0 {
        let (ws, we) = cycle.window_ps(k);
        let len = (we - ws).min(measure_ps).min(left);
        out.push((k as u64, ws, ws + len));
        left -= len;
        k += 1;
    }
    out
}

pub struct FastEngine<'a> {
    channel: &'a MemoryChannel,
    cycle: TimingCycle,
    noise: MemoryNoiseModel,
    idler: DetectorModel,
    signal: DetectorModel,
    band: (f64, f64),
    center: f64,
    seed: u64,
    point: u64,
    key: u64,
    bin_ps: i64,
    range_ps: (i64, i64),
    q_m: f64,
    q_h: f64,
    u_max: f64,
    /// Per second: pairs with a memory candidate, herald-only singles and doubles.
    lambda_m: f64,
    lambda_h1: f64,
    lambda_hh: f64,
    lambda_noise: f64,
    residual_keep: f64,
    idler_keep: f64,
}

impl<'a> FastEngine<'a> {
    pub fn new(
        cfg: &ScenarioConfig,
        source: &SourceConfig,
        channel: &'a MemoryChannel,
        point: usize,
        range_ps: (i64, i64),
    ) -> Result<Self> {
        let r = pair_rate(source).rate;
        let Losses { eta_ci, eta_cs, eta_t } = cfg.losses;
        let eta_t = if channel.bypass { 1.0 } else { eta_t };
        let (idler, peak_i) = thinned(&cfg.idler_detector);
        let (signal, peak_s) = thinned(&cfg.signal_detector);
        let u_max = channel.max_survival();
        let q_m = 0.5 * eta_cs * eta_t * peak_s * u_max;
        let q_h = 0.5 * eta_ci * peak_i;
        let band = source.band();
        let (_, absorbed) = channel.band_average(band.0, band.1);
        let lambda_noise = if channel.bypass {
            0.0
        } else {
            cfg.noise.capture_fraction * r * eta_cs * absorbed * eta_t * peak_s
        };
        Ok(FastEngine {
            channel,
            cycle: cfg.cycle,
            noise: MemoryNoiseModel {
                capture_fraction: 0.0,
                residual_excited_rate: if channel.bypass { 0.0 } else { cfg.noise.residual_excited_rate },
            },
            idler,
            signal,
            band,
            center: source.filter_center,
            seed: cfg.seed,
            point: point as u64,
            key: rng::derive_seed(cfg.seed, &[point as u64, 0x504f_4c41]),
            bin_ps: cfg.bin_ps(),
            range_ps,
            q_m,
            q_h,
            u_max,
            lambda_m: r * (2.0 * q_m - q_m * q_m),
            lambda_h1: 2.0 * r * q_h * (1.0 - q_m - q_h),
            lambda_hh: r * q_h * q_h,
            lambda_noise,
            residual_keep: eta_t * peak_s,
            idler_keep: idler.efficiency,
        })
    }

    pub fn run(&self, live: f64) -> Result<PointCounts> {
        let shards = shards(&self.cycle, live);
        let empty = PointCounts::empty(self.bin_ps, self.range_ps)?;
        shards
            .par_iter()
            .try_fold(
                || empty.clone(),
                |mut acc, &(k, ws, we)| -> Result<PointCounts> {
                    self.shard(k, ws, we, &mut acc)?;
                    Ok(acc)
                },
            )
            .try_reduce(|| empty.clone(), |a, b| a.merge(b))
    }

    fn arms<R: Rng + ?Sized>(&self, rng: &mut R) -> (Arm, Arm) {
        let other = |u: f64| {
            if u < self.q_m {
                Arm::Memory
            } else if u < self.q_m + self.q_h {
                Arm::Herald
            } else {
                Arm::Lost
            }
        };
        if rng.random::<f64>() * (2.0 - self.q_m) < 1.0 {
            (Arm::Memory, other(rng.random()))
        } else if rng.random::<f64>() * (1.0 - self.q_m) < self.q_h {
            (Arm::Herald, Arm::Memory)
        } else {
            (Arm::Lost, Arm::Memory)
        }
    }

    fn memory_photon<R: Rng + ?Sized>(&self, t: i64, nu: f64, rng: &mut R, out: &mut Vec<Arrival>) {
        let delay = if self.channel.bypass {
            0
        } else {
            if rng.random::<f64>() * self.u_max >= self.channel.survival(nu) {
                return;
            }
            match self.channel.surviving_fate(nu, rng) {
                Fate::Recalled { delay_ps, .. } => delay_ps,
                _ => 0,
            }
        };
        out.push(Arrival {
            time_ps: t + delay,
            origin: Origin::Pair,
        });
    }

    fn shard(&self, k: u64, ws: i64, we: i64, acc: &mut PointCounts) -> Result<()> {
        let mut rng = rng::stream(self.seed, &[self.point, k]);
        let span = we - ws;
        let secs = span as f64 * 1e-12;
        let mut sig = Vec::new();
        let mut her = Vec::new();
        for _ in 0..poisson(&mut rng, self.lambda_m * secs) {
            let t = ws + rng.random_range(0..span);
            let nu = rng.random_range(self.band.0..self.band.1);
            let (a, b) = self.arms(&mut rng);
            for (arm, f) in [(a, nu), (b, 2.0 * self.center - nu)] {
                match arm {
                    Arm::Memory => self.memory_photon(t, f, &mut rng, &mut sig),
                    Arm::Herald => her.push(Arrival {
                        time_ps: t,
                        origin: Origin::Pair,
                    }),
                    Arm::Lost => {}
                }
            }
        }
        for _ in 0..poisson(&mut rng, self.lambda_noise * secs) {
            sig.push(Arrival {
                time_ps: ws + rng.random_range(0..span),
                origin: Origin::MemoryNoise,
            });
        }
        if !self.noise.is_silent() {
            for a in memory_noise_with(&[], &self.noise, &self.cycle, (ws, we), &mut rng)? {
                if rng.random::<f64>() < self.residual_keep {
                    sig.push(a);
                }
            }
        }
        let mut sig_tags = register(&sig, Channel::Signal, &self.signal, &mut rng, self.key);
        sig_tags.extend(dark_tags(Channel::Signal, self.signal.dark_rate, (ws, we), &mut rng));
        sig_tags.sort_unstable_by_key(|t| t.time_ps);
        let sig_tags: Vec<TimeTag> = apply_dead_time(sig_tags, seconds_to_ps(self.signal.dead_time))
            .into_iter()
            .filter(|t| t.time_ps < we)
            .collect();

        // herald-only events, only near signal tags
        let (lo, hi) = self.range_ps;
        let dead = seconds_to_ps(self.idler.dead_time);
        let mut intervals: Vec<(i64, i64)> = Vec::new();
        for t in &sig_tags {
            let a = (t.time_ps - hi - MARGIN_PS - dead).max(ws);
            let b = (t.time_ps - lo + MARGIN_PS).min(we);
            if b <= a {
                continue;
            }
            match intervals.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => intervals.push((a, b)),
            }
        }
        let mut covered = 0i64;
        let mut darks = Vec::new();
        let total = self.lambda_h1 + self.lambda_hh + self.idler.dark_rate;
        for &(a, b) in &intervals {
            covered += b - a;
            if total <= 0.0 {
                continue;
            }
            let mut t = a as f64;
            loop {
                let gap: f64 = Exp1.sample(&mut rng);
                t += gap / total * 1e12;
                if t >= b as f64 {
                    break;
                }
                let u = rng.random::<f64>() * total;
                let time_ps = t as i64;
                let arrival = Arrival {
                    time_ps,
                    origin: Origin::Pair,
                };
                if u < self.lambda_h1 {
                    her.push(arrival);
                } else if u < self.lambda_h1 + self.lambda_hh {
                    her.extend([arrival, arrival]);
                } else {
                    darks.push(TimeTag {
                        channel: Channel::Idler,
                        time_ps: quantize(time_ps),
                        origin: Origin::Dark,
                    });
                }
            }
        }
        let mut her_tags = register(&her, Channel::Idler, &self.idler, &mut rng, self.key);
        her_tags.extend(darks);
        her_tags.sort_unstable_by_key(|t| t.time_ps);
        let her_tags: Vec<TimeTag> = apply_dead_time(her_tags, dead)
            .into_iter()
            .filter(|t| t.time_ps >= ws && t.time_ps < we)
            .collect();

        let idler_t: Vec<i64> = her_tags.iter().map(|t| t.time_ps).collect();
        let signal_t: Vec<i64> = sig_tags.iter().map(|t| t.time_ps).collect();
        accumulate(&mut acc.histogram, &idler_t, &signal_t)?;
        let uncovered = (span - covered) as f64 * 1e-12;
        let extra = poisson(
            &mut rng,
            ((self.lambda_h1 + 2.0 * self.lambda_hh) * self.idler_keep + self.idler.dark_rate) * uncovered,
        );
        acc.histogram.n_triggers += extra;
        acc.histogram.live_time_ps += span;
        acc.idler_singles += idler_t.len() as u64 + extra;
        acc.signal_singles += signal_t.len() as u64;
        Ok(())
    }
}

/// The literal event chain over `cycles` whole timing cycles. Every photon of
/// every pair is carried through; use only for short runs and cross-checks.
pub fn reference_point(
    cfg: &ScenarioConfig,
    source: &SourceConfig,
    channel: &MemoryChannel,
    cycles: u32,
    range_ps: (i64, i64),
    seed: u64,
) -> Result<PointCounts> {
    if cycles == 0 {
        return Err(Error::validation("cycles", "must be positive"));
    }
    let span = (0, cycles as i64 * cfg.cycle.period_ps());
    let pairs = sample_pairs(source, span.1 as f64 * 1e-12, seed)?;
    let (memory_arm, herald_arm) = route_beamsplitter(&pairs, seed);
    let mut rng = rng::stream(seed, &[0x5245_4600]);
    let l = cfg.losses;
    let eta_t = if channel.bypass { 1.0 } else { l.eta_t };

    let mut herald: Vec<Arrival> = herald_arm
        .iter()
        .filter(|_| rng.random::<f64>() < l.eta_ci)
        .map(|p| Arrival {
            time_ps: seconds_to_ps(p.time),
            origin: Origin::Pair,
        })
        .collect();
    herald.sort_by_key(|a| a.time_ps);

    let mut signal = Vec::new();
    let mut absorbed = Vec::new();
    for p in &memory_arm {
        if rng.random::<f64>() >= l.eta_cs {
            continue;
        }
        let t = seconds_to_ps(p.time);
        let out = if channel.bypass {
            Some(t)
        } else {
            match channel.fate(p.frequency, &mut rng) {
                Fate::Transmitted => Some(t),
                Fate::Recalled { delay_ps, .. } => Some(t + delay_ps),
                Fate::Absorbed => {
                    absorbed.push(t);
                    None
                }
            }
        };
        if let Some(t) = out {
            if rng.random::<f64>() < eta_t {
                signal.push(Arrival {
                    time_ps: t,
                    origin: Origin::Pair,
                });
            }
        }
    }
    if !channel.bypass {
        absorbed.sort_unstable();
        for a in memory_noise_tags(&absorbed, &cfg.noise, &cfg.cycle, span, seed)? {
            if rng.random::<f64>() < eta_t {
                signal.push(a);
            }
        }
    }
    signal.sort_by_key(|a| a.time_ps);

    let idler_tags = gate_to_cycle(&detect(&herald, Channel::Idler, &cfg.idler_detector, span, seed)?, &cfg.cycle);
    let signal_tags = gate_to_cycle(&detect(&signal, Channel::Signal, &cfg.signal_detector, span, seed)?, &cfg.cycle);
    let idler_t = channel_times(&idler_tags, Channel::Idler);
    let signal_t = channel_times(&signal_tags, Channel::Signal);
    let histogram = build_histogram(&idler_t, &signal_t, cfg.bin_ps(), range_ps, cfg.cycle.live_time(span))?;
    Ok(PointCounts {
        histogram,
        idler_singles: idler_t.len() as u64,
        signal_singles: signal_t.len() as u64,
    })
}
