//! Coincidence histograms, windowed g² estimates and the efficiency/noise
//! budget linking bypass and memory measurements.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::detection::{ps_to_seconds, seconds_to_ps, Channel, TimeTag, TDC_BIN_PS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub bin_width_ps: i64,
    /// Lower edge of the first bin, ps of signal delay after the trigger.
    pub start_ps: i64,
    pub counts: Vec<u64>,
    pub n_triggers: u64,
    /// Gated seconds, stored in ps so merged histograms stay exact.
    pub live_time_ps: i64,
}

impl CoincidenceHistogram {
    pub fn empty(bin_width_ps: i64, range_ps: (i64, i64)) -> Result<Self> {
        if bin_width_ps < TDC_BIN_PS || bin_width_ps % TDC_BIN_PS != 0 {
            return Err(Error::validation("bin_width", "must be a positive multiple of 80 ps"));
        }
        let (lo, hi) = range_ps;
        if hi <= lo {
            return Err(Error::validation("range", "upper edge must exceed lower edge"));
        }
        let n = ((hi - lo) + bin_width_ps - 1) / bin_width_ps;
        Ok(CoincidenceHistogram {
            bin_width_ps,
            start_ps: lo,
            counts: vec![0; n as usize],
            n_triggers: 0,
            live_time_ps: 0,
        })
    }

    pub fn bin_width(&self) -> f64 {
        ps_to_seconds(self.bin_width_ps)
    }

    pub fn start(&self) -> f64 {
        ps_to_seconds(self.start_ps)
    }

    pub fn end_ps(&self) -> i64 {
        self.start_ps + self.bin_width_ps * self.counts.len() as i64
    }

    pub fn live_time(&self) -> f64 {
        ps_to_seconds(self.live_time_ps)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Mean of the TDC-lattice delays that fall into bin `k`.
    pub fn bin_center_ps(&self, k: usize) -> f64 {
        self.start_ps as f64 + k as f64 * self.bin_width_ps as f64 + 0.5 * (self.bin_width_ps - TDC_BIN_PS) as f64
    }

    /// Bin-wise addition; shapes must agree.
    pub fn merge(&mut self, other: &CoincidenceHistogram) -> Result<()> {
        if self.bin_width_ps != other.bin_width_ps || self.start_ps != other.start_ps || self.counts.len() != other.counts.len() {
            return Err(Error::Contract("histogram shapes differ".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.n_triggers += other.n_triggers;
        self.live_time_ps += other.live_time_ps;
        Ok(())
    }

    /// Bins whose centers satisfy `lo <= c < hi` (seconds).
    pub fn bins_between(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let w = self.bin_width_ps as f64;
        let c0 = self.bin_center_ps(0);
        let index = |t: f64| ((t * 1e12 - c0) / w).ceil().max(0.0) as usize;
        index(lo).min(self.counts.len())..index(hi).min(self.counts.len())
    }

    pub fn sum_between(&self, lo: f64, hi: f64) -> u64 {
        self.counts[self.bins_between(lo, hi)].iter().sum()
    }

    /// Overlap of each bin with `[lo, hi)` (seconds). A lattice delay `d`
    /// stands for the interval `[d - TDC/2, d + TDC/2)`.
    pub fn overlaps(&self, lo: f64, hi: f64) -> Vec<(usize, f64)> {
        let start = (self.start_ps - TDC_BIN_PS / 2) as f64;
        // snap to 1e-3 ps so round-trips through seconds give whole bins
        let ps = |t: f64| (t * 1e15).round() * 1e-3;
        bin_overlaps(start, self.bin_width_ps as f64, self.counts.len(), ps(lo), ps(hi))
    }

    /// Counts integrated over `[lo, hi)` (seconds), bins partly inside the
    /// window weighted by their overlap. Returns (sum, Poisson variance).
    pub fn integrate(&self, lo: f64, hi: f64) -> (f64, f64) {
        let (mut sum, mut var) = (0.0, 0.0);
        for (k, wk) in self.overlaps(lo, hi) {
            let c = self.counts[k] as f64;
            sum += wk * c;
            var += wk * wk * c;
        }
        (sum, var)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_start_ps,count")?;
        for (k, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{}", self.start_ps + k as i64 * self.bin_width_ps, c)?;
        }
        Ok(())
    }
}

fn check_sorted(t: &[i64], name: &str) -> Result<()> {
    if t.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Contract(format!("{name} tags must be sorted")));
    }
    Ok(())
}

/// Times of one channel, in order.
pub fn channel_times(tags: &[TimeTag], channel: Channel) -> Vec<i64> {
    tags.iter().filter(|t| t.channel == channel).map(|t| t.time_ps).collect()
}

/// Every (trigger, signal) pair with `signal − trigger` in `range_ps` adds one count.
pub fn build_histogram(
    idler_ps: &[i64],
    signal_ps: &[i64],
    bin_width_ps: i64,
    range_ps: (i64, i64),
    live_time: f64,
) -> Result<CoincidenceHistogram> {
    let mut h = CoincidenceHistogram::empty(bin_width_ps, range_ps)?;
    accumulate(&mut h, idler_ps, signal_ps)?;
    h.live_time_ps = seconds_to_ps(live_time);
    Ok(h)
}

/// Add coincidences of one more stream segment to `h`.
pub fn accumulate(h: &mut CoincidenceHistogram, idler_ps: &[i64], signal_ps: &[i64]) -> Result<()> {
    check_sorted(idler_ps, "idler")?;
    check_sorted(signal_ps, "signal")?;
    let (lo, hi) = (h.start_ps, h.end_ps());
    let w = h.bin_width_ps;
    let mut first = 0usize;
    for &t in idler_ps {
        while first < signal_ps.len() && signal_ps[first] - t < lo {
            first += 1;
        }
        let mut j = first;
        while j < signal_ps.len() {
            let d = signal_ps[j] - t;
            if d >= hi {
                break;
            }
            h.counts[((d - lo) / w) as usize] += 1;
            j += 1;
        }
    }
    h.n_triggers += idler_ps.len() as u64;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundSide {
    After,
    Before,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceWindows {
    pub t0: f64,
    pub t_p: f64,
    pub t_bg: f64,
    pub background: BackgroundSide,
}

pub const DEFAULT_WINDOW: f64 = 0.8e-9;

impl CoincidenceWindows {
    pub fn at(t0: f64) -> Self {
        CoincidenceWindows {
            t0,
            t_p: DEFAULT_WINDOW,
            t_bg: DEFAULT_WINDOW,
            background: BackgroundSide::After,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_p > 0.0) || !(self.t_bg > 0.0) {
            return Err(Error::validation("windows", "t_p and t_bg must be positive"));
        }
        if !self.t0.is_finite() {
            return Err(Error::validation("windows.t0", "must be finite"));
        }
        Ok(())
    }

    pub fn peak(&self) -> (f64, f64) {
        (self.t0 - 0.5 * self.t_p, self.t0 + 0.5 * self.t_p)
    }

    pub fn background(&self) -> (f64, f64) {
        match self.background {
            BackgroundSide::After => (self.t0 + 0.5 * self.t_p, self.t0 + 0.5 * self.t_p + self.t_bg),
            BackgroundSide::Before => (self.t0 - 0.5 * self.t_p - self.t_bg, self.t0 - 0.5 * self.t_p),
        }
    }
}

/// `(bin, fraction of the bin inside [lo, hi))` for a regular grid of `n`
/// bins of width `w` starting at `start`, all in ps.
pub fn bin_overlaps(start: f64, w: f64, n: usize, lo: f64, hi: f64) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    if hi <= lo || n == 0 {
        return out;
    }
    let first = ((lo - start) / w).floor().max(0.0) as usize;
    let last = (((hi - start) / w).ceil().max(0.0) as usize).min(n);
    for k in first..last {
        let a = start + k as f64 * w;
        let f = ((hi.min(a + w) - lo.max(a)) / w).clamp(0.0, 1.0);
        if f > 0.0 {
            out.push((k, f));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Estimate {
    pub g2: f64,
    pub sigma: f64,
    /// Window integrals; bins on a window edge count by their overlap.
    pub peak_counts: f64,
    pub background_counts: f64,
    pub peak_variance: f64,
    pub background_variance: f64,
    /// Set when the background window is empty and g2 is reported as infinite.
    pub degenerate: bool,
}

pub fn g2_windowed(h: &CoincidenceHistogram, w: &CoincidenceWindows) -> Result<G2Estimate> {
    w.validate()?;
    let (plo, phi) = w.peak();
    let (blo, bhi) = w.background();
    let half = (TDC_BIN_PS / 2) as f64;
    let (a, b) = (h.start_ps as f64 - half, h.end_ps() as f64 - half);
    let inside = |lo: f64, hi: f64| lo * 1e12 >= a - 1e-6 && hi * 1e12 <= b + 1e-6;
    if !inside(plo, phi) || !inside(blo, bhi) {
        return Err(Error::validation("windows", "windows must lie inside the histogram range"));
    }
    let (p, vp) = h.integrate(plo, phi);
    let (b, vb) = h.integrate(blo, bhi);
    if b <= 0.0 {
        return Ok(G2Estimate {
            g2: f64::INFINITY,
            sigma: f64::INFINITY,
            peak_counts: p,
            background_counts: 0.0,
            peak_variance: vp,
            background_variance: 0.0,
            degenerate: true,
        });
    }
    let g2 = (w.t_bg * p) / (w.t_p * b);
    // an empty peak still carries the one-count Poisson floor
    let vp = if p > 0.0 { vp } else { 1.0 };
    let sigma = (w.t_bg / (w.t_p * b)) * (vp + p * p * vb / (b * b)).sqrt();
    Ok(G2Estimate {
        g2,
        sigma,
        peak_counts: p,
        background_counts: b,
        peak_variance: vp,
        background_variance: vb,
        degenerate: false,
    })
}

/// Center of mass of the highest-count window of width `t_p` whose bins lie
/// in `[lo, hi)`; ties go to the earliest window.
pub fn find_t0(h: &CoincidenceHistogram, t_p: f64, lo: f64, hi: f64) -> Option<f64> {
    let r = h.bins_between(lo, hi);
    let n = ((t_p * 1e12) / h.bin_width_ps as f64).round().max(1.0) as usize;
    if r.len() < n {
        return None;
    }
    let c = &h.counts;
    let mut sum: u64 = c[r.start..r.start + n].iter().sum();
    let (mut best, mut best_at) = (sum, r.start);
    for k in r.start + 1..=r.end - n {
        sum = sum + c[k + n - 1] - c[k - 1];
        if sum > best {
            best = sum;
            best_at = k;
        }
    }
    if best == 0 {
        return None;
    }
    let m: f64 = (best_at..best_at + n).map(|k| c[k] as f64 * h.bin_center_ps(k)).sum();
    Some(m / best as f64 * 1e-12)
}

/// (g2_si)² / (g2_s · g2_i); values above 1 violate the classical bound.
pub fn cauchy_schwarz_margin(g2_si: f64, g2_s: f64, g2_i: f64) -> Result<f64> {
    if !(g2_si >= 0.0) || !(g2_s > 0.0) || !(g2_i > 0.0) {
        return Err(Error::validation("g2", "auto-correlations must be positive and cross-correlation non-negative"));
    }
    Ok(g2_si * g2_si / (g2_s * g2_i))
}

/// Nonclassical under the worst-case thermal bound g2_s = g2_i = 2.
pub fn violates_classical_bound(g2_si: f64) -> bool {
    g2_si > 2.0
}

/// Coincidence and accidental rates in the peak window, per gated second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowRates {
    pub r_si: f64,
    pub r_acc: f64,
    pub sigma_si: f64,
    pub sigma_acc: f64,
}

pub fn window_rates(h: &CoincidenceHistogram, w: &CoincidenceWindows) -> Result<WindowRates> {
    let g = g2_windowed(h, w)?;
    let live = h.live_time();
    if !(live > 0.0) {
        return Err(Error::InvalidMeasurement("histogram has no live time".into()));
    }
    let scale = w.t_p / w.t_bg;
    Ok(WindowRates {
        r_si: g.peak_counts / live,
        r_acc: g.background_counts * scale / live,
        sigma_si: g.peak_variance.sqrt() / live,
        sigma_acc: g.background_variance.sqrt() * scale / live,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyEstimate {
    pub eta_m: f64,
    pub sigma: f64,
}

/// Background-subtracted memory-to-bypass coincidence ratio over η_t·f.
pub fn extract_memory_efficiency(
    h_mem: &CoincidenceHistogram,
    w_mem: &CoincidenceWindows,
    h_bypass: &CoincidenceHistogram,
    w_bypass: &CoincidenceWindows,
    eta_t: f64,
    f: f64,
) -> Result<EfficiencyEstimate> {
    if !(eta_t > 0.0 && eta_t <= 1.0) {
        return Err(Error::validation("eta_t", "must lie in (0, 1]"));
    }
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::validation("f", "must lie in (0, 1]"));
    }
    let m = window_rates(h_mem, w_mem)?;
    let b = window_rates(h_bypass, w_bypass)?;
    let den = b.r_si - b.r_acc;
    if !(den > 0.0) {
        return Err(Error::InvalidMeasurement(format!("bypass signal rate {den:e} is not positive")));
    }
    let num = m.r_si - m.r_acc;
    let ratio = num / den;
    let var_num = m.sigma_si.powi(2) + m.sigma_acc.powi(2);
    let var_den = b.sigma_si.powi(2) + b.sigma_acc.powi(2);
    let sigma_ratio = (var_num / (den * den) + ratio * ratio * var_den / (den * den)).sqrt();
    let k = 1.0 / (eta_t * f);
    Ok(EfficiencyEstimate {
        eta_m: k * ratio,
        sigma: k * sigma_ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyBudget {
    pub eta_c: f64,
    pub eta_d: f64,
    pub eta_t: f64,
    pub f: f64,
    pub eta_m: f64,
    pub eta_s: f64,
    /// pairs/s
    pub rate: f64,
    pub r_acc: f64,
    pub r_noise: f64,
}

pub const ETA_C: f64 = 0.086;
pub const ETA_D: f64 = 0.70;
pub const ETA_T: f64 = 0.14;

impl EfficiencyBudget {
    /// Budget with η_s fixed by η_m·η_t·f.
    #[allow(clippy::too_many_arguments)]
    pub fn new(eta_c: f64, eta_d: f64, eta_t: f64, f: f64, eta_m: f64, rate: f64, r_acc: f64, r_noise: f64) -> Result<Self> {
        let b = EfficiencyBudget {
            eta_c,
            eta_d,
            eta_t,
            f,
            eta_m,
            eta_s: eta_m * eta_t * f,
            rate,
            r_acc,
            r_noise,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta_c", self.eta_c),
            ("eta_d", self.eta_d),
            ("eta_t", self.eta_t),
            ("f", self.f),
            ("eta_m", self.eta_m),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(name, "must lie in [0, 1]"));
            }
        }
        for (name, v) in [("rate", self.rate), ("r_acc", self.r_acc), ("r_noise", self.r_noise)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::validation(name, "must be non-negative"));
            }
        }
        if self.eta_s != self.eta_m * self.eta_t * self.f {
            return Err(Error::validation("eta_s", "must equal eta_m * eta_t * f"));
        }
        Ok(())
    }

    /// True coincidence rate without the memory.
    pub fn pair_coincidences(&self) -> f64 {
        0.5 * self.eta_c * self.eta_c * self.eta_d * self.eta_d * self.rate
    }

    pub fn bypass_g2(&self) -> Result<f64> {
        if !(self.r_acc > 0.0) {
            return Err(Error::Undefined("no accidental coincidences".into()));
        }
        Ok((self.pair_coincidences() + self.r_acc) / self.r_acc)
    }
}

pub fn predict_g2_with_memory(b: &EfficiencyBudget) -> Result<f64> {
    b.validate()?;
    if b.eta_s == 0.0 {
        if b.r_noise > 0.0 {
            return Err(Error::Undefined("eta_s = 0 with memory noise present".into()));
        }
        return b.bypass_g2();
    }
    let bg = b.r_acc + b.r_noise / b.eta_s;
    if !(bg > 0.0) {
        return Err(Error::Undefined("no accidental coincidences".into()));
    }
    Ok((b.pair_coincidences() + bg) / bg)
}
