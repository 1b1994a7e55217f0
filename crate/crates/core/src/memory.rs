//! Atomic frequency comb profiles, their linear response and echo bookkeeping.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::spectral::{self, FrequencyGrid, SpectralField, TemporalField};

/// Fibre absorption of 0.1 dB/m over 20 m expressed as optical depth.
pub const FIBRE_DEPTH: f64 = 2.0 * std::f64::consts::LN_10 / 10.0;

pub const REFERENCE_WAVELENGTH: f64 = 1532.5e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToothShape {
    #[default]
    Square,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombSection {
    pub center_offset: f64,
    pub bandwidth: f64,
    pub tooth_spacing: f64,
    #[serde(default = "default_finesse")]
    pub finesse: f64,
    #[serde(default = "default_peak_depth")]
    pub peak_depth: f64,
    #[serde(default)]
    pub background_depth: f64,
    #[serde(default)]
    pub recall_phase: f64,
    #[serde(default)]
    pub tooth_shape: ToothShape,
    /// Optional echo decay constant, s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_time: Option<f64>,
}

fn default_finesse() -> f64 {
    2.0
}

fn default_peak_depth() -> f64 {
    FIBRE_DEPTH
}

impl CombSection {
    pub fn new(center_offset: f64, bandwidth: f64, tooth_spacing: f64) -> Self {
        CombSection {
            center_offset,
            bandwidth,
            tooth_spacing,
            finesse: default_finesse(),
            peak_depth: default_peak_depth(),
            background_depth: 0.0,
            recall_phase: 0.0,
            tooth_shape: ToothShape::Square,
            decay_time: None,
        }
    }

    /// Section whose first echo appears after `delay`.
    pub fn for_delay(center_offset: f64, bandwidth: f64, delay: f64) -> Self {
        Self::new(center_offset, bandwidth, 1.0 / delay)
    }

    pub fn lo(&self) -> f64 {
        self.center_offset - 0.5 * self.bandwidth
    }

    pub fn hi(&self) -> f64 {
        self.center_offset + 0.5 * self.bandwidth
    }

    pub fn storage_time(&self) -> f64 {
        1.0 / self.tooth_spacing
    }

    pub fn tooth_count(&self) -> usize {
        (self.bandwidth / self.tooth_spacing).round() as usize
    }

    pub fn contains(&self, nu: f64) -> bool {
        nu >= self.lo() && nu < self.hi()
    }

    /// Multiplicative echo survival after `t`.
    pub fn decay(&self, t: f64) -> f64 {
        match self.decay_time {
            Some(tau) if tau > 0.0 => (-t / tau).exp(),
            _ => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.center_offset,
            self.bandwidth,
            self.tooth_spacing,
            self.finesse,
            self.peak_depth,
            self.background_depth,
            self.recall_phase,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::validation("sections", "non-finite value"));
        }
        if !(self.tooth_spacing > 0.0) {
            return Err(Error::validation("tooth_spacing", "must be positive"));
        }
        // tolerate float noise when bandwidth is an exact multiple of the spacing
        if self.bandwidth < self.tooth_spacing * (1.0 - 1e-9) {
            return Err(Error::validation("bandwidth", "must be at least one tooth spacing"));
        }
        if self.finesse < 1.0 {
            return Err(Error::validation("finesse", "must be >= 1"));
        }
        if self.background_depth < 0.0 || self.peak_depth < self.background_depth {
            return Err(Error::validation("peak_depth", "need peak_depth >= background_depth >= 0"));
        }
        if let Some(tau) = self.decay_time {
            if !(tau > 0.0) {
                return Err(Error::validation("decay_time", "must be positive"));
            }
        }
        Ok(())
    }

    /// Tooth-lattice coordinate in units of the spacing. Teeth sit at integers;
    /// the lattice is anchored at zero offset and shifted by the recall phase.
    fn lattice(&self, nu: f64) -> f64 {
        nu / self.tooth_spacing - self.recall_phase / (2.0 * PI)
    }

    /// Comb depth at `nu` ignoring the section edges. Square teeth have
    /// raised-cosine flanks `edge` Hz wide.
    pub fn tooth_depth(&self, nu: f64, edge: f64) -> f64 {
        let x = self.lattice(nu);
        let r = (x - x.round()).abs() * self.tooth_spacing;
        let contrast = self.peak_depth - self.background_depth;
        match self.tooth_shape {
            ToothShape::Square => {
                let half = 0.5 * self.tooth_spacing / self.finesse;
                let w = edge.min(half).min(self.tooth_spacing - 2.0 * half);
                if w <= 0.0 {
                    return if r < half { self.peak_depth } else { self.background_depth };
                }
                self.background_depth + contrast * raised_step(half - r, w)
            }
            ToothShape::Gaussian => {
                let sigma = self.tooth_spacing / (self.finesse * 2.0 * (2.0 * 2f64.ln()).sqrt());
                let r = (x - x.round()) * self.tooth_spacing;
                let s: f64 = (-3..=3)
                    .map(|j| {
                        let u = r - j as f64 * self.tooth_spacing;
                        (-u * u / (2.0 * sigma * sigma)).exp()
                    })
                    .sum();
                self.background_depth + contrast * s.min(1.0)
            }
        }
    }

    /// Weight of this section at `nu`: 1 inside, 0 outside, raised-cosine
    /// across each edge.
    pub fn window(&self, nu: f64, edge: f64) -> f64 {
        let inside = (nu - self.lo()).min(self.hi() - nu);
        if edge <= 0.0 {
            return if inside > 0.0 || nu == self.lo() { 1.0 } else { 0.0 };
        }
        raised_step(inside, edge)
    }

    pub fn depth_at(&self, nu: f64) -> f64 {
        self.tooth_depth(nu, 0.0)
    }
}

/// 0 for `x <= -w/2`, 1 for `x >= w/2`, raised cosine in between.
fn raised_step(x: f64, w: f64) -> f64 {
    if x >= 0.5 * w {
        1.0
    } else if x <= -0.5 * w {
        0.0
    } else {
        0.5 * (1.0 - (PI * (x + 0.5 * w) / w).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombProfile {
    pub sections: Vec<CombSection>,
    pub out_of_band_depth: f64,
    #[serde(default = "default_reference")]
    pub reference_wavelength: f64,
    /// Width of the flanks of teeth and section edges, Hz.
    #[serde(default = "default_edge")]
    pub edge_width: f64,
}

fn default_reference() -> f64 {
    REFERENCE_WAVELENGTH
}

/// Tooth and section flanks are rounded over roughly a homogeneous linewidth.
pub const DEFAULT_EDGE_WIDTH: f64 = 1e6;

fn default_edge() -> f64 {
    DEFAULT_EDGE_WIDTH
}

impl CombProfile {
    pub fn validate(&self) -> Result<()> {
        for s in &self.sections {
            s.validate()?;
        }
        if !(self.out_of_band_depth >= 0.0) || !self.out_of_band_depth.is_finite() {
            return Err(Error::validation("out_of_band_depth", "must be finite and non-negative"));
        }
        if !(self.reference_wavelength > 0.0) {
            return Err(Error::validation("reference_wavelength", "must be positive"));
        }
        if !(self.edge_width >= 0.0) || !self.edge_width.is_finite() {
            return Err(Error::validation("edge_width", "must be finite and non-negative"));
        }
        for i in 0..self.sections.len() {
            for j in i + 1..self.sections.len() {
                let (a, b) = (&self.sections[i], &self.sections[j]);
                if a.lo() < b.hi() && b.lo() < a.hi() {
                    return Err(Error::Overlap(i, j));
                }
            }
        }
        Ok(())
    }

    pub fn section_at(&self, nu: f64) -> Option<usize> {
        self.sections.iter().position(|s| s.contains(nu))
    }

    pub fn depth_at(&self, nu: f64) -> f64 {
        let w = self.edge_width;
        let mut d = self.out_of_band_depth;
        for s in &self.sections {
            if nu < s.lo() - w || nu > s.hi() + w {
                continue;
            }
            let k = s.window(nu, w);
            if k > 0.0 {
                d += k * (s.tooth_depth(nu, w) - self.out_of_band_depth);
            }
        }
        d.max(0.0)
    }

    pub fn depth_on(&self, grid: &FrequencyGrid) -> Vec<f64> {
        (0..grid.n_points).map(|k| self.depth_at(grid.frequency(k))).collect()
    }

    pub fn total_bandwidth(&self) -> f64 {
        self.sections.iter().map(|s| s.bandwidth).sum()
    }

    pub fn max_storage_time(&self) -> f64 {
        self.sections.iter().map(|s| s.storage_time()).fold(0.0, f64::max)
    }

    pub fn min_storage_time(&self) -> f64 {
        self.sections.iter().map(|s| s.storage_time()).fold(f64::INFINITY, f64::min)
    }

    pub fn narrowest_spacing(&self) -> Option<f64> {
        self.sections.iter().map(|s| s.tooth_spacing).reduce(f64::min)
    }

    /// Total comb bandwidth times the longest storage time.
    pub fn time_bandwidth_product(&self) -> f64 {
        let b = self.total_bandwidth();
        let dmin = self.narrowest_spacing().unwrap_or(f64::INFINITY);
        b / dmin
    }
}

pub fn build_comb(sections: Vec<CombSection>, out_of_band_depth: f64) -> Result<CombProfile> {
    let p = CombProfile {
        sections,
        out_of_band_depth,
        reference_wavelength: REFERENCE_WAVELENGTH,
        edge_width: DEFAULT_EDGE_WIDTH,
    };
    p.validate()?;
    Ok(p)
}

/// `H(ν) = exp(-d(ν)/2 + iφ(ν))` sampled on `grid`.
pub fn transfer_function(profile: &CombProfile, grid: &FrequencyGrid) -> Result<Vec<Complex64>> {
    grid.validate()?;
    profile.validate()?;
    let (lo, hi) = (grid.lowest(), grid.highest());
    for (i, s) in profile.sections.iter().enumerate() {
        if s.lo() < lo || s.hi() > hi {
            return Err(Error::Config(format!(
                "section {i} [{:e}, {:e}) lies outside grid [{lo:e}, {hi:e})",
                s.lo(),
                s.hi()
            )));
        }
    }
    let d = profile.depth_on(grid);
    spectral::transfer_from_depth(&d, grid, profile.narrowest_spacing())
}

pub fn apply_memory(input: &SpectralField, profile: &CombProfile) -> Result<TemporalField> {
    let h = transfer_function(profile, &input.grid)?;
    spectral::filter(input, &h)
}

pub fn apply_memory_temporal(input: &TemporalField, profile: &CombProfile) -> Result<TemporalField> {
    let f = spectral::to_frequency_domain(input)?;
    let mut out = apply_memory(&f, profile)?;
    out.t0 = input.t0;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Echo {
    pub section: usize,
    pub expected_delay: f64,
    pub measured_delay: f64,
    pub efficiency: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoReport {
    pub echoes: Vec<Echo>,
    /// Fraction of the input energy leaving before half the shortest storage time.
    pub transmitted: f64,
    /// Remainder after transmission and first echoes.
    pub absorbed: f64,
}

/// First-echo integration window, three inverse bandwidths wide.
pub fn echo_window(s: &CombSection) -> (f64, f64) {
    let d = s.storage_time();
    let h = 1.5 / s.bandwidth;
    (d - h, d + h)
}

fn fwhm_around(out: &TemporalField, t_peak: f64) -> f64 {
    let i0 = ((t_peak - out.t0) / out.dt).round() as isize;
    let n = out.amplitude.len() as isize;
    let p = |i: isize| out.amplitude[i.rem_euclid(n) as usize].norm_sqr();
    let half = 0.5 * p(i0);
    let mut l = i0;
    while l > i0 - n / 2 && p(l - 1) > half {
        l -= 1;
    }
    let mut r = i0;
    while r < i0 + n / 2 && p(r + 1) > half {
        r += 1;
    }
    let frac = |a: f64, b: f64| if a == b { 0.0 } else { (a - half) / (a - b) };
    let left = l as f64 - frac(p(l), p(l - 1));
    let right = r as f64 + frac(p(r), p(r + 1));
    (right - left) * out.dt
}

/// Window energies of the first echo of every section, normalized by the
/// input energy inside that section's band.
pub fn echo_metrics(input: &SpectralField, output: &TemporalField, profile: &CombProfile) -> Result<EchoReport> {
    profile.validate()?;
    let windows: Vec<(f64, f64)> = profile.sections.iter().map(echo_window).collect();
    let mut clashes = Vec::new();
    for i in 0..windows.len() {
        for j in i + 1..windows.len() {
            if windows[i].0 < windows[j].1 && windows[j].0 < windows[i].1 {
                clashes.push((i, j));
            }
        }
    }
    if !clashes.is_empty() {
        return Err(Error::Ambiguity(clashes));
    }
    let total_in = input.energy();
    if total_in <= 0.0 {
        return Ok(EchoReport {
            echoes: Vec::new(),
            transmitted: 0.0,
            absorbed: 0.0,
        });
    }
    let mut echoes = Vec::new();
    let mut recalled = 0.0;
    for (i, s) in profile.sections.iter().enumerate() {
        let band: f64 = input
            .amplitude
            .iter()
            .enumerate()
            .filter(|(k, _)| s.contains(input.grid.frequency(*k)))
            .map(|(_, a)| a.norm_sqr())
            .sum();
        let (lo, hi) = windows[i];
        let e = output.energy_between(lo, hi) * s.decay(s.storage_time());
        let eff = if band > 0.0 { e / band } else { 0.0 };
        let t_peak = output.argmax_between(lo, hi).unwrap_or(s.storage_time());
        recalled += e;
        echoes.push(Echo {
            section: i,
            expected_delay: s.storage_time(),
            measured_delay: t_peak,
            efficiency: eff,
            width: fwhm_around(output, t_peak),
        });
    }
    let split = if profile.sections.is_empty() {
        f64::INFINITY
    } else {
        0.5 * profile.min_storage_time()
    };
    let transmitted = output.energy_between(f64::NEG_INFINITY, split) / total_in;
    let absorbed = (1.0 - transmitted - recalled / total_in).max(0.0);
    Ok(EchoReport {
        echoes,
        transmitted,
        absorbed,
    })
}

/// Fate probabilities for a single photon inside one comb section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionResponse {
    pub section: usize,
    pub lo: f64,
    pub hi: f64,
    pub expected_delay: f64,
    pub delay: f64,
    pub recall: f64,
    pub transmitted: f64,
    pub absorbed: f64,
    pub phase: f64,
}

/// Probe every section with a flat, band-limited input through the full
/// profile and record transmitted, first-echo and absorbed fractions.
pub fn section_response(profile: &CombProfile, grid: &FrequencyGrid) -> Result<Vec<SectionResponse>> {
    let h = transfer_function(profile, grid)?;
    profile
        .sections
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let input = SpectralField::flat_band(*grid, s.lo(), s.hi())?;
            let out = spectral::filter(&input, &h)?;
            let d = s.storage_time();
            let (lo, hi) = echo_window(s);
            let transmitted = out.energy_between(f64::NEG_INFINITY, 0.5 * d);
            let window = out.energy_between(lo, hi);
            let recall = window * s.decay(d);
            let delay = out.argmax_between(lo, hi).unwrap_or(d);
            Ok(SectionResponse {
                section: i,
                lo: s.lo(),
                hi: s.hi(),
                expected_delay: d,
                delay,
                recall,
                transmitted,
                absorbed: (1.0 - transmitted - recall).max(0.0),
                phase: s.recall_phase,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeCombination {
    #[default]
    Incoherent,
    Coherent,
}

/// One output time bin formed by every section recalled at (nearly) the same delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalMode {
    pub delay: f64,
    pub sections: Vec<usize>,
    /// Recall probability of a photon spread evenly over the grouped sections.
    pub efficiency: f64,
}

/// Group sections by recall delay. Incoherent grouping adds efficiencies;
/// coherent grouping adds amplitudes with the sections' recall phases.
pub fn temporal_modes(responses: &[SectionResponse], tolerance: f64, mode: ModeCombination) -> Vec<TemporalMode> {
    let mut order: Vec<&SectionResponse> = responses.iter().collect();
    order.sort_by(|a, b| a.delay.total_cmp(&b.delay));
    let mut groups: Vec<Vec<&SectionResponse>> = Vec::new();
    for r in order {
        match groups.last_mut() {
            Some(g) if (r.delay - g[0].delay).abs() <= tolerance => g.push(r),
            _ => groups.push(vec![r]),
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let n = g.len() as f64;
            let efficiency = match mode {
                ModeCombination::Incoherent => g.iter().map(|r| r.recall).sum::<f64>() / n,
                ModeCombination::Coherent => {
                    let a: Complex64 = g
                        .iter()
                        .map(|r| Complex64::from_polar(r.recall.sqrt(), r.phase))
                        .sum();
                    a.norm_sqr() / n
                }
            };
            TemporalMode {
                delay: g.iter().map(|r| r.delay).sum::<f64>() / n,
                sections: g.iter().map(|r| r.section).collect(),
                efficiency,
            }
        })
        .collect()
}

/// Placement of planned sections on the frequency axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeLayout {
    /// Lower edge of the first section, Hz.
    pub start: f64,
    /// Sections per contiguous group.
    pub per_group: usize,
    /// Edge-to-edge gap between groups, Hz.
    pub group_gap: f64,
}

/// Assign each spectral mode a comb section recalling at its target delay.
pub fn plan_manipulation(
    n_spectral: usize,
    per_mode_bandwidth: f64,
    target_delays: &[f64],
    phases: &[f64],
    layout: &ModeLayout,
    grid: &FrequencyGrid,
) -> Result<Vec<CombSection>> {
    if n_spectral == 0 {
        return Err(Error::validation("n_spectral", "need at least one mode"));
    }
    if target_delays.len() != n_spectral {
        return Err(Error::validation("target_delays", "need one delay per spectral mode"));
    }
    if !phases.is_empty() && phases.len() != n_spectral {
        return Err(Error::validation("phases", "need one phase per spectral mode or none"));
    }
    if !(per_mode_bandwidth > 0.0) {
        return Err(Error::validation("per_mode_bandwidth", "must be positive"));
    }
    let pulse = 1.0 / per_mode_bandwidth;
    let per_group = layout.per_group.max(1);
    let mut out = Vec::with_capacity(n_spectral);
    for (i, &delay) in target_delays.iter().enumerate() {
        if !(delay >= 2.0 * pulse) {
            return Err(Error::Unresolvable { delay, pulse });
        }
        let spacing = 1.0 / delay;
        let samples = spacing / grid.spacing();
        if samples < spectral::MIN_SAMPLES_PER_TOOTH {
            return Err(Error::Resolution {
                samples,
                required: spectral::MIN_SAMPLES_PER_TOOTH,
            });
        }
        let group = i / per_group;
        let lo = layout.start + i as f64 * per_mode_bandwidth + group as f64 * layout.group_gap;
        let mut s = CombSection::new(lo + 0.5 * per_mode_bandwidth, per_mode_bandwidth, spacing);
        s.recall_phase = phases.get(i).copied().unwrap_or(0.0);
        out.push(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpingConfig {
    pub zeeman_splitting: f64,
    /// Gaussian FWHM of the splitting distribution, Hz.
    pub zeeman_width: f64,
    pub shelving_branching: f64,
    pub pump_cycles: u32,
    pub transfer_probability: f64,
    /// (lifetime s, weight) pairs for relaxation out of the shelf.
    pub shelf_lifetimes: Vec<(f64, f64)>,
    /// Time from the end of pumping to the middle of the measurement window, s.
    pub hold_time: f64,
}

impl Default for PumpingConfig {
    fn default() -> Self {
        PumpingConfig {
            zeeman_splitting: 4e9,
            zeeman_width: 2e9,
            shelving_branching: 0.5,
            pump_cycles: 500,
            transfer_probability: 0.02,
            shelf_lifetimes: vec![(1.3, 0.2), (26.0, 0.8)],
            hold_time: 0.3 + 0.35,
        }
    }
}

impl PumpingConfig {
    pub fn validate(&self) -> Result<()> {
        let p = [self.shelving_branching, self.transfer_probability];
        if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::validation("pumping", "probabilities must lie in [0, 1]"));
        }
        if self.zeeman_splitting < 0.0 || self.zeeman_width < 0.0 || self.hold_time < 0.0 {
            return Err(Error::validation("pumping", "splitting, width and hold time must be non-negative"));
        }
        if self.shelf_lifetimes.iter().any(|(t, w)| !(*t > 0.0) || *w < 0.0) {
            return Err(Error::validation("shelf_lifetimes", "lifetimes must be positive, weights non-negative"));
        }
        Ok(())
    }

    /// Fraction of the shelved population still shelved after `hold_time`.
    pub fn shelf_survival(&self) -> f64 {
        let wsum: f64 = self.shelf_lifetimes.iter().map(|(_, w)| w).sum();
        if wsum <= 0.0 {
            return 1.0;
        }
        self.shelf_lifetimes
            .iter()
            .map(|(t, w)| w * (-self.hold_time / t).exp())
            .sum::<f64>()
            / wsum
    }

    /// Probability an ion whose only pumped transition is addressed every
    /// cycle is still unpumped at the end.
    pub fn residual(&self) -> f64 {
        (1.0 - self.transfer_probability * self.shelving_branching).powi(self.pump_cycles as i32)
    }
}

// Gauss-Hermite-like quadrature for the splitting distribution.
fn splitting_nodes(cfg: &PumpingConfig) -> Vec<(f64, f64)> {
    let sigma = cfg.zeeman_width / (2.0 * (2.0 * 2f64.ln()).sqrt());
    if sigma <= 0.0 {
        return vec![(cfg.zeeman_splitting, 1.0)];
    }
    let m = 41;
    let nodes: Vec<(f64, f64)> = (0..m)
        .map(|j| {
            let x = -4.0 + 8.0 * j as f64 / (m - 1) as f64;
            ((cfg.zeeman_splitting + sigma * x).abs(), (-0.5 * x * x).exp())
        })
        .collect();
    let w: f64 = nodes.iter().map(|n| n.1).sum();
    nodes.into_iter().map(|(z, wi)| (z, wi / w)).collect()
}

/// Achieved comb after frequency-selective pumping into a Zeeman shelf.
///
/// Every ion absorbs at one of two frequencies separated by the Zeeman
/// splitting, depending on which sublevel it occupies. Pumping a trough moves
/// ions to their partner frequency; if that partner is itself a trough of some
/// section the two pumps balance and the ion stays half in each. Shelf
/// relaxation during the hold time then pulls every ion back toward the
/// thermal half/half split.
pub fn simulate_optical_pumping(target: &CombProfile, cfg: &PumpingConfig) -> Result<CombProfile> {
    target.validate()?;
    cfg.validate()?;
    let line = target.out_of_band_depth;
    let mut out = target.clone();
    if cfg.pump_cycles == 0 || cfg.transfer_probability == 0.0 || cfg.shelving_branching == 0.0 {
        for s in &mut out.sections {
            s.peak_depth = line;
            s.background_depth = line;
        }
        return Ok(out);
    }
    let eps = cfg.residual();
    let keep = cfg.shelf_survival();
    let nodes = splitting_nodes(cfg);
    let relax = |p: f64| 0.5 + (p - 0.5) * keep;
    let pumped_fraction = |nu: f64| match target.section_at(nu) {
        Some(i) => 1.0 - 1.0 / target.sections[i].finesse,
        None => 0.0,
    };
    let samples = 256;
    for (i, s) in target.sections.iter().enumerate() {
        let (mut trough, mut tooth) = (0.0, 0.0);
        for k in 0..samples {
            let nu = s.lo() + (k as f64 + 0.5) * s.bandwidth / samples as f64;
            let (mut pt, mut pp) = (0.0, 0.0);
            for &(z, w) in &nodes {
                for partner in [nu + z, nu - z] {
                    let pi = pumped_fraction(partner);
                    // occupancy of the ν level when ν is pumped / not pumped
                    let at_trough = pi * 0.5 + (1.0 - pi) * 0.5 * eps;
                    let at_tooth = pi * (1.0 - 0.5 * eps) + (1.0 - pi) * 0.5;
                    pt += w * relax(at_trough);
                    pp += w * relax(at_tooth);
                }
            }
            trough += pt;
            tooth += pp;
        }
        let n = samples as f64;
        let d0 = (line * trough / n).max(s.background_depth);
        let dp = (line * tooth / n).max(d0);
        out.sections[i].background_depth = d0;
        out.sections[i].peak_depth = dp;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(b: f64, delta: f64) -> CombProfile {
        build_comb(vec![CombSection::new(0.0, b, delta)], FIBRE_DEPTH).unwrap()
    }

    #[test]
    fn fibre_depth_value() {
        assert!((FIBRE_DEPTH - 0.4605).abs() < 1e-4);
    }

    #[test]
    fn tooth_count_8ghz() {
        assert_eq!(CombSection::new(0.0, 8e9, 200e6).tooth_count(), 40);
    }

    #[test]
    fn square_duty_cycle() {
        let s = CombSection::new(0.0, 8e9, 200e6);
        let n = 100_000;
        let on = (0..n)
            .filter(|k| s.depth_at(s.lo() + s.bandwidth * (*k as f64 + 0.5) / n as f64) > 0.0)
            .count();
        assert!((on as f64 / n as f64 - 0.5).abs() < 1e-3);
    }

    #[test]
    fn phase_shifts_lattice() {
        let mut s = CombSection::new(0.0, 8e9, 200e6);
        assert_eq!(s.depth_at(0.0), s.peak_depth);
        s.recall_phase = PI;
        assert_eq!(s.depth_at(0.0), s.background_depth);
        assert_eq!(s.depth_at(100e6 + 1.0), s.peak_depth);
    }

    #[test]
    fn overlap_is_rejected() {
        let a = CombSection::new(0.0, 8e9, 200e6);
        let b = CombSection::new(7e9, 8e9, 200e6);
        assert_eq!(build_comb(vec![a, b], 0.4).unwrap_err(), Error::Overlap(0, 1));
    }

    #[test]
    fn narrow_bandwidth_rejected() {
        let s = CombSection::new(0.0, 100e6, 200e6);
        assert!(build_comb(vec![s], 0.4).is_err());
    }

    #[test]
    fn double_comb_is_16ghz() {
        let a = CombSection::new(-14e9, 8e9, 200e6);
        let b = CombSection::new(14e9, 8e9, 200e6);
        assert!((b.lo() - a.hi() - 20e9).abs() < 1.0);
        let p = build_comb(vec![a, b], FIBRE_DEPTH).unwrap();
        assert_eq!(p.total_bandwidth(), 16e9);
    }

    #[test]
    fn gaussian_teeth_bounded() {
        let mut s = CombSection::new(0.0, 2e9, 200e6);
        s.tooth_shape = ToothShape::Gaussian;
        s.finesse = 1.0;
        for k in 0..1000 {
            let d = s.depth_at(s.lo() + k as f64 * 2e6);
            assert!(d >= 0.0 && d <= s.peak_depth + 1e-12);
        }
    }

    #[test]
    fn transfer_rejects_out_of_grid() {
        let g = FrequencyGrid::new(0.0, 4e9, 1 << 12).unwrap();
        assert!(matches!(transfer_function(&one(8e9, 200e6), &g), Err(Error::Config(_))));
    }

    #[test]
    fn zero_depth_is_identity() {
        let g = FrequencyGrid::new(0.0, 16e9, 1 << 12).unwrap();
        let mut p = one(4e9, 200e6);
        p.out_of_band_depth = 0.0;
        p.sections[0].peak_depth = 0.0;
        let h = transfer_function(&p, &g).unwrap();
        assert!(h.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn coincident_windows_are_ambiguous() {
        let g = FrequencyGrid::new(0.0, 32e9, 1 << 14).unwrap();
        let p = build_comb(
            vec![CombSection::new(-5e9, 4e9, 200e6), CombSection::new(5e9, 4e9, 200e6)],
            0.0,
        )
        .unwrap();
        let input = SpectralField::flat_band(g, -8e9, 8e9).unwrap();
        let out = apply_memory(&input, &p).unwrap();
        assert_eq!(echo_metrics(&input, &out, &p).unwrap_err(), Error::Ambiguity(vec![(0, 1)]));
    }

    #[test]
    fn plan_single_mode() {
        let g = FrequencyGrid::default();
        let layout = ModeLayout {
            start: 0.0,
            per_group: 1,
            group_gap: 0.0,
        };
        let s = plan_manipulation(1, 2e9, &[7e-9], &[], &layout, &g).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s[0].tooth_spacing - 1.0 / 7e-9).abs() < 1e-3);
    }

    #[test]
    fn plan_rejects_short_delay() {
        let g = FrequencyGrid::default();
        let layout = ModeLayout {
            start: 0.0,
            per_group: 1,
            group_gap: 0.0,
        };
        let err = plan_manipulation(1, 2e9, &[0.9e-9], &[], &layout, &g).unwrap_err();
        assert!(matches!(err, Error::Unresolvable { .. }));
    }

    #[test]
    fn unpumped_is_flat() {
        let cfg = PumpingConfig {
            pump_cycles: 0,
            ..Default::default()
        };
        let p = simulate_optical_pumping(&one(8e9, 200e6), &cfg).unwrap();
        let s = &p.sections[0];
        assert_eq!(s.peak_depth, FIBRE_DEPTH);
        assert_eq!(s.background_depth, FIBRE_DEPTH);
    }

    #[test]
    fn narrow_section_hits_pumping_floor() {
        let cfg = PumpingConfig {
            zeeman_width: 0.0,
            ..Default::default()
        };
        let p = simulate_optical_pumping(&one(0.5e9, 50e6), &cfg).unwrap();
        let floor = FIBRE_DEPTH * (1.0 - cfg.shelf_survival() * (1.0 - cfg.residual()));
        assert!((p.sections[0].background_depth - floor).abs() < 1e-12);
        assert!((p.sections[0].peak_depth - FIBRE_DEPTH).abs() < 1e-12);
    }
}
