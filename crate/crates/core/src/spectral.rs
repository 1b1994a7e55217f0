//! Frequency/time grids, unitary transforms and minimum-phase reconstruction.
//!
//! Offsets on a grid of `N` points are `ν_k = (k - N/2)·df` with `df = span/N`,
//! and the conjugate time axis is `t_n = (n - N/2)·dt` with `dt = 1/span`.
//! The time-domain envelope is `E(t) = N^{-1/2} Σ_k A(ν_k) exp(+i2πν_k t)`.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Minimum number of grid samples per comb period.
pub const MIN_SAMPLES_PER_TOOTH: f64 = 8.0;

/// Fraction of the grid on each side that is tapered to baseline before the
/// Hilbert transform.
pub const EDGE_TAPER: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    /// Hz, relative to the reference wavelength.
    pub center_frequency: f64,
    pub span: f64,
    pub n_points: usize,
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        FrequencyGrid {
            center_frequency: 0.0,
            span: 64e9,
            n_points: 1 << 18,
        }
    }
}

impl FrequencyGrid {
    pub fn new(center_frequency: f64, span: f64, n_points: usize) -> Result<Self> {
        let g = FrequencyGrid {
            center_frequency,
            span,
            n_points,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.span > 0.0) || !self.span.is_finite() {
            return Err(Error::Config(format!("grid span must be positive, got {}", self.span)));
        }
        if self.n_points < 4 || !self.n_points.is_power_of_two() {
            return Err(Error::Config(format!(
                "grid length must be a power of two >= 4, got {}",
                self.n_points
            )));
        }
        if !self.center_frequency.is_finite() {
            return Err(Error::Config("grid center must be finite".into()));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        self.span / self.n_points as f64
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.span
    }

    /// Offset of bin `k` from the grid center.
    pub fn offset(&self, k: usize) -> f64 {
        (k as f64 - (self.n_points / 2) as f64) * self.spacing()
    }

    /// Absolute frequency of bin `k` in the reference frame.
    pub fn frequency(&self, k: usize) -> f64 {
        self.center_frequency + self.offset(k)
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.frequency(k)).collect()
    }

    pub fn lowest(&self) -> f64 {
        self.frequency(0)
    }

    /// One past the highest bin.
    pub fn highest(&self) -> f64 {
        self.frequency(0) + self.span
    }

    pub fn t0(&self) -> f64 {
        -((self.n_points / 2) as f64) * self.dt()
    }

    pub fn times(&self) -> Vec<f64> {
        let (t0, dt) = (self.t0(), self.dt());
        (0..self.n_points).map(|n| t0 + n as f64 * dt).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralField {
    pub grid: FrequencyGrid,
    pub amplitude: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalField {
    pub t0: f64,
    pub dt: f64,
    /// Carrier the envelope is referenced to, Hz.
    pub center_frequency: f64,
    pub amplitude: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(grid: FrequencyGrid, amplitude: Vec<Complex64>) -> Result<Self> {
        grid.validate()?;
        if amplitude.len() != grid.n_points {
            return Err(Error::Config(format!(
                "amplitude length {} does not match grid length {}",
                amplitude.len(),
                grid.n_points
            )));
        }
        Ok(SpectralField { grid, amplitude })
    }

    pub fn zeros(grid: FrequencyGrid) -> Self {
        SpectralField {
            grid,
            amplitude: vec![Complex64::new(0.0, 0.0); grid.n_points],
        }
    }

    /// Unit-norm flat spectrum over `[lo, hi)`, zero elsewhere.
    pub fn flat_band(grid: FrequencyGrid, lo: f64, hi: f64) -> Result<Self> {
        grid.validate()?;
        let mut amp = vec![Complex64::new(0.0, 0.0); grid.n_points];
        let mut n = 0usize;
        for (k, a) in amp.iter_mut().enumerate() {
            let f = grid.frequency(k);
            if f >= lo && f < hi {
                *a = Complex64::new(1.0, 0.0);
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Config(format!("band [{lo:e}, {hi:e}) holds no grid points")));
        }
        let s = 1.0 / (n as f64).sqrt();
        amp.iter_mut().for_each(|a| *a *= s);
        Ok(SpectralField { grid, amplitude: amp })
    }

    pub fn energy(&self) -> f64 {
        energy(&self.amplitude)
    }

    pub fn norm(&self) -> f64 {
        self.energy().sqrt()
    }
}

impl TemporalField {
    pub fn energy(&self) -> f64 {
        energy(&self.amplitude)
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.amplitude.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Energy of samples with `lo <= t < hi`.
    pub fn energy_between(&self, lo: f64, hi: f64) -> f64 {
        self.amplitude
            .iter()
            .enumerate()
            .filter(|(n, _)| {
                let t = self.time(*n);
                t >= lo && t < hi
            })
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    /// Time of the most intense sample with `lo < t < hi`.
    pub fn argmax_between(&self, lo: f64, hi: f64) -> Option<f64> {
        let mut best: Option<(f64, f64)> = None;
        for (n, a) in self.amplitude.iter().enumerate() {
            let t = self.time(n);
            if t <= lo || t >= hi {
                continue;
            }
            let p = a.norm_sqr();
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((t, p));
            }
        }
        best.map(|(t, _)| t)
    }

    pub fn grid(&self) -> Result<FrequencyGrid> {
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("time step must be positive, got {}", self.dt)));
        }
        FrequencyGrid::new(self.center_frequency, 1.0 / self.dt, self.amplitude.len())
    }
}

pub fn energy(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

fn alternate_sign(a: &mut [Complex64]) {
    for z in a.iter_mut().skip(1).step_by(2) {
        *z = -*z;
    }
}

// Global phase picked up by the centered indexing, exp(iπN/2).
fn centering_phase(n: usize) -> Complex64 {
    Complex64::from_polar(1.0, PI * (n % 4) as f64 / 2.0)
}

/// Inverse transform with the centered, unitary convention.
pub fn to_time_domain(f: &SpectralField) -> Result<TemporalField> {
    f.grid.validate()?;
    let n = f.grid.n_points;
    if f.amplitude.len() != n {
        return Err(Error::Config("amplitude length does not match grid".into()));
    }
    let mut buf = f.amplitude.clone();
    alternate_sign(&mut buf);
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    alternate_sign(&mut buf);
    let s = centering_phase(n) / (n as f64).sqrt();
    buf.iter_mut().for_each(|z| *z *= s);
    Ok(TemporalField {
        t0: f.grid.t0(),
        dt: f.grid.dt(),
        center_frequency: f.grid.center_frequency,
        amplitude: buf,
    })
}

/// Forward transform; inverse of [`to_time_domain`].
pub fn to_frequency_domain(t: &TemporalField) -> Result<SpectralField> {
    let grid = t.grid()?;
    let n = grid.n_points;
    let mut buf = t.amplitude.clone();
    alternate_sign(&mut buf);
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    alternate_sign(&mut buf);
    let s = centering_phase(n).conj() / (n as f64).sqrt();
    buf.iter_mut().for_each(|z| *z *= s);
    // fields not starting at the centered origin carry a linear phase
    let shift = t.t0 - grid.t0();
    if shift != 0.0 {
        for (k, z) in buf.iter_mut().enumerate() {
            *z *= Complex64::from_polar(1.0, -2.0 * PI * grid.offset(k) * shift);
        }
    }
    Ok(SpectralField { grid, amplitude: buf })
}

fn taper_to_baseline(d: &[f64]) -> Vec<f64> {
    let n = d.len();
    let baseline = 0.5 * (d[0] + d[n - 1]);
    let w = ((n as f64) * EDGE_TAPER).floor() as usize;
    let mut out = d.to_vec();
    if w == 0 {
        return out;
    }
    for i in 0..w {
        // 0 at the outermost sample, approaching 1 at the inner edge of the taper
        let x = i as f64 / w as f64;
        let c = 0.5 * (1.0 - (PI * x).cos());
        out[i] = baseline + (d[i] - baseline) * c;
        out[n - 1 - i] = baseline + (d[n - 1 - i] - baseline) * c;
    }
    out
}

/// Minimum-phase dispersion conjugate to the amplitude attenuation `exp(-d/2)`.
///
/// `narrowest` is the smallest comb period on the grid (if any); grids with
/// fewer than [`MIN_SAMPLES_PER_TOOTH`] samples across it are rejected.
pub fn kramers_kronig_phase(d: &[f64], grid: &FrequencyGrid, narrowest: Option<f64>) -> Result<Vec<f64>> {
    grid.validate()?;
    let n = grid.n_points;
    if d.len() != n {
        return Err(Error::Config(format!("depth length {} does not match grid {}", d.len(), n)));
    }
    if d.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Config("optical depth must be finite and non-negative".into()));
    }
    if let Some(w) = narrowest {
        let samples = w / grid.spacing();
        if samples < MIN_SAMPLES_PER_TOOTH {
            return Err(Error::Resolution {
                samples,
                required: MIN_SAMPLES_PER_TOOTH,
            });
        }
    }

    let tapered = taper_to_baseline(d);
    let mut c: Vec<Complex64> = tapered.iter().map(|x| Complex64::new(-0.5 * x, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(n).process(&mut c);
    let inv_n = 1.0 / n as f64;
    let half = n / 2;
    for (q, z) in c.iter_mut().enumerate() {
        let w = match q {
            0 => inv_n,
            q if q < half => 2.0 * inv_n,
            q if q == half => inv_n,
            _ => 0.0,
        };
        *z *= w;
    }
    planner.plan_fft_forward(n).process(&mut c);
    Ok(c.iter().map(|z| z.im).collect())
}

/// `H = exp(-d/2 + iφ)` for an arbitrary depth profile sampled on `grid`.
pub fn transfer_from_depth(d: &[f64], grid: &FrequencyGrid, narrowest: Option<f64>) -> Result<Vec<Complex64>> {
    let phase = kramers_kronig_phase(d, grid, narrowest)?;
    Ok(d
        .iter()
        .zip(&phase)
        .map(|(&di, &p)| Complex64::from_polar((-0.5 * di).exp(), p))
        .collect())
}

/// Multiply a spectrum by `h` and return the time-domain result.
pub fn filter(input: &SpectralField, h: &[Complex64]) -> Result<TemporalField> {
    if h.len() != input.amplitude.len() {
        return Err(Error::Config("transfer function length does not match field".into()));
    }
    let amp = input.amplitude.iter().zip(h).map(|(a, b)| a * b).collect();
    to_time_domain(&SpectralField {
        grid: input.grid,
        amplitude: amp,
    })
}

/// Impulse response of `h` on `grid`, normalized so that `h ≡ 1` gives a unit
/// sample at `t = 0`.
pub fn impulse_response(h: &[Complex64], grid: &FrequencyGrid) -> Result<TemporalField> {
    let s = 1.0 / (grid.n_points as f64).sqrt();
    let flat = SpectralField::new(*grid, vec![Complex64::new(s, 0.0); grid.n_points])?;
    filter(&flat, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> FrequencyGrid {
        FrequencyGrid::new(0.0, 4e9, n).unwrap()
    }

    #[test]
    fn rejects_non_power_of_two() {
        let g = FrequencyGrid {
            center_frequency: 0.0,
            span: 1e9,
            n_points: 1000,
        };
        let f = SpectralField {
            grid: g,
            amplitude: vec![Complex64::new(0.0, 0.0); 1000],
        };
        assert!(matches!(to_time_domain(&f), Err(Error::Config(_))));
    }

    #[test]
    fn single_bin_is_constant_modulus() {
        let g = grid(256);
        let mut f = SpectralField::zeros(g);
        f.amplitude[140] = Complex64::new(1.0, 0.0);
        let t = to_time_domain(&f).unwrap();
        let m = 1.0 / 16.0;
        for a in &t.amplitude {
            assert!((a.norm() - m).abs() < 1e-12);
        }
        // phase advances at the bin's offset frequency
        let nu = g.offset(140);
        let expected = Complex64::from_polar(m, 2.0 * PI * nu * t.time(10));
        assert!((t.amplitude[10] - expected).norm() < 1e-12);
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let g = grid(128);
        let mut t = to_time_domain(&SpectralField::zeros(g)).unwrap();
        t.amplitude[37] = Complex64::new(1.0, 0.0);
        let f = to_frequency_domain(&t).unwrap();
        let m = 1.0 / (128f64).sqrt();
        assert!(f.amplitude.iter().all(|a| (a.norm() - m).abs() < 1e-12));
    }

    #[test]
    fn gaussian_pair_widths() {
        let g = FrequencyGrid::new(0.0, 200e9, 1 << 12).unwrap();
        let sigma_f = 5e9;
        let amp = (0..g.n_points)
            .map(|k| Complex64::new((-g.offset(k).powi(2) / (2.0 * sigma_f * sigma_f)).exp(), 0.0))
            .collect();
        let t = to_time_domain(&SpectralField::new(g, amp).unwrap()).unwrap();
        let sigma_t = 1.0 / (2.0 * PI * sigma_f);
        let peak = t.amplitude[g.n_points / 2].norm();
        for (n, a) in t.amplitude.iter().enumerate() {
            let tt = t.time(n);
            let want = peak * (-tt * tt / (2.0 * sigma_t * sigma_t)).exp();
            assert!((a.norm() - want).abs() < 1e-9 * peak, "n={n}");
        }
    }

    #[test]
    fn shift_theorem() {
        let g = grid(256);
        let mut t = to_time_domain(&SpectralField::zeros(g)).unwrap();
        t.amplitude[128] = Complex64::new(1.0, 0.0);
        let a = to_frequency_domain(&t).unwrap();
        let shift = 7;
        let mut t2 = t.clone();
        t2.amplitude.rotate_right(shift);
        let b = to_frequency_domain(&t2).unwrap();
        let tau = shift as f64 * g.dt();
        for k in 0..g.n_points {
            let want = a.amplitude[k] * Complex64::from_polar(1.0, -2.0 * PI * g.offset(k) * tau);
            assert!((b.amplitude[k] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn offset_origin_round_trips() {
        let g = grid(64);
        let amp: Vec<Complex64> = (0..64).map(|k| Complex64::new(k as f64, -(k as f64) * 0.5)).collect();
        let mut t = to_time_domain(&SpectralField::new(g, amp.clone()).unwrap()).unwrap();
        t.t0 += 3.0 * t.dt;
        let back = to_frequency_domain(&t).unwrap();
        // same samples labelled three steps later: linear phase only
        for (b, a) in back.amplitude.iter().zip(&amp) {
            assert!((b.norm() - a.norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_depth_gives_zero_phase() {
        let g = grid(512);
        let d = vec![0.7; 512];
        let p = kramers_kronig_phase(&d, &g, None).unwrap();
        assert!(p.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn resolution_guard() {
        let g = grid(1024);
        let d = vec![0.0; 1024];
        let err = kramers_kronig_phase(&d, &g, Some(7.0 * g.spacing())).unwrap_err();
        assert!(matches!(err, Error::Resolution { .. }));
        assert!(kramers_kronig_phase(&d, &g, Some(8.0 * g.spacing())).is_ok());
    }

    #[test]
    fn negative_depth_rejected() {
        let g = grid(64);
        let mut d = vec![0.0; 64];
        d[3] = -0.1;
        assert!(kramers_kronig_phase(&d, &g, None).is_err());
    }

    #[test]
    fn taper_leaves_interior_alone() {
        let d: Vec<f64> = (0..200).map(|i| (i as f64 * 0.1).sin().abs()).collect();
        let t = taper_to_baseline(&d);
        assert_eq!(&t[10..190], &d[10..190]);
        let b = 0.5 * (d[0] + d[199]);
        assert!((t[0] - b).abs() < 1e-15);
    }
}
