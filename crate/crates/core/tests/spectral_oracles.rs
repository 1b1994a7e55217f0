use afcsim::memory::{build_comb, transfer_function, CombSection, FIBRE_DEPTH};
use afcsim::spectral::{
    self, impulse_response, kramers_kronig_phase, to_frequency_domain, to_time_domain, FrequencyGrid, SpectralField,
};
use num_complex::Complex64;
use proptest::prelude::*;
use std::f64::consts::PI;

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

// Lorentzian images summed over the periodic grid, and their Hilbert partner.
fn periodic_lorentzian(nu: f64, gamma: f64, span: f64) -> (f64, f64) {
    let a = 2.0 * PI * gamma / span;
    let b = 2.0 * PI * nu / span;
    let den = a.cosh() - b.cos();
    let absorption = (PI * gamma / span) * a.sinh() / den;
    let dispersion = (PI * gamma / span) * b.sin() / den;
    (absorption, dispersion)
}

#[test]
fn lorentzian_dispersion_matches_closed_form() {
    let g = FrequencyGrid::new(0.0, 4e9, 1 << 12).unwrap();
    let gamma = 20e6;
    let d0 = 1.3;
    let mut d = Vec::new();
    let mut want = Vec::new();
    for k in 0..g.n_points {
        let (abs, disp) = periodic_lorentzian(g.offset(k), gamma, g.span);
        d.push(d0 * abs);
        // minimum-phase partner of exp(-d/2): φ = (d0/2)·γν/(γ²+ν²) on the line
        want.push(0.5 * d0 * disp);
    }
    let phase = kramers_kronig_phase(&d, &g, None).unwrap();
    // remove the additive constant left by the discrete transform
    let mean = phase.iter().sum::<f64>() / phase.len() as f64;
    let shifted: Vec<f64> = phase.iter().map(|p| p - mean).collect();
    let e = rel_l2(&shifted, &want);
    assert!(e < 1e-3, "relative L2 error {e:e}");
}

#[test]
fn lorentzian_on_the_line_near_center() {
    let g = FrequencyGrid::new(0.0, 64e9, 1 << 16).unwrap();
    let gamma = 10e6;
    let d0 = 0.8;
    let d: Vec<f64> = (0..g.n_points)
        .map(|k| {
            let nu = g.offset(k);
            d0 * gamma * gamma / (nu * nu + gamma * gamma)
        })
        .collect();
    let phase = kramers_kronig_phase(&d, &g, None).unwrap();
    // compare within ±20 linewidths where the periodic images are negligible
    let (mut got, mut want) = (Vec::new(), Vec::new());
    for (k, &p) in phase.iter().enumerate() {
        let nu = g.offset(k);
        if nu.abs() < 20.0 * gamma {
            got.push(p);
            want.push(0.5 * d0 * gamma * nu / (gamma * gamma + nu * nu));
        }
    }
    let e = rel_l2(&got, &want);
    assert!(e < 1e-3, "relative L2 error {e:e}");
}

fn comb_grid() -> FrequencyGrid {
    FrequencyGrid::default()
}

#[test]
fn comb_impulse_response_is_causal() {
    let g = comb_grid();
    for delta in [333.33e6, 200e6, 20e6] {
        let p = build_comb(vec![CombSection::new(0.0, 8e9, delta)], FIBRE_DEPTH).unwrap();
        let h = transfer_function(&p, &g).unwrap();
        let ir = impulse_response(&h, &g).unwrap();
        let total = ir.energy();
        let neg = ir.energy_between(f64::NEG_INFINITY, 0.0);
        assert!(neg < 1e-6 * total, "Δ={delta:e}: negative-time fraction {:e}", neg / total);
    }
}

#[test]
fn beer_lambert_flat_depth() {
    let g = FrequencyGrid::new(0.0, 16e9, 1 << 12).unwrap();
    for d in [0.0, 0.1, FIBRE_DEPTH, 2.0] {
        let p = build_comb(Vec::new(), d).unwrap();
        let h = transfer_function(&p, &g).unwrap();
        for z in &h {
            assert!((z.norm_sqr() - (-d).exp()).abs() < 1e-9);
        }
    }
}

#[test]
fn magnitude_is_exact() {
    let g = comb_grid();
    let p = build_comb(vec![CombSection::new(1e9, 8e9, 200e6)], FIBRE_DEPTH).unwrap();
    let h = transfer_function(&p, &g).unwrap();
    let d = p.depth_on(&g);
    for (z, di) in h.iter().zip(&d) {
        assert!((z.norm() - (-0.5 * di).exp()).abs() < 1e-12);
    }
}

#[test]
fn revival_at_five_ns() {
    let g = comb_grid();
    let p = build_comb(vec![CombSection::new(0.0, 8e9, 200e6)], FIBRE_DEPTH).unwrap();
    let h = transfer_function(&p, &g).unwrap();
    let ir = impulse_response(&h, &g).unwrap();
    let t = ir.argmax_between(2.5e-9, 7.5e-9).unwrap();
    assert!((t - 5e-9).abs() < 80e-12, "revival at {t:e}");
}

// Direct circular convolution with the impulse response, O(N²).
fn convolve(x: &[Complex64], h: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|i| (0..n).map(|j| x[j] * h[(i + n - j) % n]).sum())
        .collect()
}

#[test]
fn fft_filter_matches_direct_convolution() {
    let g = FrequencyGrid::new(0.0, 16e9, 1 << 12).unwrap();
    let p = build_comb(vec![CombSection::new(0.0, 4e9, 500e6)], FIBRE_DEPTH).unwrap();
    let h = transfer_function(&p, &g).unwrap();
    let input = SpectralField::flat_band(g, -2e9, 2e9).unwrap();
    let fft_out = spectral::filter(&input, &h).unwrap();

    let x = to_time_domain(&input).unwrap();
    let ir = impulse_response(&h, &g).unwrap();
    // impulse response in natural (t = 0 first) order, input likewise
    let n = g.n_points;
    let rot = |v: &[Complex64]| {
        let mut r = v.to_vec();
        r.rotate_left(n / 2);
        r
    };
    let direct = convolve(&rot(&x.amplitude), &rot(&ir.amplitude));
    let mut direct = direct;
    direct.rotate_right(n / 2);
    let num: f64 = direct.iter().zip(&fft_out.amplitude).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = fft_out.amplitude.iter().map(|b| b.norm_sqr()).sum();
    let e = (num / den).sqrt();
    assert!(e < 1e-6, "relative L2 {e:e}");
}

fn random_field(n_log: u32, seed: &[f64]) -> SpectralField {
    let n = 1usize << n_log;
    let g = FrequencyGrid::new(0.0, 10e9, n).unwrap();
    let amp = (0..n)
        .map(|k| {
            let a = seed[k % seed.len()];
            let b = seed[(k * 7 + 3) % seed.len()];
            Complex64::new(a * (k as f64 * 0.37).sin(), b * (k as f64 * 0.11).cos())
        })
        .collect();
    SpectralField::new(g, amp).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parseval_and_round_trip(n_log in 2u32..12, seed in prop::collection::vec(-1.0f64..1.0, 1..32)) {
        let f = random_field(n_log, &seed);
        let t = to_time_domain(&f).unwrap();
        let e_f = f.energy();
        prop_assume!(e_f > 0.0);
        prop_assert!((t.energy() - e_f).abs() <= 1e-9 * e_f);
        let back = to_frequency_domain(&t).unwrap();
        let err: f64 = back.amplitude.iter().zip(&f.amplitude).map(|(a, b)| (a - b).norm_sqr()).sum();
        prop_assert!(err.sqrt() <= 1e-9 * e_f.sqrt());
    }

    #[test]
    fn passive_and_causal(line in 0.0f64..1.0, tooth in 0.5f64..1.5, bg_frac in 0.0f64..1.0,
                          spacing in prop::sample::select(vec![100e6, 200e6, 250e6, 400e6])) {
        // combs carved out of an absorption line of depth `line`
        let g = FrequencyGrid::new(0.0, 16e9, 1 << 16).unwrap();
        let mut s = CombSection::new(0.0, 4e9, spacing);
        s.peak_depth = line * tooth;
        s.background_depth = s.peak_depth * bg_frac;
        let p = build_comb(vec![s], line).unwrap();
        let h = transfer_function(&p, &g).unwrap();
        let input = SpectralField::flat_band(g, -8e9, 8e9).unwrap();
        let out = spectral::filter(&input, &h).unwrap();
        if line == 0.0 {
            prop_assert!((out.energy() - 1.0).abs() < 1e-12);
        } else {
            prop_assert!(out.energy() < 1.0);
        }
        let ir = impulse_response(&h, &g).unwrap();
        let neg = ir.energy_between(f64::NEG_INFINITY, 0.0);
        prop_assert!(neg < 1e-6 * ir.energy(), "negative-time fraction {:e}", neg / ir.energy());
    }
}
