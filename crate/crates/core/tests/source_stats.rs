use afcsim::source::{pair_rate, qpm_period, route_beamsplitter, sample_pairs, split_pairs, Member, Poling, QpmSpec, SourceConfig};
use serde::Deserialize;

#[derive(Deserialize)]
struct Sellmeier {
    a: [f64; 6],
    b: [f64; 4],
    operating_temperature_c: f64,
}

impl Sellmeier {
    fn load() -> Self {
        let text = include_str!("fixtures/linbo3_sellmeier.json");
        serde_json::from_str(text).unwrap()
    }

    fn index(&self, lambda_m: f64, t_c: f64) -> f64 {
        let (a, b) = (self.a, self.b);
        let f = (t_c - 24.5) * (t_c + 570.82);
        let l2 = (lambda_m * 1e6).powi(2);
        let n2 = a[0] + b[0] * f + (a[1] + b[1] * f) / (l2 - (a[2] + b[2] * f).powi(2)) + (a[3] + b[3] * f) / (l2 - a[4] * a[4])
            - a[5] * l2;
        n2.sqrt()
    }
}

#[test]
fn fixture_indices_give_period_near_seventeen_microns() {
    let s = Sellmeier::load();
    let t = s.operating_temperature_c;
    let (lp, ls) = (766e-9, 1532e-9);
    let spec = QpmSpec::degenerate(lp, s.index(lp, t), s.index(ls, t));
    match qpm_period(&spec).unwrap() {
        Poling::Period { period, reversed } => {
            assert!(!reversed);
            assert!((15e-6..=19e-6).contains(&period), "period {period}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn fixture_indices_are_plausible() {
    let s = Sellmeier::load();
    let n_ir = s.index(1532e-9, 52.8);
    let n_vis = s.index(766e-9, 52.8);
    assert!((2.10..2.16).contains(&n_ir), "{n_ir}");
    assert!(n_vis > n_ir);
}

#[test]
fn pair_counts_are_poisson() {
    let cfg = SourceConfig::default();
    let t = 0.02;
    let mean = pair_rate(&cfg).rate * t;
    let counts: Vec<f64> = (0..20).map(|s| sample_pairs(&cfg, t, s).unwrap().len() as f64).collect();
    for c in &counts {
        assert!((c - mean).abs() < 5.0 * mean.sqrt(), "{c} vs {mean}");
    }
    let avg = counts.iter().sum::<f64>() / counts.len() as f64;
    let var = counts.iter().map(|c| (c - avg).powi(2)).sum::<f64>() / (counts.len() - 1) as f64;
    // sample variance of 20 Poisson draws stays within a factor 3 of the mean
    assert!(var > mean / 3.0 && var < mean * 3.0, "var {var} mean {mean}");
}

#[test]
fn sampled_rate_matches_pair_rate_below_saturation() {
    for p in [25e-6, 50e-6, 75e-6] {
        let cfg = SourceConfig::with_pump_power(p);
        let t = 0.05;
        let mean = pair_rate(&cfg).rate * t;
        let n = sample_pairs(&cfg, t, 7).unwrap().len() as f64;
        assert!((n - mean).abs() < 3.0 * mean.sqrt(), "{p}: {n} vs {mean}");
    }
}

#[test]
fn routing_is_binomial() {
    let cfg = SourceConfig::default();
    for seed in 0..5 {
        let pairs = sample_pairs(&cfg, 0.01, seed).unwrap();
        let n = pairs.len() as f64;
        let (mem, her) = route_beamsplitter(&pairs, seed);
        assert_eq!(mem.len() + her.len(), 2 * pairs.len());
        let sd = (2.0 * n * 0.25).sqrt();
        assert!((mem.len() as f64 - n).abs() < 5.0 * sd);
        let split = split_pairs(&mem, pairs.len()) as f64;
        let sd = (n * 0.25).sqrt();
        assert!((split - n / 2.0).abs() < 5.0 * sd, "split {split} of {n}");
        let sig = mem.iter().filter(|p| p.member == Member::Signal).count() as f64;
        assert!((sig - n / 2.0).abs() < 5.0 * sd);
    }
}

#[test]
fn frequencies_are_conjugate_and_in_band() {
    let cfg = SourceConfig {
        filter_center: 3e9,
        ..Default::default()
    };
    let (lo, hi) = cfg.band();
    for e in sample_pairs(&cfg, 1e-3, 3).unwrap() {
        let sum = (e.signal_frequency - cfg.filter_center) + (e.idler_frequency - cfg.filter_center);
        assert!(sum.abs() < 1.0);
        assert!(e.signal_frequency >= lo && e.signal_frequency <= hi);
        assert!(e.idler_frequency >= lo && e.idler_frequency <= hi);
    }
}

#[test]
fn zero_duration_and_zero_power_are_empty() {
    assert!(sample_pairs(&SourceConfig::default(), 0.0, 1).unwrap().is_empty());
    assert!(sample_pairs(&SourceConfig::with_pump_power(0.0), 1.0, 1).unwrap().is_empty());
    assert!(sample_pairs(&SourceConfig::default(), -1.0, 1).is_err());
}
