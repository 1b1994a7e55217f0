//! Named scenarios for the storage experiments.

use super::config::{MemoryConfig, PointConfig, ScenarioConfig, WindowSpec};
use crate::detection::{DetectorModel, MemoryNoiseModel, TimingCycle};
use crate::error::{Error, Result};
use crate::memory::{plan_manipulation, CombSection, ModeLayout, ModeCombination, PumpingConfig, FIBRE_DEPTH};
use crate::source::SourceConfig;
use crate::spectral::FrequencyGrid;

/// `(name, description)` of every preset.
pub const PRESETS: &[(&str, &str)] = &[
    ("fig3", "8 GHz single comb vs 16 GHz double comb, 5 ns storage, with bypass reference"),
    ("fig4", "16 GHz double comb, storage 5 to 50 ns in 5 ns steps, with bypass reference"),
    ("fig5_two", "two 9 GHz sections recalled at 3 and 5 ns"),
    ("fig5_four", "four 4.5 GHz sections recalled at 3 to 9 ns"),
    ("fig5_six", "six 3 GHz sections recalled at 3 to 13 ns"),
    ("fig6", "six 2.65 GHz sections mapped onto 3 temporal modes spaced by 4.5 ns"),
    ("fig6_1ns", "six 2.65 GHz sections mapped onto 3 temporal modes spaced by 1 ns"),
    ("figA1", "bypass pump sweep, 25 to 100 uW"),
    ("figA2", "single comb bandwidth sweep 1 to 16 GHz under optical pumping"),
    ("figA3", "8 GHz comb swept across the photon spectrum"),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

/// Half the spacing between the two pumping-laser regions.
const GROUP_OFFSET: f64 = 14e9;
/// Pump power of the multimode runs.
const MULTIMODE_PUMP: f64 = 30e-6;
/// Echo decay time fitted to the multimode g2 trend.
const MULTIMODE_DECAY: f64 = 13.4e-9;
/// Echo decay time of the long-storage runs.
const LONG_DECAY: f64 = 25e-9;
/// Background window of the bypass sweep, s; accidentals are flat there.
const SWEEP_BACKGROUND: f64 = 8e-9;
/// First-mode g2 targets of the multimode runs.
const F1_TARGETS: [f64; 3] = [16.8, 8.0, 5.7];

fn base(name: &str, points: Vec<PointConfig>) -> ScenarioConfig {
    ScenarioConfig {
        name: name.to_string(),
        seed: 0,
        duration: 10.0,
        source: SourceConfig::default(),
        idler_detector: DetectorModel::default(),
        signal_detector: DetectorModel::default(),
        cycle: TimingCycle::default(),
        noise: MemoryNoiseModel::default(),
        windows: WindowSpec::default(),
        losses: Default::default(),
        grid: FrequencyGrid::default(),
        bin_width: 80e-12,
        series: "summary".into(),
        points,
    }
}

fn point(label: &str, memory: MemoryConfig) -> PointConfig {
    PointConfig {
        label: label.to_string(),
        pump_power: None,
        duration_scale: 1.0,
        memory,
        range: None,
    }
}

fn comb(sections: Vec<CombSection>) -> MemoryConfig {
    MemoryConfig::Comb {
        sections,
        out_of_band_depth: FIBRE_DEPTH,
        pumping: None,
        combination: ModeCombination::Incoherent,
    }
}

fn with_decay(mut s: CombSection, tau: f64) -> CombSection {
    s.decay_time = Some(tau);
    s
}

/// Two 8 GHz sections on either side of the photon spectrum centre.
fn double_comb(spacing: f64, decay: Option<f64>) -> Vec<CombSection> {
    [-GROUP_OFFSET, GROUP_OFFSET]
        .into_iter()
        .map(|c| {
            let mut s = CombSection::new(c, 8e9, spacing);
            s.decay_time = decay;
            s
        })
        .collect()
}

fn fig3() -> ScenarioConfig {
    base(
        "fig3",
        vec![
            point("bypass", MemoryConfig::Bypass),
            point("afc8", comb(vec![CombSection::new(-GROUP_OFFSET, 8e9, 200e6)])),
            point("afc16", comb(double_comb(200e6, None))),
        ],
    )
}

fn fig4() -> ScenarioConfig {
    let mut points = vec![point("bypass", MemoryConfig::Bypass)];
    for k in 1..=10 {
        let ns = 5 * k;
        points.push(point(&format!("t{ns:02}ns"), comb(double_comb(1e9 / ns as f64, Some(LONG_DECAY)))));
    }
    let mut cfg = base("fig4", points);
    cfg.series = "efficiency_vs_time".into();
    cfg
}

/// Sections of equal width filling two 9 GHz regions, delays rising with frequency.
fn multimode_sections(n: usize) -> Vec<CombSection> {
    let width = 18e9 / n as f64;
    let per_group = n / 2;
    (0..n)
        .map(|i| {
            let (g, j) = (i / per_group, i % per_group);
            let start = if g == 0 { -GROUP_OFFSET - 4.5e9 } else { GROUP_OFFSET - 4.5e9 };
            let centre = start + (j as f64 + 0.5) * width;
            let delay = (3 + 2 * i) as f64 * 1e-9;
            with_decay(CombSection::for_delay(centre, width, delay), MULTIMODE_DECAY)
        })
        .collect()
}

fn fig5(name: &str, n: usize, target: f64) -> Result<ScenarioConfig> {
    let mut p = point(&format!("afc{n}"), comb(multimode_sections(n)));
    p.pump_power = Some(MULTIMODE_PUMP);
    let mut cfg = base(name, vec![p]);
    cfg.noise.capture_fraction = super::calibrate_capture_fraction(&cfg, 0, 1, target)?;
    Ok(cfg)
}

fn fig6(name: &str, delays: [f64; 3]) -> Result<ScenarioConfig> {
    let grid = FrequencyGrid::default();
    let width = 2.65e9;
    let layout = ModeLayout {
        start: -GROUP_OFFSET - 1.5 * width,
        per_group: 3,
        group_gap: 2.0 * GROUP_OFFSET - 3.0 * width,
    };
    let targets: Vec<f64> = delays.iter().chain(delays.iter()).copied().collect();
    let sections = plan_manipulation(6, width, &targets, &[], &layout, &grid)?;
    Ok(base(name, vec![point("afc6", comb(sections))]))
}

fn fig_a1() -> ScenarioConfig {
    let points = [25e-6, 50e-6, 75e-6, 100e-6]
        .into_iter()
        .map(|p: f64| {
            let mut pt = point(&format!("p{:03}uw", (p * 1e6).round() as u32), MemoryConfig::Bypass);
            pt.pump_power = Some(p);
            // equal accidental counts at every power
            pt.duration_scale = (100e-6 / p).powi(2);
            pt
        })
        .collect();
    let mut cfg = base("figA1", points);
    cfg.series = "g2_vs_power".into();
    cfg.windows.t_bg = SWEEP_BACKGROUND;
    cfg
}

fn fig_a2() -> ScenarioConfig {
    let points = [1e9, 2e9, 4e9, 8e9, 16e9]
        .into_iter()
        .map(|b: f64| {
            point(
                &format!("b{:02}ghz", (b / 1e9).round() as u32),
                MemoryConfig::Comb {
                    sections: vec![CombSection::new(0.0, b, 200e6)],
                    out_of_band_depth: FIBRE_DEPTH,
                    pumping: Some(PumpingConfig::default()),
                    combination: ModeCombination::Incoherent,
                },
            )
        })
        .collect();
    let mut cfg = base("figA2", points);
    cfg.series = "efficiency_vs_bandwidth".into();
    cfg
}

fn fig_a3() -> ScenarioConfig {
    let points = [-16e9, -8e9, 0.0, 8e9, 16e9]
        .into_iter()
        .map(|c: f64| {
            point(
                &format!("c{:+03}ghz", (c / 1e9).round() as i32),
                comb(vec![CombSection::new(c, 8e9, 200e6)]),
            )
        })
        .collect();
    let mut cfg = base("figA3", points);
    cfg.series = "efficiency_vs_centre".into();
    cfg
}

/// Build a named preset.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    match name {
        "fig3" => Ok(fig3()),
        "fig4" => Ok(fig4()),
        "fig5_two" => fig5(name, 2, F1_TARGETS[0]),
        "fig5_four" => fig5(name, 4, F1_TARGETS[1]),
        "fig5_six" => fig5(name, 6, F1_TARGETS[2]),
        "fig6" => fig6(name, [5e-9, 9.5e-9, 14e-9]),
        "fig6_1ns" => fig6(name, [5e-9, 6e-9, 7e-9]),
        "figA1" => Ok(fig_a1()),
        "figA2" => Ok(fig_a2()),
        "figA3" => Ok(fig_a3()),
        _ => Err(Error::UnknownPreset {
            name: name.to_string(),
            available: preset_names().join(", "),
        }),
    }
}
