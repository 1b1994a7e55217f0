use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{BackgroundSide, ETA_C, ETA_T};
use crate::detection::{DetectorModel, MemoryNoiseModel, TimingCycle, TDC_BIN_PS};
use crate::error::{Error, Result};
use crate::memory::{build_comb, CombSection, ModeCombination, PumpingConfig, FIBRE_DEPTH};
use crate::source::SourceConfig;
use crate::spectral::FrequencyGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Gated seconds per point.
    pub duration: f64,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default)]
    pub idler_detector: DetectorModel,
    #[serde(default)]
    pub signal_detector: DetectorModel,
    #[serde(default)]
    pub cycle: TimingCycle,
    #[serde(default)]
    pub noise: MemoryNoiseModel,
    #[serde(default)]
    pub windows: WindowSpec,
    #[serde(default)]
    pub losses: Losses,
    #[serde(default)]
    pub grid: FrequencyGrid,
    /// Histogram bin width, s.
    #[serde(default = "default_bin")]
    pub bin_width: f64,
    /// File stem of the per-point summary table.
    #[serde(default = "default_series")]
    pub series: String,
    pub points: Vec<PointConfig>,
}

fn default_bin() -> f64 {
    80e-12
}

fn default_series() -> String {
    "summary".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    pub t_p: f64,
    pub t_bg: f64,
    pub background: BackgroundSide,
    pub t0: T0Choice,
}

/// How the peak window is centred on each echo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum T0Choice {
    /// Center of mass of the busiest window near the expected delay.
    #[default]
    Peak,
    /// Model delay of the echo, independent of the counts.
    Expected,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            t_p: 0.8e-9,
            t_bg: 0.8e-9,
            background: BackgroundSide::After,
            t0: T0Choice::Peak,
        }
    }
}

/// Lumped optical losses between the source and the detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Losses {
    /// Collection into the herald detector fibre.
    pub eta_ci: f64,
    /// Collection into the memory arm fibre.
    pub eta_cs: f64,
    /// Memory transmission excluding the comb itself; not applied in bypass.
    pub eta_t: f64,
}

impl Default for Losses {
    fn default() -> Self {
        Losses {
            eta_ci: ETA_C,
            eta_cs: ETA_C,
            eta_t: ETA_T,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointConfig {
    pub label: String,
    /// Overrides `source.pump_power`.
    #[serde(default)]
    pub pump_power: Option<f64>,
    #[serde(default = "one")]
    pub duration_scale: f64,
    pub memory: MemoryConfig,
    /// Histogram delay range `[lo, hi)`, s.
    #[serde(default)]
    pub range: Option<(f64, f64)>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MemoryConfig {
    /// Signal photons go straight to the detector.
    Bypass,
    Comb {
        sections: Vec<CombSection>,
        #[serde(default = "fibre_depth")]
        out_of_band_depth: f64,
        #[serde(default)]
        pumping: Option<PumpingConfig>,
        #[serde(default)]
        combination: ModeCombination,
    },
    /// Fixed fate probabilities for photons inside `[lo, hi)`, recalled at a single delay.
    Fixed {
        lo: f64,
        hi: f64,
        recall: f64,
        transmitted: f64,
        delay: f64,
        #[serde(default = "fibre_depth")]
        out_of_band_depth: f64,
    },
}

fn fibre_depth() -> f64 {
    FIBRE_DEPTH
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::validation("name", "must be a non-empty file-name-safe string"));
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(Error::validation("duration", "must be non-negative"));
        }
        self.source.validate()?;
        self.idler_detector.validate("idler_detector")?;
        self.signal_detector.validate("signal_detector")?;
        self.cycle.validate()?;
        self.noise.validate()?;
        self.grid.validate()?;
        if !(self.windows.t_p > 0.0) || !(self.windows.t_bg > 0.0) {
            return Err(Error::validation("windows", "t_p and t_bg must be positive"));
        }
        for (f, v) in [
            ("losses.eta_ci", self.losses.eta_ci),
            ("losses.eta_cs", self.losses.eta_cs),
            ("losses.eta_t", self.losses.eta_t),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(f, "must lie in [0, 1]"));
            }
        }
        let bin = self.bin_ps();
        if bin < TDC_BIN_PS || bin % TDC_BIN_PS != 0 {
            return Err(Error::validation("bin_width", "must be a positive multiple of 80 ps"));
        }
        let mut labels = std::collections::BTreeSet::new();
        for (i, p) in self.points.iter().enumerate() {
            let field = |f: &str| format!("points[{i}].{f}");
            if p.label.is_empty() || p.label.contains(['/', '\\']) || !labels.insert(p.label.as_str()) {
                return Err(Error::validation(field("label"), "must be unique and file-name-safe"));
            }
            if let Some(pw) = p.pump_power {
                if !(pw >= 0.0) || !pw.is_finite() {
                    return Err(Error::validation(field("pump_power"), "must be non-negative"));
                }
            }
            if !(p.duration_scale >= 0.0) || !p.duration_scale.is_finite() {
                return Err(Error::validation(field("duration_scale"), "must be non-negative"));
            }
            if let Some((lo, hi)) = p.range {
                if !(hi > lo) {
                    return Err(Error::validation(field("range"), "upper edge must exceed lower edge"));
                }
            }
            match &p.memory {
                MemoryConfig::Bypass => {}
                MemoryConfig::Comb {
                    sections,
                    out_of_band_depth,
                    pumping,
                    ..
                } => {
                    build_comb(sections.clone(), *out_of_band_depth)?;
                    if let Some(c) = pumping {
                        c.validate()?;
                    }
                }
                MemoryConfig::Fixed {
                    lo,
                    hi,
                    recall,
                    transmitted,
                    delay,
                    out_of_band_depth,
                } => {
                    if !(hi > lo) {
                        return Err(Error::validation(field("memory.hi"), "must exceed lo"));
                    }
                    if !(*recall >= 0.0 && *transmitted >= 0.0 && recall + transmitted <= 1.0) {
                        return Err(Error::validation(field("memory.recall"), "fate probabilities must sum to at most 1"));
                    }
                    if !(*delay > 0.0) {
                        return Err(Error::validation(field("memory.delay"), "must be positive"));
                    }
                    if !(*out_of_band_depth >= 0.0) {
                        return Err(Error::validation(field("memory.out_of_band_depth"), "must be non-negative"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn bin_ps(&self) -> i64 {
        (self.bin_width * 1e12).round() as i64
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let d = Sha256::digest(&bytes);
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| Error::validation("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
