//! Shared fixtures for the benchmarks in `benches/`.

use afcsim::scenario::{preset, MemoryChannel, ScenarioConfig};
use afcsim::source::SourceConfig;

/// Config, built memory channel and source of one preset point.
pub fn preset_point(name: &str, label: &str) -> (ScenarioConfig, MemoryChannel, SourceConfig, usize) {
    let cfg = preset(name).expect("preset exists");
    let index = cfg.points.iter().position(|p| p.label == label).expect("point exists");
    let point = &cfg.points[index];
    let channel = MemoryChannel::build(&point.memory, &cfg.grid).expect("valid memory");
    let source = SourceConfig {
        pump_power: point.pump_power.unwrap_or(cfg.source.pump_power),
        ..cfg.source
    };
    (cfg, channel, source, index)
}

/// Sorted Poisson-like tag times at a fixed mean gap, ps.
pub fn regular_times(n: usize, gap_ps: i64, jitter: u64) -> Vec<i64> {
    let mut x = jitter | 1;
    (0..n as i64)
        .map(|k| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (k * gap_ps + (x % gap_ps as u64) as i64) / 80 * 80
        })
        .collect()
}
