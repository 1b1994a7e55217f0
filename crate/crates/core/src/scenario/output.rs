//! CSV, JSON and SVG files for a result bundle.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{PeakMetrics, ResultBundle};
use crate::analysis::{CoincidenceHistogram, CoincidenceWindows};
use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const PAD: f64 = 48.0;

fn write(path: PathBuf, bytes: &[u8], out: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    out.push(path);
    Ok(())
}

/// Log-scale coincidence counts against delay with peak (blue) and
/// background (grey) windows shaded.
pub fn render_svg(title: &str, h: &CoincidenceHistogram, windows: &[CoincidenceWindows]) -> String {
    let (x0, x1) = (h.start_ps as f64 * 1e-3, h.end_ps() as f64 * 1e-3);
    let top = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let ymax = (top * 2.0).log10().ceil().max(1.0);
    let px = |t_ns: f64| PAD + (t_ns - x0) / (x1 - x0) * (WIDTH - 2.0 * PAD);
    let py = |c: f64| HEIGHT - PAD - (1.0 + c).log10() / ymax * (HEIGHT - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for w in windows {
        for ((lo, hi), fill) in [(w.peak(), "#9ecae1"), (w.background(), "#d9d9d9")] {
            let (a, b) = (px(lo * 1e9), px(hi * 1e9));
            let _ = writeln!(
                s,
                r#"<rect x="{a:.2}" y="{PAD}" width="{:.2}" height="{:.2}" fill="{fill}" fill-opacity="0.6"/>"#,
                (b - a).max(0.5),
                HEIGHT - 2.0 * PAD
            );
        }
    }
    let mut path = String::new();
    for (k, &c) in h.counts.iter().enumerate() {
        let a = px((h.start_ps + k as i64 * h.bin_width_ps) as f64 * 1e-3);
        let b = px((h.start_ps + (k as i64 + 1) * h.bin_width_ps) as f64 * 1e-3);
        let y = py(c as f64);
        let _ = write!(path, "{}{a:.2},{y:.2} L{b:.2},{y:.2} ", if k == 0 { "M" } else { "L" });
    }
    let _ = writeln!(s, r#"<path d="{path}" fill="none" stroke="black" stroke-width="1"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * PAD,
        HEIGHT - 2.0 * PAD
    );
    let step = ((x1 - x0) / 8.0).max(1.0).ceil();
    let mut t = (x0 / step).ceil() * step;
    while t <= x1 {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{t}</text>"#,
            px(t),
            HEIGHT - PAD + 16.0
        );
        t += step;
    }
    for d in 0..=ymax as i32 {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">1e{d}</text>"#,
            PAD - 4.0,
            py(10f64.powi(d) - 1.0) + 4.0
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">delay (ns)</text>"#, WIDTH / 2.0, HEIGHT - 8.0);
    let _ = writeln!(s, r#"<text x="{PAD}" y="{}">{title}</text>"#, PAD - 10.0);
    s.push_str("</svg>\n");
    s
}

fn summary_row(s: &mut String, label: &str, pump: f64, rate: f64, p: &PeakMetrics) {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    let _ = writeln!(
        s,
        "{label},{},{pump:e},{rate:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{:e}",
        p.name,
        p.delay,
        p.windows.t0,
        p.g2.g2,
        p.g2.sigma,
        p.rate,
        p.rate_sigma,
        opt(p.eta_m.map(|e| e.eta_m)),
        opt(p.eta_m.map(|e| e.sigma)),
        p.predicted_g2
    );
}

/// Write the bundle into `out_dir`: one CSV and SVG per histogram, the metrics
/// JSON and a per-peak summary table. An empty bundle yields the JSON only.
pub fn emit_outputs(bundle: &ResultBundle, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stem = bundle.stem();
    let mut out = Vec::new();
    let mut table = String::from(
        "label,peak,pump_power_w,pair_rate_hz,delay_s,t0_s,g2,g2_sigma,rate_hz,rate_sigma_hz,eta_m,eta_m_sigma,predicted_g2\n",
    );
    let mut rows = 0;
    for p in &bundle.points {
        let (Some(h), Some(m)) = (&p.histogram, &p.metrics) else {
            continue;
        };
        let mut csv = Vec::new();
        h.write_csv(&mut csv).map_err(|e| Error::io(out_dir, e))?;
        write(out_dir.join(&m.histogram_file), &csv, &mut out)?;
        let windows: Vec<CoincidenceWindows> = std::iter::once(&m.transmitted).chain(&m.modes).map(|k| k.windows).collect();
        let svg = render_svg(&format!("{} {}", bundle.config.name, p.label), h, &windows);
        write(out_dir.join(format!("{stem}_{}.svg", p.label)), svg.as_bytes(), &mut out)?;
        for k in std::iter::once(&m.transmitted).chain(&m.modes) {
            summary_row(&mut table, &p.label, m.pump_power, m.pair_rate, k);
            rows += 1;
        }
    }
    write(out_dir.join(format!("{stem}_metrics.json")), bundle.metrics_json().as_bytes(), &mut out)?;
    if rows > 0 {
        write(out_dir.join(format!("{stem}_{}.csv", bundle.config.series)), table.as_bytes(), &mut out)?;
    }
    Ok(out)
}
