#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afcsim::analysis::{
    build_histogram, channel_times, g2_windowed, window_rates, BackgroundSide, CoincidenceWindows,
};
use afcsim::detection::{read_tags_csv, Channel};
use afcsim::scenario::{emit_outputs, preset, run_scenario, ScenarioConfig, PRESETS};
use afcsim::Error;
use clap::{ArgGroup, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "afcsim", version, about = "Broadband AFC quantum memory simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset or a JSON scenario and write histograms, plots and metrics.
    #[command(group(ArgGroup::new("source").required(true).args(["preset", "config"])))]
    Run {
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Live measurement time per point, s.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Windowed g2 of a time-tag file.
    Analyze {
        /// CSV with header `channel,time_ps,origin`.
        #[arg(long)]
        tags: PathBuf,
        /// Peak center, peak width and background width, s.
        #[arg(long, value_delimiter = ',', value_name = "T0,TP,TBG", required = true, allow_negative_numbers = true)]
        windows: Vec<f64>,
        /// Put the background window before the peak.
        #[arg(long)]
        before: bool,
        #[arg(long, default_value_t = 80)]
        bin_ps: i64,
        /// Gated time, s; defaults to the span of the tags.
        #[arg(long)]
        live_time: Option<f64>,
    },
    /// List the named presets, or print one as a JSON config.
    Presets {
        #[arg(long, value_name = "NAME")]
        show: Option<String>,
    },
}

enum Failure {
    Validation(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Io(e.to_string())
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("cannot read {}: {e}", path.display())))
}

fn run(
    preset_name: Option<String>,
    config: Option<PathBuf>,
    seed: Option<u64>,
    duration: Option<f64>,
    out: &Path,
) -> Result<(), Failure> {
    let mut cfg: ScenarioConfig = match (preset_name, config) {
        (Some(name), _) => preset(&name)?,
        (None, Some(path)) => ScenarioConfig::from_json(&read(&path)?)?,
        (None, None) => unreachable!("clap requires one source"),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = duration {
        cfg.duration = d;
    }
    let bundle = run_scenario(&cfg)?;
    let files = emit_outputs(&bundle, out)?;
    for p in &bundle.points {
        let Some(m) = &p.metrics else { continue };
        for k in std::iter::once(&m.transmitted).chain(&m.modes) {
            println!(
                "{:<10} {:<12} delay {:>7.3} ns  g2 {:>10.3} ± {:<8.3} rate {:.4e} Hz",
                p.label,
                k.name,
                k.windows.t0 * 1e9,
                k.g2.g2,
                k.g2.sigma,
                k.rate
            );
        }
    }
    println!("wrote {} files to {} (hash {})", files.len(), out.display(), bundle.hash());
    Ok(())
}

fn analyze(tags: &Path, windows: &[f64], before: bool, bin_ps: i64, live_time: Option<f64>) -> Result<(), Failure> {
    let &[t0, t_p, t_bg] = windows else {
        return Err(Failure::Validation("--windows takes three values: t0,tp,tbg".into()));
    };
    let tags = read_tags_csv(&read(tags)?)?;
    let w = CoincidenceWindows {
        t0,
        t_p,
        t_bg,
        background: if before { BackgroundSide::Before } else { BackgroundSide::After },
    };
    w.validate()?;
    let mut idler = channel_times(&tags, Channel::Idler);
    let mut signal = channel_times(&tags, Channel::Signal);
    idler.sort_unstable();
    signal.sort_unstable();
    let span = match (tags.iter().map(|t| t.time_ps).min(), tags.iter().map(|t| t.time_ps).max()) {
        (Some(a), Some(b)) => (b - a) as f64 * 1e-12,
        _ => 0.0,
    };
    let live = live_time.unwrap_or(span);
    if !(live >= 0.0) {
        return Err(Failure::Validation("live time must be non-negative".into()));
    }
    if bin_ps <= 0 {
        return Err(Failure::Validation("bin width must be positive".into()));
    }
    // one bin of slack on both sides of the windows
    let reach = 0.5 * w.t_p + w.t_bg;
    let snap = |t: f64| ((t * 1e12).floor() as i64).div_euclid(bin_ps) * bin_ps;
    let range = (snap(w.t0 - reach) - bin_ps, snap(w.t0 + reach) + 2 * bin_ps);
    let h = build_histogram(&idler, &signal, bin_ps, range, live)?;
    let g2 = g2_windowed(&h, &w)?;
    let rates = if live > 0.0 { Some(window_rates(&h, &w)?) } else { None };
    let report = serde_json::json!({
        "idler_tags": idler.len(),
        "signal_tags": signal.len(),
        "live_time": live,
        "windows": w,
        "g2": g2.g2,
        "sigma": g2.sigma,
        "estimate": g2,
        "rates": rates,
    });
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            preset,
            config,
            seed,
            duration,
            out,
        } => run(preset, config, seed, duration, &out),
        Command::Analyze {
            tags,
            windows,
            before,
            bin_ps,
            live_time,
        } => analyze(&tags, &windows, before, bin_ps, live_time),
        Command::Presets { show: Some(name) } => preset(&name).map_err(Failure::from).map(|cfg| {
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        }),
        Command::Presets { show: None } => {
            for (name, about) in PRESETS {
                println!("{name:<10} {about}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
