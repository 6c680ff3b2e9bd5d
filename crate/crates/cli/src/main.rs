//! `qfcsim`: run simulation scenarios, parameter sweeps and standalone
//! estimators on QTT1 time-tag files.
//!
//! Exit codes: 0 success, 1 a declared target was missed, 2 invalid
//! configuration or input, 3 an estimator failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand, ValueEnum};
use qfcsim::analysis::{
    fit_bunching, fit_exponential, g2_pulsed, histogram_vs_pulse, noise_density, snr_after_pulse,
    snr_first_bin, G2Options, NoiseNormalization,
};
use qfcsim::emitter::split_50_50;
use qfcsim::scenario::output::{write_csv, write_json};
use qfcsim::scenario::{run_scenario, sweep, Scenario};
use qfcsim::seed::{stage, SeedContract};
use qfcsim::timetag::{read_timetags, Channel, TimeTagRecord};
use qfcsim::Error;

#[derive(Parser)]
#[command(name = "qfcsim", version, about = "Single-photon frequency-conversion simulator")]
struct Cli {
    /// Override the scenario seed. Also seeds the beamsplitter that
    /// `analyze --estimator g2` applies to single-detector files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: the scenario's own, or out/analyze).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and check its targets.
    Simulate { scenario: PathBuf },
    /// Run a scenario once per value of a scalar parameter.
    Sweep {
        scenario: PathBuf,
        /// Dotted path of the parameter, e.g. conversion.pump_power_W.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Apply one estimator to a QTT1 time-tag file.
    Analyze(AnalyzeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Estimator {
    Histogram,
    Lifetime,
    G2,
    NoiseDensity,
}

#[derive(Args)]
struct AnalyzeArgs {
    tags: PathBuf,
    #[arg(long, value_enum)]
    estimator: Estimator,
    #[arg(long, default_value_t = 1e6)]
    rep_rate_hz: f64,
    /// Acquisition time; inferred from the last tag when absent.
    #[arg(long)]
    acquisition_s: Option<f64>,
    #[arg(long, default_value_t = 100)]
    bin_width_ps: u64,
    #[arg(long, default_value_t = 100_000)]
    window_ps: u64,
    #[arg(long, default_value_t = 0)]
    fit_start_ps: u64,
    #[arg(long, default_value_t = 50)]
    max_pulse_sep: u32,
    #[arg(long, default_value_t = 0.75)]
    eta_snspd: f64,
    #[arg(long, default_value_t = 36.5)]
    filter_fwhm_pm: f64,
    #[arg(long)]
    t_fbg: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    dark_cps: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Estimator(_)) => 3,
        _ => 2,
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Simulate { scenario } => {
            let mut sc = Scenario::load(&scenario)?;
            if let Some(seed) = cli.seed {
                sc.seed = seed;
            }
            let dir = cli.out.unwrap_or_else(|| sc.output_dir());
            let report = run_scenario(&sc, &dir)?;
            print!("{}", report.summary_table());
            println!("outputs in {}", dir.display());
            Ok(verdict(report.all_targets_passed()))
        }
        Command::Sweep { scenario, param, values } => {
            let text = std::fs::read_to_string(&scenario)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", scenario.display())))?;
            let mut doc: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
            if let Some(seed) = cli.seed {
                doc["seed"] = seed.into();
            }
            let base: Scenario = serde_json::from_value(doc.clone()).map_err(Error::from)?;
            let dir = cli.out.unwrap_or_else(|| base.output_dir().join("sweep"));
            let report = sweep(&doc, &param, &values, &dir)?;
            for (v, run) in values.iter().zip(&report.runs) {
                println!("{param} = {v}");
                print!("{}", run.summary_table());
            }
            println!("table: {}", dir.join(&report.table).display());
            Ok(verdict(report.all_targets_passed()))
        }
        Command::Analyze(args) => {
            let dir = cli.out.unwrap_or_else(|| PathBuf::from("out/analyze"));
            analyze(&args, cli.seed.unwrap_or(0), &dir)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn verdict(passed: bool) -> ExitCode {
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn load_tags(path: &Path) -> anyhow::Result<Vec<TimeTagRecord>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    Ok(read_timetags(std::io::BufReader::new(file))?)
}

fn analyze(args: &AnalyzeArgs, seed: u64, dir: &Path) -> anyhow::Result<()> {
    let tags = load_tags(&args.tags)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    if args.rep_rate_hz.is_nan() || args.rep_rate_hz <= 0.0 {
        return Err(Error::Config("rep rate must be positive".into()).into());
    }
    let period_s = 1.0 / args.rep_rate_hz;
    let acquisition = args.acquisition_s.unwrap_or_else(|| {
        let last = tags.last().map_or(0.0, |t| t.time_ps as f64 * 1e-12);
        ((last / period_s).floor() + 1.0) * period_s
    });

    match args.estimator {
        Estimator::Histogram | Estimator::Lifetime => {
            let hist = histogram_vs_pulse(&tags, args.rep_rate_hz, args.bin_width_ps, args.window_ps)?
                .with_acquisition(acquisition);
            let rates = hist.values();
            let rows: Vec<Vec<f64>> = hist
                .bin_centers_ps()
                .iter()
                .zip(&hist.counts)
                .zip(&rates)
                .map(|((&c, &n), &r)| vec![c, n as f64, r])
                .collect();
            let csv = write_csv(&dir.join("histogram.csv"), &["bin_center_ps", "counts", "counts_per_s"], &rows)?;
            println!("{} counts in {} bins -> {}", hist.total(), hist.n_bins(), csv.display());
            if let Estimator::Lifetime = args.estimator {
                let sliced = hist.slice_from(args.fit_start_ps);
                let fit = fit_exponential(&sliced)?;
                println!(
                    "tau = {:.4} ± {:.4} ns  A = {:.6e}  B = {:.6e}  A/B = {:.2}  first-bin SNR = {:.2}  converged = {}",
                    fit.param("tau_ns"),
                    fit.sigma("tau_ns"),
                    fit.param("A"),
                    fit.param("B"),
                    snr_after_pulse(&fit),
                    snr_first_bin(&sliced, &fit),
                    fit.converged
                );
                write_json(&dir.join("lifetime_fit.json"), &fit)?;
            }
        }
        Estimator::G2 => {
            let times = |ch: Channel| -> Vec<u64> {
                tags.iter().filter(|t| t.channel == ch).map(|t| t.time_ps).collect()
            };
            let opts = G2Options {
                max_pulse_sep: args.max_pulse_sep,
                baseline_max: args.max_pulse_sep,
                baseline_min: args.max_pulse_sep / 2,
            };
            let (t0, t1) = if tags.iter().any(|t| t.channel == Channel::Second) {
                (times(Channel::Signal), times(Channel::Second))
            } else {
                // single-detector stream: emulate the HBT beamsplitter
                let seed = SeedContract::new(seed).derive(stage::SPLITTER);
                let (a, b) = split_50_50(&tags, seed);
                (a.iter().map(|t| t.time_ps).collect(), b.iter().map(|t| t.time_ps).collect())
            };
            let g2 = g2_pulsed(&t0, &t1, args.rep_rate_hz, opts)?;
            let rows: Vec<Vec<f64>> = (0..g2.separations.len())
                .map(|i| vec![g2.separations[i] as f64, g2.raw[i] as f64, g2.normalized[i]])
                .collect();
            write_csv(&dir.join("g2.csv"), &["separation", "coincidences", "g2"], &rows)?;
            let fit = fit_bunching(&g2)?;
            println!(
                "g2(0) = {:.4}  A = {:.4} ± {:.4}  tau = {:.3} ± {:.3} pulses",
                fit.param("g2_0"),
                fit.param("A"),
                fit.sigma("A"),
                fit.param("tau_pulses"),
                fit.sigma("tau_pulses")
            );
            write_json(&dir.join("g2_fit.json"), &fit)?;
        }
        Estimator::NoiseDensity => {
            let counts = tags.iter().filter(|t| t.channel != Channel::Sync).count() as u64;
            let norm = NoiseNormalization {
                eta_snspd: args.eta_snspd,
                filter_fwhm_pm: args.filter_fwhm_pm,
                t_fbg: args.t_fbg,
                dark_cps: args.dark_cps,
            };
            let est = noise_density(counts, acquisition, &norm)?;
            println!(
                "{counts} counts in {acquisition} s -> {:.4} cts/s/pm, 68% interval [{:.4}, {:.4}]",
                est.density_cts_s_pm, est.ci68.low, est.ci68.high
            );
            write_json(&dir.join("noise_density.json"), &est)?;
        }
    }
    Ok(())
}
