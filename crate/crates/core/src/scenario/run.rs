use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use super::config::{Scenario, Source, StepKind};
use super::output::{write_csv, write_json, Plot, Series, Style};
use super::{evaluate_target, Metric, ScenarioReport};
use crate::analysis::{
    acceptance_bandwidth, fit_bunching, fit_efficiency_curve, fit_exponential, g2_pulsed,
    histogram_vs_pulse, linear_fit, noise_density, snr_after_pulse, snr_first_bin,
    EfficiencyModelKind, FitResult, G2Options, NoiseDensityEstimate, NoiseNormalization,
};
use crate::emitter::{simulate_emission, split_50_50, EmitterConfig};
use crate::error::{Error, Result};
use crate::qfc::{convert_stream, efficiency_law, ConversionConfig};
use crate::seed::{stage, SeedContract};
use crate::timetag::{write_timetags, Channel, TimeTagRecord};

/// Runs every analysis step of `sc`, writing artifacts into `out_dir`
/// (created if needed), and evaluates the targets.
pub fn run_scenario(sc: &Scenario, out_dir: &Path) -> Result<ScenarioReport> {
    sc.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| {
        Error::config(format!("cannot create output directory {}: {e}", out_dir.display()))
    })?;
    let mut ctx = Context {
        sc,
        dir: out_dir,
        root: SeedContract::new(sc.seed),
        emitted: None,
        converted: None,
        metrics: BTreeMap::new(),
        files: Vec::new(),
    };
    if sc.outputs.write_tags && sc.emitter.is_some() {
        ctx.ensure(Source::Emitted)?;
        if sc.conversion.is_some() {
            ctx.ensure(Source::Converted)?;
        }
    }
    for (i, step) in sc.analysis.iter().enumerate() {
        ctx.run_step(i as u64, step.id(), &step.kind)?;
    }
    if sc.outputs.write_tags {
        for (name, stream) in [("emitted.qtt", &ctx.emitted), ("converted.qtt", &ctx.converted)] {
            if let Some(tags) = stream {
                let file = std::fs::File::create(out_dir.join(name))?;
                write_timetags(std::io::BufWriter::new(file), tags)?;
                ctx.files.push(PathBuf::from(name));
            }
        }
    }

    let targets = sc.targets.iter().map(|t| evaluate_target(t, &ctx.metrics)).collect();
    let mut report = ScenarioReport {
        name: sc.name.clone(),
        seed: sc.seed,
        metrics: ctx.metrics,
        targets,
        files: ctx.files,
    };
    report.files.push(PathBuf::from("summary.json"));
    write_json(&out_dir.join("summary.json"), &report)?;
    Ok(report)
}

struct Context<'a> {
    sc: &'a Scenario,
    dir: &'a Path,
    root: SeedContract,
    emitted: Option<Vec<TimeTagRecord>>,
    converted: Option<Vec<TimeTagRecord>>,
    metrics: BTreeMap<String, Metric>,
    files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct LifetimeOutput<'a> {
    fit: &'a FitResult,
    snr_a_over_b: f64,
    snr_first_bin: f64,
}

impl Context<'_> {
    fn emitter(&self) -> &EmitterConfig {
        self.sc.emitter.as_ref().expect("validated: emitter present")
    }

    fn conversion(&self) -> &ConversionConfig {
        self.sc.conversion.as_ref().expect("validated: conversion present")
    }

    fn ensure(&mut self, source: Source) -> Result<&[TimeTagRecord]> {
        if self.emitted.is_none() {
            let tags = simulate_emission(self.emitter(), self.root.derive(stage::EMITTER))?;
            self.emitted = Some(tags);
        }
        if source == Source::Converted && self.converted.is_none() {
            let tags = convert_stream(
                self.emitted.as_deref().unwrap(),
                self.conversion(),
                self.emitter().acquisition_s(),
                self.root.derive(stage::CONVERTER),
            )?;
            self.converted = Some(tags);
        }
        Ok(match source {
            Source::Emitted => self.emitted.as_deref().unwrap(),
            Source::Converted => self.converted.as_deref().unwrap(),
        })
    }

    fn metric(&mut self, id: &str, name: &str, value: f64, sigma: Option<f64>) {
        self.metrics.insert(format!("{id}.{name}"), Metric { value, sigma });
    }

    fn file(&mut self, id: &str, suffix: &str) -> PathBuf {
        let name = format!("{id}_{suffix}");
        self.files.push(PathBuf::from(&name));
        self.dir.join(name)
    }

    fn run_step(&mut self, index: u64, id: &str, kind: &StepKind) -> Result<()> {
        let seed = self.root.block(index + 1).derive(stage::MEASUREMENT);
        match kind {
            StepKind::Lifetime {
                source,
                bin_width_ps,
                window_ps,
                fit_start_ps,
            } => self.lifetime(id, *source, *bin_width_ps, *window_ps, *fit_start_ps),
            StepKind::G2 {
                source,
                emitter,
                max_pulse_sep,
                baseline_min,
                baseline_max,
            } => {
                let opts = G2Options {
                    max_pulse_sep: *max_pulse_sep,
                    baseline_min: *baseline_min,
                    baseline_max: *baseline_max,
                };
                self.g2(id, index, *source, emitter.as_ref(), opts)
            }
            StepKind::NoiseDensity { duration_s, trials } => {
                self.noise_density(id, *duration_s, *trials, seed)
            }
            StepKind::NoiseVsPower { powers_w, duration_s } => {
                self.noise_vs_power(id, powers_w, *duration_s, seed)
            }
            StepKind::NoiseVsFilterCenter { centers_nm, duration_s } => {
                self.noise_vs_center(id, centers_nm, *duration_s, seed)
            }
            StepKind::EfficiencyCurve {
                powers_w,
                noise_sigma,
                reference_power_w,
            } => self.efficiency_curve(id, powers_w, *noise_sigma, *reference_power_w, seed),
            StepKind::Acceptance {
                span_hz,
                step_hz,
                threshold,
                noise_sigma,
            } => self.acceptance(id, *span_hz, *step_hz, *threshold, *noise_sigma, seed),
        }
    }

    fn lifetime(&mut self, id: &str, source: Source, bin_ps: u64, window_ps: u64, start_ps: u64) -> Result<()> {
        let rep = self.emitter().rep_rate_hz;
        let acquisition = self.emitter().acquisition_s();
        let tags = self.ensure(source)?;
        let hist = histogram_vs_pulse(tags, rep, bin_ps, window_ps)?;
        let csv = self.file(id, "histogram.csv");
        let header = ["bin_center_ps", "counts", "counts_per_s"];
        if hist.total() == 0 || acquisition <= 0.0 {
            write_csv(&csv, &header, &[])?;
            return Ok(());
        }
        let hist = hist.with_acquisition(acquisition);
        let rates = hist.values();
        let rows: Vec<Vec<f64>> = hist
            .bin_centers_ps()
            .iter()
            .zip(&hist.counts)
            .zip(&rates)
            .map(|((&c, &n), &r)| vec![c, n as f64, r])
            .collect();
        write_csv(&csv, &header, &rows)?;

        let fitted = hist.slice_from(start_ps);
        let fit = fit_exponential(&fitted)?;
        let snr = snr_after_pulse(&fit);
        let snr_bin = snr_first_bin(&fitted, &fit);
        for name in ["A", "B"] {
            self.metric(id, name, fit.param(name), Some(fit.sigma(name)));
        }
        self.metric(id, "tau_ns", fit.param("tau_ns"), Some(fit.sigma("tau_ns")));
        self.metric(id, "snr", snr, None);
        self.metric(id, "snr_first_bin", snr_bin, None);
        self.metric(id, "chi2_reduced", fit.chi2_reduced, None);
        self.metric(id, "counts", hist.total() as f64, None);
        let json = self.file(id, "fit.json");
        write_json(
            &json,
            &LifetimeOutput {
                fit: &fit,
                snr_a_over_b: snr,
                snr_first_bin: snr_bin,
            },
        )?;

        let (a, tau, b) = (fit.param("A"), fit.param("tau_ns"), fit.param("B"));
        let centers_ns: Vec<f64> = fitted.bin_centers_ps().iter().map(|c| c * 1e-3).collect();
        let plot = Plot {
            title: format!("{}: {id}", self.sc.name),
            x_label: "delay after pulse (ns)".into(),
            y_label: "counts per second".into(),
            log_y: true,
            series: vec![
                Series {
                    label: "data".into(),
                    points: hist
                        .bin_centers_ps()
                        .iter()
                        .zip(&rates)
                        .map(|(c, r)| (c * 1e-3, *r))
                        .collect(),
                    style: Style::Points,
                },
                Series {
                    label: format!("fit: tau = {tau:.3} ns, A/B = {snr:.1}"),
                    points: centers_ns.iter().map(|&t| (t, a * (-t / tau).exp() + b)).collect(),
                    style: Style::Line,
                },
            ],
        };
        let svg = self.file(id, "plot.svg");
        plot.write(&svg)?;
        Ok(())
    }

    fn g2(
        &mut self,
        id: &str,
        index: u64,
        source: Source,
        own: Option<&EmitterConfig>,
        opts: G2Options,
    ) -> Result<()> {
        let step_root = self.root.block(index + 1);
        let owned;
        let (tags, rep): (&[TimeTagRecord], f64) = match own {
            Some(cfg) => {
                let mut tags = simulate_emission(cfg, step_root.derive(stage::EMITTER))?;
                if source == Source::Converted {
                    tags = convert_stream(
                        &tags,
                        self.conversion(),
                        cfg.acquisition_s(),
                        step_root.derive(stage::CONVERTER),
                    )?;
                }
                owned = tags;
                (&owned, cfg.rep_rate_hz)
            }
            None => {
                let rep = self.emitter().rep_rate_hz;
                (self.ensure(source)?, rep)
            }
        };

        let has_second = tags.iter().any(|t| t.channel == Channel::Second);
        let (t0, t1): (Vec<u64>, Vec<u64>) = if has_second {
            (
                tags.iter().filter(|t| t.channel == Channel::Signal).map(|t| t.time_ps).collect(),
                tags.iter().filter(|t| t.channel == Channel::Second).map(|t| t.time_ps).collect(),
            )
        } else {
            let (a, b) = split_50_50(tags, step_root.derive(stage::SPLITTER));
            (
                a.iter().map(|t| t.time_ps).collect(),
                b.iter().map(|t| t.time_ps).collect(),
            )
        };
        let csv = self.file(id, "g2.csv");
        let header = ["separation", "coincidences", "g2"];
        if t0.is_empty() && t1.is_empty() {
            write_csv(&csv, &header, &[])?;
            return Ok(());
        }
        let g2 = g2_pulsed(&t0, &t1, rep, opts)?;
        let rows: Vec<Vec<f64>> = (0..g2.separations.len())
            .map(|i| vec![g2.separations[i] as f64, g2.raw[i] as f64, g2.normalized[i]])
            .collect();
        write_csv(&csv, &header, &rows)?;

        let fit = fit_bunching(&g2)?;
        for name in ["A", "tau_pulses", "g2_0"] {
            self.metric(id, name, fit.param(name), Some(fit.sigma(name)));
        }
        self.metric(id, "baseline", g2.baseline, None);
        self.metric(id, "chi2_reduced", fit.chi2_reduced, None);
        let json = self.file(id, "fit.json");
        write_json(&json, &fit)?;

        let (a, tau) = (fit.param("A"), fit.param("tau_pulses"));
        let plot = Plot {
            title: format!("{}: {id}", self.sc.name),
            x_label: "pulse separation".into(),
            y_label: "g2".into(),
            log_y: false,
            series: vec![
                Series {
                    label: "data".into(),
                    points: g2
                        .separations
                        .iter()
                        .zip(&g2.normalized)
                        .map(|(&n, &v)| (n as f64, v))
                        .collect(),
                    style: Style::Points,
                },
                Series {
                    label: format!("fit: A = {a:.3}, tau = {tau:.2}, g2(0) = {:.3}", fit.param("g2_0")),
                    points: g2
                        .separations
                        .iter()
                        .filter(|&&n| n != 0)
                        .map(|&n| (n as f64, 1.0 + a * (-(n.abs() as f64) / tau).exp()))
                        .collect(),
                    style: Style::Line,
                },
            ],
        };
        let svg = self.file(id, "plot.svg");
        plot.write(&svg)?;
        Ok(())
    }

    fn noise_density(&mut self, id: &str, duration_s: f64, trials: u32, seed: SeedContract) -> Result<()> {
        let cfg = self.conversion().clone();
        let truth = cfg.noise_density();
        let estimates: Vec<NoiseDensityEstimate> = (0..trials as u64)
            .into_par_iter()
            .map(|k| measure_noise(&cfg, duration_s, seed.derive(k)))
            .collect::<Result<_>>()?;
        let rows: Vec<Vec<f64>> = estimates
            .iter()
            .enumerate()
            .map(|(k, e)| vec![k as f64, e.counts as f64, e.density_cts_s_pm, e.ci68.low, e.ci68.high])
            .collect();
        let csv = self.file(id, "trials.csv");
        write_csv(&csv, &["trial", "counts", "density_cts_s_pm", "ci68_low", "ci68_high"], &rows)?;

        let n = estimates.len() as f64;
        let mean = estimates.iter().map(|e| e.density_cts_s_pm).sum::<f64>() / n;
        if estimates.len() == 1 {
            let e = &estimates[0];
            self.metric(id, "density", mean, Some(0.5 * (e.ci68.high - e.ci68.low)));
            self.metric(id, "ci68_low", e.ci68.low, None);
            self.metric(id, "ci68_high", e.ci68.high, None);
        } else {
            let var = estimates
                .iter()
                .map(|e| (e.density_cts_s_pm - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0);
            self.metric(id, "density", mean, Some((var / n).sqrt()));
        }
        let covered = estimates.iter().filter(|e| e.ci68.contains(truth)).count() as f64;
        self.metric(id, "coverage", covered / n, None);
        self.metric(id, "min_ci68_low", estimates.iter().map(|e| e.ci68.low).fold(f64::INFINITY, f64::min), None);
        Ok(())
    }

    fn noise_vs_power(&mut self, id: &str, powers: &[f64], duration_s: f64, seed: SeedContract) -> Result<()> {
        let base = self.conversion().clone();
        let estimates: Vec<NoiseDensityEstimate> = powers
            .par_iter()
            .enumerate()
            .map(|(k, &p)| {
                let cfg = ConversionConfig {
                    pump_power_w: p,
                    ..base.clone()
                };
                measure_noise(&cfg, duration_s, seed.derive(k as u64))
            })
            .collect::<Result<_>>()?;
        self.density_scan(id, "pump_power_W", powers, &estimates, "pump power (W)", "slope_per_W")
    }

    fn noise_vs_center(&mut self, id: &str, centers: &[f64], duration_s: f64, seed: SeedContract) -> Result<()> {
        // The pump-induced noise is flat over the scanned band: every center
        // sees the same density.
        let cfg = self.conversion().clone();
        let estimates: Vec<NoiseDensityEstimate> = (0..centers.len() as u64)
            .into_par_iter()
            .map(|k| measure_noise(&cfg, duration_s, seed.derive(k)))
            .collect::<Result<_>>()?;
        self.density_scan(id, "filter_center_nm", centers, &estimates, "filter center (nm)", "slope_per_nm")
    }

    fn density_scan(
        &mut self,
        id: &str,
        x_name: &str,
        xs: &[f64],
        estimates: &[NoiseDensityEstimate],
        x_label: &str,
        slope_name: &str,
    ) -> Result<()> {
        let ys: Vec<f64> = estimates.iter().map(|e| e.density_cts_s_pm).collect();
        let sig: Vec<f64> = estimates
            .iter()
            .map(|e| (0.5 * (e.ci68.high - e.ci68.low)).max(1e-12))
            .collect();
        let rows: Vec<Vec<f64>> = (0..xs.len())
            .map(|i| {
                let e = &estimates[i];
                vec![xs[i], e.counts as f64, e.density_cts_s_pm, e.ci68.low, e.ci68.high]
            })
            .collect();
        let csv = self.file(id, "scan.csv");
        write_csv(&csv, &[x_name, "counts", "density_cts_s_pm", "ci68_low", "ci68_high"], &rows)?;

        let fit = linear_fit(xs, &ys, Some(&sig))
            .ok_or_else(|| Error::estimator("scan needs at least two distinct abscissae"))?;
        self.metric(id, slope_name, fit.slope, Some(fit.sigma_slope));
        self.metric(id, "intercept", fit.intercept, Some(fit.sigma_intercept));
        self.metric(id, "r_squared", fit.r_squared, None);
        let w: Vec<f64> = sig.iter().map(|s| 1.0 / (s * s)).collect();
        let sw: f64 = w.iter().sum();
        let mean = w.iter().zip(&ys).map(|(w, y)| w * y).sum::<f64>() / sw;
        let chi2_flat: f64 = ys.iter().zip(&sig).map(|(y, s)| ((y - mean) / s).powi(2)).sum();
        self.metric(id, "mean_density", mean, Some(sw.sqrt().recip()));
        self.metric(id, "chi2_reduced_flat", chi2_flat / (ys.len() - 1) as f64, None);

        let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let plot = Plot {
            title: format!("{}: {id}", self.sc.name),
            x_label: x_label.into(),
            y_label: "noise density (cts/s/pm)".into(),
            log_y: false,
            series: vec![
                Series {
                    label: "estimate".into(),
                    points: xs.iter().copied().zip(ys.iter().copied()).collect(),
                    style: Style::Points,
                },
                Series {
                    label: "68% interval".into(),
                    points: xs
                        .iter()
                        .zip(estimates)
                        .flat_map(|(&x, e)| [(x, e.ci68.low), (x, e.ci68.high)])
                        .collect(),
                    style: Style::Points,
                },
                Series {
                    label: format!("linear fit, R² = {:.4}", fit.r_squared),
                    points: vec![(lo, fit.slope * lo + fit.intercept), (hi, fit.slope * hi + fit.intercept)],
                    style: Style::Line,
                },
            ],
        };
        let svg = self.file(id, "plot.svg");
        plot.write(&svg)?;
        Ok(())
    }

    fn efficiency_curve(
        &mut self,
        id: &str,
        powers: &[f64],
        noise_sigma: f64,
        reference_w: f64,
        seed: SeedContract,
    ) -> Result<()> {
        let cfg = self.conversion().clone();
        let mut rng = seed.rng();
        let noise = (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).unwrap());
        let points: Vec<(f64, f64)> = powers
            .iter()
            .map(|&p| {
                let e = cfg.efficiency_at_power(p);
                (p, e + noise.as_ref().map_or(0.0, |n| n.sample(&mut rng)))
            })
            .collect();
        let sigma = vec![noise_sigma.max(1e-6); points.len()];
        let fit = fit_efficiency_curve(&points, Some(&sigma))?;
        let s2 = &fit.sin_squared;
        let (eta_max, alpha) = (s2.param("eta_max"), s2.param("alpha_L2_per_W"));
        self.metric(id, "eta_max", eta_max, Some(s2.sigma("eta_max")));
        self.metric(id, "alpha_L2_per_W", alpha, Some(s2.sigma("alpha_L2_per_W")));
        self.metric(id, "eta_at_reference", efficiency_law(eta_max, alpha, reference_w), None);
        self.metric(id, "chi2_reduced_sin_squared", s2.chi2_reduced, None);
        self.metric(id, "chi2_reduced_linear", fit.linear_chi2_reduced, None);
        self.metric(id, "linear_slope_per_W", fit.linear.slope, Some(fit.linear.sigma_slope));
        let linear_preferred = (fit.preferred == EfficiencyModelKind::Linear) as u8;
        self.metric(id, "linear_preferred", linear_preferred as f64, None);

        let rows: Vec<Vec<f64>> = points
            .iter()
            .map(|&(p, e)| {
                vec![p, e, efficiency_law(eta_max, alpha, p), fit.linear.slope * p + fit.linear.intercept]
            })
            .collect();
        let csv = self.file(id, "curve.csv");
        write_csv(&csv, &["pump_power_W", "eta", "eta_fit_sin_squared", "eta_fit_linear"], &rows)?;
        let json = self.file(id, "fit.json");
        write_json(&json, &fit)?;

        let p_max = powers.iter().cloned().fold(0.0, f64::max);
        let plot = Plot {
            title: format!("{}: {id}", self.sc.name),
            x_label: "pump power (W)".into(),
            y_label: "conversion efficiency".into(),
            log_y: false,
            series: vec![
                Series {
                    label: "data".into(),
                    points: points.clone(),
                    style: Style::Points,
                },
                Series {
                    label: format!("sin² fit, eta_max = {eta_max:.3}"),
                    points: (0..=100)
                        .map(|i| {
                            let p = p_max * i as f64 / 100.0;
                            (p, efficiency_law(eta_max, alpha, p))
                        })
                        .collect(),
                    style: Style::Line,
                },
                Series {
                    label: "linear fit".into(),
                    points: vec![(0.0, fit.linear.intercept), (p_max, fit.linear.slope * p_max + fit.linear.intercept)],
                    style: Style::Line,
                },
            ],
        };
        let svg = self.file(id, "plot.svg");
        plot.write(&svg)?;
        Ok(())
    }

    fn acceptance(
        &mut self,
        id: &str,
        span_hz: f64,
        step_hz: f64,
        threshold: f64,
        noise_sigma: f64,
        seed: SeedContract,
    ) -> Result<()> {
        let cfg = self.conversion().clone();
        let peak = cfg.efficiency_at_power(cfg.pump_power_w);
        let mut rng = seed.rng();
        let noise = (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).unwrap());
        let n = (span_hz / step_hz).floor() as i64;
        let points: Vec<(f64, f64)> = (-n..=n)
            .map(|i| {
                let d = i as f64 * step_hz;
                let e = peak * cfg.spectral_acceptance(d);
                (d, e + noise.as_ref().map_or(0.0, |n| n.sample(&mut rng)))
            })
            .collect();
        let max = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let rows: Vec<Vec<f64>> = points.iter().map(|&(d, e)| vec![d, e, e / max]).collect();
        let csv = self.file(id, "scan.csv");
        write_csv(&csv, &["detuning_hz", "eta", "eta_relative"], &rows)?;

        let width = acceptance_bandwidth(&points, threshold)?;
        self.metric(id, "width_hz", width, None);
        self.metric(id, "width_ghz", width * 1e-9, None);

        let plot = Plot {
            title: format!("{}: {id}", self.sc.name),
            x_label: "input detuning (GHz)".into(),
            y_label: "relative efficiency".into(),
            log_y: false,
            series: vec![
                Series {
                    label: "scan".into(),
                    points: points.iter().map(|&(d, e)| (d * 1e-9, e / max)).collect(),
                    style: Style::Points,
                },
                Series {
                    label: format!("{:.0}% level, width {:.1} GHz", threshold * 100.0, width * 1e-9),
                    points: vec![(-span_hz * 1e-9, threshold), (span_hz * 1e-9, threshold)],
                    style: Style::Line,
                },
            ],
        };
        let svg = self.file(id, "plot.svg");
        plot.write(&svg)?;
        Ok(())
    }
}

/// One noise-only acquisition through the converter, estimated back to a
/// density.
pub(crate) fn measure_noise(cfg: &ConversionConfig, duration_s: f64, seed: SeedContract) -> Result<NoiseDensityEstimate> {
    let tags = convert_stream(&[], cfg, duration_s, seed)?;
    let norm = NoiseNormalization {
        eta_snspd: cfg.eta_snspd,
        filter_fwhm_pm: cfg.filter_fwhm_pm,
        t_fbg: Some(cfg.t_fbg),
        dark_cps: cfg.dark_count_cps,
    };
    noise_density(tags.len() as u64, duration_s, &norm)
}
