use std::path::{Path, PathBuf};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::emitter::EmitterConfig;
use crate::error::{Error, Result};
use crate::qfc::ConversionConfig;

/// A complete simulation-and-analysis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub emitter: Option<EmitterConfig>,
    #[serde(default)]
    pub conversion: Option<ConversionConfig>,
    #[serde(default)]
    pub analysis: Vec<AnalysisStep>,
    #[serde(default)]
    pub targets: Vec<Target>,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    /// Output directory; `out/<name>` when absent.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Also write the simulated streams as QTT1 files.
    #[serde(default)]
    pub write_tags: bool,
}

/// Which simulated stream an estimator reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[default]
    Emitted,
    Converted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisStep {
    /// Prefix of the step's metric names and output files.
    pub id: Option<String>,
    #[serde(flatten)]
    pub kind: StepKind,
}

impl AnalysisStep {
    pub fn id(&self) -> &str {
        self.id.as_deref().unwrap_or_else(|| self.kind.name())
    }
}

impl<'de> Deserialize<'de> for AnalysisStep {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let mut value = serde_json::Value::deserialize(d)?;
        let id = match value.as_object_mut().and_then(|m| m.remove("id")) {
            None => None,
            Some(serde_json::Value::String(s)) => Some(s),
            Some(_) => return Err(D::Error::custom("step id must be a string")),
        };
        let kind = StepKind::deserialize(value).map_err(D::Error::custom)?;
        Ok(AnalysisStep { id, kind })
    }
}

fn default_bin_width() -> u64 {
    100
}
fn default_window() -> u64 {
    100_000
}
fn default_max_sep() -> u32 {
    50
}
fn default_baseline_min() -> u32 {
    25
}
fn default_threshold() -> f64 {
    0.8
}
fn default_trials() -> u32 {
    1
}
fn default_reference_power() -> f64 {
    360.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepKind {
    /// Delay histogram and exponential fit.
    Lifetime {
        #[serde(default)]
        source: Source,
        #[serde(default = "default_bin_width")]
        bin_width_ps: u64,
        #[serde(default = "default_window")]
        window_ps: u64,
        /// Bins starting before this delay are excluded from the fit.
        #[serde(default)]
        fit_start_ps: u64,
    },
    /// 50:50 split, pulsed g² and bunching fit.
    G2 {
        #[serde(default)]
        source: Source,
        /// Simulate a dedicated emitter run instead of the shared one.
        #[serde(default)]
        emitter: Option<EmitterConfig>,
        #[serde(default = "default_max_sep")]
        max_pulse_sep: u32,
        #[serde(default = "default_baseline_min")]
        baseline_min: u32,
        #[serde(default = "default_max_sep")]
        baseline_max: u32,
    },
    /// Noise-only acquisitions at the configured pump power.
    NoiseDensity {
        duration_s: f64,
        /// Repeated acquisitions; with more than one, the fraction of
        /// intervals covering the configured density is reported.
        #[serde(default = "default_trials")]
        trials: u32,
    },
    NoiseVsPower { powers_w: Vec<f64>, duration_s: f64 },
    /// Noise density at several filter center wavelengths.
    NoiseVsFilterCenter { centers_nm: Vec<f64>, duration_s: f64 },
    EfficiencyCurve {
        powers_w: Vec<f64>,
        /// Gaussian measurement noise added to each efficiency point.
        #[serde(default)]
        noise_sigma: f64,
        #[serde(default = "default_reference_power")]
        reference_power_w: f64,
    },
    /// Detuning scan of the converted efficiency and its acceptance width.
    Acceptance {
        span_hz: f64,
        step_hz: f64,
        #[serde(default = "default_threshold")]
        threshold: f64,
        #[serde(default)]
        noise_sigma: f64,
    },
}

impl StepKind {
    pub fn name(&self) -> &'static str {
        match self {
            StepKind::Lifetime { .. } => "lifetime",
            StepKind::G2 { .. } => "g2",
            StepKind::NoiseDensity { .. } => "noise_density",
            StepKind::NoiseVsPower { .. } => "noise_vs_power",
            StepKind::NoiseVsFilterCenter { .. } => "noise_vs_filter_center",
            StepKind::EfficiencyCurve { .. } => "efficiency_curve",
            StepKind::Acceptance { .. } => "acceptance",
        }
    }
}

/// Expected value of one metric. `expected` is checked against
/// `abs_tol` and/or `sigmas` times the metric's own uncertainty (passing if
/// either holds); `min` and `max` are hard bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub metric: String,
    #[serde(default)]
    pub expected: Option<f64>,
    #[serde(default)]
    pub abs_tol: Option<f64>,
    #[serde(default)]
    pub sigmas: Option<f64>,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario> {
        let sc: Scenario = serde_json::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Scenario::from_json(&text)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.outputs
            .dir
            .clone()
            .unwrap_or_else(|| Path::new("out").join(&self.name))
    }

    /// Checks the configs and that every step's input stream or model is
    /// declared.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config("scenario name must be a non-empty file name"));
        }
        if let Some(e) = &self.emitter {
            e.validate()?;
        }
        if let Some(c) = &self.conversion {
            c.validate()?;
        }
        let mut ids = std::collections::BTreeSet::new();
        for step in &self.analysis {
            let id = step.id();
            if !ids.insert(id.to_string()) {
                return Err(Error::config(format!("duplicate analysis step id '{id}'")));
            }
            if id.is_empty() || id.contains(['/', '\\', '.']) {
                return Err(Error::config(format!("invalid step id '{id}'")));
            }
            self.validate_step(step)?;
        }
        for t in &self.targets {
            if t.expected.is_none() && t.min.is_none() && t.max.is_none() {
                return Err(Error::config(format!("target '{}' checks nothing", t.metric)));
            }
            if t.expected.is_some() && t.abs_tol.is_none() && t.sigmas.is_none() {
                return Err(Error::config(format!(
                    "target '{}' needs abs_tol or sigmas with expected",
                    t.metric
                )));
            }
        }
        Ok(())
    }

    fn validate_step(&self, step: &AnalysisStep) -> Result<()> {
        let id = step.id();
        let need_conversion = || {
            self.conversion
                .is_some()
                .then_some(())
                .ok_or_else(|| Error::config(format!("step '{id}' needs a conversion config")))
        };
        let need_stream = |source: Source, own_emitter: bool| -> Result<()> {
            if !own_emitter && self.emitter.is_none() {
                return Err(Error::config(format!("step '{id}' needs an emitter config")));
            }
            if source == Source::Converted {
                need_conversion()?;
            }
            Ok(())
        };
        let positive = |x: f64, what: &str| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("step '{id}': {what} must be positive")))
            }
        };
        match &step.kind {
            StepKind::Lifetime {
                source,
                bin_width_ps,
                window_ps,
                fit_start_ps,
            } => {
                need_stream(*source, false)?;
                if *bin_width_ps == 0 || window_ps % bin_width_ps != 0 || window_ps == &0 {
                    return Err(Error::config(format!(
                        "step '{id}': bin_width_ps must divide a positive window_ps"
                    )));
                }
                if fit_start_ps >= window_ps {
                    return Err(Error::config(format!("step '{id}': fit_start_ps beyond window")));
                }
                let period = self.emitter.as_ref().map(|e| e.period_ps()).unwrap_or(f64::INFINITY);
                if *window_ps as f64 > period {
                    return Err(Error::config(format!("step '{id}': window exceeds the pulse period")));
                }
            }
            StepKind::G2 {
                source,
                emitter,
                max_pulse_sep,
                baseline_min,
                baseline_max,
            } => {
                need_stream(*source, emitter.is_some())?;
                if let Some(e) = emitter {
                    e.validate()?;
                }
                if baseline_min > baseline_max || baseline_max > max_pulse_sep {
                    return Err(Error::config(format!(
                        "step '{id}': need baseline_min <= baseline_max <= max_pulse_sep"
                    )));
                }
            }
            StepKind::NoiseDensity { duration_s, trials } => {
                need_conversion()?;
                positive(*duration_s, "duration_s")?;
                if *trials == 0 {
                    return Err(Error::config(format!("step '{id}': trials must be positive")));
                }
            }
            StepKind::NoiseVsPower { powers_w, duration_s } => {
                need_conversion()?;
                positive(*duration_s, "duration_s")?;
                if powers_w.len() < 2 || powers_w.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                    return Err(Error::config(format!(
                        "step '{id}': need at least two non-negative pump powers"
                    )));
                }
            }
            StepKind::NoiseVsFilterCenter { centers_nm, duration_s } => {
                need_conversion()?;
                positive(*duration_s, "duration_s")?;
                if centers_nm.len() < 2 || centers_nm.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
                    return Err(Error::config(format!(
                        "step '{id}': need at least two positive filter centers"
                    )));
                }
            }
            StepKind::EfficiencyCurve {
                powers_w,
                noise_sigma,
                reference_power_w,
            } => {
                need_conversion()?;
                if powers_w.len() < 3 || powers_w.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                    return Err(Error::config(format!(
                        "step '{id}': need at least three non-negative pump powers"
                    )));
                }
                if !(*noise_sigma >= 0.0 && noise_sigma.is_finite()) {
                    return Err(Error::config(format!("step '{id}': noise_sigma must be >= 0")));
                }
                positive(*reference_power_w, "reference_power_w")?;
            }
            StepKind::Acceptance {
                span_hz,
                step_hz,
                threshold,
                noise_sigma,
            } => {
                need_conversion()?;
                positive(*span_hz, "span_hz")?;
                positive(*step_hz, "step_hz")?;
                if span_hz / step_hz > 1e6 {
                    return Err(Error::config(format!("step '{id}': too many scan points")));
                }
                if !(*threshold > 0.0 && *threshold < 1.0) {
                    return Err(Error::config(format!("step '{id}': threshold must lie in (0, 1)")));
                }
                if !(*noise_sigma >= 0.0 && noise_sigma.is_finite()) {
                    return Err(Error::config(format!("step '{id}': noise_sigma must be >= 0")));
                }
            }
        }
        Ok(())
    }
}
