//! JSON-configured pipelines that chain the emitter, converter and
//! estimators, write CSV/JSON/SVG artifacts and check recovered values
//! against declared targets.

mod config;
pub mod output;
mod run;
mod sweep;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;

pub use config::{AnalysisStep, Outputs, Scenario, Source, StepKind, Target};
pub use run::run_scenario;
pub use sweep::{set_parameter, sweep, sweep_seed, SweepReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metric {
    pub value: f64,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetOutcome {
    pub metric: String,
    pub value: Option<f64>,
    pub rule: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub metrics: BTreeMap<String, Metric>,
    pub targets: Vec<TargetOutcome>,
    /// Artifact file names, relative to the output directory.
    pub files: Vec<PathBuf>,
}

impl ScenarioReport {
    pub fn all_targets_passed(&self) -> bool {
        self.targets.iter().all(|t| t.passed)
    }

    /// Plain-text table of targets (or of all metrics when none are set).
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario {} (seed {})", self.name, self.seed);
        if self.targets.is_empty() {
            for (name, m) in &self.metrics {
                let _ = match m.sigma {
                    Some(sd) => writeln!(s, "  {name:<40} {:>14.6e} ± {sd:.3e}", m.value),
                    None => writeln!(s, "  {name:<40} {:>14.6e}", m.value),
                };
            }
            return s;
        }
        let _ = writeln!(s, "  {:<40} {:>14} {:<32} result", "metric", "value", "target");
        for t in &self.targets {
            let v = t.value.map_or("missing".to_string(), |v| format!("{v:.6e}"));
            let verdict = if t.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "  {:<40} {:>14} {:<32} {verdict}", t.metric, v, t.rule);
        }
        s
    }
}

pub(crate) fn evaluate_target(t: &Target, metrics: &BTreeMap<String, Metric>) -> TargetOutcome {
    let mut rules = Vec::new();
    if let Some(e) = t.expected {
        let mut r = format!("{e}");
        if let Some(tol) = t.abs_tol {
            r.push_str(&format!(" ± {tol}"));
        }
        if let Some(k) = t.sigmas {
            r.push_str(&format!(" within {k}σ"));
        }
        rules.push(r);
    }
    if let Some(lo) = t.min {
        rules.push(format!(">= {lo}"));
    }
    if let Some(hi) = t.max {
        rules.push(format!("<= {hi}"));
    }
    let rule = rules.join(", ");
    let Some(m) = metrics.get(&t.metric) else {
        return TargetOutcome {
            metric: t.metric.clone(),
            value: None,
            rule,
            passed: false,
        };
    };
    let v = m.value;
    let mut passed = !v.is_nan();
    if let Some(e) = t.expected {
        let by_tol = t.abs_tol.is_some_and(|tol| (v - e).abs() <= tol);
        let by_sigma = match (t.sigmas, m.sigma) {
            (Some(k), Some(sd)) => (v - e).abs() <= k * sd,
            _ => false,
        };
        passed &= by_tol || by_sigma;
    }
    if let Some(lo) = t.min {
        passed &= v >= lo;
    }
    if let Some(hi) = t.max {
        passed &= v <= hi;
    }
    TargetOutcome {
        metric: t.metric.clone(),
        value: Some(v),
        rule,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics() -> BTreeMap<String, Metric> {
        let mut m = BTreeMap::new();
        m.insert("a.tau".into(), Metric { value: 7.6, sigma: Some(0.1) });
        m.insert("a.snr".into(), Metric { value: 21.0, sigma: None });
        m
    }

    fn target(metric: &str) -> Target {
        Target {
            metric: metric.into(),
            expected: None,
            abs_tol: None,
            sigmas: None,
            min: None,
            max: None,
        }
    }

    #[test]
    fn sigma_and_tolerance_rules() {
        let m = metrics();
        let t = Target {
            expected: Some(7.47),
            sigmas: Some(2.0),
            ..target("a.tau")
        };
        assert!(evaluate_target(&t, &m).passed);
        let t = Target {
            expected: Some(7.47),
            sigmas: Some(1.0),
            ..target("a.tau")
        };
        assert!(!evaluate_target(&t, &m).passed);
        let t = Target {
            expected: Some(7.47),
            sigmas: Some(1.0),
            abs_tol: Some(0.2),
            ..target("a.tau")
        };
        assert!(evaluate_target(&t, &m).passed);
    }

    #[test]
    fn bounds_and_missing_metrics() {
        let m = metrics();
        let t = Target {
            min: Some(18.0),
            max: Some(28.0),
            ..target("a.snr")
        };
        assert!(evaluate_target(&t, &m).passed);
        let t = Target { max: Some(20.0), ..target("a.snr") };
        assert!(!evaluate_target(&t, &m).passed);
        let out = evaluate_target(&Target { min: Some(0.0), ..target("nope") }, &m);
        assert!(!out.passed && out.value.is_none());
        // a sigma rule cannot pass on a metric without uncertainty
        let t = Target {
            expected: Some(21.0),
            sigmas: Some(3.0),
            ..target("a.snr")
        };
        assert!(!evaluate_target(&t, &m).passed);
    }
}
