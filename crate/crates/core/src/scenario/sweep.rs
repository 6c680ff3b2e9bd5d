use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use super::output::write_csv;
use super::{run_scenario, Scenario, ScenarioReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub param: String,
    pub values: Vec<f64>,
    pub runs: Vec<ScenarioReport>,
    /// Aggregated table, relative to the output directory.
    pub table: PathBuf,
}

impl SweepReport {
    pub fn all_targets_passed(&self) -> bool {
        self.runs.iter().all(ScenarioReport::all_targets_passed)
    }
}

/// Seed of sweep point `index`; point 0 keeps the base seed.
pub fn sweep_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add((index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Sets the scalar at dotted `path` (e.g. `conversion.pump_power_W`) in a
/// scenario JSON document. The final key may be absent if its parent object
/// exists; anything other than a number there is a config error.
pub fn set_parameter(doc: &mut Value, path: &str, value: f64) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::config(format!("malformed parameter path '{path}'")));
    }
    let (last, parents) = keys.split_last().unwrap();
    let mut node = doc;
    for key in parents {
        node = node
            .get_mut(*key)
            .filter(|v| v.is_object())
            .ok_or_else(|| Error::config(format!("'{path}': '{key}' is not a config section")))?;
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::config(format!("'{path}' does not address a config field")))?;
    if let Some(old) = obj.get(*last) {
        if !old.is_number() {
            return Err(Error::config(format!("'{path}' is not a scalar numeric field")));
        }
    }
    obj.insert(last.to_string(), number(value)?);
    Ok(())
}

fn number(v: f64) -> Result<Value> {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        return Ok(Value::from(v as i64));
    }
    serde_json::Number::from_f64(v)
        .map(Value::Number)
        .ok_or_else(|| Error::config("sweep values must be finite"))
}

/// Runs the scenario once per value of `param`, each in its own
/// subdirectory of `out_dir`, and writes `sweep.csv` with one row per value.
pub fn sweep(base: &Value, param: &str, values: &[f64], out_dir: &Path) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let base_sc: Scenario = serde_json::from_value(base.clone())?;
    base_sc.validate()?;
    let docs: Vec<Value> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut doc = base.clone();
            set_parameter(&mut doc, param, v)?;
            if param != "seed" {
                doc["seed"] = Value::from(sweep_seed(base_sc.seed, i));
            }
            Ok(doc)
        })
        .collect::<Result<_>>()?;
    let scenarios: Vec<Scenario> = docs
        .into_iter()
        .map(|d| {
            let sc: Scenario = serde_json::from_value(d)?;
            sc.validate()?;
            Ok(sc)
        })
        .collect::<Result<_>>()?;

    std::fs::create_dir_all(out_dir)?;
    let runs: Vec<ScenarioReport> = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, sc)| run_scenario(sc, &out_dir.join(format!("point_{i:03}"))))
        .collect::<Result<_>>()?;

    let names: BTreeSet<&String> = runs.iter().flat_map(|r| r.metrics.keys()).collect();
    let mut header = vec!["index".to_string(), param.to_string()];
    header.extend(names.iter().map(|n| n.to_string()));
    header.push("targets_passed".into());
    let rows: Vec<Vec<f64>> = runs
        .iter()
        .zip(values)
        .enumerate()
        .map(|(i, (r, &v))| {
            let mut row = vec![i as f64, v];
            row.extend(names.iter().map(|n| r.metrics.get(*n).map_or(f64::NAN, |m| m.value)));
            row.push(r.all_targets_passed() as u8 as f64);
            row
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&out_dir.join("sweep.csv"), &header_refs, &rows)?;
    Ok(SweepReport {
        param: param.to_string(),
        values: values.to_vec(),
        runs,
        table: PathBuf::from("sweep.csv"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn sets_nested_and_missing_scalars() {
        let mut doc = json!({"seed": 1, "conversion": {"pump_power_W": 350.0}});
        set_parameter(&mut doc, "conversion.pump_power_W", 100.5).unwrap();
        assert_eq!(doc["conversion"]["pump_power_W"], json!(100.5));
        set_parameter(&mut doc, "conversion.fiber_noise_cps", 3.0).unwrap();
        assert_eq!(doc["conversion"]["fiber_noise_cps"], json!(3));
    }

    #[test]
    fn rejects_non_scalar_paths() {
        let mut doc = json!({"name": "x", "conversion": {"a": 1.0}, "analysis": []});
        for bad in ["conversion", "analysis", "name", "emitter.n_pulses", "conversion..a", ""] {
            assert!(matches!(set_parameter(&mut doc, bad, 1.0), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn seed_zero_is_the_base_seed() {
        assert_eq!(sweep_seed(42, 0), 42);
        assert_ne!(sweep_seed(42, 1), sweep_seed(42, 2));
    }
}
