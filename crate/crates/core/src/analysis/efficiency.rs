//! Conversion-efficiency estimators: the pump-power curve fit, the
//! photon-number correction of a power ratio and the coating correction.

use serde::Serialize;

use super::lsq::{levenberg_marquardt, linear_fit, FitResult, LinearFit, Model};
use crate::error::{Error, Result};
use crate::qfc::{efficiency_law, sinc};
use crate::units::Wavelength;

struct EfficiencyModel;

impl Model for EfficiencyModel {
    fn names(&self) -> &'static [&'static str] {
        &["eta_max", "alpha_L2_per_W"]
    }

    fn value(&self, p_w: f64, p: &[f64]) -> f64 {
        efficiency_law(p[0], p[1], p_w)
    }

    fn gradient(&self, p_w: f64, p: &[f64], g: &mut [f64]) {
        let u = (p[1] * p_w.max(0.0)).sqrt();
        g[0] = u.sin().powi(2);
        // d/dα sin²(√(αP)) = P·sinc(2u)
        g[1] = p[0] * p_w * sinc(2.0 * u);
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(1e-12, 1.0), (0.0, f64::INFINITY)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EfficiencyModelKind {
    SinSquared,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyCurveFit {
    pub sin_squared: FitResult,
    pub linear: LinearFit,
    pub linear_chi2_reduced: f64,
    /// The model with the lower reduced χ²; ties go to the sin² law.
    pub preferred: EfficiencyModelKind,
}

/// Fits `η = η_max·sin²(√(αL²·P))` to `(pump power W, efficiency)` points
/// and compares it against a straight line with intercept.
///
/// `sigma = None` fits with unit weights.
pub fn fit_efficiency_curve(points: &[(f64, f64)], sigma: Option<&[f64]>) -> Result<EfficiencyCurveFit> {
    if points.len() < 3 {
        return Err(Error::estimator("efficiency fit needs at least 3 points"));
    }
    if let Some(s) = sigma {
        if s.len() != points.len() || s.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::domain("sigma must be positive, one per point"));
        }
    }
    if points.iter().any(|&(p, e)| !(p >= 0.0 && p.is_finite() && e.is_finite())) {
        return Err(Error::domain("pump powers must be non-negative and finite"));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let s: Vec<f64> = sigma.map(<[f64]>::to_vec).unwrap_or_else(|| vec![1.0; x.len()]);

    let linear = linear_fit(&x, &y, Some(&s))
        .ok_or_else(|| Error::estimator("efficiency points need at least 2 distinct pump powers"))?;
    let p_max = x.iter().cloned().fold(0.0, f64::max);
    if p_max <= 0.0 {
        return Err(Error::estimator("efficiency points need a positive pump power"));
    }

    let init = grid_initial_guess(&x, &y, &s, p_max);
    let sol = levenberg_marquardt(&EfficiencyModel, &x, &y, &s, &init);
    let sin_squared = FitResult::from_solution("sin_squared", &EfficiencyModel, &sol, x.len());

    let dof = x.len() - 2;
    let linear_chi2_reduced = if dof > 0 { linear.chi2 / dof as f64 } else { f64::NAN };
    let preferred = if linear_chi2_reduced < sin_squared.chi2_reduced {
        EfficiencyModelKind::Linear
    } else {
        EfficiencyModelKind::SinSquared
    };
    Ok(EfficiencyCurveFit {
        sin_squared,
        linear,
        linear_chi2_reduced,
        preferred,
    })
}

/// Scans αL² on a log grid up to the first conversion maximum past the
/// largest power, solving η_max in closed form at each step.
fn grid_initial_guess(x: &[f64], y: &[f64], s: &[f64], p_max: f64) -> [f64; 2] {
    let u_max = std::f64::consts::PI;
    let a_hi = u_max * u_max / p_max;
    let mut best = (f64::INFINITY, [1.0, a_hi / 4.0]);
    for i in 0..400 {
        let a = a_hi * 10f64.powf(-6.0 * (1.0 - i as f64 / 399.0));
        let (mut num, mut den) = (0.0, 0.0);
        for ((&p, &e), &si) in x.iter().zip(y).zip(s) {
            let g = efficiency_law(1.0, a, p);
            num += g * e / (si * si);
            den += g * g / (si * si);
        }
        if den <= 0.0 {
            continue;
        }
        let eta_max = (num / den).clamp(1e-12, 1.0);
        let chi2: f64 = x
            .iter()
            .zip(y)
            .zip(s)
            .map(|((&p, &e), &si)| ((e - efficiency_law(eta_max, a, p)) / si).powi(2))
            .sum();
        if chi2 < best.0 {
            best = (chi2, [eta_max, a]);
        }
    }
    best.1
}

/// Photon-number efficiency from a power ratio, `(P_out/P_in)·(λ_out/λ_in)`.
pub fn photon_number_efficiency(
    p_in_w: f64,
    p_out_w: f64,
    lambda_in: Wavelength,
    lambda_out: Wavelength,
) -> Result<f64> {
    if !(p_in_w > 0.0 && p_in_w.is_finite()) {
        return Err(Error::domain("input power must be positive"));
    }
    if !(p_out_w >= 0.0 && p_out_w.is_finite()) {
        return Err(Error::domain("output power must be non-negative"));
    }
    Ok(p_out_w / p_in_w * (lambda_out.meters() / lambda_in.meters()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InternalEfficiency {
    pub value: f64,
    /// False when the corrected efficiency exceeds one.
    pub physical: bool,
}

/// Removes the residual coating reflection loss from a measured efficiency.
pub fn internal_efficiency(measured: f64, coating_loss: f64) -> Result<InternalEfficiency> {
    if !(0.0..=1.0).contains(&measured) {
        return Err(Error::domain("measured efficiency must lie in [0, 1]"));
    }
    if !(0.0..1.0).contains(&coating_loss) {
        return Err(Error::domain("coating loss must lie in [0, 1)"));
    }
    let value = measured / (1.0 - coating_loss);
    Ok(InternalEfficiency {
        value,
        physical: value <= 1.0,
    })
}
