//! Damped nonlinear least squares (Levenberg–Marquardt) with analytic
//! Jacobians, plus closed-form weighted linear regression.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// A model `f(x; p)` with analytic partial derivatives.
pub(crate) trait Model {
    fn names(&self) -> &'static [&'static str];
    fn value(&self, x: f64, p: &[f64]) -> f64;
    fn gradient(&self, x: f64, p: &[f64], grad: &mut [f64]);
    /// Per-parameter `(lower, upper)` bounds; steps are projected onto them.
    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(f64::NEG_INFINITY, f64::INFINITY); self.names().len()]
    }
}

pub(crate) const MAX_ITERATIONS: usize = 500;
pub(crate) const STEP_TOLERANCE: f64 = 1e-10;
pub(crate) const GRADIENT_TOLERANCE: f64 = 1e-12;

pub(crate) struct Solution {
    pub params: Vec<f64>,
    /// `(JᵀWJ)⁻¹` at the optimum, if the normal matrix is invertible.
    pub covariance: Option<DMatrix<f64>>,
    pub chi2: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn chi2_of<M: Model>(m: &M, x: &[f64], y: &[f64], sigma: &[f64], p: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(sigma)
        .map(|((&xi, &yi), &si)| ((yi - m.value(xi, p)) / si).powi(2))
        .sum()
}

fn normal_equations<M: Model>(
    m: &M,
    x: &[f64],
    y: &[f64],
    sigma: &[f64],
    p: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let k = p.len();
    let mut jtj = DMatrix::zeros(k, k);
    let mut jtr = DVector::zeros(k);
    let mut g = vec![0.0; k];
    for ((&xi, &yi), &si) in x.iter().zip(y).zip(sigma) {
        m.gradient(xi, p, &mut g);
        let w = 1.0 / (si * si);
        let r = yi - m.value(xi, p);
        for a in 0..k {
            jtr[a] += w * g[a] * r;
            for b in 0..=a {
                jtj[(a, b)] += w * g[a] * g[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            jtj[(b, a)] = jtj[(a, b)];
        }
    }
    (jtj, jtr)
}

fn project(p: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in p.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// Minimizes `Σ ((y − f(x; p)) / σ)²` from `init`.
///
/// Converges when an accepted step is smaller than `STEP_TOLERANCE`
/// relative to the parameter vector, when the weighted gradient norm drops
/// below `GRADIENT_TOLERANCE`, or when the damping has grown so large that
/// the trial step itself is below the step tolerance.
pub(crate) fn levenberg_marquardt<M: Model>(
    model: &M,
    x: &[f64],
    y: &[f64],
    sigma: &[f64],
    init: &[f64],
) -> Solution {
    let bounds = model.bounds();
    let mut p = init.to_vec();
    project(&mut p, &bounds);
    let mut chi2 = chi2_of(model, x, y, sigma, &p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = normal_equations(model, x, y, sigma, &p);
        if jtr.norm() < GRADIENT_TOLERANCE || chi2 == 0.0 {
            converged = true;
            break;
        }
        let scale = jtj.diagonal().max().max(f64::MIN_POSITIVE);
        let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();

        // inner loop: raise damping until the step lowers chi²
        loop {
            let mut damped = jtj.clone();
            for a in 0..p.len() {
                damped[(a, a)] += lambda * (jtj[(a, a)] + 1e-12 * scale);
            }
            let Some(delta) = damped.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                if lambda > 1e30 {
                    break;
                }
                continue;
            };
            let mut trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            project(&mut trial, &bounds);
            let step = trial
                .iter()
                .zip(&p)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let small = step <= STEP_TOLERANCE * (p_norm + STEP_TOLERANCE);
            let trial_chi2 = chi2_of(model, x, y, sigma, &trial);
            if trial_chi2 <= chi2 {
                p = trial;
                chi2 = trial_chi2;
                lambda = (lambda / 10.0).max(1e-12);
                converged = small;
                break;
            }
            if small {
                // no representable improvement left
                converged = true;
                break;
            }
            lambda *= 10.0;
            if lambda > 1e30 {
                break;
            }
        }
        if converged || lambda > 1e30 {
            break;
        }
    }

    let (jtj, _) = normal_equations(model, x, y, sigma, &p);
    let covariance = jtj
        .try_inverse()
        .filter(|c| c.iter().all(|v| v.is_finite()) && (0..p.len()).all(|i| c[(i, i)] >= 0.0));
    Solution {
        params: p,
        covariance,
        chi2,
        iterations,
        converged,
    }
}

/// Smallest expected count per point used as a variance.
const MODEL_VARIANCE_FLOOR: f64 = 1e-3;
const MAX_REWEIGHTS: usize = 100;

/// Refits data `y = counts / scale` with variances from the model itself,
/// `σ² = f(x; p) / scale`, until the parameters stop moving.
///
/// Weights from the observed counts pull the curve below the data wherever
/// counts are low. The fixed point of this iteration solves the Poisson
/// likelihood equations instead, and the final covariance is the inverse
/// Fisher information.
pub(crate) fn poisson_refine<M: Model>(model: &M, x: &[f64], y: &[f64], scale: f64, mut sol: Solution) -> Solution {
    for _ in 0..MAX_REWEIGHTS {
        let sigma: Vec<f64> = x
            .iter()
            .map(|&xi| (model.value(xi, &sol.params) * scale).max(MODEL_VARIANCE_FLOOR).sqrt() / scale)
            .collect();
        let next = levenberg_marquardt(model, x, y, &sigma, &sol.params);
        let moved = next
            .params
            .iter()
            .zip(&sol.params)
            .map(|(a, b)| (a - b).abs() / b.abs().max(1e-12))
            .fold(0.0, f64::max);
        sol = next;
        if moved < 1e-9 {
            break;
        }
    }
    sol
}

/// Outcome of one model fit.
///
/// `sigmas` are 1σ uncertainties from the parameter covariance at the
/// optimum; an infinite sigma marks a parameter the data cannot determine.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub sigmas: BTreeMap<String, f64>,
    pub chi2: f64,
    pub dof: usize,
    pub chi2_reduced: f64,
    pub converged: bool,
    pub identifiable: bool,
    pub iterations: usize,
}

impl FitResult {
    pub(crate) fn from_solution<M: Model>(
        label: &str,
        model: &M,
        sol: &Solution,
        n_points: usize,
    ) -> FitResult {
        let names = model.names();
        let dof = n_points.saturating_sub(names.len());
        let mut params = BTreeMap::new();
        let mut sigmas = BTreeMap::new();
        for (i, name) in names.iter().enumerate() {
            params.insert(name.to_string(), sol.params[i]);
            let s = sol
                .covariance
                .as_ref()
                .map(|c| c[(i, i)].sqrt())
                .unwrap_or(f64::INFINITY);
            sigmas.insert(name.to_string(), s);
        }
        FitResult {
            model: label.to_string(),
            params,
            sigmas,
            chi2: sol.chi2,
            dof,
            chi2_reduced: if dof > 0 { sol.chi2 / dof as f64 } else { f64::NAN },
            converged: sol.converged,
            identifiable: sol.covariance.is_some(),
            iterations: sol.iterations,
        }
    }

    /// Parameter value; panics on an unknown name.
    pub fn param(&self, name: &str) -> f64 {
        self.params[name]
    }

    pub fn sigma(&self, name: &str) -> f64 {
        self.sigmas[name]
    }

    pub(crate) fn set(&mut self, name: &str, value: f64, sigma: f64) {
        self.params.insert(name.to_string(), value);
        self.sigmas.insert(name.to_string(), sigma);
    }
}

/// Weighted straight-line fit `y = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub sigma_slope: f64,
    pub sigma_intercept: f64,
    pub chi2: f64,
    pub r_squared: f64,
}

/// Closed-form weighted least squares. `sigma = None` means unit weights.
/// Returns `None` when fewer than two distinct abscissae are present.
pub fn linear_fit(x: &[f64], y: &[f64], sigma: Option<&[f64]>) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let w: Vec<f64> = match sigma {
        Some(s) => s.iter().map(|s| 1.0 / (s * s)).collect(),
        None => vec![1.0; n],
    };
    let sw: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y).sum();
    let det = sw * sxx - sx * sx;
    if det.is_nan() || det.abs() <= 1e-12 * sw * sxx.max(f64::MIN_POSITIVE) {
        return None;
    }
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let chi2: f64 = (0..n)
        .map(|i| w[i] * (y[i] - slope * x[i] - intercept).powi(2))
        .sum();
    let y_mean = sy / sw;
    let ss_tot: f64 = (0..n).map(|i| w[i] * (y[i] - y_mean).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - chi2 / ss_tot } else { 1.0 };
    Some(LinearFit {
        slope,
        intercept,
        sigma_slope: (sw / det).sqrt(),
        sigma_intercept: (sxx / det).sqrt(),
        chi2,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct Quadratic;
    impl Model for Quadratic {
        fn names(&self) -> &'static [&'static str] {
            &["a", "b", "c"]
        }
        fn value(&self, x: f64, p: &[f64]) -> f64 {
            p[0] * x * x + p[1] * x + p[2]
        }
        fn gradient(&self, x: f64, _p: &[f64], g: &mut [f64]) {
            g[0] = x * x;
            g[1] = x;
            g[2] = 1.0;
        }
    }

    #[test]
    fn linear_in_parameters_model_is_exact() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().map(|x| 2.0 * x * x - 1.0 * x + 0.5).collect();
        let s = vec![1.0; x.len()];
        let sol = levenberg_marquardt(&Quadratic, &x, &y, &s, &[0.0, 0.0, 0.0]);
        assert!(sol.converged);
        assert_relative_eq!(sol.params[0], 2.0, max_relative = 1e-9);
        assert_relative_eq!(sol.params[1], -1.0, max_relative = 1e-9);
        assert_relative_eq!(sol.params[2], 0.5, max_relative = 1e-9);
    }

    #[test]
    fn covariance_matches_linear_theory() {
        // for a model linear in its parameters the LM covariance is the
        // ordinary least-squares one
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|x| 3.0 * x + 1.0 + (x * 7.0).sin() * 0.1).collect();
        let s = vec![0.1; x.len()];
        struct Line;
        impl Model for Line {
            fn names(&self) -> &'static [&'static str] {
                &["m", "c"]
            }
            fn value(&self, x: f64, p: &[f64]) -> f64 {
                p[0] * x + p[1]
            }
            fn gradient(&self, x: f64, _p: &[f64], g: &mut [f64]) {
                g[0] = x;
                g[1] = 1.0;
            }
        }
        let sol = levenberg_marquardt(&Line, &x, &y, &s, &[1.0, 0.0]);
        let lin = linear_fit(&x, &y, Some(&s)).unwrap();
        let cov = sol.covariance.unwrap();
        assert_relative_eq!(sol.params[0], lin.slope, max_relative = 1e-8);
        assert_relative_eq!(cov[(0, 0)].sqrt(), lin.sigma_slope, max_relative = 1e-8);
        assert_relative_eq!(cov[(1, 1)].sqrt(), lin.sigma_intercept, max_relative = 1e-8);
    }

    #[test]
    fn linear_fit_rejects_degenerate_abscissae() {
        assert!(linear_fit(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0], None).is_none());
        assert!(linear_fit(&[1.0], &[1.0], None).is_none());
        let f = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0], None).unwrap();
        assert_relative_eq!(f.slope, 2.0, max_relative = 1e-12);
        assert_relative_eq!(f.r_squared, 1.0, max_relative = 1e-12);
    }
}
