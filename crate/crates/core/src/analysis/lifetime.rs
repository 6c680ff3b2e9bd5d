//! Exponential decay fit `f(t) = A·e^{−t/τ} + B` and the signal-to-noise
//! figure right after the excitation pulse.

use crate::error::{Error, Result};

use super::histogram::Histogram;
use super::lsq::{levenberg_marquardt, poisson_refine, FitResult, Model};

struct DecayModel;

impl Model for DecayModel {
    fn names(&self) -> &'static [&'static str] {
        &["A", "tau_ns", "B"]
    }

    fn value(&self, t: f64, p: &[f64]) -> f64 {
        p[0] * (-t / p[1]).exp() + p[2]
    }

    fn gradient(&self, t: f64, p: &[f64], g: &mut [f64]) {
        let e = (-t / p[1]).exp();
        g[0] = e;
        g[1] = p[0] * t / (p[1] * p[1]) * e;
        g[2] = 1.0;
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![
            (0.0, f64::INFINITY),
            (1e-6, f64::INFINITY),
            (0.0, f64::INFINITY),
        ]
    }
}

/// Initial guess: `B` from the last decile, `τ` from the log-slope of the
/// background-subtracted head, `A` from the first bin.
fn initial_guess(t: &[f64], y: &[f64]) -> [f64; 3] {
    let n = y.len();
    let tail = (n / 10).max(1);
    let b0 = y[n - tail..].iter().sum::<f64>() / tail as f64;
    let head = y[0] - b0;
    let span = t[n - 1] - t[0];

    let floor = (0.05 * head).max(3.0 * b0.max(1.0).sqrt());
    let (mut xs, mut ls) = (Vec::new(), Vec::new());
    for (&ti, &yi) in t.iter().zip(y) {
        if yi - b0 > floor {
            xs.push(ti);
            ls.push((yi - b0).ln());
        } else if !xs.is_empty() {
            break;
        }
    }
    let tau0 = super::lsq::linear_fit(&xs, &ls, None)
        .map(|f| -1.0 / f.slope)
        .filter(|tau| tau.is_finite() && *tau > 0.0)
        .unwrap_or(span / 5.0)
        .clamp(span * 1e-4, span * 10.0);
    let a0 = head.max(1e-9) * (t[0] / tau0).exp();
    [a0, tau0, b0]
}

/// Fits the decay model to a delay histogram.
///
/// The first pass uses Poisson weights `σ² = max(count, 1)`; it is then
/// refined with weights from the fitted curve (see `poisson_refine`), which
/// removes the low-count bias of count-based weights. The reported
/// covariance is `(JᵀWJ)⁻¹` with the final weights.
///
/// Times are bin centers in ns measured from the pulse, so `A` is the
/// amplitude at `t = 0` even for a histogram sliced past the rise. With a
/// counts-per-second normalization, `A` and `B` (and their sigmas) are
/// reported in those units.
pub fn fit_exponential(hist: &Histogram) -> Result<FitResult> {
    let non_empty = hist.counts.iter().filter(|&&c| c > 0).count();
    if non_empty < 4 {
        return Err(Error::estimator(format!(
            "exponential fit needs at least 4 non-empty bins, got {non_empty}"
        )));
    }
    let t: Vec<f64> = hist.bin_centers_ps().iter().map(|c| c * 1e-3).collect();
    let y: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let sigma: Vec<f64> = hist.counts.iter().map(|&c| (c.max(1) as f64).sqrt()).collect();

    let first = levenberg_marquardt(&DecayModel, &t, &y, &sigma, &initial_guess(&t, &y));
    let sol = poisson_refine(&DecayModel, &t, &y, 1.0, first);
    let mut fit = FitResult::from_solution("exponential", &DecayModel, &sol, t.len());

    let uniform_width = hist
        .bin_edges_ps
        .windows(2)
        .all(|w| w[1] - w[0] == hist.bin_edges_ps[1] - hist.bin_edges_ps[0]);
    if uniform_width {
        let s = hist.scale(0);
        for name in ["A", "B"] {
            let (v, e) = (fit.param(name), fit.sigma(name));
            fit.set(name, v * s, e * s);
        }
    }
    Ok(fit)
}

/// The decay fit on arbitrary points `(t_ns, y ± σ)`.
pub fn fit_decay_points(t_ns: &[f64], y: &[f64], sigma: &[f64]) -> Result<FitResult> {
    if t_ns.len() < 4 || y.len() != t_ns.len() || sigma.len() != t_ns.len() {
        return Err(Error::estimator("exponential fit needs at least 4 points"));
    }
    let init = initial_guess(t_ns, y);
    let sol = levenberg_marquardt(&DecayModel, t_ns, y, sigma, &init);
    Ok(FitResult::from_solution("exponential", &DecayModel, &sol, t_ns.len()))
}

/// Decay amplitude over flat background, `A / B`. Infinite when `B <= 0`.
pub fn snr_after_pulse(fit: &FitResult) -> f64 {
    let a = fit.param("A");
    let b = fit.param("B");
    if b > 0.0 {
        a / b
    } else {
        f64::INFINITY
    }
}

/// Alternative SNR: excess of the first histogram bin over the fitted
/// background, `(y₀ − B) / B`, in the histogram's units.
pub fn snr_first_bin(hist: &Histogram, fit: &FitResult) -> f64 {
    let b = fit.param("B");
    match hist.values().first() {
        Some(&y0) if b > 0.0 => (y0 - b) / b,
        _ => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::histogram::Normalization;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn exact_points(a: f64, tau: f64, b: f64, n: usize, dt: f64) -> (Vec<f64>, Vec<f64>) {
        let t: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * dt).collect();
        let y = t.iter().map(|t| a * (-t / tau).exp() + b).collect();
        (t, y)
    }

    #[test]
    fn noiseless_decay_is_recovered_exactly() {
        let (t, y) = exact_points(100.0, 7.47, 22.0, 500, 0.1);
        let s: Vec<f64> = y.iter().map(|v: &f64| v.sqrt()).collect();
        let fit = fit_decay_points(&t, &y, &s).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.param("A"), 100.0, max_relative = 1e-6);
        assert_relative_eq!(fit.param("tau_ns"), 7.47, max_relative = 1e-6);
        assert_relative_eq!(fit.param("B"), 22.0, max_relative = 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn zero_noise_recovery(a in 1.0f64..1e5, tau in 0.5f64..30.0, b in 0.0f64..1e3) {
            let (t, y) = exact_points(a, tau, b, 400, tau / 20.0);
            let s = vec![1.0; t.len()];
            let fit = fit_decay_points(&t, &y, &s).unwrap();
            prop_assert!((fit.param("A") / a - 1.0).abs() < 1e-6);
            prop_assert!((fit.param("tau_ns") / tau - 1.0).abs() < 1e-6);
            prop_assert!((fit.param("B") - b).abs() < 1e-6 * b.max(a));
        }
    }

    #[test]
    fn histogram_fit_reports_rates() {
        // counts chosen as exact integers of a model with B = 4 counts/bin
        let n = 200;
        let counts: Vec<u64> = (0..n)
            .map(|i| (1000.0 * (-((i as f64 + 0.5) * 0.2) / 5.0).exp()).round() as u64 + 4)
            .collect();
        let hist = Histogram {
            bin_edges_ps: (0..=n as u64).map(|i| i * 200).collect(),
            counts,
            period_ps: 1e6,
            normalization: Normalization::CountsPerSecond { acquisition_s: 10.0 },
        };
        let fit = fit_exponential(&hist).unwrap();
        // 4 counts/bin over 10 s with 200 ps bins in a 1 µs period
        let scale = 1e6 / 200.0 / 10.0;
        assert!((fit.param("B") / (4.0 * scale) - 1.0).abs() < 0.05);
        assert!((fit.param("tau_ns") - 5.0).abs() < 0.05);
    }

    #[test]
    fn too_few_bins_is_an_error() {
        let hist = Histogram {
            bin_edges_ps: vec![0, 1, 2, 3, 4, 5],
            counts: vec![5, 3, 0, 1, 0],
            period_ps: 1e6,
            normalization: Normalization::Raw,
        };
        assert!(matches!(fit_exponential(&hist), Err(Error::Estimator(_))));
    }

    #[test]
    fn snr_examples() {
        let mut fit = fit_decay_points(
            &[0.5, 1.5, 2.5, 3.5, 4.5],
            &[10.0, 8.0, 6.0, 5.0, 4.0],
            &[1.0; 5],
        )
        .unwrap();
        fit.set("A", 54394.0, 0.0);
        fit.set("B", 22.0, 0.0);
        assert!((snr_after_pulse(&fit) - 2472.45).abs() < 0.01);
        fit.set("A", 2430.0, 0.0);
        fit.set("B", 102.0, 0.0);
        assert!((snr_after_pulse(&fit) - 23.82).abs() < 0.01);
        fit.set("B", 2430.0, 0.0);
        assert_eq!(snr_after_pulse(&fit), 1.0);
        fit.set("B", 0.0, 0.0);
        assert!(snr_after_pulse(&fit).is_infinite());
    }
}
