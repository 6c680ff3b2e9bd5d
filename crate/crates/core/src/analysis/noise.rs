//! Noise density and count-fraction estimates with Bayesian credible
//! intervals.
//!
//! The noise density is the dark-subtracted count rate normalized by the
//! detector efficiency, the filter pass-band and (optionally) the FBG
//! transmission. With a flat prior on the non-negative signal rate, the
//! posterior of the total rate is `Gamma(k + 1, T)` truncated at the dark
//! rate, so no credible interval can extend below zero. Intervals are the
//! shortest (highest-density) 68 % intervals.

use serde::Serialize;
use statrs::function::beta::beta_reg;
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};

pub const CREDIBLE_MASS: f64 = 0.68;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }

    fn scaled(self, s: f64) -> Interval {
        Interval {
            low: self.low * s,
            high: self.high * s,
        }
    }
}

/// Converts a detected count rate to a spectral noise density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseNormalization {
    pub eta_snspd: f64,
    pub filter_fwhm_pm: f64,
    pub t_fbg: Option<f64>,
    pub dark_cps: f64,
}

impl NoiseNormalization {
    fn validate(&self) -> Result<()> {
        if !(self.eta_snspd > 0.0 && self.eta_snspd <= 1.0) {
            return Err(Error::domain("detector efficiency must lie in (0, 1]"));
        }
        if !(self.filter_fwhm_pm > 0.0 && self.filter_fwhm_pm.is_finite()) {
            return Err(Error::domain("filter FWHM must be positive"));
        }
        if let Some(t) = self.t_fbg {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::domain("FBG transmission must lie in (0, 1]"));
            }
        }
        if !(self.dark_cps >= 0.0 && self.dark_cps.is_finite()) {
            return Err(Error::domain("dark rate must be non-negative"));
        }
        Ok(())
    }

    /// cts/s of detected signal per cts/s/pm of density.
    pub fn rate_per_density(&self) -> f64 {
        self.eta_snspd * self.filter_fwhm_pm * self.t_fbg.unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseDensityEstimate {
    pub counts: u64,
    pub duration_s: f64,
    /// Dark-subtracted rate, clipped at zero.
    pub net_rate_cps: f64,
    pub density_cts_s_pm: f64,
    pub ci68: Interval,
}

/// Estimates the noise density from `counts` detected in `duration_s`.
pub fn noise_density(
    counts: u64,
    duration_s: f64,
    norm: &NoiseNormalization,
) -> Result<NoiseDensityEstimate> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::domain("duration must be positive"));
    }
    norm.validate()?;
    let net_rate = (counts as f64 / duration_s - norm.dark_cps).max(0.0);
    let rate_ci = poisson_rate_interval(counts, duration_s, norm.dark_cps);
    let s = 1.0 / norm.rate_per_density();
    Ok(NoiseDensityEstimate {
        counts,
        duration_s,
        net_rate_cps: net_rate,
        density_cts_s_pm: net_rate * s,
        ci68: rate_ci.scaled(s),
    })
}

/// 68 % HPD interval of a signal rate from `k` counts in `t` seconds on top
/// of a known background rate `dark`.
pub fn poisson_rate_interval(k: u64, t: f64, dark: f64) -> Interval {
    let kf = k as f64;
    let shape = kf + 1.0;
    let log_pdf = |lambda: f64| {
        if kf == 0.0 {
            -lambda * t
        } else {
            kf * lambda.ln() - lambda * t
        }
    };
    let survival_at_dark = upper_gamma(shape, dark * t);
    let hi = kf.max(dark * t) / t + (12.0 * shape.sqrt() + 40.0) / t;

    let interval = if survival_at_dark > 1e-250 {
        let survival = |lambda: f64| upper_gamma(shape, lambda * t) / survival_at_dark;
        hpd(&log_pdf, &survival, dark, hi, kf / t)
    } else {
        // Far beyond the posterior bulk: the truncated density is
        // exponential with rate t − k/dark.
        let rate = t - kf / dark;
        let survival = |lambda: f64| (-(lambda - dark) * rate).exp();
        hpd(&log_pdf, &survival, dark, dark + 60.0 / rate, dark)
    };
    Interval {
        low: (interval.low - dark).max(0.0),
        high: (interval.high - dark).max(0.0),
    }
}

/// Regularized upper incomplete gamma `Q(a, x)`, extended by `Q(a, 0) = 1`.
fn upper_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        gamma_ur(a, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FractionEstimate {
    pub trials: u64,
    pub successes: u64,
    pub fraction: f64,
    pub ci68: Interval,
}

/// Survival fraction `k/n` with the 68 % HPD interval of the flat-prior
/// `Beta(k + 1, n − k + 1)` posterior.
pub fn survival_fraction(trials: u64, successes: u64) -> Result<FractionEstimate> {
    if trials == 0 || successes > trials {
        return Err(Error::domain("need 0 <= successes <= trials and trials > 0"));
    }
    let k = successes as f64;
    let m = (trials - successes) as f64;
    let log_pdf = |x: f64| {
        let a = if k > 0.0 { k * x.ln() } else { 0.0 };
        let b = if m > 0.0 { m * (1.0 - x).ln() } else { 0.0 };
        a + b
    };
    let survival = |x: f64| 1.0 - beta_reg(k + 1.0, m + 1.0, x.clamp(0.0, 1.0));
    let mode = k / trials as f64;
    Ok(FractionEstimate {
        trials,
        successes,
        fraction: mode,
        ci68: hpd(&log_pdf, &survival, 0.0, 1.0, mode),
    })
}

/// Shortest interval of mass [`CREDIBLE_MASS`] for a unimodal density on
/// `[lo, hi]` with the given mode. `survival(x)` is `P(X > x)`, normalized
/// on `[lo, hi]`.
fn hpd(
    log_pdf: &dyn Fn(f64) -> f64,
    survival: &dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    mode: f64,
) -> Interval {
    let quantile = |mass_below: f64| {
        let target = 1.0 - mass_below;
        bisect(lo, hi, |x| survival(x) > target)
    };
    if mode <= lo {
        return Interval {
            low: lo,
            high: quantile(CREDIBLE_MASS),
        };
    }
    if mode >= hi {
        return Interval {
            low: quantile(1.0 - CREDIBLE_MASS),
            high: hi,
        };
    }
    let peak = log_pdf(mode);
    // partner of `a` on the other side of the mode, at equal density
    let partner = |a: f64| {
        let level = log_pdf(a);
        if level == f64::NEG_INFINITY || log_pdf(hi) >= level {
            return hi;
        }
        bisect(mode, hi, |x| log_pdf(x) > level)
    };
    let mass = |a: f64| survival(a) - survival(partner(a));

    if mass(lo) <= CREDIBLE_MASS {
        // density at the lower boundary is above the cut: interval is one-sided
        return Interval {
            low: lo,
            high: quantile(CREDIBLE_MASS),
        };
    }
    debug_assert!(peak.is_finite());
    let a = bisect(lo, mode, |a| mass(a) > CREDIBLE_MASS);
    Interval {
        low: a,
        high: partner(a),
    }
}

/// Largest `x` in `[lo, hi]` with `pred(x)` true, for a predicate that is
/// true below some threshold and false above it.
fn bisect(mut lo: f64, mut hi: f64, pred: impl Fn(f64) -> bool) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn norm(dark: f64) -> NoiseNormalization {
        NoiseNormalization {
            eta_snspd: 0.75,
            filter_fwhm_pm: 36.5,
            t_fbg: Some(0.81),
            dark_cps: dark,
        }
    }

    #[test]
    fn zero_counts_interval() {
        // solve 1 − e^{−λT} = 0.68 for the upper limit
        let t = 20.0;
        let ci = poisson_rate_interval(0, t, 0.0);
        assert_eq!(ci.low, 0.0);
        assert_relative_eq!(ci.high * t, -(0.32f64).ln(), max_relative = 1e-9);
        assert_relative_eq!(ci.high * t, 1.139_434_283, max_relative = 1e-8);
    }

    #[test]
    fn rate_at_dark_level_is_zero() {
        let est = noise_density(200, 20.0, &norm(10.0)).unwrap();
        assert_eq!(est.density_cts_s_pm, 0.0);
        assert_eq!(est.ci68.low, 0.0);
        assert!(est.ci68.high > 0.0);
    }

    #[test]
    fn below_dark_is_clipped() {
        let est = noise_density(3, 20.0, &norm(10.0)).unwrap();
        assert_eq!(est.density_cts_s_pm, 0.0);
        assert_eq!(est.ci68.low, 0.0);
        assert!(est.ci68.high >= 0.0);
    }

    #[test]
    fn point_estimate_inverts_the_normalization() {
        let n = norm(10.0);
        let counts = ((2.2 * n.rate_per_density() + 10.0) * 20.0_f64).round() as u64;
        let est = noise_density(counts, 20.0, &n).unwrap();
        assert!((est.density_cts_s_pm - 2.2).abs() < 0.01);
        assert!(est.ci68.contains(est.density_cts_s_pm));
        let no_fbg = NoiseNormalization { t_fbg: None, ..n };
        let est2 = noise_density(counts, 20.0, &no_fbg).unwrap();
        assert_relative_eq!(est2.density_cts_s_pm, est.density_cts_s_pm * 0.81, max_relative = 1e-12);
    }

    #[test]
    fn large_count_interval_approaches_gaussian() {
        let k = 40_000u64;
        let ci = poisson_rate_interval(k, 1.0, 0.0);
        let sd = (k as f64 + 1.0).sqrt();
        assert!(((ci.high - ci.low) / (2.0 * 0.994_457_883 * sd) - 1.0).abs() < 0.01);
    }

    #[test]
    fn hpd_mass_is_68_percent() {
        let (k, t) = (7u64, 2.0);
        let ci = poisson_rate_interval(k, t, 0.0);
        let mass = upper_gamma(8.0, ci.low * t) - upper_gamma(8.0, ci.high * t);
        assert!((mass - 0.68).abs() < 1e-9, "{mass}");
        // equal density at both ends
        let lp = |l: f64| 7.0 * l.ln() - l * t;
        assert!((lp(ci.low) - lp(ci.high)).abs() < 1e-9);
    }

    #[test]
    fn input_validation() {
        assert!(noise_density(1, 0.0, &norm(0.0)).is_err());
        assert!(noise_density(1, 1.0, &NoiseNormalization { eta_snspd: 0.0, ..norm(0.0) }).is_err());
        assert!(noise_density(1, 1.0, &NoiseNormalization { filter_fwhm_pm: 0.0, ..norm(0.0) }).is_err());
    }

    #[test]
    fn survival_fraction_examples() {
        let e = survival_fraction(10_000, 400).unwrap();
        assert_relative_eq!(e.fraction, 0.04);
        let sd = (0.04f64 * 0.96 / 10_000.0).sqrt();
        assert!(e.ci68.contains(0.04));
        assert!(((e.ci68.high - e.ci68.low) / (2.0 * sd) - 1.0).abs() < 0.05);
        let none = survival_fraction(50, 0).unwrap();
        assert_eq!(none.ci68.low, 0.0);
        let all = survival_fraction(50, 50).unwrap();
        assert_eq!(all.ci68.high, 1.0);
        assert!(survival_fraction(0, 0).is_err());
        assert!(survival_fraction(3, 4).is_err());
    }

    proptest! {
        #[test]
        fn interval_is_never_negative(k in 0u64..200, t in 0.1f64..100.0, dark in 0.0f64..200.0) {
            let est = noise_density(k, t, &norm(dark)).unwrap();
            prop_assert!(est.ci68.low >= 0.0);
            prop_assert!(est.ci68.high >= est.ci68.low);
            prop_assert!(est.density_cts_s_pm >= 0.0);
        }
    }
}
