//! Pulsed second-order correlation.
//!
//! Every cross-channel pair of detections is assigned the pulse-index
//! separation `n = round((t₁ − t₀) / period)`, halves rounded up. Counts per
//! separation are normalized by the mean of a far-separation baseline, where
//! emitter correlations have died out.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

use super::lsq::{levenberg_marquardt, poisson_refine, FitResult, Model};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct G2Options {
    pub max_pulse_sep: u32,
    /// Inclusive `|n|` range averaged for the baseline.
    pub baseline_min: u32,
    pub baseline_max: u32,
}

impl Default for G2Options {
    fn default() -> Self {
        G2Options {
            max_pulse_sep: 50,
            baseline_min: 25,
            baseline_max: 50,
        }
    }
}

/// Correlation counts indexed by pulse separation `-max..=max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct G2Histogram {
    pub separations: Vec<i64>,
    /// Raw coincidence counts; empty when built from normalized values.
    pub raw: Vec<u64>,
    pub normalized: Vec<f64>,
    pub baseline: f64,
}

impl G2Histogram {
    /// Wraps already-normalized values (e.g. published data). Fits on such a
    /// histogram use unit weights.
    pub fn from_normalized(separations: Vec<i64>, normalized: Vec<f64>) -> Result<Self> {
        if separations.len() != normalized.len() {
            return Err(Error::domain("separations and values differ in length"));
        }
        Ok(G2Histogram {
            separations,
            raw: Vec::new(),
            normalized,
            baseline: 1.0,
        })
    }

    pub fn at(&self, n: i64) -> Option<f64> {
        self.separations
            .iter()
            .position(|&s| s == n)
            .map(|i| self.normalized[i])
    }

    /// Normalized g²(0).
    pub fn g2_zero(&self) -> Option<f64> {
        self.at(0)
    }

    fn sigma(&self, i: usize) -> f64 {
        if self.raw.is_empty() {
            1.0
        } else {
            (self.raw[i].max(1) as f64).sqrt() / self.baseline
        }
    }
}

#[inline]
pub fn pulse_separation(dt_ps: i64, period_ps: f64) -> i64 {
    (dt_ps as f64 / period_ps + 0.5).floor() as i64
}

/// Raw coincidence counts for separations `-max..=max` between two sorted
/// time lists. Index `max + n` holds separation `n`.
pub fn cross_correlation_counts(t0: &[u64], t1: &[u64], period_ps: f64, max_sep: u32) -> Vec<u64> {
    let width = 2 * max_sep as usize + 1;
    let reach = ((max_sep as f64 + 0.5) * period_ps).ceil() as u64 + 1;

    let partial = |chunk: &[u64]| {
        let mut counts = vec![0u64; width];
        let Some(&first) = chunk.first() else {
            return counts;
        };
        let mut lo = t1.partition_point(|&t| t + reach < first);
        for &a in chunk {
            while lo < t1.len() && t1[lo] + reach < a {
                lo += 1;
            }
            for &b in &t1[lo..] {
                if b > a + reach {
                    break;
                }
                let n = pulse_separation(b as i64 - a as i64, period_ps);
                if n.unsigned_abs() <= max_sep as u64 {
                    counts[(n + max_sep as i64) as usize] += 1;
                }
            }
        }
        counts
    };

    t0.par_chunks(1 << 14)
        .map(partial)
        .reduce(
            || vec![0u64; width],
            |mut acc, c| {
                acc.iter_mut().zip(c).for_each(|(a, b)| *a += b);
                acc
            },
        )
}

/// Pulsed g² between two detector channels.
pub fn g2_pulsed(t0: &[u64], t1: &[u64], rep_rate_hz: f64, opts: G2Options) -> Result<G2Histogram> {
    if t0.is_empty() || t1.is_empty() {
        return Err(Error::estimator("g2 needs events on both channels"));
    }
    if !(rep_rate_hz.is_finite() && rep_rate_hz > 0.0) {
        return Err(Error::domain("repetition rate must be positive"));
    }
    if opts.baseline_min > opts.baseline_max || opts.baseline_max > opts.max_pulse_sep {
        return Err(Error::domain("baseline range must lie within max_pulse_sep"));
    }
    let period = 1e12 / rep_rate_hz;
    let raw = cross_correlation_counts(t0, t1, period, opts.max_pulse_sep);
    let max = opts.max_pulse_sep as i64;
    let separations: Vec<i64> = (-max..=max).collect();

    let baseline_bins: Vec<u64> = separations
        .iter()
        .zip(&raw)
        .filter(|(n, _)| (opts.baseline_min as u64..=opts.baseline_max as u64).contains(&n.unsigned_abs()))
        .map(|(_, &c)| c)
        .collect();
    let baseline = baseline_bins.iter().sum::<u64>() as f64 / baseline_bins.len() as f64;
    if baseline.is_nan() || baseline <= 0.0 {
        return Err(Error::estimator("no coincidences in the baseline range"));
    }
    let normalized = raw.iter().map(|&c| c as f64 / baseline).collect();
    Ok(G2Histogram {
        separations,
        raw,
        normalized,
        baseline,
    })
}

struct BunchingModel;

impl Model for BunchingModel {
    fn names(&self) -> &'static [&'static str] {
        &["A", "tau_pulses"]
    }

    fn value(&self, n: f64, p: &[f64]) -> f64 {
        1.0 + p[0] * (-n / p[1]).exp()
    }

    fn gradient(&self, n: f64, p: &[f64], g: &mut [f64]) {
        let e = (-n / p[1]).exp();
        g[0] = e;
        g[1] = p[0] * n / (p[1] * p[1]) * e;
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(f64::NEG_INFINITY, f64::INFINITY), (1e-3, 1e6)]
    }
}

/// Fits `g²(n) = 1 + A·e^{−|n|/τ}` to all nonzero separations.
///
/// Points are weighted by their Poisson counts, then refined with weights
/// from the fitted curve when raw counts are available.
///
/// The measured zero-separation value is attached as `g2_0`; it never enters
/// the fit. When `A` comes out zero, `τ` cannot be determined and the result
/// is marked not identifiable.
pub fn fit_bunching(g2: &G2Histogram) -> Result<FitResult> {
    let (mut x, mut y, mut s) = (Vec::new(), Vec::new(), Vec::new());
    for (i, &n) in g2.separations.iter().enumerate() {
        if n != 0 {
            x.push(n.unsigned_abs() as f64);
            y.push(g2.normalized[i]);
            s.push(g2.sigma(i));
        }
    }
    if x.len() < 4 {
        return Err(Error::estimator("bunching fit needs at least 4 nonzero separations"));
    }

    let near: Vec<f64> = x.iter().zip(&y).filter(|(n, _)| **n == 1.0).map(|(_, v)| v - 1.0).collect();
    let a0 = if near.is_empty() {
        y[0] - 1.0
    } else {
        near.iter().sum::<f64>() / near.len() as f64
    };
    let (mut xs, mut ls) = (Vec::new(), Vec::new());
    for (&n, &v) in x.iter().zip(&y) {
        if a0 > 0.0 && v - 1.0 > 0.1 * a0 {
            xs.push(n);
            ls.push((v - 1.0).ln());
        }
    }
    let tau0 = super::lsq::linear_fit(&xs, &ls, None)
        .map(|f| -1.0 / f.slope)
        .filter(|t| t.is_finite() && *t > 0.0)
        .unwrap_or(5.0)
        .clamp(0.1, 1e3);

    let mut sol = levenberg_marquardt(&BunchingModel, &x, &y, &s, &[a0, tau0]);
    if !g2.raw.is_empty() {
        sol = poisson_refine(&BunchingModel, &x, &y, g2.baseline, sol);
    }
    let mut fit = FitResult::from_solution("bunching", &BunchingModel, &sol, x.len());
    if fit.param("A") == 0.0 || !fit.sigma("tau_pulses").is_finite() {
        fit.identifiable = false;
        fit.sigmas.insert("tau_pulses".into(), f64::INFINITY);
    }
    if let Some(i) = g2.separations.iter().position(|&n| n == 0) {
        let sigma = if g2.raw.is_empty() { 0.0 } else { g2.sigma(i) };
        fit.set("g2_0", g2.normalized[i], sigma);
    }
    Ok(fit)
}
