//! Phase-matching acceptance width from a detuning scan.

use crate::error::{Error, Result};

/// Width (in the units of the detuning axis) of the contiguous region around
/// the maximum where the efficiency stays at or above `threshold·max`.
/// Both edges are linearly interpolated between neighboring scan points.
pub fn acceptance_bandwidth(points: &[(f64, f64)], threshold: f64) -> Result<f64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::domain("threshold must lie in (0, 1)"));
    }
    if points.iter().any(|p| !(p.0.is_finite() && p.1.is_finite())) {
        return Err(Error::domain("scan points must be finite"));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (peak, max) = pts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, p)| (i, p.1))
        .ok_or_else(|| Error::estimator("empty detuning scan"))?;
    if max <= 0.0 {
        return Err(Error::estimator("scan has no positive efficiency"));
    }
    let level = threshold * max;
    let crossing = |inside: (f64, f64), outside: (f64, f64)| {
        inside.0 + (level - inside.1) * (outside.0 - inside.0) / (outside.1 - inside.1)
    };

    let left = (0..peak)
        .rev()
        .find(|&i| pts[i].1 < level)
        .map(|i| crossing(pts[i + 1], pts[i]))
        .ok_or_else(|| Error::estimator("no threshold crossing below the peak"))?;
    let right = (peak + 1..pts.len())
        .find(|&i| pts[i].1 < level)
        .map(|i| crossing(pts[i - 1], pts[i]))
        .ok_or_else(|| Error::estimator("no threshold crossing above the peak"))?;
    Ok(right - left)
}
