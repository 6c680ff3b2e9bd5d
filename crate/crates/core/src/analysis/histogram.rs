use serde::Serialize;

use crate::error::{Error, Result};
use crate::timetag::{Channel, TimeTagRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Normalization {
    Raw,
    /// Rates in cts/s, scaled so that a background spread evenly over the
    /// pulse period reads as its total rate.
    CountsPerSecond { acquisition_s: f64 },
}

/// Photon counts binned by delay after the most recent excitation pulse.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub bin_edges_ps: Vec<u64>,
    pub counts: Vec<u64>,
    pub period_ps: f64,
    pub normalization: Normalization,
}

impl Histogram {
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_width_ps(&self, i: usize) -> u64 {
        self.bin_edges_ps[i + 1] - self.bin_edges_ps[i]
    }

    pub fn bin_centers_ps(&self) -> Vec<f64> {
        self.bin_edges_ps
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]) as f64)
            .collect()
    }

    pub fn with_acquisition(mut self, acquisition_s: f64) -> Self {
        self.normalization = Normalization::CountsPerSecond { acquisition_s };
        self
    }

    /// Factor converting the raw count of bin `i` into the normalized value.
    pub fn scale(&self, i: usize) -> f64 {
        match self.normalization {
            Normalization::Raw => 1.0,
            Normalization::CountsPerSecond { acquisition_s } => {
                self.period_ps / (self.bin_width_ps(i) as f64 * acquisition_s)
            }
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.n_bins())
            .map(|i| self.counts[i] as f64 * self.scale(i))
            .collect()
    }

    /// `counts / T_acq · period / bin_width`; `None` without an acquisition time.
    pub fn counts_per_s(&self) -> Option<Vec<f64>> {
        matches!(self.normalization, Normalization::CountsPerSecond { .. }).then(|| self.values())
    }

    /// The bins whose left edge is at or after `t_ps`.
    pub fn slice_from(&self, t_ps: u64) -> Histogram {
        let first = self.bin_edges_ps[..self.n_bins()].partition_point(|&e| e < t_ps);
        Histogram {
            bin_edges_ps: self.bin_edges_ps[first..].to_vec(),
            counts: self.counts[first..].to_vec(),
            period_ps: self.period_ps,
            normalization: self.normalization,
        }
    }
}

/// Folds detection times modulo the pulse period and bins them on
/// `[0, window_ps)`. Sync-channel records are ignored.
pub fn histogram_vs_pulse(
    tags: &[TimeTagRecord],
    rep_rate_hz: f64,
    bin_width_ps: u64,
    window_ps: u64,
) -> Result<Histogram> {
    if !(rep_rate_hz.is_finite() && rep_rate_hz > 0.0) {
        return Err(Error::domain("repetition rate must be positive"));
    }
    if bin_width_ps == 0 || window_ps == 0 || !window_ps.is_multiple_of(bin_width_ps) {
        return Err(Error::domain("bin width must be positive and divide the window"));
    }
    let period = 1e12 / rep_rate_hz;
    if window_ps as f64 > period {
        return Err(Error::domain("window exceeds the pulse period"));
    }
    let n_bins = (window_ps / bin_width_ps) as usize;
    let mut counts = vec![0u64; n_bins];
    let integral_period = (period.fract() == 0.0).then_some(period as u64);
    for tag in tags.iter().filter(|t| t.channel != Channel::Sync) {
        let phase = match integral_period {
            Some(p) => tag.time_ps % p,
            None => (tag.time_ps as f64 % period) as u64,
        };
        if phase < window_ps {
            counts[(phase / bin_width_ps) as usize] += 1;
        }
    }
    Ok(Histogram {
        bin_edges_ps: (0..=n_bins as u64).map(|i| i * bin_width_ps).collect(),
        counts,
        period_ps: period,
        normalization: Normalization::Raw,
    })
}
