//! Estimators that recover physical parameters from time-tag streams and
//! parameter scans.

pub mod bandwidth;
pub mod efficiency;
pub mod g2;
pub mod histogram;
pub mod lifetime;
mod lsq;
pub mod noise;

pub use bandwidth::acceptance_bandwidth;
pub use efficiency::{
    fit_efficiency_curve, internal_efficiency, photon_number_efficiency, EfficiencyCurveFit,
    EfficiencyModelKind, InternalEfficiency,
};
pub use g2::{fit_bunching, g2_pulsed, G2Histogram, G2Options};
pub use histogram::{histogram_vs_pulse, Histogram, Normalization};
pub use lifetime::{fit_decay_points, fit_exponential, snr_after_pulse, snr_first_bin};
pub use lsq::{linear_fit, FitResult, LinearFit};
pub use noise::{
    noise_density, poisson_rate_interval, survival_fraction, FractionEstimate, Interval,
    NoiseDensityEstimate, NoiseNormalization,
};
