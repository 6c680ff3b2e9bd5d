//! Difference-frequency converter model.
//!
//! Maps the input wavelength through energy conservation, applies the
//! pump-power efficiency law and a sinc² phase-matching acceptance, thins the
//! incoming photon stream by the loss chain and injects pump-induced
//! (spectrally flat, Poissonian) noise plus detector dark counts.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::emitter::{poisson_times, FWHM_PER_SIGMA};
use crate::error::{Error, Result};
use crate::seed::SeedContract;
use crate::timetag::{sort_records, Channel, TimeTagRecord};
use crate::units::Wavelength;

/// Argument at which `sinc²(x) = (sin x / x)²` falls to one half.
pub const SINC2_HALF_MAX_ARG: f64 = 1.391_557_378_251_510_2;

/// Output wavelength of difference-frequency generation,
/// `1/λ_out = 1/λ_in − 1/λ_pump`.
pub fn wavelength_out(lambda_in: Wavelength, lambda_pump: Wavelength) -> Result<Wavelength> {
    if lambda_pump <= lambda_in {
        return Err(Error::domain(format!(
            "pump wavelength {} nm must exceed input wavelength {} nm",
            lambda_pump.nm(),
            lambda_in.nm()
        )));
    }
    let li = lambda_in.meters();
    let lp = lambda_pump.meters();
    // (li·lp)/(lp − li) avoids the cancellation of 1/li − 1/lp
    Wavelength::from_meters(li * lp / (lp - li))
}

/// `sinc(x) = sin(x)/x`, with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// `η_max · sin²(√(αL²·P))` for pump power `power_w` (clamped at zero).
pub fn efficiency_law(eta_max: f64, alpha_l2_per_w: f64, power_w: f64) -> f64 {
    let s = (alpha_l2_per_w * power_w.max(0.0)).sqrt().sin();
    eta_max * s * s
}

/// The lumped `αL²` for which the efficiency law reaches `eta` at
/// `power_w` (first branch, `eta <= eta_max`).
pub fn calibrate_alpha_l2(eta: f64, eta_max: f64, power_w: f64) -> Result<f64> {
    if !(eta >= 0.0 && eta <= eta_max && power_w > 0.0) {
        return Err(Error::domain("need 0 <= eta <= eta_max and power > 0"));
    }
    let u = (eta / eta_max).sqrt().asin();
    Ok(u * u / power_w)
}

/// Acceptance FWHM that keeps `sinc²` above `threshold` over a full
/// detuning range of `width_hz`.
pub fn acceptance_fwhm_for_width(width_hz: f64, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0 && threshold < 1.0 && width_hz > 0.0) {
        return Err(Error::domain("threshold must lie in (0,1), width > 0"));
    }
    // sinc² is monotone on [0, π]
    let (mut lo, mut hi) = (0.0f64, std::f64::consts::PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sinc(mid).powi(2) > threshold {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(width_hz * SINC2_HALF_MAX_ARG / (0.5 * (lo + hi)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConversionConfig {
    pub lambda_in_m: f64,
    pub lambda_pump_m: f64,
    pub eta_max: f64,
    #[serde(rename = "alpha_L2_per_W")]
    pub alpha_l2_per_w: f64,
    #[serde(rename = "pump_power_W")]
    pub pump_power_w: f64,
    pub acceptance_fwhm_hz: f64,
    /// Detector-corrected noise density per watt of circulating pump.
    #[serde(rename = "noise_density_slope_cts_s_pm_per_W")]
    pub noise_density_slope: f64,
    pub filter_fwhm_pm: f64,
    pub t_fbg: f64,
    pub launch_transmission: f64,
    pub fiber_transmission: f64,
    pub coating_transmission: f64,
    pub eta_snspd: f64,
    pub dark_count_cps: f64,
    /// Input detuning left over after pump retuning.
    #[serde(default)]
    pub input_detuning_hz: f64,
    /// Additional uncorrelated counts picked up after the converter.
    #[serde(default)]
    pub fiber_noise_cps: f64,
    #[serde(default = "default_snspd_jitter")]
    pub detector_jitter_ps_fwhm: f64,
}

fn default_snspd_jitter() -> f64 {
    50.0
}

impl Default for ConversionConfig {
    /// The 619 nm → 1480 nm converter, calibrated to 48 % internal
    /// efficiency at 360 W, 80 % acceptance over 70 GHz and a noise density
    /// of 2.2 cts/s/pm at 350 W.
    fn default() -> Self {
        ConversionConfig {
            lambda_in_m: 619e-9,
            lambda_pump_m: 1064e-9,
            eta_max: 1.0,
            alpha_l2_per_w: calibrate_alpha_l2(0.48, 1.0, 360.0).unwrap(),
            pump_power_w: 350.0,
            acceptance_fwhm_hz: acceptance_fwhm_for_width(70e9, 0.8).unwrap(),
            noise_density_slope: 2.2 / 350.0,
            filter_fwhm_pm: 36.5,
            t_fbg: 0.81,
            launch_transmission: 0.5,
            fiber_transmission: 0.04 / (0.28 * 0.5),
            coating_transmission: 0.92,
            eta_snspd: 0.75,
            dark_count_cps: 10.0,
            input_detuning_hz: 0.0,
            fiber_noise_cps: 0.0,
            detector_jitter_ps_fwhm: default_snspd_jitter(),
        }
    }
}

/// One multiplicative factor of the signal loss chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossFactor {
    pub name: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBudget {
    pub factors: Vec<LossFactor>,
    pub product: f64,
}

impl ConversionConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must lie in [0, 1], got {x}")))
            }
        };
        let non_neg = |name: &str, x: f64| {
            if x.is_finite() && x >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be non-negative, got {x}")))
            }
        };
        unit("eta_max", self.eta_max)?;
        unit("t_fbg", self.t_fbg)?;
        unit("launch_transmission", self.launch_transmission)?;
        unit("fiber_transmission", self.fiber_transmission)?;
        unit("coating_transmission", self.coating_transmission)?;
        unit("eta_snspd", self.eta_snspd)?;
        non_neg("pump_power_W", self.pump_power_w)?;
        non_neg("alpha_L2_per_W", self.alpha_l2_per_w)?;
        non_neg("noise_density_slope_cts_s_pm_per_W", self.noise_density_slope)?;
        non_neg("filter_fwhm_pm", self.filter_fwhm_pm)?;
        non_neg("dark_count_cps", self.dark_count_cps)?;
        non_neg("fiber_noise_cps", self.fiber_noise_cps)?;
        non_neg("detector_jitter_ps_fwhm", self.detector_jitter_ps_fwhm)?;
        if !(self.acceptance_fwhm_hz.is_finite() && self.acceptance_fwhm_hz > 0.0) {
            return Err(Error::config("acceptance_fwhm_hz must be positive"));
        }
        if !self.input_detuning_hz.is_finite() {
            return Err(Error::config("input_detuning_hz must be finite"));
        }
        self.wavelength_out()
            .map_err(|e| Error::config(format!("wavelengths: {e}")))?;
        Ok(())
    }

    pub fn wavelength_out(&self) -> Result<Wavelength> {
        wavelength_out(
            Wavelength::from_meters(self.lambda_in_m)?,
            Wavelength::from_meters(self.lambda_pump_m)?,
        )
    }

    pub fn efficiency_at_power(&self, power_w: f64) -> f64 {
        efficiency_law(self.eta_max, self.alpha_l2_per_w, power_w)
    }

    /// Relative conversion efficiency at `detuning_hz`, normalized to one at
    /// zero detuning.
    pub fn spectral_acceptance(&self, detuning_hz: f64) -> f64 {
        let x = 2.0 * SINC2_HALF_MAX_ARG * detuning_hz / self.acceptance_fwhm_hz;
        sinc(x).powi(2)
    }

    /// Pump-induced noise density (detector-corrected) at the configured
    /// pump power. Flat across the filter band, so independent of the filter
    /// center.
    pub fn noise_density(&self) -> f64 {
        self.noise_density_slope * self.pump_power_w
    }

    /// Detected rate of pump-induced noise photons.
    pub fn detected_spdc_rate(&self) -> f64 {
        self.noise_density() * self.filter_fwhm_pm * self.t_fbg * self.eta_snspd
    }

    /// All uncorrelated counts added by the converter and detection chain.
    pub fn detected_noise_rate(&self) -> f64 {
        self.detected_spdc_rate() + self.dark_count_cps + self.fiber_noise_cps
    }

    pub fn loss_budget(&self) -> LossBudget {
        let factors = vec![
            LossFactor {
                name: "conversion",
                value: self.efficiency_at_power(self.pump_power_w),
            },
            LossFactor {
                name: "spectral_acceptance",
                value: self.spectral_acceptance(self.input_detuning_hz),
            },
            LossFactor {
                name: "launch",
                value: self.launch_transmission,
            },
            LossFactor {
                name: "fiber",
                value: self.fiber_transmission,
            },
        ];
        let product = factors.iter().map(|f| f.value).product();
        LossBudget { factors, product }
    }
}

/// Passes a sorted photon stream through the converter.
///
/// Every input tag survives independently with the loss-budget product and
/// gets the output detector's jitter added. Noise and dark counts are added
/// on [`Channel::Signal`] over `[0, acquisition_s)`. Survivors keep their
/// input channel. The result is sorted.
pub fn convert_stream(
    tags: &[TimeTagRecord],
    cfg: &ConversionConfig,
    acquisition_s: f64,
    seed: SeedContract,
) -> Result<Vec<TimeTagRecord>> {
    cfg.validate()?;
    if !(acquisition_s.is_finite() && acquisition_s >= 0.0) {
        return Err(Error::config("acquisition time must be non-negative"));
    }
    let survival = cfg.loss_budget().product;

    let mut rng = seed.block(0).rng();
    let jitter = (cfg.detector_jitter_ps_fwhm > 0.0)
        .then(|| Normal::new(0.0, cfg.detector_jitter_ps_fwhm / FWHM_PER_SIGMA).unwrap());
    let mut out: Vec<TimeTagRecord> = Vec::with_capacity((tags.len() as f64 * survival) as usize);
    for tag in tags {
        if rng.random::<f64>() < survival {
            let t = match &jitter {
                Some(j) => (tag.time_ps as f64 + j.sample(&mut rng)).max(0.0).round() as u64,
                None => tag.time_ps,
            };
            out.push(TimeTagRecord::new(tag.channel, t));
        }
    }

    let mut noise_rng = seed.block(1).rng();
    out.extend(
        poisson_times(cfg.detected_noise_rate(), 0.0, acquisition_s * 1e12, &mut noise_rng)
            .map(|t| TimeTagRecord::new(Channel::Signal, t)),
    );
    sort_records(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timetag::is_time_sorted;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn nm(x: f64) -> Wavelength {
        Wavelength::from_nm(x).unwrap()
    }

    #[test]
    fn converts_619_to_1480() {
        let out = wavelength_out(nm(619.0), nm(1064.0)).unwrap();
        assert!((out.nm() - 1480.0).abs() < 0.5, "{}", out.nm());
        let out = wavelength_out(nm(500.0), nm(1000.0)).unwrap();
        assert_relative_eq!(out.nm(), 1000.0, max_relative = 1e-12);
        // 619·1063.8/(1063.8 − 619) by hand
        let out = wavelength_out(nm(619.0), nm(1063.8)).unwrap();
        assert_relative_eq!(out.nm(), 1_480.423_111_510_791, max_relative = 1e-12);
    }

    #[test]
    fn wavelength_out_needs_longer_pump() {
        assert!(wavelength_out(nm(1064.0), nm(619.0)).is_err());
        assert!(wavelength_out(nm(619.0), nm(619.0)).is_err());
    }

    proptest! {
        #[test]
        fn energy_is_conserved(li in 300.0f64..900.0, extra in 1.0f64..1500.0) {
            let lin = nm(li);
            let lp = nm(li + extra);
            let lout = wavelength_out(lin, lp).unwrap();
            let lhs = 1.0 / lin.meters();
            let rhs = 1.0 / lout.meters() + 1.0 / lp.meters();
            prop_assert!((lhs / rhs - 1.0).abs() < 1e-12);
        }

        #[test]
        fn acceptance_is_even_and_bounded(d in -1e12f64..1e12) {
            let cfg = ConversionConfig::default();
            let a = cfg.spectral_acceptance(d);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert_eq!(a, cfg.spectral_acceptance(-d));
        }

        #[test]
        fn efficiency_increases_below_first_maximum(p1 in 0.0f64..900.0, dp in 1e-3f64..50.0) {
            let cfg = ConversionConfig::default();
            let p_max = (std::f64::consts::FRAC_PI_2).powi(2) / cfg.alpha_l2_per_w;
            let p2 = p1 + dp;
            prop_assume!(p2 < p_max);
            prop_assert!(cfg.efficiency_at_power(p2) > cfg.efficiency_at_power(p1));
        }
    }

    #[test]
    fn half_max_argument_matches_bisection() {
        let (mut lo, mut hi) = (1.0f64, 2.0f64);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if (mid.sin() / mid).powi(2) > 0.5 {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert_relative_eq!(SINC2_HALF_MAX_ARG, lo, max_relative = 1e-14);
    }

    #[test]
    fn efficiency_examples() {
        let cfg = ConversionConfig::default();
        assert_eq!(cfg.efficiency_at_power(0.0), 0.0);
        // numeric inversion: alpha = asin²(√0.48)/360 ≈ 1.6273e-3 /W
        assert_relative_eq!(cfg.alpha_l2_per_w, 1.627_294_940_082_594e-3, max_relative = 1e-9);
        assert!((cfg.efficiency_at_power(360.0) - 0.48).abs() < 0.005);
        let p_peak = std::f64::consts::FRAC_PI_2.powi(2) / cfg.alpha_l2_per_w;
        assert_relative_eq!(cfg.efficiency_at_power(p_peak), cfg.eta_max, max_relative = 1e-12);
    }

    #[test]
    fn small_signal_regime_is_linear() {
        let cfg = ConversionConfig::default();
        let p_lin = 0.01 / cfg.alpha_l2_per_w; // √(αP) = 0.1
        let reference = cfg.efficiency_at_power(p_lin * 1e-3) / (p_lin * 1e-3);
        for k in 1..=10 {
            let p = p_lin * k as f64 / 10.0;
            let ratio = cfg.efficiency_at_power(p) / p;
            assert!((ratio / reference - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn acceptance_examples() {
        let cfg = ConversionConfig::default();
        assert_eq!(cfg.spectral_acceptance(0.0), 1.0);
        assert!((cfg.acceptance_fwhm_hz - 120.4e9).abs() < 0.1e9);
        assert!((cfg.spectral_acceptance(35e9) - 0.8).abs() < 0.01);
        assert!((cfg.spectral_acceptance(-35e9) - 0.8).abs() < 0.01);
        assert_relative_eq!(
            cfg.spectral_acceptance(cfg.acceptance_fwhm_hz / 2.0),
            0.5,
            max_relative = 1e-12
        );
    }

    #[test]
    fn loss_budget_examples() {
        let cfg = ConversionConfig {
            eta_max: 1.0,
            alpha_l2_per_w: calibrate_alpha_l2(0.28, 1.0, 350.0).unwrap(),
            ..Default::default()
        };
        let budget = cfg.loss_budget();
        assert!((budget.product - 0.04).abs() < 1e-3, "{}", budget.product);
        assert!(budget.product <= 1.0);

        let ones = ConversionConfig {
            eta_max: 1.0,
            alpha_l2_per_w: std::f64::consts::FRAC_PI_2.powi(2) / 350.0,
            launch_transmission: 1.0,
            fiber_transmission: 1.0,
            ..Default::default()
        };
        assert_relative_eq!(ones.loss_budget().product, 1.0, max_relative = 1e-12);

        let dead = ConversionConfig {
            launch_transmission: 0.0,
            ..Default::default()
        };
        assert_eq!(dead.loss_budget().product, 0.0);
    }

    #[test]
    fn noise_bookkeeping() {
        let cfg = ConversionConfig::default();
        assert_relative_eq!(cfg.noise_density(), 2.2, max_relative = 1e-12);
        // density times pass-band before any detection correction
        assert_relative_eq!(cfg.noise_density() * cfg.filter_fwhm_pm, 80.3, max_relative = 1e-12);
        assert_relative_eq!(cfg.detected_spdc_rate(), 2.2 * 36.5 * 0.81 * 0.75, max_relative = 1e-12);
    }

    #[test]
    fn zero_pump_and_no_dark_gives_empty_output() {
        let cfg = ConversionConfig {
            pump_power_w: 0.0,
            dark_count_cps: 0.0,
            ..Default::default()
        };
        let tags: Vec<_> = (0..10_000u64)
            .map(|i| TimeTagRecord::new(Channel::Signal, i * 1000))
            .collect();
        let out = convert_stream(&tags, &cfg, 1.0, SeedContract::new(1)).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn survival_fraction_is_binomial() {
        let cfg = ConversionConfig {
            dark_count_cps: 0.0,
            pump_power_w: 350.0,
            noise_density_slope: 0.0,
            detector_jitter_ps_fwhm: 0.0,
            ..Default::default()
        };
        let n = 2_000_000u64;
        let tags: Vec<_> = (0..n).map(|i| TimeTagRecord::new(Channel::Signal, i * 10)).collect();
        let out = convert_stream(&tags, &cfg, 0.0, SeedContract::new(3)).unwrap();
        let p = cfg.loss_budget().product;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((out.len() as f64 - n as f64 * p).abs() < 3.0 * sigma);
    }

    #[test]
    fn noise_only_counts_are_poisson() {
        // dispersion test: Σ(k−μ)²/μ over n trials is χ²(n) for Poisson data
        let cfg = ConversionConfig::default();
        let rate = cfg.detected_noise_rate();
        let trials = 200;
        let t = 2.0;
        let mu = rate * t;
        let mut stat = 0.0;
        let mut total = 0.0;
        for i in 0..trials {
            let out = convert_stream(&[], &cfg, t, SeedContract::new(1000 + i)).unwrap();
            assert!(is_time_sorted(&out));
            assert!(out.iter().all(|x| x.time_ps < 2_000_000_000_000));
            let k = out.len() as f64;
            stat += (k - mu).powi(2) / mu;
            total += k;
        }
        let n = trials as f64;
        assert!((stat - n).abs() < 4.0 * (2.0 * n).sqrt(), "dispersion {stat}");
        let mean = total / n;
        assert!((mean - mu).abs() < 3.0 * (mu / n).sqrt(), "{mean} vs {mu}");
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = ConversionConfig {
            t_fbg: 1.5,
            ..Default::default()
        };
        assert!(matches!(
            convert_stream(&[], &cfg, 1.0, SeedContract::new(0)),
            Err(Error::Config(_))
        ));
        let cfg = ConversionConfig {
            lambda_pump_m: 500e-9,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
