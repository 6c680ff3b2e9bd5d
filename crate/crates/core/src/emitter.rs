//! Pulsed single-emitter source with charge-state blinking.
//!
//! Each excitation pulse finds the emitter either bright or dark. The state
//! follows a two-state Markov chain sampled once per pulse. A bright pulse
//! yields at most one detected photon, delayed from the pulse by an
//! exponential decay and smeared by Gaussian detector jitter. Uncorrelated
//! background counts arrive as a homogeneous Poisson process.
//!
//! Pulses are simulated in fixed-size blocks. The telegraph state is drawn
//! once, sequentially, from block 0 of the seed contract and handed to every
//! block. Block `b` draws its photons from substream `b + 1`, so the output
//! does not depend on the thread count.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SeedContract;
use crate::timetag::{sort_records, Channel, TimeTagRecord};

/// Pulses per simulation block.
pub const BLOCK_PULSES: u64 = 1 << 20;

/// FWHM of a Gaussian over its standard deviation, `2·sqrt(2·ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterConfig {
    #[serde(default = "defaults::rep_rate_hz")]
    pub rep_rate_hz: f64,
    pub n_pulses: u64,
    #[serde(default = "defaults::lifetime_ns")]
    pub lifetime_ns: f64,
    /// Unconditional probability that a pulse produces a detected photon.
    /// The bright-state probability is this divided by `beta`.
    pub p_detect_per_pulse: f64,
    /// Stationary probability of the bright charge state.
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    #[serde(default = "defaults::telegraph_tau_pulses")]
    pub telegraph_tau_pulses: f64,
    #[serde(default)]
    pub background_rate_cps: f64,
    #[serde(default = "defaults::jitter")]
    pub detector_jitter_ps_fwhm: f64,
}

mod defaults {
    pub fn rep_rate_hz() -> f64 {
        1e6
    }
    pub fn lifetime_ns() -> f64 {
        7.47
    }
    pub fn beta() -> f64 {
        1.0
    }
    pub fn telegraph_tau_pulses() -> f64 {
        7.5
    }
    pub fn jitter() -> f64 {
        400.0
    }
}

impl Default for EmitterConfig {
    fn default() -> Self {
        EmitterConfig {
            rep_rate_hz: defaults::rep_rate_hz(),
            n_pulses: 0,
            lifetime_ns: defaults::lifetime_ns(),
            p_detect_per_pulse: 9.33e-4,
            beta: defaults::beta(),
            telegraph_tau_pulses: defaults::telegraph_tau_pulses(),
            background_rate_cps: 0.0,
            detector_jitter_ps_fwhm: defaults::jitter(),
        }
    }
}

impl EmitterConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        if !finite_pos(self.rep_rate_hz) {
            return Err(Error::config("rep_rate_hz must be positive"));
        }
        if !finite_pos(self.lifetime_ns) {
            return Err(Error::config("lifetime_ns must be positive"));
        }
        // The decay must fit well inside one pulse period.
        if self.lifetime_ns * 1e-9 * self.rep_rate_hz > 0.05 {
            return Err(Error::config(
                "pulse period must exceed 20 lifetimes (rep_rate_hz * lifetime too large)",
            ));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::config("beta must lie in (0, 1]"));
        }
        if !(self.p_detect_per_pulse >= 0.0 && self.p_detect_per_pulse < 1.0) {
            return Err(Error::config("p_detect_per_pulse must lie in [0, 1)"));
        }
        if self.p_detect_per_pulse > self.beta {
            return Err(Error::config(
                "p_detect_per_pulse exceeds beta: bright-state detection probability would be > 1",
            ));
        }
        if !finite_pos(self.telegraph_tau_pulses) {
            return Err(Error::config("telegraph_tau_pulses must be positive"));
        }
        if !(self.background_rate_cps.is_finite() && self.background_rate_cps >= 0.0) {
            return Err(Error::config("background_rate_cps must be non-negative"));
        }
        if !(self.detector_jitter_ps_fwhm.is_finite() && self.detector_jitter_ps_fwhm >= 0.0) {
            return Err(Error::config("detector_jitter_ps_fwhm must be non-negative"));
        }
        Ok(())
    }

    pub fn period_ps(&self) -> f64 {
        1e12 / self.rep_rate_hz
    }

    pub fn acquisition_s(&self) -> f64 {
        self.n_pulses as f64 / self.rep_rate_hz
    }

    /// Detection probability for a pulse that finds the emitter bright.
    pub fn p_detect_bright(&self) -> f64 {
        self.p_detect_per_pulse / self.beta
    }

    pub fn telegraph(&self) -> Telegraph {
        Telegraph {
            beta: self.beta,
            tau_pulses: self.telegraph_tau_pulses,
        }
    }
}

/// Bright/dark two-state chain, sampled once per pulse.
///
/// With total flip probability `r = 1 - exp(-1/tau)` split as
/// `p_bright_to_dark = (1 - beta) r` and `p_dark_to_bright = beta r`, the
/// stationary bright probability is `beta` and the state autocorrelation is
/// `beta² (1 + A e^{-n/tau})` with `A = (1 - beta)/beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Telegraph {
    pub beta: f64,
    pub tau_pulses: f64,
}

/// Half-open run of bright pulses `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BrightRun {
    pub start: u64,
    pub end: u64,
}

impl Telegraph {
    pub fn flip_probabilities(&self) -> (f64, f64) {
        let r = -(-1.0 / self.tau_pulses).exp_m1();
        ((1.0 - self.beta) * r, self.beta * r)
    }

    /// Bunching amplitude of the intensity autocorrelation.
    pub fn bunching_amplitude(&self) -> f64 {
        (1.0 - self.beta) / self.beta
    }

    /// Runs of consecutive bright pulses over `n_pulses`, starting from the
    /// stationary distribution. Dwell times are drawn as geometric variates,
    /// so the cost scales with the number of state changes.
    pub fn bright_runs<R: Rng + ?Sized>(&self, n_pulses: u64, rng: &mut R) -> Vec<BrightRun> {
        let (p_bd, p_db) = self.flip_probabilities();
        let dwell = |p: f64| (p > 0.0).then(|| Geometric::new(p).expect("flip probability in (0,1]"));
        let leave_bright = dwell(p_bd);
        let leave_dark = dwell(p_db);

        let mut runs = Vec::new();
        let mut bright = rng.random::<f64>() < self.beta;
        let mut pos = 0u64;
        while pos < n_pulses {
            let dist = if bright { &leave_bright } else { &leave_dark };
            let len = match dist {
                Some(g) => g.sample(rng).saturating_add(1),
                None => u64::MAX,
            };
            let end = pos.saturating_add(len).min(n_pulses);
            if bright {
                runs.push(BrightRun { start: pos, end });
            }
            pos = end;
            bright = !bright;
        }
        runs
    }

    /// Per-pulse states, expanded from [`Telegraph::bright_runs`].
    pub fn states<R: Rng + ?Sized>(&self, n_pulses: u64, rng: &mut R) -> Vec<bool> {
        let mut states = vec![false; n_pulses as usize];
        for run in self.bright_runs(n_pulses, rng) {
            states[run.start as usize..run.end as usize].fill(true);
        }
        states
    }
}

/// Simulates the detected photon stream of the pulsed emitter on
/// [`Channel::Signal`], sorted by time.
pub fn simulate_emission(cfg: &EmitterConfig, seed: SeedContract) -> Result<Vec<TimeTagRecord>> {
    cfg.validate()?;
    if cfg.n_pulses == 0 {
        return Ok(Vec::new());
    }

    let runs = cfg
        .telegraph()
        .bright_runs(cfg.n_pulses, &mut seed.block(0).rng());

    let n_blocks = cfg.n_pulses.div_ceil(BLOCK_PULSES);
    let blocks: Vec<Vec<TimeTagRecord>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let start = b * BLOCK_PULSES;
            let end = (start + BLOCK_PULSES).min(cfg.n_pulses);
            let mut rng = seed.block(b + 1).rng();
            simulate_block(cfg, &runs, start, end, &mut rng)
        })
        .collect();

    let mut tags: Vec<TimeTagRecord> = blocks.into_iter().flatten().collect();
    sort_records(&mut tags);
    Ok(tags)
}

fn simulate_block(
    cfg: &EmitterConfig,
    runs: &[BrightRun],
    start: u64,
    end: u64,
    rng: &mut ChaCha8Rng,
) -> Vec<TimeTagRecord> {
    let period = cfg.period_ps();
    let mut out = Vec::new();

    let q = cfg.p_detect_bright();
    if q > 0.0 {
        let skip = Geometric::new(q).expect("validated probability");
        let decay = Exp::new(1.0 / (cfg.lifetime_ns * 1e3)).expect("validated lifetime");
        let jitter = (cfg.detector_jitter_ps_fwhm > 0.0).then(|| {
            Normal::new(0.0, cfg.detector_jitter_ps_fwhm / FWHM_PER_SIGMA).expect("finite jitter")
        });

        let first = runs.partition_point(|r| r.end <= start);
        for run in runs[first..].iter().take_while(|r| r.start < end) {
            let lo = run.start.max(start);
            let hi = run.end.min(end);
            let mut pulse = lo;
            loop {
                pulse = pulse.saturating_add(skip.sample(rng));
                if pulse >= hi {
                    break;
                }
                let mut t = pulse as f64 * period + decay.sample(rng);
                if let Some(j) = &jitter {
                    t += j.sample(rng);
                }
                out.push(TimeTagRecord::new(Channel::Signal, t.max(0.0).round() as u64));
                pulse += 1;
            }
        }
    }

    if cfg.background_rate_cps > 0.0 {
        let t0 = start as f64 * period;
        let t1 = end as f64 * period;
        out.extend(
            poisson_times(cfg.background_rate_cps, t0, t1, rng)
                .map(|t| TimeTagRecord::new(Channel::Signal, t)),
        );
    }
    out
}

/// Event times of a homogeneous Poisson process of `rate_cps` on
/// `[t0_ps, t1_ps)`, unsorted.
pub(crate) fn poisson_times<'a, R: Rng + ?Sized>(
    rate_cps: f64,
    t0_ps: f64,
    t1_ps: f64,
    rng: &'a mut R,
) -> impl Iterator<Item = u64> + 'a {
    let span = (t1_ps - t0_ps).max(0.0);
    let mean = rate_cps * span * 1e-12;
    let n = if mean > 0.0 {
        Poisson::new(mean).expect("positive mean").sample(rng) as u64
    } else {
        0
    };
    (0..n).map(move |_| (t0_ps + rng.random::<f64>() * span).floor() as u64)
}

/// Routes each tag through a lossless 50:50 beamsplitter. Returns the
/// [`Channel::Signal`] arm and the [`Channel::Second`] arm, both sorted.
pub fn split_50_50(
    tags: &[TimeTagRecord],
    seed: SeedContract,
) -> (Vec<TimeTagRecord>, Vec<TimeTagRecord>) {
    let mut rng = seed.rng();
    let mut a = Vec::with_capacity(tags.len() / 2 + 1);
    let mut b = Vec::with_capacity(tags.len() / 2 + 1);
    for tag in tags {
        if rng.random::<bool>() {
            a.push(TimeTagRecord::new(Channel::Signal, tag.time_ps));
        } else {
            b.push(TimeTagRecord::new(Channel::Second, tag.time_ps));
        }
    }
    (a, b)
}
