//! Discrete-sum trajectory engine over the reduced variable `z`.
//!
//! The conditional distribution after `m` counts and time `τ` is
//! `p(z, m, τ) ∝ z^{2m} e^{-z²τ} p₀(z)`. A count multiplies every weight by
//! `z²`, no-count evolution by `e^{-z² δτ}`; both are diagonal, so they
//! commute and only the totals `(m, τ)` matter.

use num_complex::Complex64;

use crate::distribution::AtomNumberDistribution;
use crate::error::{Error, Result};
use crate::trajectory::{self, CountingEngine, StepSchedule, TrajectoryRecord};

/// Entries this many e-folds below the largest weight are dropped.
pub const DEFAULT_PRUNE_THRESHOLD: f64 = 400.0;

#[derive(Debug, Clone)]
pub struct ExactEngineState {
    dist: AtomNumberDistribution,
    m: u64,
    tau: f64,
    c: Complex64,
    prune_threshold: Option<f64>,
    second_moment: f64,
}

impl ExactEngineState {
    pub fn new(init: AtomNumberDistribution, c: Complex64) -> Result<Self> {
        let mut state = ExactEngineState {
            dist: init,
            m: 0,
            tau: 0.0,
            c,
            prune_threshold: Some(DEFAULT_PRUNE_THRESHOLD),
            second_moment: 0.0,
        };
        state.renormalize()?;
        Ok(state)
    }

    /// Disables (`None`) or changes the pruning threshold.
    pub fn with_prune_threshold(mut self, threshold: Option<f64>) -> Self {
        self.prune_threshold = threshold;
        self
    }

    pub fn distribution(&self) -> &AtomNumberDistribution {
        &self.dist
    }

    pub fn c(&self) -> Complex64 {
        self.c
    }

    /// Conditional `⟨z²⟩`, cached at every renormalization.
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    // Log-sum-exp shift with the second moment accumulated from the same
    // exponentials, then pruning.
    fn renormalize(&mut self) -> Result<()> {
        let max = self.dist.log_weights().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::Contradiction("conditional distribution vanished"));
        }
        let cutoff = self.prune_threshold.map_or(f64::NEG_INFINITY, |t| -t);
        let mut sum = 0.0;
        let mut z2_sum = 0.0;
        let mut prune = false;
        let (support, weights) = self.dist.parts_mut();
        for (w, &z) in weights.iter_mut().zip(support) {
            *w -= max;
            if *w < cutoff || *w == f64::NEG_INFINITY {
                prune = true;
            }
            let e = w.exp();
            let z = z as f64;
            sum += e;
            z2_sum += z * z * e;
        }
        let ln_sum = sum.ln();
        for w in self.dist.log_weights_mut() {
            *w -= ln_sum;
        }
        self.second_moment = z2_sum / sum;
        if prune {
            let keep: Vec<bool> = self
                .dist
                .log_weights()
                .iter()
                .map(|w| *w > f64::NEG_INFINITY && *w + ln_sum >= cutoff)
                .collect();
            self.dist.retain_mask(&keep);
            // the dropped mass is below e^{-threshold}; restore exact normalization
            let lse = crate::special::log_sum_exp(self.dist.log_weights());
            for w in self.dist.log_weights_mut() {
                *w -= lse;
            }
            self.second_moment = self.dist.moment(2);
        }
        Ok(())
    }

    /// Detection of one photon: `p(z) ← z² p(z)`, renormalized.
    pub fn apply_count(&mut self) -> Result<()> {
        if self.dist.support().iter().zip(self.dist.log_weights()).all(|(&z, w)| z == 0 || *w == f64::NEG_INFINITY) {
            return Err(Error::Contradiction("a photon cannot be counted from a state with z = 0 only"));
        }
        let (support, weights) = self.dist.parts_mut();
        for (w, &z) in weights.iter_mut().zip(support) {
            *w = if z == 0 { f64::NEG_INFINITY } else { *w + 2.0 * (z.unsigned_abs() as f64).ln() };
        }
        self.m += 1;
        self.renormalize()
    }

    /// No-count evolution over `dtau`: `p(z) ← e^{-z² dtau} p(z)`.
    pub fn apply_no_count(&mut self, dtau: f64) -> Result<()> {
        if !(dtau >= 0.0) {
            return Err(Error::invalid(format!("dtau must be >= 0, got {dtau}")));
        }
        if dtau == 0.0 {
            return Ok(());
        }
        let (support, weights) = self.dist.parts_mut();
        for (w, &z) in weights.iter_mut().zip(support) {
            let z = z as f64;
            *w -= z * z * dtau;
        }
        self.tau += dtau;
        self.renormalize()
    }

    /// `⟨a†a⟩_c = |C|² Σ z² p(z)`.
    pub fn photon_expectation(&self) -> f64 {
        self.c.norm_sqr() * self.second_moment
    }
}

impl CountingEngine for ExactEngineState {
    fn count_rate(&self) -> Result<f64> {
        Ok(self.second_moment)
    }
    fn apply_count(&mut self) -> Result<()> {
        ExactEngineState::apply_count(self)
    }
    fn advance(&mut self, dtau: f64) -> Result<()> {
        self.apply_no_count(dtau)
    }
    fn photon_expectation(&self) -> f64 {
        ExactEngineState::photon_expectation(self)
    }
    fn count(&self) -> u64 {
        self.m
    }
    fn tau(&self) -> f64 {
        self.tau
    }
    fn snapshot(&self) -> Option<AtomNumberDistribution> {
        Some(self.dist.clone())
    }
}

/// One seeded trajectory of the exact engine starting from `init`.
pub fn run_trajectory(
    init: AtomNumberDistribution,
    c: Complex64,
    schedule: &StepSchedule,
    seed: u64,
) -> Result<TrajectoryRecord> {
    let mut state = ExactEngineState::new(init, c)?;
    trajectory::run(&mut state, schedule, seed)
}

/// `z^{2m} e^{-z²τ} p₀(z)`, normalized, evaluated directly from `p₀`.
pub fn conditional_from_initial(init: &AtomNumberDistribution, m: u64, tau: f64) -> Result<AtomNumberDistribution> {
    let log_weights = init
        .support()
        .iter()
        .zip(init.log_weights())
        .map(|(&z, w)| {
            let zf = z as f64;
            let power = if m == 0 { 0.0 } else if z == 0 { f64::NEG_INFINITY } else { 2.0 * m as f64 * zf.abs().ln() };
            w + power - zf * zf * tau
        })
        .collect();
    AtomNumberDistribution::from_log_weights(init.support().to_vec(), log_weights, init.mode())
}
