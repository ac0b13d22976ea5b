//! Atom-number distributions over the statistical variable `z`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DiffractionMode, LatticeGeometry};
use crate::special::{ln_binomial, log_sum_exp};

/// Default smallest atom number accepted by [`gaussian_of`].
pub const DEFAULT_GAUSSIAN_MIN_ATOMS: u64 = 50;

/// Discrete distribution over integer `z` with log-domain weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomNumberDistribution {
    support: Vec<i64>,
    log_weights: Vec<f64>,
    mode: DiffractionMode,
}

impl AtomNumberDistribution {
    /// Builds and normalizes a distribution. `support` must be strictly
    /// increasing; weights are given as logarithms and need not be
    /// normalized.
    pub fn from_log_weights(
        support: Vec<i64>,
        log_weights: Vec<f64>,
        mode: DiffractionMode,
    ) -> Result<Self> {
        if support.len() != log_weights.len() {
            return Err(Error::LengthMismatch { expected: support.len(), actual: log_weights.len() });
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("support must be strictly increasing"));
        }
        if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::invalid("log weights must be finite or -inf"));
        }
        let mut dist = AtomNumberDistribution { support, log_weights, mode };
        dist.normalize()?;
        Ok(dist)
    }

    /// Builds from nonnegative probabilities (normalized on construction).
    pub fn from_probabilities(support: Vec<i64>, probs: &[f64], mode: DiffractionMode) -> Result<Self> {
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid("probabilities must be finite and nonnegative"));
        }
        let log_weights = probs.iter().map(|p| p.ln()).collect();
        Self::from_log_weights(support, log_weights, mode)
    }

    /// Point mass at `z`.
    pub fn delta(z: i64, mode: DiffractionMode) -> Self {
        AtomNumberDistribution { support: vec![z], log_weights: vec![0.0], mode }
    }

    pub fn support(&self) -> &[i64] {
        &self.support
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn mode(&self) -> DiffractionMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub(crate) fn log_weights_mut(&mut self) -> &mut [f64] {
        &mut self.log_weights
    }

    pub(crate) fn parts_mut(&mut self) -> (&[i64], &mut [f64]) {
        (&self.support, &mut self.log_weights)
    }

    /// Shifts log weights so that `Σ exp(w) = 1`.
    pub fn normalize(&mut self) -> Result<()> {
        let lse = log_sum_exp(&self.log_weights);
        if lse == f64::NEG_INFINITY {
            return Err(Error::Contradiction("distribution has no weight left to normalize"));
        }
        for w in &mut self.log_weights {
            *w -= lse;
        }
        Ok(())
    }

    /// Drops entries more than `threshold` e-folds below the largest weight.
    pub fn prune(&mut self, threshold: f64) {
        let max = self.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cutoff = max - threshold;
        let keep: Vec<bool> = self
            .log_weights
            .iter()
            .map(|w| *w >= cutoff && *w > f64::NEG_INFINITY)
            .collect();
        self.retain_mask(&keep);
    }

    pub(crate) fn retain_mask(&mut self, keep: &[bool]) {
        let mut i = 0;
        self.support.retain(|_| {
            i += 1;
            keep[i - 1]
        });
        let mut i = 0;
        self.log_weights.retain(|_| {
            i += 1;
            keep[i - 1]
        });
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    pub fn total_probability(&self) -> f64 {
        self.log_weights.iter().map(|w| w.exp()).sum()
    }

    /// Probability of `z`, zero outside the support.
    pub fn probability_of(&self, z: i64) -> f64 {
        self.support
            .binary_search(&z)
            .map(|i| self.log_weights[i].exp())
            .unwrap_or(0.0)
    }

    /// `Σ_z z^order p(z)`.
    pub fn moment(&self, order: u32) -> f64 {
        self.support
            .iter()
            .zip(&self.log_weights)
            .map(|(&z, w)| (z as f64).powi(order as i32) * w.exp())
            .sum()
    }

    /// Largest-probability `z` among `z > 0`.
    pub fn positive_argmax(&self) -> Option<i64> {
        self.support
            .iter()
            .zip(&self.log_weights)
            .filter(|(z, w)| **z > 0 && **w > f64::NEG_INFINITY)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(z, _)| *z)
    }

    /// Smallest gap between neighbouring support points (1 for a singleton).
    pub fn support_step(&self) -> i64 {
        self.support.windows(2).map(|w| w[1] - w[0]).min().unwrap_or(1)
    }

    /// Writes `z,probability` rows with a header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["z", "probability"])?;
        for (z, lw) in self.support.iter().zip(&self.log_weights) {
            w.write_record([z.to_string(), lw.exp().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Total-variation distance `½ Σ |p − q|` over the union of supports.
pub fn total_variation(a: &AtomNumberDistribution, b: &AtomNumberDistribution) -> f64 {
    let mut zs: Vec<i64> = a.support().iter().chain(b.support()).copied().collect();
    zs.sort_unstable();
    zs.dedup();
    0.5 * zs.iter().map(|&z| (a.probability_of(z) - b.probability_of(z)).abs()).sum::<f64>()
}

fn binomial_log_pmf(n: u64, k: u64, p: f64) -> f64 {
    let log_term = |count: u64, prob: f64| if count == 0 { 0.0 } else { count as f64 * prob.ln() };
    ln_binomial(n, k) + log_term(k, p) + log_term(n - k, 1.0 - p)
}

/// Odd-minus-even number difference of the superfluid in the diffraction
/// minimum: `z = 2z̃ − N` with `z̃ ~ Binomial(N, Q/M)`. Only even `M`
/// (`Q = M/2`) is supported.
pub fn binomial_minimum(geom: &LatticeGeometry) -> Result<AtomNumberDistribution> {
    geom.validate_for(DiffractionMode::Minimum)?;
    if geom.sites % 2 != 0 {
        return Err(Error::invalid(format!("diffraction minimum requires even M, got M = {}", geom.sites)));
    }
    if geom.odd_sites * 2 != geom.sites {
        return Err(Error::invalid(format!(
            "even M requires Q = M/2, got Q = {} with M = {}",
            geom.odd_sites, geom.sites
        )));
    }
    let n = geom.atoms;
    let p = geom.odd_sites as f64 / geom.sites as f64;
    let support = (0..=n).map(|k| 2 * k as i64 - n as i64).collect();
    let log_weights = (0..=n).map(|k| binomial_log_pmf(n, k, p)).collect();
    AtomNumberDistribution::from_log_weights(support, log_weights, DiffractionMode::Minimum)
}

/// Atom number in the `K` illuminated sites of the superfluid:
/// `z ~ Binomial(N, K/M)`.
pub fn binomial_maximum(geom: &LatticeGeometry) -> Result<AtomNumberDistribution> {
    geom.validate()?;
    let n = geom.atoms;
    let p = geom.illuminated_fraction();
    let support = (0..=n as i64).collect();
    let log_weights = (0..=n)
        .map(|k| {
            if p >= 1.0 {
                if k == n { 0.0 } else { f64::NEG_INFINITY }
            } else {
                binomial_log_pmf(n, k, p)
            }
        })
        .collect();
    AtomNumberDistribution::from_log_weights(support, log_weights, DiffractionMode::Maximum)
}

/// The superfluid distribution for a diffraction mode.
pub fn superfluid(mode: DiffractionMode, geom: &LatticeGeometry) -> Result<AtomNumberDistribution> {
    match mode {
        DiffractionMode::Minimum => binomial_minimum(geom),
        DiffractionMode::Maximum => binomial_maximum(geom),
    }
}

/// Mean `z₀` and width `σ` of a Gaussian atom-number distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub z0: f64,
    pub sigma: f64,
}

impl GaussianSpec {
    pub fn new(z0: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) || !z0.is_finite() {
            return Err(Error::invalid(format!("Gaussian needs finite z0 and sigma > 0, got sigma = {sigma}")));
        }
        Ok(GaussianSpec { z0, sigma })
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}

/// Large-`N` Gaussian limit of the superfluid distribution: `(0, √N)` in the
/// minimum, `(NK/M, √(N(K/M)(1−K/M)))` in the maximum.
pub fn gaussian_of(mode: DiffractionMode, geom: &LatticeGeometry, min_atoms: u64) -> Result<GaussianSpec> {
    geom.validate_for(mode)?;
    if geom.atoms < min_atoms {
        return Err(Error::invalid(format!(
            "Gaussian approximation needs N >= {min_atoms}, got N = {}",
            geom.atoms
        )));
    }
    let n = geom.atoms as f64;
    match mode {
        DiffractionMode::Minimum => GaussianSpec::new(0.0, n.sqrt()),
        DiffractionMode::Maximum => {
            let f = geom.illuminated_fraction();
            if f >= 1.0 {
                return Err(Error::invalid(
                    "K = M has no atom-number fluctuations (sigma = 0); use the exact engine",
                ));
            }
            GaussianSpec::new(n * f, (n * f * (1.0 - f)).sqrt())
        }
    }
}

/// The Gaussian density sampled on integer `z` in `[z₀ − width·σ, z₀ + width·σ]`
/// with spacing `step`, renormalized on that grid.
pub fn discretized_gaussian(
    spec: &GaussianSpec,
    mode: DiffractionMode,
    width: f64,
    step: i64,
) -> Result<AtomNumberDistribution> {
    if step < 1 {
        return Err(Error::invalid("grid step must be >= 1"));
    }
    let lo = (spec.z0 - width * spec.sigma).floor() as i64;
    let hi = (spec.z0 + width * spec.sigma).ceil() as i64;
    let support: Vec<i64> = (lo..=hi).step_by(step as usize).collect();
    let log_weights = support
        .iter()
        .map(|&z| {
            let d = z as f64 - spec.z0;
            -d * d / (2.0 * spec.variance())
        })
        .collect();
    AtomNumberDistribution::from_log_weights(support, log_weights, mode)
}
