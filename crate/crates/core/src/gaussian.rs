//! Closed-form trajectory engine for a macroscopic superfluid.
//!
//! With a Gaussian initial distribution and sums over `z` replaced by
//! integrals, the conditional moments after `m` counts and time `τ` are
//! ratios of Gaussian moment integrals with `p = τ + 1/(2σ²)` and
//! `q = z₀/(2σ²)`:
//!
//! * diffraction minimum (`z₀ = 0`): `P_{m+1} = (m + ½)/(τ + 1/(2σ²)) δτ`;
//! * diffraction maximum: `P_{m+1} = (2m+1)(2m+2) a² S_{m+1}(b)/S_m(b) δτ`
//!   with `a = q/p`, `b = p/(4q²)` and
//!   `S_m(b) = Σ_{k=0}^{m} b^k / ((2m−2k)! k!)`.
//!
//! Only `(m, τ)` is stored; no distribution is ever materialized.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::distribution::GaussianSpec;
use crate::error::{Error, Result};
use crate::model::DiffractionMode;
use crate::special::{ln_factorial, ln_odd_double_factorial, log_sum_exp};
use crate::trajectory::{self, CountingEngine, StepSchedule, TrajectoryRecord};

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::invalid(format!("Gaussian exponent p must be > 0, got {p}")));
    }
    Ok(())
}

/// `ln ∫_0^∞ x^{2n} e^{-px²} dx = ln[(2n−1)!! / (2(2p)^n) · √(π/p)]`.
pub fn ln_gauss_even_moment(n: u64, p: f64) -> Result<f64> {
    check_p(p)?;
    Ok(ln_odd_double_factorial(n) - LN_2 - n as f64 * (2.0 * p).ln() + 0.5 * (PI / p).ln())
}

/// `∫_0^∞ x^{2n} e^{-px²} dx`.
pub fn gauss_even_moment(n: u64, p: f64) -> Result<f64> {
    ln_gauss_even_moment(n, p).map(f64::exp)
}

/// `ln ∫_0^∞ x^{2n+1} e^{-px²} dx = ln[n! / (2p^{n+1})]`.
pub fn ln_gauss_odd_moment(n: u64, p: f64) -> Result<f64> {
    check_p(p)?;
    Ok(ln_factorial(n) - LN_2 - (n + 1) as f64 * p.ln())
}

/// `∫_0^∞ x^{2n+1} e^{-px²} dx`.
pub fn gauss_odd_moment(n: u64, p: f64) -> Result<f64> {
    ln_gauss_odd_moment(n, p).map(f64::exp)
}

/// `∫_{-∞}^{∞} x^n e^{-px² + 2qx} dx` as `sign · exp(ln_reduced + exponent)`
/// with the completed-square factor `e^{q²/p}` kept apart in `exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltedMoment {
    pub sign: f64,
    pub ln_reduced: f64,
    pub exponent: f64,
}

impl TiltedMoment {
    pub fn value(&self) -> f64 {
        if self.sign == 0.0 {
            return 0.0;
        }
        self.sign * (self.ln_reduced + self.exponent).exp()
    }

    /// `self / other`; the `e^{q²/p}` factors cancel before exponentiation.
    pub fn ratio(&self, other: &TiltedMoment) -> f64 {
        if self.sign == 0.0 {
            return 0.0;
        }
        self.sign * other.sign * (self.ln_reduced - other.ln_reduced + self.exponent - other.exponent).exp()
    }
}

/// Tilted Gaussian moment from the finite sum
/// `n! e^{q²/p} √(π/p) (q/p)^n Σ_{k=0}^{⌊n/2⌋} (p/(4q²))^k / ((n−2k)! k!)`,
/// falling back to the centered moments when `q = 0`.
pub fn tilted_gauss_moment_log(n: u64, p: f64, q: f64) -> Result<TiltedMoment> {
    check_p(p)?;
    if !q.is_finite() {
        return Err(Error::invalid("tilt q must be finite"));
    }
    if q == 0.0 {
        if n % 2 == 1 {
            return Ok(TiltedMoment { sign: 0.0, ln_reduced: f64::NEG_INFINITY, exponent: 0.0 });
        }
        let half = ln_gauss_even_moment(n / 2, p)?;
        return Ok(TiltedMoment { sign: 1.0, ln_reduced: half + LN_2, exponent: 0.0 });
    }
    let ln_ratio = (p / (4.0 * q * q)).ln();
    let terms: Vec<f64> = (0..=n / 2)
        .map(|k| k as f64 * ln_ratio - ln_factorial(n - 2 * k) - ln_factorial(k))
        .collect();
    let ln_reduced =
        ln_factorial(n) + 0.5 * (PI / p).ln() + n as f64 * (q.abs() / p).ln() + log_sum_exp(&terms);
    let sign = if q < 0.0 && n % 2 == 1 { -1.0 } else { 1.0 };
    Ok(TiltedMoment { sign, ln_reduced, exponent: q * q / p })
}

/// `∫_{-∞}^{∞} x^n e^{-px² + 2qx} dx`. Overflows for large `q²/p`; use
/// [`tilted_gauss_moment_log`] there.
pub fn tilted_gauss_moment(n: u64, p: f64, q: f64) -> Result<f64> {
    tilted_gauss_moment_log(n, p, q).map(|t| t.value())
}

/// Coefficients of the conditional exponent `−p z² + 2q z` and the derived
/// `a = q/p`, `b = p/(4q²) = pσ⁴/z₀²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltedGaussianParams {
    pub p: f64,
    pub q: f64,
    pub a: f64,
    pub b: f64,
}

impl TiltedGaussianParams {
    pub fn new(spec: &GaussianSpec, tau: f64) -> Self {
        let var = spec.variance();
        let p = tau + 1.0 / (2.0 * var);
        let q = spec.z0 / (2.0 * var);
        TiltedGaussianParams { p, q, a: q / p, b: p / (4.0 * q * q) }
    }
}

/// Which denominator the minimum-mode rate uses. `Derived` is
/// `τ + 1/(2σ²)`, the ratio of the moment integrals; `Printed` is
/// `τ + 1/σ²`, kept only so the verifier can show the discrepancy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinimumRateForm {
    #[default]
    Derived,
    Printed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEngineState {
    spec: GaussianSpec,
    mode: DiffractionMode,
    m: u64,
    tau: f64,
    photon_scale: f64,
    minimum_form: MinimumRateForm,
}

impl GaussianEngineState {
    /// `photon_scale` is `|C|²`, used only to report `⟨a†a⟩_c`.
    pub fn new(spec: GaussianSpec, mode: DiffractionMode, photon_scale: f64) -> Result<Self> {
        GaussianSpec::new(spec.z0, spec.sigma)?;
        match mode {
            DiffractionMode::Minimum if spec.z0 != 0.0 => {
                return Err(Error::invalid("diffraction minimum requires z0 = 0"));
            }
            DiffractionMode::Maximum if !(spec.z0 > 0.0) => {
                return Err(Error::invalid("diffraction maximum requires z0 > 0"));
            }
            _ => {}
        }
        Ok(GaussianEngineState { spec, mode, m: 0, tau: 0.0, photon_scale, minimum_form: MinimumRateForm::Derived })
    }

    pub fn with_minimum_form(mut self, form: MinimumRateForm) -> Self {
        self.minimum_form = form;
        self
    }

    /// State at a given `(m, τ)`.
    pub fn at(mut self, m: u64, tau: f64) -> Result<Self> {
        if !(tau >= 0.0) {
            return Err(Error::invalid(format!("tau must be >= 0, got {tau}")));
        }
        self.m = m;
        self.tau = tau;
        Ok(self)
    }

    pub fn spec(&self) -> &GaussianSpec {
        &self.spec
    }

    pub fn mode(&self) -> DiffractionMode {
        self.mode
    }

    pub fn params(&self) -> TiltedGaussianParams {
        TiltedGaussianParams::new(&self.spec, self.tau)
    }

    fn minimum_rate(&self) -> f64 {
        let var = self.spec.variance();
        let denom = match self.minimum_form {
            MinimumRateForm::Derived => self.tau + 1.0 / (2.0 * var),
            MinimumRateForm::Printed => self.tau + 1.0 / var,
        };
        (self.m as f64 + 0.5) / denom
    }

    fn maximum_rate(&self) -> f64 {
        let TiltedGaussianParams { a, b, .. } = self.params();
        let m = self.m;
        let ln_b = b.ln();
        let ln_sum = |top: u64| {
            let terms: Vec<f64> = (0..=top)
                .map(|k| k as f64 * ln_b - ln_factorial(2 * top - 2 * k) - ln_factorial(k))
                .collect();
            log_sum_exp(&terms)
        };
        let mf = m as f64;
        (2.0 * mf + 1.0) * (2.0 * mf + 2.0) * a * a * (ln_sum(m + 1) - ln_sum(m)).exp()
    }

    /// Conditional `⟨z²⟩`, the jump probability per unit `τ`.
    pub fn rate(&self) -> f64 {
        match self.mode {
            DiffractionMode::Minimum => self.minimum_rate(),
            DiffractionMode::Maximum => self.maximum_rate(),
        }
    }

    /// Conditional `⟨z^order⟩`.
    pub fn conditional_moment(&self, order: u32) -> Result<f64> {
        let m = self.m;
        let TiltedGaussianParams { p, q, .. } = self.params();
        match self.mode {
            DiffractionMode::Minimum => {
                if order % 2 == 1 {
                    return Ok(0.0);
                }
                let j = order as u64 / 2;
                Ok((ln_gauss_even_moment(m + j, p)? - ln_gauss_even_moment(m, p)?).exp())
            }
            DiffractionMode::Maximum => {
                let num = tilted_gauss_moment_log(2 * m + order as u64, p, q)?;
                let den = tilted_gauss_moment_log(2 * m, p, q)?;
                Ok(num.ratio(&den))
            }
        }
    }

    /// Conditional `⟨|z|^order⟩` in the diffraction minimum; odd orders use
    /// the odd half-line moments.
    pub fn conditional_abs_moment(&self, order: u32) -> Result<f64> {
        if self.mode != DiffractionMode::Minimum {
            return Err(Error::invalid("absolute moments are defined for the diffraction minimum"));
        }
        if order % 2 == 0 {
            return self.conditional_moment(order);
        }
        let p = self.params().p;
        let j = order as u64 / 2;
        Ok((ln_gauss_odd_moment(self.m + j, p)? - ln_gauss_even_moment(self.m, p)?).exp())
    }
}

fn checked_probability(rate: f64, dtau: f64) -> Result<f64> {
    if !(dtau >= 0.0) {
        return Err(Error::invalid(format!("dtau must be >= 0, got {dtau}")));
    }
    let probability = rate * dtau;
    if probability >= 1.0 {
        return Err(Error::StepTooLarge { probability });
    }
    Ok(probability)
}

/// Next-count probability in the diffraction minimum.
pub fn next_count_prob_min(state: &GaussianEngineState, dtau: f64) -> Result<f64> {
    if state.mode != DiffractionMode::Minimum {
        return Err(Error::invalid("next_count_prob_min needs a diffraction-minimum state"));
    }
    checked_probability(state.minimum_rate(), dtau)
}

/// Next-count probability in the diffraction maximum (`O(m)` terms).
pub fn next_count_prob_max(state: &GaussianEngineState, dtau: f64) -> Result<f64> {
    if state.mode != DiffractionMode::Maximum {
        return Err(Error::invalid("next_count_prob_max needs a diffraction-maximum state"));
    }
    checked_probability(state.maximum_rate(), dtau)
}

impl CountingEngine for GaussianEngineState {
    fn count_rate(&self) -> Result<f64> {
        Ok(self.rate())
    }
    fn apply_count(&mut self) -> Result<()> {
        self.m += 1;
        Ok(())
    }
    fn advance(&mut self, dtau: f64) -> Result<()> {
        if !(dtau >= 0.0) {
            return Err(Error::invalid(format!("dtau must be >= 0, got {dtau}")));
        }
        self.tau += dtau;
        Ok(())
    }
    fn photon_expectation(&self) -> f64 {
        self.photon_scale * self.rate()
    }
    fn count(&self) -> u64 {
        self.m
    }
    fn tau(&self) -> f64 {
        self.tau
    }
}

/// One seeded trajectory of the closed-form engine.
pub fn run_trajectory_analytic(
    spec: GaussianSpec,
    mode: DiffractionMode,
    photon_scale: f64,
    schedule: &StepSchedule,
    seed: u64,
) -> Result<TrajectoryRecord> {
    let mut state = GaussianEngineState::new(spec, mode, photon_scale)?;
    trajectory::run(&mut state, schedule, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{full_line_moment, half_line_moment};

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn even_moment_values() {
        assert!(rel(gauss_even_moment(0, 1.0).unwrap(), PI.sqrt() / 2.0) < 1e-15);
        assert!(rel(gauss_even_moment(1, 1.0).unwrap(), PI.sqrt() / 4.0) < 1e-15);
        let oracle = half_line_moment(50, 0.37, 0.0).unwrap().value();
        assert!(rel(gauss_even_moment(25, 0.37).unwrap(), oracle) < 1e-10);
        assert!(gauss_even_moment(1, 0.0).is_err());
    }

    #[test]
    fn odd_moment_values() {
        assert!(rel(gauss_odd_moment(0, 1.0).unwrap(), 0.5) < 1e-15);
        assert!(rel(gauss_odd_moment(1, 2.0).unwrap(), 0.125) < 1e-15);
        let oracle = half_line_moment(41, 0.9, 0.0).unwrap().value();
        assert!(rel(gauss_odd_moment(20, 0.9).unwrap(), oracle) < 1e-10);
        assert!(gauss_odd_moment(1, -1.0).is_err());
    }

    #[test]
    fn tilted_moment_values() {
        let (p, q) = (1.7, -0.4);
        assert!(rel(tilted_gauss_moment(0, p, q).unwrap(), (PI / p).sqrt() * (q * q / p).exp()) < 1e-14);
        assert!(rel(tilted_gauss_moment(1, 1.0, 1.0).unwrap(), PI.sqrt() * 1f64.exp()) < 1e-14);
        let oracle = full_line_moment(12, 0.8, 3.1).unwrap().value();
        assert!(rel(tilted_gauss_moment(12, 0.8, 3.1).unwrap(), oracle) < 1e-9);
        // negative tilt, odd order
        let oracle = full_line_moment(7, 0.5, -1.2).unwrap().value();
        assert!(rel(tilted_gauss_moment(7, 0.5, -1.2).unwrap(), oracle) < 1e-9);
        // q = 0 fallback
        assert_eq!(tilted_gauss_moment(3, 1.0, 0.0).unwrap(), 0.0);
        assert!(rel(tilted_gauss_moment(4, 1.0, 0.0).unwrap(), 2.0 * gauss_even_moment(2, 1.0).unwrap()) < 1e-15);
    }

    #[test]
    fn minimum_rate_limits() {
        let spec = GaussianSpec::new(0.0, 100.0).unwrap();
        let s = GaussianEngineState::new(spec, DiffractionMode::Minimum, 1.0).unwrap();
        assert!(rel(next_count_prob_min(&s, 1e-6).unwrap(), 1e4 * 1e-6) < 1e-14);
        let late = s.clone().at(5, 1e9).unwrap();
        assert!(next_count_prob_min(&late, 1e-6).unwrap() < 1e-14);
        assert!(matches!(next_count_prob_min(&s, 1e-3), Err(Error::StepTooLarge { .. })));
        assert!(next_count_prob_max(&s, 1e-6).is_err());
    }

    #[test]
    fn minimum_rate_matches_quadrature() {
        for n in [100.0f64, 1e4] {
            let spec = GaussianSpec::new(0.0, n.sqrt()).unwrap();
            for m in [0u64, 1, 7, 20] {
                for tau in [0.0, 0.01, 1.0, 10.0] {
                    let s = GaussianEngineState::new(spec, DiffractionMode::Minimum, 1.0).unwrap().at(m, tau).unwrap();
                    let p = s.params().p;
                    let num = full_line_moment(2 * m as u32 + 2, p, 0.0).unwrap();
                    let den = full_line_moment(2 * m as u32, p, 0.0).unwrap();
                    assert!(rel(s.rate(), num.ratio(&den)) < 1e-8, "m={m} tau={tau}");
                }
            }
        }
    }

    #[test]
    fn minimum_moments() {
        let spec = GaussianSpec::new(0.0, 10.0).unwrap();
        let s = GaussianEngineState::new(spec, DiffractionMode::Minimum, 1.0).unwrap();
        assert_eq!(s.conditional_moment(1).unwrap(), 0.0);
        assert!(rel(s.conditional_moment(2).unwrap(), 100.0) < 1e-14);
        let later = s.clone().at(0, 0.3).unwrap();
        // σ² / (1 + 2σ²τ)
        assert!(rel(later.conditional_moment(2).unwrap(), 100.0 / 61.0) < 1e-14);
        let s3 = s.clone().at(3, 0.05).unwrap();
        assert_eq!(s3.conditional_moment(3).unwrap(), 0.0);
        assert!(rel(s3.conditional_moment(2).unwrap(), s3.rate()) < 1e-14);
        let p = s3.params().p;
        let abs1 = half_line_moment(7, p, 0.0).unwrap().ratio(&half_line_moment(6, p, 0.0).unwrap());
        assert!(rel(s3.conditional_abs_moment(1).unwrap(), abs1) < 1e-10);
    }

    #[test]
    fn maximum_rate_first_count() {
        // τ = 0, m = 0: z₀² + σ²
        let spec = GaussianSpec::new(5000.0, 50.0).unwrap();
        let s = GaussianEngineState::new(spec, DiffractionMode::Maximum, 1.0).unwrap();
        assert!(rel(s.rate(), 25e6 + 2500.0) < 1e-12);
        // m = 0, any τ: a² + 1/(2p)
        let s = s.at(0, 3e-4).unwrap();
        let TiltedGaussianParams { p, a, b, .. } = s.params();
        assert!(rel(s.rate(), a * a + 1.0 / (2.0 * p)) < 1e-12);
        assert!(rel(s.rate(), 2.0 * a * a * (0.5 + b)) < 1e-12);
        assert!(rel(s.rate(), s.conditional_moment(2).unwrap()) < 1e-12);
    }

    #[test]
    fn maximum_moments() {
        let spec = GaussianSpec::new(300.0, 12.0).unwrap();
        let s = GaussianEngineState::new(spec, DiffractionMode::Maximum, 1.0).unwrap();
        assert!(rel(s.conditional_moment(1).unwrap(), 300.0) < 1e-12);
        let s = s.at(4, 0.002).unwrap();
        let p = s.params();
        for order in 1..=3u32 {
            let num = full_line_moment(8 + order, p.p, p.q).unwrap();
            let den = full_line_moment(8, p.p, p.q).unwrap();
            assert!(rel(s.conditional_moment(order).unwrap(), num.ratio(&den)) < 1e-9);
        }
        assert!(rel(s.rate(), s.conditional_moment(2).unwrap()) < 1e-12);
        assert!(s.conditional_abs_moment(1).is_err());
    }

    #[test]
    fn maximum_requires_positive_mean() {
        let spec = GaussianSpec::new(0.0, 12.0).unwrap();
        assert!(GaussianEngineState::new(spec, DiffractionMode::Maximum, 1.0).is_err());
        let spec = GaussianSpec::new(3.0, 12.0).unwrap();
        assert!(GaussianEngineState::new(spec, DiffractionMode::Minimum, 1.0).is_err());
    }

    #[test]
    fn printed_form_differs_at_early_times() {
        let spec = GaussianSpec::new(0.0, 100.0).unwrap();
        let derived = GaussianEngineState::new(spec, DiffractionMode::Minimum, 1.0).unwrap();
        let printed = derived.clone().with_minimum_form(MinimumRateForm::Printed);
        assert!((rel(printed.rate(), derived.rate()) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_trajectory() {
        let spec = GaussianSpec::new(0.0, 100.0).unwrap();
        let rec = run_trajectory_analytic(spec, DiffractionMode::Minimum, 1.0, &StepSchedule::new(0.0, 1e-5), 1).unwrap();
        assert!(rec.steps.is_empty());
    }

    mod props {
        use super::*;
        use num_bigint::BigInt;
        use num_rational::BigRational;
        use num_traits::{One, ToPrimitive, Zero};
        use proptest::prelude::*;

        fn factorial(n: u64) -> BigInt {
            (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
        }

        /// `S_m(b)` in exact rational arithmetic.
        fn exact_sum(m: u64, b: &BigRational) -> BigRational {
            let mut acc = BigRational::zero();
            let mut b_pow = BigRational::one();
            for k in 0..=m {
                acc += &b_pow / BigRational::from_integer(factorial(2 * m - 2 * k) * factorial(k));
                b_pow *= b;
            }
            acc
        }

        proptest! {
            #[test]
            fn maximum_sums_match_rational_arithmetic(
                m in 0u64..=10,
                z0 in 10.0..5000.0f64,
                frac in 0.05..0.95f64,
                tau_scale in 0.0..20.0f64,
            ) {
                let sigma = (z0 * (1.0 - frac)).sqrt();
                let spec = GaussianSpec::new(z0, sigma).unwrap();
                let tau = tau_scale / spec.variance();
                let s = GaussianEngineState::new(spec, DiffractionMode::Maximum, 1.0).unwrap().at(m, tau).unwrap();
                let params = s.params();
                let b = BigRational::from_float(params.b).unwrap();
                let ratio = (exact_sum(m + 1, &b) / exact_sum(m, &b)).to_f64().unwrap();
                let mf = m as f64;
                let exact = (2.0 * mf + 1.0) * (2.0 * mf + 2.0) * params.a * params.a * ratio;
                prop_assert!(rel(s.rate(), exact) < 1e-12, "{} vs {}", s.rate(), exact);
            }

            #[test]
            fn minimum_rate_ignores_mean_like_parameters(m in 0u64..50, tau in 0.0..5.0f64, n in 50.0..1e6f64) {
                let spec = GaussianSpec::new(0.0, n.sqrt()).unwrap();
                let s = GaussianEngineState::new(spec, DiffractionMode::Minimum, 3.0).unwrap().at(m, tau).unwrap();
                let expected = (m as f64 + 0.5) / (tau + 1.0 / (2.0 * n));
                prop_assert!(rel(s.rate(), expected) < 1e-14);
            }
        }
    }
}
