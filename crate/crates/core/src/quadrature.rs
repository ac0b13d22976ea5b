//! Adaptive Gauss–Kronrod quadrature and the Gaussian-moment integrals
//! evaluated with it.
//!
//! These are the brute-force references for the closed-form moment
//! identities used by the analytic engine. The integrands
//! `x^n e^{-px² + 2qx}` overflow for the parameters of interest, so the
//! integrals are returned as a [`Scaled`] mantissa together with a log-scale
//! taken at the integrand peak.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_838_258_730,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

/// Kronrod estimate and |Kronrod − Gauss| on one panel.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut gauss = fc * WG[3];
    let mut kronrod = fc * WGK[7];
    for j in 0..7 {
        let x = half * XGK[j];
        let sum = f(center - x) + f(center + x);
        kronrod += WGK[j] * sum;
        if j % 2 == 1 {
            gauss += WG[j / 2] * sum;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
}

/// Globally adaptive G7–K15 quadrature of `f` over `[a, b]`, starting from
/// `initial_panels` equal panels and bisecting the worst panel until the
/// summed error estimate is below `max(abs_tol, rel_tol·|I|)`.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    initial_panels: usize,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<QuadResult> {
    const MAX_PANELS: usize = 20_000;
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Quadrature("integration limits must be finite".into()));
    }
    if a == b {
        return Ok(QuadResult { value: 0.0, error: 0.0 });
    }
    let n0 = initial_panels.max(1);
    let width = (b - a) / n0 as f64;
    let mut heap = BinaryHeap::with_capacity(4 * n0);
    for i in 0..n0 {
        let lo = a + width * i as f64;
        let hi = if i + 1 == n0 { b } else { a + width * (i + 1) as f64 };
        let (value, error) = gk15(&f, lo, hi);
        heap.push(Panel { a: lo, b: hi, value, error });
    }
    loop {
        let value: f64 = heap.iter().map(|p| p.value).sum();
        let error: f64 = heap.iter().map(|p| p.error).sum();
        let magnitude: f64 = heap.iter().map(|p| p.value.abs()).sum();
        if !value.is_finite() {
            return Err(Error::Quadrature("non-finite integrand".into()));
        }
        let roundoff = 50.0 * f64::EPSILON * magnitude;
        if error <= abs_tol.max(rel_tol * value.abs()).max(roundoff) {
            return Ok(QuadResult { value, error });
        }
        if heap.len() >= MAX_PANELS {
            return Err(Error::Quadrature(format!(
                "no convergence after {MAX_PANELS} panels: value {value}, error {error}"
            )));
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // panel at machine resolution, accept what we have
            heap.push(Panel { error: 0.0, ..worst });
            continue;
        }
        let (v1, e1) = gk15(&f, worst.a, mid);
        let (v2, e2) = gk15(&f, mid, worst.b);
        heap.push(Panel { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Panel { a: mid, b: worst.b, value: v2, error: e2 });
    }
}

/// `mantissa · e^{log_scale}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaled {
    pub mantissa: f64,
    pub log_scale: f64,
}

impl Scaled {
    pub fn value(&self) -> f64 {
        self.mantissa * self.log_scale.exp()
    }

    /// `self / other` without forming either factor.
    pub fn ratio(&self, other: &Scaled) -> f64 {
        self.mantissa / other.mantissa * (self.log_scale - other.log_scale).exp()
    }
}

const QUAD_REL_TOL: f64 = 1e-14;
/// Integrand decays by at least e^{-TAIL_LOG_DROP} outside the window.
const TAIL_LOG_DROP: f64 = 800.0;

/// Peak, log-value at the peak and window half-width of
/// `g(x) = n ln x − p x² + 2 q x` on `x ≥ 0`.
fn half_line_window(n: u32, p: f64, q: f64) -> (f64, f64, f64) {
    let nf = n as f64;
    let peak = ((q + (q * q + 2.0 * p * nf).sqrt()) / (2.0 * p)).max(0.0);
    let power = if n == 0 { 0.0 } else { nf * peak.ln() };
    let log_peak = power - p * peak * peak + 2.0 * q * peak;
    // g is concave with g'' ≤ -2p, so g(peak ± d) ≤ g(peak) - p d²
    let half_width = (TAIL_LOG_DROP / p).sqrt();
    (peak, log_peak, half_width)
}

/// `g(x) − g(peak)` written in terms of `d = x − peak`, so that no large
/// exponents cancel.
fn log_integrand_from_peak(n: u32, p: f64, q: f64, peak: f64, x: f64) -> f64 {
    let d = x - peak;
    let power = if n == 0 {
        0.0
    } else if x <= 0.0 {
        f64::NEG_INFINITY
    } else {
        n as f64 * (d / peak).ln_1p()
    };
    power - p * d * d + 2.0 * (q - p * peak) * d
}

/// `∫_0^∞ x^n e^{-px²+2qx} dx` scaled by `e^{-g(peak)}`, and `g(peak)`.
fn half_line_scaled(n: u32, p: f64, q: f64) -> Result<(f64, f64)> {
    let (peak, log_peak, half_width) = half_line_window(n, p, q);
    let lo = (peak - half_width).max(0.0);
    let hi = peak + half_width;
    let f = |x: f64| log_integrand_from_peak(n, p, q, peak, x).exp();
    let mut total = 0.0;
    for (a, b) in [(lo, peak), (peak, hi)] {
        if b > a {
            total += integrate(f, a, b, 24, QUAD_REL_TOL, 0.0)?.value;
        }
    }
    Ok((total, log_peak))
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::invalid(format!("Gaussian exponent p must be > 0, got {p}")));
    }
    Ok(())
}

/// Quadrature of `∫_0^∞ x^n e^{-px² + 2qx} dx`.
pub fn half_line_moment(n: u32, p: f64, q: f64) -> Result<Scaled> {
    check_p(p)?;
    let (mantissa, log_scale) = half_line_scaled(n, p, q)?;
    Ok(Scaled { mantissa, log_scale })
}

/// Quadrature of `∫_{-∞}^∞ x^n e^{-px² + 2qx} dx`, split at the origin.
pub fn full_line_moment(n: u32, p: f64, q: f64) -> Result<Scaled> {
    check_p(p)?;
    let (pos, shift_pos) = half_line_scaled(n, p, q)?;
    // x → -x maps the negative half onto (-1)^n ∫_0^∞ x^n e^{-px² - 2qx}
    let (neg, shift_neg) = half_line_scaled(n, p, -q)?;
    let shift = shift_pos.max(shift_neg);
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    let mantissa = pos * (shift_pos - shift).exp() + sign * neg * (shift_neg - shift).exp();
    Ok(Scaled { mantissa, log_scale: shift })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x| 3.0 * x * x + 1.0, 0.0, 2.0, 1, 1e-15, 0.0).unwrap();
        assert!((r.value - 10.0).abs() < 1e-13);
    }

    #[test]
    fn oscillatory_integrand() {
        let r = integrate(|x: f64| (10.0 * x).sin(), 0.0, 1.0, 1, 1e-13, 0.0).unwrap();
        let exact = (1.0 - 10f64.cos()) / 10.0;
        assert!((r.value - exact).abs() < 1e-13, "{} vs {}", r.value, exact);
    }

    #[test]
    fn sharp_peak() {
        let r = integrate(|x: f64| (-(x - 0.3) * (x - 0.3) * 1e6).exp(), -1.0, 1.0, 8, 1e-13, 0.0)
            .unwrap();
        let exact = (PI / 1e6).sqrt();
        assert!((r.value - exact).abs() < 1e-12 * exact);
    }

    #[test]
    fn gaussian_integrals() {
        let r = half_line_moment(0, 1.0, 0.0).unwrap();
        assert!((r.value() - PI.sqrt() / 2.0).abs() < 1e-14);
        let r = full_line_moment(0, 2.0, 0.5).unwrap();
        let exact = (PI / 2.0).sqrt() * (0.25f64 / 2.0).exp();
        assert!((r.value() - exact).abs() < 1e-13 * exact);
        // odd full-line moment without tilt vanishes
        let r = full_line_moment(3, 1.0, 0.0).unwrap();
        assert!(r.mantissa.abs() < 1e-14);
    }

    #[test]
    fn rejects_nonpositive_exponent() {
        assert!(half_line_moment(1, 0.0, 0.0).is_err());
        assert!(full_line_moment(1, -1.0, 0.0).is_err());
    }

    #[test]
    fn huge_scale_stays_finite() {
        // e^{q²/p} with q²/p = 2.5e7; n = 0 is √(π/p) e^{q²/p}
        let r = full_line_moment(0, 1e-4, 50.0).unwrap();
        let ln_exact = 0.5 * (PI / 1e-4).ln() + 2.5e7;
        assert!((r.mantissa.ln() + r.log_scale - ln_exact).abs() < 1e-13 * ln_exact);
        let r = full_line_moment(10, 1e-4, 50.0).unwrap();
        assert!(r.mantissa.is_finite() && r.mantissa > 0.0);
        assert!(r.log_scale > 1e7);
    }
}
