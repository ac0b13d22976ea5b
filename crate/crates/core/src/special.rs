//! Factorials, double factorials and log-sum-exp.

use statrs::function::gamma::ln_gamma;

const EXACT_FACTORIAL_MAX: u64 = 20;

/// `n!` exactly, for `n <= 20`.
pub fn factorial_exact(n: u64) -> Option<u64> {
    if n > EXACT_FACTORIAL_MAX {
        return None;
    }
    Some((1..=n).product())
}

/// `ln n!`. Exact integer arithmetic up to `20!`, log-gamma above.
pub fn ln_factorial(n: u64) -> f64 {
    match factorial_exact(n) {
        Some(f) => (f as f64).ln(),
        None => ln_gamma(n as f64 + 1.0),
    }
}

/// `ln (2n-1)!!`, with `(-1)!! = 1`.
pub fn ln_odd_double_factorial(n: u64) -> f64 {
    // (2n-1)!! = (2n)! / (2^n n!)
    if n == 0 {
        return 0.0;
    }
    ln_factorial(2 * n) - n as f64 * std::f64::consts::LN_2 - ln_factorial(n)
}

/// `ln C(n, k)`.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    let (lo, hi) = if k <= n - k { (k, n - k) } else { (n - k, k) };
    ln_factorial(n) - ln_factorial(lo) - ln_factorial(hi)
}

/// `ln Σ exp(x_i)` with max-shift. Returns `-inf` for an empty slice or when
/// every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// SplitMix64 output function.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
