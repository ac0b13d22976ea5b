//! Closed forms checked against independent numerical evaluations.
//!
//! Every row compares a closed-form value with an oracle (adaptive
//! quadrature, a direct series, or a second engine) and reports the
//! relative error against a fixed tolerance. Grid checks report their worst
//! point.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::Serialize;

use crate::distribution::{superfluid, AtomNumberDistribution, GaussianSpec};
use crate::error::Result;
use crate::exact::ExactEngineState;
use crate::full::{ConditionalSuperposition, ConfigurationBasis};
use crate::gaussian::{
    gauss_even_moment, gauss_odd_moment, tilted_gauss_moment_log, GaussianEngineState, MinimumRateForm,
};
use crate::model::{derive_c, CavityParams, DiffractionMode, LatticeGeometry, ModeFunctions};
use crate::purity::{coherent_overlap_factor, coherent_overlap_partial_sum, purity, CatState};
use crate::quadrature::{full_line_moment, half_line_moment, Scaled};

pub const RATE_TOLERANCE: f64 = 1e-8;
pub const MOMENT_TOLERANCE: f64 = 1e-10;
pub const SERIES_TOLERANCE: f64 = 1e-10;
pub const CROSS_ENGINE_TOLERANCE: f64 = 1e-12;
/// Absolute tolerance on the purity at the distinguishability threshold.
pub const PURITY_TOLERANCE: f64 = 1e-3;
pub const PURITY_AT_THRESHOLD: f64 = 0.8894;

/// Atom number of the rate grids.
pub const GRID_ATOMS: f64 = 1e4;
pub const GRID_MAX_COUNT: u64 = 20;
/// `τσ²` values of the rate grids.
pub const GRID_TAU_SIGMA2: [f64; 4] = [0.0, 0.1, 1.0, 10.0];
/// `K/M` values of the maximum-mode grid.
pub const GRID_FRACTIONS: [f64; 3] = [0.1, 0.5, 0.9];
pub const SERIES_TERMS: usize = 201;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// Reported for reference, not held to the tolerance.
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub identity: String,
    pub closed_form: f64,
    pub oracle: f64,
    pub relative_error: f64,
    pub tolerance: f64,
    pub status: Status,
}

impl CheckRow {
    fn new(identity: impl Into<String>, closed_form: f64, oracle: f64, error: f64, tolerance: f64) -> Self {
        let status = if error <= tolerance { Status::Pass } else { Status::Fail };
        CheckRow { identity: identity.into(), closed_form, oracle, relative_error: error, tolerance, status }
    }

    fn info(mut self) -> Self {
        self.status = Status::Info;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub rows: Vec<CheckRow>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.status != Status::Fail)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.identity.len()).max().unwrap_or(8).max(8);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>24}  {:>24}  {:>10}  {:>8}  status",
            "identity", "closed form", "oracle", "rel error", "tol"
        );
        for r in &self.rows {
            let status = match r.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Info => "info",
            };
            let _ = writeln!(
                out,
                "{:<width$}  {:>24.17e}  {:>24.17e}  {:>10.3e}  {:>8.1e}  {status}",
                r.identity, r.closed_form, r.oracle, r.relative_error, r.tolerance
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VerifyOptions {
    /// Denominator used by the minimum-mode rate check.
    pub minimum_form: MinimumRateForm,
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        ((a - b) / b).abs()
    }
}

/// One point of a rate grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatePoint {
    pub m: u64,
    pub tau_sigma2: f64,
    /// `K/M`; zero on the minimum grid.
    pub fraction: f64,
    pub closed_form: f64,
    pub oracle: f64,
    pub relative_error: f64,
}

/// Minimum-mode rate against `∫₀^∞ z^{2m+2} w / ∫₀^∞ z^{2m} w` with
/// `w = e^{−z²(τ + 1/(2σ²))}`, `σ² = N`.
pub fn minimum_rate_grid(form: MinimumRateForm) -> Result<Vec<RatePoint>> {
    let spec = GaussianSpec::new(0.0, GRID_ATOMS.sqrt())?;
    let var = spec.variance();
    let mut points = Vec::new();
    for &ts in &GRID_TAU_SIGMA2 {
        let tau = ts / var;
        let p = tau + 1.0 / (2.0 * var);
        for m in 0..=GRID_MAX_COUNT {
            let state = GaussianEngineState::new(spec, DiffractionMode::Minimum, 1.0)?
                .with_minimum_form(form)
                .at(m, tau)?;
            let closed_form = state.rate();
            let oracle = half_line_moment(2 * m as u32 + 2, p, 0.0)?.ratio(&half_line_moment(2 * m as u32, p, 0.0)?);
            points.push(RatePoint {
                m,
                tau_sigma2: ts,
                fraction: 0.0,
                closed_form,
                oracle,
                relative_error: rel(closed_form, oracle),
            });
        }
    }
    Ok(points)
}

/// Maximum-mode rate against the full-line ratio of
/// `∫ z^{2m(+2)} e^{−z²τ − (z−z₀)²/(2σ²)}`, `z₀ = NK/M`, `σ² = N(K/M)(1−K/M)`.
pub fn maximum_rate_grid() -> Result<Vec<RatePoint>> {
    let mut points = Vec::new();
    for &f in &GRID_FRACTIONS {
        let spec = GaussianSpec::new(GRID_ATOMS * f, (GRID_ATOMS * f * (1.0 - f)).sqrt())?;
        let var = spec.variance();
        for &ts in &GRID_TAU_SIGMA2 {
            let tau = ts / var;
            let p = tau + 1.0 / (2.0 * var);
            let q = spec.z0 / (2.0 * var);
            for m in 0..=GRID_MAX_COUNT {
                let state = GaussianEngineState::new(spec, DiffractionMode::Maximum, 1.0)?.at(m, tau)?;
                let closed_form = state.rate();
                let oracle = full_line_moment(2 * m as u32 + 2, p, q)?.ratio(&full_line_moment(2 * m as u32, p, q)?);
                points.push(RatePoint {
                    m,
                    tau_sigma2: ts,
                    fraction: f,
                    closed_form,
                    oracle,
                    relative_error: rel(closed_form, oracle),
                });
            }
        }
    }
    Ok(points)
}

fn worst(points: &[RatePoint]) -> RatePoint {
    *points
        .iter()
        .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
        .expect("grid is not empty")
}

fn grid_row(label: &str, points: &[RatePoint], tolerance: f64) -> CheckRow {
    let w = worst(points);
    let at = if w.fraction > 0.0 {
        format!("{label} (worst m={}, tau*sigma^2={}, K/M={})", w.m, w.tau_sigma2, w.fraction)
    } else {
        format!("{label} (worst m={}, tau*sigma^2={})", w.m, w.tau_sigma2)
    };
    CheckRow::new(at, w.closed_form, w.oracle, w.relative_error, tolerance)
}

fn scaled_rel(sign: f64, ln_abs: f64, oracle: &Scaled) -> f64 {
    let ratio = sign * oracle.mantissa.signum() * (ln_abs - oracle.mantissa.abs().ln() - oracle.log_scale).exp();
    (ratio - 1.0).abs()
}

fn moment_rows() -> Result<Vec<CheckRow>> {
    let cases = [(0u64, 1.0), (1, 1.0), (5, 0.37), (25, 0.37), (12, 1e-4)];
    let mut even = Vec::new();
    let mut odd = Vec::new();
    for &(n, p) in &cases {
        let e = gauss_even_moment(n, p)?;
        let eo = half_line_moment(2 * n as u32, p, 0.0)?.value();
        even.push((format!("n={n}, p={p}"), e, eo, rel(e, eo)));
        let o = gauss_odd_moment(n, p)?;
        let oo = half_line_moment(2 * n as u32 + 1, p, 0.0)?.value();
        odd.push((format!("n={n}, p={p}"), o, oo, rel(o, oo)));
    }
    let mut tilted = Vec::new();
    for &(n, p, q) in &[(0u64, 0.5, 0.4), (1, 1.3, -0.7), (4, 0.5, 2.0), (9, 1.3, 0.4), (9, 0.01, -3.0), (40, 2e-4, 0.1)] {
        let t = tilted_gauss_moment_log(n, p, q)?;
        let oracle = full_line_moment(n as u32, p, q)?;
        let e = scaled_rel(t.sign, t.ln_reduced + t.exponent, &oracle);
        tilted.push((format!("n={n}, p={p}, q={q}"), t.value(), oracle.value(), e));
    }
    let pick = |label: &str, v: Vec<(String, f64, f64, f64)>| {
        let (at, c, o, e) = v.into_iter().max_by(|a, b| a.3.total_cmp(&b.3)).expect("cases");
        CheckRow::new(format!("{label} (worst {at})"), c, o, e, MOMENT_TOLERANCE)
    };
    Ok(vec![
        pick("even half-line moment", even),
        pick("odd half-line moment", odd),
        pick("tilted full-line moment", tilted),
    ])
}

/// Worst relative error of the partial overlap series over
/// `|α| ∈ {0, 0.25, …, 3}` and `φ = jπ/48`, `j = 0..47`.
pub fn overlap_series_worst() -> (f64, f64, Complex64, Complex64, f64) {
    let mut out = (0.0, 0.0, Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0), 0.0);
    for i in 0..=12 {
        let a = i as f64 * 0.25;
        for j in 0..48 {
            let phi = j as f64 * PI / 48.0;
            let closed = coherent_overlap_factor(a, phi);
            let series = coherent_overlap_partial_sum(a, phi, SERIES_TERMS);
            let e = (closed - series).norm() / closed.norm();
            if e >= out.4 {
                out = (a, phi, closed, series, e);
            }
        }
    }
    out
}

/// A fixed photocount record: `Some(dτ)` is no-count evolution, `None` a count.
pub const CROSS_ENGINE_SCHEDULE: [Option<f64>; 8] =
    [Some(0.05), None, Some(0.1), None, None, Some(0.2), None, Some(0.03)];

/// `M = 2`, `N = 4`, `K = 1` maximum preset without dispersive shift or
/// pump, so that `α_q = C z`.
pub fn cross_engine_params() -> CavityParams {
    CavityParams {
        g0: 1.3,
        g1: 0.8,
        delta_a: -2.0,
        delta_p: 0.5,
        kappa: 1.7,
        eta: Complex64::new(0.0, 0.0),
        a0: Complex64::new(0.6, 0.2),
        dispersive_shift: false,
    }
}

/// z-marginals of the full engine and the exact engine after `schedule`.
pub fn cross_engine_marginals(
    schedule: &[Option<f64>],
) -> Result<(AtomNumberDistribution, AtomNumberDistribution)> {
    let params = cross_engine_params();
    let geom = LatticeGeometry::new(4, 2, 1, 1)?;
    let c = derive_c(&params)?;
    let basis = ConfigurationBasis::enumerate(geom.atoms as u32, geom.sites)?;
    let mut full = ConditionalSuperposition::new(
        &basis,
        basis.superfluid_amplitudes(),
        &params,
        &ModeFunctions::maximum(geom.sites),
        geom.illuminated,
        DiffractionMode::Maximum,
    )?;
    let mut exact = ExactEngineState::new(superfluid(DiffractionMode::Maximum, &geom)?, c)?;
    // τ = 2|C|²κt, and the full engine's clock is κt
    let kappa_t = |dtau: f64| dtau / (2.0 * c.norm_sqr());
    for op in schedule {
        match op {
            Some(dtau) => {
                full.evolve_no_count(kappa_t(*dtau))?;
                exact.apply_no_count(*dtau)?;
            }
            None => {
                full.apply_jump()?;
                exact.apply_count()?;
            }
        }
    }
    Ok((full.reduce_to_z()?, exact.distribution().clone()))
}

/// Largest per-entry relative difference of two distributions, taken over
/// the union of their supports.
pub fn max_entry_rel_error(a: &AtomNumberDistribution, b: &AtomNumberDistribution) -> f64 {
    let mut zs: Vec<i64> = a.support().iter().chain(b.support()).copied().collect();
    zs.sort_unstable();
    zs.dedup();
    zs.into_iter()
        .map(|z| {
            let (x, y) = (a.probability_of(z), b.probability_of(z));
            if x == y {
                0.0
            } else {
                (x - y).abs() / x.abs().max(y.abs())
            }
        })
        .fold(0.0, f64::max)
}

pub fn verify(options: VerifyOptions) -> Result<VerifyReport> {
    let mut rows = moment_rows()?;

    let arbitration = minimum_rate_grid(options.minimum_form)?;
    let label = match options.minimum_form {
        MinimumRateForm::Derived => "minimum rate (m+1/2)/(tau+1/(2 sigma^2))",
        MinimumRateForm::Printed => "minimum rate (m+1/2)/(tau+1/sigma^2) [injected]",
    };
    rows.push(grid_row(label, &arbitration, RATE_TOLERANCE));
    if options.minimum_form == MinimumRateForm::Derived {
        let printed = minimum_rate_grid(MinimumRateForm::Printed)?;
        rows.push(grid_row("minimum rate with 1/sigma^2 denominator", &printed, RATE_TOLERANCE).info());
    }

    rows.push(grid_row("maximum rate finite sum", &maximum_rate_grid()?, RATE_TOLERANCE));

    let (a, phi, closed, series, e) = overlap_series_worst();
    rows.push(CheckRow::new(
        format!("coherent overlap series, {SERIES_TERMS} terms (worst |alpha|={a}, phi={phi:.4})"),
        closed.norm(),
        series.norm(),
        e,
        SERIES_TOLERANCE,
    ));

    let p = purity(&CatState::new(0, 1, 0.25, PI / 2.0, 0.0)?);
    rows.push(CheckRow::new(
        "purity at |alpha| sin(phi) = 1/4 (absolute error vs 0.8894)",
        p,
        PURITY_AT_THRESHOLD,
        (p - PURITY_AT_THRESHOLD).abs(),
        PURITY_TOLERANCE,
    ));
    let closed = 0.5 * (1.0 + (-0.25f64).exp());
    rows.push(CheckRow::new("purity at threshold vs (1+e^{-1/4})/2", p, closed, rel(p, closed), 1e-15));

    let (full, exact) = cross_engine_marginals(&CROSS_ENGINE_SCHEDULE)?;
    let e = max_entry_rel_error(&full, &exact);
    rows.push(CheckRow::new(
        "full-configuration vs exact z-marginal (M=2, N=4)",
        full.moment(2),
        exact.moment(2),
        e,
        CROSS_ENGINE_TOLERANCE,
    ));

    Ok(VerifyReport { rows })
}
