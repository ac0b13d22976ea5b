//! Two-branch macroscopic superpositions after the light is traced out.
//!
//! `|Ψ⟩ = (e^{iγ}|z₁⟩|α e^{iφ}⟩ + e^{−iγ}|z₂⟩|α e^{−iφ}⟩)/√2` reduces to a
//! 2×2 atomic density matrix whose coherence is damped by the overlap of
//! the two coherent states.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::{Complex, Complex64};
use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::full::DensityMatrix;

/// Smallest `|α| |sin φ|` at which the two branches are resolvable.
pub const DISTINGUISHABILITY_THRESHOLD: f64 = 0.25;

/// Tolerance on hermiticity and trace for [`purity_general`].
pub const DENSITY_MATRIX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatState {
    pub z1: i64,
    pub z2: i64,
    pub alpha_abs: f64,
    pub phi: f64,
    pub gamma: f64,
}

impl CatState {
    pub fn new(z1: i64, z2: i64, alpha_abs: f64, phi: f64, gamma: f64) -> Result<Self> {
        if !(alpha_abs >= 0.0) || !alpha_abs.is_finite() {
            return Err(Error::invalid(format!("|alpha| must be finite and >= 0, got {alpha_abs}")));
        }
        if !phi.is_finite() || !gamma.is_finite() {
            return Err(Error::invalid("phases must be finite"));
        }
        Ok(CatState { z1, z2, alpha_abs, phi, gamma })
    }

    /// `(α_{z₁}, α_{z₂}) = (|α|e^{iφ}, |α|e^{−iφ})`.
    pub fn branch_amplitudes(&self) -> (Complex64, Complex64) {
        (Complex64::from_polar(self.alpha_abs, self.phi), Complex64::from_polar(self.alpha_abs, -self.phi))
    }

    pub fn is_degenerate(&self) -> bool {
        self.z1 == self.z2
    }
}

/// `⟨α e^{iφ}|α e^{−iφ}⟩ = e^{|α|²(e^{−2iφ}−1)}`.
pub fn coherent_overlap_factor(alpha_abs: f64, phi: f64) -> Complex64 {
    let a2 = alpha_abs * alpha_abs;
    (a2 * (Complex64::from_polar(1.0, -2.0 * phi) - 1.0)).exp()
}

/// `Σ_{n=0}^{terms-1} e^{−|α|²} |α|^{2n}/n! e^{−2inφ}`.
///
/// Near `φ = π/2` the terms alternate and cancel down to `e^{−2|α|²}`, so the
/// sum runs in double-double arithmetic. Terms start from `e^{−|α|²}`, which
/// underflows for `|α|² > 745`.
pub fn coherent_overlap_partial_sum(alpha_abs: f64, phi: f64, terms: usize) -> Complex64 {
    let a2 = alpha_abs * alpha_abs;
    let x = Complex::new(TwoFloat::from(a2 * (2.0 * phi).cos()), TwoFloat::from(-a2 * (2.0 * phi).sin()));
    let mut term = Complex::new(TwoFloat::from((-a2).exp()), TwoFloat::from(0.0));
    let mut sum = Complex::new(TwoFloat::from(0.0), TwoFloat::from(0.0));
    for n in 0..terms {
        sum = sum + term;
        // TwoFloat / f64 keeps double-double accuracy, TwoFloat / TwoFloat does not
        let product = term * x;
        let k = (n + 1) as f64;
        term = Complex::new(product.re / k, product.im / k);
    }
    Complex64::new(f64::from(sum.re), f64::from(sum.im))
}

/// Basis `{|z₁⟩, |z₂⟩}`; the (1,2) entry is `½ e^{|α|²(e^{2iφ}−1)} e^{2iγ}`.
pub fn cat_density_matrix(cat: &CatState) -> DensityMatrix {
    let coherence = 0.5 * coherent_overlap_factor(cat.alpha_abs, -cat.phi) * Complex64::from_polar(1.0, 2.0 * cat.gamma);
    let half = Complex64::new(0.5, 0.0);
    DensityMatrix(DMatrix::from_row_slice(2, 2, &[half, coherence, coherence.conj(), half]))
}

/// `½(1 + e^{−4|α|² sin²φ})`.
pub fn purity(cat: &CatState) -> f64 {
    let s = cat.alpha_abs * cat.phi.sin();
    0.5 * (1.0 + (-4.0 * s * s).exp())
}

/// `|α| |sin φ| > 1/4`, with φ reduced mod π first.
pub fn distinguishability_ok(cat: &CatState) -> bool {
    let phi = cat.phi.rem_euclid(PI);
    cat.alpha_abs * phi.sin().abs() > DISTINGUISHABILITY_THRESHOLD
}

/// `Tr(ρ²)` of a unit-trace Hermitian matrix. Ranges over `[1/d, 1]`.
pub fn purity_general(rho: &DensityMatrix) -> Result<f64> {
    let m = &rho.0;
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Validation(format!("density matrix must be square and non-empty, got {}x{}", m.nrows(), m.ncols())));
    }
    let d = m.nrows();
    for i in 0..d {
        for j in i..d {
            let gap = (m[(i, j)] - m[(j, i)].conj()).norm();
            if gap > DENSITY_MATRIX_TOLERANCE {
                return Err(Error::Validation(format!("density matrix is not Hermitian at ({i}, {j}): deviation {gap:e}")));
            }
        }
    }
    let trace = m.trace();
    if (trace - 1.0).norm() > DENSITY_MATRIX_TOLERANCE {
        return Err(Error::Validation(format!("density matrix trace is {trace}, expected 1")));
    }
    Ok(m.iter().map(|c| c.norm_sqr()).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PuritySweepRow {
    pub alpha_abs: f64,
    pub phi: f64,
    pub alpha_sin_phi: f64,
    pub purity: f64,
    pub distinguishable: bool,
}

/// `|α|` from 0 to `alpha_max` in `steps` equal increments for each φ,
/// plus the row sitting exactly on the distinguishability threshold.
pub fn purity_sweep(alpha_max: f64, steps: usize, phis: &[f64]) -> Result<Vec<PuritySweepRow>> {
    if !(alpha_max > 0.0) || !alpha_max.is_finite() {
        return Err(Error::invalid(format!("alpha_max must be finite and > 0, got {alpha_max}")));
    }
    if steps == 0 {
        return Err(Error::invalid("sweep needs at least one step"));
    }
    let mut rows = Vec::new();
    for &phi in phis {
        let mut alphas: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64 * alpha_max).collect();
        let s = phi.sin().abs();
        if s > 0.0 {
            let threshold = DISTINGUISHABILITY_THRESHOLD / s;
            if !alphas.contains(&threshold) {
                alphas.push(threshold);
            }
        }
        alphas.sort_by(f64::total_cmp);
        for alpha_abs in alphas {
            let cat = CatState::new(0, 1, alpha_abs, phi, 0.0)?;
            rows.push(PuritySweepRow {
                alpha_abs,
                phi,
                alpha_sin_phi: alpha_abs * s,
                purity: purity(&cat),
                distinguishable: distinguishability_ok(&cat),
            });
        }
    }
    Ok(rows)
}

/// `alpha_abs,phi,alpha_sin_phi,purity,distinguishable` with LF endings.
pub fn write_sweep_csv<W: Write>(rows: &[PuritySweepRow], writer: W) -> Result<()> {
    let mut w = crate::trajectory::csv_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
