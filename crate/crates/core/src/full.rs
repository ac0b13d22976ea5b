//! Reference engine over explicit lattice configurations.
//!
//! Every Fock configuration `q = (q₁, …, q_M)` carries an amplitude `c_q`
//! and the steady-state coherent light amplitude
//! `α_q = (η − iU₁₀a₀D₁₀) / (i(U₁₁D₁₁ − Δ_p) + κ)`. A count multiplies
//! `c_q` by `α_q`; no-count evolution by `e^{Φ_q(t)}` with
//! `Φ_q(t) = −|α_q|²κt + (ηα_q* − iU₁₀a₀D₁₀α_q* − c.c.) t/2`.
//! Phases are carried in the complex `c_q` themselves.
//!
//! Internally all frequencies are in units of `κ` and times are `κt`.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::distribution::AtomNumberDistribution;
use crate::error::{Error, Result};
use crate::model::{coupling_d, CavityParams, DiffractionMode, ModeFunctions};
use crate::special::{ln_binomial, ln_factorial, log_sum_exp};
use crate::trajectory::CountingEngine;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Largest basis the engine will enumerate.
pub const MAX_BASIS_SIZE: usize = 100_000;

/// All occupation vectors of `N` atoms on `M` sites.
#[derive(Debug, Clone)]
pub struct ConfigurationBasis {
    atoms: u32,
    sites: usize,
    configs: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
}

impl ConfigurationBasis {
    /// `C(N+M−1, M−1)`, or `None` when it does not fit in `f64` exactly
    /// enough to matter.
    pub fn size(atoms: u32, sites: usize) -> f64 {
        if sites == 0 {
            return 0.0;
        }
        ln_binomial(atoms as u64 + sites as u64 - 1, sites as u64 - 1).exp().round()
    }

    pub fn enumerate(atoms: u32, sites: usize) -> Result<Self> {
        if sites == 0 {
            return Err(Error::invalid("basis needs at least one site"));
        }
        let size = Self::size(atoms, sites);
        if size > MAX_BASIS_SIZE as f64 {
            return Err(Error::invalid(format!(
                "configuration basis of {size} states exceeds the cap of {MAX_BASIS_SIZE}"
            )));
        }
        let mut configs = Vec::with_capacity(size as usize);
        let mut current = vec![0u32; sites];
        fill(0, atoms, &mut current, &mut configs);
        let index = configs.iter().enumerate().map(|(i, q)| (q.clone(), i)).collect();
        Ok(ConfigurationBasis { atoms, sites, configs, index })
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn atoms(&self) -> u32 {
        self.atoms
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn configs(&self) -> &[Vec<u32>] {
        &self.configs
    }

    pub fn position(&self, q: &[u32]) -> Option<usize> {
        self.index.get(q).copied()
    }

    /// Superfluid amplitudes `√(N! / (Π q_j!) / M^N)`.
    pub fn superfluid_amplitudes(&self) -> Vec<Complex64> {
        let n = self.atoms as u64;
        let ln_m = (self.sites as f64).ln();
        self.configs
            .iter()
            .map(|q| {
                let ln_multinomial = ln_factorial(n) - q.iter().map(|&k| ln_factorial(k as u64)).sum::<f64>();
                Complex64::new((0.5 * (ln_multinomial - n as f64 * ln_m)).exp(), 0.0)
            })
            .collect()
    }
}

fn fill(site: usize, left: u32, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    let last = current.len() - 1;
    if site == last {
        current[site] = left;
        out.push(current.clone());
        return;
    }
    for k in (0..=left).rev() {
        current[site] = k;
        fill(site + 1, left - k, current, out);
    }
    current[site] = 0;
}

/// `α_q` for configuration `q`.
pub fn alpha_of(q: &[u32], params: &CavityParams, modes: &ModeFunctions, illuminated: usize) -> Result<Complex64> {
    params.validate()?;
    let d10 = coupling_d(q, modes, 1, 0, illuminated)?;
    let d11 = coupling_d(q, modes, 1, 1, illuminated)?;
    let numerator = params.eta - I * params.u(1, 0) * params.a0 * d10;
    let denominator = I * (params.shift_u11() * d11 - params.delta_p) + params.kappa;
    Ok(numerator / denominator)
}

/// `Φ_q(t)` for configuration `q` with light amplitude `alpha`.
pub fn phi_of(
    q: &[u32],
    alpha: Complex64,
    params: &CavityParams,
    modes: &ModeFunctions,
    illuminated: usize,
    t: f64,
) -> Result<Complex64> {
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("time must be >= 0, got {t}")));
    }
    let d10 = coupling_d(q, modes, 1, 0, illuminated)?;
    Ok(phi_rate(alpha, d10, params) * t)
}

fn phi_rate(alpha: Complex64, d10: Complex64, params: &CavityParams) -> Complex64 {
    let x = params.eta * alpha.conj() - I * params.u(1, 0) * params.a0 * d10 * alpha.conj();
    -alpha.norm_sqr() * params.kappa + (x - x.conj()) / 2.0
}

/// The conditional atom-light state, one amplitude per configuration.
#[derive(Debug, Clone)]
pub struct ConditionalSuperposition {
    c: Vec<Complex64>,
    alpha: Vec<Complex64>,
    phi_rate: Vec<Complex64>,
    z: Vec<i64>,
    mode: DiffractionMode,
}

impl ConditionalSuperposition {
    /// `params` may be in any frequency unit; they are rescaled to `κ = 1`.
    pub fn new(
        basis: &ConfigurationBasis,
        amplitudes: Vec<Complex64>,
        params: &CavityParams,
        modes: &ModeFunctions,
        illuminated: usize,
        mode: DiffractionMode,
    ) -> Result<Self> {
        if amplitudes.len() != basis.len() {
            return Err(Error::LengthMismatch { expected: basis.len(), actual: amplitudes.len() });
        }
        if modes.sites() != basis.sites() {
            return Err(Error::LengthMismatch { expected: basis.sites(), actual: modes.sites() });
        }
        let params = params.normalized();
        let mut alpha = Vec::with_capacity(basis.len());
        let mut rates = Vec::with_capacity(basis.len());
        for q in basis.configs() {
            let a = alpha_of(q, &params, modes, illuminated)?;
            let d10 = coupling_d(q, modes, 1, 0, illuminated)?;
            alpha.push(a);
            rates.push(phi_rate(a, d10, &params));
        }
        let z = basis.configs().iter().map(|q| statistical_variable(q, mode, illuminated)).collect();
        let mut state = ConditionalSuperposition { c: amplitudes, alpha, phi_rate: rates, z, mode };
        state.normalize()?;
        Ok(state)
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.c
    }

    pub fn alphas(&self) -> &[Complex64] {
        &self.alpha
    }

    pub fn norm_sqr(&self) -> f64 {
        self.c.iter().map(|c| c.norm_sqr()).sum()
    }

    fn normalize(&mut self) -> Result<()> {
        let norm = self.norm_sqr().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Contradiction("conditional state has zero norm"));
        }
        for c in &mut self.c {
            *c /= norm;
        }
        Ok(())
    }

    /// `c_q ← α_q c_q`, renormalized.
    pub fn apply_jump(&mut self) -> Result<()> {
        let scale = self
            .c
            .iter()
            .zip(&self.alpha)
            .filter(|(c, _)| c.norm_sqr() > 0.0)
            .map(|(_, a)| a.norm())
            .fold(0.0, f64::max);
        if scale == 0.0 {
            return Err(Error::Contradiction("no configuration scatters light, a count is impossible"));
        }
        for (c, a) in self.c.iter_mut().zip(&self.alpha) {
            *c *= a / scale;
        }
        self.normalize()
    }

    /// `c_q ← e^{Φ_q(dt)} c_q` with `dt` in units of `1/κ`, renormalized.
    pub fn evolve_no_count(&mut self, dt: f64) -> Result<()> {
        if !(dt >= 0.0) {
            return Err(Error::invalid(format!("dt must be >= 0, got {dt}")));
        }
        if dt == 0.0 {
            return Ok(());
        }
        let shift = self
            .c
            .iter()
            .zip(&self.phi_rate)
            .filter(|(c, _)| c.norm_sqr() > 0.0)
            .map(|(_, r)| r.re * dt)
            .fold(f64::NEG_INFINITY, f64::max);
        for (c, r) in self.c.iter_mut().zip(&self.phi_rate) {
            *c *= (r * dt - shift).exp();
        }
        self.normalize()
    }

    /// `⟨a†a⟩_c = Σ |c_q|² |α_q|²`.
    pub fn photon_expectation(&self) -> f64 {
        self.c.iter().zip(&self.alpha).map(|(c, a)| c.norm_sqr() * a.norm_sqr()).sum()
    }

    /// Marginal distribution of the diffraction mode's statistical variable.
    pub fn reduce_to_z(&self) -> Result<AtomNumberDistribution> {
        let mut groups: std::collections::BTreeMap<i64, Vec<f64>> = Default::default();
        for (c, &z) in self.c.iter().zip(&self.z) {
            groups.entry(z).or_default().push(c.norm_sqr().ln());
        }
        let (support, log_weights): (Vec<i64>, Vec<f64>) =
            groups.into_iter().map(|(z, w)| (z, log_sum_exp(&w))).unzip();
        let mut dist = AtomNumberDistribution::from_log_weights(support, log_weights, self.mode)?;
        dist.prune(f64::INFINITY);
        Ok(dist)
    }

    /// Atomic density matrix after tracing out the light:
    /// `ρ_{qq'} = c_q c_{q'}* ⟨α_{q'}|α_q⟩`.
    pub fn atomic_density_matrix(&self) -> DensityMatrix {
        trace_light(&self.c, &self.alpha).expect("amplitudes and alphas have equal length")
    }
}

/// Traces the coherent light out of `Σ_q c_q |q⟩|α_q⟩`.
pub fn trace_light(c: &[Complex64], alpha: &[Complex64]) -> Result<DensityMatrix> {
    if c.len() != alpha.len() {
        return Err(Error::LengthMismatch { expected: c.len(), actual: alpha.len() });
    }
    let n = c.len();
    let rho = DMatrix::from_fn(n, n, |i, j| {
        let (ai, aj) = (alpha[i], alpha[j]);
        let overlap = (-0.5 * ai.norm_sqr() - 0.5 * aj.norm_sqr() + ai * aj.conj()).exp();
        c[i] * c[j].conj() * overlap
    });
    Ok(DensityMatrix(rho))
}

/// Odd-minus-even difference (sites numbered from 1) in the minimum,
/// illuminated atom number in the maximum.
pub fn statistical_variable(q: &[u32], mode: DiffractionMode, illuminated: usize) -> i64 {
    match mode {
        DiffractionMode::Maximum => q.iter().take(illuminated).map(|&k| k as i64).sum(),
        DiffractionMode::Minimum => q
            .iter()
            .enumerate()
            .map(|(j, &k)| if j % 2 == 0 { k as i64 } else { -(k as i64) })
            .sum(),
    }
}

/// Dense complex density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(pub DMatrix<Complex64>);

#[derive(Serialize, Deserialize)]
struct DensityMatrixJson {
    dim: usize,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl DensityMatrix {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    /// `{"dim": d, "re": [[..]], "im": [[..]]}`, rows first.
    pub fn to_json(&self) -> Result<String> {
        let d = self.dim();
        let rows = |f: fn(&Complex64) -> f64| (0..d).map(|i| (0..d).map(|j| f(&self.0[(i, j)])).collect()).collect();
        let json = DensityMatrixJson { dim: d, re: rows(|c| c.re), im: rows(|c| c.im) };
        Ok(serde_json::to_string(&json)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let json: DensityMatrixJson = serde_json::from_str(text)?;
        let d = json.dim;
        if json.re.len() != d || json.im.len() != d || json.re.iter().chain(&json.im).any(|r| r.len() != d) {
            return Err(Error::Validation("density matrix JSON has inconsistent dimensions".into()));
        }
        Ok(DensityMatrix(DMatrix::from_fn(d, d, |i, j| Complex64::new(json.re[i][j], json.im[i][j]))))
    }
}

/// Trajectory adapter: the full engine clocked in `τ` (needs `C ≠ 0`).
#[derive(Debug, Clone)]
pub struct FullEngine {
    state: ConditionalSuperposition,
    c_abs2: f64,
    m: u64,
    tau: f64,
}

impl FullEngine {
    pub fn new(state: ConditionalSuperposition, c: Complex64) -> Result<Self> {
        let c_abs2 = c.norm_sqr();
        if !(c_abs2 > 0.0) {
            return Err(Error::invalid("the full engine needs C != 0 to define tau"));
        }
        Ok(FullEngine { state, c_abs2, m: 0, tau: 0.0 })
    }

    pub fn state(&self) -> &ConditionalSuperposition {
        &self.state
    }
}

impl CountingEngine for FullEngine {
    // P = 2κ⟨a†a⟩δt = ⟨a†a⟩/|C|² δτ
    fn count_rate(&self) -> Result<f64> {
        Ok(self.state.photon_expectation() / self.c_abs2)
    }
    fn apply_count(&mut self) -> Result<()> {
        self.state.apply_jump()?;
        self.m += 1;
        Ok(())
    }
    fn advance(&mut self, dtau: f64) -> Result<()> {
        self.state.evolve_no_count(dtau / (2.0 * self.c_abs2))?;
        self.tau += dtau;
        Ok(())
    }
    fn photon_expectation(&self) -> f64 {
        self.state.photon_expectation()
    }
    fn count(&self) -> u64 {
        self.m
    }
    fn tau(&self) -> f64 {
        self.tau
    }
    fn snapshot(&self) -> Option<AtomNumberDistribution> {
        self.state.reduce_to_z().ok()
    }
}
