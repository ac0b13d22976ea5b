//! Lattice geometry, cavity parameters, mode functions and the derived
//! scattering scales shared by every engine.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Which diffraction condition the probe and cavity satisfy. It fixes the
/// meaning of the statistical variable `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffractionMode {
    /// Alternating-sign scattering; `z` is the odd-minus-even atom-number
    /// difference, `-N ≤ z ≤ N` with the parity of `N`.
    Minimum,
    /// In-phase scattering; `z` is the atom number in the `K` illuminated
    /// sites, `0 ≤ z ≤ N`.
    Maximum,
}

impl std::fmt::Display for DiffractionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DiffractionMode::Minimum => f.write_str("minimum"),
            DiffractionMode::Maximum => f.write_str("maximum"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeGeometry {
    /// Atom number `N`.
    pub atoms: u64,
    /// Lattice sites `M`.
    pub sites: usize,
    /// Illuminated sites `K`, counted from the first site.
    pub illuminated: usize,
    /// Number of odd sites `Q`.
    pub odd_sites: usize,
}

impl LatticeGeometry {
    pub fn new(atoms: u64, sites: usize, illuminated: usize, odd_sites: usize) -> Result<Self> {
        let geom = LatticeGeometry { atoms, sites, illuminated, odd_sites };
        geom.validate()?;
        Ok(geom)
    }

    /// Whole lattice illuminated, `Q = ⌈M/2⌉`.
    pub fn fully_illuminated(atoms: u64, sites: usize) -> Result<Self> {
        Self::new(atoms, sites, sites, sites.div_ceil(2))
    }

    pub fn validate(&self) -> Result<()> {
        if self.atoms < 1 {
            return Err(Error::invalid("atom number N must be at least 1"));
        }
        if self.sites < 1 {
            return Err(Error::invalid("site count M must be at least 1"));
        }
        if self.illuminated < 1 || self.illuminated > self.sites {
            return Err(Error::invalid(format!(
                "illuminated sites K = {} must satisfy 1 <= K <= M = {}",
                self.illuminated, self.sites
            )));
        }
        if self.odd_sites > self.sites {
            return Err(Error::invalid(format!(
                "odd-site count Q = {} exceeds M = {}",
                self.odd_sites, self.sites
            )));
        }
        Ok(())
    }

    /// Extra constraints of the diffraction-minimum geometry: `K = M`.
    pub fn validate_for(&self, mode: DiffractionMode) -> Result<()> {
        self.validate()?;
        if mode == DiffractionMode::Minimum && self.illuminated != self.sites {
            return Err(Error::invalid(format!(
                "diffraction minimum requires K = M, got K = {} and M = {}",
                self.illuminated, self.sites
            )));
        }
        Ok(())
    }

    /// Illuminated fraction `K/M`.
    pub fn illuminated_fraction(&self) -> f64 {
        self.illuminated as f64 / self.sites as f64
    }
}

/// Cavity QED parameters. Frequencies share one unit; [`normalized`]
/// rescales them to `κ = 1`.
///
/// [`normalized`]: CavityParams::normalized
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityParams {
    pub g0: f64,
    pub g1: f64,
    /// Cavity-atom detuning `Δ_a`.
    pub delta_a: f64,
    /// Probe-cavity detuning `Δ_p`.
    pub delta_p: f64,
    /// Cavity decay rate `κ`.
    pub kappa: f64,
    /// Probe amplitude through the mirror `η`.
    pub eta: Complex64,
    /// Transverse probe amplitude `a₀`.
    pub a0: Complex64,
    /// Keep the `U₁₁D₁₁` cavity frequency shift. Without it the light
    /// amplitude of the maximum preset is exactly `α_z = Cz`.
    #[serde(default = "default_true")]
    pub dispersive_shift: bool,
}

fn default_true() -> bool {
    true
}

impl CavityParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.g0, self.g1, self.delta_a, self.delta_p, self.kappa];
        if all.iter().any(|v| !v.is_finite()) || !self.eta.is_finite() || !self.a0.is_finite() {
            return Err(Error::invalid("cavity parameters must be finite"));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::invalid(format!("kappa must be > 0, got {}", self.kappa)));
        }
        if self.delta_a == 0.0 {
            return Err(Error::invalid("delta_a = 0 makes U = g g / delta_a diverge"));
        }
        Ok(())
    }

    /// `U_lm = g_l g_m / Δ_a` for `l, m ∈ {0, 1}`.
    pub fn u(&self, l: usize, m: usize) -> f64 {
        let g = |k: usize| if k == 0 { self.g0 } else { self.g1 };
        g(l) * g(m) / self.delta_a
    }

    /// `U₁₁` as it enters the cavity resonance, zero when the dispersive
    /// shift is switched off.
    pub fn shift_u11(&self) -> f64 {
        if self.dispersive_shift {
            self.u(1, 1)
        } else {
            0.0
        }
    }

    /// The same physics with every frequency in units of `κ`. Times measured
    /// by the result are `κt`.
    pub fn normalized(&self) -> Self {
        // g enters only through g²/Δ_a, so dividing g, Δ_a by κ scales U by 1/κ
        let k = self.kappa;
        CavityParams {
            g0: self.g0 / k,
            g1: self.g1 / k,
            delta_a: self.delta_a / k,
            delta_p: self.delta_p / k,
            kappa: 1.0,
            eta: self.eta / k,
            a0: self.a0,
            dispersive_shift: self.dispersive_shift,
        }
    }
}

/// Mode-function values `u₀(r_j)`, `u₁(r_j)` at each lattice site.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeFunctions {
    pub u0: Vec<Complex64>,
    pub u1: Vec<Complex64>,
}

impl ModeFunctions {
    pub fn new(u0: Vec<Complex64>, u1: Vec<Complex64>) -> Result<Self> {
        if u0.len() != u1.len() {
            return Err(Error::LengthMismatch { expected: u0.len(), actual: u1.len() });
        }
        Ok(ModeFunctions { u0, u1 })
    }

    /// Diffraction maximum: `u₀* u₁ = 1` on every site.
    pub fn maximum(sites: usize) -> Self {
        let one = Complex64::new(1.0, 0.0);
        ModeFunctions { u0: vec![one; sites], u1: vec![one; sites] }
    }

    /// Diffraction minimum: `u₀* u₁ = (-1)^j` for sites `j = 1..M`.
    pub fn minimum(sites: usize) -> Self {
        let one = Complex64::new(1.0, 0.0);
        let u1 = (1..=sites)
            .map(|j| if j % 2 == 0 { one } else { -one })
            .collect();
        ModeFunctions { u0: vec![one; sites], u1 }
    }

    pub fn preset(mode: DiffractionMode, sites: usize) -> Self {
        match mode {
            DiffractionMode::Minimum => Self::minimum(sites),
            DiffractionMode::Maximum => Self::maximum(sites),
        }
    }

    pub fn sites(&self) -> usize {
        self.u0.len()
    }

    fn mode(&self, l: usize) -> &[Complex64] {
        if l == 0 {
            &self.u0
        } else {
            &self.u1
        }
    }
}

/// `C` and the rate `dτ/dt = 2|C|²κ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringScales {
    pub c: Complex64,
    pub tau_rate: f64,
}

impl ScatteringScales {
    pub fn from_params(params: &CavityParams) -> Result<Self> {
        let c = derive_c(params)?;
        Ok(ScatteringScales { c, tau_rate: 2.0 * c.norm_sqr() * params.kappa })
    }
}

/// Scattering coefficient `C = i U₁₀ a₀ / (iΔ_p − κ)`, the light amplitude
/// per unit of the statistical variable in the diffraction maximum.
pub fn derive_c(params: &CavityParams) -> Result<Complex64> {
    params.validate()?;
    let u10 = params.u(1, 0);
    Ok(I * u10 * params.a0 / (I * params.delta_p - params.kappa))
}

/// `D^q_lm = Σ_{j ≤ K} u_l*(r_j) u_m(r_j) q_j`.
pub fn coupling_d(
    occupations: &[u32],
    modes: &ModeFunctions,
    l: usize,
    m: usize,
    illuminated: usize,
) -> Result<Complex64> {
    if occupations.len() != modes.sites() {
        return Err(Error::LengthMismatch { expected: modes.sites(), actual: occupations.len() });
    }
    if illuminated > modes.sites() {
        return Err(Error::invalid(format!(
            "illuminated sites K = {illuminated} exceeds M = {}",
            modes.sites()
        )));
    }
    if l > 1 || m > 1 {
        return Err(Error::invalid("mode indices must be 0 or 1"));
    }
    let (ul, um) = (modes.mode(l), modes.mode(m));
    Ok((0..illuminated)
        .map(|j| ul[j].conj() * um[j] * occupations[j] as f64)
        .sum())
}

/// `τ = 2|C|²κt`.
pub fn tau_of_t(t: f64, scales: &ScatteringScales) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("time must be >= 0, got {t}")));
    }
    Ok(scales.tau_rate * t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(g0: f64, g1: f64, delta_a: f64, delta_p: f64, kappa: f64, a0: Complex64) -> CavityParams {
        CavityParams { g0, g1, delta_a, delta_p, kappa, eta: Complex64::new(0.0, 0.0), a0, dispersive_shift: true }
    }

    /// Steady state of `ȧ = -(κ - iΔ_p) a - i U₁₀ a₀` by RK4 time stepping.
    fn steady_state_amplitude(p: &CavityParams) -> Complex64 {
        let drive = -I * p.u(1, 0) * p.a0;
        let decay = Complex64::new(p.kappa, -p.delta_p);
        let rhs = |a: Complex64| -decay * a + drive;
        let mut a = Complex64::new(0.0, 0.0);
        let h = 0.01 / (p.kappa + p.delta_p.abs());
        let steps = (60.0 / p.kappa / h) as usize;
        for _ in 0..steps {
            let k1 = rhs(a);
            let k2 = rhs(a + k1 * (h / 2.0));
            let k3 = rhs(a + k2 * (h / 2.0));
            let k4 = rhs(a + k3 * h);
            a += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        a
    }

    #[test]
    fn c_vanishes_without_probe() {
        let p = params(1.0, 2.0, 3.0, 0.5, 1.0, Complex64::new(0.0, 0.0));
        assert_eq!(derive_c(&p).unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn c_direct_cancellation() {
        // U₁₀ a₀ = κ at Δ_p = 0 gives C = -i
        let p = params(1.0, 2.0, 2.0, 0.0, 1.0, Complex64::new(1.0, 0.0));
        let c = derive_c(&p).unwrap();
        assert!((c - Complex64::new(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn c_matches_cavity_steady_state() {
        let p = params(0.7, -1.3, 2.9, -0.8, 1.7, Complex64::new(0.4, -0.6));
        let c = derive_c(&p).unwrap();
        let oracle = steady_state_amplitude(&p);
        assert!((c - oracle).norm() < 1e-9 * oracle.norm(), "{c} vs {oracle}");
    }

    #[test]
    fn c_rejects_bad_params() {
        let mut p = params(1.0, 1.0, 0.0, 0.0, 1.0, Complex64::new(1.0, 0.0));
        assert!(matches!(derive_c(&p), Err(Error::InvalidParameter(_))));
        p.delta_a = 1.0;
        p.kappa = 0.0;
        assert!(matches!(derive_c(&p), Err(Error::InvalidParameter(_))));
        p.kappa = -1.0;
        assert!(derive_c(&p).is_err());
    }

    #[test]
    fn c_invariant_under_coupling_sign_flip() {
        let p = params(0.7, -1.3, 2.9, -0.8, 1.7, Complex64::new(0.4, -0.6));
        let q = CavityParams { g0: -p.g0, g1: -p.g1, ..p };
        assert_eq!(derive_c(&p).unwrap(), derive_c(&q).unwrap());
    }

    #[test]
    fn normalization_preserves_c() {
        let p = params(0.7, -1.3, 2.9, -0.8, 1.7, Complex64::new(0.4, -0.6));
        let c = derive_c(&p).unwrap();
        let cn = derive_c(&p.normalized()).unwrap();
        assert!((c - cn).norm() < 1e-14);
    }

    #[test]
    fn tau_conversion() {
        let scales = ScatteringScales { c: Complex64::new(0.6, 0.8), tau_rate: 2.0 };
        assert_eq!(tau_of_t(0.0, &scales).unwrap(), 0.0);
        assert!((tau_of_t(0.5, &scales).unwrap() - 1.0).abs() < 1e-15);
        assert!(tau_of_t(-1e-3, &scales).is_err());

        let p = params(0.3, 1.1, -2.0, 0.4, 0.9, Complex64::new(1.5, 0.2));
        let s = ScatteringScales::from_params(&p).unwrap();
        let c = derive_c(&p).unwrap();
        let t = 3.7;
        let direct = 2.0 * (c.re * c.re + c.im * c.im) * 0.9 * t;
        assert!((tau_of_t(t, &s).unwrap() - direct).abs() < 1e-14 * direct);
    }

    #[test]
    fn coupling_maximum_counts_illuminated_atoms() {
        let modes = ModeFunctions::maximum(5);
        let q = [2, 0, 3, 1, 4];
        let d = coupling_d(&q, &modes, 1, 0, 3).unwrap();
        assert_eq!(d, Complex64::new(5.0, 0.0));
        // arrangement inside the illuminated region is irrelevant
        let d2 = coupling_d(&[0, 5, 0, 1, 4], &modes, 1, 0, 3).unwrap();
        assert_eq!(d, d2);
    }

    #[test]
    fn coupling_minimum_alternates() {
        let modes = ModeFunctions::minimum(4);
        // odd sites (1, 3) hold 3 + 1, even sites (2, 4) hold 0 + 2
        let q = [3, 0, 1, 2];
        let d = coupling_d(&q, &modes, 0, 1, 4).unwrap();
        assert_eq!(d, Complex64::new(2.0 - 4.0, 0.0));
    }

    #[test]
    fn coupling_errors() {
        let modes = ModeFunctions::maximum(3);
        assert!(matches!(
            coupling_d(&[1, 2], &modes, 0, 1, 2),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(coupling_d(&[1, 2, 3], &modes, 0, 1, 4).is_err());
    }

    #[test]
    fn geometry_validation() {
        assert!(LatticeGeometry::new(0, 2, 2, 1).is_err());
        assert!(LatticeGeometry::new(4, 2, 3, 1).is_err());
        assert!(LatticeGeometry::new(4, 2, 2, 3).is_err());
        let g = LatticeGeometry::new(4, 4, 2, 2).unwrap();
        assert!(g.validate_for(DiffractionMode::Maximum).is_ok());
        assert!(g.validate_for(DiffractionMode::Minimum).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn cplx() -> impl Strategy<Value = Complex64> {
            (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(re, im)| Complex64::new(re, im))
        }

        proptest! {
            #[test]
            fn coupling_matches_sitewise_sum_and_is_additive(
                (u0, u1, q, k) in (1usize..7).prop_flat_map(|m| (
                    prop::collection::vec(cplx(), m),
                    prop::collection::vec(cplx(), m),
                    prop::collection::vec(0u32..6, m),
                    1..=m,
                ))
            ) {
                let modes = ModeFunctions::new(u0.clone(), u1.clone()).unwrap();
                let d = coupling_d(&q, &modes, 0, 1, k).unwrap();
                let mut brute = Complex64::new(0.0, 0.0);
                for j in 0..k {
                    for _ in 0..q[j] {
                        brute += u0[j].conj() * u1[j];
                    }
                }
                prop_assert!((d - brute).norm() <= 1e-12 * (1.0 + brute.norm()));

                // sum over single-atom configurations at the same sites
                let mut single = Complex64::new(0.0, 0.0);
                for (j, &n) in q.iter().enumerate() {
                    let mut one = vec![0u32; q.len()];
                    one[j] = 1;
                    single += coupling_d(&one, &modes, 0, 1, k).unwrap() * n as f64;
                }
                prop_assert!((d - single).norm() <= 1e-12 * (1.0 + d.norm()));
            }
        }
    }
}
