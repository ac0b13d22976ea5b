//! Seeded ensembles, run directories and ensemble statistics.
//!
//! A run is described by a TOML [`RunConfig`]. Trajectory `i` uses the seed
//! [`trajectory_seed`]`(master_seed, i)`, so the output depends only on the
//! config and never on how many workers executed it. Each run directory
//! holds `trajectory_NNNNN.csv` (plus `trajectory_NNNNN_snapshots.csv` when
//! snapshots are enabled) and a `manifest.json` listing every file with its
//! SHA-256.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distribution::{
    discretized_gaussian, gaussian_of, superfluid, AtomNumberDistribution, GaussianSpec, DEFAULT_GAUSSIAN_MIN_ATOMS,
};
use crate::error::{Error, Result};
use crate::exact::ExactEngineState;
use crate::full::{ConditionalSuperposition, ConfigurationBasis, FullEngine, MAX_BASIS_SIZE};
use crate::gaussian::GaussianEngineState;
use crate::model::{derive_c, CavityParams, DiffractionMode, LatticeGeometry, ModeFunctions};
use crate::trajectory::{self, csv_writer, read_snapshots_csv, trajectory_seed, StepSchedule, TrajectoryRecord};

/// `|C|²⟨z²⟩₀` above which [`strong_scattering_warning`] fires.
pub const STRONG_SCATTERING_THRESHOLD: f64 = 100.0;

/// Half-width, in standard deviations, of a discretized Gaussian initial state.
pub const GAUSSIAN_GRID_WIDTH: f64 = 12.0;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Exact,
    Gaussian,
    Full,
}

impl std::fmt::Display for EngineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EngineKind::Exact => "exact",
            EngineKind::Gaussian => "gaussian",
            EngineKind::Full => "full",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialState {
    /// Binomial superfluid statistics (all configurations for `full`).
    Binomial,
    /// Gaussian limit of the superfluid, discretized for `exact`.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: DiffractionMode,
    pub engine: EngineKind,
    /// Defaults to `gaussian` for the gaussian engine, `binomial` otherwise.
    #[serde(default)]
    pub initial_state: Option<InitialState>,
    pub geometry: LatticeGeometry,
    pub cavity: CavityParams,
    pub tau_max: f64,
    pub dtau: f64,
    pub master_seed: u64,
    pub trajectories: u64,
    #[serde(default)]
    pub snapshot_every: u64,
    #[serde(default = "default_min_atoms")]
    pub gaussian_min_atoms: u64,
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
}

fn default_min_atoms() -> u64 {
    DEFAULT_GAUSSIAN_MIN_ATOMS
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn schedule(&self) -> StepSchedule {
        StepSchedule { tau_max: self.tau_max, dtau: self.dtau, snapshot_every: self.snapshot_every }
    }

    pub fn initial_state(&self) -> InitialState {
        self.initial_state.unwrap_or(match self.engine {
            EngineKind::Gaussian => InitialState::Gaussian,
            _ => InitialState::Binomial,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate_for(self.mode)?;
        self.cavity.validate()?;
        self.schedule().validate()?;
        if self.workers == Some(0) {
            return Err(Error::invalid("workers must be >= 1"));
        }
        match (self.engine, self.initial_state()) {
            (EngineKind::Gaussian, InitialState::Binomial) => {
                return Err(Error::invalid("engine = gaussian requires initial_state = gaussian"));
            }
            (EngineKind::Full, InitialState::Gaussian) => {
                return Err(Error::invalid("engine = full requires initial_state = binomial"));
            }
            _ => {}
        }
        if self.initial_state() == InitialState::Gaussian {
            gaussian_of(self.mode, &self.geometry, self.gaussian_min_atoms)?;
        }
        if self.engine == EngineKind::Full {
            let atoms = u32::try_from(self.geometry.atoms)
                .map_err(|_| Error::invalid("engine = full needs N below 2^32"))?;
            let size = ConfigurationBasis::size(atoms, self.geometry.sites);
            if size > MAX_BASIS_SIZE as f64 {
                return Err(Error::invalid(format!(
                    "engine = full: basis of {size} configurations exceeds the cap of {MAX_BASIS_SIZE}"
                )));
            }
            if derive_c(&self.cavity)?.norm_sqr() == 0.0 {
                return Err(Error::invalid("engine = full needs a0 != 0 so that C != 0"));
            }
        }
        Ok(())
    }

    /// The initial `p₀(z)` of the exact engine, or `None` for the others.
    pub fn initial_distribution(&self) -> Result<Option<AtomNumberDistribution>> {
        if self.engine != EngineKind::Exact {
            return Ok(None);
        }
        let dist = match self.initial_state() {
            InitialState::Binomial => superfluid(self.mode, &self.geometry)?,
            InitialState::Gaussian => {
                let spec = gaussian_of(self.mode, &self.geometry, self.gaussian_min_atoms)?;
                gaussian_initial(&spec, self.mode, self.geometry.atoms)?
            }
        };
        Ok(Some(dist))
    }
}

/// Gaussian on the support lattice of the mode: `z ≡ N (mod 2)` in the
/// minimum, every integer in the maximum.
fn gaussian_initial(spec: &GaussianSpec, mode: DiffractionMode, atoms: u64) -> Result<AtomNumberDistribution> {
    match mode {
        DiffractionMode::Maximum => discretized_gaussian(spec, mode, GAUSSIAN_GRID_WIDTH, 1),
        DiffractionMode::Minimum => {
            let half = (GAUSSIAN_GRID_WIDTH * spec.sigma).ceil() as i64 + 1;
            let parity = (atoms % 2) as i64;
            let support: Vec<i64> = (-half..=half).filter(|z| z.rem_euclid(2) == parity).collect();
            let log_weights = support.iter().map(|&z| -((z * z) as f64) / (2.0 * spec.variance())).collect();
            AtomNumberDistribution::from_log_weights(support, log_weights, mode)
        }
    }
}

/// Message when `|C|²⟨z²⟩₀` is far above one: the first count then arrives
/// before `1/κ` and the adiabatic light elimination no longer holds.
pub fn strong_scattering_warning(config: &RunConfig) -> Result<Option<String>> {
    let c2 = derive_c(&config.cavity)?.norm_sqr();
    let moment2 = match config.initial_state() {
        InitialState::Binomial => superfluid(config.mode, &config.geometry)?.moment(2),
        InitialState::Gaussian => {
            let s = gaussian_of(config.mode, &config.geometry, config.gaussian_min_atoms)?;
            s.z0 * s.z0 + s.variance()
        }
    };
    let photons = c2 * moment2;
    Ok((photons > STRONG_SCATTERING_THRESHOLD).then(|| {
        format!(
            "|C|^2 <z^2> = {photons:.3e} exceeds {STRONG_SCATTERING_THRESHOLD}: strong scattering, \
             the first count precedes 1/kappa and the weak-scattering model is outside its range"
        )
    }))
}

/// Runs trajectory `index` of `config`.
pub fn run_one(config: &RunConfig, index: u64, init: Option<&AtomNumberDistribution>) -> Result<TrajectoryRecord> {
    let seed = trajectory_seed(config.master_seed, index);
    let schedule = config.schedule();
    let c = derive_c(&config.cavity)?;
    match config.engine {
        EngineKind::Exact => {
            let init = match init {
                Some(d) => d.clone(),
                None => config
                    .initial_distribution()?
                    .ok_or_else(|| Error::invalid("exact engine needs an initial distribution"))?,
            };
            let mut state = ExactEngineState::new(init, c)?;
            trajectory::run(&mut state, &schedule, seed)
        }
        EngineKind::Gaussian => {
            let spec = gaussian_of(config.mode, &config.geometry, config.gaussian_min_atoms)?;
            let mut state = GaussianEngineState::new(spec, config.mode, c.norm_sqr())?;
            trajectory::run(&mut state, &schedule, seed)
        }
        EngineKind::Full => {
            let mut engine = full_engine(config)?;
            trajectory::run(&mut engine, &schedule, seed)
        }
    }
}

fn full_engine(config: &RunConfig) -> Result<FullEngine> {
    let g = &config.geometry;
    let atoms = u32::try_from(g.atoms).map_err(|_| Error::invalid("engine = full needs N below 2^32"))?;
    let basis = ConfigurationBasis::enumerate(atoms, g.sites)?;
    let amplitudes: Vec<Complex64> = basis.superfluid_amplitudes();
    let modes = ModeFunctions::preset(config.mode, g.sites);
    let state = ConditionalSuperposition::new(&basis, amplitudes, &config.cavity, &modes, g.illuminated, config.mode)?;
    FullEngine::new(state, derive_c(&config.cavity)?)
}

/// Every trajectory of `config`, in index order.
pub fn simulate(config: &RunConfig) -> Result<Vec<TrajectoryRecord>> {
    config.validate()?;
    let init = config.initial_distribution()?;
    let job = || -> Result<Vec<TrajectoryRecord>> {
        (0..config.trajectories).into_par_iter().map(|i| run_one(config, i, init.as_ref())).collect()
    };
    match config.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start {n} workers: {e}")))?
            .install(job),
        None => job(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub engine: EngineKind,
    pub mode: DiffractionMode,
    pub code_version: String,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub files: Vec<ManifestFile>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?)
    }
}

pub fn trajectory_file_name(index: u64) -> String {
    format!("trajectory_{index:05}.csv")
}

pub fn snapshot_file_name(index: u64) -> String {
    format!("trajectory_{index:05}_snapshots.csv")
}

/// Simulates `config` and writes its run directory.
pub fn run(config: &RunConfig) -> Result<Manifest> {
    let dir = config
        .output_dir
        .clone()
        .ok_or_else(|| Error::invalid("output_dir is not set"))?;
    let records = simulate(config)?;
    write_run(config, &records, &dir)
}

/// Writes trajectory CSVs and the manifest for already simulated records.
pub fn write_run(config: &RunConfig, records: &[TrajectoryRecord], dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (i, record) in records.iter().enumerate() {
        let name = trajectory_file_name(i as u64);
        files.push(write_hashed(dir, &name, |w| record.write_csv(w))?);
        if record.has_snapshots() {
            let name = snapshot_file_name(i as u64);
            files.push(write_hashed(dir, &name, |w| record.write_snapshots_csv(w))?);
        }
    }
    let manifest = Manifest {
        engine: config.engine,
        mode: config.mode,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: RunConfig { output_dir: None, workers: None, ..config.clone() },
        seeds: records.iter().map(|r| r.seed).collect(),
        files,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

fn write_hashed(dir: &Path, name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<ManifestFile> {
    let mut bytes = Vec::new();
    write(&mut bytes)?;
    fs::write(dir.join(name), &bytes)?;
    Ok(ManifestFile { path: name.to_string(), sha256: sha256_hex(&bytes) })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads back a run directory, checking every hash in the manifest.
pub fn load_run(dir: &Path) -> Result<(Manifest, Vec<TrajectoryRecord>)> {
    let manifest = Manifest::read(dir)?;
    for file in &manifest.files {
        let bytes = fs::read(dir.join(&file.path))?;
        if sha256_hex(&bytes) != file.sha256 {
            return Err(Error::Validation(format!("{} does not match its manifest hash", file.path)));
        }
    }
    let mut records = Vec::with_capacity(manifest.seeds.len());
    for (i, &seed) in manifest.seeds.iter().enumerate() {
        let mut record = TrajectoryRecord::read_csv(seed, fs::File::open(dir.join(trajectory_file_name(i as u64)))?)?;
        let snap_path = dir.join(snapshot_file_name(i as u64));
        if snap_path.exists() {
            let mut snaps = read_snapshots_csv(fs::File::open(snap_path)?, manifest.mode)?.into_iter().peekable();
            for step in &mut record.steps {
                if let Some((tau, m, _)) = snaps.peek() {
                    if *tau == step.tau && *m == step.m {
                        step.snapshot = snaps.next().map(|s| s.2);
                    }
                }
            }
            record.final_distribution = record.steps.iter().rev().find_map(|s| s.snapshot.clone());
        }
        records.push(record);
    }
    Ok((manifest, records))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub tau: f64,
    pub mean_m: f64,
    pub variance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakRow {
    pub trajectory: usize,
    pub tau: f64,
    pub m: u64,
    pub argmax: i64,
    pub predicted: f64,
    /// `|argmax − √(m/τ)|` in units of the support step.
    pub deviation_steps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub trajectories: usize,
    pub grid: Vec<GridRow>,
    /// Mean of `m_i/τ_i` over trajectories with `τ_i > 0`, in counts per unit `τ`.
    pub count_rate: f64,
    pub count_rate_stderr: f64,
    pub peaks: Vec<PeakRow>,
}

impl EnsembleStats {
    /// Largest peak deviation over snapshots with `m >= min_m`.
    pub fn max_peak_deviation(&self, min_m: u64) -> Option<f64> {
        self.peaks.iter().filter(|p| p.m >= min_m).map(|p| p.deviation_steps).reduce(f64::max)
    }

    pub fn write_grid_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        write_rows(&self.grid, out)
    }

    pub fn write_peaks_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        write_rows(&self.peaks, out)
    }
}

fn write_rows<T: Serialize, W: std::io::Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and variance of `m(τ)` on `grid_points` equally spaced times from 0
/// to the shortest trajectory's end, the per-trajectory count rate, and the
/// positive peak of every snapshot against `√(m/τ)`.
pub fn ensemble_stats(records: &[TrajectoryRecord], grid_points: usize) -> Result<EnsembleStats> {
    if records.is_empty() {
        return Err(Error::invalid("ensemble statistics need at least one trajectory"));
    }
    let tau_end = records.iter().map(TrajectoryRecord::final_tau).fold(f64::INFINITY, f64::min);
    let n = records.len() as f64;
    let grid = if tau_end > 0.0 && grid_points > 0 {
        (0..=grid_points)
            .map(|i| {
                let tau = tau_end * i as f64 / grid_points as f64;
                let counts: Vec<f64> = records.iter().map(|r| r.count_at(tau) as f64).collect();
                let mean = counts.iter().sum::<f64>() / n;
                let variance = if counts.len() > 1 {
                    counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                GridRow { tau, mean_m: mean, variance_m: variance }
            })
            .collect()
    } else {
        Vec::new()
    };

    let rates: Vec<f64> = records
        .iter()
        .filter(|r| r.final_tau() > 0.0)
        .map(|r| r.final_count() as f64 / r.final_tau())
        .collect();
    let (count_rate, count_rate_stderr) = mean_and_stderr(&rates);

    let mut peaks = Vec::new();
    for (i, r) in records.iter().enumerate() {
        for s in &r.steps {
            let Some(d) = &s.snapshot else { continue };
            if s.m == 0 || s.tau <= 0.0 {
                continue;
            }
            let Some(argmax) = d.positive_argmax() else { continue };
            let predicted = (s.m as f64 / s.tau).sqrt();
            peaks.push(PeakRow {
                trajectory: i,
                tau: s.tau,
                m: s.m,
                argmax,
                predicted,
                deviation_steps: (argmax as f64 - predicted).abs() / d.support_step() as f64,
            });
        }
    }
    Ok(EnsembleStats { trajectories: records.len(), grid, count_rate, count_rate_stderr, peaks })
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    match xs.len() {
        0 => (0.0, 0.0),
        1 => (xs[0], 0.0),
        k => {
            let n = k as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (mean, (var / n).sqrt())
        }
    }
}

/// Writes the purity sweep CSV to `path`.
pub fn write_purity_sweep(path: &Path, alpha_max: f64, steps: usize, phis: &[f64]) -> Result<()> {
    let rows = crate::purity::purity_sweep(alpha_max, steps, phis)?;
    crate::purity::write_sweep_csv(&rows, BufWriter::new(fs::File::create(path)?))
}
