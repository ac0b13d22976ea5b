//! Seeded quantum trajectories shared by every engine.
//!
//! Each step of length `δτ` draws one `ε ∈ (0, 1)` and compares it with the
//! first-order jump probability `P = ⟨z²⟩_c δτ` (equivalently
//! `2κ⟨a†a⟩_c δt`). A count is recorded when `P > ε`.
//!
//! # Random numbers
//!
//! Trajectory `i` of an ensemble with master seed `s` uses ChaCha8
//! (`rand_chacha::ChaCha8Rng::seed_from_u64`) seeded with
//! [`trajectory_seed`]`(s, i) = splitmix64(s ^ splitmix64(i))`. One `ε` is
//! consumed per step whether or not a count occurs, so two engines driven
//! with the same seed and step schedule see the same `ε_i` sequence.

use std::io::{Read, Write};

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distribution::AtomNumberDistribution;
use crate::error::{Error, Result};
use crate::special::splitmix64;

/// Largest per-step jump probability the runner accepts before halving δτ.
pub const MAX_STEP_PROBABILITY: f64 = 0.1;

/// Remaining time below this fraction of `τ_max` ends a trajectory.
const TAU_END_TOLERANCE: f64 = 1e-12;

pub fn trajectory_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(index))
}

pub fn trajectory_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A conditional-state engine that can be driven by the trajectory loop.
pub trait CountingEngine {
    /// Conditional `⟨z²⟩`: the jump probability per unit `τ`.
    fn count_rate(&self) -> Result<f64>;
    fn apply_count(&mut self) -> Result<()>;
    fn advance(&mut self, dtau: f64) -> Result<()>;
    fn photon_expectation(&self) -> f64;
    fn count(&self) -> u64;
    fn tau(&self) -> f64;
    /// The conditional distribution, for engines that hold one.
    fn snapshot(&self) -> Option<AtomNumberDistribution> {
        None
    }

    /// One Monte Carlo step; returns whether a photon was counted.
    fn step(&mut self, dtau: f64, epsilon: f64) -> Result<bool> {
        if !(dtau >= 0.0) {
            return Err(Error::invalid(format!("dtau must be >= 0, got {dtau}")));
        }
        let probability = self.count_rate()? * dtau;
        if probability >= 1.0 {
            return Err(Error::StepTooLarge { probability });
        }
        let counted = probability > epsilon;
        if counted {
            self.apply_count()?;
        }
        self.advance(dtau)?;
        Ok(counted)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub tau: f64,
    pub m: u64,
    pub photon_expectation: f64,
    pub snapshot: Option<AtomNumberDistribution>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub jump_times: Vec<f64>,
    pub final_distribution: Option<AtomNumberDistribution>,
}

impl TrajectoryRecord {
    pub fn final_count(&self) -> u64 {
        self.jump_times.len() as u64
    }

    pub fn final_tau(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.tau)
    }

    /// `m(τ)`: counts recorded at or before `tau`.
    pub fn count_at(&self, tau: f64) -> u64 {
        self.jump_times.partition_point(|&t| t <= tau) as u64
    }

    /// `tau,m,photon_expectation` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv_writer(out);
        w.write_record(["tau", "m", "photon_expectation"])?;
        for s in &self.steps {
            w.write_record([s.tau.to_string(), s.m.to_string(), s.photon_expectation.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long-format snapshot table: `tau,m,z,probability`.
    pub fn write_snapshots_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv_writer(out);
        w.write_record(["tau", "m", "z", "probability"])?;
        for s in &self.steps {
            if let Some(d) = &s.snapshot {
                for (z, lw) in d.support().iter().zip(d.log_weights()) {
                    w.write_record([s.tau.to_string(), s.m.to_string(), z.to_string(), lw.exp().to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn has_snapshots(&self) -> bool {
        self.steps.iter().any(|s| s.snapshot.is_some())
    }

    /// Reads a record written by [`write_csv`](Self::write_csv). Jump times
    /// are recovered from the steps where `m` increases.
    pub fn read_csv<R: Read>(seed: u64, input: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            tau: f64,
            m: u64,
            photon_expectation: f64,
        }
        let mut reader = csv::Reader::from_reader(input);
        let mut steps = Vec::new();
        let mut jump_times = Vec::new();
        let mut last_m = 0;
        for row in reader.deserialize() {
            let row: Row = row?;
            if row.m < last_m {
                return Err(Error::Validation(format!("photocount decreases at tau = {}", row.tau)));
            }
            for _ in last_m..row.m {
                jump_times.push(row.tau);
            }
            last_m = row.m;
            steps.push(StepRecord {
                tau: row.tau,
                m: row.m,
                photon_expectation: row.photon_expectation,
                snapshot: None,
            });
        }
        Ok(TrajectoryRecord { seed, steps, jump_times, final_distribution: None })
    }
}

/// Snapshot rows grouped back into `(tau, m, distribution)` triples.
pub fn read_snapshots_csv<R: Read>(
    input: R,
    mode: crate::model::DiffractionMode,
) -> Result<Vec<(f64, u64, AtomNumberDistribution)>> {
    #[derive(Deserialize)]
    struct Row {
        tau: f64,
        m: u64,
        z: i64,
        probability: f64,
    }
    let mut reader = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    let mut current: Option<(f64, u64, Vec<i64>, Vec<f64>)> = None;
    let flush = |c: Option<(f64, u64, Vec<i64>, Vec<f64>)>,
                 out: &mut Vec<(f64, u64, AtomNumberDistribution)>|
     -> Result<()> {
        if let Some((tau, m, zs, ps)) = c {
            out.push((tau, m, AtomNumberDistribution::from_probabilities(zs, &ps, mode)?));
        }
        Ok(())
    };
    for row in reader.deserialize() {
        let row: Row = row?;
        match &mut current {
            Some((tau, m, zs, ps)) if *tau == row.tau && *m == row.m => {
                zs.push(row.z);
                ps.push(row.probability);
            }
            _ => {
                flush(current.take(), &mut out)?;
                current = Some((row.tau, row.m, vec![row.z], vec![row.probability]));
            }
        }
    }
    flush(current, &mut out)?;
    Ok(out)
}

pub(crate) fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

/// Step-size control and output cadence for one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub tau_max: f64,
    /// Initial (largest) step; halved while the jump probability exceeds
    /// [`MAX_STEP_PROBABILITY`].
    pub dtau: f64,
    /// Keep a distribution snapshot every this many steps (0 = never).
    pub snapshot_every: u64,
}

impl StepSchedule {
    pub fn new(tau_max: f64, dtau: f64) -> Self {
        StepSchedule { tau_max, dtau, snapshot_every: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_max >= 0.0 && self.tau_max.is_finite()) {
            return Err(Error::invalid(format!("tau_max must be finite and >= 0, got {}", self.tau_max)));
        }
        if !(self.dtau > 0.0 && self.dtau.is_finite()) {
            return Err(Error::invalid(format!("dtau must be > 0, got {}", self.dtau)));
        }
        Ok(())
    }
}

/// Drives `engine` from its current time to `schedule.tau_max`.
pub fn run<E: CountingEngine>(engine: &mut E, schedule: &StepSchedule, seed: u64) -> Result<TrajectoryRecord> {
    schedule.validate()?;
    let mut rng = trajectory_rng(seed);
    let planned = (schedule.tau_max / schedule.dtau).ceil().min(1e7) as usize + 1;
    let mut steps = Vec::with_capacity(planned);
    let mut jump_times = Vec::new();
    let end_slack = TAU_END_TOLERANCE * schedule.tau_max.max(1.0);
    let mut index = 0u64;
    while schedule.tau_max - engine.tau() > end_slack {
        let rate = engine.count_rate()?;
        let mut dtau = schedule.dtau.min(schedule.tau_max - engine.tau());
        while rate * dtau > MAX_STEP_PROBABILITY {
            dtau *= 0.5;
        }
        let epsilon: f64 = rng.sample(Open01);
        let counted = engine.step(dtau, epsilon)?;
        if counted {
            jump_times.push(engine.tau());
        }
        index += 1;
        let snapshot = if schedule.snapshot_every > 0 && index % schedule.snapshot_every == 0 {
            engine.snapshot()
        } else {
            None
        };
        steps.push(StepRecord {
            tau: engine.tau(),
            m: engine.count(),
            photon_expectation: engine.photon_expectation(),
            snapshot,
        });
    }
    Ok(TrajectoryRecord { seed, steps, jump_times, final_distribution: engine.snapshot() })
}
