//! Run configuration with flat keys mirroring the physical parameter names,
//! deserialized from JSON by the command-line front end and the test suites.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::channels::PsaParams;
use crate::engine::{
    FeedbackTiming, IsingProblem, LossMode, PumpSchedule, RoundTripParams, TrajectoryConfig,
};
use crate::error::{CimError, Result};
use crate::grid::XGrid;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PumpConfig {
    Constant {
        g0: f64,
    },
    LinearRamp {
        g0: f64,
        g_max: f64,
        ramp_rounds: usize,
    },
}

impl Default for PumpConfig {
    fn default() -> Self {
        PumpConfig::Constant { g0: 1.05 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum LossModeConfig {
    Averaged,
    Selective,
}

impl Default for LossModeConfig {
    fn default() -> Self {
        LossModeConfig::Averaged
    }
}

/// Flat run configuration; every field has a physically sensible default so
/// small JSON files stay small.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Grid half-extent of the in-phase amplitude axis.
    pub x_max: f64,
    pub n_points: usize,
    /// Net linear amplitude gain per loop (pump schedule).
    pub pump: PumpConfig,
    /// Power fraction retained at the measurement coupler (T).
    pub meas_transmittance: f64,
    /// Power fraction retained at the background coupler (T').
    pub background_transmittance: f64,
    /// Feedback rate R.
    pub feedback_rate: f64,
    /// Two-photon loss rate L per round trip.
    pub two_photon_loss: f64,
    /// Operator-splitting substeps inside the amplifier.
    pub n_substeps: usize,
    /// Ising couplings; defaults to the anti-ferromagnetic pair.
    pub coupling: Option<Vec<Vec<f64>>>,
    pub rounds: usize,
    pub trajectories: usize,
    pub base_seed: u64,
    pub loss_mode: LossModeConfig,
    /// Apply feedback computed from round N in round N+1 instead of N.
    pub delayed_feedback: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            x_max: 10.0,
            n_points: 257,
            pump: PumpConfig::default(),
            meas_transmittance: 0.99,
            background_transmittance: 1.0,
            feedback_rate: 0.005,
            two_photon_loss: 0.002,
            n_substeps: 2,
            coupling: None,
            rounds: 150,
            trajectories: 10,
            base_seed: 1,
            loss_mode: LossModeConfig::Averaged,
            delayed_feedback: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| CimError::InvalidArgument(format!("config parse error: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn problem(&self) -> Result<IsingProblem> {
        match &self.coupling {
            None => Ok(IsingProblem::antiferromagnetic_pair()),
            Some(rows) => {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(CimError::InvalidArgument("coupling matrix must be square".into()));
                }
                let mut j = Array2::zeros((n, n));
                for (i, row) in rows.iter().enumerate() {
                    for (k, &v) in row.iter().enumerate() {
                        j[(i, k)] = v;
                    }
                }
                IsingProblem::new(j)
            }
        }
    }

    pub fn pump_schedule(&self) -> PumpSchedule {
        match self.pump {
            PumpConfig::Constant { g0 } => PumpSchedule::Constant(g0),
            PumpConfig::LinearRamp { g0, g_max, ramp_rounds } => {
                PumpSchedule::LinearRamp { start: g0, end: g_max, ramp_rounds }
            }
        }
    }

    /// Materialize the engine-side configuration.
    pub fn trajectory_config(&self) -> Result<TrajectoryConfig> {
        let grid = XGrid::new(self.x_max, self.n_points)?;
        // the stored squeeze rate is the constant-pump value; the engine
        // recomputes it per round from the schedule anyway
        let s0 = crate::engine::squeeze_from_gain(
            self.pump_schedule().gain_at(0),
            self.meas_transmittance,
            self.background_transmittance,
        );
        let psa = PsaParams::new(s0, self.two_photon_loss, self.n_substeps)?;
        let params = RoundTripParams::new(
            psa,
            self.meas_transmittance,
            self.background_transmittance,
            self.feedback_rate,
        )?;
        let config = TrajectoryConfig {
            grid,
            params,
            pump: self.pump_schedule(),
            problem: self.problem()?,
            rounds: self.rounds,
            loss_mode: match self.loss_mode {
                LossModeConfig::Averaged => LossMode::Averaged,
                LossModeConfig::Selective => LossMode::Selective,
            },
            feedback_timing: if self.delayed_feedback {
                FeedbackTiming::Delayed
            } else {
                FeedbackTiming::SamePass
            },
        };
        config.validate()?;
        Ok(config)
    }

    /// FNV-1a hash of the canonical serialization, recorded in run manifests.
    pub fn content_hash(&self) -> u64 {
        let text = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}
