//! Round-trip orchestration for an Ising-coupled pulse network and
//! deterministic stochastic-trajectory ensembles.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channels::{
    background_loss_selective, homodyne_measure, loss_channel, PsaParams, PsaStepper,
};
use crate::error::{CimError, Result};
use crate::grid::{DensityMatrixX, Moments, XGrid};

/// Ising coupling constants for the pulse network.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingProblem {
    coupling: Array2<f64>,
}

impl IsingProblem {
    pub fn new(coupling: Array2<f64>) -> Result<Self> {
        if coupling.nrows() != coupling.ncols() {
            return Err(CimError::DimensionMismatch("coupling matrix must be square".into()));
        }
        for i in 0..coupling.nrows() {
            if coupling[(i, i)] != 0.0 {
                return Err(CimError::InvalidArgument("coupling diagonal must vanish".into()));
            }
            for j in 0..i {
                if coupling[(i, j)] != coupling[(j, i)] {
                    return Err(CimError::InvalidArgument("coupling must be symmetric".into()));
                }
            }
        }
        Ok(Self { coupling })
    }

    /// The two-pulse network with out-of-phase coupling.
    pub fn antiferromagnetic_pair() -> Self {
        let mut j = Array2::zeros((2, 2));
        j[(0, 1)] = -1.0;
        j[(1, 0)] = -1.0;
        Self { coupling: j }
    }

    pub fn n_pulses(&self) -> usize {
        self.coupling.nrows()
    }

    pub fn coupling(&self) -> &Array2<f64> {
        &self.coupling
    }
}

/// Per-round-trip physics at the three couplers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundTripParams {
    pub psa: PsaParams,
    /// Power fraction retained at the measurement coupler.
    pub meas_transmittance: f64,
    /// Power fraction retained at the background coupler.
    pub background_transmittance: f64,
    /// Ratio of injected displacement to estimated amplitude.
    pub feedback_rate: f64,
}

impl RoundTripParams {
    pub fn new(
        psa: PsaParams,
        meas_transmittance: f64,
        background_transmittance: f64,
        feedback_rate: f64,
    ) -> Result<Self> {
        for (name, t) in [
            ("measurement transmittance", meas_transmittance),
            ("background transmittance", background_transmittance),
        ] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(CimError::InvalidArgument(format!(
                    "{name} must be in (0, 1], got {t}"
                )));
            }
        }
        if !(feedback_rate >= 0.0) {
            return Err(CimError::InvalidArgument(format!(
                "feedback rate must be nonnegative, got {feedback_rate}"
            )));
        }
        if feedback_rate > 0.0 && meas_transmittance == 1.0 {
            return Err(CimError::InvalidArgument(
                "feedback requires extracting light: T must be below 1".into(),
            ));
        }
        Ok(Self { psa, meas_transmittance, background_transmittance, feedback_rate })
    }
}

/// Round-by-round profile of the net linear amplitude gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PumpSchedule {
    Constant(f64),
    /// Linear in the round index from `start` to `end` over `ramp_rounds`
    /// rounds, held constant afterwards.
    LinearRamp { start: f64, end: f64, ramp_rounds: usize },
}

impl PumpSchedule {
    pub fn gain_at(&self, round: usize) -> f64 {
        match *self {
            PumpSchedule::Constant(g) => g,
            PumpSchedule::LinearRamp { start, end, ramp_rounds } => {
                if ramp_rounds == 0 || round >= ramp_rounds {
                    end
                } else {
                    start + (end - start) * round as f64 / ramp_rounds as f64
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = match *self {
            PumpSchedule::Constant(g) => (g, g),
            PumpSchedule::LinearRamp { start, end, .. } => (start, end),
        };
        if !(a > 0.0 && b > 0.0) {
            return Err(CimError::InvalidArgument("pump gains must be positive".into()));
        }
        Ok(())
    }
}

/// Squeeze rate that produces the requested net amplitude gain once both
/// coupler transmittances are paid: S = ln(G_tot / sqrt(T T')).
pub fn squeeze_from_gain(g_tot: f64, t: f64, t_prime: f64) -> f64 {
    (g_tot / (t * t_prime).sqrt()).ln()
}

/// Unbiased amplitude estimate from a homodyne outcome: the extracted port
/// carries amplitude sqrt(1 - T) of the internal field.
pub fn estimate_amplitude(x_m: f64, t: f64) -> Result<f64> {
    if t >= 1.0 {
        return Err(CimError::InvalidArgument(
            "nothing is extracted at T = 1; amplitude estimation undefined".into(),
        ));
    }
    Ok(x_m / (1.0 - t).sqrt())
}

/// Feedback displacements d_i = R * sum_j J_ij * x_tilde_j.
pub fn feedback_displacements(
    x_tilde: &[f64],
    problem: &IsingProblem,
    rate: f64,
) -> Result<Vec<f64>> {
    if x_tilde.len() != problem.n_pulses() {
        return Err(CimError::DimensionMismatch(format!(
            "{} estimates for {} pulses",
            x_tilde.len(),
            problem.n_pulses()
        )));
    }
    Ok((0..problem.n_pulses())
        .map(|i| {
            rate * x_tilde
                .iter()
                .enumerate()
                .map(|(j, &xj)| problem.coupling()[(i, j)] * xj)
                .sum::<f64>()
        })
        .collect())
}

/// How the background coupler is simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// Outcome integrated out; deterministic channel.
    Averaged,
    /// Outcome sampled and discarded, as in the reference procedure.
    Selective,
}

/// Whether feedback computed from round N lands in round N or N+1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackTiming {
    SamePass,
    Delayed,
}

/// Everything a single trajectory needs.
#[derive(Debug, Clone)]
pub struct TrajectoryConfig {
    pub grid: XGrid,
    pub params: RoundTripParams,
    pub pump: PumpSchedule,
    pub problem: IsingProblem,
    pub rounds: usize,
    pub loss_mode: LossMode,
    pub feedback_timing: FeedbackTiming,
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        self.pump.validate()?;
        let t = self.params.meas_transmittance;
        let tp = self.params.background_transmittance;
        for round in 0..self.rounds.max(1) {
            let s = squeeze_from_gain(self.pump.gain_at(round), t, tp);
            if !s.is_finite() || s.abs() >= 1.0 {
                return Err(CimError::InvalidArgument(format!(
                    "pump schedule implies squeeze rate {s} at round {round}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-round observables of one trajectory.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    /// Homodyne outcome per pulse.
    pub measured: Vec<f64>,
    /// Moments at the start of the round, in front of the amplifier.
    pub before_psa: Vec<Moments>,
    /// Moments directly behind the amplifier.
    pub after_psa: Vec<Moments>,
    /// Probability mass on x > 0 per pulse at the end of the round.
    pub prob_positive: Vec<f64>,
}

/// Full record of one stochastic trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
    pub final_states: Vec<DensityMatrixX>,
}

/// One full round trip: amplifier, background coupler, measurement coupler,
/// feedback injection. Returns the measured values.
///
/// `pending_feedback` carries displacements between rounds in delayed mode.
pub fn round_trip(
    states: &mut [DensityMatrixX],
    stepper: &mut PsaStepper,
    squeeze_rate: f64,
    config: &TrajectoryConfig,
    rng: &mut impl Rng,
    pending_feedback: &mut Vec<f64>,
    record_to: Option<&mut RoundRecord>,
) -> Result<Vec<f64>> {
    let mut rec = RoundRecord {
        measured: Vec::new(),
        before_psa: Vec::new(),
        after_psa: Vec::new(),
        prob_positive: Vec::new(),
    };
    round_trip_capture(
        states,
        stepper,
        squeeze_rate,
        config,
        rng,
        pending_feedback,
        &mut rec,
        false,
    )?;
    let measured = rec.measured.clone();
    if let Some(out) = record_to {
        *out = rec;
    }
    Ok(measured)
}

/// Evolve vacuum pulses over the configured number of rounds; fully
/// determined by the configuration and the seed.
pub fn run_trajectory(config: &TrajectoryConfig, seed: u64) -> Result<TrajectoryRecord> {
    let radius = PsaStepper::new(config.grid, config.params.psa.two_photon_loss, 1)?.loss_radius();
    run_trajectory_with_radius(config, seed, radius)
}

/// States captured at a requested round: in front of the amplifier (the
/// start of the round) and directly behind it.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub round: usize,
    pub before_psa: Vec<DensityMatrixX>,
    pub after_psa: Vec<DensityMatrixX>,
}

/// Trajectory run that additionally clones the pulse states at the listed
/// rounds: entry r holds the states in front of the amplifier after r
/// completed loops (round 0 is the initial vacuum; an entry equal to the
/// total round count captures the end state with no behind-amplifier
/// counterpart).
pub fn run_trajectory_with_snapshots(
    config: &TrajectoryConfig,
    seed: u64,
    snapshot_rounds: &[usize],
) -> Result<(TrajectoryRecord, Vec<Snapshot>)> {
    config.validate()?;
    let t = config.params.meas_transmittance;
    let tp = config.params.background_transmittance;
    let mut stepper = PsaStepper::from_params(config.grid, &config.params.psa)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = vec![DensityMatrixX::vacuum(config.grid); config.problem.n_pulses()];
    let mut pending = vec![0.0; config.problem.n_pulses()];
    let mut rounds = Vec::with_capacity(config.rounds);
    let mut snapshots: Vec<Snapshot> = snapshot_rounds
        .iter()
        .map(|&round| Snapshot { round, before_psa: Vec::new(), after_psa: Vec::new() })
        .collect();
    for round in 0..config.rounds {
        if let Some(snap) = snapshots.iter_mut().find(|s| s.round == round) {
            snap.before_psa = states.clone();
        }
        let squeeze = squeeze_from_gain(config.pump.gain_at(round), t, tp);
        let mut rec = RoundRecord {
            measured: Vec::new(),
            before_psa: Vec::new(),
            after_psa: Vec::new(),
            prob_positive: Vec::new(),
        };
        // capture behind the amplifier before the couplers touch the state
        let want_after = snapshot_rounds.contains(&round);
        let after_states = round_trip_capture(
            &mut states,
            &mut stepper,
            squeeze,
            config,
            &mut rng,
            &mut pending,
            &mut rec,
            want_after,
        )
        .map_err(|e| CimError::TrajectoryFailed { seed, round, source: Box::new(e) })?;
        if let (Some(snap), Some(after)) =
            (snapshots.iter_mut().find(|s| s.round == round), after_states)
        {
            snap.after_psa = after;
        }
        rounds.push(rec);
    }
    for snap in snapshots.iter_mut().filter(|s| s.round >= config.rounds) {
        snap.before_psa = states.clone();
    }
    Ok((TrajectoryRecord { seed, rounds, final_states: states }, snapshots))
}

#[allow(clippy::too_many_arguments)]
fn round_trip_capture(
    states: &mut [DensityMatrixX],
    stepper: &mut PsaStepper,
    squeeze_rate: f64,
    config: &TrajectoryConfig,
    rng: &mut impl Rng,
    pending: &mut Vec<f64>,
    rec: &mut RoundRecord,
    capture_after: bool,
) -> Result<Option<Vec<DensityMatrixX>>> {
    let params = &config.params;
    let mut before = Vec::with_capacity(states.len());
    let mut after = Vec::with_capacity(states.len());
    for state in states.iter_mut() {
        before.push(state.moments()?);
        *state = stepper.step(state, squeeze_rate)?;
        after.push(state.moments()?);
    }
    let captured = capture_after.then(|| states.to_vec());
    let mut measured = Vec::with_capacity(states.len());
    for state in states.iter_mut() {
        match config.loss_mode {
            LossMode::Averaged => {
                if params.background_transmittance < 1.0 {
                    *state = loss_channel(state, params.background_transmittance)?;
                }
            }
            LossMode::Selective => {
                let draw: f64 = rng.random();
                *state = background_loss_selective(state, params.background_transmittance, draw)?;
            }
        }
        let draw: f64 = rng.random();
        let (outcome, conditioned) = homodyne_measure(state, params.meas_transmittance, draw)?;
        *state = conditioned;
        measured.push(outcome.value);
    }
    if params.feedback_rate > 0.0 {
        let estimates: Vec<f64> = measured
            .iter()
            .map(|&m| estimate_amplitude(m, params.meas_transmittance))
            .collect::<Result<_>>()?;
        let fresh = feedback_displacements(&estimates, &config.problem, params.feedback_rate)?;
        let to_apply = match config.feedback_timing {
            FeedbackTiming::SamePass => fresh,
            FeedbackTiming::Delayed => std::mem::replace(pending, fresh),
        };
        for (state, &d) in states.iter_mut().zip(&to_apply) {
            if d != 0.0 {
                *state = state.displace(d)?;
            }
        }
    }
    rec.measured = measured;
    rec.before_psa = before;
    rec.after_psa = after;
    rec.prob_positive = states.iter().map(|s| s.positive_mass()).collect();
    Ok(captured)
}

/// Trajectory runner that reuses a precomputed loss-generator norm so
/// ensembles don't repeat the power iteration.
pub fn run_trajectory_with_radius(
    config: &TrajectoryConfig,
    seed: u64,
    radius: f64,
) -> Result<TrajectoryRecord> {
    config.validate()?;
    let t = config.params.meas_transmittance;
    let tp = config.params.background_transmittance;
    let mut stepper = PsaStepper::with_radius(
        config.grid,
        config.params.psa.two_photon_loss,
        config.params.psa.n_substeps,
        radius,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = vec![DensityMatrixX::vacuum(config.grid); config.problem.n_pulses()];
    let mut pending = vec![0.0; config.problem.n_pulses()];
    let mut rounds = Vec::with_capacity(config.rounds);
    for round in 0..config.rounds {
        let squeeze = squeeze_from_gain(config.pump.gain_at(round), t, tp);
        let mut rec = RoundRecord {
            measured: Vec::new(),
            before_psa: Vec::new(),
            after_psa: Vec::new(),
            prob_positive: Vec::new(),
        };
        round_trip(
            &mut states,
            &mut stepper,
            squeeze,
            config,
            &mut rng,
            &mut pending,
            Some(&mut rec),
        )
        .map_err(|e| CimError::TrajectoryFailed { seed, round, source: Box::new(e) })?;
        rounds.push(rec);
    }
    Ok(TrajectoryRecord { seed, rounds, final_states: states })
}

/// Ensemble outcome: completed trajectories in seed order plus any failures.
#[derive(Debug)]
pub struct EnsembleResult {
    pub records: Vec<TrajectoryRecord>,
    pub failures: Vec<CimError>,
}

impl EnsembleResult {
    pub fn completed(&self) -> usize {
        self.records.len()
    }
}

/// Run `n_traj` trajectories seeded `base_seed + k`, in parallel; output
/// order follows the seed order regardless of scheduling.
pub fn run_ensemble(config: &TrajectoryConfig, n_traj: usize, base_seed: u64) -> EnsembleResult {
    run_ensemble_with_progress(config, n_traj, base_seed, |_| {})
}

/// Ensemble runner that reports the number of completed trajectories after
/// each one finishes (called from worker threads).
pub fn run_ensemble_with_progress(
    config: &TrajectoryConfig,
    n_traj: usize,
    base_seed: u64,
    progress: impl Fn(usize) + Sync,
) -> EnsembleResult {
    if n_traj == 0 {
        return EnsembleResult { records: Vec::new(), failures: Vec::new() };
    }
    let radius = match PsaStepper::new(config.grid, config.params.psa.two_photon_loss, 1) {
        Ok(s) => s.loss_radius(),
        Err(e) => {
            return EnsembleResult { records: Vec::new(), failures: vec![e] };
        }
    };
    let done = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<Result<TrajectoryRecord>> = (0..n_traj)
        .into_par_iter()
        .map(|k| {
            let r = run_trajectory_with_radius(config, base_seed.wrapping_add(k as u64), radius);
            progress(1 + done.fetch_add(1, std::sync::atomic::Ordering::Relaxed));
            r
        })
        .collect();
    let mut records = Vec::with_capacity(n_traj);
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push(e),
        }
    }
    EnsembleResult { records, failures }
}
