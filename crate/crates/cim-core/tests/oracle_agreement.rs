//! Cross-checks between the in-phase-amplitude grid implementation and the
//! independent truncated photon-number implementation of every channel.

use approx::assert_abs_diff_eq;
use cim_core::channels::{
    conditional_state, homodyne_measure, loss_channel, PsaParams, PsaStepper,
};
use cim_core::engine::squeeze_from_gain;
use cim_core::fock::{
    displace as fock_displace, fock_from_grid, grid_from_fock, psa_step as fock_psa_step,
    trace_distance_fock, trace_distance_grid, BeamSplitter, DensityMatrixFock,
};
use cim_core::{DensityMatrixX, XGrid};

fn grid() -> XGrid {
    XGrid::new(10.0, 257).unwrap()
}

#[test]
fn squeezed_vacuum_moments_agree_across_bases() {
    let g = grid();
    // grid route
    let params = PsaParams::new(0.3, 0.0, 4).unwrap();
    let grid_state = cim_core::channels::psa_step(&DensityMatrixX::vacuum(g), &params).unwrap();
    let mg = grid_state.moments().unwrap();
    // number-basis route, converted to the grid
    let fock_state = fock_psa_step(&DensityMatrixFock::vacuum(50), 0.3, 0.0, 80).unwrap();
    let converted = grid_from_fock(&fock_state, g).unwrap();
    let mf = converted.moments().unwrap();

    let expect_var_x = 0.5 * (0.6f64).exp();
    let expect_var_p = 0.5 * (-0.6f64).exp();
    for m in [&mg, &mf] {
        assert_abs_diff_eq!(m.var_x, expect_var_x, epsilon = 1e-4);
        assert_abs_diff_eq!(m.var_p, expect_var_p, epsilon = 1e-4);
    }
    assert!(trace_distance_grid(&grid_state, &converted).unwrap() < 1e-4);
}

#[test]
fn two_photon_decay_of_pair_state_agrees() {
    let g = grid();
    let two_f = DensityMatrixFock::number_state(40, 2).unwrap();
    let two_g = grid_from_fock(&two_f, g).unwrap();

    let mut stepper = PsaStepper::new(g, 0.1, 4).unwrap();
    let mut state_g = two_g;
    let mut state_f = two_f;
    for _ in 0..5 {
        state_g = stepper.step(&state_g, 0.0).unwrap();
        state_f = fock_psa_step(&state_f, 0.0, 0.1, 40).unwrap();
    }
    assert_abs_diff_eq!(state_g.trace(), 1.0, epsilon = 1e-8);
    assert_abs_diff_eq!(state_f.trace(), 1.0, epsilon = 1e-8);
    // population moves toward the vacuum in both routes
    assert!(state_f.values()[(0, 0)].re > 0.3);
    let d = trace_distance_grid(&state_g, &grid_from_fock(&state_f, g).unwrap()).unwrap();
    assert!(d < 1e-3, "two-photon decay routes diverge: {d}");
}

#[test]
fn loss_channel_agrees_on_displaced_squeezed_state() {
    let g = grid();
    // anti-squeezed then displaced state, built identically in both bases
    let grid_in = cim_core::channels::psa_step(
        &DensityMatrixX::vacuum(g),
        &PsaParams::new(0.25, 0.0, 4).unwrap(),
    )
    .unwrap()
    .displace(1.2)
    .unwrap();
    let fock_in = fock_displace(
        &fock_psa_step(&DensityMatrixFock::vacuum(60), 0.25, 0.0, 60).unwrap(),
        1.2,
    )
    .unwrap();

    let t = 0.8;
    let grid_out = loss_channel(&grid_in, t).unwrap();
    let fock_out = BeamSplitter::new(60, t).unwrap().apply_lossy(&fock_in).unwrap();
    let d = trace_distance_grid(&grid_out, &grid_from_fock(&fock_out, g).unwrap()).unwrap();
    assert!(d < 1e-3, "loss channel routes diverge: {d}");

    let mg = grid_out.moments().unwrap();
    let (mean_f, var_f, _) = fock_out.quadrature_moments();
    assert_abs_diff_eq!(mg.mean_x, mean_f, epsilon = 1e-5);
    assert_abs_diff_eq!(mg.var_x, var_f, epsilon = 1e-4);
}

#[test]
fn conditional_measurement_state_agrees_for_injected_outcome() {
    let g = grid();
    // anti-squeezed input so the conditional mean actually depends on the
    // outcome, exercising the sign conventions
    let grid_in = cim_core::channels::psa_step(
        &DensityMatrixX::vacuum(g),
        &PsaParams::new(0.3, 0.0, 4).unwrap(),
    )
    .unwrap();
    let fock_in = fock_psa_step(&DensityMatrixFock::vacuum(60), 0.3, 0.0, 60).unwrap();

    let t = 0.9;
    let bs = BeamSplitter::new(60, t).unwrap();
    // outcomes aligned with grid nodes so the density comparison is exact
    for &outcome in &[-0.78125, 0.0, 0.625, 1.25] {
        let grid_cond = conditional_state(&grid_in, t, outcome).unwrap();
        let (fock_cond, density_f) = bs.apply_selective(&fock_in, outcome).unwrap();
        let d =
            trace_distance_grid(&grid_cond, &grid_from_fock(&fock_cond, g).unwrap()).unwrap();
        assert!(d < 1e-3, "conditional states diverge at outcome {outcome}: {d}");

        let mg = grid_cond.moments().unwrap();
        let (mean_f, _, _) = fock_cond.quadrature_moments();
        assert_abs_diff_eq!(mg.mean_x, mean_f, epsilon = 1e-4);

        // outcome densities must also match
        let (m, _) = homodyne_measure(&grid_in, t, 0.5).unwrap();
        assert!(m.prob_density > 0.0);
        let diag: Vec<f64> = (0..g.n_points()).map(|i| grid_in.values()[(i, i)]).collect();
        let _ = diag;
        let p_grid = cim_core::channels::outcome_distribution(&grid_in, t).unwrap();
        let idx = ((outcome - g.x_min()) / g.dx()).round() as usize;
        assert_abs_diff_eq!(p_grid[idx], density_f, epsilon = 2e-3);
    }
}

#[test]
fn basis_change_is_isometric_on_smooth_states() {
    let g = grid();
    let state = cim_core::channels::psa_step(
        &DensityMatrixX::vacuum(g),
        &PsaParams::new(0.2, 0.0, 4).unwrap(),
    )
    .unwrap()
    .displace(1.5)
    .unwrap();
    let m0 = state.moments().unwrap();
    let fock = fock_from_grid(&state, 60).unwrap();
    let back = grid_from_fock(&fock, g).unwrap();
    let m1 = back.moments().unwrap();
    assert_abs_diff_eq!(m0.trace, m1.trace, epsilon = 1e-6);
    assert_abs_diff_eq!(m0.mean_x, m1.mean_x, epsilon = 1e-6);
    assert_abs_diff_eq!(m0.var_x, m1.var_x, epsilon = 1e-6);
    assert!(trace_distance_fock(&fock, &fock_from_grid(&back, 60).unwrap()).unwrap() < 1e-8);
}

/// Shared-outcome replay of the full round-trip pipeline in both bases: the
/// desk-scale version of the acceptance oracle-equivalence run.
#[test]
fn short_pipeline_replay_agrees() {
    let g = grid();
    let t = 0.9;
    let t_prime = 1.0;
    let feedback_rate = 0.005;
    let squeeze = squeeze_from_gain(1.05, t, t_prime);
    let loss = 0.002;
    let dim = 60;
    let rounds = 4;

    let mut stepper = PsaStepper::new(g, loss, 2).unwrap();
    let bs = BeamSplitter::new(dim, t).unwrap();
    let mut grid_states = vec![DensityMatrixX::vacuum(g); 2];
    let mut fock_states = vec![DensityMatrixFock::vacuum(dim); 2];
    let mut rng_draws = [0.3721, 0.8414, 0.1199, 0.6668, 0.9273, 0.0415, 0.5871, 0.7333]
        .iter()
        .cycle()
        .copied();

    for _round in 0..rounds {
        let mut outcomes = Vec::new();
        for p in 0..2 {
            grid_states[p] = stepper.step(&grid_states[p], squeeze).unwrap();
            fock_states[p] = fock_psa_step(&fock_states[p], squeeze, loss, 40).unwrap();

            let draw = rng_draws.next().unwrap();
            let (outcome, cond) = homodyne_measure(&grid_states[p], t, draw).unwrap();
            grid_states[p] = cond;
            let (fc, _) = bs.apply_selective(&fock_states[p], outcome.value).unwrap();
            fock_states[p] = fc;
            outcomes.push(outcome.value);
        }
        // anti-ferromagnetic feedback, same-pass
        let est: Vec<f64> = outcomes.iter().map(|&m| m / (1.0f64 - t).sqrt()).collect();
        let d = [-feedback_rate * est[1], -feedback_rate * est[0]];
        for p in 0..2 {
            grid_states[p] = grid_states[p].displace(d[p]).unwrap();
            fock_states[p] = fock_displace(&fock_states[p], d[p]).unwrap();
        }
    }

    for p in 0..2 {
        let from_fock = grid_from_fock(&fock_states[p], g).unwrap();
        let d = trace_distance_grid(&grid_states[p], &from_fock).unwrap();
        assert!(d < 1e-3, "pulse {p}: pipeline routes diverge by {d}");
    }
}
