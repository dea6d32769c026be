//! Property tests: every channel output must stay a physical state.

use proptest::prelude::*;

use cim_core::channels::{
    displace, homodyne_measure, loss_channel, psa_step, PsaParams,
};
use cim_core::{DensityMatrixX, XGrid};

// Invariant tolerances are stated for the default grid; the outcome-moment
// property uses a coarser one to keep the distribution sums fast.
fn grid() -> XGrid {
    XGrid::new(10.0, 257).unwrap()
}

fn coarse_grid() -> XGrid {
    XGrid::new(8.0, 81).unwrap()
}

#[derive(Debug, Clone)]
enum Op {
    Psa { squeeze: f64, loss: f64 },
    Loss { retained: f64 },
    Measure { retained: f64, draw: f64 },
    Displace { d: f64 },
}

fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        (-0.1f64..0.3, prop_oneof![Just(0.0), Just(0.002)])
            .prop_map(|(squeeze, loss)| Op::Psa { squeeze, loss }),
        (0.5f64..=1.0).prop_map(|retained| Op::Loss { retained }),
        (0.5f64..=1.0, 0.02f64..0.98).prop_map(|(retained, draw)| Op::Measure { retained, draw }),
        (-1.5f64..1.5).prop_map(|d| Op::Displace { d }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn random_channel_chains_preserve_physicality(
        ops in prop::collection::vec(op_strategy(), 1..4),
        x0 in -1.5f64..1.5,
    ) {
        let g = grid();
        let mut state = DensityMatrixX::coherent(g, x0).unwrap();
        for op in &ops {
            let trace_before = state.trace();
            let selective = matches!(op, Op::Measure { .. });
            state = match *op {
                Op::Psa { squeeze, loss } => {
                    psa_step(&state, &PsaParams::new(squeeze, loss, 2).unwrap()).unwrap()
                }
                Op::Loss { retained } => loss_channel(&state, retained).unwrap(),
                Op::Measure { retained, draw } => {
                    homodyne_measure(&state, retained, draw).unwrap().1
                }
                Op::Displace { d } => displace(&state, d).unwrap(),
            };
            // symmetry of the kernel
            prop_assert!(state.symmetry_defect() < 1e-12);
            // trace conservation for the non-selective maps
            if !selective {
                prop_assert!((state.trace() - trace_before).abs() < 1e-8,
                    "trace drift {}", (state.trace() - trace_before).abs());
            } else {
                prop_assert!((state.trace() - 1.0).abs() < 1e-12);
            }
            // uncertainty bound and first p-moment of a real kernel
            let m = state.moments().unwrap();
            prop_assert!(m.var_x * m.var_p >= 0.25 - 1e-4,
                "uncertainty product {}", m.var_x * m.var_p);
            prop_assert!(state.first_p_moment().abs() < 1e-8);
            // diagonal stays nonnegative up to tolerance
            prop_assert!(state.diagonal_negativity() < 1e-6);
        }
    }

    #[test]
    fn displacement_group_property(a in -1.0f64..1.0, x0 in -1.0f64..1.0) {
        let g = grid();
        let state = DensityMatrixX::coherent(g, x0).unwrap();
        let back = displace(&displace(&state, a).unwrap(), -a).unwrap();
        let diff = (back.values() - state.values())
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        prop_assert!(diff < 1e-6, "forward-backward displacement residual {diff}");
    }

    #[test]
    fn rescale_inverse_property(s in 0.8f64..1.25) {
        let g = grid();
        let state = DensityMatrixX::vacuum(g);
        let back = state.rescale_coords(s).unwrap().rescale_coords(1.0 / s).unwrap();
        let diff = (back.values() - state.values())
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        prop_assert!(diff < 1e-6, "rescale inverse residual {diff}");
    }

    #[test]
    fn measurement_outcomes_follow_extracted_amplitude(
        x0 in -2.0f64..2.0,
        retained in 0.5f64..0.99,
    ) {
        let g = coarse_grid();
        let state = DensityMatrixX::coherent(g, x0).unwrap();
        let p = cim_core::channels::outcome_distribution(&state, retained).unwrap();
        let mut mass = 0.0;
        let mut mean = 0.0;
        for (k, &pk) in p.iter().enumerate() {
            let w = g.quad_weight(k) * pk * g.dx();
            mass += w;
            mean += w * g.x(k);
        }
        prop_assert!((mass - 1.0).abs() < 1e-6, "outcome mass {mass}");
        prop_assert!(
            (mean - (1.0 - retained).sqrt() * x0).abs() < 1e-5,
            "outcome mean {mean} for amplitude {x0}"
        );
    }
}
