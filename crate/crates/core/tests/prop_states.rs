mod common;

use proptest::prelude::*;
use qst_core::states::{build_state, density_from_moyal, moyal_from_density, weyl_expectation, wigner_from_moyal};
use qst_core::{AxisGrid, C64};

fn axis256() -> AxisGrid {
    AxisGrid::from_half_span(256, 16.0).unwrap()
}

fn axis128() -> AxisGrid {
    AxisGrid::from_half_span(128, 16.0).unwrap()
}

proptest! {
    #![proptest_config(common::config(100))]

    #[test]
    fn moyal_density_round_trip(spec in common::any_state()) {
        let rho = build_state(&spec, &axis256()).unwrap();
        let back = density_from_moyal(&moyal_from_density(&rho)).unwrap();
        let err = (back.matrix() - rho.matrix()).iter().map(|v| v.norm()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-8, "{}: {err:.3e}", spec.kind());
    }

    #[test]
    fn zero_k_slice_is_momentum_characteristic_function(spec in common::any_state()) {
        let rho = build_state(&spec, &axis128()).unwrap();
        let m = moyal_from_density(&rho);
        let (kax, p) = rho.momentum_distribution();
        let j0 = m.k_axis().zero_index().unwrap();
        // n momentum samples fix the characteristic function only up to period n·h
        let window = 0.5 * rho.axis().n() as f64 * rho.axis().spacing();
        for i in 0..m.x_axis().n() {
            let x = m.x_axis().point(i);
            if x.abs() >= window {
                continue;
            }
            let cf: C64 = kax.points().zip(&p).map(|(k, pk)| C64::from_polar(*pk, x * k)).sum::<C64>() * kax.spacing();
            prop_assert!((m.field().get(i, j0) - cf).norm() <= 1e-8, "x = {x}");
        }
    }

    #[test]
    fn weyl_path_matches_fft_path(spec in common::any_state(), picks in prop::collection::vec((1usize..256, 0usize..128), 8)) {
        let rho = build_state(&spec, &axis128()).unwrap();
        let m = moyal_from_density(&rho);
        for (i, j) in picks {
            let (x, k) = (m.x_axis().point(i), m.k_axis().point(j));
            let direct = weyl_expectation(&rho, x, k).unwrap();
            prop_assert!((direct - m.field().get(i, j)).norm() <= 1e-8, "({x}, {k})");
        }
    }

    #[test]
    fn wigner_marginals(spec in common::any_state()) {
        let rho = build_state(&spec, &axis128()).unwrap();
        let w = wigner_from_moyal(&moyal_from_density(&rho)).unwrap();
        let diag = rho.position_distribution();
        for (a, b) in w.position_marginal().iter().zip(&diag) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
        let (kax, p) = rho.momentum_distribution();
        let wk = w.axes()[0];
        let marg = w.momentum_marginal();
        for (i, pk) in p.iter().enumerate() {
            let idx = wk.node_index(kax.point(i)).expect("momentum nodes are Wigner nodes");
            prop_assert!((marg[idx] - pk).abs() <= 1e-8, "K = {}", kax.point(i));
        }
    }
}
