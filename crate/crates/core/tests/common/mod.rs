#![allow(dead_code)]

use proptest::prelude::*;
use qst_core::states::StateSpec;

pub fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

fn centre() -> impl Strategy<Value = (f64, f64)> {
    (-0.8f64..0.8, -0.8f64..0.8)
}

/// Single-component states with widths in `[0.7, 1.2]`.
pub fn simple_state() -> impl Strategy<Value = StateSpec> {
    prop_oneof![
        (centre(), 0.7f64..1.2).prop_map(|((x0, k0), sigma)| StateSpec::GaussianPure { x0, k0, sigma }),
        (centre(), 0.7f64..1.0, 0.0f64..0.8).prop_map(|((x0, k0), sigma, nbar)| StateSpec::GaussianThermal { x0, k0, sigma, nbar }),
        (centre(), 0.7f64..1.0, 2.0f64..4.0, 0.0f64..std::f64::consts::TAU).prop_map(|((x0, k0), sigma, d, phase)| StateSpec::Cat {
            x0,
            k0,
            sigma,
            separation: d * sigma,
            phase
        }),
    ]
}

/// Every kind, including two-component mixtures.
pub fn any_state() -> impl Strategy<Value = StateSpec> {
    prop_oneof![
        3 => simple_state(),
        1 => (simple_state(), simple_state(), 0.1f64..0.9).prop_map(|(a, b, w)| StateSpec::Mixture(vec![(w, a), (1.0 - w, b)])),
    ]
}

/// The four reference states used across acceptance checks.
pub fn reference_states() -> Vec<StateSpec> {
    let cat = StateSpec::Cat { x0: 0.0, k0: 0.0, sigma: 1.0, separation: 4.0, phase: 0.0 };
    vec![
        StateSpec::gaussian(1.0),
        StateSpec::GaussianThermal { x0: 0.0, k0: 0.0, sigma: 1.0, nbar: 0.5 },
        cat.clone(),
        StateSpec::Mixture(vec![(0.5, StateSpec::gaussian(1.0)), (0.5, cat)]),
    ]
}
