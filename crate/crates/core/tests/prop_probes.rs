mod common;

use proptest::prelude::*;
use qst_core::probes::{gaussian_mqc, gaussian_probe_density, order_matrix, GaussianProbePair, MeasurementOrder, ProbeMqc};
use qst_core::C64;

fn probe() -> impl Strategy<Value = GaussianProbePair> {
    (0.2f64..3.0, 0.2f64..3.0, 0.05f64..1.0, 0.05f64..1.0)
        .prop_map(|(dk, dx, fk, fx)| GaussianProbePair::new(dk, dx, 2.0 * dk * fk, 2.0 * dx * fx).unwrap())
}

fn pair(r: f64) -> impl Strategy<Value = [f64; 2]> {
    (-r..r, -r..r).prop_map(|(a, b)| [a, b])
}

/// `∫dJ̄ e^{iφ·J̄} ρ(J̄ - j/2, J̄ + j/2)` by the trapezoid rule, which is spectrally accurate for Gaussians.
fn transform(p: &GaussianProbePair, phi: [f64; 2], j: [f64; 2]) -> C64 {
    let d = p.deltas();
    let (m, w) = (120usize, 10.0);
    let h = [2.0 * w * d[0] / m as f64, 2.0 * w * d[1] / m as f64];
    let mut acc = C64::new(0.0, 0.0);
    for a in 0..=m {
        let jk = -w * d[0] + a as f64 * h[0];
        for b in 0..=m {
            let jx = -w * d[1] + b as f64 * h[1];
            let rho = gaussian_probe_density(p, [jk - j[0] / 2.0, jx - j[1] / 2.0], [jk + j[0] / 2.0, jx + j[1] / 2.0]);
            acc += rho * C64::from_polar(1.0, phi[0] * jk + phi[1] * jx);
        }
    }
    acc * h[0] * h[1]
}

proptest! {
    #![proptest_config(common::config(100))]

    #[test]
    fn gaussian_mqc_is_even_in_each_argument(p in probe(), phi in pair(3.0), j in pair(3.0)) {
        let base = gaussian_mqc(&p, phi, j);
        let flips = [
            ([-phi[0], phi[1]], j),
            ([phi[0], -phi[1]], j),
            (phi, [-j[0], j[1]]),
            (phi, [j[0], -j[1]]),
        ];
        for (f, g) in flips {
            prop_assert!((gaussian_mqc(&p, f, g) - base).norm() <= 1e-15 * base.norm().max(1e-300));
        }
    }

    #[test]
    fn gaussian_mqc_is_log_quadratic(p in probe(), u in pair(2.0), v in pair(2.0), t in 0.1f64..2.0) {
        // arguments in units of 1/Δ and κ keep the exponent O(1), clear of underflow
        let (d, k) = (p.deltas(), p.kappas());
        let (phi, j) = ([u[0] / d[0], u[1] / d[1]], [v[0] * k[0], v[1] * k[1]]);
        let l1 = gaussian_mqc(&p, phi, j).re.ln();
        let lt = gaussian_mqc(&p, [t * phi[0], t * phi[1]], [t * j[0], t * j[1]]).re.ln();
        prop_assert!((lt - t * t * l1).abs() <= 1e-12 * (1.0 + lt.abs()), "{lt} vs {}", t * t * l1);
    }

    #[test]
    fn mqc_is_normalised_and_hermitian(p in probe(), phi in pair(3.0), j in pair(3.0)) {
        prop_assert!((p.mqc([0.0, 0.0], [0.0, 0.0]) - C64::new(1.0, 0.0)).norm() <= 1e-12);
        let v = p.mqc(phi, j);
        let w = p.mqc([-phi[0], -phi[1]], [-j[0], -j[1]]);
        prop_assert!((v - w.conj()).norm() <= 1e-15);
    }

    #[test]
    fn constructor_rejects_uncertainty_violations(d in 0.01f64..10.0, excess in 1.001f64..5.0, other in 0.01f64..10.0, slot in 0usize..2) {
        let bad = 2.0 * d * excess;
        let ok = other;
        let r = if slot == 0 {
            GaussianProbePair::new(d, ok, bad, ok)
        } else {
            GaussianProbePair::new(ok, d, ok, bad)
        };
        prop_assert!(r.is_err());
        prop_assert!(GaussianProbePair::new(d, d, 2.0 * d, 2.0 * d).is_ok());
    }

    #[test]
    fn density_transforms_to_mqc(p in probe(), u in pair(3.0), v in pair(2.0)) {
        let d = p.deltas();
        let k = p.kappas();
        let phi = [u[0] / d[0], u[1] / d[1]];
        let j = [v[0] * k[0], v[1] * k[1]];
        let direct = gaussian_mqc(&p, phi, j);
        let numeric = transform(&p, phi, j);
        prop_assert!((direct - numeric).norm() <= 1e-8, "{direct} vs {numeric}");
    }
}

#[test]
fn zero_order_is_the_average_of_plus_and_minus() {
    let (p, m, z) = (order_matrix(MeasurementOrder::Plus), order_matrix(MeasurementOrder::Minus), order_matrix(MeasurementOrder::Zero));
    for a in 0..2 {
        for b in 0..2 {
            assert_eq!(z[a][b], (p[a][b] + m[a][b]) / 2.0);
        }
    }
}
