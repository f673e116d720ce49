//! Properties of the PSD projection and of feasibility certificates.

use coopreg::lmi::{project_psd, psd_check, solve_feasibility, AffineLMI, Sense, DEFAULT_MAX_ITER, DEFAULT_TOL};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn symmetric(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0..3.0f64, n * n).prop_map(move |v| {
        let a = DMatrix::from_vec(n, n, v);
        (&a + a.transpose()) * 0.5
    })
}

/// LMI in the entries of a symmetric `P` for `P > 0`, `-(A P + P A^T) > 0`.
fn lyapunov_problem(a: &DMatrix<f64>, margin: f64) -> AffineLMI {
    let n = a.nrows();
    let mut basis = Vec::new();
    for j in 0..n {
        for i in j..n {
            let mut e = DMatrix::zeros(n, n);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            basis.push(e);
        }
    }
    let mut lmi = AffineLMI::new(basis.len());
    let pos = basis.iter().cloned().enumerate().collect();
    let lyap = basis.iter().enumerate().map(|(k, e)| (k, -(a * e + e * a.transpose()))).collect();
    lmi.add_block(DMatrix::zeros(n, n), pos, Sense::PsdStrict(margin)).unwrap();
    lmi.add_block(DMatrix::zeros(n, n), lyap, Sense::PsdStrict(margin)).unwrap();
    lmi
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_is_idempotent(m in (1usize..6).prop_flat_map(symmetric), floor in -1.0..1.0f64) {
        let once = project_psd(&m, floor);
        let twice = project_psd(&once, floor);
        prop_assert!((&once - &twice).abs().max() <= 1e-12 * (1.0 + once.abs().max()));
        prop_assert!(psd_check(&once, floor - 1e-12));
    }

    #[test]
    fn projection_is_the_nearest_feasible_point(
        (m, r) in (1usize..6).prop_flat_map(|n| (symmetric(n), prop::collection::vec(-2.0..2.0f64, n * n))),
        floor in 0.0..1.0f64,
    ) {
        let n = m.nrows();
        let r = DMatrix::from_vec(n, n, r);
        let candidate = &r * r.transpose() + DMatrix::identity(n, n) * floor;
        let proj = project_psd(&m, floor);
        prop_assert!((&m - &proj).norm() <= (&m - &candidate).norm() + 1e-12);
    }

    #[test]
    fn feasible_certificates_satisfy_every_block(
        shift in 0.1..2.0f64,
        v in prop::collection::vec(-1.0..1.0f64, 9),
    ) {
        // Shift a random matrix left of the imaginary axis.
        let raw = DMatrix::from_vec(3, 3, v);
        let spread = raw.clone().complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        let a = raw - DMatrix::identity(3, 3) * (spread + shift);
        let margin = 1e-6;
        let problem = lyapunov_problem(&a, margin);
        let cert = solve_feasibility(&problem, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        prop_assert!(cert.is_feasible(), "{cert:?}");
        for block in problem.blocks() {
            prop_assert!(psd_check(&block.eval(&cert.z), margin - DEFAULT_TOL));
        }
        let again = solve_feasibility(&problem, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        prop_assert_eq!(cert, again);
    }
}
