use std::sync::Arc;

use lmlc::divergence::{divergence, PhiFunction};
use lmlc::estimate::{fit_shared, FitOptions, FitResult};
use lmlc::inference::{sequential_level, TestReport, TestKind};
use lmlc::model::{build_square_model, is_nested, LmlcSpec, ModelKind, SamplingScheme};
use lmlc::table::ContingencyTable;
use proptest::prelude::*;

fn square(kind: ModelKind) -> Arc<LmlcSpec> {
    Arc::new(build_square_model(kind, 4, SamplingScheme::multinomial(16)).unwrap())
}

fn table() -> impl Strategy<Value = ContingencyTable> {
    prop::collection::vec(1u64..=30, 16)
        .prop_map(|c| ContingencyTable::new(c, vec![4, 4]).unwrap())
}

fn lambda() -> impl Strategy<Value = f64> {
    prop::sample::select(vec![-0.5, 0.0, 2.0 / 3.0, 1.0, 2.0])
}

fn positive_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..8).prop_flat_map(|k| {
        (
            prop::collection::vec(0.01f64..50.0, k),
            prop::collection::vec(0.01f64..50.0, k),
        )
    })
}

fn fitted(spec: &Arc<LmlcSpec>, n: &ContingencyTable, phi: &PhiFunction) -> FitResult {
    let f = fit_shared(spec.clone(), n, phi, &FitOptions::default()).unwrap();
    assert!(f.converged, "{} did not converge: {:e}", spec.kind(), f.kkt_residual);
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn divergence_is_nonnegative((a, b) in positive_pair(), lambda in -1.0f64..3.0, zero in 0usize..8) {
        let mut a = a;
        let i = zero % a.len();
        a[i] = 0.0;
        let phi = PhiFunction::power(lambda);
        prop_assert!(divergence(&a, &b, &phi).unwrap() >= 0.0);
        prop_assert!(divergence(&b, &a, &phi).unwrap() >= 0.0);
    }

    #[test]
    fn divergence_vanishes_only_on_the_diagonal((a, b) in positive_pair(), lambda in -1.0f64..3.0) {
        let phi = PhiFunction::power(lambda);
        prop_assert_eq!(divergence(&a, &a, &phi).unwrap(), 0.0);
        if a != b {
            prop_assert!(divergence(&a, &b, &phi).unwrap() > 0.0);
        }
    }

    #[test]
    fn divergence_is_continuous_in_lambda((a, b) in positive_pair(), at in prop::sample::select(vec![0.0, -1.0, 1.0])) {
        let exact = divergence(&a, &b, &PhiFunction::power(at)).unwrap();
        for eps in [1e-6, -1e-6] {
            let near = divergence(&a, &b, &PhiFunction::power(at + eps)).unwrap();
            prop_assert!((near - exact).abs() <= 1e-4 * (1.0 + exact), "{} vs {}", near, exact);
        }
    }

    #[test]
    fn sequential_levels_compose_to_alpha(alpha in 0.001f64..0.5, models in 2usize..8) {
        let level = sequential_level(alpha, models).unwrap();
        let overall = 1.0 - (1.0 - level).powi(models as i32 - 1);
        prop_assert!((overall - alpha).abs() < 1e-12);
    }

    #[test]
    fn reports_reject_exactly_above_the_cut(stat in 0.0f64..30.0, df in 1usize..10) {
        let phi = PhiFunction::kullback();
        let r = TestReport::new(TestKind::GoodnessOfFit, stat, df, 0.05, &phi, &phi).unwrap();
        prop_assert_eq!(r.reject, stat > r.critical_value);
        prop_assert_eq!(r.reject, r.p_value < 0.05);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn marginal_homogeneity_fits_are_feasible_and_minimal(n in table(), lambda in lambda()) {
        let phi = PhiFunction::power(lambda);
        let mh = fitted(&square(ModelKind::MarginalHomogeneity), &n, &phi);
        let total = n.total() as f64;
        prop_assert!((mh.m_hat.sum() - total).abs() <= 1e-6 * total);
        for i in 0..4 {
            let row: f64 = (0..4).map(|j| mh.m_hat[4 * i + j]).sum();
            let col: f64 = (0..4).map(|j| mh.m_hat[4 * j + i]).sum();
            prop_assert!((row - col).abs() <= 1e-6 * total);
        }
        // Symmetric means are feasible for MH, so they cannot do better.
        let s = fitted(&square(ModelKind::Symmetry), &n, &phi);
        prop_assert!(mh.objective <= s.objective + 1e-9 * (1.0 + s.objective));
        // Nor can small feasible moves along a symmetric direction.
        let nv = n.to_vector();
        for (i, j) in [(0usize, 1usize), (1, 3), (2, 3)] {
            for eps in [1e-3, -1e-3] {
                let mut m = mh.m_hat.clone();
                m[4 * i + j] += eps;
                m[4 * j + i] += eps;
                m[4 * i + i] -= eps;
                m[4 * j + j] -= eps;
                let moved = divergence(nv.as_slice(), m.as_slice(), &phi).unwrap();
                prop_assert!(moved >= mh.objective - 1e-9 * (1.0 + mh.objective));
            }
        }
    }

    #[test]
    fn nested_fits_are_monotone(n in table(), lambda in lambda()) {
        let phi = PhiFunction::power(lambda);
        let objective = |kind| fitted(&square(kind), &n, &phi).objective;
        let s = objective(ModelKind::Symmetry);
        let oqs = objective(ModelKind::OrdinalQuasiSymmetry);
        let qs = objective(ModelKind::QuasiSymmetry);
        let sat = objective(ModelKind::Saturated);
        let tol = 1e-9 * (1.0 + s);
        prop_assert!(s >= oqs - tol && oqs >= qs - tol && qs >= sat - tol);
        prop_assert!(sat.abs() <= 1e-9);
    }

    #[test]
    fn kullback_decomposes_over_nested_fits(n in table()) {
        let phi = PhiFunction::kullback();
        let nv = n.to_vector();
        let outer = fitted(&square(ModelKind::OrdinalQuasiSymmetry), &n, &phi);
        let inner = fitted(&square(ModelKind::Symmetry), &n, &phi);
        let d = |a: &nalgebra::DVector<f64>, b: &nalgebra::DVector<f64>| {
            divergence(a.as_slice(), b.as_slice(), &phi).unwrap()
        };
        let gap = d(&nv, &inner.m_hat) - d(&nv, &outer.m_hat) - d(&outer.m_hat, &inner.m_hat);
        prop_assert!(gap.abs() <= 1e-8, "{}", gap);
    }
}

#[test]
fn builder_chain_is_nested() {
    use ModelKind::*;
    let chain = [Symmetry, OrdinalQuasiSymmetry, QuasiSymmetry, Saturated].map(square);
    for i in 0..chain.len() {
        for j in 0..chain.len() {
            assert_eq!(is_nested(&chain[i], &chain[j]).unwrap(), i < j, "{i} in {j}");
        }
    }
    let mh = square(MarginalHomogeneity);
    assert!(is_nested(&mh, &chain[3]).unwrap());
    assert!(!is_nested(&chain[3], &mh).unwrap());
}
