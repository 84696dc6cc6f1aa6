mod common;

use common::{filled, layout, oracle, rel_error, tolerance};
use fipgemm::{gemm, AccessCounters, BlockingParams, Layout, Matrix, Strategy};
use proptest::prelude::*;

fn params_for(mr: usize, nr: usize) -> BlockingParams {
    BlockingParams { m_r: mr, n_r: nr, m_c: 4 * mr, n_c: 3 * nr, k_c: 12, ..BlockingParams::GENERIC_SMALL }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn every_strategy_matches_reference(
        m in 1usize..90, n in 1usize..90, k in 1usize..70,
        a_col in any::<bool>(), b_col in any::<bool>(), c_col in any::<bool>(),
        pads in (0usize..20, 0usize..20, 0usize..20),
        shape in prop::sample::select(vec![(2usize, 2usize), (4, 4), (6, 8), (8, 4), (8, 8)]),
        roomy_l2 in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let mut p = params_for(shape.0, shape.1);
        p.l2_bytes = if roomy_l2 { 1 << 30 } else { 64 };
        let a = filled(m, k, layout(a_col), pads.0, seed);
        let b = filled(k, n, layout(b_col), pads.1, seed + 1);
        let c = filled(m, n, layout(c_col), pads.2, seed + 2);
        let want = oracle(&a, &b, &c);
        for s in Strategy::ALL {
            let mut got = c.clone();
            gemm(s, 1.0, &a.view(), &b.view(), 1.0, &mut got.view_mut(), &p, None).unwrap();
            prop_assert!(rel_error(&got, &want) <= tolerance(k), "{} {}x{}x{}", s, m, n, k);
        }
    }

    #[test]
    fn instrumented_runs_compute_the_same_result(
        m in 1usize..60, n in 1usize..60, k in 1usize..40, seed in 0u64..100,
    ) {
        let p = params_for(6, 8);
        let a = filled(m, k, Layout::ColMajor, 0, seed);
        let b = filled(k, n, Layout::ColMajor, 0, seed + 1);
        let c = filled(m, n, Layout::ColMajor, 0, seed + 2);
        for s in Strategy::ALL {
            let mut plain = c.clone();
            let mut counted = c.clone();
            let mut counters = AccessCounters::default();
            gemm(s, 1.0, &a.view(), &b.view(), 1.0, &mut plain.view_mut(), &p, None).unwrap();
            gemm(s, 1.0, &a.view(), &b.view(), 1.0, &mut counted.view_mut(), &p, Some(&mut counters)).unwrap();
            prop_assert_eq!(&plain, &counted);
            prop_assert_eq!(counters.invalid_packed_reads, 0);
        }
    }
}

#[test]
fn operands_may_be_submatrices_of_larger_storage() {
    let p = BlockingParams::GENERIC_LARGE;
    let big_a = filled(120, 90, Layout::ColMajor, 5, 1);
    let big_b = filled(90, 110, Layout::RowMajor, 3, 2);
    let a = big_a.view().submatrix(7, 11, 73, 41).unwrap();
    let b = big_b.view().submatrix(13, 5, 41, 67).unwrap();
    let c0 = filled(73, 67, Layout::ColMajor, 0, 3);
    let mut want = c0.clone();
    fipgemm::reference_gemm(&a, &b, &mut want.view_mut()).unwrap();
    for s in Strategy::ALL {
        let mut big_c = Matrix::zeros(100, 100, Layout::RowMajor, 100).unwrap();
        {
            let mut cv = big_c.view_mut();
            let mut sub = cv.submatrix_mut(20, 30, 73, 67).unwrap();
            for i in 0..73 {
                for j in 0..67 {
                    sub.set(i, j, c0.get(i, j));
                }
            }
            gemm(s, 1.0, &a, &b, 1.0, &mut sub, &p, None).unwrap();
        }
        let got = Matrix::from_fn(73, 67, Layout::ColMajor, 73, |i, j| big_c.get(20 + i, 30 + j)).unwrap();
        assert!(rel_error(&got, &want) <= tolerance(41), "{s}");
        // storage around the target block is untouched
        assert_eq!(big_c.get(19, 30), 0.0);
        assert_eq!(big_c.get(20, 97), 0.0);
        assert_eq!(big_c.get(93, 40), 0.0);
    }
}

#[test]
fn strategies_are_deterministic() {
    let p = BlockingParams::GENERIC_SMALL;
    let a = filled(150, 140, Layout::RowMajor, 2, 9);
    let b = filled(140, 170, Layout::ColMajor, 0, 10);
    for s in Strategy::ALL {
        let mut c1 = filled(150, 170, Layout::ColMajor, 0, 11);
        let mut c2 = c1.clone();
        gemm(s, 1.0, &a.view(), &b.view(), 1.0, &mut c1.view_mut(), &p, None).unwrap();
        gemm(s, 1.0, &a.view(), &b.view(), 1.0, &mut c2.view_mut(), &p, None).unwrap();
        assert_eq!(c1, c2, "{s}");
    }
}
