mod common;

use common::{filled, layout, oracle, rel_error, tolerance};
use fipgemm::{
    gemm, parallel_gemm, parallel_gemm_fip, parallel_gemm_fip_instrumented, threads_from_env, AccessCounters,
    BlockingParams, Error, Layout, Strategy, THREADS_ENV,
};
use proptest::prelude::*;

fn params() -> BlockingParams {
    BlockingParams { m_c: 24, n_c: 24, k_c: 16, ..BlockingParams::GENERIC_LARGE }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parallel_matches_reference_and_sequential(
        m in 1usize..80, n in 1usize..80, k in 1usize..50,
        n_thr in 1usize..6,
        a_col in any::<bool>(), b_col in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let p = params();
        let a = filled(m, k, layout(a_col), 3, seed);
        let b = filled(k, n, layout(b_col), 0, seed + 1);
        let c = filled(m, n, Layout::ColMajor, 1, seed + 2);
        let want = oracle(&a, &b, &c);
        let mut seq = c.clone();
        gemm(Strategy::Fip, 1.0, &a.view(), &b.view(), 1.0, &mut seq.view_mut(), &p, None).unwrap();
        let mut par = c.clone();
        let counters = parallel_gemm_fip_instrumented(&a.view(), &b.view(), &mut par.view_mut(), &p, n_thr).unwrap();
        prop_assert!(rel_error(&par, &want) <= tolerance(k));
        // disjoint C strips: same per-element arithmetic as one worker
        prop_assert_eq!(&par, &seq);
        let blocks = m.div_ceil(p.m_c) * k.div_ceil(p.k_c) * n.div_ceil(p.n_c);
        prop_assert_eq!(counters.barrier_count, blocks as u64);
        prop_assert_eq!(counters.invalid_packed_reads, 0);
    }
}

#[test]
fn alpha_and_beta() {
    let p = params();
    let a = filled(30, 20, Layout::ColMajor, 0, 1);
    let b = filled(20, 40, Layout::RowMajor, 0, 2);
    let c = filled(30, 40, Layout::ColMajor, 0, 3);
    let mut want = c.clone();
    gemm(Strategy::Fip, -1.5, &a.view(), &b.view(), 0.25, &mut want.view_mut(), &p, None).unwrap();
    let mut got = c.clone();
    parallel_gemm(-1.5, &a.view(), &b.view(), 0.25, &mut got.view_mut(), &p, 3, None).unwrap();
    assert_eq!(got, want);
}

#[test]
fn single_worker_counters_equal_sequential() {
    let p = params();
    let a = filled(70, 33, Layout::RowMajor, 0, 1);
    let b = filled(33, 50, Layout::ColMajor, 0, 2);
    let mut c1 = filled(70, 50, Layout::ColMajor, 0, 3);
    let mut c2 = c1.clone();
    let mut seq = AccessCounters::default();
    gemm(Strategy::Fip, 1.0, &a.view(), &b.view(), 1.0, &mut c1.view_mut(), &p, Some(&mut seq)).unwrap();
    let par = parallel_gemm_fip_instrumented(&a.view(), &b.view(), &mut c2.view_mut(), &p, 1).unwrap();
    assert_eq!(seq, par);
    assert_eq!(c1, c2);
}

#[test]
fn errors() {
    let p = params();
    let a = filled(4, 3, Layout::ColMajor, 0, 1);
    let b = filled(2, 5, Layout::ColMajor, 0, 2);
    let mut c = filled(4, 5, Layout::ColMajor, 0, 3);
    assert!(matches!(
        parallel_gemm_fip(&a.view(), &b.view(), &mut c.view_mut(), &p, 2),
        Err(Error::DimensionMismatch(_))
    ));
    assert!(matches!(parallel_gemm_fip(&a.view(), &a.view(), &mut c.view_mut(), &p, 0), Err(Error::ThreadCount)));
}

#[test]
fn thread_count_from_environment() {
    // the only test in this binary touching the variable
    std::env::remove_var(THREADS_ENV);
    assert_eq!(threads_from_env().unwrap(), 1);
    std::env::set_var(THREADS_ENV, "4");
    assert_eq!(threads_from_env().unwrap(), 4);
    std::env::set_var(THREADS_ENV, "0");
    assert!(threads_from_env().is_err());
    std::env::set_var(THREADS_ENV, "many");
    assert!(threads_from_env().is_err());
    std::env::remove_var(THREADS_ENV);
}
