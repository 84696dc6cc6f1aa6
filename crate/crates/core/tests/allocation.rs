//! Kept in its own binary: the allocation counter is process-wide.

mod common;

use common::filled;
use fipgemm::pack::buffer_allocations;
use fipgemm::{gemm, parallel_gemm_fip, BlockingParams, Layout, Strategy};

#[test]
fn packed_buffers_are_allocated_once_per_call() {
    // several blocks and passes in every dimension
    let p = BlockingParams { m_c: 24, n_c: 32, k_c: 16, ..BlockingParams::GENERIC_LARGE };
    let a = filled(100, 70, Layout::ColMajor, 0, 1);
    let b = filled(70, 90, Layout::ColMajor, 0, 2);
    let mut c = filled(100, 90, Layout::ColMajor, 0, 3);
    for (s, expected) in [(Strategy::Conventional, 2), (Strategy::Fip, 2), (Strategy::Sup, 0)] {
        let before = buffer_allocations();
        gemm(s, 1.0, &a.view(), &b.view(), 1.0, &mut c.view_mut(), &p, None).unwrap();
        assert_eq!(buffer_allocations() - before, expected, "{s}");
    }
    for n_thr in [1, 3] {
        let before = buffer_allocations();
        parallel_gemm_fip(&a.view(), &b.view(), &mut c.view_mut(), &p, n_thr).unwrap();
        // two alternating shared A blocks plus one private B panel per worker
        assert_eq!(buffer_allocations() - before, 2 + n_thr as u64);
    }
}
