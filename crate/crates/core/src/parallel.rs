//! Multithreaded fused packing over the 2nd loop.
//!
//! Every worker owns a contiguous range of B micropanels (and so a strip of
//! C columns) inside each `n_c` panel, plus a contiguous range of A
//! micropanels it is responsible for packing. During its first 2nd-loop
//! iteration on a block, a worker walks the A micropanels starting at its
//! own range, packing those while computing, and reading the rest in place.
//! All workers then meet at a single barrier, after which the whole packed
//! block is shared read-only.
//!
//! Two shared A buffers alternate between consecutive blocks. A worker can
//! only start writing block `b + 2` after the barrier of block `b + 1`,
//! which every worker reaches after it stopped reading block `b`.

use std::ops::Range;
use std::sync::Barrier;

use crate::driver::{apply_beta, blocks, fip_variant_schedule, Problem};
use crate::error::{Error, Result};
use crate::instrument::{AccessCounters, CountingProbe, NoProbe, Operand, Probe};
use crate::kernel::{dispatch_shape, run_tile, OperandState, RawOperand};
use crate::matrix::{check_gemm_dims, MatrixView, MatrixViewMut};
use crate::pack::{pack_lanes, PackedBlockA, PackedPanelB};
use crate::params::{decide_packing, BlockingParams, PackingDecision};

/// Environment variable read by [`threads_from_env`].
pub const THREADS_ENV: &str = "FIPGEMM_NUM_THREADS";

/// Worker count from [`THREADS_ENV`]; 1 when unset or empty.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::ThreadCount),
        },
        _ => Ok(1),
    }
}

/// Split of `panels` micropanels over `n_thr` workers. The first
/// `panels % n_thr` workers take one extra panel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadPlan {
    pub n_thr: usize,
    pub start_offsets: Vec<usize>,
    pub counts: Vec<usize>,
}

impl ThreadPlan {
    pub fn new(n_thr: usize, panels: usize) -> Result<Self> {
        if n_thr == 0 {
            return Err(Error::ThreadCount);
        }
        let (base, extra) = (panels / n_thr, panels % n_thr);
        let counts: Vec<usize> = (0..n_thr).map(|w| base + usize::from(w < extra)).collect();
        let start_offsets = counts
            .iter()
            .scan(0, |acc, &c| {
                let s = *acc;
                *acc += c;
                Some(s)
            })
            .collect();
        Ok(ThreadPlan { n_thr, start_offsets, counts })
    }

    pub fn range(&self, worker: usize) -> Range<usize> {
        let s = self.start_offsets[worker];
        s..s + self.counts[worker]
    }
}

fn share(n_thr: usize, panels: usize, worker: usize) -> Range<usize> {
    let (base, extra) = (panels / n_thr, panels % n_thr);
    let start = worker * base + worker.min(extra);
    start..start + base + usize::from(worker < extra)
}

/// `C += A * B` with `n_thr` workers.
pub fn parallel_gemm_fip(
    a: &MatrixView<'_>,
    b: &MatrixView<'_>,
    c: &mut MatrixViewMut<'_>,
    params: &BlockingParams,
    n_thr: usize,
) -> Result<()> {
    parallel_gemm(1.0, a, b, 1.0, c, params, n_thr, None)
}

/// [`parallel_gemm_fip`] with access counting, merged over workers.
/// `barrier_count` counts each rendezvous once.
pub fn parallel_gemm_fip_instrumented(
    a: &MatrixView<'_>,
    b: &MatrixView<'_>,
    c: &mut MatrixViewMut<'_>,
    params: &BlockingParams,
    n_thr: usize,
) -> Result<AccessCounters> {
    let mut counters = AccessCounters::default();
    parallel_gemm(1.0, a, b, 1.0, c, params, n_thr, Some(&mut counters))?;
    Ok(counters)
}

/// `C := alpha * A * B + beta * C` with `n_thr` workers.
#[allow(clippy::too_many_arguments)]
pub fn parallel_gemm(
    alpha: f64,
    a: &MatrixView<'_>,
    b: &MatrixView<'_>,
    beta: f64,
    c: &mut MatrixViewMut<'_>,
    params: &BlockingParams,
    n_thr: usize,
    counters: Option<&mut AccessCounters>,
) -> Result<()> {
    if n_thr == 0 {
        return Err(Error::ThreadCount);
    }
    check_gemm_dims(a, b, c)?;
    params.validate()?;
    apply_beta(beta, c);
    let pr = Problem::new(a, b, c, alpha);
    let trivial = pr.m == 0 || pr.n == 0 || pr.k == 0 || alpha == 0.0;
    match counters {
        Some(out) => {
            *out = AccessCounters::default();
            if !trivial {
                let probes = launch::<CountingProbe>(&pr, params, n_thr)?;
                for p in &probes {
                    out.merge(&p.counters());
                }
            }
        }
        None => {
            if !trivial {
                launch::<NoProbe>(&pr, params, n_thr)?;
            }
        }
    }
    Ok(())
}

fn launch<P: Probe + Default + Send>(pr: &Problem, params: &BlockingParams, n_thr: usize) -> Result<Vec<P>> {
    dispatch_shape!(
        params.m_r,
        params.n_r,
        |MR, NR| Ok(launch_shape::<MR, NR, P>(pr, params, n_thr)),
        Err(Error::UnsupportedMicrotile { mr: params.m_r, nr: params.n_r })
    )
}

fn launch_shape<const MR: usize, const NR: usize, P: Probe + Default + Send>(
    pr: &Problem,
    params: &BlockingParams,
    n_thr: usize,
) -> Vec<P> {
    let decision = decide_packing(pr.m, pr.n, &pr.a_shape, params);
    let (m_cap, n_cap, k_cap) = (pr.m.min(params.m_c), pr.n.min(params.n_c), pr.k.min(params.k_c));
    let shared = [
        PackedBlockA::with_capacity(m_cap, k_cap, MR, params.line_bytes),
        PackedBlockA::with_capacity(m_cap, k_cap, MR, params.line_bytes),
    ];
    // private B space covers the largest column range any worker can own
    let b_cap = n_cap.div_ceil(NR).div_ceil(n_thr) * NR;
    let barrier = Barrier::new(n_thr);
    let ctx = &Ctx { pr, params, decision, shared: &shared, barrier: &barrier, n_thr };
    std::thread::scope(|s| {
        let handles: Vec<_> = (1..n_thr)
            .map(|w| {
                s.spawn(move || {
                    let mut b_buf = PackedPanelB::with_capacity(b_cap, k_cap, NR, params.line_bytes);
                    let probe = P::default();
                    // SAFETY: workers touch disjoint C strips and disjoint
                    // pre-barrier ranges of the shared A buffers.
                    unsafe { worker::<MR, NR, P>(ctx, w, &mut b_buf, &probe) };
                    probe
                })
            })
            .collect();
        let mut b_buf = PackedPanelB::with_capacity(b_cap, k_cap, NR, params.line_bytes);
        let probe = P::default();
        unsafe { worker::<MR, NR, P>(ctx, 0, &mut b_buf, &probe) };
        let mut probes = vec![probe];
        probes.extend(handles.into_iter().map(|h| h.join().expect("gemm worker panicked")));
        probes
    })
}

struct Ctx<'a> {
    pr: &'a Problem,
    params: &'a BlockingParams,
    decision: PackingDecision,
    shared: &'a [PackedBlockA; 2],
    barrier: &'a Barrier,
    n_thr: usize,
}

unsafe fn worker<const MR: usize, const NR: usize, P: Probe>(
    ctx: &Ctx<'_>,
    w: usize,
    b_buf: &mut PackedPanelB,
    probe: &P,
) {
    let (pr, params, decision) = (ctx.pr, ctx.params, ctx.decision);
    let rendezvous = || {
        if w == 0 {
            probe.rendezvous();
        }
        if ctx.n_thr > 1 {
            ctx.barrier.wait();
        }
    };
    let mut seq = 0usize;
    for (jc, nc_eff) in blocks(pr.n, params.n_c) {
        let cols = share(ctx.n_thr, nc_eff.div_ceil(NR), w);
        let (j_lo, j_hi) = (cols.start * NR, nc_eff.min(cols.end * NR));
        for (pc, kc_eff) in blocks(pr.k, params.k_c) {
            if !cols.is_empty() {
                b_buf.reset(j_hi - j_lo, kc_eff).expect("private B space sized for the widest strip");
            }
            for (blk, (ic, mc_eff)) in blocks(pr.m, params.m_c).enumerate() {
                let a_buf = &ctx.shared[seq % 2];
                seq += 1;
                let p_total = mc_eff.div_ceil(MR);
                let own = share(ctx.n_thr, p_total, w);
                let a_panel = |p: usize| a_buf.shared_panel_ptr(p, kc_eff);
                if decision.pack_a {
                    for p in own.clone() {
                        a_buf.set_valid_shared(p, false);
                    }
                    if cols.is_empty() {
                        // no C columns to compute on; pack the share directly
                        for p in own.clone() {
                            let m_eff = MR.min(mc_eff - p * MR);
                            let reads = pack_lanes(pr.a.at(ic + p * MR, pc), pr.a.rs, pr.a.cs, m_eff, MR, kc_eff, a_panel(p));
                            probe.unpacked_read(Operand::A, reads);
                            probe.pack_write(Operand::A, (MR * kc_eff) as u64);
                            a_buf.set_valid_shared(p, true);
                        }
                    }
                }
                if cols.is_empty() {
                    rendezvous();
                    continue;
                }
                for q in cols.clone() {
                    let first = q == cols.start;
                    let jr = q * NR;
                    let n_eff = NR.min(nc_eff - jr);
                    let q_local = q - cols.start;
                    for t in 0..p_total {
                        let p = (own.start + t) % p_total;
                        let m_eff = MR.min(mc_eff - p * MR);
                        let step = fip_variant_schedule(blk == 0, first, t == 0, decision);
                        let fuse_a = step.fuse_a && own.contains(&p);
                        let a_op = match step.variant.a_state {
                            OperandState::Packed => {
                                if P::ENABLED && !a_buf.is_valid_shared(p) {
                                    probe.invalid_read();
                                }
                                RawOperand::packed(a_panel(p))
                            }
                            OperandState::Unpacked => pr.a_lane(ic + p * MR, pc, m_eff, fuse_a.then(|| a_panel(p))),
                        };
                        let b_op = match step.variant.b_state {
                            OperandState::Packed => {
                                if P::ENABLED && !b_buf.is_valid(q_local) {
                                    probe.invalid_read();
                                }
                                RawOperand::packed(b_buf.panel_ptr(q_local))
                            }
                            OperandState::Unpacked => {
                                let dest = step.fuse_b.then(|| b_buf.panel_ptr_mut(q_local));
                                pr.b_lane(pc, jc + jr, n_eff, dest)
                            }
                        };
                        let c = pr.c_tile(ic + p * MR, jc + jr, m_eff, n_eff);
                        run_tile::<MR, NR, P>(kc_eff, &a_op, &b_op, &c, probe);
                        if fuse_a {
                            a_buf.set_valid_shared(p, true);
                        }
                        if step.fuse_b {
                            b_buf.mark_valid(q_local);
                        }
                    }
                    if first {
                        rendezvous();
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{gemm, Strategy};
    use crate::matrix::{fill_deterministic, Layout, Matrix};

    fn random(rows: usize, cols: usize, layout: Layout, seed: u64) -> Matrix {
        let ld = if layout == Layout::ColMajor { rows } else { cols };
        let mut m = Matrix::zeros(rows, cols, layout, ld).unwrap();
        fill_deterministic(&mut m.view_mut(), seed);
        m
    }

    fn small() -> BlockingParams {
        BlockingParams { m_r: 6, n_r: 8, m_c: 48, n_c: 32, k_c: 16, l2_bytes: 64, ..BlockingParams::GENERIC_LARGE }
    }

    #[test]
    fn plan_remainder_first() {
        let p = ThreadPlan::new(4, 8).unwrap();
        assert_eq!(p.counts, vec![2, 2, 2, 2]);
        assert_eq!(p.start_offsets, vec![0, 2, 4, 6]);
        let p = ThreadPlan::new(3, 8).unwrap();
        assert_eq!(p.counts, vec![3, 3, 2]);
        assert_eq!(p.start_offsets, vec![0, 3, 6]);
        let p = ThreadPlan::new(4, 2).unwrap();
        assert_eq!(p.counts, vec![1, 1, 0, 0]);
        assert_eq!(p.range(3), 2..2);
        assert!(matches!(ThreadPlan::new(0, 4), Err(Error::ThreadCount)));
        for n_thr in 1..9 {
            for panels in 0..40 {
                let plan = ThreadPlan::new(n_thr, panels).unwrap();
                for w in 0..n_thr {
                    assert_eq!(plan.range(w), share(n_thr, panels, w));
                }
            }
        }
    }

    #[test]
    fn single_worker_matches_driver_exactly() {
        let p = small();
        let a = random(100, 37, Layout::ColMajor, 1);
        let b = random(37, 70, Layout::RowMajor, 2);
        let c0 = random(100, 70, Layout::ColMajor, 3);
        let mut c1 = c0.clone();
        let mut c2 = c0.clone();
        let mut seq = AccessCounters::default();
        gemm(Strategy::Fip, 1.0, &a.view(), &b.view(), 1.0, &mut c1.view_mut(), &p, Some(&mut seq)).unwrap();
        let par = parallel_gemm_fip_instrumented(&a.view(), &b.view(), &mut c2.view_mut(), &p, 1).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(seq, par);
    }

    #[test]
    fn workers_agree_and_sync_once_per_block() {
        let p = small();
        let (m, n, k) = (130, 75, 40);
        let a = random(m, k, Layout::ColMajor, 4);
        let b = random(k, n, Layout::ColMajor, 5);
        let mut reference = Matrix::zeros(m, n, Layout::ColMajor, m).unwrap();
        gemm(Strategy::Fip, 1.0, &a.view(), &b.view(), 1.0, &mut reference.view_mut(), &p, None).unwrap();
        let blocks = (m.div_ceil(p.m_c) * k.div_ceil(p.k_c) * n.div_ceil(p.n_c)) as u64;
        for n_thr in [1, 2, 3, 4, 7] {
            let mut c = Matrix::zeros(m, n, Layout::ColMajor, m).unwrap();
            let counters = parallel_gemm_fip_instrumented(&a.view(), &b.view(), &mut c.view_mut(), &p, n_thr).unwrap();
            assert_eq!(counters.barrier_count, blocks, "n_thr={n_thr}");
            assert_eq!(counters.invalid_packed_reads, 0);
            // each C element sees the same k-order of updates regardless of the split
            assert_eq!(c, reference, "n_thr={n_thr}");
        }
    }

    #[test]
    fn four_workers_pack_two_panels_each() {
        let p = small(); // m_c / m_r = 8
        let (m, n, k) = (48, 32, 16);
        let a = random(m, k, Layout::ColMajor, 6);
        let b = random(k, n, Layout::ColMajor, 7);
        let mut c = Matrix::zeros(m, n, Layout::ColMajor, m).unwrap();
        let counters = parallel_gemm_fip_instrumented(&a.view(), &b.view(), &mut c.view_mut(), &p, 4).unwrap();
        assert_eq!(counters.barrier_count, 1);
        // 8 panels packed once in total, 2 per worker
        assert_eq!(counters.a_pack_writes, (8 * 6 * k) as u64);
        // every worker reads the whole block in place during its first iteration
        assert_eq!(counters.a_unpacked_reads, (4 * m * k) as u64);
    }

    #[test]
    fn more_workers_than_panels() {
        let p = small();
        let a = random(7, 5, Layout::RowMajor, 8);
        let b = random(5, 9, Layout::ColMajor, 9);
        let mut r = Matrix::zeros(7, 9, Layout::ColMajor, 7).unwrap();
        gemm(Strategy::Fip, 1.0, &a.view(), &b.view(), 1.0, &mut r.view_mut(), &p, None).unwrap();
        for n_thr in [2, 5, 16] {
            let mut c = Matrix::zeros(7, 9, Layout::ColMajor, 7).unwrap();
            let counters = parallel_gemm_fip_instrumented(&a.view(), &b.view(), &mut c.view_mut(), &p, n_thr).unwrap();
            assert_eq!(c, r);
            assert_eq!(counters.barrier_count, 1);
            assert_eq!(counters.invalid_packed_reads, 0);
        }
    }

    #[test]
    fn rejects_zero_threads() {
        let a = random(2, 2, Layout::ColMajor, 1);
        let mut c = random(2, 2, Layout::ColMajor, 2);
        assert!(matches!(
            parallel_gemm_fip(&a.view(), &a.view(), &mut c.view_mut(), &small(), 0),
            Err(Error::ThreadCount)
        ));
    }
}
