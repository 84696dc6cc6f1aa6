//! Five loops around the microkernel.
//!
//! ```text
//! 5th loop: jc over n in steps of n_c
//!   4th loop: pc over k in steps of k_c        (one "panel pass")
//!     3rd loop: ic over m in steps of m_c
//!       2nd loop: jr over n_c in steps of n_r
//!         1st loop: ir over m_c in steps of m_r -> microkernel
//! ```
//!
//! The last block of every loop takes the remainder. Fringe microtiles are
//! handled by the kernel's bounded lanes; no scratch tile of C is used.

use crate::error::{Error, Result};
use crate::instrument::{AccessCounters, CountingProbe, NoProbe, Operand, Probe};
use crate::kernel::{dispatch_shape, run_tile, CTile, MicrokernelVariant, OperandState, RawOperand};
use crate::matrix::{check_gemm_dims, MatrixView, MatrixViewMut, StrideLayout};
use crate::pack::{pack_lanes, PackedBlockA, PackedPanelB};
use crate::params::{decide_packing, BlockingParams, PackingDecision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Pack every A block and B panel before computing on it.
    Conventional,
    /// Never pack; compute from the caller's storage.
    Sup,
    /// Pack inside the first microkernel call that consumes each micropanel.
    Fip,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Conventional, Strategy::Sup, Strategy::Fip];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Conventional => "conv",
            Strategy::Sup => "sup",
            Strategy::Fip => "fip",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "conv" | "conventional" | "goto" => Ok(Strategy::Conventional),
            "sup" => Ok(Strategy::Sup),
            "fip" => Ok(Strategy::Fip),
            other => Err(format!("unknown strategy `{other}` (expected conv, sup or fip)")),
        }
    }
}

/// Kernel instance chosen for one call of the fused schedule, and which
/// unpacked operands are stored to their packed buffers in passing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FipStep {
    pub variant: MicrokernelVariant,
    pub fuse_a: bool,
    pub fuse_b: bool,
}

/// Variant for the microkernel call at the given position of one panel
/// pass.
///
/// * `i3_first`: first 3rd-loop block of the pass.
/// * `i2_first`: first B micropanel of the current block.
/// * `i1_first`: first A micropanel for the current B micropanel.
///
/// B micropanels are consumed unpacked (and packed) only by the first call
/// that touches them; A micropanels only during the first 2nd-loop
/// iteration of each block. An operand the decision leaves unpacked is read
/// in place on every call.
pub fn fip_variant_schedule(i3_first: bool, i2_first: bool, i1_first: bool, decision: PackingDecision) -> FipStep {
    let fuse_a = decision.pack_a && i2_first;
    let fuse_b = decision.pack_b && i3_first && i1_first;
    let a_unpacked = !decision.pack_a || fuse_a;
    let b_unpacked = !decision.pack_b || fuse_b;
    let state = |unpacked| if unpacked { OperandState::Unpacked } else { OperandState::Packed };
    FipStep { variant: MicrokernelVariant::new(state(a_unpacked), state(b_unpacked)), fuse_a, fuse_b }
}

pub(crate) fn blocks(total: usize, size: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..total).step_by(size.max(1)).map(move |start| (start, size.min(total - start)))
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct RawMat {
    pub ptr: *const f64,
    pub rs: usize,
    pub cs: usize,
}

impl RawMat {
    #[inline]
    pub(crate) unsafe fn at(&self, i: usize, j: usize) -> *const f64 {
        self.ptr.add(i * self.rs + j * self.cs)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct RawMatMut {
    pub ptr: *mut f64,
    pub rs: usize,
    pub cs: usize,
}

impl RawMatMut {
    #[inline]
    pub(crate) unsafe fn at(&self, i: usize, j: usize) -> *mut f64 {
        self.ptr.add(i * self.rs + j * self.cs)
    }
}

// Shared across workers that touch disjoint regions only.
unsafe impl Send for RawMat {}
unsafe impl Sync for RawMat {}
unsafe impl Send for RawMatMut {}
unsafe impl Sync for RawMatMut {}

/// Validated operands of one call, lowered to raw pointers.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Problem {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub a: RawMat,
    pub b: RawMat,
    pub c: RawMatMut,
    pub a_shape: StrideLayout,
    pub alpha: f64,
}

impl Problem {
    pub(crate) fn new(a: &MatrixView<'_>, b: &MatrixView<'_>, c: &mut MatrixViewMut<'_>, alpha: f64) -> Self {
        let (sa, sb, sc) = (*a.shape(), *b.shape(), *c.shape());
        Problem {
            m: sc.rows(),
            n: sc.cols(),
            k: sa.cols(),
            a: RawMat { ptr: a.as_ptr(), rs: sa.row_stride(), cs: sa.col_stride() },
            b: RawMat { ptr: b.as_ptr(), rs: sb.row_stride(), cs: sb.col_stride() },
            c: RawMatMut { ptr: c.as_mut_ptr(), rs: sc.row_stride(), cs: sc.col_stride() },
            a_shape: sa,
            alpha,
        }
    }

    /// A micropanel at `(i, p)` with `m_eff` rows, as a strided lane source.
    #[inline]
    pub(crate) unsafe fn a_lane(&self, i: usize, p: usize, m_eff: usize, dest: Option<*mut f64>) -> RawOperand {
        RawOperand::strided(self.a.at(i, p), self.a.rs, self.a.cs, m_eff, dest)
    }

    #[inline]
    pub(crate) unsafe fn b_lane(&self, p: usize, j: usize, n_eff: usize, dest: Option<*mut f64>) -> RawOperand {
        RawOperand::strided(self.b.at(p, j), self.b.cs, self.b.rs, n_eff, dest)
    }

    #[inline]
    pub(crate) unsafe fn c_tile(&self, i: usize, j: usize, m_eff: usize, n_eff: usize) -> CTile {
        CTile { ptr: self.c.at(i, j), rs: self.c.rs, cs: self.c.cs, m: m_eff, n: n_eff, alpha: self.alpha }
    }
}

/// Applies `beta` to C ahead of the loops, which only ever add to it.
pub(crate) fn apply_beta(beta: f64, c: &mut MatrixViewMut<'_>) {
    if beta == 1.0 {
        return;
    }
    if beta == 0.0 {
        // C need not hold finite values when beta is zero.
        for j in 0..c.cols() {
            for i in 0..c.rows() {
                c.set(i, j, 0.0);
            }
        }
    } else {
        c.scale(beta);
    }
}

/// Packed buffers for one call, sized to the problem, reused by every pass.
pub(crate) struct Workspace {
    pub a: PackedBlockA,
    pub b: PackedPanelB,
}

impl Workspace {
    pub(crate) fn new(pr: &Problem, params: &BlockingParams) -> Self {
        let k_cap = pr.k.min(params.k_c);
        Workspace {
            a: PackedBlockA::with_capacity(pr.m.min(params.m_c), k_cap, params.m_r, params.line_bytes),
            b: PackedPanelB::with_capacity(pr.n.min(params.n_c), k_cap, params.n_r, params.line_bytes),
        }
    }
}

/// `C := alpha * A * B + beta * C` with the requested strategy.
///
/// `counters`, when given, is overwritten with the access counts of this
/// call (instrumented run).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    strategy: Strategy,
    alpha: f64,
    a: &MatrixView<'_>,
    b: &MatrixView<'_>,
    beta: f64,
    c: &mut MatrixViewMut<'_>,
    params: &BlockingParams,
    counters: Option<&mut AccessCounters>,
) -> Result<()> {
    check_gemm_dims(a, b, c)?;
    params.validate()?;
    apply_beta(beta, c);
    let pr = Problem::new(a, b, c, alpha);
    let trivial = pr.m == 0 || pr.n == 0 || pr.k == 0 || alpha == 0.0;
    match counters {
        Some(out) => {
            let probe = CountingProbe::default();
            if !trivial {
                run(strategy, &pr, params, &probe)?;
            }
            *out = probe.counters();
        }
        None => {
            if !trivial {
                run(strategy, &pr, params, &NoProbe)?;
            }
        }
    }
    Ok(())
}

/// `C += A * B` without packing, one millikernel call per B micropanel.
pub fn sup_gemm_path(
    a: &MatrixView<'_>,
    b: &MatrixView<'_>,
    c: &mut MatrixViewMut<'_>,
    params: &BlockingParams,
) -> Result<()> {
    gemm(Strategy::Sup, 1.0, a, b, 1.0, c, params, None)
}

fn run<P: Probe>(strategy: Strategy, pr: &Problem, params: &BlockingParams, probe: &P) -> Result<()> {
    dispatch_shape!(
        params.m_r,
        params.n_r,
        |MR, NR| {
            // SAFETY: `pr` was built from validated, conformal views.
            unsafe {
                match strategy {
                    Strategy::Sup => sup_loops::<MR, NR, P>(pr, params, probe),
                    _ => {
                        let decision = match strategy {
                            Strategy::Fip => decide_packing(pr.m, pr.n, &pr.a_shape, params),
                            _ => PackingDecision::BOTH,
                        };
                        let mut ws = Workspace::new(pr, params);
                        goto_loops::<MR, NR, P>(strategy, pr, params, decision, &mut ws, probe)
                    }
                }
            }
            Ok(())
        },
        Err(Error::UnsupportedMicrotile { mr: params.m_r, nr: params.n_r })
    )
}

/// Loops 5..2 around [`millikernel`].
unsafe fn sup_loops<const MR: usize, const NR: usize, P: Probe>(pr: &Problem, params: &BlockingParams, probe: &P) {
    for (jc, nc_eff) in blocks(pr.n, params.n_c) {
        for (pc, kc_eff) in blocks(pr.k, params.k_c) {
            for (ic, mc_eff) in blocks(pr.m, params.m_c) {
                for (jr, n_eff) in blocks(nc_eff, NR) {
                    millikernel::<MR, NR, P>(pr, ic, pc, jc + jr, mc_eff, n_eff, kc_eff, probe);
                }
            }
        }
    }
}

/// The 1st loop folded into one call: every A micropanel of an `mc_eff`
/// block against one strided B micropanel. `n_eff < NR` selects the
/// bounded-width lane for B.
#[allow(clippy::too_many_arguments)]
#[inline(never)]
unsafe fn millikernel<const MR: usize, const NR: usize, P: Probe>(
    pr: &Problem,
    ic: usize,
    pc: usize,
    j: usize,
    mc_eff: usize,
    n_eff: usize,
    kc_eff: usize,
    probe: &P,
) {
    let b_op = pr.b_lane(pc, j, n_eff, None);
    for (ir, m_eff) in blocks(mc_eff, MR) {
        let a_op = pr.a_lane(ic + ir, pc, m_eff, None);
        run_tile::<MR, NR, P>(kc_eff, &a_op, &b_op, &pr.c_tile(ic + ir, j, m_eff, n_eff), probe);
    }
}

/// Conventional and fused loop nests. Conventional packs whole operands at
/// the 4th/3rd loops; Fip follows [`fip_variant_schedule`].
pub(crate) unsafe fn goto_loops<const MR: usize, const NR: usize, P: Probe>(
    strategy: Strategy,
    pr: &Problem,
    params: &BlockingParams,
    decision: PackingDecision,
    ws: &mut Workspace,
    probe: &P,
) {
    let conventional = strategy == Strategy::Conventional;
    for (jc, nc_eff) in blocks(pr.n, params.n_c) {
        for (pc, kc_eff) in blocks(pr.k, params.k_c) {
            ws.b.reset(nc_eff, kc_eff).expect("workspace sized for n_c x k_c");
            if conventional {
                for (q, (jr, n_eff)) in blocks(nc_eff, NR).enumerate() {
                    let reads = pack_lanes(pr.b.at(pc, jc + jr), pr.b.cs, pr.b.rs, n_eff, NR, kc_eff, ws.b.panel_ptr_mut(q));
                    probe.unpacked_read(Operand::B, reads);
                    probe.pack_write(Operand::B, (NR * kc_eff) as u64);
                    ws.b.mark_valid(q);
                }
            }
            for (blk, (ic, mc_eff)) in blocks(pr.m, params.m_c).enumerate() {
                ws.a.reset(mc_eff, kc_eff).expect("workspace sized for m_c x k_c");
                if conventional {
                    for (p, (ir, m_eff)) in blocks(mc_eff, MR).enumerate() {
                        let reads =
                            pack_lanes(pr.a.at(ic + ir, pc), pr.a.rs, pr.a.cs, m_eff, MR, kc_eff, ws.a.panel_ptr_mut(p));
                        probe.unpacked_read(Operand::A, reads);
                        probe.pack_write(Operand::A, (MR * kc_eff) as u64);
                        ws.a.mark_valid(p);
                    }
                    probe.rendezvous();
                }
                for (q, (jr, n_eff)) in blocks(nc_eff, NR).enumerate() {
                    for (p, (ir, m_eff)) in blocks(mc_eff, MR).enumerate() {
                        let step = if conventional {
                            FipStep { variant: MicrokernelVariant::PACKED_PACKED, fuse_a: false, fuse_b: false }
                        } else {
                            fip_variant_schedule(blk == 0, q == 0, p == 0, decision)
                        };
                        let a_op = match step.variant.a_state {
                            OperandState::Packed => {
                                if P::ENABLED && !ws.a.is_valid(p) {
                                    probe.invalid_read();
                                }
                                RawOperand::packed(ws.a.panel_ptr(p))
                            }
                            OperandState::Unpacked => {
                                let dest = step.fuse_a.then(|| ws.a.panel_ptr_mut(p));
                                pr.a_lane(ic + ir, pc, m_eff, dest)
                            }
                        };
                        let b_op = match step.variant.b_state {
                            OperandState::Packed => {
                                if P::ENABLED && !ws.b.is_valid(q) {
                                    probe.invalid_read();
                                }
                                RawOperand::packed(ws.b.panel_ptr(q))
                            }
                            OperandState::Unpacked => {
                                let dest = step.fuse_b.then(|| ws.b.panel_ptr_mut(q));
                                pr.b_lane(pc, jc + jr, n_eff, dest)
                            }
                        };
                        run_tile::<MR, NR, P>(kc_eff, &a_op, &b_op, &pr.c_tile(ic + ir, jc + jr, m_eff, n_eff), probe);
                        if step.fuse_a {
                            ws.a.mark_valid(p);
                        }
                        if step.fuse_b {
                            ws.b.mark_valid(q);
                        }
                    }
                    if q == 0 {
                        if !conventional {
                            probe.rendezvous();
                        }
                        probe.first_column_done(&ws.a);
                    }
                }
                probe.block_done(blk, &ws.b);
            }
            probe.pass_done(&ws.a, &ws.b);
        }
    }
}
