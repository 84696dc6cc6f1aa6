//! The register-blocked microkernel.
//!
//! One template ([`tile`]) is monomorphised over how each operand is read
//! (packed micropanel or strided view) and whether the values it loads are
//! also stored to a packing destination. The four operand-state
//! combinations are exposed as separate entry points by
//! [`instantiate_variants`]; the choice of instance is made before the
//! `k` loop, never inside it.
//!
//! Every instance accumulates an `m_r x n_r` tile from zero with `l`
//! ascending and adds it to C once at the end, so all instances produce
//! bit-identical results for logically equal operands.

use crate::error::{Error, Result};
use crate::instrument::{NoProbe, Operand, Probe};
use crate::matrix::{MatrixView, MatrixViewMut};
use crate::pack::{PackedBlockA, PackedPanelB};

/// Microtile shapes `(m_r, n_r)` compiled into the library.
pub const INSTANTIATED_SHAPES: &[(usize, usize)] = &[(2, 2), (4, 4), (6, 8), (8, 4), (8, 8)];

pub fn is_instantiated(m_r: usize, n_r: usize) -> bool {
    INSTANTIATED_SHAPES.contains(&(m_r, n_r))
}

/// Expands `$body` with `$MR`/`$NR` bound as constants for the runtime shape,
/// or evaluates `$fallback` when no instance exists.
macro_rules! dispatch_shape {
    ($mr:expr, $nr:expr, |$MR:ident, $NR:ident| $body:expr, $fallback:expr) => {
        match ($mr, $nr) {
            (2, 2) => {
                const $MR: usize = 2;
                const $NR: usize = 2;
                $body
            }
            (4, 4) => {
                const $MR: usize = 4;
                const $NR: usize = 4;
                $body
            }
            (6, 8) => {
                const $MR: usize = 6;
                const $NR: usize = 8;
                $body
            }
            (8, 4) => {
                const $MR: usize = 8;
                const $NR: usize = 4;
                $body
            }
            (8, 8) => {
                const $MR: usize = 8;
                const $NR: usize = 8;
                $body
            }
            _ => $fallback,
        }
    };
}
pub(crate) use dispatch_shape;

// ---------------------------------------------------------------------------
// Template
// ---------------------------------------------------------------------------

/// Source of one `R`-wide lane per step `l`.
pub(crate) trait Lane<const R: usize> {
    /// Lane `l`; positions past the valid extent read as zero.
    unsafe fn load(&self, l: usize) -> [f64; R];
}

/// Destination for the lanes of a micropanel being packed in passing.
pub(crate) trait Sink<const R: usize> {
    unsafe fn store(&mut self, l: usize, lane: &[f64; R]);
}

pub(crate) struct PackedLane<'p, P> {
    ptr: *const f64,
    op: Operand,
    probe: &'p P,
}

impl<const R: usize, P: Probe> Lane<R> for PackedLane<'_, P> {
    #[inline(always)]
    unsafe fn load(&self, l: usize) -> [f64; R] {
        if P::ENABLED {
            self.probe.packed_read(self.op, R as u64);
        }
        std::ptr::read(self.ptr.add(l * R) as *const [f64; R])
    }
}

/// Strided lane; `FULL` means `len == R` and skips the bound checks.
pub(crate) struct StridedLane<'p, P, const FULL: bool> {
    ptr: *const f64,
    inner: usize,
    step: usize,
    len: usize,
    op: Operand,
    probe: &'p P,
}

impl<const R: usize, P: Probe, const FULL: bool> Lane<R> for StridedLane<'_, P, FULL> {
    #[inline(always)]
    unsafe fn load(&self, l: usize) -> [f64; R] {
        if P::ENABLED {
            self.probe.unpacked_read(self.op, if FULL { R } else { self.len } as u64);
        }
        let base = self.ptr.add(l * self.step);
        if FULL {
            std::array::from_fn(|i| *base.add(i * self.inner))
        } else {
            std::array::from_fn(|i| if i < self.len { *base.add(i * self.inner) } else { 0.0 })
        }
    }
}

/// Full-width lane whose `R` values are adjacent in memory.
pub(crate) struct ContigLane<'p, P> {
    ptr: *const f64,
    step: usize,
    op: Operand,
    probe: &'p P,
}

impl<const R: usize, P: Probe> Lane<R> for ContigLane<'_, P> {
    #[inline(always)]
    unsafe fn load(&self, l: usize) -> [f64; R] {
        if P::ENABLED {
            self.probe.unpacked_read(self.op, R as u64);
        }
        std::ptr::read_unaligned(self.ptr.add(l * self.step) as *const [f64; R])
    }
}

pub(crate) struct NoSink;

impl<const R: usize> Sink<R> for NoSink {
    #[inline(always)]
    unsafe fn store(&mut self, _l: usize, _lane: &[f64; R]) {}
}

pub(crate) struct PanelSink<'p, P> {
    ptr: *mut f64,
    op: Operand,
    probe: &'p P,
}

impl<const R: usize, P: Probe> Sink<R> for PanelSink<'_, P> {
    #[inline(always)]
    unsafe fn store(&mut self, l: usize, lane: &[f64; R]) {
        if P::ENABLED {
            self.probe.pack_write(self.op, R as u64);
        }
        std::ptr::write(self.ptr.add(l * R) as *mut [f64; R], *lane);
    }
}

/// Destination microtile of C.
#[derive(Clone, Copy)]
pub(crate) struct CTile {
    pub ptr: *mut f64,
    pub rs: usize,
    pub cs: usize,
    pub m: usize,
    pub n: usize,
    pub alpha: f64,
}

#[inline(always)]
unsafe fn tile<const MR: usize, const NR: usize, A, B, SA, SB>(
    k: usize,
    a: &A,
    b: &B,
    sa: &mut SA,
    sb: &mut SB,
    c: &CTile,
) where
    A: Lane<MR>,
    B: Lane<NR>,
    SA: Sink<MR>,
    SB: Sink<NR>,
{
    let mut acc = [[0.0f64; NR]; MR];
    for l in 0..k {
        let av = a.load(l);
        let bv = b.load(l);
        sa.store(l, &av);
        sb.store(l, &bv);
        for i in 0..MR {
            for j in 0..NR {
                acc[i][j] += av[i] * bv[j];
            }
        }
    }
    for i in 0..c.m {
        for j in 0..c.n {
            let dst = c.ptr.add(i * c.rs + j * c.cs);
            *dst += c.alpha * acc[i][j];
        }
    }
}

// ---------------------------------------------------------------------------
// Raw operand description and dispatch
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub(crate) enum RawSource {
    /// Zero-padded micropanel in `pack` layout.
    Packed(*const f64),
    /// Lane `l`, position `i` at `ptr + i * inner + l * step`, valid for `i < len`.
    Strided { ptr: *const f64, inner: usize, step: usize, len: usize },
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct RawOperand {
    pub src: RawSource,
    /// Packing destination, only with a strided source.
    pub dest: Option<*mut f64>,
}

impl RawOperand {
    pub(crate) fn packed(ptr: *const f64) -> Self {
        RawOperand { src: RawSource::Packed(ptr), dest: None }
    }

    pub(crate) fn strided(ptr: *const f64, inner: usize, step: usize, len: usize, dest: Option<*mut f64>) -> Self {
        RawOperand { src: RawSource::Strided { ptr, inner, step, len }, dest }
    }
}

/// Receives the lane and sink chosen for one operand.
trait LaneVisitor<const R: usize> {
    unsafe fn visit<L: Lane<R>, S: Sink<R>>(self, lane: &L, sink: S);
}

/// Picks the lane and sink types for `src`/`dest` once, outside the `k`
/// loop, and hands them to `v`.
#[inline(always)]
unsafe fn dispatch_lane<const R: usize, P: Probe, V: LaneVisitor<R>>(operand: &RawOperand, op: Operand, probe: &P, v: V) {
    match operand.src {
        RawSource::Packed(ptr) => v.visit(&PackedLane { ptr, op, probe }, NoSink),
        RawSource::Strided { ptr, inner, step, len } => {
            let sink = operand.dest.map(|d| PanelSink { ptr: d, op, probe });
            if len == R && inner == 1 {
                let lane = ContigLane { ptr, step, op, probe };
                match sink {
                    Some(s) => v.visit(&lane, s),
                    None => v.visit(&lane, NoSink),
                }
            } else if len == R {
                let lane = StridedLane::<P, true> { ptr, inner, step, len, op, probe };
                match sink {
                    Some(s) => v.visit(&lane, s),
                    None => v.visit(&lane, NoSink),
                }
            } else {
                let lane = StridedLane::<P, false> { ptr, inner, step, len, op, probe };
                match sink {
                    Some(s) => v.visit(&lane, s),
                    None => v.visit(&lane, NoSink),
                }
            }
        }
    }
}

struct WithA<'r, const NR: usize, P> {
    k: usize,
    b: &'r RawOperand,
    c: &'r CTile,
    probe: &'r P,
}

impl<const MR: usize, const NR: usize, P: Probe> LaneVisitor<MR> for WithA<'_, NR, P> {
    #[inline(always)]
    unsafe fn visit<L: Lane<MR>, S: Sink<MR>>(self, lane: &L, sink: S) {
        dispatch_lane::<NR, P, _>(self.b, Operand::B, self.probe, WithB::<MR, L, S> { k: self.k, a: lane, sa: sink, c: self.c });
    }
}

struct WithB<'r, const MR: usize, A, SA> {
    k: usize,
    a: &'r A,
    sa: SA,
    c: &'r CTile,
}

impl<const MR: usize, const NR: usize, A: Lane<MR>, SA: Sink<MR>> LaneVisitor<NR> for WithB<'_, MR, A, SA> {
    #[inline(always)]
    unsafe fn visit<L: Lane<NR>, S: Sink<NR>>(mut self, lane: &L, mut sink: S) {
        tile::<MR, NR, _, _, _, _>(self.k, self.a, lane, &mut self.sa, &mut sink, self.c);
    }
}

/// Runs one microtile update, selecting the template instance outside the
/// `k` loop.
///
/// # Safety
/// Every pointer in `a`, `b`, `c` must be valid for the extents it
/// describes over depth `k`; destinations must not alias sources or C.
#[inline]
pub(crate) unsafe fn run_tile<const MR: usize, const NR: usize, P: Probe>(
    k: usize,
    a: &RawOperand,
    b: &RawOperand,
    c: &CTile,
    probe: &P,
) {
    dispatch_lane::<MR, P, _>(a, Operand::A, probe, WithA::<NR, P> { k, b, c, probe });
}

// ---------------------------------------------------------------------------
// Public surface
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OperandState {
    Packed,
    Unpacked,
}

/// Which operands arrive packed for one microkernel call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MicrokernelVariant {
    pub a_state: OperandState,
    pub b_state: OperandState,
}

impl MicrokernelVariant {
    pub const PACKED_PACKED: Self = Self::new(OperandState::Packed, OperandState::Packed);
    pub const PACKED_UNPACKED: Self = Self::new(OperandState::Packed, OperandState::Unpacked);
    pub const UNPACKED_PACKED: Self = Self::new(OperandState::Unpacked, OperandState::Packed);
    pub const UNPACKED_UNPACKED: Self = Self::new(OperandState::Unpacked, OperandState::Unpacked);
    pub const ALL: [Self; 4] = [Self::PACKED_PACKED, Self::PACKED_UNPACKED, Self::UNPACKED_PACKED, Self::UNPACKED_UNPACKED];

    pub const fn new(a_state: OperandState, b_state: OperandState) -> Self {
        MicrokernelVariant { a_state, b_state }
    }
}

/// Where an unpacked operand's micropanel is written while it is consumed.
#[derive(Debug)]
pub enum PackDest<'a> {
    Slice(&'a mut [f64]),
    /// Panel `p` of a packed A block; its valid flag is set afterwards.
    APanel(&'a mut PackedBlockA, usize),
    BPanel(&'a mut PackedPanelB, usize),
}

impl PackDest<'_> {
    fn target(&mut self) -> &mut [f64] {
        match self {
            PackDest::Slice(s) => s,
            PackDest::APanel(block, p) => block.panel_mut(*p),
            PackDest::BPanel(panel, q) => panel.panel_mut(*q),
        }
    }

    fn finish(&self) {
        match self {
            PackDest::Slice(_) => {}
            PackDest::APanel(block, p) => block.mark_valid(*p),
            PackDest::BPanel(panel, q) => panel.mark_valid(*q),
        }
    }
}

/// One microkernel operand.
#[derive(Debug)]
pub enum OperandSource<'a> {
    /// Micropanel already in `pack` layout (`r * k` elements).
    Packed(&'a [f64]),
    /// Micropanel-shaped view of the caller's matrix, optionally packed in
    /// passing.
    Unpacked { view: MatrixView<'a>, pack_dest: Option<PackDest<'a>> },
}

impl OperandSource<'_> {
    pub fn state(&self) -> OperandState {
        match self {
            OperandSource::Packed(_) => OperandState::Packed,
            OperandSource::Unpacked { .. } => OperandState::Unpacked,
        }
    }
}

pub type KernelFn = fn(&mut OperandSource<'_>, &mut OperandSource<'_>, &mut MatrixViewMut<'_>, usize) -> Result<()>;

/// The four entry points of one microtile shape.
#[derive(Clone, Copy)]
pub struct VariantSet {
    pub packed_packed: KernelFn,
    pub packed_unpacked: KernelFn,
    pub unpacked_packed: KernelFn,
    pub unpacked_unpacked: KernelFn,
}

impl VariantSet {
    pub fn get(&self, variant: MicrokernelVariant) -> KernelFn {
        use OperandState::*;
        match (variant.a_state, variant.b_state) {
            (Packed, Packed) => self.packed_packed,
            (Packed, Unpacked) => self.packed_unpacked,
            (Unpacked, Packed) => self.unpacked_packed,
            (Unpacked, Unpacked) => self.unpacked_unpacked,
        }
    }
}

pub fn instantiate_variants<const MR: usize, const NR: usize>() -> VariantSet {
    VariantSet {
        packed_packed: variant_entry::<MR, NR, false, false>,
        packed_unpacked: variant_entry::<MR, NR, false, true>,
        unpacked_packed: variant_entry::<MR, NR, true, false>,
        unpacked_unpacked: variant_entry::<MR, NR, true, true>,
    }
}

fn state_of(unpacked: bool) -> OperandState {
    if unpacked {
        OperandState::Unpacked
    } else {
        OperandState::Packed
    }
}

/// Validates one operand and lowers it. `along` is the extent across a lane
/// (`m_eff` for A, `n_eff` for B).
fn lower(src: &mut OperandSource<'_>, r: usize, along: usize, k: usize, is_a: bool) -> Result<RawOperand> {
    let name = if is_a { "A" } else { "B" };
    match src {
        OperandSource::Packed(data) => {
            if data.len() < r * k {
                return Err(Error::SizeViolation(format!(
                    "packed {name} micropanel holds {} elements, need {}",
                    data.len(),
                    r * k
                )));
            }
            Ok(RawOperand::packed(data.as_ptr()))
        }
        OperandSource::Unpacked { view, pack_dest } => {
            let (lane_extent, depth) = if is_a { (view.rows(), view.cols()) } else { (view.cols(), view.rows()) };
            if lane_extent != along || depth != k {
                return Err(Error::SizeViolation(format!(
                    "unpacked {name} is {}x{}, expected {}",
                    view.rows(),
                    view.cols(),
                    if is_a { format!("{along}x{k}") } else { format!("{k}x{along}") }
                )));
            }
            let shape = *view.shape();
            let (inner, step) =
                if is_a { (shape.row_stride(), shape.col_stride()) } else { (shape.col_stride(), shape.row_stride()) };
            let dest = match pack_dest {
                Some(d) => {
                    let t = d.target();
                    if t.len() != r * k {
                        return Err(Error::SizeViolation(format!(
                            "{name} pack destination holds {} elements, need {}",
                            t.len(),
                            r * k
                        )));
                    }
                    Some(t.as_mut_ptr())
                }
                None => None,
            };
            Ok(RawOperand::strided(view.data().as_ptr(), inner, step, along, dest))
        }
    }
}

fn variant_entry<const MR: usize, const NR: usize, const A_UNPACKED: bool, const B_UNPACKED: bool>(
    a: &mut OperandSource<'_>,
    b: &mut OperandSource<'_>,
    c: &mut MatrixViewMut<'_>,
    k: usize,
) -> Result<()> {
    let want = MicrokernelVariant::new(state_of(A_UNPACKED), state_of(B_UNPACKED));
    let got = MicrokernelVariant::new(a.state(), b.state());
    if want != got {
        return Err(Error::VariantMismatch(format!("instance {want:?} called with {got:?}")));
    }
    let (m_eff, n_eff) = (c.rows(), c.cols());
    if m_eff > MR || n_eff > NR {
        return Err(Error::SizeViolation(format!("microtile {m_eff}x{n_eff} exceeds {MR}x{NR}")));
    }
    let ra = lower(a, MR, m_eff, k, true)?;
    let rb = lower(b, NR, n_eff, k, false)?;
    let shape = *c.shape();
    let tile = CTile { ptr: c.as_mut_ptr(), rs: shape.row_stride(), cs: shape.col_stride(), m: m_eff, n: n_eff, alpha: 1.0 };
    // SAFETY: all extents validated above against the views and slices.
    unsafe { run_tile::<MR, NR, NoProbe>(k, &ra, &rb, &tile, &NoProbe) };
    if let OperandSource::Unpacked { pack_dest: Some(d), .. } = a {
        d.finish();
    }
    if let OperandSource::Unpacked { pack_dest: Some(d), .. } = b {
        d.finish();
    }
    Ok(())
}

/// Runtime handle on the instances of one microtile shape.
#[derive(Clone, Copy)]
pub struct Microkernel {
    m_r: usize,
    n_r: usize,
    variants: VariantSet,
}

impl std::fmt::Debug for Microkernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Microkernel({}x{})", self.m_r, self.n_r)
    }
}

impl Microkernel {
    pub fn new(m_r: usize, n_r: usize) -> Result<Self> {
        let variants = dispatch_shape!(
            m_r,
            n_r,
            |MR, NR| instantiate_variants::<MR, NR>(),
            return Err(Error::UnsupportedMicrotile { mr: m_r, nr: n_r })
        );
        Ok(Microkernel { m_r, n_r, variants })
    }

    pub fn m_r(&self) -> usize {
        self.m_r
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn variants(&self) -> &VariantSet {
        &self.variants
    }

    /// `c_tile += a * b` over depth `k`, packing unpacked operands that carry
    /// a destination.
    pub fn run(
        &self,
        variant: MicrokernelVariant,
        a: &mut OperandSource<'_>,
        b: &mut OperandSource<'_>,
        c_tile: &mut MatrixViewMut<'_>,
        k: usize,
    ) -> Result<()> {
        (self.variants.get(variant))(a, b, c_tile, k)
    }
}
