//! Packed operand buffers and the standalone packing routines.
//!
//! An A micropanel stores element `(i, l)` of an `m_r x k` slice at
//! `l * m_r + i`; a B micropanel stores element `(l, j)` of a `k x n_r` slice
//! at `l * n_r + j`. Both are "one lane of `r` values per step `l`", which is
//! how the code below treats them. Rows (A) or columns (B) past the fringe
//! are written as zeros.

use std::alloc::{self, Layout as AllocLayout};
use std::ptr::NonNull;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::matrix::MatrixView;
use crate::params::BlockingParams;

static BUFFER_ALLOCATIONS: AtomicU64 = AtomicU64::new(0);

/// Number of packed buffers allocated by this process so far.
pub fn buffer_allocations() -> u64 {
    BUFFER_ALLOCATIONS.load(Ordering::Relaxed)
}

/// Zero-initialised `f64` storage aligned to a cache line.
pub(crate) struct AlignedBuf {
    ptr: NonNull<f64>,
    len: usize,
    align: usize,
}

// The buffer is plain memory; synchronisation is the owner's concern.
unsafe impl Send for AlignedBuf {}
unsafe impl Sync for AlignedBuf {}

impl AlignedBuf {
    pub(crate) fn zeroed(len: usize, align: usize) -> Self {
        let align = align.max(std::mem::align_of::<f64>());
        BUFFER_ALLOCATIONS.fetch_add(1, Ordering::Relaxed);
        if len == 0 {
            return AlignedBuf { ptr: NonNull::dangling(), len, align };
        }
        let layout = AllocLayout::from_size_align(len * std::mem::size_of::<f64>(), align)
            .expect("packed buffer layout overflow");
        // SAFETY: layout has non-zero size.
        let raw = unsafe { alloc::alloc_zeroed(layout) } as *mut f64;
        let ptr = NonNull::new(raw).unwrap_or_else(|| alloc::handle_alloc_error(layout));
        AlignedBuf { ptr, len, align }
    }

    pub(crate) fn len(&self) -> usize {
        self.len
    }

    pub(crate) fn as_slice(&self) -> &[f64] {
        // SAFETY: ptr is valid for len initialised elements.
        unsafe { std::slice::from_raw_parts(self.ptr.as_ptr(), self.len) }
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        // SAFETY: unique borrow of the whole allocation.
        unsafe { std::slice::from_raw_parts_mut(self.ptr.as_ptr(), self.len) }
    }

    /// Raw pointer usable for writes through a shared handle. Callers must
    /// guarantee that concurrent writers touch disjoint ranges and that no
    /// slice borrowed from this buffer is alive meanwhile.
    pub(crate) fn raw(&self) -> *mut f64 {
        self.ptr.as_ptr()
    }

    pub(crate) fn alignment(&self) -> usize {
        self.align
    }
}

impl Drop for AlignedBuf {
    fn drop(&mut self) {
        if self.len != 0 {
            let layout = AllocLayout::from_size_align(self.len * std::mem::size_of::<f64>(), self.align).unwrap();
            // SAFETY: allocated in `zeroed` with this layout.
            unsafe { alloc::dealloc(self.ptr.as_ptr() as *mut u8, layout) }
        }
    }
}

/// Copies `k` lanes of `len <= r` strided values into `dest`, lane `l` at
/// `dest[l * r..]`, zero-filling positions `len..r`. Returns the number of
/// source elements read.
///
/// # Safety
/// `src` must be readable at `i * inner + l * step` for `i < len`, `l < k`,
/// and `dest` writable for `r * k` elements.
pub(crate) unsafe fn pack_lanes(
    src: *const f64,
    inner: usize,
    step: usize,
    len: usize,
    r: usize,
    k: usize,
    dest: *mut f64,
) -> u64 {
    debug_assert!(len <= r);
    if inner == 1 {
        for l in 0..k {
            let s = src.add(l * step);
            let d = dest.add(l * r);
            std::ptr::copy_nonoverlapping(s, d, len);
            for i in len..r {
                *d.add(i) = 0.0;
            }
        }
    } else {
        for l in 0..k {
            let s = src.add(l * step);
            let d = dest.add(l * r);
            for i in 0..len {
                *d.add(i) = *s.add(i * inner);
            }
            for i in len..r {
                *d.add(i) = 0.0;
            }
        }
    }
    (len * k) as u64
}

/// Panels of `r`-wide lanes over a shared depth `k_eff`.
struct Panels {
    buf: AlignedBuf,
    r: usize,
    extent: usize,
    k_eff: usize,
    valid: Vec<AtomicBool>,
}

impl Panels {
    fn with_capacity(extent_cap: usize, k_cap: usize, r: usize, line_bytes: usize) -> Self {
        let max_panels = extent_cap.div_ceil(r);
        Panels {
            buf: AlignedBuf::zeroed(max_panels * r * k_cap, line_bytes),
            r,
            extent: 0,
            k_eff: 0,
            valid: (0..max_panels).map(|_| AtomicBool::new(false)).collect(),
        }
    }

    fn panel_count(&self) -> usize {
        self.extent.div_ceil(self.r)
    }

    fn panel_len(&self) -> usize {
        self.r * self.k_eff
    }

    fn reset(&mut self, extent: usize, k_eff: usize) -> Result<()> {
        let panels = extent.div_ceil(self.r);
        if panels > self.valid.len() || panels * self.r * k_eff > self.buf.len() {
            return Err(Error::SizeViolation(format!(
                "{extent}x{k_eff} does not fit a packed buffer of {} elements",
                self.buf.len()
            )));
        }
        self.extent = extent;
        self.k_eff = k_eff;
        for v in &self.valid {
            v.store(false, Ordering::Relaxed);
        }
        Ok(())
    }

    fn check_panel(&self, p: usize) {
        assert!(p < self.panel_count(), "panel {p} out of range ({} panels)", self.panel_count());
    }

    fn panel(&self, p: usize) -> &[f64] {
        self.check_panel(p);
        let len = self.panel_len();
        &self.buf.as_slice()[p * len..(p + 1) * len]
    }

    fn panel_mut(&mut self, p: usize) -> &mut [f64] {
        self.check_panel(p);
        let len = self.panel_len();
        &mut self.buf.as_mut_slice()[p * len..(p + 1) * len]
    }

    fn used(&self) -> &[f64] {
        &self.buf.as_slice()[..self.panel_count() * self.panel_len()]
    }

    fn is_valid(&self, p: usize) -> bool {
        self.valid[p].load(Ordering::Acquire)
    }

    fn set_valid(&self, p: usize, v: bool) {
        self.valid[p].store(v, Ordering::Release);
    }

    fn all_valid(&self) -> bool {
        (0..self.panel_count()).all(|p| self.is_valid(p))
    }

    /// Start of panel `p` for depth `k_eff`, without touching the metadata.
    fn panel_ptr_at(&self, p: usize, k_eff: usize) -> *mut f64 {
        debug_assert!((p + 1) * self.r * k_eff <= self.buf.len());
        // SAFETY: offset stays inside the allocation (checked above in debug).
        unsafe { self.buf.raw().add(p * self.r * k_eff) }
    }
}

macro_rules! packed_buffer {
    ($(#[$meta:meta])* $name:ident, $width:ident) => {
        $(#[$meta])*
        pub struct $name(Panels);

        impl $name {
            /// Buffer able to hold `extent_cap x k_cap` operands, aligned to
            /// `line_bytes`.
            pub fn with_capacity(extent_cap: usize, k_cap: usize, $width: usize, line_bytes: usize) -> Self {
                assert!($width > 0, "register block must be positive");
                $name(Panels::with_capacity(extent_cap, k_cap, $width, line_bytes))
            }

            pub fn $width(&self) -> usize {
                self.0.r
            }

            pub fn k_eff(&self) -> usize {
                self.0.k_eff
            }

            pub fn panel_count(&self) -> usize {
                self.0.panel_count()
            }

            /// Re-shapes the buffer for a new operand and clears every flag.
            pub fn reset(&mut self, extent: usize, k_eff: usize) -> Result<()> {
                self.0.reset(extent, k_eff)
            }

            pub fn panel(&self, p: usize) -> &[f64] {
                self.0.panel(p)
            }

            pub fn panel_mut(&mut self, p: usize) -> &mut [f64] {
                self.0.panel_mut(p)
            }

            /// All panels in use, back to back.
            pub fn as_slice(&self) -> &[f64] {
                self.0.used()
            }

            pub fn is_valid(&self, p: usize) -> bool {
                self.0.is_valid(p)
            }

            pub fn all_valid(&self) -> bool {
                self.0.all_valid()
            }

            pub fn mark_valid(&self, p: usize) {
                self.0.check_panel(p);
                self.0.set_valid(p, true);
            }

            pub fn alignment(&self) -> usize {
                self.0.buf.alignment()
            }

            pub(crate) fn panel_ptr(&self, p: usize) -> *const f64 {
                self.0.panel_ptr_at(p, self.0.k_eff)
            }

            pub(crate) fn panel_ptr_mut(&mut self, p: usize) -> *mut f64 {
                self.0.panel_ptr_at(p, self.0.k_eff)
            }

            /// Raw panel address for an explicit depth; used when several
            /// workers fill disjoint panels of one shared buffer.
            #[allow(dead_code)]
            pub(crate) fn shared_panel_ptr(&self, p: usize, k_eff: usize) -> *mut f64 {
                self.0.panel_ptr_at(p, k_eff)
            }

            #[allow(dead_code)]
            pub(crate) fn set_valid_shared(&self, p: usize, v: bool) {
                self.0.set_valid(p, v);
            }

            #[allow(dead_code)]
            pub(crate) fn is_valid_shared(&self, p: usize) -> bool {
                self.0.is_valid(p)
            }
        }

        impl std::fmt::Debug for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.debug_struct(stringify!($name))
                    .field("r", &self.0.r)
                    .field("extent", &self.0.extent)
                    .field("k_eff", &self.0.k_eff)
                    .field("panels", &self.panel_count())
                    .finish()
            }
        }
    };
}

packed_buffer!(
    /// Packed `m_c x k_c` block of A as column-ordered `m_r` micropanels.
    PackedBlockA,
    m_r
);

packed_buffer!(
    /// Packed `k_c x n_c` panel of B as row-ordered `n_r` micropanels.
    PackedPanelB,
    n_r
);

impl PackedBlockA {
    pub fn new(params: &BlockingParams) -> Self {
        Self::with_capacity(params.m_c, params.k_c, params.m_r, params.line_bytes)
    }

    pub fn rows(&self) -> usize {
        self.0.extent
    }

    /// Packs `a_sub` (rows of panel `p`) and marks the panel valid.
    pub fn pack_panel(&mut self, p: usize, a_sub: &MatrixView<'_>) -> Result<()> {
        let m_r = self.0.r;
        pack_a_micropanel(a_sub, m_r, self.panel_mut(p))?;
        self.mark_valid(p);
        Ok(())
    }
}

impl PackedPanelB {
    pub fn new(params: &BlockingParams) -> Self {
        Self::with_capacity(params.n_c, params.k_c, params.n_r, params.line_bytes)
    }

    pub fn cols(&self) -> usize {
        self.0.extent
    }

    pub fn pack_panel(&mut self, q: usize, b_sub: &MatrixView<'_>) -> Result<()> {
        let n_r = self.0.r;
        pack_b_micropanel(b_sub, n_r, self.panel_mut(q))?;
        self.mark_valid(q);
        Ok(())
    }
}

/// Writes the column-ordered, zero-padded micropanel of `a_sub`
/// (`rows <= m_r`, `cols = k`) into `dest` (`m_r * k` elements).
pub fn pack_a_micropanel(a_sub: &MatrixView<'_>, m_r: usize, dest: &mut [f64]) -> Result<()> {
    let (rows, k) = (a_sub.rows(), a_sub.cols());
    if rows > m_r {
        return Err(Error::SizeViolation(format!("A micropanel has {rows} rows, m_r is {m_r}")));
    }
    if dest.len() != m_r * k {
        return Err(Error::SizeViolation(format!("destination holds {} elements, need {}", dest.len(), m_r * k)));
    }
    for l in 0..k {
        let lane = &mut dest[l * m_r..(l + 1) * m_r];
        for (i, slot) in lane.iter_mut().enumerate() {
            *slot = if i < rows { a_sub.get(i, l) } else { 0.0 };
        }
    }
    Ok(())
}

/// Writes the row-ordered, zero-padded micropanel of `b_sub`
/// (`rows = k`, `cols <= n_r`) into `dest` (`k * n_r` elements).
pub fn pack_b_micropanel(b_sub: &MatrixView<'_>, n_r: usize, dest: &mut [f64]) -> Result<()> {
    let (k, cols) = (b_sub.rows(), b_sub.cols());
    if cols > n_r {
        return Err(Error::SizeViolation(format!("B micropanel has {cols} columns, n_r is {n_r}")));
    }
    if dest.len() != k * n_r {
        return Err(Error::SizeViolation(format!("destination holds {} elements, need {}", dest.len(), k * n_r)));
    }
    for l in 0..k {
        let lane = &mut dest[l * n_r..(l + 1) * n_r];
        for (j, slot) in lane.iter_mut().enumerate() {
            *slot = if j < cols { b_sub.get(l, j) } else { 0.0 };
        }
    }
    Ok(())
}

/// Packs an `m_eff x k_eff` block of A (`m_eff <= m_c`, `k_eff <= k_c`).
pub fn pack_block_a(a_block: &MatrixView<'_>, params: &BlockingParams) -> Result<PackedBlockA> {
    let (m, k) = (a_block.rows(), a_block.cols());
    if m > params.m_c || k > params.k_c {
        return Err(Error::SizeViolation(format!("A block {m}x{k} exceeds m_c={} x k_c={}", params.m_c, params.k_c)));
    }
    let mut packed = PackedBlockA::new(params);
    packed.reset(m, k)?;
    for p in 0..packed.panel_count() {
        let rows = params.m_r.min(m - p * params.m_r);
        packed.pack_panel(p, &a_block.submatrix(p * params.m_r, 0, rows, k)?)?;
    }
    Ok(packed)
}

/// Packs a `k_eff x n_eff` panel of B (`k_eff <= k_c`, `n_eff <= n_c`).
pub fn pack_panel_b(b_panel: &MatrixView<'_>, params: &BlockingParams) -> Result<PackedPanelB> {
    let (k, n) = (b_panel.rows(), b_panel.cols());
    if n > params.n_c || k > params.k_c {
        return Err(Error::SizeViolation(format!("B panel {k}x{n} exceeds k_c={} x n_c={}", params.k_c, params.n_c)));
    }
    let mut packed = PackedPanelB::new(params);
    packed.reset(n, k)?;
    for q in 0..packed.panel_count() {
        let cols = params.n_r.min(n - q * params.n_r);
        packed.pack_panel(q, &b_panel.submatrix(0, q * params.n_r, k, cols)?)?;
    }
    Ok(packed)
}

/// True iff every `(i, l)` read back from `packed` reproduces `a_block`, all
/// padding is zero and every panel is flagged valid.
pub fn unpack_roundtrip_check(a_block: &MatrixView<'_>, packed: &PackedBlockA) -> bool {
    let (m, k) = (a_block.rows(), a_block.cols());
    let m_r = packed.m_r();
    if packed.rows() != m || packed.k_eff() != k || packed.panel_count() != m.div_ceil(m_r) {
        return false;
    }
    (0..packed.panel_count()).all(|p| {
        let panel = packed.panel(p);
        packed.is_valid(p)
            && (0..k).all(|l| {
                (0..m_r).all(|i| {
                    let row = p * m_r + i;
                    let v = panel[l * m_r + i];
                    if row < m {
                        v.to_bits() == a_block.get(row, l).to_bits()
                    } else {
                        v.to_bits() == 0.0f64.to_bits()
                    }
                })
            })
    })
}

/// B-side counterpart of [`unpack_roundtrip_check`].
pub fn unpack_roundtrip_check_b(b_panel: &MatrixView<'_>, packed: &PackedPanelB) -> bool {
    let (k, n) = (b_panel.rows(), b_panel.cols());
    let n_r = packed.n_r();
    if packed.cols() != n || packed.k_eff() != k || packed.panel_count() != n.div_ceil(n_r) {
        return false;
    }
    (0..packed.panel_count()).all(|q| {
        let panel = packed.panel(q);
        packed.is_valid(q)
            && (0..k).all(|l| {
                (0..n_r).all(|j| {
                    let col = q * n_r + j;
                    let v = panel[l * n_r + j];
                    if col < n {
                        v.to_bits() == b_panel.get(l, col).to_bits()
                    } else {
                        v.to_bits() == 0.0f64.to_bits()
                    }
                })
            })
    })
}
