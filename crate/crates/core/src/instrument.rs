//! Access counting for instrumented runs.
//!
//! The hot paths are generic over [`Probe`]; with [`NoProbe`] every hook is
//! a compile-time no-op.

use std::cell::Cell;

/// Event counts from one instrumented GEMM call.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct AccessCounters {
    /// Elements of A loaded from the caller's (unpacked) storage.
    pub a_unpacked_reads: u64,
    pub b_unpacked_reads: u64,
    /// Elements loaded from packed buffers, padding included.
    pub a_packed_reads: u64,
    pub b_packed_reads: u64,
    /// Elements stored into packed buffers, padding included.
    pub a_pack_writes: u64,
    pub b_pack_writes: u64,
    /// Points where a packed A block becomes readable by every consumer.
    pub barrier_count: u64,
    /// Packed-panel reads issued while the panel's valid flag was clear.
    pub invalid_packed_reads: u64,
}

impl AccessCounters {
    pub fn merge(&mut self, other: &AccessCounters) {
        self.a_unpacked_reads += other.a_unpacked_reads;
        self.b_unpacked_reads += other.b_unpacked_reads;
        self.a_packed_reads += other.a_packed_reads;
        self.b_packed_reads += other.b_packed_reads;
        self.a_pack_writes += other.a_pack_writes;
        self.b_pack_writes += other.b_pack_writes;
        self.barrier_count += other.barrier_count;
        self.invalid_packed_reads += other.invalid_packed_reads;
    }

    pub fn packed_reads(&self) -> u64 {
        self.a_packed_reads + self.b_packed_reads
    }

    pub fn pack_writes(&self) -> u64 {
        self.a_pack_writes + self.b_pack_writes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Operand {
    A,
    B,
}

pub(crate) trait Probe {
    const ENABLED: bool;

    fn unpacked_read(&self, _op: Operand, _n: u64) {}
    fn packed_read(&self, _op: Operand, _n: u64) {}
    fn pack_write(&self, _op: Operand, _n: u64) {}
    fn rendezvous(&self) {}
    fn invalid_read(&self) {}

    /// A 3rd-loop block finished its first 2nd-loop iteration.
    fn first_column_done(&self, _packed_a: &crate::pack::PackedBlockA) {}
    /// A 3rd-loop block finished.
    fn block_done(&self, _block: usize, _packed_b: &crate::pack::PackedPanelB) {}
    /// A 4th-loop iteration finished.
    fn pass_done(&self, _packed_a: &crate::pack::PackedBlockA, _packed_b: &crate::pack::PackedPanelB) {}
}

#[derive(Default)]
pub(crate) struct NoProbe;

impl Probe for NoProbe {
    const ENABLED: bool = false;
}

#[derive(Default)]
pub(crate) struct CountingProbe {
    a_unpacked: Cell<u64>,
    b_unpacked: Cell<u64>,
    a_packed: Cell<u64>,
    b_packed: Cell<u64>,
    a_writes: Cell<u64>,
    b_writes: Cell<u64>,
    barriers: Cell<u64>,
    invalid: Cell<u64>,
}

fn bump(cell: &Cell<u64>, n: u64) {
    cell.set(cell.get() + n);
}

impl CountingProbe {
    pub(crate) fn counters(&self) -> AccessCounters {
        AccessCounters {
            a_unpacked_reads: self.a_unpacked.get(),
            b_unpacked_reads: self.b_unpacked.get(),
            a_packed_reads: self.a_packed.get(),
            b_packed_reads: self.b_packed.get(),
            a_pack_writes: self.a_writes.get(),
            b_pack_writes: self.b_writes.get(),
            barrier_count: self.barriers.get(),
            invalid_packed_reads: self.invalid.get(),
        }
    }
}

impl Probe for CountingProbe {
    const ENABLED: bool = true;

    fn unpacked_read(&self, op: Operand, n: u64) {
        bump(if op == Operand::A { &self.a_unpacked } else { &self.b_unpacked }, n);
    }

    fn packed_read(&self, op: Operand, n: u64) {
        bump(if op == Operand::A { &self.a_packed } else { &self.b_packed }, n);
    }

    fn pack_write(&self, op: Operand, n: u64) {
        bump(if op == Operand::A { &self.a_writes } else { &self.b_writes }, n);
    }

    fn rendezvous(&self) {
        bump(&self.barriers, 1);
    }

    fn invalid_read(&self) {
        bump(&self.invalid, 1);
    }
}
