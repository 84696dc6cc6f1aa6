//! Placement of operand cache lines onto the sets of a set-associative
//! cache.
//!
//! Addresses are virtual byte offsets from a line-aligned base; a line at
//! byte address `x` goes to set `(x / line_bytes) % sets`.

use std::collections::HashSet;

use crate::{BenchError, Result};

const ELEM_BYTES: usize = std::mem::size_of::<f64>();

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheModel {
    pub line_bytes: usize,
    pub sets: usize,
    pub ways: usize,
}

impl CacheModel {
    pub fn new(line_bytes: usize, sets: usize, ways: usize) -> Result<Self> {
        if line_bytes == 0 || sets == 0 || ways == 0 {
            return Err(BenchError::Config(format!(
                "cache model needs positive line size, sets and ways (got {line_bytes}, {sets}, {ways})"
            )));
        }
        Ok(CacheModel { line_bytes, sets, ways })
    }

    pub fn capacity(&self) -> usize {
        self.line_bytes * self.sets * self.ways
    }

    /// Span of addresses that covers every set once.
    pub fn way_bytes(&self) -> usize {
        self.line_bytes * self.sets
    }

    fn set_of(&self, byte: usize) -> usize {
        (byte / self.line_bytes) % self.sets
    }
}

/// Element addresses of an operand, in units of `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Footprint {
    /// `rows x cols` elements at `i * row_stride + j * col_stride`; the
    /// `k` dimension runs along the columns.
    Strided { rows: usize, cols: usize, row_stride: usize, col_stride: usize },
    /// A packed micropanel: `width` contiguous elements per step of `k`.
    Packed { width: usize },
}

impl Footprint {
    pub fn strided(rows: usize, cols: usize, row_stride: usize, col_stride: usize) -> Self {
        Footprint::Strided { rows, cols, row_stride, col_stride }
    }

    pub fn packed(width: usize) -> Self {
        Footprint::Packed { width }
    }

    fn for_each_byte(&self, k_span: usize, mut f: impl FnMut(usize)) {
        match *self {
            Footprint::Strided { rows, cols, row_stride, col_stride } => {
                for j in 0..cols.min(k_span) {
                    for i in 0..rows {
                        f((i * row_stride + j * col_stride) * ELEM_BYTES);
                    }
                }
            }
            Footprint::Packed { width } => {
                for e in 0..width * k_span {
                    f(e * ELEM_BYTES);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetMapping {
    /// Distinct lines of the footprint mapped to each set.
    pub per_set: Vec<usize>,
    pub lines: usize,
    pub max: usize,
    pub mean: f64,
    /// `max / mean`; 1.0 is a perfectly even spread.
    pub imbalance: f64,
    /// Sets holding more lines than the cache has ways.
    pub overflowing_sets: usize,
}

/// Histogram of distinct lines per cache set for the first `k_span` steps
/// of the inner dimension of `footprint`.
pub fn analyze_set_mapping(footprint: &Footprint, k_span: usize, cache: &CacheModel) -> SetMapping {
    let mut seen = HashSet::new();
    footprint.for_each_byte(k_span, |byte| {
        seen.insert(byte / cache.line_bytes);
    });
    let mut per_set = vec![0usize; cache.sets];
    for &line in &seen {
        per_set[cache.set_of(line * cache.line_bytes)] += 1;
    }
    let lines = seen.len();
    let max = per_set.iter().copied().max().unwrap_or(0);
    let mean = lines as f64 / cache.sets as f64;
    let imbalance = if lines == 0 { 1.0 } else { max as f64 / mean };
    let overflowing_sets = per_set.iter().filter(|&&c| c > cache.ways).count();
    SetMapping { per_set, lines, max, mean, imbalance, overflowing_sets }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l1() -> CacheModel {
        CacheModel::new(64, 64, 8).unwrap()
    }

    #[test]
    fn model_capacity() {
        assert_eq!(l1().capacity(), 32 * 1024);
        assert!(CacheModel::new(64, 0, 8).is_err());
    }

    #[test]
    fn packed_span_is_even() {
        let c = l1();
        // width 8 doubles = one line per k step; 3 * 64 steps = 3 lines per set
        let m = analyze_set_mapping(&Footprint::packed(8), 3 * c.sets, &c);
        assert!(m.per_set.iter().all(|&n| n == 3));
        assert_eq!(m.imbalance, 1.0);
        assert_eq!(m.overflowing_sets, 0);
    }

    #[test]
    fn way_sized_stride_piles_into_one_set() {
        let c = l1();
        let stride = c.way_bytes() / ELEM_BYTES;
        let m = analyze_set_mapping(&Footprint::strided(6, 256, 1, stride), 256, &c);
        assert_eq!(m.lines, 256);
        assert_eq!(m.max, 256);
        assert_eq!(m.imbalance, c.sets as f64);
        assert_eq!(m.overflowing_sets, 1);
    }

    #[test]
    fn line_sized_stride_is_near_uniform() {
        let c = l1();
        // one 8-element column per line, consecutive columns in consecutive lines
        let m = analyze_set_mapping(&Footprint::strided(8, 128, 1, 8), 128, &c);
        assert_eq!(m.lines, 128);
        assert_eq!(m.imbalance, 1.0);
    }

    #[test]
    fn k_span_truncates() {
        let c = l1();
        let m = analyze_set_mapping(&Footprint::strided(4, 100, 1, 8), 10, &c);
        assert_eq!(m.lines, 10);
    }

    #[test]
    fn brute_force_agrees() {
        let c = CacheModel::new(64, 16, 4).unwrap();
        for (rows, ld) in [(6, 17), (6, 2000), (4, 128), (8, 9)] {
            let got = analyze_set_mapping(&Footprint::strided(rows, 40, 1, ld), 40, &c);
            let mut lines: Vec<usize> = (0..40).flat_map(|j| (0..rows).map(move |i| (i + j * ld) * 8 / 64)).collect();
            lines.sort_unstable();
            lines.dedup();
            let mut want = vec![0; 16];
            for l in &lines {
                want[l % 16] += 1;
            }
            assert_eq!(got.per_set, want);
        }
    }
}
