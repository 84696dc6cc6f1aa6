#![allow(dead_code)]

use fipgemm::{fill_deterministic, reference_gemm, Layout, Matrix};

pub fn layout(col_major: bool) -> Layout {
    if col_major {
        Layout::ColMajor
    } else {
        Layout::RowMajor
    }
}

pub fn filled(rows: usize, cols: usize, layout: Layout, pad: usize, seed: u64) -> Matrix {
    let ld = pad + if layout == Layout::ColMajor { rows } else { cols };
    let mut m = Matrix::zeros(rows, cols, layout, ld.max(1)).unwrap();
    fill_deterministic(&mut m.view_mut(), seed);
    m
}

/// `C + A * B` by the reference loops.
pub fn oracle(a: &Matrix, b: &Matrix, c: &Matrix) -> Matrix {
    let mut r = c.clone();
    reference_gemm(&a.view(), &b.view(), &mut r.view_mut()).unwrap();
    r
}

/// Largest elementwise difference relative to the largest reference entry.
pub fn rel_error(got: &Matrix, want: &Matrix) -> f64 {
    let mut scale = 0.0f64;
    let mut err = 0.0f64;
    for i in 0..want.rows() {
        for j in 0..want.cols() {
            scale = scale.max(want.get(i, j).abs());
            let d = (got.get(i, j) - want.get(i, j)).abs();
            err = if d.is_nan() { f64::INFINITY } else { err.max(d) };
        }
    }
    if scale == 0.0 {
        err
    } else {
        err / scale
    }
}

/// `8 k eps` with eps the unit roundoff of f64.
pub fn tolerance(k: usize) -> f64 {
    8.0 * k.max(1) as f64 * f64::EPSILON / 2.0
}
