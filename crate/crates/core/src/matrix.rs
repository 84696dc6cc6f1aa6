//! Strided matrix views over `f64` buffers.
//!
//! A view addresses element `(i, j)` at `i * row_stride + j * col_stride`.
//! Only the two leading-dimension layouts are representable: column-major
//! (`row_stride == 1`, `col_stride == ld >= rows`) and row-major
//! (`col_stride == 1`, `row_stride == ld >= cols`).

use crate::error::{Error, Result};

pub const ELEM_BYTES: usize = std::mem::size_of::<f64>();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    RowMajor,
    ColMajor,
}

/// Shape and strides of a view, independent of the storage it points into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrideLayout {
    rows: usize,
    cols: usize,
    row_stride: usize,
    col_stride: usize,
    layout: Layout,
}

impl StrideLayout {
    pub fn new(rows: usize, cols: usize, layout: Layout, ld: usize) -> Result<Self> {
        let extent = match layout {
            Layout::ColMajor => rows,
            Layout::RowMajor => cols,
        };
        if ld < extent {
            return Err(Error::LeadingDimension { ld, extent });
        }
        let (row_stride, col_stride) = match layout {
            Layout::ColMajor => (1, ld),
            Layout::RowMajor => (ld, 1),
        };
        Ok(StrideLayout { rows, cols, row_stride, col_stride, layout })
    }

    /// Leading dimension equal to the spanned extent.
    pub fn tight(rows: usize, cols: usize, layout: Layout) -> Self {
        let ld = match layout {
            Layout::ColMajor => rows,
            Layout::RowMajor => cols,
        };
        Self::new(rows, cols, layout, ld).expect("tight leading dimension is always valid")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_stride(&self) -> usize {
        self.row_stride
    }

    pub fn col_stride(&self) -> usize {
        self.col_stride
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn leading_dimension(&self) -> usize {
        match self.layout {
            Layout::ColMajor => self.col_stride,
            Layout::RowMajor => self.row_stride,
        }
    }

    /// Stride in bytes between horizontally adjacent elements.
    pub fn col_stride_bytes(&self) -> usize {
        self.col_stride * ELEM_BYTES
    }

    /// Stride in bytes between vertically adjacent elements.
    pub fn row_stride_bytes(&self) -> usize {
        self.row_stride * ELEM_BYTES
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize) -> usize {
        i * self.row_stride + j * self.col_stride
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    /// Minimum buffer length able to hold every addressed element.
    pub fn required_len(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            self.offset(self.rows - 1, self.cols - 1) + 1
        }
    }

    /// Same strides, smaller extent.
    fn shrink(&self, rows: usize, cols: usize) -> Self {
        StrideLayout { rows, cols, ..*self }
    }
}

/// Builds the layout descriptor for a `rows x cols` matrix with the given
/// leading dimension.
pub fn make_view(rows: usize, cols: usize, layout: Layout, leading_dimension: usize) -> Result<StrideLayout> {
    StrideLayout::new(rows, cols, layout, leading_dimension)
}

fn check_len(len: usize, shape: &StrideLayout) -> Result<()> {
    let required = shape.required_len();
    if len < required {
        return Err(Error::BufferTooSmall { len, required });
    }
    Ok(())
}

fn check_sub(shape: &StrideLayout, i0: usize, j0: usize, rows: usize, cols: usize) -> Result<()> {
    if i0 + rows > shape.rows || j0 + cols > shape.cols {
        return Err(Error::SizeViolation(format!(
            "submatrix ({i0}, {j0}) + {rows}x{cols} exceeds {}x{}",
            shape.rows, shape.cols
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct MatrixView<'a> {
    data: &'a [f64],
    shape: StrideLayout,
}

impl<'a> MatrixView<'a> {
    pub fn new(data: &'a [f64], shape: StrideLayout) -> Result<Self> {
        check_len(data.len(), &shape)?;
        Ok(MatrixView { data, shape })
    }

    pub fn shape(&self) -> &StrideLayout {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.rows
    }

    pub fn cols(&self) -> usize {
        self.shape.cols
    }

    pub fn data(&self) -> &'a [f64] {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.shape.rows && j < self.shape.cols, "index ({i}, {j}) out of bounds");
        self.data[self.shape.offset(i, j)]
    }

    pub fn submatrix(&self, i0: usize, j0: usize, rows: usize, cols: usize) -> Result<MatrixView<'a>> {
        check_sub(&self.shape, i0, j0, rows, cols)?;
        let shape = self.shape.shrink(rows, cols);
        let data = if shape.is_empty() { &self.data[..0] } else { &self.data[self.shape.offset(i0, j0)..] };
        Ok(MatrixView { data, shape })
    }

    pub(crate) fn as_ptr(&self) -> *const f64 {
        self.data.as_ptr()
    }

    /// Copies the logical contents into a row-major `Vec<Vec<_>>`.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|i| (0..self.cols()).map(|j| self.get(i, j)).collect()).collect()
    }
}

#[derive(Debug)]
pub struct MatrixViewMut<'a> {
    data: &'a mut [f64],
    shape: StrideLayout,
}

impl<'a> MatrixViewMut<'a> {
    pub fn new(data: &'a mut [f64], shape: StrideLayout) -> Result<Self> {
        check_len(data.len(), &shape)?;
        Ok(MatrixViewMut { data, shape })
    }

    pub fn shape(&self) -> &StrideLayout {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.rows
    }

    pub fn cols(&self) -> usize {
        self.shape.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.shape.rows && j < self.shape.cols, "index ({i}, {j}) out of bounds");
        self.data[self.shape.offset(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(i < self.shape.rows && j < self.shape.cols, "index ({i}, {j}) out of bounds");
        self.data[self.shape.offset(i, j)] = value;
    }

    pub fn as_view(&self) -> MatrixView<'_> {
        MatrixView { data: self.data, shape: self.shape }
    }

    pub fn reborrow(&mut self) -> MatrixViewMut<'_> {
        MatrixViewMut { data: self.data, shape: self.shape }
    }

    pub fn submatrix_mut(&mut self, i0: usize, j0: usize, rows: usize, cols: usize) -> Result<MatrixViewMut<'_>> {
        check_sub(&self.shape, i0, j0, rows, cols)?;
        let shape = self.shape.shrink(rows, cols);
        let data = if shape.is_empty() {
            &mut self.data[..0]
        } else {
            &mut self.data[self.shape.offset(i0, j0)..]
        };
        Ok(MatrixViewMut { data, shape })
    }

    /// Multiplies every element by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for j in 0..self.cols() {
            for i in 0..self.rows() {
                let o = self.shape.offset(i, j);
                self.data[o] *= factor;
            }
        }
    }

    pub(crate) fn as_mut_ptr(&mut self) -> *mut f64 {
        self.data.as_mut_ptr()
    }
}

/// Owned strided matrix; padding between leading-dimension strides is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    shape: StrideLayout,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize, layout: Layout, ld: usize) -> Result<Self> {
        let shape = StrideLayout::new(rows, cols, layout, ld)?;
        let data = vec![0.0; shape.required_len()];
        Ok(Matrix { data, shape })
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        layout: Layout,
        ld: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut m = Self::zeros(rows, cols, layout, ld)?;
        for i in 0..rows {
            for j in 0..cols {
                m.data[m.shape.offset(i, j)] = f(i, j);
            }
        }
        Ok(m)
    }

    /// Builds a matrix from row-major nested slices.
    pub fn from_rows(rows: &[&[f64]], layout: Layout, ld: usize) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::from_fn(r, c, layout, ld, |i, j| rows[i][j])
    }

    pub fn shape(&self) -> &StrideLayout {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.rows
    }

    pub fn cols(&self) -> usize {
        self.shape.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.view().get(i, j)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn view(&self) -> MatrixView<'_> {
        MatrixView { data: &self.data, shape: self.shape }
    }

    pub fn view_mut(&mut self) -> MatrixViewMut<'_> {
        MatrixViewMut { data: &mut self.data, shape: self.shape }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.view().to_rows()
    }
}

fn check_conformal(a: &StrideLayout, b: &StrideLayout, c: &StrideLayout) -> Result<()> {
    if a.cols != b.rows || a.rows != c.rows || b.cols != c.cols {
        return Err(Error::DimensionMismatch(format!(
            "A is {}x{}, B is {}x{}, C is {}x{}",
            a.rows, a.cols, b.rows, b.cols, c.rows, c.cols
        )));
    }
    Ok(())
}

pub(crate) fn check_gemm_dims(a: &MatrixView<'_>, b: &MatrixView<'_>, c: &MatrixViewMut<'_>) -> Result<()> {
    check_conformal(&a.shape, &b.shape, &c.shape)
}

/// `C += A * B` by the textbook triple loop, `p` innermost.
pub fn reference_gemm(a: &MatrixView<'_>, b: &MatrixView<'_>, c: &mut MatrixViewMut<'_>) -> Result<()> {
    check_gemm_dims(a, b, c)?;
    let (sa, sb, sc) = (a.shape, b.shape, c.shape);
    for i in 0..sc.rows {
        for j in 0..sc.cols {
            let mut sum = 0.0;
            for p in 0..sa.cols {
                sum += a.data[sa.offset(i, p)] * b.data[sb.offset(p, j)];
            }
            c.data[sc.offset(i, j)] += sum;
        }
    }
    Ok(())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Value in `[-1, 1)` determined only by `(seed, i, j)`.
pub fn deterministic_value(seed: u64, i: usize, j: usize) -> f64 {
    let h = splitmix64(seed ^ splitmix64((i as u64) ^ splitmix64(j as u64).rotate_left(17)));
    let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
    2.0 * unit - 1.0
}

/// Overwrites every element with [`deterministic_value`], so the same logical
/// matrix appears whatever the layout.
pub fn fill_deterministic(view: &mut MatrixViewMut<'_>, seed: u64) {
    for i in 0..view.rows() {
        for j in 0..view.cols() {
            view.set(i, j, deterministic_value(seed, i, j));
        }
    }
}
