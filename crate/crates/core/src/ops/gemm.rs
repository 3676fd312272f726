use crate::tensor::Float;

/// A strided `rows x cols` window into a flat buffer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MatView {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl MatView {
    /// Row-major dense matrix at `offset`.
    pub fn dense(offset: usize, rows: usize, cols: usize) -> Self {
        MatView { offset, rows, cols, row_stride: cols, col_stride: 1 }
    }

    pub fn t(self) -> Self {
        MatView {
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
            ..self
        }
    }

    fn check(&self, len: usize) {
        if self.rows == 0 || self.cols == 0 {
            return;
        }
        let last = self.offset + (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride;
        assert!(last < len, "matrix view out of bounds: {self:?} over {len} elements");
    }
}

/// `c = alpha * a * b + beta * c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Float>(
    alpha: T,
    a: &[T],
    av: MatView,
    b: &[T],
    bv: MatView,
    beta: T,
    c: &mut [T],
    cv: MatView,
) {
    assert_eq!(av.cols, bv.rows, "inner dimensions differ");
    assert_eq!((av.rows, bv.cols), (cv.rows, cv.cols), "output dimensions differ");
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    if av.cols == 0 {
        for r in 0..cv.rows {
            for col in 0..cv.cols {
                let i = cv.offset + r * cv.row_stride + col * cv.col_stride;
                c[i] = if beta == T::zero() { T::zero() } else { beta * c[i] };
            }
        }
        return;
    }
    av.check(a.len());
    bv.check(b.len());
    cv.check(c.len());
    // SAFETY: every view was bounds-checked against its buffer above, and `c` is borrowed
    // mutably so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            cv.rows,
            av.cols,
            cv.cols,
            alpha,
            a.as_ptr().add(av.offset),
            av.row_stride as isize,
            av.col_stride as isize,
            b.as_ptr().add(bv.offset),
            bv.row_stride as isize,
            bv.col_stride as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.row_stride as isize,
            cv.col_stride as isize,
        );
    }
}
