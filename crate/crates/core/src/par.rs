//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the work is spread over the current rayon
//! pool. Work is always split into the same fixed chunks, so results do not
//! depend on the number of threads.

use ndarray::{s, Array2, ArrayView2};

/// Rows per chunk in the row-split matrix products.
pub const ROW_CHUNK: usize = 64;

/// `(0..n).map(f).collect()`, possibly in parallel. Output order is index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Builds an `m × ncols` matrix from row blocks of at most [`ROW_CHUNK`]
/// rows, `f(lo, hi)` producing rows `lo..hi`.
pub fn row_blocks<F>(m: usize, ncols: usize, f: F) -> Array2<f64>
where
    F: Fn(usize, usize) -> Array2<f64> + Sync + Send,
{
    let mut out = Array2::<f64>::zeros((m, ncols));
    let blocks = map_indexed(m.div_ceil(ROW_CHUNK), |c| {
        let lo = c * ROW_CHUNK;
        f(lo, (lo + ROW_CHUNK).min(m))
    });
    for (c, block) in blocks.into_iter().enumerate() {
        let lo = c * ROW_CHUNK;
        out.slice_mut(s![lo..lo + block.nrows(), ..]).assign(&block);
    }
    out
}

/// Dense product `a · b`, split over row chunks of `a`.
pub fn matmul(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.nrows(), "matmul: inner dimensions differ");
    row_blocks(a.nrows(), b.ncols(), |lo, hi| a.slice(s![lo..hi, ..]).dot(&b))
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    matmul(a.t(), b)
}

/// Sum of `f(i)` over `0..n`, accumulated in index order.
pub fn sum_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    map_indexed(n, f).into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    #[test]
    fn matmul_matches_dot() {
        let a = Array::from_shape_fn((150, 40), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let b = Array::from_shape_fn((40, 33), |(i, j)| ((i + 2 * j) % 5) as f64 * 0.5);
        let got = matmul(a.view(), b.view());
        let want = a.dot(&b);
        assert_eq!(got, want);
        let got_t = matmul_tn(a.view(), a.view());
        assert_eq!(got_t, a.t().dot(&a));
    }
}
