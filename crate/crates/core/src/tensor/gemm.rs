use super::MatRef;

/// Single precision product backed by `matrixmultiply`.
pub(super) fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_, f32>,
    b: MatRef<'_, f32>,
    c: &mut [f32],
    accumulate: bool,
) {
    assert!(c.len() >= m * n);
    check_extent(a, m, k);
    check_extent(b, k, n);
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: extents were checked against the slice lengths above and `c`
    // is an exclusive row-major m×n buffer.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Double precision product with a fixed accumulation order.
///
/// Every output element is built as `((0 + a0·b0) + a1·b1) + …` with the
/// inner index ascending and no fused multiply-add, so nested-loop reference
/// kernels that sum in the same order reproduce it bit for bit.
pub(super) fn ordered(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_, f64>,
    b: MatRef<'_, f64>,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(c.len() >= m * n);
    check_extent(a, m, k);
    check_extent(b, k, n);
    if !accumulate {
        c[..m * n].fill(0.0);
    }
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * a.row_stride + p * a.col_stride];
            let base = p * b.row_stride;
            if b.col_stride == 1 {
                let brow = &b.data[base..base + n];
                for (cv, &bv) in row.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            } else {
                for (j, cv) in row.iter_mut().enumerate() {
                    *cv += av * b.data[base + j * b.col_stride];
                }
            }
        }
    }
}

fn check_extent<T>(mat: MatRef<'_, T>, rows: usize, cols: usize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) * mat.row_stride + (cols - 1) * mat.col_stride;
    assert!(last < mat.data.len(), "matrix view exceeds its buffer");
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = acc;
            }
        }
        c
    }

    #[test]
    fn ordered_matches_naive_bitwise() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.137).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 13 % 7) as f64 - 3.0) * 0.291).collect();
        let mut c = vec![f64::NAN; m * n];
        ordered(m, k, n, MatRef::rows(&a, k), MatRef::rows(&b, n), &mut c, false);
        assert_eq!(c, naive(m, k, n, &a, &b));
    }

    #[test]
    fn transposed_views_agree() {
        let (m, k, n) = (4, 6, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).cos()).collect();
        // bt is b transposed, stored row-major as n×k.
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c1 = vec![0.0; m * n];
        let mut c2 = vec![0.0; m * n];
        ordered(m, k, n, MatRef::rows(&a, k), MatRef::rows(&b, n), &mut c1, false);
        ordered(m, k, n, MatRef::rows(&a, k), MatRef::transposed(&bt, k), &mut c2, false);
        assert_eq!(c1, c2);

        let af: Vec<f32> = a.iter().map(|&v| v as f32).collect();
        let bf: Vec<f32> = bt.iter().map(|&v| v as f32).collect();
        let mut cf = vec![0.0f32; m * n];
        sgemm(m, k, n, MatRef::rows(&af, k), MatRef::transposed(&bf, k), &mut cf, false);
        for (x, y) in cf.iter().zip(&c1) {
            assert!((*x as f64 - y).abs() < 1e-5);
        }
        // accumulate doubles the product
        sgemm(m, k, n, MatRef::rows(&af, k), MatRef::transposed(&bf, k), &mut cf, true);
        for (x, y) in cf.iter().zip(&c1) {
            assert!((*x as f64 - 2.0 * y).abs() < 1e-5);
        }
    }
}
