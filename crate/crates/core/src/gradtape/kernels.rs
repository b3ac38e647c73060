//! Row-level numeric kernels shared by the tape and by the per-agent
//! (decentralized) inference path.
//!
//! Every kernel computes each output row with a fixed, batch-independent
//! summation order, so evaluating one row alone gives bitwise the same
//! result as evaluating it inside a larger batch.

use rayon::prelude::*;

use super::tensor::Scalar;

const MR: usize = 4;
const NR: usize = 32;
const PAR_MIN_WORK: usize = 1 << 20;

/// `out[m×n] = a[m×k] · b[k×n]`, row-major.
///
/// Output element `(i, j)` is always `((0 + a_i0 b_0j) + a_i1 b_1j) + ...`,
/// independent of `m`, tiling and thread count.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let threads = rayon::current_num_threads();
    if threads > 1 && m >= 2 * MR && m * k * n >= PAR_MIN_WORK {
        let per = m.div_ceil(threads).div_ceil(MR) * MR;
        out.par_chunks_mut(per * n)
            .zip(a.par_chunks(per * k.max(1)))
            .for_each(|(oc, ac)| matmul_serial(ac, b, oc, oc.len() / n, k, n));
    } else {
        matmul_serial(a, b, out, m, k, n);
    }
}

fn matmul_serial<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    let mut i = 0;
    while i + MR <= m {
        tile_rows::<T, MR>(&a[i * k..(i + MR) * k], b, &mut out[i * n..(i + MR) * n], k, n);
        i += MR;
    }
    while i < m {
        tile_rows::<T, 1>(&a[i * k..(i + 1) * k], b, &mut out[i * n..(i + 1) * n], k, n);
        i += 1;
    }
}

#[inline(always)]
fn tile_rows<T: Scalar, const R: usize>(a: &[T], b: &[T], out: &mut [T], k: usize, n: usize) {
    let mut j = 0;
    while j + NR <= n {
        let mut acc = [[T::zero(); NR]; R];
        for p in 0..k {
            let brow: &[T; NR] = b[p * n + j..p * n + j + NR].try_into().unwrap();
            for r in 0..R {
                let av = a[r * k + p];
                for c in 0..NR {
                    acc[r][c] = acc[r][c] + av * brow[c];
                }
            }
        }
        for r in 0..R {
            out[r * n + j..r * n + j + NR].copy_from_slice(&acc[r]);
        }
        j += NR;
    }
    if j < n {
        for r in 0..R {
            for c in j..n {
                let mut s = T::zero();
                for p in 0..k {
                    s = s + a[r * k + p] * b[p * n + c];
                }
                out[r * n + c] = s;
            }
        }
    }
}

/// Row-major transpose of an `m×n` matrix.
pub fn transpose<T: Scalar>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut t = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

/// Adds `bias` to every row of `out`.
pub fn add_bias<T: Scalar>(out: &mut [T], bias: &[T]) {
    if bias.is_empty() {
        return;
    }
    for row in out.chunks_mut(bias.len()) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o = *o + *b;
        }
    }
}

pub fn relu_inplace<T: Scalar>(x: &mut [T]) {
    for v in x {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        s = s + *x * *y;
    }
    s
}

#[inline]
pub fn neg_sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        s = s + d * d;
    }
    -s
}

/// Softmax over the unmasked entries of one row; masked entries become exactly 0.
///
/// Returns `false` if every entry is masked (the row is then left zeroed).
pub fn masked_softmax_row<T: Scalar>(logits: &[T], mask: &[bool], out: &mut [T]) -> bool {
    let mut max = T::neg_infinity();
    for (x, &m) in logits.iter().zip(mask) {
        if m && *x > max {
            max = *x;
        }
    }
    if max == T::neg_infinity() && !mask.iter().any(|&m| m) {
        out.iter_mut().for_each(|o| *o = T::zero());
        return false;
    }
    let mut sum = T::zero();
    for ((o, x), &m) in out.iter_mut().zip(logits).zip(mask) {
        if m {
            let e = (*x - max).exp();
            *o = e;
            sum = sum + e;
        } else {
            *o = T::zero();
        }
    }
    for (o, &m) in out.iter_mut().zip(mask) {
        if m {
            *o = *o / sum;
        }
    }
    true
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax_row<T: Scalar>(logits: &[T], out: &mut [T]) {
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let mut sum = T::zero();
    for x in logits {
        sum = sum + (*x - max).exp();
    }
    let lse = max + sum.ln();
    for (o, x) in out.iter_mut().zip(logits) {
        *o = *x - lse;
    }
}

/// `out += Σ_j weights[j] · values[j]`, visiting `j` in order and skipping
/// exact-zero weights so masked senders never touch the sum.
#[inline]
pub fn mix_into<'a, T: Scalar>(
    weights: &[T],
    values: impl Iterator<Item = &'a [T]>,
    out: &mut [T],
) {
    for (w, v) in weights.iter().zip(values) {
        if *w == T::zero() {
            continue;
        }
        for (o, x) in out.iter_mut().zip(v) {
            *o = *o + *w * *x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_matches_naive_on_odd_shapes() {
        for &(m, k, n) in &[(1, 1, 1), (3, 5, 7), (9, 4, 33), (5, 17, 64), (8, 3, 65)] {
            let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
            let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
            let mut out = vec![0.0; m * n];
            matmul(&a, &b, &mut out, m, k, n);
            assert_eq!(out, naive(&a, &b, m, k, n));
        }
    }

    #[test]
    fn single_row_is_bitwise_equal_to_batched_row() {
        let (m, k, n) = (11, 128, 133);
        let a: Vec<f32> = (0..m * k).map(|i| ((i * 7919) % 1000) as f32 / 997.0 - 0.5).collect();
        let b: Vec<f32> = (0..k * n).map(|i| ((i * 104729) % 1000) as f32 / 991.0 - 0.5).collect();
        let mut full = vec![0.0; m * n];
        matmul(&a, &b, &mut full, m, k, n);
        for i in 0..m {
            let mut row = vec![0.0; n];
            matmul(&a[i * k..(i + 1) * k], &b, &mut row, 1, k, n);
            assert_eq!(&full[i * n..(i + 1) * n], &row[..]);
        }
    }

    #[test]
    fn fully_masked_row_reports_failure() {
        let mut out = [1.0f64; 2];
        assert!(!masked_softmax_row(&[0.0, 1.0], &[false, false], &mut out));
        assert_eq!(out, [0.0, 0.0]);
    }
}
