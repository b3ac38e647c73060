use rand::Rng;
use rand_distr::StandardNormal;

use super::tensor::{Scalar, Tensor};

/// Orthogonal matrix of shape `rows×cols` with unit gain.
///
/// A Gaussian matrix of the taller orientation is orthonormalized column by
/// column (modified Gram-Schmidt, two passes, in `f64`). Gram-Schmidt keeps
/// the implied `R` diagonal positive, so the result is Haar-distributed.
/// Rows are orthonormal when `rows <= cols`, columns otherwise.
pub fn orthogonal_init<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    assert!(rows >= 1 && cols >= 1, "orthogonal_init needs positive dimensions");
    let (tall, short) = (rows.max(cols), rows.min(cols));
    // Column-major `tall×short` working matrix.
    let mut q: Vec<Vec<f64>> = (0..short)
        .map(|_| (0..tall).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    for j in 0..short {
        for _pass in 0..2 {
            for i in 0..j {
                let (done, rest) = q.split_at_mut(j);
                let proj: f64 = done[i].iter().zip(&rest[0]).map(|(a, b)| a * b).sum();
                for (x, b) in rest[0].iter_mut().zip(&done[i]) {
                    *x -= proj * b;
                }
            }
            let norm = q[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in &mut q[j] {
                *x /= norm;
            }
        }
    }
    let mut data = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let v = if rows >= cols { q[c][r] } else { q[r][c] };
            data[r * cols + c] = T::of(v);
        }
    }
    Tensor::from_vec(&[rows, cols], data).expect("shape matches")
}
