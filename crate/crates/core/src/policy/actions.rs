use rand::Rng;

use crate::gradtape::kernels::log_softmax_row;
use crate::gradtape::{Scalar, Tensor};

/// Row-wise argmax; ties go to the lowest index.
pub fn greedy_actions<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (j, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// One categorical draw per row from `softmax(logits)`.
pub fn sample_actions<T: Scalar, R: Rng + ?Sized>(logits: &Tensor<T>, rng: &mut R) -> Vec<usize> {
    let cols = logits.cols();
    let mut logp = vec![0.0f64; cols];
    (0..logits.rows())
        .map(|r| {
            let row: Vec<f64> = logits.row(r).iter().map(|x| x.as_f64()).collect();
            log_softmax_row(&row, &mut logp);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut last = 0;
            for (j, lp) in logp.iter().enumerate() {
                let p = lp.exp();
                if p > 0.0 {
                    last = j;
                }
                acc += p;
                if u < acc {
                    return j;
                }
            }
            last
        })
        .collect()
}
