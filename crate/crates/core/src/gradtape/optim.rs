use super::params::ParamSet;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Adam moments for every parameter of a [`ParamSet`], in the same order.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update using the accumulated gradients.
///
/// Gradients are checked for NaN/Inf before any value is touched.
pub fn adam_step<T: Scalar>(params: &mut ParamSet<T>, state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::precondition(
            "adam_step",
            format!("optimizer tracks {} tensors, parameter set has {}", state.m.len(), params.len()),
        ));
    }
    if let Some(bad) = params.iter().find(|p| !p.grad.all_finite()) {
        return Err(Error::NonFinite {
            context: format!("gradient of parameter {}", bad.name),
        });
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    let (b1t, b2t) = (T::of(b1), T::of(b2));
    let (ob1, ob2) = (T::of(1.0 - b1), T::of(1.0 - b2));
    let step = T::of(lr / bc1);
    let inv_bc2_sqrt = T::of(1.0 / bc2.sqrt());
    let eps = T::of(state.eps);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let g = p.grad.data();
        let theta = p.value.data_mut();
        for i in 0..theta.len() {
            let gi = g[i];
            let mi = b1t * m.data()[i] + ob1 * gi;
            let vi = b2t * v.data()[i] + ob2 * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            theta[i] -= step * mi / (vi.sqrt() * inv_bc2_sqrt + eps);
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
///
/// Returns the norm measured before clipping.
pub fn clip_global_norm<T: Scalar>(params: &mut ParamSet<T>, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        for p in params.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        let id = ps.insert("x", Tensor::scalar(value)).unwrap();
        ps.get_mut(id).grad = Tensor::scalar(grad);
        ps
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut ps = single(1.0, 0.5);
        let mut st = AdamState::new(&ps);
        adam_step(&mut ps, &mut st, 0.1).unwrap();
        let delta = ps.by_name("x").unwrap().value.data()[0] - 1.0;
        let expected = -0.1 * 0.5 / (0.5 + 1e-8);
        assert!((delta - expected).abs() < 1e-12, "{delta}");
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_from_fresh_state_is_identity() {
        let mut ps = single(0.7, 0.0);
        let mut st = AdamState::new(&ps);
        adam_step(&mut ps, &mut st, 0.1).unwrap();
        assert_eq!(ps.by_name("x").unwrap().value.data()[0], 0.7);
    }

    #[test]
    fn first_step_opposes_gradient_sign() {
        for g in [-3.0, -1e-3, 2e-4, 5.0] {
            let mut ps = single(0.0, g);
            let mut st = AdamState::new(&ps);
            adam_step(&mut ps, &mut st, 1e-3).unwrap();
            let moved = ps.by_name("x").unwrap().value.data()[0];
            assert_eq!(moved.signum(), -g.signum());
        }
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut ps = single(0.0, f64::NAN);
        let mut st = AdamState::new(&ps);
        let err = adam_step(&mut ps, &mut st, 0.1).unwrap_err();
        assert!(err.to_string().contains("parameter x"), "{err}");
        assert_eq!(st.t, 0);
    }

    #[test]
    fn clip_scales_only_above_threshold() {
        let mut ps = ParamSet::<f64>::new();
        let id = ps.insert("w", Tensor::zeros(&[2])).unwrap();
        ps.get_mut(id).grad = Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        let before = clip_global_norm(&mut ps, 0.5);
        assert_eq!(before, 5.0);
        let g = ps.get(id).grad.data();
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] - 0.4).abs() < 1e-15);

        ps.get_mut(id).grad = Tensor::from_vec(&[2], vec![0.18, 0.24]).unwrap();
        clip_global_norm(&mut ps, 0.5);
        assert_eq!(ps.get(id).grad.data(), &[0.18, 0.24]);

        ps.zero_grad();
        clip_global_norm(&mut ps, 0.5);
        assert_eq!(ps.get(id).grad.data(), &[0.0, 0.0]);
    }
}
