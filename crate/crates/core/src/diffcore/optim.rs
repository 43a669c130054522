use super::{DiffError, Real, Tensor};

/// Adaptive-moment optimizer state for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState<T> {
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> OptState<T> {
    /// Zeroed moments shaped like `params`, with the usual (0.9, 0.999, 1e-8).
    pub fn new(params: &[Tensor<T>], lr: f64) -> Self {
        Self {
            first_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params` from `grads`.
pub fn adam_step<T: Real>(params: &mut [Tensor<T>], grads: &[Tensor<T>], state: &mut OptState<T>) -> Result<(), DiffError> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(DiffError::Shape(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(DiffError::Shape(format!(
                "adam: parameter {:?} vs gradient {:?} vs moment {:?}",
                p.shape(),
                g.shape(),
                m.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(state.beta1);
    let b2 = T::from_f64(state.beta2);
    let one = T::one();
    let c1 = T::from_f64(1.0 - state.beta1.powi(t));
    let c2 = T::from_f64(1.0 - state.beta2.powi(t));
    let lr = T::from_f64(state.lr);
    let eps = T::from_f64(state.eps);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (one - b1) * gv;
            *vv = b2 * *vv + (one - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = vec![Tensor::<f64>::zeros(&[1])];
        let grads = vec![Tensor::from_f64(&[1], &[1.0]).unwrap()];
        let mut state = OptState::new(&params, 0.1);
        adam_step(&mut params, &grads, &mut state).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((params[0].data()[0] - expected).abs() < 1e-15);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut params = vec![Tensor::<f64>::from_f64(&[2], &[0.5, -1.0]).unwrap()];
        let mut state = OptState::new(&params, 0.01);
        state.first_moment[0] = Tensor::from_f64(&[2], &[0.0, 0.0]).unwrap();
        state.second_moment[0] = Tensor::from_f64(&[2], &[0.0, 0.0]).unwrap();
        let grads = vec![Tensor::zeros(&[2])];
        adam_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params[0].data(), &[0.5, -1.0]);

        state.first_moment[0] = Tensor::from_f64(&[2], &[1.0, -2.0]).unwrap();
        state.second_moment[0] = Tensor::from_f64(&[2], &[4.0, 4.0]).unwrap();
        let before = params[0].clone();
        adam_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(state.first_moment[0].data(), &[0.9, -1.8]);
        assert!((state.second_moment[0].data()[0] - 3.996).abs() < 1e-12);
        // stale momentum still moves the parameter, but the moments shrink
        assert_ne!(params[0], before);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = vec![Tensor::<f32>::zeros(&[2])];
        let mut state = OptState::new(&params, 0.1);
        let grads = vec![Tensor::zeros(&[3])];
        assert!(adam_step(&mut params, &grads, &mut state).is_err());
    }

    #[test]
    fn identical_state_gives_identical_result() {
        let p0 = vec![Tensor::<f32>::from_f64(&[3], &[0.1, 0.2, 0.3]).unwrap()];
        let g = vec![Tensor::<f32>::from_f64(&[3], &[0.7, -0.3, 1e-3]).unwrap()];
        let run = || {
            let mut p = p0.clone();
            let mut s = OptState::new(&p, 3e-4);
            for _ in 0..10 {
                adam_step(&mut p, &g, &mut s).unwrap();
            }
            (p, s)
        };
        let (pa, sa) = run();
        let (pb, sb) = run();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&pa[0]), bits(&pb[0]));
        assert_eq!(sa, sb);
    }
}
