use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// First/second moment estimates and step count for ADAM.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected ADAM update.
///
/// A non-finite gradient aborts the step before anything is modified.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidArgument(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::shape(p.shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter tensor {i}")));
        }
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let mhat = *mv / c1;
            let vhat = *vv / c2;
            *pv -= lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::filled(&[1], 1.0)];
        let g = vec![Tensor::filled(&[1], 1.0)];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 1e-3).unwrap();
        // closed form: lr · g / (|g| + eps)
        let expect = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((p[0].data()[0] - expect).abs() < 1e-15);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::filled(&[3], 0.5)];
        let g = vec![Tensor::zeros(&[3])];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 1e-3).unwrap();
        assert_eq!(p[0].data(), &[0.5; 3]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = vec![Tensor::filled(&[1], 1.0)];
        let mut s = AdamState::new(&p);
        for _ in 0..500 {
            let g = vec![p[0].map(|x| 2.0 * x)];
            adam_step(&mut p, &g, &mut s, 0.1).unwrap();
        }
        assert!(p[0].data()[0].abs() < 1e-3, "{}", p[0].data()[0]);
    }

    #[test]
    fn non_finite_gradient_skips_step() {
        let mut p = vec![Tensor::filled(&[2], 1.0)];
        let g = vec![Tensor::from_vec(&[2], vec![1.0, f64::NAN]).unwrap()];
        let mut s = AdamState::new(&p);
        assert!(matches!(adam_step(&mut p, &g, &mut s, 1e-3), Err(Error::NonFinite(_))));
        assert_eq!(p[0].data(), &[1.0, 1.0]);
        assert_eq!(s.t, 0);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![Tensor::filled(&[2], 1.0)];
        let g = vec![Tensor::zeros(&[3])];
        let mut s = AdamState::new(&p);
        assert!(adam_step(&mut p, &g, &mut s, 1e-3).is_err());
    }
}
