//! RMSProp: cache = decay * cache + (1 - decay) * g^2,
//! param -= lr * g / (sqrt(cache) + eps).

use crate::error::{Error, Result};
use crate::transformer::model::GradientSet;
use crate::transformer::Tensor;

#[derive(Debug, Clone)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    cache: Vec<Tensor>,
}

impl RmsProp {
    pub fn new(learning_rate: f64, decay: f64, epsilon: f64) -> Self {
        RmsProp { learning_rate, decay, epsilon, cache: Vec::new() }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &GradientSet) -> Result<()> {
        if params.len() != grads.tensors.len() {
            return Err(Error::domain("optimizer parameter/gradient count mismatch"));
        }
        if self.cache.is_empty() {
            self.cache = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        for ((param, grad), cache) in params.into_iter().zip(&grads.tensors).zip(&mut self.cache) {
            if param.shape() != grad.shape() {
                return Err(Error::domain("optimizer shape mismatch"));
            }
            for ((p, &g), c) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(cache.data_mut())
            {
                *c = self.decay * *c + (1.0 - self.decay) * g * g;
                *p -= self.learning_rate * g / (c.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(v: f64) -> (Tensor, GradientSet) {
        (
            Tensor::from_vec(&[1], vec![v]).unwrap(),
            GradientSet { tensors: vec![Tensor::from_vec(&[1], vec![1.0]).unwrap()] },
        )
    }

    #[test]
    fn first_step_matches_hand_arithmetic() {
        // cache = 0.1, delta = -0.001 / (sqrt(0.1) + 1e-8).
        let (mut p, g) = single_param(2.0);
        let mut opt = RmsProp::new(0.001, 0.9, 1e-8);
        opt.step(vec![&mut p], &g).unwrap();
        let expected = 2.0 - 0.001 / (0.1f64.sqrt() + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
        assert!((p.data()[0] - (2.0 - 0.0031623)).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = GradientSet { tensors: vec![Tensor::zeros(&[3])] };
        let mut opt = RmsProp::new(0.01, 0.9, 1e-8);
        let before = p.clone();
        for _ in 0..5 {
            opt.step(vec![&mut p], &g).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn update_opposes_gradient_sign() {
        use rand::Rng;
        let mut r = crate::rng::stream(3, "rmsprop", 0);
        for _ in 0..50 {
            let g_val = r.random::<f64>() * 4.0 - 2.0;
            if g_val == 0.0 {
                continue;
            }
            let mut p = Tensor::from_vec(&[1], vec![r.random::<f64>()]).unwrap();
            let before = p.data()[0];
            let g = GradientSet { tensors: vec![Tensor::from_vec(&[1], vec![g_val]).unwrap()] };
            let mut opt = RmsProp::new(0.01, 0.9, 1e-8);
            opt.step(vec![&mut p], &g).unwrap();
            let delta = p.data()[0] - before;
            assert!(delta * g_val < 0.0, "delta {delta} vs gradient {g_val}");
        }
    }
}
