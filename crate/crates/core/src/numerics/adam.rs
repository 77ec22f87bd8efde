use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig { learning_rate, ..Self::default() }
    }
}

/// Moment accumulators for a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamState<T: Element = f32> {
    pub config: AdamConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Element> AdamState<T> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let (first, second): (Vec<_>, Vec<_>) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        AdamState { config, first, second, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` with `grads`. A `None`
    /// gradient counts as zero.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Option<&Tensor<T>>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::contract(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.first[i].shape() || g.is_some_and(|g| g.shape() != p.shape()) {
                return Err(Error::contract(format!("adam: shape mismatch on parameter {i}")));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = grads[i] else {
                // Moments still decay so that later steps see consistent history.
                for (m, v) in self.first[i].data_mut().iter_mut().zip(self.second[i].data_mut()) {
                    *m = T::from_f64(c.beta1 * m.as_f64());
                    *v = T::from_f64(c.beta2 * v.as_f64());
                }
                continue;
            };
            let (m, v) = (self.first[i].data_mut(), self.second[i].data_mut());
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gf = gv.as_f64();
                let m_new = c.beta1 * mv.as_f64() + (1.0 - c.beta1) * gf;
                let v_new = c.beta2 * vv.as_f64() + (1.0 - c.beta2) * gf * gf;
                *mv = T::from_f64(m_new);
                *vv = T::from_f64(v_new);
                let m_hat = m_new / bias1;
                let v_hat = v_new / bias2;
                *pv = T::from_f64(pv.as_f64() - c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor::new(vec![3], vec![1.0f32, -2.0, 0.5]).unwrap()];
        let before = params.clone();
        let mut state = AdamState::new(AdamConfig::default(), &params);
        let zero = Tensor::zeros(&[3]);
        for _ in 0..5 {
            state.step(&mut params, &[Some(&zero)]).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = vec![Tensor::scalar(0.0f32)];
        let mut state = AdamState::new(AdamConfig::with_learning_rate(0.001), &params);
        let g = Tensor::scalar(1.0f32);
        state.step(&mut params, &[Some(&g)]).unwrap();
        assert!((params[0].item() as f64 + 0.001).abs() < 1e-6, "{}", params[0].item());
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut params = vec![Tensor::new(vec![4], vec![0.1f32, 0.2, 0.3, 0.4]).unwrap()];
            let mut state = AdamState::new(AdamConfig::default(), &params);
            for k in 0..20 {
                let g = Tensor::new(vec![4], (0..4).map(|i| ((i + k) as f32 * 0.37).sin()).collect()).unwrap();
                state.step(&mut params, &[Some(&g)]).unwrap();
            }
            params[0].data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = vec![Tensor::<f32>::zeros(&[2])];
        let mut state = AdamState::new(AdamConfig::default(), &params);
        let g = Tensor::zeros(&[3]);
        assert!(matches!(state.step(&mut params, &[Some(&g)]), Err(Error::Contract(_))));
        assert_eq!(state.step_count(), 0);
    }
}
