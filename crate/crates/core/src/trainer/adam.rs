use crate::encoder::{EncoderGrad, EncoderParams};
use crate::error::Result;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Bias-corrected Adam over a flat parameter vector, no weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    lr: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Self {
            lr,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }

    /// One step on an encoder, parameters in `w`, `w_self`, `bias` order.
    pub fn step_encoder(&mut self, params: &mut EncoderParams, grad: &EncoderGrad) -> Result<()> {
        let mut flat: Vec<f64> = params
            .w
            .data()
            .iter()
            .chain(params.w_self.data())
            .chain(&params.bias)
            .copied()
            .collect();
        let g: Vec<f64> = grad
            .gw
            .data()
            .iter()
            .chain(grad.gw_self.data())
            .chain(&grad.gbias)
            .copied()
            .collect();
        self.update(&mut flat, &g);
        let (a, b) = (params.w.data().len(), params.w_self.data().len());
        params.w.data_mut().copy_from_slice(&flat[..a]);
        params.w_self.data_mut().copy_from_slice(&flat[a..a + b]);
        params.bias.copy_from_slice(&flat[a + b..]);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_descends_monotonically() {
        // f(x) = ½ Σ a_i x_i², well below the step size that would overshoot
        let a = [1.0, 4.0, 0.5];
        let f = |x: &[f64]| 0.5 * x.iter().zip(&a).map(|(x, a)| a * x * x).sum::<f64>();
        let mut x = vec![2.0, -1.5, 3.0];
        let mut opt = Adam::new(0.01, 3);
        let mut prev = f(&x);
        for _ in 0..150 {
            let g: Vec<f64> = x.iter().zip(&a).map(|(x, a)| a * x).collect();
            opt.update(&mut x, &g);
            let cur = f(&x);
            assert!(cur < prev, "{cur} >= {prev}");
            prev = cur;
        }
        assert!(prev < 0.5 * f(&[2.0, -1.5, 3.0]));
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut x = vec![1.0, -1.0];
        let mut opt = Adam::new(0.1, 2);
        opt.update(&mut x, &[3.0, -0.01]);
        assert!((x[0] - 0.9).abs() < 1e-6);
        assert!((x[1] + 0.9).abs() < 1e-5);
    }
}
