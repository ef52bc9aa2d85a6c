//! Adam optimizer with global gradient-norm clipping.

use super::mat::Mat;
use super::params::ParamSet;

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let m = params
            .iter()
            .map(|(_, p)| Mat::zeros(p.rows(), p.cols()))
            .collect::<Vec<_>>();
        let v = m.clone();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m,
            v,
            t: 0,
        }
    }

    /// One update step. `grads` must be aligned with the parameter order.
    /// Gradients are scaled down if their global L2 norm exceeds `clip`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Mat], clip: f64) {
        assert_eq!(grads.len(), params.len(), "grad count");
        let norm: f64 = grads.iter().map(Mat::frobenius_sq).sum::<f64>().sqrt();
        let scale = if clip > 0.0 && norm > clip {
            clip / norm
        } else {
            1.0
        };

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);

        for (idx, (_, p)) in params.iter_mut().enumerate() {
            let g = &grads[idx];
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..p.len() {
                let gi = g.as_slice()[i] * scale;
                let mi = self.beta1 * m.as_slice()[i] + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v.as_slice()[i] + (1.0 - self.beta2) * gi * gi;
                m.as_mut_slice()[i] = mi;
                v.as_mut_slice()[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                p.as_mut_slice()[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_a_quadratic() {
        // Minimize (x - 3)^2 starting at 0.
        let mut params = ParamSet::new();
        params.push("x", Mat::scalar(0.0));
        let mut opt = Adam::new(&params, 0.1);
        for _ in 0..500 {
            let x = params.get("x").at(0, 0);
            let grad = vec![Mat::scalar(2.0 * (x - 3.0))];
            opt.step(&mut params, &grad, 5.0);
        }
        assert!((params.get("x").at(0, 0) - 3.0).abs() < 1e-3);
    }

    #[test]
    fn clipping_bounds_update_magnitude() {
        let mut params = ParamSet::new();
        params.push("x", Mat::scalar(0.0));
        let mut opt = Adam::new(&params, 0.1);
        let grad = vec![Mat::scalar(1e9)];
        opt.step(&mut params, &grad, 5.0);
        // A single Adam step moves by at most lr regardless of gradient size.
        assert!(params.get("x").at(0, 0).abs() <= 0.1 + 1e-12);
    }
}
