//! Adam with bias correction.

use crate::mat::Mat;
use crate::params::ParamStore;
use crate::tape::Grads;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Mat<f32>>,
    pub v: Vec<Mat<f32>>,
}

impl Adam {
    pub fn new(params: &ParamStore<f32>, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Mat<f32>> = params.values().iter().map(|p| Mat::zeros(p.rows, p.cols)).collect();
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &Grads<f32>) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let step = (self.learning_rate * c2.sqrt() / c1) as f32;
        let eps = (self.epsilon * c2.sqrt()) as f32;
        let (b1, b2) = (b1 as f32, b2 as f32);
        for (id, g) in grads.params.iter().enumerate() {
            let p = params.value_mut(id);
            let (m, v) = (&mut self.m[id].data, &mut self.v[id].data);
            for i in 0..g.data.len() {
                let gi = g.data[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p.data[i] -= step * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ParamStore::new();
        p.add("x", Mat::from_vec(1, 3, vec![1.0f32, -2.0, 0.5]));
        let mut adam = Adam::new(&p, 1e-2, 0.9, 0.999, 1e-8);
        let g = Grads {
            params: vec![Mat::from_vec(1, 3, vec![3.0f32, -0.1, 0.0])],
        };
        adam.step(&mut p, &g);
        let x = &p.value(0).data;
        assert!((x[0] - 0.99).abs() < 1e-6);
        assert!((x[1] + 1.99).abs() < 1e-6);
        assert_eq!(x[2], 0.5);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = ParamStore::new();
        p.add("x", Mat::from_vec(1, 2, vec![3.0f32, -4.0]));
        let mut adam = Adam::new(&p, 0.05, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let g = Grads {
                params: vec![Mat::from_vec(1, 2, p.value(0).data.iter().map(|x| 2.0 * x).collect())],
            };
            adam.step(&mut p, &g);
        }
        assert!(p.value(0).data.iter().all(|x| x.abs() < 1e-2));
    }
}
