//! Adam optimizer over a fixed list of matrices.

use crate::tape::Matrix;

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new<I: IntoIterator<Item = (usize, usize)>>(lr: f64, shapes: I) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = shapes
            .into_iter()
            .map(|(r, c)| (Matrix::zeros(r, c), Matrix::zeros(r, c)))
            .unzip();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m,
            v,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// One update; `params[i]` and `grads[i]` must have the registered shapes.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let g = grads[i].data();
            let p = params[i].data_mut();
            assert_eq!(p.len(), g.len());
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut x = vec![Matrix::row_vector(vec![3.0, -2.0])];
        let mut adam = Adam::new(0.1, [(1, 2)]);
        for _ in 0..500 {
            let g = Matrix::row_vector(x[0].data().iter().map(|v| 2.0 * v).collect());
            adam.step(&mut x, &[g]);
        }
        assert!(x[0].data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut x = vec![Matrix::scalar(1.0)];
        let mut adam = Adam::new(0.01, [(1, 1)]);
        adam.step(&mut x, &[Matrix::scalar(5.0)]);
        assert!((x[0].data()[0] - 0.99).abs() < 1e-9);
    }
}
