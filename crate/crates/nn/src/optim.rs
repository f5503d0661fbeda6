use ndarray::{Array2, Zip};

use crate::params::{ParamGrads, ParamStore};

/// Adam with bias correction and optional global-norm gradient clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || store.iter().map(|(_, _, a)| Array2::zeros(a.raw_dim())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: None, step: 0, m: zeros(), v: zeros() }
    }

    pub fn with_clip_norm(mut self, clip: f64) -> Self {
        self.clip_norm = Some(clip);
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// First and second moment estimates, indexed like the parameter store.
    pub fn moments(&self) -> (&[Array2<f64>], &[Array2<f64>]) {
        (&self.m, &self.v)
    }

    /// Restores a saved step count and moment estimates. Shapes must match
    /// the store the optimizer was created for.
    pub fn restore(&mut self, steps: u64, m: Vec<Array2<f64>>, v: Vec<Array2<f64>>) -> Result<(), String> {
        let same = |a: &[Array2<f64>], b: &[Array2<f64>]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.dim() == y.dim())
        };
        if !same(&m, &self.m) || !same(&v, &self.v) {
            return Err("optimizer state does not match the parameter shapes".into());
        }
        self.step = steps;
        self.m = m;
        self.v = v;
        Ok(())
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) {
        self.step += 1;
        let scale = match self.clip_norm {
            Some(c) => {
                let n = grads.global_norm();
                if n > c {
                    c / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let step_size = self.lr / bc1;
        let eps = self.eps;
        for id in store.ids().collect::<Vec<_>>() {
            let g = grads.get(id);
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            Zip::from(store.get_mut(id)).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                let g = g * scale;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step_size * *m / ((*v / bc2).sqrt() + eps);
            });
        }
    }
}
