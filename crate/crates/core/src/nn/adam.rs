use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::error::{Error, Result};

/// Adam with bias correction. Moment buffers are keyed by visit order of
/// the parameter tensors, so a model must always visit them identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(1e-3)
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter tensor of `model`.
    pub fn step(&mut self, model: &mut dyn Parameters) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (m_all, v_all) = (&mut self.m, &mut self.v);
        let mut slot = 0usize;
        let mut failure = None;
        model.for_each_param(&mut |params, grads| {
            if failure.is_some() {
                return;
            }
            if params.len() != grads.len() {
                failure = Some(format!(
                    "parameter tensor {slot}: {} params vs {} grads",
                    params.len(),
                    grads.len()
                ));
                return;
            }
            if m_all.len() <= slot {
                m_all.push(vec![0.0; params.len()]);
                v_all.push(vec![0.0; params.len()]);
            }
            let (m, v) = (&mut m_all[slot], &mut v_all[slot]);
            if m.len() != params.len() {
                failure = Some(format!("parameter tensor {slot} changed shape"));
                return;
            }
            for i in 0..params.len() {
                let g = grads[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                params[i] -= lr * mh / (vh.sqrt() + eps);
            }
            slot += 1;
        });
        match failure {
            Some(msg) => Err(Error::Shape(msg)),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Flat {
        p: Vec<f64>,
        g: Vec<f64>,
    }

    impl Parameters for Flat {
        fn for_each_param(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
            f(&mut self.p, &self.g);
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut model = Flat {
            p: vec![1.0, -2.0],
            g: vec![0.0, 0.0],
        };
        let mut adam = Adam::default();
        for _ in 0..5 {
            adam.step(&mut model).unwrap();
        }
        assert_eq!(model.p, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_magnitude() {
        let mut model = Flat {
            p: vec![0.0],
            g: vec![1.0],
        };
        let mut adam = Adam::default();
        adam.step(&mut model).unwrap();
        assert!((model.p[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut model = Flat {
                p: vec![0.3, 0.1],
                g: vec![0.0; 2],
            };
            let mut adam = Adam::default();
            for k in 0..50 {
                model.g = model.p.iter().map(|x| 2.0 * x + 0.01 * k as f64).collect();
                adam.step(&mut model).unwrap();
            }
            model.p
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut model = Flat {
            p: vec![0.0; 2],
            g: vec![0.0],
        };
        assert!(Adam::default().step(&mut model).is_err());
    }
}
