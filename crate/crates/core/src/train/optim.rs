//! Adam with L2 weight decay and a cosine learning-rate schedule.

use crate::params::Parameters;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Learning rate for `epoch` out of `epochs`, decaying from `base` to 0.
pub fn cosine_lr(base: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs == 0 {
        return base;
    }
    0.5 * base * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    /// Per-element flag: apply weight decay.
    decay: Vec<bool>,
}

impl Adam {
    /// `no_decay` decides per tensor name whether weight decay is skipped.
    pub fn new<P: Parameters>(params: &P, cfg: AdamConfig, no_decay: impl Fn(&str) -> bool) -> Self {
        let n = params.num_params();
        let mut decay = Vec::with_capacity(n);
        params.visit(&mut |name, _, v| decay.extend(std::iter::repeat_n(!no_decay(name), v.len())));
        Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            decay,
        }
    }

    pub fn apply<P: Parameters>(&mut self, params: &mut P, grads: &P, lr: f64) {
        let g = grads.flatten();
        assert_eq!(g.len(), self.m.len(), "gradient size differs from optimizer state");
        self.step += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let mut i = 0;
        let (m, v, decay) = (&mut self.m, &mut self.v, &self.decay);
        params.visit_mut(&mut |_, p| {
            for x in p.iter_mut() {
                let gi = if decay[i] { g[i] + c.weight_decay * *x } else { g[i] };
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                *x -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
                i += 1;
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quad(Vec<f64>);

    impl Parameters for Quad {
        fn visit(&self, f: &mut crate::params::TensorVisitor) {
            f("x", &[self.0.len()], &self.0);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
            f("x", &mut self.0);
        }
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0.002, 0, 30), 0.002);
        assert!((cosine_lr(0.002, 15, 30) - 0.001).abs() < 1e-15);
        assert!(cosine_lr(0.002, 30, 30).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Quad(vec![1.0, -2.0, 0.0]);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = Adam::new(&p, cfg, |_| false);
        opt.apply(&mut p, &Quad(vec![3.0, -0.5, 0.0]), 0.1);
        assert!((p.0[0] - 0.9).abs() < 1e-7);
        assert!((p.0[1] + 1.9).abs() < 1e-7);
        assert_eq!(p.0[2], 0.0);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = Quad(vec![3.0, -4.0]);
        let mut opt = Adam::new(&p, AdamConfig::default(), |_| false);
        for _ in 0..3000 {
            let g = Quad(p.0.iter().map(|x| 2.0 * x).collect());
            opt.apply(&mut p, &g, 0.05);
        }
        assert!(p.0.iter().all(|x| x.abs() < 1e-3), "{:?}", p.0);
    }
}
