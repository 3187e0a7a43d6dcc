//! Gate sparsity penalty whose weight tracks the classification loss and
//! grows with the epoch.

/// How the L1 weight evolves over epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum L1Schedule {
    /// `base + floor(epoch / every) * increment`.
    Stepped {
        base: f64,
        increment: f64,
        every: usize,
    },
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegConfig {
    pub l_min: f64,
    pub l_max: f64,
    pub lambda_max: f64,
    pub lambda_cls: f64,
    pub schedule: L1Schedule,
    /// Target number of open gates summed over the three colour channels.
    pub m_total: f64,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self {
            l_min: 0.2,
            l_max: 0.5,
            lambda_max: 0.25,
            lambda_cls: 0.1,
            schedule: L1Schedule::Stepped {
                base: 2.5e-4,
                increment: 1.25e-4,
                every: 5,
            },
            m_total: 63.0,
        }
    }
}

impl RegConfig {
    /// Per-channel target.
    pub fn target(&self) -> f64 {
        self.m_total / 3.0
    }

    pub fn lambda_l1(&self, epoch: usize) -> f64 {
        match self.schedule {
            L1Schedule::Stepped { base, increment, every } => base + (epoch / every.max(1)) as f64 * increment,
            L1Schedule::Constant(v) => v,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 <= self.l_min && self.l_min < self.l_max) {
            return Err(format!(
                "need 0 <= l_min < l_max, got {} and {}",
                self.l_min, self.l_max
            ));
        }
        if self.lambda_max <= 0.0 {
            return Err("lambda_max must be positive".into());
        }
        if self.m_total <= 0.0 {
            return Err("m_total must be positive".into());
        }
        Ok(())
    }
}

/// Classification loss mapped linearly from `[l_min, l_max]` onto
/// `[0, lambda_max]` and clamped.
pub fn normalized_cls_loss(l_cls: f64, cfg: &RegConfig) -> f64 {
    ((l_cls - cfg.l_min) / (cfg.l_max - cfg.l_min) * cfg.lambda_max).clamp(0.0, cfg.lambda_max)
}

/// Derivative of [`normalized_cls_loss`]; zero on the clamped parts.
pub fn normalized_cls_loss_grad(l_cls: f64, cfg: &RegConfig) -> f64 {
    if l_cls > cfg.l_min && l_cls < cfg.l_max {
        cfg.lambda_max / (cfg.l_max - cfg.l_min)
    } else {
        0.0
    }
}

/// Sparsity part only: mean absolute deviation of the per-channel score
/// sums from the target, times the epoch's L1 weight.
pub fn sparsity_loss(l1_per_channel: &[f64], epoch: usize, cfg: &RegConfig) -> f64 {
    let t = cfg.target();
    let mad = l1_per_channel.iter().map(|l| (l - t).abs()).sum::<f64>() / l1_per_channel.len() as f64;
    mad * cfg.lambda_l1(epoch)
}

pub fn reg_loss(l1_per_channel: &[f64], l_cls: f64, epoch: usize, cfg: &RegConfig) -> f64 {
    sparsity_loss(l1_per_channel, epoch, cfg) + cfg.lambda_cls * normalized_cls_loss(l_cls, cfg)
}

/// Gradient of the sparsity part with respect to each score of channel `c`;
/// every score of a channel gets the same value. Zero at the tie.
pub fn reg_vjp(l1_per_channel: &[f64], epoch: usize, cfg: &RegConfig) -> Vec<f64> {
    let t = cfg.target();
    let w = cfg.lambda_l1(epoch) / l1_per_channel.len() as f64;
    l1_per_channel
        .iter()
        .map(|&l| {
            if l > t {
                w
            } else if l < t {
                -w
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        let cfg = RegConfig::default();
        assert!((normalized_cls_loss(0.35, &cfg) - 0.125).abs() < 1e-15);
        assert_eq!(normalized_cls_loss(0.1, &cfg), 0.0);
        assert_eq!(normalized_cls_loss(0.9, &cfg), 0.25);

        let at_target = RegConfig {
            m_total: 42.0,
            ..cfg.clone()
        };
        assert_eq!(reg_loss(&[14.0; 3], 0.1, 0, &at_target), 0.0);
        assert!((reg_loss(&[42.0; 3], 0.1, 0, &cfg) - 5.25e-3).abs() < 1e-15);
        assert!((reg_loss(&[42.0; 3], 0.1, 5, &cfg) - 21.0 * 3.75e-4).abs() < 1e-15);
    }

    #[test]
    fn schedule_steps() {
        let cfg = RegConfig::default();
        let l: Vec<f64> = (0..12).map(|e| cfg.lambda_l1(e)).collect();
        assert!(l[..5].iter().all(|&v| v == 2.5e-4));
        assert!(l[5..10].iter().all(|&v| (v - 3.75e-4).abs() < 1e-18));
        assert!((l[10] - 5.0e-4).abs() < 1e-18);
        let constant = RegConfig {
            schedule: L1Schedule::Constant(0.01),
            ..cfg
        };
        assert_eq!(constant.lambda_l1(27), 0.01);
    }

    #[test]
    fn vjp_signs_and_differences() {
        let cfg = RegConfig::default();
        let g = reg_vjp(&[30.0, 21.0, 5.0], 3, &cfg);
        assert!(g[0] > 0.0 && g[1] == 0.0 && g[2] < 0.0);

        let l1 = [23.7, 12.2, 30.1];
        let g = reg_vjp(&l1, 7, &cfg);
        let h = 1e-6;
        for c in 0..3 {
            let mut p = l1;
            p[c] += h;
            let mut n = l1;
            n[c] -= h;
            let fd = (sparsity_loss(&p, 7, &cfg) - sparsity_loss(&n, 7, &cfg)) / (2.0 * h);
            assert!((fd - g[c]).abs() <= 1e-4 * fd.abs());
        }
    }

    #[test]
    fn bounded_monotone_and_permutation_invariant() {
        let cfg = RegConfig::default();
        let mut prev = 0.0;
        for i in 0..=100 {
            let v = normalized_cls_loss(i as f64 * 0.01, &cfg);
            assert!(v >= prev && (0.0..=cfg.lambda_max).contains(&v));
            prev = v;
        }
        let a = reg_loss(&[3.0, 40.0, 19.0], 0.3, 2, &cfg);
        let b = reg_loss(&[40.0, 19.0, 3.0], 0.3, 2, &cfg);
        assert_eq!(a, b);
        assert!(cfg.validate().is_ok());
        assert!(RegConfig { l_min: 0.6, ..cfg }.validate().is_err());
    }
}
