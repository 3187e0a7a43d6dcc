//! Central finite-difference check of analytic gradients.

use rayon::prelude::*;

use crate::params::Parameters;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    pub max_rel_err: f64,
    /// Offset of the worst element inside the tensor.
    pub worst: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares `analytic` (same layout as `params`) with central differences of
/// `loss` at every element, and reports the worst element per tensor.
pub fn check_gradients<P, F>(params: &P, analytic: &P, loss: F, step: f64, floor: f64) -> Vec<TensorCheck>
where
    P: Parameters + Clone + Sync,
    F: Fn(&P) -> f64 + Sync,
{
    let base = params.flatten();
    let grad = analytic.flatten();
    assert_eq!(base.len(), grad.len(), "gradient layout differs from parameters");
    let numeric: Vec<f64> = (0..base.len())
        .into_par_iter()
        .map_init(
            || params.clone(),
            |p, i| {
                let mut x = base.clone();
                x[i] = base[i] + step;
                p.assign(&x);
                let up = loss(p);
                x[i] = base[i] - step;
                p.assign(&x);
                let down = loss(p);
                (up - down) / (2.0 * step)
            },
        )
        .collect();

    let mut out = Vec::new();
    let mut at = 0;
    params.visit(&mut |name, _, v| {
        let mut t = TensorCheck {
            name: name.to_string(),
            len: v.len(),
            max_rel_err: 0.0,
            worst: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for k in 0..v.len() {
            let e = relative_error(grad[at + k], numeric[at + k], floor);
            if e > t.max_rel_err || k == 0 {
                t.max_rel_err = e;
                t.worst = k;
                t.analytic = grad[at + k];
                t.numeric = numeric[at + k];
            }
        }
        at += v.len();
        out.push(t);
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone)]
    struct Two(Vec<f64>, Vec<f64>);

    impl Parameters for Two {
        fn visit(&self, f: &mut crate::params::TensorVisitor) {
            f("a", &[self.0.len()], &self.0);
            f("b", &[self.1.len()], &self.1);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
            f("a", &mut self.0);
            f("b", &mut self.1);
        }
    }

    fn loss(p: &Two) -> f64 {
        p.0.iter().map(|x| x.sin()).sum::<f64>() * p.1.iter().map(|x| x * x).sum::<f64>()
    }

    #[test]
    fn exact_gradient_passes_and_wrong_one_fails() {
        let p = Two(vec![0.3, -1.2], vec![0.5, 2.0, -0.7]);
        let s: f64 = p.0.iter().map(|x| x.sin()).sum();
        let q: f64 = p.1.iter().map(|x| x * x).sum();
        let good = Two(
            p.0.iter().map(|x| x.cos() * q).collect(),
            p.1.iter().map(|x| 2.0 * x * s).collect(),
        );
        let r = check_gradients(&p, &good, loss, 1e-5, 1e-8);
        assert!(r.iter().all(|t| t.max_rel_err < 1e-8), "{r:?}");

        let mut bad = good.clone();
        bad.1[2] *= 1.01;
        let r = check_gradients(&p, &bad, loss, 1e-5, 1e-8);
        assert!(r[0].max_rel_err < 1e-8);
        assert_eq!(r[1].worst, 2);
        assert!(r[1].max_rel_err > 5e-3);
    }
}
