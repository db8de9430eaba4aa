//! Adaptive-moment gradient steps over lists of matrices.

use crate::numkit::Mat;

pub const MAX_GRAD_NORM: f64 = 100.0;

/// First and second moment state for one parameter group.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(params: &[Mat], lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.iter().map(|p| Mat::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Mat::zeros(p.rows(), p.cols())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Mat], grads: &[Mat]) {
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.m[i] = self.m[i].scale(self.beta1).add(&g.scale(1.0 - self.beta1));
            self.v[i] = self.v[i]
                .scale(self.beta2)
                .add(&g.zip_with(g, |x, y| x * y).scale(1.0 - self.beta2));
            let update = self.m[i].zip_with(&self.v[i], |m, v| {
                self.lr * (m / bc1) / ((v / bc2).sqrt() + self.eps)
            });
            *p = p.sub(&update);
        }
    }
}

/// Scale every gradient so the joint norm across all groups stays at
/// or below `max_norm`.
pub fn clip_gradients(groups: &mut [&mut Vec<Mat>], max_norm: f64) -> f64 {
    let total: f64 = groups
        .iter()
        .flat_map(|g| g.iter())
        .map(|m| {
            let n = m.frobenius_norm();
            n * n
        })
        .sum::<f64>()
        .sqrt();
    if total > max_norm && total > 0.0 {
        let s = max_norm / total;
        for g in groups.iter_mut() {
            for m in g.iter_mut() {
                *m = m.scale(s);
            }
        }
    }
    total
}
