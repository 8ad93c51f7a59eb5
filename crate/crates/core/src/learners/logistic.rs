//! L2-penalized logistic regression trained by full-batch gradient descent.
//!
//! The step size is 1/L with L a Gershgorin bound on the penalized Hessian,
//! so the (convex, smooth) objective is non-increasing at every iteration.
//! The intercept is not penalized. Training stops when the gradient norm
//! drops below the configured tolerance or the iteration cap is reached.

use super::{FeatureMatrix, LearnerSpec};

#[derive(Debug, Clone)]
pub struct LogisticModel {
    weights: Vec<f64>,
    intercept: f64,
}

impl LogisticModel {
    pub fn predict_one(&self, x: &[f64]) -> f64 {
        let z = self.intercept
            + self
                .weights
                .iter()
                .zip(x)
                .map(|(w, v)| w * v)
                .sum::<f64>();
        sigmoid(z)
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-35.0, 35.0);
    1.0 / (1.0 + (-z).exp())
}

pub(super) fn train(spec: &LearnerSpec, features: &FeatureMatrix, labels: &[f64]) -> LogisticModel {
    let n = features.n_rows();
    let k = features.n_cols();
    let nf = n as f64;

    // Gershgorin bound on the Hessian of the mean log-loss: each entry of
    // X'SX/n is at most max|x_ij x_il|/4.
    let mut col_max = vec![0.0f64; k];
    for i in 0..n {
        for (j, v) in features.row(i).iter().enumerate() {
            col_max[j] = col_max[j].max(v.abs());
        }
    }
    let row_bound: f64 = 1.0 + col_max.iter().sum::<f64>();
    let max_entry = col_max.iter().cloned().fold(1.0f64, f64::max);
    let lipschitz = 0.25 * row_bound * max_entry + spec.l2_penalty;
    let step = 1.0 / lipschitz;

    let mut weights = vec![0.0f64; k];
    let mut intercept = 0.0f64;
    let mut grad_w = vec![0.0f64; k];

    let objective = |w: &[f64], b: f64| -> f64 {
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let z = b + dot(w, features.row(i));
            let p = sigmoid(z).clamp(1e-300, 1.0 - 1e-16);
            loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        loss / nf + 0.5 * spec.l2_penalty * w.iter().map(|v| v * v).sum::<f64>()
    };

    let mut prev_obj = objective(&weights, intercept);
    for _ in 0..spec.max_iterations {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = features.row(i);
            let resid = sigmoid(intercept + dot(&weights, row)) - y;
            grad_b += resid;
            for (g, v) in grad_w.iter_mut().zip(row) {
                *g += resid * v;
            }
        }
        grad_b /= nf;
        for (g, w) in grad_w.iter_mut().zip(&weights) {
            *g = *g / nf + spec.l2_penalty * w;
        }

        let grad_norm = (grad_b * grad_b + grad_w.iter().map(|g| g * g).sum::<f64>()).sqrt();
        if grad_norm <= spec.convergence_tolerance {
            break;
        }

        intercept -= step * grad_b;
        for (w, g) in weights.iter_mut().zip(&grad_w) {
            *w -= step * g;
        }

        let obj = objective(&weights, intercept);
        debug_assert!(
            obj <= prev_obj + 1e-10,
            "objective increased: {prev_obj} -> {obj}"
        );
        prev_obj = obj;
    }

    LogisticModel { weights, intercept }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
