//! L2-regularised logistic regression fitted by full-batch gradient descent.

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_training, sigmoid};
use crate::error::{Error, Result};

/// Rows per partial sum. Fixed so results do not depend on the thread count.
const CHUNK_ROWS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegParams {
    pub l2: f64,
    pub lr: f64,
    pub max_iter: usize,
    /// Stop once the gradient's max-norm falls below this.
    pub tol: f64,
}

impl Default for LogRegParams {
    fn default() -> Self {
        Self { l2: 1e-4, lr: 0.1, max_iter: 5000, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub theta: Vec<f64>,
    pub b: f64,
    pub params: LogRegParams,
    pub iterations: usize,
    pub converged: bool,
    pub feature_count: usize,
}

impl LogRegModel {
    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        sigmoid(row.iter().zip(&self.theta).map(|(x, t)| x * t).sum::<f64>() + self.b)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Sums over rows of a row-major matrix: log-loss (when requested), the
/// gradient of the summed log-loss, and whether every logit was finite.
fn pass(x: &[f64], d: usize, labels: &[u8], theta: &[f64], b: f64, with_loss: bool) -> (f64, Vec<f64>, f64, bool) {
    let n = labels.len();
    let partials: Vec<(f64, Vec<f64>, f64, bool)> = (0..n.div_ceil(CHUNK_ROWS))
        .into_par_iter()
        .map(|c| {
            let (lo, hi) = (c * CHUNK_ROWS, ((c + 1) * CHUNK_ROWS).min(n));
            let mut loss = 0.0;
            let mut g = vec![0.0; d];
            let mut gb = 0.0;
            let mut finite = true;
            for i in lo..hi {
                let row = &x[i * d..(i + 1) * d];
                let z = dot(row, theta) + b;
                finite &= z.is_finite();
                let y = f64::from(labels[i]);
                let e = (-z.abs()).exp();
                if with_loss {
                    loss += z.max(0.0) + e.ln_1p() - y * z;
                }
                let p = if z >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                let r = p - y;
                for (gj, xj) in g.iter_mut().zip(row) {
                    *gj += r * xj;
                }
                gb += r;
            }
            (loss, g, gb, finite)
        })
        .collect();

    let mut loss = 0.0;
    let mut grad = vec![0.0; d];
    let mut grad_b = 0.0;
    let mut finite = true;
    for (l, g, gb, f) in partials {
        loss += l;
        for (a, v) in grad.iter_mut().zip(g) {
            *a += v;
        }
        grad_b += gb;
        finite &= f;
    }
    (loss, grad, grad_b, finite)
}

fn regularise(loss: f64, grad: &mut [f64], grad_b: f64, theta: &[f64], l2: f64, n: usize) -> (f64, f64) {
    let inv_n = 1.0 / n as f64;
    for (gj, t) in grad.iter_mut().zip(theta) {
        *gj = *gj * inv_n + l2 * t;
    }
    (loss * inv_n + 0.5 * l2 * theta.iter().map(|t| t * t).sum::<f64>(), grad_b * inv_n)
}

/// Objective `mean(log-loss) + l2/2 * |theta|^2` and its gradient with
/// respect to `theta` and `b`.
pub fn loss_and_gradient(
    features: &Array2<f64>,
    labels: &[u8],
    theta: &[f64],
    b: f64,
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let x = features.as_standard_layout();
    let d = features.ncols();
    let flat = x.as_slice().expect("standard layout is contiguous");
    let (loss, mut grad, grad_b, _) = pass(flat, d, labels, theta, b, true);
    let (loss, grad_b) = regularise(loss, &mut grad, grad_b, theta, l2, labels.len());
    (loss, grad, grad_b)
}

pub fn fit_logreg(features: &Array2<f64>, labels: &[u8], params: &LogRegParams) -> Result<LogRegModel> {
    check_training(features, labels)?;
    if !(params.lr > 0.0 && params.l2 >= 0.0 && params.tol >= 0.0) {
        return Err(Error::Config(format!("invalid logistic regression parameters {params:?}")));
    }
    let d = features.ncols();
    let x = features.as_standard_layout();
    let flat = x.as_slice().expect("standard layout is contiguous");
    let mut theta = vec![0.0; d];
    let mut b = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iter {
        // the log-loss is finite whenever every logit is
        let (_, mut grad, grad_b, finite) = pass(flat, d, labels, &theta, b, false);
        if !finite {
            return Err(Error::Numerical("logistic regression loss is not finite; normalise the features".into()));
        }
        let (_, grad_b) = regularise(0.0, &mut grad, grad_b, &theta, params.l2, labels.len());
        let gmax = grad.iter().fold(grad_b.abs(), |m, g| m.max(g.abs()));
        if gmax < params.tol {
            converged = true;
            break;
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= params.lr * g;
        }
        b -= params.lr * grad_b;
        iterations += 1;
    }
    if theta.iter().any(|t| !t.is_finite()) || !b.is_finite() {
        return Err(Error::Numerical("logistic regression diverged; normalise the features".into()));
    }
    Ok(LogRegModel { theta, b, params: *params, iterations, converged, feature_count: d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn all_negative_labels_stay_below_half() {
        let x = array![[0.5, -1.0], [1.0, 0.0], [-0.3, 2.0]];
        let m = fit_logreg(&x, &[0, 0, 0], &LogRegParams { max_iter: 500, ..Default::default() }).unwrap();
        for r in x.rows() {
            assert!(m.predict_row(r) < 0.5);
        }
    }

    #[test]
    fn separable_one_dimensional() {
        let x = array![[-2.0], [-1.5], [-1.0], [1.0], [1.5], [2.0]];
        let y = [0, 0, 0, 1, 1, 1];
        let m = fit_logreg(&x, &y, &LogRegParams::default()).unwrap();
        for (r, &t) in x.rows().into_iter().zip(&y) {
            assert_eq!(u8::from(m.predict_row(r) >= 0.5), t);
        }
    }

    #[test]
    fn overflow_is_reported() {
        let x = array![[1e308], [-1e308]];
        let r = fit_logreg(&x, &[1, 0], &LogRegParams { lr: 10.0, ..Default::default() });
        assert!(matches!(r, Err(Error::Numerical(_))), "{r:?}");
    }
}
