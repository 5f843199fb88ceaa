//! Multinomial logistic regression with an L2 penalty, fitted by L-BFGS on
//! standardized features.
//!
//! The objective is the mean cross-entropy plus `l2 / (2N) * |W|^2`, with the
//! intercepts unpenalized. This matches the usual `C = 1 / l2` convention.

use serde::{Deserialize, Serialize};

use super::FeatureMatrix;

const MAX_ITER: usize = 300;
const HISTORY: usize = 10;
const GRAD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub n_classes: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// Row-major `C x (D + 1)`; the last column is the intercept.
    weights: Vec<f64>,
}

impl LogisticRegression {
    pub fn fit(x: &FeatureMatrix, y: &[usize], n_classes: usize, l2: f64) -> Self {
        assert_eq!(x.n_rows(), y.len());
        assert!(!y.is_empty());
        let (n, d) = (x.n_rows(), x.n_cols());
        let mut mean = vec![0.0; d];
        for r in x.rows() {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut scale = vec![0.0; d];
        for r in x.rows() {
            for j in 0..d {
                scale[j] += (r[j] - mean[j]).powi(2);
            }
        }
        for s in &mut scale {
            let sd = (*s / n as f64).sqrt();
            *s = if sd > 1e-12 { sd } else { 1.0 };
        }
        let mut z = FeatureMatrix::new(d);
        let mut buf = vec![0.0; d];
        for r in x.rows().take(n) {
            for j in 0..d {
                buf[j] = (r[j] - mean[j]) / scale[j];
            }
            z.push_row(&buf);
        }

        let mut model = LogisticRegression {
            n_classes,
            mean,
            scale,
            weights: vec![0.0; n_classes * (d + 1)],
        };
        let objective = |w: &[f64], grad: &mut [f64]| loss_and_grad(&z, y, n_classes, l2, w, grad);
        lbfgs(&mut model.weights, objective);
        model
    }

    fn scores(&self, z: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        (0..self.n_classes)
            .map(|c| {
                let w = &self.weights[c * (d + 1)..(c + 1) * (d + 1)];
                w[d] + w[..d].iter().zip(z).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = x
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        softmax(&self.scores(&z))
    }
}

pub(crate) fn softmax(s: &[f64]) -> Vec<f64> {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

fn loss_and_grad(z: &FeatureMatrix, y: &[usize], c: usize, l2: f64, w: &[f64], grad: &mut [f64]) -> f64 {
    let (n, d) = (z.n_rows(), z.n_cols());
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    let mut s = vec![0.0; c];
    for (i, r) in z.rows().enumerate().take(n) {
        for k in 0..c {
            let wk = &w[k * (d + 1)..(k + 1) * (d + 1)];
            s[k] = wk[d] + wk[..d].iter().zip(r).map(|(a, b)| a * b).sum::<f64>();
        }
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - s[y[i]];
        for k in 0..c {
            let err = (s[k] - lse).exp() - f64::from(u8::from(k == y[i]));
            let gk = &mut grad[k * (d + 1)..(k + 1) * (d + 1)];
            gk[..d].iter_mut().zip(r).for_each(|(g, v)| *g += err * v);
            gk[d] += err;
        }
    }
    let nf = n as f64;
    loss /= nf;
    grad.iter_mut().for_each(|g| *g /= nf);
    for k in 0..c {
        for j in 0..d {
            let idx = k * (d + 1) + j;
            loss += l2 / (2.0 * nf) * w[idx] * w[idx];
            grad[idx] += l2 / nf * w[idx];
        }
    }
    loss
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with Armijo backtracking. `f` returns the objective
/// and writes the gradient.
fn lbfgs(x: &mut [f64], mut f: impl FnMut(&[f64], &mut [f64]) -> f64) {
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut fx = f(x, &mut g);
    let mut hist: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::with_capacity(HISTORY);
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    for _ in 0..MAX_ITER {
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < GRAD_TOL {
            break;
        }
        // Two-loop recursion for the search direction.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.last() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
            hist.clear();
        }
        let mut step = if hist.is_empty() {
            1.0 / g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0)
        } else {
            1.0
        };
        let mut accepted = false;
        for _ in 0..40 {
            x_new.iter_mut().zip(x.iter().zip(&dir)).for_each(|(xn, (xi, di))| *xn = xi + step * di);
            let f_new = f(&x_new, &mut g_new);
            if f_new <= fx + 1e-4 * step * slope {
                accepted = true;
                let s: Vec<f64> = x_new.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 {
                    if hist.len() == HISTORY {
                        hist.remove(0);
                    }
                    hist.push((s, y, 1.0 / sy));
                }
                x.copy_from_slice(&x_new);
                g.copy_from_slice(&g_new);
                fx = f_new;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
}
