//! Multi-class AdaBoost (SAMME) over decision stumps on binned features.

use serde::{Deserialize, Serialize};

use super::bins::{Binning, DEFAULT_MAX_BINS};
use super::logreg::softmax;
use super::FeatureMatrix;

/// Weight given to a stump that classifies the weighted sample perfectly.
const PERFECT_ALPHA: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Stump {
    feature: usize,
    threshold: f64,
    left: usize,
    right: usize,
    alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StumpBoost {
    pub n_classes: usize,
    stumps: Vec<Stump>,
    prior: Vec<f64>,
}

impl StumpBoost {
    pub fn fit(x: &FeatureMatrix, y: &[usize], n_classes: usize, rounds: usize) -> Self {
        assert_eq!(x.n_rows(), y.len());
        assert!(!y.is_empty());
        let n = y.len();
        let c = n_classes;
        let binning = Binning::fit(x, DEFAULT_MAX_BINS);
        let binned = binning.transform(x);
        let mut prior = vec![0.0; c];
        y.iter().for_each(|&l| prior[l] += 1.0 / n as f64);
        let mut w = vec![1.0 / n as f64; n];
        let mut stumps = Vec::new();
        let mut hist = Vec::new();
        for _ in 0..rounds {
            // Best (correct mass, feature, bin, left class, right class).
            let mut best: Option<(f64, usize, usize, usize, usize)> = None;
            for (f, col) in binned.iter().enumerate() {
                let nb = binning.n_bins(f);
                if nb < 2 {
                    continue;
                }
                hist.clear();
                hist.resize(nb * c, 0.0);
                for (i, &b) in col.iter().enumerate() {
                    hist[b as usize * c + y[i]] += w[i];
                }
                let total: Vec<f64> = (0..c).map(|k| (0..nb).map(|b| hist[b * c + k]).sum()).collect();
                let mut left = vec![0.0; c];
                for b in 0..nb - 1 {
                    left.iter_mut().zip(&hist[b * c..(b + 1) * c]).for_each(|(a, v)| *a += v);
                    let (lc, lm) = argmax_mass(&left);
                    let right: Vec<f64> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
                    let (rc, rm) = argmax_mass(&right);
                    if best.is_none_or(|(m, ..)| lm + rm > m + 1e-15) {
                        best = Some((lm + rm, f, b, lc, rc));
                    }
                }
            }
            let Some((correct, f, b, lc, rc)) = best else { break };
            let total_w: f64 = w.iter().sum();
            let err = (1.0 - correct / total_w).max(0.0);
            if err >= 1.0 - 1.0 / c as f64 {
                break;
            }
            let alpha = if err <= 1e-12 {
                PERFECT_ALPHA
            } else {
                ((1.0 - err) / err).ln() + ((c - 1) as f64).ln()
            };
            for (i, wi) in w.iter_mut().enumerate() {
                let pred = if binned[f][i] as usize <= b { lc } else { rc };
                if pred != y[i] {
                    *wi *= alpha.exp();
                }
            }
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            stumps.push(Stump {
                feature: f,
                threshold: binning.cuts[f][b],
                left: lc,
                right: rc,
                alpha,
            });
            if err <= 1e-12 {
                break;
            }
        }
        StumpBoost {
            n_classes,
            stumps,
            prior,
        }
    }

    pub fn n_stumps(&self) -> usize {
        self.stumps.len()
    }

    /// Softmax of the normalized vote, scaled by `1 / (C - 1)`.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let total: f64 = self.stumps.iter().map(|s| s.alpha).sum();
        if self.stumps.is_empty() || total <= 0.0 {
            return self.prior.clone();
        }
        let mut votes = vec![0.0; self.n_classes];
        for s in &self.stumps {
            let c = if x[s.feature] <= s.threshold { s.left } else { s.right };
            votes[c] += s.alpha;
        }
        let denom = total * (self.n_classes.max(2) - 1) as f64;
        softmax(&votes.iter().map(|v| v / denom).collect::<Vec<_>>())
    }
}

fn argmax_mass(v: &[f64]) -> (usize, f64) {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
}
