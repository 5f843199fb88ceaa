//! Per-feature quantile binning shared by the tree learners.
//!
//! A feature with at most `max_bins` distinct training values gets one bin per
//! value, so splits are exact. Wider features get cut points at evenly spaced
//! ranks of the sorted values. Cut points sit midway between neighbouring
//! distinct values, and a split at bin `b` sends `x <= cuts[b]` left.

use serde::{Deserialize, Serialize};

use super::FeatureMatrix;

pub const DEFAULT_MAX_BINS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub cuts: Vec<Vec<f64>>,
}

impl Binning {
    pub fn fit(x: &FeatureMatrix, max_bins: usize) -> Self {
        assert!((2..=256).contains(&max_bins));
        let n = x.n_rows();
        let cuts = (0..x.n_cols())
            .map(|j| {
                let mut v: Vec<f64> = (0..n).map(|i| x.get(i, j)).collect();
                v.sort_unstable_by(f64::total_cmp);
                v.dedup();
                if v.len() <= max_bins {
                    v.windows(2).map(|w| midpoint(w[0], w[1])).collect()
                } else {
                    let mut c: Vec<f64> = (1..max_bins)
                        .map(|b| {
                            let pos = b * v.len() / max_bins;
                            midpoint(v[pos - 1], v[pos])
                        })
                        .collect();
                    c.dedup();
                    c
                }
            })
            .collect();
        Binning { cuts }
    }

    pub fn bin(&self, feature: usize, value: f64) -> u8 {
        self.cuts[feature].partition_point(|&c| c < value) as u8
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.cuts[feature].len() + 1
    }

    /// Column-major binned copy of `x`.
    pub fn transform(&self, x: &FeatureMatrix) -> Vec<Vec<u8>> {
        (0..x.n_cols())
            .map(|j| (0..x.n_rows()).map(|i| self.bin(j, x.get(i, j))).collect())
            .collect()
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    // Guard against rounding onto b when a and b are adjacent floats.
    if m >= b {
        a
    } else {
        m
    }
}
