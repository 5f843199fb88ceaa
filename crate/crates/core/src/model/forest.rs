//! Random forest of gini trees over quantile-binned features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bins::Binning;
use super::FeatureMatrix;
use crate::{par, seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub max_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    }
                }
                Node::Leaf(p) => return p,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + go(nodes, *left as usize).max(go(nodes, *right as usize)),
                Node::Leaf(_) => 0,
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub n_classes: usize,
    pub trees: Vec<Tree>,
}

impl RandomForest {
    /// Tree `i` draws from `seed::rng(seed, &[i])`, so the forest is the same
    /// whether trees are grown in parallel or not.
    pub fn fit(x: &FeatureMatrix, y: &[usize], n_classes: usize, params: &ForestParams, seed: u64) -> Self {
        assert_eq!(x.n_rows(), y.len());
        assert!(!y.is_empty());
        // Split search tracks the classes in each bin as a 64-bit mask.
        assert!(n_classes <= 64, "at most 64 classes");
        let binning = Binning::fit(x, params.max_bins);
        let binned = binning.transform(x);
        let grower = Grower {
            binning: &binning,
            binned: &binned,
            y,
            n_classes,
            max_depth: params.max_depth,
            mtry: ((x.n_cols() as f64).sqrt().ceil() as usize).max(1),
        };
        let trees = par::map(params.n_trees, |i| grower.grow(seed::derive(seed, &[i as u64])));
        RandomForest { n_classes, trees }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.n_classes];
        for t in &self.trees {
            for (a, b) in p.iter_mut().zip(t.predict(x)) {
                *a += b;
            }
        }
        let n = self.trees.len() as f64;
        p.iter_mut().for_each(|v| *v /= n);
        p
    }
}

struct Grower<'a> {
    binning: &'a Binning,
    binned: &'a [Vec<u8>],
    y: &'a [usize],
    n_classes: usize,
    max_depth: usize,
    mtry: usize,
}

struct Ctx<R> {
    rng: R,
    /// Bootstrap multiplicity of each training row.
    weight: Vec<u32>,
    nodes: Vec<Node>,
    features: Vec<usize>,
    hist: Vec<u32>,
    /// `(class, weight)` of each sample in the node being split.
    labelled: Vec<(u32, u32)>,
    /// Classes present in each bin of the current histogram.
    present: Vec<u64>,
    left: Vec<f64>,
}

impl Grower<'_> {
    fn grow(&self, tree_seed: u64) -> Tree {
        let n = self.y.len();
        let mut rng = seed::rng(tree_seed, &[]);
        // Distinct bootstrap rows carry their draw counts as weights, which
        // grows the same tree as repeating them.
        let mut weight = vec![0u32; n];
        for _ in 0..n {
            weight[rng.random_range(0..n)] += 1;
        }
        let mut samples: Vec<u32> = (0..n as u32).filter(|&i| weight[i as usize] > 0).collect();
        let max_bins = (0..self.binned.len()).map(|f| self.binning.n_bins(f)).max().unwrap_or(0);
        let mut ctx = Ctx {
            rng,
            weight,
            nodes: Vec::new(),
            features: (0..self.binned.len()).collect(),
            hist: vec![0; max_bins * self.n_classes],
            labelled: Vec::new(),
            present: vec![0; max_bins],
            left: vec![0.0; self.n_classes],
        };
        self.node(&mut ctx, &mut samples, 0);
        Tree { nodes: ctx.nodes }
    }

    fn counts(&self, weight: &[u32], samples: &[u32]) -> Vec<f64> {
        let mut c = vec![0.0; self.n_classes];
        for &s in samples {
            c[self.y[s as usize]] += f64::from(weight[s as usize]);
        }
        c
    }

    /// Appends the subtree for `samples` and returns its node index.
    fn node<R: Rng>(&self, ctx: &mut Ctx<R>, samples: &mut [u32], depth: usize) -> u32 {
        let id = ctx.nodes.len() as u32;
        let counts = self.counts(&ctx.weight, samples);
        let n: f64 = counts.iter().sum();
        let leaf = |counts: Vec<f64>| Node::Leaf(counts.into_iter().map(|c| c / n).collect());
        let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
        if depth >= self.max_depth || n < 2.0 || pure {
            ctx.nodes.push(leaf(counts));
            return id;
        }
        let Some((feature, bin)) = self.best_split(ctx, samples, &counts) else {
            ctx.nodes.push(leaf(counts));
            return id;
        };
        let col = &self.binned[feature];
        let mut k = 0;
        for i in 0..samples.len() {
            if col[samples[i] as usize] <= bin {
                samples.swap(i, k);
                k += 1;
            }
        }
        ctx.nodes.push(Node::Leaf(Vec::new()));
        let (l, r) = samples.split_at_mut(k);
        let left = self.node(ctx, l, depth + 1);
        let right = self.node(ctx, r, depth + 1);
        ctx.nodes[id as usize] = Node::Split {
            feature: feature as u32,
            threshold: self.binning.cuts[feature][bin as usize],
            left,
            right,
        };
        id
    }

    /// Visits features in a fresh random order until `mtry` non-constant ones
    /// have been scored, and returns the best `(feature, bin)` by gini.
    fn best_split<R: Rng>(&self, ctx: &mut Ctx<R>, samples: &[u32], counts: &[f64]) -> Option<(usize, u8)> {
        let c = self.n_classes;
        let n: f64 = counts.iter().sum();
        let parent = counts.iter().map(|v| v * v).sum::<f64>() / n;
        let total_sq = parent * n;
        let mut best: Option<(f64, usize, u8)> = None;
        let mut scored = 0;
        let Ctx {
            rng,
            weight,
            features,
            hist,
            labelled,
            present,
            left,
            ..
        } = ctx;
        labelled.clear();
        labelled.extend(samples.iter().map(|&s| (self.y[s as usize] as u32, weight[s as usize])));
        let p = features.len();
        for i in 0..p {
            if scored == self.mtry {
                break;
            }
            let j = rng.random_range(i..p);
            features.swap(i, j);
            let f = features[i];
            let nb = self.binning.n_bins(f);
            if nb < 2 {
                continue;
            }
            let col = &self.binned[f];
            // Occupied bins as a bitset, so small nodes skip empty bins. The
            // histogram is all zeros on entry and reset bin by bin below.
            let mut occupied = [0u64; 4];
            for (&s, &(y, w)) in samples.iter().zip(labelled.iter()) {
                let b = col[s as usize] as usize;
                hist[b * c + y as usize] += w;
                present[b] |= 1 << y;
                occupied[b >> 6] |= 1 << (b & 63);
            }
            left.fill(0.0);
            // Running sums of squared class counts on each side.
            let (mut sl, mut sr) = (0.0, total_sq);
            let mut nl = 0.0;
            let mut constant = true;
            for (w, mut word) in occupied.into_iter().enumerate() {
                while word != 0 {
                    let b = w * 64 + word.trailing_zeros() as usize;
                    word &= word - 1;
                    let mut classes = std::mem::take(&mut present[b]);
                    while classes != 0 {
                        let k = classes.trailing_zeros() as usize;
                        classes &= classes - 1;
                        let v = f64::from(std::mem::take(&mut hist[b * c + k]));
                        let l = left[k];
                        sl += v * (2.0 * l + v);
                        sr += v * (v - 2.0 * (counts[k] - l));
                        left[k] = l + v;
                        nl += v;
                    }
                    let nr = n - nl;
                    // The last occupied bin leaves nothing on the right.
                    if nr == 0.0 {
                        continue;
                    }
                    constant = false;
                    let score = sl / nl + sr / nr;
                    if best.is_none_or(|(s, ..)| score > s) {
                        best = Some((score, f, b as u8));
                    }
                }
            }
            if !constant {
                scored += 1;
            }
        }
        best.filter(|(s, ..)| *s > parent + 1e-9).map(|(_, f, b)| (f, b))
    }
}
