//! Bayes-optimal accuracy under the generator.
//!
//! The pair of speaker emotions is a Markov chain on `C^2` states once the
//! unobserved intensity flags are averaged out. Accuracy at horizon `h` is
//! the expected maximum of the posterior marginal for a speaker `h` turns
//! ahead, pooled over both speakers.
//!
//! The Monte-Carlo oracles reproduce what a model sees at turn `t`:
//! - `FullHistory`: true labels and AVD up to `t - 1` plus the feature
//!   vectors at `t`. Labels at `t - 1` screen off everything earlier, and AVD
//!   at `t - 1` contributes through the intensity posterior.
//! - `LabelHistory`: as above without AVD, so intensity stays at its prior.
//! - `EmissionsOnly`: only the feature vectors at `t`, with the chain's exact
//!   marginal at `t` as prior.
//!
//! All of them use the raw, unreduced vectors, so they upper-bound any pipeline
//! that reduces them first.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, RowDVector};
use serde::{Deserialize, Serialize};

use super::{sample_turns, simulate, SimConversation, SynthConfig, SynthError};
use crate::seed;

pub const MIN_TRIALS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conditioning {
    /// Both speakers' current labels are known.
    CurrentLabels,
    /// Past labels and AVD plus current feature vectors.
    FullHistory,
    /// Past labels without AVD plus current feature vectors.
    LabelHistory,
    /// Current feature vectors only.
    EmissionsOnly,
}

impl Conditioning {
    pub fn name(self) -> &'static str {
        match self {
            Conditioning::CurrentLabels => "current-labels",
            Conditioning::FullHistory => "full-history",
            Conditioning::LabelHistory => "label-history",
            Conditioning::EmissionsOnly => "emissions-only",
        }
    }
}

impl fmt::Display for Conditioning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Conditioning {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [
            Conditioning::CurrentLabels,
            Conditioning::FullHistory,
            Conditioning::LabelHistory,
            Conditioning::EmissionsOnly,
        ]
        .into_iter()
        .find(|c| c.name() == s)
        .ok_or_else(|| format!("unknown conditioning {s:?}"))
    }
}

/// Oracle accuracy (a fraction) for horizons `0..=k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCurve {
    pub conditioning: Conditioning,
    pub accuracy: Vec<f64>,
    /// Zero for exact curves.
    pub std_error: Vec<f64>,
    /// Speaker-turn predictions averaged per horizon.
    pub trials: Vec<usize>,
}

/// One-step joint transition on states `a * C + b`, where `high[s]` is the
/// probability that speaker `s`'s current turn is high-intensity.
fn joint_step(cfg: &SynthConfig, high: [f64; 2]) -> DMatrix<f64> {
    let c = cfg.n_classes;
    let mut m = DMatrix::zeros(c * c, c * c);
    for a in 0..c {
        for b in 0..c {
            let ta = cfg.transition(a, b, high[0]);
            let tb = cfg.transition(b, a, high[1]);
            for a2 in 0..c {
                for b2 in 0..c {
                    m[(a * c + b, a2 * c + b2)] = ta[a2] * tb[b2];
                }
            }
        }
    }
    m
}

fn powers(m: &DMatrix<f64>, k: usize) -> Vec<DMatrix<f64>> {
    let mut out = vec![DMatrix::identity(m.nrows(), m.ncols())];
    for h in 1..=k {
        out.push(&out[h - 1] * m);
    }
    out
}

/// Max posterior marginal of each speaker, given a joint distribution.
fn max_marginals(v: &RowDVector<f64>, c: usize) -> [f64; 2] {
    let mut m = [vec![0.0; c], vec![0.0; c]];
    for a in 0..c {
        for b in 0..c {
            let p = v[a * c + b];
            m[0][a] += p;
            m[1][b] += p;
        }
    }
    m.map(|x| x.into_iter().fold(0.0, f64::max))
}

fn initial_joint(cfg: &SynthConfig) -> RowDVector<f64> {
    let c = cfg.n_classes;
    RowDVector::from_fn(c * c, |_, s| cfg.initial[s / c] * cfg.initial[s % c])
}

/// Stationary distribution reached from the initial state, via power
/// iteration on the lazy chain (which shares its stationary laws and is
/// aperiodic).
fn stationary(cfg: &SynthConfig, m: &DMatrix<f64>) -> RowDVector<f64> {
    let lazy = (m + DMatrix::identity(m.nrows(), m.ncols())) * 0.5;
    let mut v = initial_joint(cfg);
    for _ in 0..1_000_000 {
        let next = &v * &lazy;
        let delta = (&next - &v).abs().sum();
        v = next;
        if delta < 1e-15 {
            break;
        }
    }
    v
}

/// Exact oracle when both speakers' labels at the current turn are known,
/// weighted by the chain's stationary distribution.
pub fn current_labels_oracle(cfg: &SynthConfig, k: usize) -> Result<OracleCurve, SynthError> {
    cfg.validate_dynamics()?;
    let c = cfg.n_classes;
    let q = cfg.intensity_prob();
    let m = joint_step(cfg, [q, q]);
    let pi = stationary(cfg, &m);
    let accuracy = powers(&m, k)
        .iter()
        .map(|mh| {
            (0..c * c)
                .map(|s| {
                    let mx = max_marginals(&mh.row(s).into_owned(), c);
                    pi[s] * (mx[0] + mx[1]) / 2.0
                })
                .sum()
        })
        .collect();
    Ok(OracleCurve {
        conditioning: Conditioning::CurrentLabels,
        accuracy,
        std_error: vec![0.0; k + 1],
        trials: vec![0; k + 1],
    })
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Log-likelihood of an observed (clipped) AVD triple under mean `mu`.
fn avd_loglik(obs: &[f64; 3], mu: [f64; 3], sigma: f64) -> f64 {
    obs.iter()
        .zip(mu)
        .map(|(&v, m)| {
            if v <= 1.0 {
                normal_cdf((1.0 - m) / sigma).ln()
            } else if v >= 5.0 {
                normal_cdf((m - 5.0) / sigma).ln()
            } else {
                let z = (v - m) / sigma;
                -0.5 * z * z - sigma.ln()
            }
        })
        .sum()
}

/// Posterior probability that a turn was high-intensity.
fn intensity_posterior(cfg: &SynthConfig, class: usize, obs: &[f64; 3]) -> f64 {
    let Some(i) = &cfg.intensity else { return 0.0 };
    if i.prob <= 0.0 {
        return 0.0;
    }
    if i.prob >= 1.0 {
        return 1.0;
    }
    let mu = cfg.avd_means[class];
    let shifted = [0, 1, 2].map(|j| mu[j] + i.avd_shift[j]);
    let lh = i.prob.ln() + avd_loglik(obs, shifted, cfg.avd_noise);
    let ll = (1.0 - i.prob).ln() + avd_loglik(obs, mu, cfg.avd_noise);
    1.0 / (1.0 + (ll - lh).exp())
}

/// Normalized emission likelihood of each class for one speaker-turn.
fn emission_likelihood(cfg: &SynthConfig, vectors: &[Vec<f64>; 3]) -> Vec<f64> {
    let ll: Vec<f64> = (0..cfg.n_classes)
        .map(|c| {
            vectors
                .iter()
                .map(|v| {
                    let mu = cfg.center(c, v.len());
                    -v.iter().zip(&mu).map(|(x, m)| (x - m).powi(2)).sum::<f64>()
                })
                .sum::<f64>()
                / (2.0 * cfg.emission_noise.powi(2))
        })
        .collect();
    let max = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ll.into_iter().map(|v| (v - max).exp()).collect()
}

/// Bayes-optimal accuracy for horizons `0..=k`. `CurrentLabels` is exact.
/// The other conditionings are estimated from freshly simulated
/// conversations until at least `max(trials, MIN_TRIALS)` speaker-turns have
/// been scored at horizon 0. Horizon `h` only scores turns with `t + h < T`,
/// matching how evaluation masks targets.
pub fn bayes_oracle(cfg: &SynthConfig, k: usize, conditioning: Conditioning, trials: usize) -> Result<OracleCurve, SynthError> {
    if conditioning == Conditioning::CurrentLabels {
        return current_labels_oracle(cfg, k);
    }
    cfg.validate()?;
    let c = cfg.n_classes;
    let q = cfg.intensity_prob();
    let m = joint_step(cfg, [q, q]);
    let mh = powers(&m, k);
    let mut marginals = vec![initial_joint(cfg)];
    let mut sum = vec![0.0; k + 1];
    let mut sum_sq = vec![0.0; k + 1];
    let mut count = vec![0usize; k + 1];
    let target = trials.max(MIN_TRIALS);
    let mut i = 0u64;
    while count[0] < target {
        let mut rng = seed::rng(cfg.seed, &[seed::stream::ORACLE, i]);
        i += 1;
        let n_turns = sample_turns(cfg, &mut rng);
        let sim: SimConversation = simulate(cfg, String::new(), n_turns, &mut rng);
        while marginals.len() < n_turns {
            let next = marginals.last().expect("non-empty") * &m;
            marginals.push(next);
        }
        for t in 0..n_turns {
            let prior = match conditioning {
                Conditioning::FullHistory if t > 0 => {
                    let prev = sim.labels[t - 1];
                    let rho = [0, 1].map(|s| intensity_posterior(cfg, prev[s], &sim.avd[t - 1][s]));
                    joint_step(cfg, rho).row(prev[0] * c + prev[1]).into_owned()
                }
                Conditioning::LabelHistory if t > 0 => {
                    let prev = sim.labels[t - 1];
                    m.row(prev[0] * c + prev[1]).into_owned()
                }
                _ => marginals[t].clone(),
            };
            let lik = [0, 1].map(|s| emission_likelihood(cfg, &sim.emissions[t][s]));
            let mut post = RowDVector::from_fn(c * c, |_, s| prior[s] * lik[0][s / c] * lik[1][s % c]);
            let z = post.sum();
            post /= z;
            for h in 0..=k.min(n_turns - 1 - t) {
                let v = &post * &mh[h];
                for p in max_marginals(&v, c) {
                    sum[h] += p;
                    sum_sq[h] += p * p;
                    count[h] += 1;
                }
            }
        }
    }
    let accuracy: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
    let std_error = (0..=k)
        .map(|h| {
            let n = count[h] as f64;
            let var = (sum_sq[h] / n - accuracy[h].powi(2)).max(0.0);
            (var / n).sqrt()
        })
        .collect();
    Ok(OracleCurve {
        conditioning,
        accuracy,
        std_error,
        trials: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Preset;

    fn two_state(p: f64, alpha: f64) -> SynthConfig {
        let mut cfg = Preset::Benchmark.config(0);
        cfg.n_classes = 2;
        cfg.influence = alpha;
        cfg.p_self = vec![vec![p, 1.0 - p], vec![1.0 - p, p]];
        cfg.p_cross = cfg.p_self.clone();
        cfg.initial = vec![0.5, 0.5];
        cfg
    }

    #[test]
    fn symmetric_two_state_closed_form() {
        let p = 0.9;
        let curve = current_labels_oracle(&two_state(p, 0.0), 5).unwrap();
        assert_eq!(curve.accuracy[0], 1.0);
        assert!((curve.accuracy[1] - 0.9).abs() < 1e-12);
        assert!((curve.accuracy[2] - 0.82).abs() < 1e-12);
        for h in 0..=5 {
            let closed = (1.0 + (2.0 * p - 1.0f64).powi(h as i32)) / 2.0;
            assert!((curve.accuracy[h] - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_dynamics_are_uninformative() {
        let mut cfg = Preset::Benchmark.config(0);
        cfg.p_self = vec![vec![1.0 / 6.0; 6]; 6];
        cfg.p_cross = cfg.p_self.clone();
        for alpha in [0.0, 0.3, 1.0] {
            cfg.influence = alpha;
            let curve = current_labels_oracle(&cfg, 3).unwrap();
            for h in 1..=3 {
                assert!((curve.accuracy[h] - 1.0 / 6.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn emission_extremes() {
        let mut cfg = Preset::Benchmark.config(0);
        cfg.separation = 40.0;
        let sharp = bayes_oracle(&cfg, 0, Conditioning::EmissionsOnly, 0).unwrap();
        assert!(sharp.accuracy[0] > 0.999);
        assert!(sharp.trials[0] >= MIN_TRIALS);
        cfg.separation = 0.0;
        let blind = bayes_oracle(&cfg, 0, Conditioning::EmissionsOnly, 0).unwrap();
        // Uniform start and doubly stochastic dynamics keep every marginal
        // uniform.
        assert!((blind.accuracy[0] - 1.0 / 6.0).abs() < 1e-9);
    }

    #[test]
    fn clipped_likelihood_uses_tail_mass() {
        let l = avd_loglik(&[1.0, 3.0, 5.0], [1.0, 3.0, 5.0], 0.5);
        let expect = 2.0 * 0.5f64.ln() - 0.5f64.ln();
        assert!((l - expect).abs() < 1e-12);
    }

    #[test]
    fn history_beats_emissions_under_influence() {
        let cfg = Preset::Influence.config(0);
        let full = bayes_oracle(&cfg, 1, Conditioning::FullHistory, 0).unwrap();
        let blind = bayes_oracle(&cfg, 1, Conditioning::EmissionsOnly, 0).unwrap();
        assert!(full.accuracy[1] - blind.accuracy[1] >= 0.10, "{full:?} {blind:?}");
        assert!(full.std_error[1] < 0.005);
    }
}
