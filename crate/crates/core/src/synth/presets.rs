//! Named generator settings used by the benchmarks and the CLI.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Intensity, SynthConfig, SynthDims};

const C: usize = 6;

/// Rough per-class AVD centers for the six-class scheme.
const AVD_MEANS: [[f64; 3]; C] = [
    [3.3, 3.9, 3.1],
    [3.6, 3.7, 3.3],
    [2.5, 2.2, 2.5],
    [2.8, 3.0, 2.9],
    [3.7, 1.9, 3.8],
    [3.2, 2.0, 3.3],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Moderate emissions, sticky self-dynamics and partner mimicry.
    Benchmark,
    /// Benchmark dynamics with well-separated emissions.
    Separable,
    /// Weak emissions; the next emotion is driven almost entirely by the
    /// partner's previous one.
    Influence,
    /// Weak emissions; the AVD-revealed intensity flag flips the
    /// self-transition from staying to jumping.
    Intensity,
    /// Happy/Excited and Angry/Frustrated emit identically and are
    /// indistinguishable from history.
    Twins,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Benchmark,
        Preset::Separable,
        Preset::Influence,
        Preset::Intensity,
        Preset::Twins,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Benchmark => "benchmark",
            Preset::Separable => "separable",
            Preset::Influence => "influence",
            Preset::Intensity => "intensity",
            Preset::Twins => "twins",
        }
    }

    pub fn config(self, seed: u64) -> SynthConfig {
        let base = SynthConfig {
            n_classes: C,
            turns_mean: 12,
            n_conversations: 200,
            influence: 0.5,
            p_self: rows(|i, j| if i == j { 0.6 } else { 0.08 }),
            p_cross: rows(|i, j| if i == j { 0.5 } else { 0.1 }),
            initial: vec![1.0 / C as f64; C],
            separation: 2.0,
            emission_noise: 1.0,
            emission_groups: (0..C).collect(),
            avd_means: AVD_MEANS.to_vec(),
            avd_noise: 0.3,
            dims: SynthDims {
                text: 16,
                audio: 24,
                speaker: 12,
            },
            intensity: None,
            sessions: 5,
            seed,
        };
        match self {
            Preset::Benchmark => base,
            Preset::Separable => SynthConfig {
                separation: 10.0,
                ..base
            },
            Preset::Influence => SynthConfig {
                influence: 0.9,
                p_self: rows(|_, _| 1.0),
                p_cross: rows(|i, j| if j == (i + 1) % C { 0.9 } else { 0.02 }),
                separation: 1.0,
                ..base
            },
            Preset::Intensity => SynthConfig {
                influence: 0.1,
                p_self: rows(|i, j| if i == j { 0.85 } else { 0.03 }),
                p_cross: rows(|_, _| 1.0),
                separation: 0.5,
                intensity: Some(Intensity {
                    prob: 0.5,
                    avd_shift: [1.2, 0.0, 0.8],
                    p_self_high: rows(|i, j| if j == (i + 3) % C { 0.85 } else { 0.03 }),
                }),
                ..base
            },
            Preset::Twins => {
                const GROUPS: [usize; C] = [0, 0, 1, 2, 3, 3];
                let size = |g: usize| GROUPS.iter().filter(|&&x| x == g).count() as f64;
                // Group-level dynamics. Inside a twin group a label leans
                // towards itself, so history gives each example its own weak
                // evidence about which twin comes next.
                let lift = |stay: f64, own: f64| {
                    rows(move |i, j| {
                        if GROUPS[i] != GROUPS[j] {
                            (1.0 - stay) / 3.0 / size(GROUPS[j])
                        } else if size(GROUPS[j]) == 1.0 {
                            stay
                        } else {
                            stay * if i == j { own } else { 1.0 - own }
                        }
                    })
                };
                let mut avd = AVD_MEANS.to_vec();
                avd[1] = avd[0];
                avd[5] = avd[4];
                SynthConfig {
                    p_self: lift(0.85, 0.6),
                    p_cross: lift(0.85, 0.6),
                    emission_groups: GROUPS.to_vec(),
                    avd_means: avd,
                    ..base
                }
            }
        }
    }
}

/// Row-stochastic `C x C` matrix from unnormalized weights.
fn rows(w: impl Fn(usize, usize) -> f64) -> Vec<Vec<f64>> {
    (0..C)
        .map(|i| {
            let r: Vec<f64> = (0..C).map(|j| w(i, j)).collect();
            let s: f64 = r.iter().sum();
            r.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
            format!("unknown preset {s:?}; expected one of {}", names.join(", "))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for p in Preset::ALL {
            p.config(0).validate().unwrap_or_else(|e| panic!("{p}: {e}"));
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
    }

    #[test]
    fn twins_share_rows() {
        let cfg = Preset::Twins.config(0);
        // Twin rows mirror each other and other classes enter both equally.
        assert_eq!((cfg.p_self[0][0], cfg.p_self[0][1]), (cfg.p_self[1][1], cfg.p_self[1][0]));
        assert_eq!((cfg.p_cross[4][4], cfg.p_cross[4][5]), (cfg.p_cross[5][5], cfg.p_cross[5][4]));
        assert_eq!(cfg.p_self[2][0], cfg.p_self[2][1]);
        assert!(cfg.p_self[0][0] > cfg.p_self[0][1]);
        assert_eq!(cfg.center(0, 8), cfg.center(1, 8));
    }
}
