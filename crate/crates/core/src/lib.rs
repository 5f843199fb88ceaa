//! Emotion recognition and forecasting for dyadic conversations.
//!
//! Diarized utterances are paired into speaker turns, encoded into
//! multi-modal context windows, and fed to a two-level stacking ensemble that
//! predicts both speakers' emotions for the current turn and the next `k`
//! turns. A coupled-Markov conversation simulator with exact and Monte-Carlo
//! Bayes oracles provides ground truth for evaluation.

#[cfg(feature = "cli")]
pub mod cli;
pub mod corpus;
pub mod eval;
pub mod features;
pub mod model;
mod par;
pub mod seed;
pub mod synth;
pub mod turns;
