use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::session_of;
use crate::seed;

pub const HOLDOUT_FRACTION: f64 = 0.1;

/// Conversation ids per partition, each sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// The highest-numbered session is the test set; all others train. A seeded
/// `ceil(10%)` of the training conversations, ranked by a hash of their id,
/// moves to validation. At least one conversation stays in train.
pub fn split_sessions<'a>(
    conv_ids: impl IntoIterator<Item = &'a str>,
    overrides: &BTreeMap<String, u32>,
    run_seed: u64,
) -> Result<Split, EvalError> {
    let mut by_session: BTreeMap<u32, BTreeSet<String>> = BTreeMap::new();
    for id in conv_ids {
        by_session.entry(session_of(id, overrides)?).or_default().insert(id.to_string());
    }
    if by_session.len() < 2 {
        return Err(EvalError::NoTestSession);
    }
    let (_, test) = by_session.pop_last().expect("two sessions");
    let train: Vec<String> = by_session.into_values().flatten().collect();
    let n_holdout = ((train.len() as f64 * HOLDOUT_FRACTION).ceil() as usize).min(train.len() - 1);
    let salt = seed::derive(run_seed, &[seed::stream::SPLIT]);
    let mut ranked: Vec<(u64, &String)> = train.iter().map(|c| (seed::stable_hash(c, salt), c)).collect();
    ranked.sort();
    let holdout: BTreeSet<&String> = ranked.iter().take(n_holdout).map(|(_, c)| *c).collect();
    let (validation, train): (Vec<String>, Vec<String>) = train.iter().cloned().partition(|c| holdout.contains(c));
    Ok(Split {
        train,
        validation,
        test: test.into_iter().collect(),
    })
}
