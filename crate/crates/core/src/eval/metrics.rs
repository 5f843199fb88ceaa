use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::features::WindowConfig;

/// Rounds half away from zero to one decimal. The nudge makes decimal
/// halves such as 58.55, stored as 58.54999..., round up as written.
pub fn round1(x: f64) -> f64 {
    let scaled = x * 10.0;
    (scaled + scaled.signum() * 1e-9).round() / 10.0
}

/// Accuracies in percent. Horizon accuracies pool both speakers; averages
/// weight horizons equally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc_per_horizon: Vec<f64>,
    /// `[slot][horizon]`; `None` when a slot has no unmasked target there.
    pub acc_per_speaker: [Vec<Option<f64>>; 2],
    pub acc_current: f64,
    /// Mean over horizons `1..=k`; absent when `k = 0`.
    pub acc_future_avg: Option<f64>,
    pub acc_overall: f64,
    /// Rows are true classes, columns predicted.
    pub confusion: Vec<Vec<u64>>,
    pub n_predictions: u64,
}

/// Row-per-true-class confusion counts over every unmasked target.
pub fn confusion_matrix(predicted: &[Vec<usize>], targets: &[Vec<Option<usize>>], n_classes: usize) -> Result<Vec<Vec<u64>>, EvalError> {
    check_aligned(predicted, targets)?;
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (p, t) in predicted.iter().zip(targets) {
        for (&pi, ti) in p.iter().zip(t) {
            if let Some(ti) = ti {
                m[*ti][pi] += 1;
            }
        }
    }
    Ok(m)
}

fn check_aligned(predicted: &[Vec<usize>], targets: &[Vec<Option<usize>>]) -> Result<(), EvalError> {
    if predicted.len() != targets.len() {
        return Err(EvalError::Misaligned(format!(
            "{} predictions for {} examples",
            predicted.len(),
            targets.len()
        )));
    }
    if let Some((i, _)) = predicted.iter().zip(targets).enumerate().find(|(_, (p, t))| p.len() != t.len()) {
        return Err(EvalError::Misaligned(format!("example {i} has mismatched target count")));
    }
    Ok(())
}

/// `predicted[i][j]` is the predicted label for target `j` of example `i`;
/// targets follow [`WindowConfig::target_index`].
pub fn compute_metrics(
    predicted: &[Vec<usize>],
    targets: &[Vec<Option<usize>>],
    window: &WindowConfig,
) -> Result<Metrics, EvalError> {
    check_aligned(predicted, targets)?;
    let nh = window.n_horizons();
    if let Some(t) = targets.iter().find(|t| t.len() != window.n_targets()) {
        return Err(EvalError::Misaligned(format!(
            "{} targets per example, window expects {}",
            t.len(),
            window.n_targets()
        )));
    }
    // [slot][horizon] -> (correct, total)
    let mut tally = [vec![(0u64, 0u64); nh], vec![(0u64, 0u64); nh]];
    for (p, t) in predicted.iter().zip(targets) {
        for (j, (&pj, tj)) in p.iter().zip(t).enumerate() {
            if let Some(tj) = tj {
                let (slot, h) = window.target_of(j);
                let cell = &mut tally[usize::from(slot)][h];
                cell.0 += u64::from(pj == *tj);
                cell.1 += 1;
            }
        }
    }
    let pct = |(c, n): (u64, u64)| 100.0 * c as f64 / n as f64;
    let mut acc_per_horizon = Vec::with_capacity(nh);
    for h in 0..nh {
        let pooled = (tally[0][h].0 + tally[1][h].0, tally[0][h].1 + tally[1][h].1);
        if pooled.1 == 0 {
            return Err(EvalError::EmptyHorizon { horizon: h });
        }
        acc_per_horizon.push(pct(pooled));
    }
    let acc_per_speaker = tally.map(|row| row.into_iter().map(|c| (c.1 > 0).then(|| pct(c))).collect());
    let acc_current = acc_per_horizon[0];
    let k = nh - 1;
    let acc_future_avg = (k > 0).then(|| acc_per_horizon[1..].iter().sum::<f64>() / k as f64);
    let acc_overall = acc_per_horizon.iter().sum::<f64>() / nh as f64;
    let confusion = confusion_matrix(predicted, targets, window.n_classes())?;
    let n_predictions = confusion.iter().flatten().sum();
    Ok(Metrics {
        acc_per_horizon,
        acc_per_speaker,
        acc_current,
        acc_future_avg,
        acc_overall,
        confusion,
        n_predictions,
    })
}
