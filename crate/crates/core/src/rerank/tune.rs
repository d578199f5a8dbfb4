//! Coordinate-wise grid search over PoE weights.
//!
//! Visit order: the all-ones vector, then each one-hot vector, then
//! `WEIGHT_SWEEPS` sweeps over the coordinates in term order, trying every
//! grid value in grid order. A move is taken only on strict improvement, so
//! ties keep the earlier-visited vector. All-zero vectors are skipped.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{select_answer, CandidatePool, RerankConfig, Selection, Weights};
use crate::error::{Error, Result};

pub const WEIGHT_GRID: [f64; 5] = [0.0, 0.25, 0.5, 1.0, 2.0];
pub const WEIGHT_SWEEPS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    /// `start`, `one-hot`, or `sweep N` for coordinate moves.
    pub phase: String,
    pub weights: Weights,
    pub metric: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub weights: Weights,
    pub metric: f64,
    pub trace: Vec<TraceRow>,
}

/// Maximize the mean of `metric(question index, selection)` over `heldout`.
/// Makes no model calls; pools must already carry full bundles.
pub fn tune_weights(
    heldout: &[CandidatePool],
    metric: impl Fn(usize, &Selection) -> Result<f64>,
) -> Result<TuneResult> {
    if heldout.is_empty() {
        return Err(Error::InvalidArgument("held-out set is empty".into()));
    }
    let mut memo: HashMap<[u64; 5], f64> = HashMap::new();
    let mut evaluate = |w: &Weights| -> Result<f64> {
        let key = w.0.map(f64::to_bits);
        if let Some(&m) = memo.get(&key) {
            return Ok(m);
        }
        let config = RerankConfig::poe(*w);
        let mut total = 0.0;
        for (i, pool) in heldout.iter().enumerate() {
            total += match select_answer(pool, &config) {
                Ok(sel) => metric(i, &sel)?,
                Err(Error::EmptyPool) => 0.0,
                Err(e) => return Err(e),
            };
        }
        let m = total / heldout.len() as f64;
        memo.insert(key, m);
        Ok(m)
    };

    let mut trace = Vec::new();
    let mut best = Weights::default();
    let mut best_metric = evaluate(&best)?;
    trace.push(TraceRow {
        step: 0,
        phase: "start".into(),
        weights: best,
        metric: best_metric,
        accepted: true,
    });
    let mut visit = |phase: String, w: Weights, best: &mut Weights, best_metric: &mut f64| -> Result<()> {
        let m = evaluate(&w)?;
        let accepted = m > *best_metric;
        if accepted {
            *best = w;
            *best_metric = m;
        }
        trace.push(TraceRow {
            step: trace.len(),
            phase,
            weights: w,
            metric: m,
            accepted,
        });
        Ok(())
    };
    for term in 0..5 {
        visit(
            "one-hot".into(),
            Weights::one_hot(term),
            &mut best,
            &mut best_metric,
        )?;
    }
    for sweep in 1..=WEIGHT_SWEEPS {
        for coord in 0..5 {
            for g in WEIGHT_GRID {
                if g == best.0[coord] {
                    continue;
                }
                let mut w = best.0;
                w[coord] = g;
                if w.iter().all(|x| *x == 0.0) {
                    continue;
                }
                visit(format!("sweep {sweep}"), Weights(w), &mut best, &mut best_metric)?;
            }
        }
    }
    Ok(TuneResult {
        weights: best,
        metric: best_metric,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::{cand, pool};
    use super::*;

    #[test]
    fn constant_metric_keeps_start_vector() {
        let pools = vec![pool(vec![1.0], vec![cand("a", 0, [-1.0; 5])])];
        let r = tune_weights(&pools, |_, _| Ok(0.5)).unwrap();
        assert_eq!(r.weights, Weights::default());
        assert_eq!(r.metric, 0.5);
        assert_eq!(r.trace.iter().filter(|t| t.accepted).count(), 1);
    }

    #[test]
    fn finds_the_informative_term() {
        // the right answer "good" has the best lp_q_ap but the worst other terms
        let pools: Vec<_> = (0..4)
            .map(|i| {
                let noise = i as f64 * 0.1;
                pool(
                    vec![0.5, 0.5],
                    vec![
                        cand("good", 0, [-3.0, -0.1, -3.0 - noise, -0.5, -2.0]),
                        cand("bad", 1, [-0.5, -2.0, -0.2, -3.0, -0.1]),
                    ],
                )
            })
            .collect();
        let r = tune_weights(&pools, |_, s| Ok(if s.answer == "good" { 1.0 } else { 0.0 })).unwrap();
        assert_eq!(r.metric, 1.0);
        let again = tune_weights(&pools, |_, s| Ok(if s.answer == "good" { 1.0 } else { 0.0 })).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn trace_rows_match_visits() {
        let pools = vec![pool(vec![1.0], vec![cand("a", 0, [-1.0; 5])])];
        let r = tune_weights(&pools, |_, _| Ok(0.0)).unwrap();
        // start + 5 one-hot + 3 sweeps x 5 coordinates x 4 alternatives
        assert_eq!(r.trace.len(), 1 + 5 + 3 * 5 * 4);
        assert!(r.trace.iter().enumerate().all(|(i, t)| t.step == i));
        assert!(tune_weights(&[], |_, _| Ok(0.0)).is_err());
    }
}
