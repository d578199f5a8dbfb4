//! Datasets, few-shot prompt banks and the held-out split used for tuning.

mod bank;
mod dataset;

pub use bank::{
    bank_file_name, BankLibrary, FewShotExample, Field, PromptBank, PromptKind, BUILTIN_DATASETS,
    DEFAULT_SHOTS,
};
pub use dataset::{load_dataset, to_json_lines, DatasetFormat, QuestionRecord, Target, Task};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Fraction of the data held out for tuning reranker weights.
pub const DEFAULT_HELDOUT_FRACTION: f64 = 0.10;

/// Seeded shuffle-then-take split into `(train, heldout)`.
///
/// `heldout` gets `round(fraction * n)` items (halves round away from zero).
/// Both halves keep the input's relative order, so the split is a partition
/// that depends only on `(records.len(), fraction, seed)`.
pub fn split_heldout<T: Clone>(records: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty dataset".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "held-out fraction must be in (0, 1), got {fraction}"
        )));
    }
    let heldout_len = (fraction * records.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_heldout = vec![false; records.len()];
    for &i in &order[..heldout_len] {
        in_heldout[i] = true;
    }
    let (mut train, mut heldout) = (Vec::new(), Vec::new());
    for (r, held) in records.iter().zip(in_heldout) {
        if held {
            heldout.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok((train, heldout))
}
