//! TF-IDF vectors and cosine similarity over a small per-question pool.
//!
//! Term frequency is the raw count, idf(t) = ln((1 + N) / (1 + df(t))) + 1
//! where N counts every document in the pool (question included). Tokens are
//! lowercased maximal runs of alphanumeric characters; no stemming.

use std::collections::HashMap;

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Sparse vector as (term id, weight), sorted by term id.
pub type SparseVec = Vec<(usize, f64)>;

pub struct TfIdf {
    idf: Vec<f64>,
    vectors: Vec<SparseVec>,
}

impl TfIdf {
    pub fn fit<S: AsRef<str>>(docs: &[S]) -> Self {
        let mut vocab: HashMap<String, usize> = HashMap::new();
        let mut counts: Vec<HashMap<usize, u32>> = Vec::with_capacity(docs.len());
        let mut df: Vec<u32> = Vec::new();
        for doc in docs {
            let mut tf: HashMap<usize, u32> = HashMap::new();
            for token in tokenize(doc.as_ref()) {
                let next = vocab.len();
                let id = *vocab.entry(token).or_insert(next);
                if id == df.len() {
                    df.push(0);
                }
                *tf.entry(id).or_insert(0) += 1;
            }
            for &id in tf.keys() {
                df[id] += 1;
            }
            counts.push(tf);
        }
        let n = docs.len() as f64;
        let idf: Vec<f64> = df
            .iter()
            .map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
            .collect();
        let vectors = counts
            .into_iter()
            .map(|tf| {
                let mut v: SparseVec = tf.into_iter().map(|(id, c)| (id, c as f64 * idf[id])).collect();
                v.sort_by_key(|&(id, _)| id);
                v
            })
            .collect();
        TfIdf { idf, vectors }
    }

    pub fn vector(&self, doc: usize) -> &SparseVec {
        &self.vectors[doc]
    }

    pub fn vocabulary_size(&self) -> usize {
        self.idf.len()
    }
}

pub fn norm(v: &SparseVec) -> f64 {
    v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
}

pub fn dot(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j, mut sum) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                sum += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    sum
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &SparseVec, b: &SparseVec) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        (dot(a, b) / denom).clamp(-1.0, 1.0)
    }
}
