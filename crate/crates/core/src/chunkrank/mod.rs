//! Chunk documents into fixed-size sentence windows and rank the windows
//! against the question with TF-IDF cosine similarity.

mod sentences;
mod tfidf;

pub use sentences::{sentence_spans, split_sentences};
pub use tfidf::{cosine, tokenize, TfIdf};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::websearch::WebDocument;

pub const DEFAULT_CHUNK_SENTENCES: usize = 6;
pub const DEFAULT_TOP_PARAGRAPHS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceParagraph {
    pub source_url: String,
    /// Search rank of the source document (1-based); breaks cosine ties.
    pub source_rank: usize,
    /// Position within the source document, from 0.
    pub ordinal: usize,
    pub sentences: Vec<String>,
    /// Sentences joined by single spaces.
    pub text: String,
}

impl EvidenceParagraph {
    pub fn new(
        source_url: impl Into<String>,
        source_rank: usize,
        ordinal: usize,
        sentences: Vec<String>,
    ) -> Self {
        let text = sentences.join(" ");
        EvidenceParagraph {
            source_url: source_url.into(),
            source_rank,
            ordinal,
            sentences,
            text,
        }
    }

    /// A paragraph supplied verbatim (gold evidence), kept as one unit.
    pub fn verbatim(source_url: impl Into<String>, source_rank: usize, text: &str) -> Self {
        let mut p = Self::new(source_url, source_rank, 0, split_sentences(text));
        p.text = text.to_string();
        p
    }
}

/// Greedy non-overlapping windows of `size` sentences; the last may be short.
pub fn chunk(doc: &WebDocument, source_rank: usize, size: usize) -> Result<Vec<EvidenceParagraph>> {
    if size == 0 {
        return Err(Error::InvalidArgument("chunk size must be at least 1".into()));
    }
    let sentences = split_sentences(&doc.clean_text);
    Ok(sentences
        .chunks(size)
        .enumerate()
        .map(|(ordinal, window)| EvidenceParagraph::new(&doc.url, source_rank, ordinal, window.to_vec()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedParagraph {
    pub paragraph: EvidenceParagraph,
    pub cosine: f64,
    /// Retrieval prior over the returned list.
    pub prior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub paragraphs: Vec<RankedParagraph>,
    /// Set when the question shares no vocabulary with the pool and the
    /// priors fell back to uniform.
    pub uniform_fallback: bool,
}

/// Rank `paragraphs` by cosine similarity to `question` and keep the top `n`.
///
/// The TF-IDF model is fit on the question plus this pool only, counting
/// each distinct text once. Priors are
/// the cosines clipped at zero and normalized over the returned list. Equal
/// cosines are ordered by (source rank, ordinal, input position).
pub fn rank_paragraphs(question: &str, paragraphs: &[EvidenceParagraph], n: usize) -> Result<RankedList> {
    if paragraphs.is_empty() {
        return Err(Error::InvalidArgument("no paragraphs to rank".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    // The model is fit on the set of distinct texts, so mirrored copies of a
    // paragraph do not shift document frequencies.
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut docs: Vec<&str> = Vec::with_capacity(paragraphs.len() + 1);
    for text in std::iter::once(question).chain(paragraphs.iter().map(|p| p.text.as_str())) {
        slot.entry(text).or_insert_with(|| {
            docs.push(text);
            docs.len() - 1
        });
    }
    let model = TfIdf::fit(&docs);
    let q = model.vector(0);
    let mut scored: Vec<(usize, f64)> = paragraphs
        .iter()
        .enumerate()
        .map(|(i, p)| (i, cosine(q, model.vector(slot[p.text.as_str()]))))
        .collect();
    scored.sort_by(|&(i, a), &(j, b)| {
        b.total_cmp(&a)
            .then(paragraphs[i].source_rank.cmp(&paragraphs[j].source_rank))
            .then(paragraphs[i].ordinal.cmp(&paragraphs[j].ordinal))
            .then(i.cmp(&j))
    });
    scored.truncate(n);
    let total: f64 = scored.iter().map(|&(_, c)| c.max(0.0)).sum();
    let uniform_fallback = total <= 0.0;
    if uniform_fallback {
        tracing::warn!(
            question,
            "question shares no terms with its paragraphs; using uniform priors"
        );
    }
    let k = scored.len() as f64;
    let paragraphs = scored
        .into_iter()
        .map(|(i, c)| RankedParagraph {
            paragraph: paragraphs[i].clone(),
            cosine: c,
            prior: if uniform_fallback {
                1.0 / k
            } else {
                c.max(0.0) / total
            },
        })
        .collect();
    Ok(RankedList {
        paragraphs,
        uniform_fallback,
    })
}
