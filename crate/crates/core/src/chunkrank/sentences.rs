//! Rule-based sentence segmentation.
//!
//! A sentence ends at `.`, `!` or `?` (plus any trailing terminators and
//! closing quotes or brackets) when the next character is whitespace or the
//! end of the text. A period does not end a sentence after a known title
//! abbreviation ("Dr.", "Mrs.", ...) or after a token that already contains
//! a period ("e.g.", "U.S.", "T.J."). A newline always ends a sentence.
//! Single capital initials are treated as sentences of their own, so
//! "A. B. C." yields three.

use std::ops::Range;

const TERMINATORS: &[char] = &['.', '!', '?'];
const CLOSERS: &[char] = &['"', '\'', ')', ']', '}', '\u{201d}', '\u{2019}', '\u{bb}'];
const OPENERS: &[char] = &['"', '\'', '(', '[', '{', '\u{201c}', '\u{2018}', '\u{ab}'];
const ABBREVIATIONS: &[&str] = &[
    "dr", "mr", "mrs", "ms", "prof", "st", "jr", "sr", "vs", "mt", "ft", "gen", "col", "lt", "sgt", "capt",
    "rev", "hon", "no", "fig", "approx",
];

/// Byte ranges of the sentences in `text`. Everything outside the ranges is
/// whitespace, so the text is recovered by interleaving the gaps.
pub fn sentence_spans(text: &str) -> Vec<Range<usize>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    let mut last_end = 0;
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            if c == '\n' {
                if let Some(s) = start.take() {
                    spans.push(s..last_end);
                }
            }
            i += 1;
            continue;
        }
        let s = *start.get_or_insert(pos);
        last_end = pos + c.len_utf8();
        if TERMINATORS.contains(&c) {
            let mut j = i + 1;
            while j < chars.len() && (TERMINATORS.contains(&chars[j].1) || CLOSERS.contains(&chars[j].1)) {
                j += 1;
            }
            let at_boundary = j == chars.len() || chars[j].1.is_whitespace();
            if at_boundary && !(c == '.' && is_abbreviation(&text[s..pos])) {
                let (p, ch) = chars[j - 1];
                spans.push(s..p + ch.len_utf8());
                start = None;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    if let Some(s) = start {
        spans.push(s..last_end);
    }
    spans
}

/// `before` is the sentence text up to (not including) the period.
fn is_abbreviation(before: &str) -> bool {
    let word = before
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or("")
        .trim_start_matches(OPENERS);
    if word.is_empty() {
        return false;
    }
    word.contains('.') || ABBREVIATIONS.contains(&word.to_lowercase().as_str())
}

pub fn split_sentences(text: &str) -> Vec<String> {
    sentence_spans(text)
        .into_iter()
        .map(|r| text[r].to_string())
        .collect()
}
