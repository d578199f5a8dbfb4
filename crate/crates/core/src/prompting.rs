//! k-shot prompt rendering and context-window fitting.
//!
//! A prompt is the bank's example blocks followed by a target block, blocks
//! separated by one blank line. Each field sits on its own line as
//! `Label: value`; the target block ends with the bare label of the field the
//! model should produce (`Answer:`, `Question:` or `Evidence:`), with no
//! trailing space or newline.

use crate::corpus::{Field, PromptBank, PromptKind};
use crate::error::{Error, Result};

/// Anything that can count tokens the way the target model does.
pub trait TokenCounter {
    fn count_tokens(&self, text: &str) -> Result<usize>;
}

impl<F: Fn(&str) -> usize> TokenCounter for F {
    fn count_tokens(&self, text: &str) -> Result<usize> {
        Ok(self(text))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub kind: PromptKind,
    pub closed_book: bool,
    pub truncated_evidence: bool,
    pub dropped_examples: usize,
    blocks: Vec<String>,
    target: Vec<(Field, String)>,
}

impl RenderedPrompt {
    fn assemble(
        kind: PromptKind,
        closed_book: bool,
        blocks: Vec<String>,
        target: Vec<(Field, String)>,
    ) -> Self {
        let mut prompt = RenderedPrompt {
            text: String::new(),
            kind,
            closed_book,
            truncated_evidence: false,
            dropped_examples: 0,
            blocks,
            target,
        };
        prompt.text = prompt.render(0, None);
        prompt
    }

    /// Render with the first `drop` examples removed and, if given, the
    /// target evidence replaced.
    fn render(&self, drop: usize, evidence: Option<&str>) -> String {
        let mut out = String::new();
        for block in &self.blocks[drop..] {
            out.push_str(block);
            out.push_str("\n\n");
        }
        for (field, value) in &self.target {
            let value = match (field, evidence) {
                (Field::Evidence, Some(e)) => e,
                _ => value.as_str(),
            };
            push_field(&mut out, *field, value);
            out.push('\n');
        }
        out.push_str(self.kind.cue().label());
        out
    }

    /// Few-shot blocks still present.
    pub fn example_count(&self) -> usize {
        self.blocks.len() - self.dropped_examples
    }

    /// The target block's evidence, if it has one.
    pub fn target_evidence(&self) -> Option<&str> {
        self.target
            .iter()
            .find(|(f, _)| *f == Field::Evidence)
            .map(|(_, v)| v.as_str())
    }
}

fn push_field(out: &mut String, field: Field, value: &str) {
    out.push_str(field.label());
    if !value.is_empty() {
        out.push(' ');
        out.push_str(value);
    }
}

fn render_example(fields: &[Field], get: impl Fn(Field) -> String) -> String {
    let mut block = String::new();
    for (i, &field) in fields.iter().enumerate() {
        if i > 0 {
            block.push('\n');
        }
        push_field(&mut block, field, &get(field));
    }
    block
}

fn one_line(value: &str) -> String {
    value.replace(['\r', '\n'], " ")
}

fn render(
    bank: &PromptBank,
    kind: PromptKind,
    closed_book: bool,
    values: &[(Field, &str)],
) -> RenderedPrompt {
    let fields: Vec<Field> = kind
        .prompt_fields()
        .iter()
        .copied()
        .filter(|f| !(closed_book && *f == Field::Evidence))
        .collect();
    let blocks = bank
        .examples()
        .iter()
        .map(|ex| render_example(&fields, |f| ex.get(f).to_string()))
        .collect();
    let target = fields[..fields.len() - 1]
        .iter()
        .map(|&f| {
            let value = values
                .iter()
                .find(|(g, _)| *g == f)
                .map(|(_, v)| one_line(v))
                .unwrap_or_default();
            (f, value)
        })
        .collect();
    RenderedPrompt::assemble(kind, closed_book, blocks, target)
}

fn expect_kind(bank: &PromptBank, kind: PromptKind) -> Result<()> {
    if bank.kind != kind {
        return Err(Error::InvalidArgument(format!(
            "expected a {kind} bank, got {} bank for {}",
            bank.kind, bank.dataset_id
        )));
    }
    Ok(())
}

fn require<'a>(name: &str, value: Option<&'a str>, kind: PromptKind) -> Result<&'a str> {
    match value {
        Some(v) if name == "evidence" || !v.trim().is_empty() => Ok(v),
        _ => Err(Error::InvalidArgument(format!("{kind} prompt requires a {name}"))),
    }
}

/// Evidence, question, then the `Answer:` cue.
pub fn render_qa_prompt(bank: &PromptBank, evidence: &str, question: &str) -> Result<RenderedPrompt> {
    expect_kind(bank, PromptKind::Qa)?;
    let question = require("question", Some(question), PromptKind::Qa)?;
    Ok(render(
        bank,
        PromptKind::Qa,
        false,
        &[(Field::Evidence, evidence), (Field::Question, question)],
    ))
}

/// The qa prompt with every Evidence line left out.
pub fn render_closed_book_prompt(bank: &PromptBank, question: &str) -> Result<RenderedPrompt> {
    expect_kind(bank, PromptKind::Qa)?;
    let question = require("question", Some(question), PromptKind::Qa)?;
    Ok(render(bank, PromptKind::Qa, true, &[(Field::Question, question)]))
}

/// Prompt whose cue is the quantity being scored. Only the fields the kind
/// conditions on are used; the rest may be `None`.
pub fn render_scorer_prompt(
    kind: PromptKind,
    bank: &PromptBank,
    evidence: Option<&str>,
    question: Option<&str>,
    answer: Option<&str>,
) -> Result<RenderedPrompt> {
    if kind == PromptKind::Qa {
        return Err(Error::InvalidArgument("qa is not a scorer prompt kind".into()));
    }
    expect_kind(bank, kind)?;
    let fields = kind.prompt_fields();
    let mut values = Vec::new();
    for &field in &fields[..fields.len() - 1] {
        let (name, value) = match field {
            Field::Evidence => ("evidence", evidence),
            Field::Question => ("question", question),
            Field::Answer => ("answer", answer),
        };
        values.push((field, require(name, value, kind)?));
    }
    Ok(render(bank, kind, false, &values))
}

/// Shrink `prompt` until it has at most `max_tokens` tokens.
///
/// Few-shot examples are dropped from the front only as far as needed for
/// the prompt to fit with empty target evidence; the target evidence is then
/// cut at a word boundary to the longest prefix that fits.
pub fn fit_to_context(
    prompt: &RenderedPrompt,
    max_tokens: usize,
    counter: &dyn TokenCounter,
) -> Result<RenderedPrompt> {
    if max_tokens == 0 {
        return Err(Error::InvalidArgument("max_tokens must be positive".into()));
    }
    let base = prompt.dropped_examples;
    if counter.count_tokens(&prompt.text)? <= max_tokens {
        return Ok(prompt.clone());
    }
    let evidence = prompt.target_evidence().unwrap_or("");
    let words: Vec<&str> = evidence.split_whitespace().collect();
    let has_evidence = prompt.target_evidence().is_some();
    let fits = |drop: usize, n_words: usize| -> Result<bool> {
        let text = if has_evidence {
            prompt.render(drop, Some(&words[..n_words].join(" ")))
        } else {
            prompt.render(drop, None)
        };
        Ok(counter.count_tokens(&text)? <= max_tokens)
    };

    let mut drop = base;
    while !fits(drop, 0)? {
        if drop == prompt.blocks.len() {
            return Err(Error::ContextOverflow { budget: max_tokens });
        }
        drop += 1;
    }
    // largest word prefix that fits, assuming counts grow with the prefix
    let (mut lo, mut hi) = (0, words.len());
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if fits(drop, mid)? {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let kept = words[..lo].join(" ");
    let mut out = prompt.clone();
    out.dropped_examples = drop;
    if has_evidence {
        out.truncated_evidence = prompt.truncated_evidence || kept != evidence;
        for (field, value) in &mut out.target {
            if *field == Field::Evidence {
                *value = kept.clone();
            }
        }
    }
    out.text = out.render(drop, None);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BankLibrary, FewShotExample};

    fn nq(kind: PromptKind) -> PromptBank {
        BankLibrary::builtin().get("nq", kind).unwrap()
    }

    fn words(s: &str) -> usize {
        s.split_whitespace().count()
    }

    fn toy_bank(k: usize) -> PromptBank {
        let examples = (0..k)
            .map(|i| FewShotExample::new(format!("e{i} e e e"), format!("q{i} q"), format!("a{i}")))
            .collect();
        PromptBank::new("toy", PromptKind::Qa, examples).unwrap()
    }

    #[test]
    fn qa_target_block() {
        let p = render_qa_prompt(
            &nq(PromptKind::Qa),
            "Life of Pi. A tiger.",
            "what is the tigers name in life of pi",
        )
        .unwrap();
        let lines: Vec<&str> = p.text.lines().collect();
        assert_eq!(
            &lines[lines.len() - 3..],
            [
                "Evidence: Life of Pi. A tiger.",
                "Question: what is the tigers name in life of pi",
                "Answer:"
            ]
        );
        assert_eq!(p.text.matches("\n\nEvidence: ").count(), 15);
    }

    #[test]
    fn empty_evidence_keeps_bare_label() {
        let p = render_qa_prompt(&toy_bank(1), "", "q?").unwrap();
        assert!(p.text.ends_with("\n\nEvidence:\nQuestion: q?\nAnswer:"));
        assert!(render_qa_prompt(&toy_bank(1), "e", "  ").is_err());
    }

    #[test]
    fn closed_book_removes_evidence_lines_only() {
        let bank = nq(PromptKind::Qa);
        let open = render_qa_prompt(&bank, "", "who?").unwrap();
        let closed = render_closed_book_prompt(&bank, "who?").unwrap();
        assert!(!closed.text.contains("Evidence:"));
        let stripped: Vec<&str> = open
            .text
            .lines()
            .filter(|l| !l.starts_with("Evidence:"))
            .collect();
        assert_eq!(closed.text, stripped.join("\n"));
        assert_eq!(closed.text.matches("Question:").count(), 16);
    }

    #[test]
    fn scorer_layouts() {
        let p = render_scorer_prompt(
            PromptKind::QGivenAp,
            &nq(PromptKind::QGivenAp),
            Some("FIFA."),
            None,
            Some("Germany"),
        )
        .unwrap();
        assert!(p
            .text
            .ends_with("\n\nEvidence: FIFA.\nAnswer: Germany\nQuestion:"));
        let p = render_scorer_prompt(
            PromptKind::PGivenQ,
            &nq(PromptKind::PGivenQ),
            None,
            Some("who?"),
            None,
        )
        .unwrap();
        assert!(p.text.ends_with("\n\nQuestion: who?\nEvidence:"));
        let p = render_scorer_prompt(
            PromptKind::QGivenP,
            &nq(PromptKind::QGivenP),
            Some("x"),
            None,
            None,
        )
        .unwrap();
        assert!(p.text.ends_with("\n\nEvidence: x\nQuestion:"));
        let p = render_scorer_prompt(
            PromptKind::AGivenP,
            &nq(PromptKind::AGivenP),
            Some("x"),
            None,
            None,
        )
        .unwrap();
        assert!(!p.text.contains("Question:"));
        assert!(p.text.ends_with("\n\nEvidence: x\nAnswer:"));
    }

    #[test]
    fn scorer_missing_field() {
        let bank = nq(PromptKind::QGivenAp);
        assert!(render_scorer_prompt(PromptKind::QGivenAp, &bank, Some("e"), None, None).is_err());
        assert!(render_scorer_prompt(PromptKind::QGivenP, &bank, Some("e"), None, None).is_err());
    }

    #[test]
    fn example_blocks_are_verbatim_bank_blocks() {
        let bank = nq(PromptKind::Qa);
        let p = render_qa_prompt(&bank, "e", "q").unwrap();
        let file = bank.serialize();
        for block in p.text.split("\n\n").take(15) {
            assert!(file.contains(&format!("\n\n{block}\n")), "{block}");
        }
    }

    #[test]
    fn fit_identity_when_within_budget() {
        let p = render_qa_prompt(&toy_bank(3), "some evidence", "q").unwrap();
        let fitted = fit_to_context(&p, 10_000, &words).unwrap();
        assert_eq!(fitted, p);
    }

    #[test]
    fn fit_truncates_long_evidence() {
        let evidence = vec!["w"; 10_000].join(" ");
        let p = render_qa_prompt(&nq(PromptKind::Qa), &evidence, "q").unwrap();
        let fitted = fit_to_context(&p, 2048, &words).unwrap();
        assert!(fitted.truncated_evidence);
        assert_eq!(fitted.dropped_examples, 0);
        assert!(words(&fitted.text) <= 2048);
        // one more word would not fit
        assert_eq!(words(&fitted.text), 2048);
    }

    #[test]
    fn fit_drops_two_examples() {
        // each toy block is 10 words; target with empty evidence is 4 words
        let p = render_qa_prompt(&toy_bank(15), "long evidence here", "q").unwrap();
        assert_eq!(words(&p.text), 150 + 7);
        let fitted = fit_to_context(&p, 134, &words).unwrap();
        assert_eq!(fitted.dropped_examples, 2);
        assert_eq!(fitted.example_count(), 13);
        assert!(fitted.truncated_evidence);
        assert_eq!(fitted.text.matches("Question:").count(), 14);
        assert!(fitted.text.starts_with("Evidence: e2 "));
    }

    #[test]
    fn fit_overflow() {
        let p = render_qa_prompt(&toy_bank(2), "e", "a long question").unwrap();
        assert!(matches!(
            fit_to_context(&p, 3, &words),
            Err(Error::ContextOverflow { budget: 3 })
        ));
    }

    #[test]
    fn fit_is_idempotent() {
        let p = render_qa_prompt(&toy_bank(15), "long evidence here", "q").unwrap();
        let once = fit_to_context(&p, 140, &words).unwrap();
        assert_eq!(fit_to_context(&once, 140, &words).unwrap(), once);
    }
}
