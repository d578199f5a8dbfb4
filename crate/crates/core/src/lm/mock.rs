//! Deterministic in-process backend.
//!
//! The model is a character n-gram model estimated on the context itself:
//! the probability of the next character depends only on the text before it,
//! with counts taken from every earlier position of that text and orders
//! interpolated recursively,
//!
//!   P_o(c) = (n_o(c) + beta * P_{o-1}(c)) / (n_o + beta),   P_{-1} = uniform.
//!
//! Because each step is a normalized distribution over a fixed alphabet and a
//! pure function of the preceding text, scores obey the chain rule and
//! sampled log-probabilities equal the scores of the sampled text. Characters
//! outside printable ASCII share one symbol, rendered as U+FFFD when sampled.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BackendDescriptor, GenerationParams, LanguageModel, Sample};
use crate::error::{Error, Result};

const ORDER: usize = 8;
const BETA: f64 = 2.0;
const NEWLINE: u8 = 95;
const OTHER: u8 = 96;
const ALPHABET: usize = 97;
const TABLE_CACHE_LIMIT: usize = 64;

fn sym(c: char) -> u8 {
    match c {
        ' '..='~' => c as u8 - b' ',
        '\n' => NEWLINE,
        _ => OTHER,
    }
}

fn unsym(s: u8) -> char {
    match s {
        NEWLINE => '\n',
        OTHER => '\u{fffd}',
        _ => (s + b' ') as char,
    }
}

fn key(order: usize, context: &[u8]) -> u64 {
    let packed = context.iter().fold(0u64, |k, &s| (k << 7) | s as u64);
    (order as u64) << 56 | packed
}

/// Tokens are maximal alphanumeric runs plus every other non-space character.
pub fn mock_token_count(text: &str) -> usize {
    let mut count = 0;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_alphanumeric() {
            if !in_word {
                count += 1;
            }
            in_word = true;
        } else {
            in_word = false;
            if !c.is_whitespace() {
                count += 1;
            }
        }
    }
    count
}

#[derive(Debug, Default, Clone)]
struct Node {
    total: u32,
    counts: Vec<(u8, u32)>,
}

impl Node {
    fn count(&self, s: u8) -> u32 {
        self.counts.iter().find(|(c, _)| *c == s).map_or(0, |(_, n)| *n)
    }

    fn add(&mut self, s: u8) {
        self.total += 1;
        match self.counts.iter_mut().find(|(c, _)| *c == s) {
            Some((_, n)) => *n += 1,
            None => self.counts.push((s, 1)),
        }
    }
}

#[derive(Debug, Default, Clone)]
struct Table {
    nodes: HashMap<u64, Node>,
}

impl Table {
    /// Record `next` as following `history`, at every order.
    fn observe(&mut self, history: &[u8], next: u8) {
        for order in 0..=ORDER.min(history.len()) {
            let k = key(order, &history[history.len() - order..]);
            self.nodes.entry(k).or_default().add(next);
        }
    }

    fn build(symbols: &[u8]) -> Self {
        let mut table = Table::default();
        for t in 0..symbols.len() {
            table.observe(&symbols[..t], symbols[t]);
        }
        table
    }
}

/// Model state after reading some text: shared counts for a cached prefix
/// plus private counts for everything after it.
struct State<'a> {
    base: &'a Table,
    overlay: Table,
    history: Vec<u8>,
}

impl<'a> State<'a> {
    fn new(base: &'a Table, prefix: Vec<u8>, rest: &[u8]) -> Self {
        let mut state = State {
            base,
            overlay: Table::default(),
            history: prefix,
        };
        for &s in rest {
            state.push(s);
        }
        state
    }

    fn push(&mut self, s: u8) {
        self.overlay.observe(&self.history, s);
        self.history.push(s);
    }

    fn counts(&self, order: usize) -> (Option<&Node>, Option<&Node>) {
        let k = key(order, &self.history[self.history.len() - order..]);
        (self.base.nodes.get(&k), self.overlay.nodes.get(&k))
    }

    fn totals(nodes: (Option<&Node>, Option<&Node>), s: u8) -> (f64, f64) {
        let (a, b) = nodes;
        let n_c = a.map_or(0, |n| n.count(s)) + b.map_or(0, |n| n.count(s));
        let n = a.map_or(0, |n| n.total) + b.map_or(0, |n| n.total);
        (n_c as f64, n as f64)
    }

    fn prob(&self, s: u8) -> f64 {
        let mut p = 1.0 / ALPHABET as f64;
        for order in 0..=ORDER.min(self.history.len()) {
            let (n_c, n) = Self::totals(self.counts(order), s);
            p = (n_c + BETA * p) / (n + BETA);
        }
        p
    }

    fn distribution(&self) -> Vec<f64> {
        (0..ALPHABET as u8).map(|s| self.prob(s)).collect()
    }
}

pub struct MockBackend {
    descriptor: BackendDescriptor,
    tables: Mutex<HashMap<String, Arc<Table>>>,
    sample_overrides: HashMap<String, (String, f64)>,
    score_overrides: HashMap<(String, String), f64>,
}

impl MockBackend {
    pub fn new(descriptor: BackendDescriptor) -> Self {
        MockBackend {
            descriptor,
            tables: Mutex::new(HashMap::new()),
            sample_overrides: HashMap::new(),
            score_overrides: HashMap::new(),
        }
    }

    /// Every sample drawn for `prompt` is `text` with log-probability `logprob`.
    pub fn with_sample(mut self, prompt: &str, text: &str, logprob: f64) -> Self {
        self.sample_overrides
            .insert(prompt.to_string(), (text.to_string(), logprob));
        self
    }

    /// Fix the score of one `(prompt, continuation)` pair.
    pub fn with_score(mut self, prompt: &str, continuation: &str, logprob: f64) -> Self {
        self.score_overrides
            .insert((prompt.to_string(), continuation.to_string()), logprob);
        self
    }

    /// Counts for the few-shot part of the prompt (up to and including its
    /// last blank line) are shared across calls.
    fn state<'t>(&self, table: &'t Table, prompt: &[u8], split: usize) -> State<'t> {
        State::new(table, prompt[..split].to_vec(), &prompt[split..])
    }

    fn prefix_table(&self, prompt: &str) -> (Arc<Table>, Vec<u8>, usize) {
        let split = prompt.rfind("\n\n").map_or(0, |i| i + 2);
        let prefix = &prompt[..split];
        let symbols: Vec<u8> = prompt.chars().map(sym).collect();
        let split_syms = prefix.chars().count();
        let mut tables = self.tables.lock().expect("table cache poisoned");
        let table = match tables.get(prefix) {
            Some(t) => t.clone(),
            None => {
                let t = Arc::new(Table::build(&symbols[..split_syms]));
                if tables.len() >= TABLE_CACHE_LIMIT {
                    tables.clear();
                }
                tables.insert(prefix.to_string(), t.clone());
                t
            }
        };
        (table, symbols, split_syms)
    }

    fn check_context(&self, tokens: usize) -> Result<()> {
        if tokens > self.descriptor.context_tokens {
            return Err(Error::ContextOverflow {
                budget: self.descriptor.context_tokens,
            });
        }
        Ok(())
    }

    fn draw(&self, base: &State<'_>, params: &GenerationParams, rng: &mut ChaCha8Rng) -> Sample {
        let mut state = State {
            base: base.base,
            overlay: base.overlay.clone(),
            history: base.history.clone(),
        };
        let mut text = String::new();
        let mut logprobs: Vec<f64> = Vec::new();
        let max_chars = 8 * params.max_new_tokens + 8;
        let mut stopped_at = None;
        while logprobs.len() < max_chars {
            let probs = state.distribution();
            let s = nucleus_pick(&probs, params, rng);
            let c = unsym(s);
            text.push(c);
            if mock_token_count(&text) > params.max_new_tokens {
                text.pop();
                break;
            }
            logprobs.push(state.prob(s).ln());
            state.push(s);
            if let Some(stop) = params
                .stop_sequences
                .iter()
                .find(|st| text.ends_with(st.as_str()))
            {
                stopped_at = Some(text.len() - stop.len());
                break;
            }
        }
        if let Some(cut) = stopped_at {
            text.truncate(cut);
            logprobs.truncate(text.chars().count());
        }
        Sample {
            token_count: mock_token_count(&text),
            logprob: logprobs.iter().sum(),
            text,
        }
    }
}

/// Temper, restrict to the smallest top set reaching `nucleus_p`, draw.
fn nucleus_pick(probs: &[f64], params: &GenerationParams, rng: &mut ChaCha8Rng) -> u8 {
    let weights: Vec<f64> = if params.temperature == 1.0 {
        probs.to_vec()
    } else {
        probs
            .iter()
            .map(|p| (p.ln() / params.temperature).exp())
            .collect()
    };
    let total: f64 = weights.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut kept = 0;
    let mut mass = 0.0;
    for &i in &order {
        mass += weights[i];
        kept += 1;
        if mass >= params.nucleus_p * total {
            break;
        }
    }
    let mut u = rng.random::<f64>() * mass;
    for &i in &order[..kept] {
        if u < weights[i] {
            return i as u8;
        }
        u -= weights[i];
    }
    order[kept - 1] as u8
}

impl LanguageModel for MockBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn count_tokens(&self, text: &str) -> Result<usize> {
        Ok(mock_token_count(text))
    }

    fn sample(&self, prompt: &str, params: &GenerationParams, seed: u64) -> Result<Vec<Sample>> {
        params.validate()?;
        if let Some((text, logprob)) = self.sample_overrides.get(prompt) {
            let s = Sample {
                text: text.clone(),
                logprob: *logprob,
                token_count: mock_token_count(text),
            };
            return Ok(vec![s; params.n_samples]);
        }
        self.check_context(mock_token_count(prompt) + params.max_new_tokens)?;
        let (table, symbols, split) = self.prefix_table(prompt);
        let state = self.state(&table, &symbols, split);
        Ok((0..params.n_samples)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                self.draw(&state, params, &mut rng)
            })
            .collect())
    }

    fn score_continuation(&self, prompt: &str, continuation: &str) -> Result<f64> {
        if continuation.is_empty() {
            return Err(Error::InvalidArgument("continuation must be non-empty".into()));
        }
        if let Some(lp) = self
            .score_overrides
            .get(&(prompt.to_string(), continuation.to_string()))
        {
            return Ok(*lp);
        }
        self.check_context(mock_token_count(prompt) + mock_token_count(continuation))?;
        let (table, symbols, split) = self.prefix_table(prompt);
        let mut state = self.state(&table, &symbols, split);
        let mut total = 0.0;
        for s in continuation.chars().map(sym) {
            total += state.prob(s).ln();
            state.push(s);
        }
        Ok(total)
    }

    fn is_local(&self) -> bool {
        true
    }
}
