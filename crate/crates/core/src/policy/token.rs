//! A small trainable policy that emits responses token by token.
//!
//! The vocabulary is a closed set of tag, content and scroll-value tokens.
//! Decoding follows a fixed grammar, so only three kinds of position involve
//! a choice: the mode after `</think>` (`<note>`, `<answer>` or `<eos>`), the
//! scroll value, and the answer kind (`[copy]` or `[none]`). Every other
//! token is forced and has log-probability 0. Each choice is a softmax over
//! the legal tokens of one parameter row, selected by a coarse context
//! bucket of (page relevance, share of pages visited, number of notes).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Observation, Policy, PolicyError, PolicyOutput};
use crate::corpus::NO_ANSWER;
use crate::nav::NavState;
use crate::seed;
use crate::text::{best_sentence, extract_answer, overlap_score};

pub const VOCAB: [&str; 20] = [
    "<think>", "</think>", "<note>", "</note>", "<scroll>", "</scroll>", "<answer>", "</answer>", "<eos>",
    "[thought]", "[note]", "[copy]", "[none]", "+1", "+2", "+3", "+5", "-1", "-2", "-3",
];
pub const VOCAB_SIZE: usize = VOCAB.len();

const THINK_O: usize = 0;
const THINK_C: usize = 1;
const NOTE_O: usize = 2;
const NOTE_C: usize = 3;
const SCROLL_O: usize = 4;
const SCROLL_C: usize = 5;
const ANSWER_O: usize = 6;
const ANSWER_C: usize = 7;
const EOS: usize = 8;
const THOUGHT: usize = 9;
const NOTE: usize = 10;
const COPY: usize = 11;
const NONE: usize = 12;
const VALUE_BASE: usize = 13;
const SCROLL_VALUES: [i64; 7] = [1, 2, 3, 5, -1, -2, -3];

const MODE_TOKENS: [usize; 3] = [NOTE_O, ANSWER_O, EOS];
const VALUE_TOKENS: [usize; 7] = [13, 14, 15, 16, 17, 18, 19];
const KIND_TOKENS: [usize; 2] = [COPY, NONE];

const THOUGHT_TEXT: &str = "Reading the current page.";
const EMPTY_NOTE_TEXT: &str = "Nothing relevant here.";
const UNKNOWN_TEXT: &str = "unknown";

pub const REL_BINS: usize = 4;
pub const VISIT_BINS: usize = 3;
pub const NOTE_BINS: usize = 3;
pub const N_BUCKETS: usize = REL_BINS * VISIT_BINS * NOTE_BINS;
pub const N_SLOTS: usize = 3;

/// A position where the grammar leaves a choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Mode,
    Value,
    Kind,
}

impl Slot {
    pub fn index(self) -> usize {
        match self {
            Slot::Mode => 0,
            Slot::Value => 1,
            Slot::Kind => 2,
        }
    }

    pub fn tokens(self) -> &'static [usize] {
        match self {
            Slot::Mode => &MODE_TOKENS,
            Slot::Value => &VALUE_TOKENS,
            Slot::Kind => &KIND_TOKENS,
        }
    }
}

/// A decoded response: its context bucket and full token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTrace {
    pub bucket: usize,
    pub tokens: Vec<usize>,
}

impl TokenTrace {
    /// Choice slot of every position; `None` for forced tokens.
    pub fn slots(&self) -> Vec<Option<Slot>> {
        let mode = self.tokens.get(3).copied();
        (0..self.tokens.len())
            .map(|k| match (k, mode) {
                (3, _) => Some(Slot::Mode),
                (7, Some(NOTE_O)) => Some(Slot::Value),
                (4, Some(ANSWER_O)) => Some(Slot::Kind),
                _ => None,
            })
            .collect()
    }

    pub fn token_text(&self) -> Vec<&'static str> {
        self.tokens.iter().map(|&t| VOCAB[t]).collect()
    }
}

fn sequence(mode: usize, choice: Option<usize>) -> Vec<usize> {
    let mut seq = vec![THINK_O, THOUGHT, THINK_C, mode];
    match mode {
        NOTE_O => seq.extend([NOTE, NOTE_C, SCROLL_O, choice.unwrap_or(VALUE_BASE), SCROLL_C, EOS]),
        ANSWER_O => seq.extend([choice.unwrap_or(COPY), ANSWER_C, EOS]),
        _ => {}
    }
    seq
}

/// All token sequences the grammar can produce.
fn all_sequences() -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for &v in &VALUE_TOKENS {
        out.push(sequence(NOTE_O, Some(v)));
    }
    for &k in &KIND_TOKENS {
        out.push(sequence(ANSWER_O, Some(k)));
    }
    out.push(sequence(EOS, None));
    out
}

fn sanitize(s: &str) -> String {
    s.replace(['<', '>'], " ").split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Text of a token sequence in the context of a question and a page.
pub fn render(tokens: &[usize], question: &str, page_text: &str) -> String {
    let mut out = String::new();
    for &t in tokens {
        match t {
            THOUGHT => out.push_str(THOUGHT_TEXT),
            NOTE => {
                let note = best_sentence(question, page_text).map(sanitize).filter(|s| !s.is_empty());
                out.push_str(note.as_deref().unwrap_or(EMPTY_NOTE_TEXT));
            }
            COPY => {
                let span = extract_answer(question, page_text).map(|s| sanitize(&s)).filter(|s| !s.is_empty());
                out.push_str(span.as_deref().unwrap_or(UNKNOWN_TEXT));
            }
            NONE => out.push_str(NO_ANSWER),
            EOS => {}
            _ => out.push_str(VOCAB[t]),
        }
    }
    out
}

pub fn scroll_value_of(token: usize) -> Option<i64> {
    token.checked_sub(VALUE_BASE).and_then(|i| SCROLL_VALUES.get(i).copied())
}

/// Context bucket of a step.
pub fn bucket(question: &str, page_text: &str, state: &NavState) -> usize {
    let rel = overlap_score(question, page_text);
    let rel_bin = ((rel * REL_BINS as f64).floor() as usize).min(REL_BINS - 1);
    let read = state.pages_read();
    let total = state.total_pages();
    let visit_bin = if 3 * read < total {
        0
    } else if 3 * read < 2 * total {
        1
    } else {
        2
    };
    let note_bin = match state.notes.len() {
        0 => 0,
        1..=3 => 1,
        _ => 2,
    };
    (rel_bin * VISIT_BINS + visit_bin) * NOTE_BINS + note_bin
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    vocabulary: Vec<String>,
    buckets: usize,
    slots: usize,
    temperature: f64,
    top_k: Option<usize>,
    #[serde(default)]
    top_p: Option<f64>,
    matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSoftmaxPolicy {
    /// Row-major `[(bucket * N_SLOTS + slot) * VOCAB_SIZE + token]`.
    params: Vec<f64>,
    pub temperature: f64,
    /// Sample only among the `k` most likely legal tokens; recorded
    /// log-probabilities still use the full distribution.
    pub top_k: Option<usize>,
    /// Sample only within the smallest most-likely set whose mass reaches `p`.
    pub top_p: Option<f64>,
}

impl TokenSoftmaxPolicy {
    pub fn uniform(temperature: f64) -> Self {
        assert!(temperature > 0.0 && temperature.is_finite(), "temperature must be positive");
        Self { params: vec![0.0; N_BUCKETS * N_SLOTS * VOCAB_SIZE], temperature, top_k: None, top_p: None }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn row(bucket: usize, slot: Slot) -> usize {
        bucket * N_SLOTS + slot.index()
    }

    /// Log-probabilities of the legal tokens of `slot` in `bucket`, in slot order.
    pub fn slot_logprobs(&self, bucket: usize, slot: Slot) -> Vec<f64> {
        let base = Self::row(bucket, slot) * VOCAB_SIZE;
        let logits: Vec<f64> = slot.tokens().iter().map(|&t| self.params[base + t] / self.temperature).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits.iter().map(|l| l - lse).collect()
    }

    /// Log-probability over the whole vocabulary at a position; illegal tokens get `-inf`.
    pub fn position_logprobs(&self, bucket: usize, slot: Option<Slot>, forced: usize) -> [f64; VOCAB_SIZE] {
        let mut out = [f64::NEG_INFINITY; VOCAB_SIZE];
        match slot {
            None => out[forced] = 0.0,
            Some(s) => {
                for (lp, &t) in self.slot_logprobs(bucket, s).iter().zip(s.tokens()) {
                    out[t] = *lp;
                }
            }
        }
        out
    }

    fn token_logprob(&self, bucket: usize, slot: Option<Slot>, token: usize) -> f64 {
        match slot {
            None => 0.0,
            Some(s) => {
                let i = s.tokens().iter().position(|&t| t == token).expect("token belongs to its slot");
                self.slot_logprobs(bucket, s)[i]
            }
        }
    }

    /// Per-token log-probabilities of a trace under the current parameters.
    pub fn trace_logprobs(&self, trace: &TokenTrace) -> Vec<f64> {
        trace
            .slots()
            .into_iter()
            .zip(&trace.tokens)
            .map(|(slot, &t)| self.token_logprob(trace.bucket, slot, t))
            .collect()
    }

    /// Add `coef * d logprob(position k) / d params` into `grad`.
    pub fn add_token_grad(&self, trace: &TokenTrace, k: usize, coef: f64, grad: &mut [f64]) {
        let Some(slot) = trace.slots()[k] else { return };
        let chosen = trace.tokens[k];
        let base = Self::row(trace.bucket, slot) * VOCAB_SIZE;
        for (lp, &t) in self.slot_logprobs(trace.bucket, slot).iter().zip(slot.tokens()) {
            let indicator = if t == chosen { 1.0 } else { 0.0 };
            grad[base + t] += coef * (indicator - lp.exp()) / self.temperature;
        }
    }

    fn choose<R: Rng>(&self, bucket: usize, slot: Slot, greedy: bool, rng: &mut R) -> usize {
        let lps = self.slot_logprobs(bucket, slot);
        let tokens = slot.tokens();
        let mut order: Vec<usize> = (0..tokens.len()).collect();
        order.sort_by(|&a, &b| lps[b].total_cmp(&lps[a]).then(a.cmp(&b)));
        if greedy {
            return tokens[order[0]];
        }
        let mut keep = self.top_k.unwrap_or(tokens.len()).clamp(1, tokens.len());
        if let Some(p) = self.top_p {
            let mut mass = 0.0;
            let nucleus = order
                .iter()
                .position(|&i| {
                    mass += lps[i].exp();
                    mass >= p
                })
                .map_or(tokens.len(), |i| i + 1);
            keep = keep.min(nucleus);
        }
        let kept = &order[..keep];
        let mass: f64 = kept.iter().map(|&i| lps[i].exp()).sum();
        let mut u = rng.gen::<f64>() * mass;
        for &i in kept {
            u -= lps[i].exp();
            if u < 0.0 {
                return tokens[i];
            }
        }
        tokens[*kept.last().expect("slot has tokens")]
    }

    fn decode<R: Rng>(&self, bucket: usize, greedy: bool, rng: &mut R) -> TokenTrace {
        let mode = self.choose(bucket, Slot::Mode, greedy, rng);
        let choice = match mode {
            NOTE_O => Some(self.choose(bucket, Slot::Value, greedy, rng)),
            ANSWER_O => Some(self.choose(bucket, Slot::Kind, greedy, rng)),
            _ => None,
        };
        TokenTrace { bucket, tokens: sequence(mode, choice) }
    }

    pub fn bucket_of(obs: &Observation<'_>) -> usize {
        bucket(obs.question, &obs.page.text, obs.state)
    }

    /// Sample a response; returns the trace, its text and its log-probabilities.
    pub fn sample(&self, obs: &Observation<'_>, seed: u64) -> (TokenTrace, String, Vec<f64>) {
        let trace = self.decode(Self::bucket_of(obs), false, &mut seed::rng(seed));
        let text = render(&trace.tokens, obs.question, &obs.page.text);
        let lps = self.trace_logprobs(&trace);
        (trace, text, lps)
    }

    /// Most likely response (ties to the lower token index).
    pub fn greedy(&self, obs: &Observation<'_>) -> (TokenTrace, String) {
        let trace = self.decode(Self::bucket_of(obs), true, &mut seed::rng(0));
        let text = render(&trace.tokens, obs.question, &obs.page.text);
        (trace, text)
    }

    /// Recover the token sequence behind a response text.
    pub fn tokenize(&self, obs: &Observation<'_>, response: &str) -> Result<TokenTrace, PolicyError> {
        let bucket = Self::bucket_of(obs);
        all_sequences()
            .into_iter()
            .find(|seq| render(seq, obs.question, &obs.page.text) == response)
            .map(|tokens| TokenTrace { bucket, tokens })
            .ok_or_else(|| PolicyError::Scoring("response is outside the policy vocabulary".into()))
    }

    /// Teacher-forced per-token log-probabilities of `response`.
    pub fn token_logprobs(&self, obs: &Observation<'_>, response: &str) -> Result<Vec<f64>, PolicyError> {
        Ok(self.trace_logprobs(&self.tokenize(obs, response)?))
    }

    pub fn to_json(&self) -> String {
        let matrix = self.params.chunks(VOCAB_SIZE).map(<[f64]>::to_vec).collect();
        let ck = Checkpoint {
            vocabulary: VOCAB.iter().map(|s| s.to_string()).collect(),
            buckets: N_BUCKETS,
            slots: N_SLOTS,
            temperature: self.temperature,
            top_k: self.top_k,
            top_p: self.top_p,
            matrix,
        };
        serde_json::to_string_pretty(&ck).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, PolicyError> {
        let bad = |m: String| PolicyError::Failure(format!("invalid checkpoint: {m}"));
        let ck: Checkpoint = serde_json::from_str(s).map_err(|e| bad(e.to_string()))?;
        if ck.vocabulary != VOCAB {
            return Err(bad("vocabulary differs".into()));
        }
        if ck.buckets != N_BUCKETS || ck.slots != N_SLOTS || ck.matrix.len() != N_BUCKETS * N_SLOTS {
            return Err(bad("matrix shape differs".into()));
        }
        if !(ck.temperature > 0.0 && ck.temperature.is_finite()) {
            return Err(bad("temperature must be positive".into()));
        }
        let mut params = Vec::with_capacity(N_BUCKETS * N_SLOTS * VOCAB_SIZE);
        for row in &ck.matrix {
            if row.len() != VOCAB_SIZE || row.iter().any(|v| !v.is_finite()) {
                return Err(bad("rows must hold finite values for every token".into()));
            }
            params.extend_from_slice(row);
        }
        Ok(Self { params, temperature: ck.temperature, top_k: ck.top_k, top_p: ck.top_p })
    }
}

impl Policy for TokenSoftmaxPolicy {
    fn name(&self) -> &str {
        "token"
    }

    fn act(&self, obs: &Observation<'_>, seed: u64) -> Result<PolicyOutput, PolicyError> {
        let (_, response, lps) = self.sample(obs, seed);
        Ok(PolicyOutput { response, logprobs: Some(lps) })
    }
}
