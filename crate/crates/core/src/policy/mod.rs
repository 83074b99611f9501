//! Policies that produce one tagged response per step.

pub mod token;

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, Query, NO_ANSWER};
use crate::nav::parse::render_action;
use crate::nav::{Action, NavState, PageView};
use crate::seed;
use crate::text::{best_sentence, extract_answer, overlap_score};

pub use token::{TokenSoftmaxPolicy, TokenTrace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("policy {policy} needs the {what} for this step")]
    MissingMetadata { policy: &'static str, what: &'static str },
    #[error("response cannot be scored: {0}")]
    Scoring(String),
    #[error("policy failed: {0}")]
    Failure(String),
}

/// Everything a policy may look at when choosing a step.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub prompt: &'a str,
    pub page: &'a PageView,
    pub state: &'a NavState,
    pub question: &'a str,
    pub query: Option<&'a Query>,
    pub document: Option<&'a Document>,
    pub max_visit_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutput {
    pub response: String,
    /// Per-token log-probabilities under the producing policy; scripted policies leave it empty.
    pub logprobs: Option<Vec<f64>>,
}

impl PolicyOutput {
    fn scripted(response: String) -> Self {
        Self { response, logprobs: None }
    }
}

/// A step policy. Implementations are immutable while acting, so one value
/// may serve many concurrent episode runners.
pub trait Policy: Send + Sync {
    fn name(&self) -> &str;
    fn act(&self, obs: &Observation<'_>, seed: u64) -> Result<PolicyOutput, PolicyError>;
}

/// Share of the question's words found on the page, in `[0, 1]`.
pub fn score_page_relevance(question: &str, page_text: &str) -> f64 {
    overlap_score(question, page_text)
}

fn answer(think: &str, text: &str) -> String {
    render_action(think, &Action::Answer { text: text.to_string() })
}

fn scroll(think: &str, note: &str, value: i64) -> String {
    render_action(think, &Action::Scroll { note: note.to_string(), value })
}

fn note_for(question: &str, page_text: &str) -> String {
    best_sentence(question, page_text).unwrap_or("Nothing relevant here.").to_string()
}

/// Scripted policy with access to the gold annotations.
///
/// On an evidence page, once every evidence page has been seen, it answers the
/// first gold answer. Otherwise it scrolls straight to the nearest unvisited
/// evidence page (forward on ties). Unanswerable queries are answered with
/// the no-answer string at once.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    fn name(&self) -> &str {
        "oracle"
    }

    fn act(&self, obs: &Observation<'_>, _seed: u64) -> Result<PolicyOutput, PolicyError> {
        let query = obs.query.ok_or(PolicyError::MissingMetadata { policy: "oracle", what: "query" })?;
        let gold = query.gold_answers.first().map(String::as_str).unwrap_or(NO_ANSWER);
        if !query.is_answerable() {
            return Ok(PolicyOutput::scripted(answer("The question is not covered by this document.", NO_ANSWER)));
        }
        let state = obs.state;
        let page = state.page;
        let pending: Vec<usize> = query
            .evidence_pages
            .iter()
            .copied()
            .filter(|&p| p < state.total_pages() && !state.visited[p])
            .collect();
        if query.evidence_pages.contains(&page) && pending.is_empty() {
            return Ok(PolicyOutput::scripted(answer("This page holds the answer.", gold)));
        }
        let target = pending
            .iter()
            .copied()
            .filter(|&p| state.is_eligible(p, obs.max_visit_count))
            .min_by_key(|&p| (p.abs_diff(page), p < page));
        match target {
            Some(t) => {
                let note = note_for(obs.question, &obs.page.text);
                Ok(PolicyOutput::scripted(scroll("The evidence is on another page.", &note, t as i64 - page as i64)))
            }
            None => Ok(PolicyOutput::scripted(answer("All evidence has been read.", gold))),
        }
    }
}

/// Answers with probability `p_answer` (extracting a span from the current
/// page), otherwise scrolls by a uniformly drawn nonzero in-range value.
#[derive(Debug, Clone, Copy)]
pub struct RandomPolicy {
    pub p_answer: f64,
}

impl Default for RandomPolicy {
    fn default() -> Self {
        Self { p_answer: 0.15 }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn act(&self, obs: &Observation<'_>, seed: u64) -> Result<PolicyOutput, PolicyError> {
        let mut rng = seed::rng(seed);
        let state = obs.state;
        let page = state.page as i64;
        let choices: Vec<i64> = (-page..=state.last_page() as i64 - page).filter(|&d| d != 0).collect();
        if choices.is_empty() || rng.gen_bool(self.p_answer.clamp(0.0, 1.0)) {
            let text = extract_answer(obs.question, &obs.page.text).unwrap_or_else(|| NO_ANSWER.to_string());
            return Ok(PolicyOutput::scripted(answer("Guessing from this page.", &text)));
        }
        let delta = choices[rng.gen_range(0..choices.len())];
        let note = note_for(obs.question, &obs.page.text);
        Ok(PolicyOutput::scripted(scroll("Trying another page.", &note, delta)))
    }
}

/// Lexical-overlap policy: answers once the current page's relevance reaches
/// `answer_threshold`, otherwise scrolls to the most relevant page still
/// under the visit limit (unvisited pages first).
#[derive(Debug, Clone, Copy)]
pub struct RelevancePolicy {
    pub answer_threshold: f64,
}

impl Default for RelevancePolicy {
    fn default() -> Self {
        Self { answer_threshold: 0.6 }
    }
}

impl Policy for RelevancePolicy {
    fn name(&self) -> &str {
        "relevance"
    }

    fn act(&self, obs: &Observation<'_>, _seed: u64) -> Result<PolicyOutput, PolicyError> {
        let doc = obs.document.ok_or(PolicyError::MissingMetadata { policy: "relevance", what: "document" })?;
        let state = obs.state;
        let here = score_page_relevance(obs.question, &obs.page.text);
        if here >= self.answer_threshold {
            if let Some(text) = extract_answer(obs.question, &obs.page.text) {
                return Ok(PolicyOutput::scripted(answer("This page matches the question.", &text)));
            }
        }
        let best = doc
            .pages
            .iter()
            .filter(|p| p.index != state.page && state.is_eligible(p.index, obs.max_visit_count))
            .map(|p| (state.visited[p.index], score_page_relevance(obs.question, &p.text), p.index))
            .min_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
        match best {
            Some((_, _, target)) => {
                let note = note_for(obs.question, &obs.page.text);
                let delta = target as i64 - state.page as i64;
                Ok(PolicyOutput::scripted(scroll("Another page looks more relevant.", &note, delta)))
            }
            None => Ok(PolicyOutput::scripted(answer("Nothing left to read.", NO_ANSWER))),
        }
    }
}

/// Replays recorded responses keyed by `(query id, step)`.
#[derive(Debug, Clone, Default)]
pub struct PlaybackPolicy {
    responses: HashMap<(String, usize), String>,
}

impl PlaybackPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: &str, step: usize, response: String) {
        self.responses.insert((query_id.to_string(), step), response);
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl Policy for PlaybackPolicy {
    fn name(&self) -> &str {
        "playback"
    }

    fn act(&self, obs: &Observation<'_>, _seed: u64) -> Result<PolicyOutput, PolicyError> {
        let query = obs.query.ok_or(PolicyError::MissingMetadata { policy: "playback", what: "query" })?;
        let key = (query.id.clone(), obs.state.step);
        self.responses
            .get(&key)
            .cloned()
            .map(PolicyOutput::scripted)
            .ok_or_else(|| PolicyError::Failure(format!("no recorded response for {} step {}", key.0, key.1)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Page;
    use crate::nav::parse_action;
    use std::collections::BTreeSet;

    fn doc(texts: &[&str]) -> Document {
        Document {
            id: "d".into(),
            pages: texts
                .iter()
                .enumerate()
                .map(|(i, t)| Page { index: i, text: t.to_string(), width_px: 1980, height_px: 1080 })
                .collect(),
        }
    }

    fn query(evidence: &[usize], gold: &str) -> Query {
        Query {
            id: "q".into(),
            question: "What is the code of zorb?".into(),
            gold_answers: vec![gold.into()],
            evidence_pages: evidence.iter().copied().collect::<BTreeSet<_>>(),
        }
    }

    fn act_on(policy: &dyn Policy, d: &Document, q: &Query, state: &NavState) -> Action {
        let view = PageView { index: state.page, text: d.pages[state.page].text.clone(), tokens: 0 };
        let obs = Observation {
            prompt: "",
            page: &view,
            state,
            question: &q.question,
            query: Some(q),
            document: Some(d),
            max_visit_count: 1,
        };
        parse_action(&policy.act(&obs, 3).unwrap().response).unwrap()
    }

    #[test]
    fn relevance_examples() {
        assert_eq!(score_page_relevance("alpha beta", "beta alpha"), 1.0);
        assert_eq!(score_page_relevance("alpha beta", "gamma"), 0.0);
        assert_eq!(score_page_relevance("what is X", "X"), 1.0 / 3.0);
    }

    #[test]
    fn oracle_scrolls_to_nearest_evidence_then_answers() {
        let d = doc(&["lamp.", "river.", "stone.", "The code of zorb is 11.", "moss."]);
        let q = query(&[3], "11");
        let mut s = NavState::new(5);
        assert_eq!(act_on(&OraclePolicy, &d, &q, &s), Action::Scroll { note: "lamp.".into(), value: 3 });
        s.page = 3;
        s.visited[3] = true;
        assert_eq!(act_on(&OraclePolicy, &d, &q, &s), Action::Answer { text: "11".into() });
    }

    #[test]
    fn oracle_needs_query() {
        let d = doc(&["a."]);
        let s = NavState::new(1);
        let view = PageView { index: 0, text: "a.".into(), tokens: 0 };
        let obs = Observation {
            prompt: "",
            page: &view,
            state: &s,
            question: "q",
            query: None,
            document: Some(&d),
            max_visit_count: 1,
        };
        assert!(matches!(OraclePolicy.act(&obs, 0), Err(PolicyError::MissingMetadata { .. })));
    }

    #[test]
    fn random_policy_is_seeded() {
        let d = doc(&["a.", "b.", "c."]);
        let q = query(&[1], "x");
        let s = NavState::new(3);
        let view = PageView { index: 0, text: "a.".into(), tokens: 0 };
        let obs = Observation {
            prompt: "",
            page: &view,
            state: &s,
            question: &q.question,
            query: Some(&q),
            document: Some(&d),
            max_visit_count: 2,
        };
        let p = RandomPolicy::default();
        assert_eq!(p.act(&obs, 9).unwrap(), p.act(&obs, 9).unwrap());
    }

    #[test]
    fn relevance_jumps_to_best_page() {
        let d = doc(&[
            "lamp river.",
            "The code of blip is 9.",
            "The code of zorb is 11.",
            "moss.",
        ]);
        let q = query(&[2], "11");
        let s = NavState::new(4);
        assert_eq!(act_on(&RelevancePolicy::default(), &d, &q, &s), Action::Scroll { note: "lamp river.".into(), value: 2 });
    }
}
