//! The episode loop: prompt, act, parse, score, then answer or move.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::env::{apply_strategy, transition};
use super::{build_prompt, parse_response, Action, ConfigError, EngineConfig, NavState, PageView, ParsedResponse};
use crate::budget::BudgetError;
use crate::corpus::{Corpus, Document, Query};
use crate::policy::{Observation, Policy};
use crate::reward::{score_step, RewardBreakdown, RewardContext, StepKind};
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Budget(#[from] BudgetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub page: usize,
    #[serde(skip)]
    pub prompt: String,
    pub prompt_sha256: String,
    pub response: String,
    pub parsed: ParsedResponse,
    pub action_kind: StepKind,
    /// Scroll after the strategy override; absent for answers and malformed responses.
    pub effective_scroll: Option<i64>,
    /// Page reached by the transition; absent when the step answered or aborted.
    pub next_page: Option<usize>,
    pub valid_scroll: bool,
    /// Policy failure message, when the step aborted the episode.
    pub exception: Option<String>,
    pub done: bool,
    /// Image-token cost of the page shown at this step.
    pub tokens: u64,
    pub reward_context: RewardContext,
    pub reward: RewardBreakdown,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub query_id: String,
    pub doc_id: String,
    pub total_pages: usize,
    pub steps: Vec<StepRecord>,
    /// First non-empty answer, or empty.
    pub answer: String,
    /// Page shown at each step.
    pub trajectory: Vec<usize>,
    pub final_page: usize,
    /// Stopped because no page was left under the visit limit.
    pub exhausted: bool,
    /// Stopped by a policy failure.
    pub aborted: bool,
}

impl Episode {
    pub fn total_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward.total).sum()
    }
}

pub fn sha256_hex(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

/// Prompt and page view for the current state.
pub fn observe(doc: &Document, query: &Query, state: &NavState, config: &EngineConfig) -> Result<(String, PageView), BudgetError> {
    let prompt = build_prompt(&query.question, state, doc.total_pages());
    let view = PageView::of(doc, state.page, config.max_pixels)?;
    Ok((prompt, view))
}

/// How a response would be scored at `state`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub parsed: ParsedResponse,
    pub kind: StepKind,
    pub action: Option<Action>,
    pub valid_scroll: bool,
    pub context: RewardContext,
    pub reward: RewardBreakdown,
}

/// Score a parsed response at `state`. `effective_scroll` overrides the
/// parsed scroll value (strategy override); pass `None` to use it as is.
pub fn assess(
    query: &Query,
    state: &NavState,
    parsed: ParsedResponse,
    effective_scroll: Option<i64>,
    config: &EngineConfig,
) -> Assessment {
    let action = parsed.action().ok();
    let read = state.pages_read();
    let total = state.total_pages();
    let (kind, valid_scroll, context) = match &action {
        Some(Action::Answer { text }) => {
            (StepKind::Answer, false, RewardContext::answer(text, &query.gold_answers, read, total, &config.reward))
        }
        Some(Action::Scroll { value, .. }) => {
            let s = effective_scroll.unwrap_or(*value);
            let valid = state.in_range(s) && state.is_eligible((state.page as i64 + s) as usize, config.max_visit_count);
            (StepKind::Scroll, valid, RewardContext::scroll(valid, read, total, state.all_visited()))
        }
        None => (StepKind::Exception, false, RewardContext::exception(read, total)),
    };
    let reward = score_step(kind, &context, &parsed, &config.reward).expect("reward context is built consistently");
    Assessment { parsed, kind, action, valid_scroll, context, reward }
}

fn policy_seed(config: &EngineConfig, query: &Query, step: usize) -> u64 {
    seed::derive(config.seed, &format!("policy:{}:{}", query.id, step))
}

/// Run one episode of `policy` on `query` over `doc`.
pub fn run_episode(doc: &Document, query: &Query, policy: &dyn Policy, config: &EngineConfig) -> Result<Episode, EngineError> {
    config.validate()?;
    let mut rng = seed::stream(config.seed, &format!("episode:{}", query.id));
    let mut state = NavState::new(doc.total_pages());
    let limit = config.step_limit(doc.total_pages());
    let mut steps = Vec::new();
    let mut trajectory = Vec::new();
    let mut answer = String::new();
    let mut exhausted = false;
    let mut aborted = false;

    for t in 0..limit {
        let (prompt, view) = observe(doc, query, &state, config)?;
        trajectory.push(state.page);
        let obs = Observation {
            prompt: &prompt,
            page: &view,
            state: &state,
            question: &query.question,
            query: Some(query),
            document: Some(doc),
            max_visit_count: config.max_visit_count,
        };
        let prompt_sha256 = sha256_hex(&prompt);
        let output = match policy.act(&obs, policy_seed(config, query, t)) {
            Ok(out) => out,
            Err(e) => {
                let parsed = ParsedResponse::default();
                let context = RewardContext::exception(state.pages_read(), state.total_pages());
                let reward = score_step(StepKind::Exception, &context, &parsed, &config.reward)
                    .expect("reward context is built consistently");
                steps.push(StepRecord {
                    step: t,
                    page: state.page,
                    prompt,
                    prompt_sha256,
                    response: String::new(),
                    parsed,
                    action_kind: StepKind::Exception,
                    effective_scroll: None,
                    next_page: None,
                    valid_scroll: false,
                    exception: Some(e.to_string()),
                    done: true,
                    tokens: view.tokens,
                    reward_context: context,
                    reward,
                    logprobs: None,
                });
                aborted = true;
                break;
            }
        };

        let parsed = parse_response(&output.response);
        let effective = match parsed.action() {
            Ok(Action::Scroll { value, .. }) => Some(apply_strategy(config.strategy, value, &state, &mut rng)),
            _ => None,
        };
        let a = assess(query, &state, parsed, effective, config);
        let mut record = StepRecord {
            step: t,
            page: state.page,
            prompt,
            prompt_sha256,
            response: output.response,
            parsed: a.parsed,
            action_kind: a.kind,
            effective_scroll: effective,
            next_page: None,
            valid_scroll: a.valid_scroll,
            exception: None,
            done: false,
            tokens: view.tokens,
            reward_context: a.context,
            reward: a.reward,
            logprobs: output.logprobs,
        };

        if let Some(Action::Answer { text }) = a.action {
            answer = text;
            record.done = true;
            steps.push(record);
            break;
        }
        let note = record.parsed.note.clone();
        let tr = transition(&state, note.as_deref(), effective, config, &mut rng);
        debug_assert_eq!(tr.valid_scroll, record.valid_scroll);
        state = tr.next;
        record.next_page = Some(state.page);
        exhausted = tr.exhausted;
        record.done = exhausted || t + 1 == limit;
        steps.push(record);
        if exhausted {
            break;
        }
    }

    Ok(Episode {
        query_id: query.id.clone(),
        doc_id: doc.id.clone(),
        total_pages: doc.total_pages(),
        steps,
        answer,
        trajectory,
        final_page: state.page,
        exhausted,
        aborted,
    })
}

/// Run every query of `corpus` on a worker pool; episodes come back ordered
/// by query id whatever the completion order.
pub fn run_corpus(corpus: &Corpus, policy: &dyn Policy, config: &EngineConfig) -> Result<Vec<Episode>, EngineError> {
    let pairs: Vec<(&Document, &Query)> = corpus.pairs().collect();
    let mut episodes = pairs
        .par_iter()
        .map(|(doc, query)| run_episode(doc, query, policy, config))
        .collect::<Result<Vec<_>, _>>()?;
    episodes.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    Ok(episodes)
}
