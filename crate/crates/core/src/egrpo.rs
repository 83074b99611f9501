//! Episodic group-relative policy optimization for [`TokenSoftmaxPolicy`].
//!
//! At every step of a training episode the actor samples `g_tilde`
//! candidate responses. They are reduced to `g` by evenly spaced selection
//! over the reward-sorted list, one of the `n` best is applied to the
//! environment, and the episode continues from the resulting state. Once the
//! episode ends, two groups are trained: the terminal step, and the
//! penultimate step whose rewards are augmented by a greedy projection of the
//! step that would follow each candidate.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Document, Query, NO_ANSWER};
use crate::nav::episode::{assess, observe, EngineError};
use crate::nav::{parse_response, transition, Action, EngineConfig, NavState};
use crate::policy::{Observation, TokenSoftmaxPolicy, TokenTrace};
use crate::reward::StepKind;
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite probability ratio {ratio} at candidate {candidate}, token {token}")]
    NonFinite { candidate: usize, token: usize, ratio: f64 },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("corpus has no queries to train on")]
    EmptyCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SubsetSampling {
    /// Evenly spaced positions over the reward-sorted candidates.
    #[default]
    Ordered,
    /// Uniform draw without replacement.
    Uniform,
}

impl std::str::FromStr for SubsetSampling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ordered" => Ok(Self::Ordered),
            "uniform" => Ok(Self::Uniform),
            other => Err(format!("unknown subset sampling {other:?} (expected ordered or uniform)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub g_tilde: usize,
    pub g: usize,
    pub n: usize,
    pub gamma: f64,
    pub eps_clip: f64,
    pub sigma_guard: f64,
    pub learning_rate: f64,
    pub temperature: f64,
    pub top_k: Option<usize>,
    pub top_p: Option<f64>,
    pub iterations: usize,
    /// Episodes per gradient step.
    pub batch_size: usize,
    pub sampling: SubsetSampling,
    /// Copy the actor into the reference every this many iterations;
    /// `None` keeps the reference fixed at its starting parameters.
    pub ref_sync_every: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            g_tilde: 8,
            g: 4,
            n: 2,
            gamma: 3.0,
            eps_clip: 0.2,
            sigma_guard: 1e-6,
            learning_rate: 1.0,
            temperature: 0.9,
            top_k: None,
            top_p: None,
            iterations: 500,
            batch_size: 1,
            sampling: SubsetSampling::Ordered,
            ref_sync_every: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(1 <= self.n && self.n <= self.g && self.g <= self.g_tilde) {
            return err("group sizes must satisfy 1 <= n <= g <= g_tilde");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return err("gamma must be positive");
        }
        if !(self.eps_clip > 0.0 && self.eps_clip < 1.0) {
            return err("eps_clip must be in (0, 1)");
        }
        if !(self.sigma_guard >= 0.0 && self.sigma_guard.is_finite()) {
            return err("sigma_guard must be non-negative");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return err("learning_rate must be non-negative");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return err("temperature must be positive");
        }
        if self.top_p.is_some_and(|p| !(p > 0.0 && p <= 1.0)) {
            return err("top_p must be in (0, 1]");
        }
        if self.batch_size == 0 {
            return err("batch_size must be at least 1");
        }
        if self.ref_sync_every == Some(0) {
            return err("ref_sync_every must be at least 1");
        }
        Ok(())
    }
}

/// One sampled response at a step.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub response: String,
    pub trace: TokenTrace,
    pub kind: StepKind,
    pub action: Option<Action>,
    pub reward: f64,
    pub actor_logprobs: Vec<f64>,
    pub ref_logprobs: Vec<f64>,
}

/// Sample `g_tilde` candidates at `state` and score each one.
#[allow(clippy::too_many_arguments)]
pub fn generate_group(
    actor: &TokenSoftmaxPolicy,
    reference: &TokenSoftmaxPolicy,
    obs: &Observation<'_>,
    query: &Query,
    state: &NavState,
    engine: &EngineConfig,
    g_tilde: usize,
    seed: u64,
) -> Vec<Candidate> {
    (0..g_tilde)
        .map(|j| {
            let (trace, response, actor_logprobs) = actor.sample(obs, seed::derive(seed, &format!("candidate:{j}")));
            let ref_logprobs = reference.trace_logprobs(&trace);
            let a = assess(query, state, parse_response(&response), None, engine);
            Candidate {
                response,
                trace,
                kind: a.kind,
                action: a.action,
                reward: a.reward.total,
                actor_logprobs,
                ref_logprobs,
            }
        })
        .collect()
}

/// Indices sorted by reward, highest first; equal rewards keep index order.
fn by_reward(rewards: &[f64], indices: &[usize]) -> Vec<usize> {
    let mut order = indices.to_vec();
    order.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]).then(a.cmp(&b)));
    order
}

/// Evenly spaced selection of `g` candidates over the reward-sorted order:
/// sorted positions `round(j (G~ - 1) / (g - 1))`, halves rounded up.
pub fn ordered_uniform_sample(rewards: &[f64], g: usize) -> Vec<usize> {
    let total = rewards.len();
    assert!(g >= 1 && g <= total, "subset size must be within 1..=candidates");
    let sorted = by_reward(rewards, &(0..total).collect::<Vec<_>>());
    if g == 1 {
        return vec![sorted[0]];
    }
    (0..g)
        .map(|j| {
            let pos = (2 * j * (total - 1) + (g - 1)) / (2 * (g - 1));
            sorted[pos]
        })
        .collect()
}

pub fn uniform_sample<R: Rng>(total: usize, g: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(rng);
    idx.truncate(g);
    idx.sort_unstable();
    idx
}

/// Uniform choice among the `n` highest-reward members of `subset`.
pub fn select_top_n<R: Rng>(rewards: &[f64], subset: &[usize], n: usize, rng: &mut R) -> usize {
    assert!(n >= 1 && n <= subset.len(), "top-n window must be within 1..=subset");
    let order = by_reward(rewards, subset);
    order[rng.gen_range(0..n)]
}

/// `(r - mean) / (population std + guard)`; all zeros when every reward is equal.
pub fn normalize_advantages(rewards: &[f64], sigma_guard: f64) -> Vec<f64> {
    let (mu, sigma) = mean_std(rewards);
    if rewards.iter().all(|&r| r == rewards[0]) {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mu) / (sigma + sigma_guard)).collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mu = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    (mu, var.sqrt())
}

/// Token mean of `min(rho A, clip(rho, 1 - eps, 1 + eps) A)`.
pub fn surrogate_term(ratios: &[f64], advantage: f64, eps_clip: f64) -> Result<f64, TrainError> {
    if ratios.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (k, &rho) in ratios.iter().enumerate() {
        if !rho.is_finite() {
            return Err(TrainError::NonFinite { candidate: 0, token: k, ratio: rho });
        }
        let clipped = rho.clamp(1.0 - eps_clip, 1.0 + eps_clip);
        sum += (rho * advantage).min(clipped * advantage);
    }
    Ok(sum / ratios.len() as f64)
}

/// `gamma * terminal + penultimate`.
pub fn egrpo_loss(terminal: f64, penultimate: f64, gamma: f64) -> f64 {
    gamma * terminal + penultimate
}

/// The `g` candidates of one step that enter the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBatch {
    pub traces: Vec<TokenTrace>,
    pub ref_logprobs: Vec<Vec<f64>>,
    /// Rewards after projection (`r_hat`).
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageBatch {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
    pub ratios: Vec<Vec<f64>>,
    pub surrogates: Vec<f64>,
    /// Negated group mean of the surrogates.
    pub loss: f64,
}

/// Loss of one step group under `policy`; when `grad` is given, adds
/// `scale * d loss / d params` into it.
pub fn batch_loss(
    policy: &TokenSoftmaxPolicy,
    batch: &StepBatch,
    cfg: &TrainConfig,
    mut grad: Option<(&mut [f64], f64)>,
) -> Result<AdvantageBatch, TrainError> {
    let g = batch.traces.len();
    let advantages = normalize_advantages(&batch.rewards, cfg.sigma_guard);
    let (mu, sigma) = mean_std(&batch.rewards);
    let mut ratios = Vec::with_capacity(g);
    let mut surrogates = Vec::with_capacity(g);
    for (i, trace) in batch.traces.iter().enumerate() {
        let lp = policy.trace_logprobs(trace);
        let rho: Vec<f64> = lp.iter().zip(&batch.ref_logprobs[i]).map(|(a, b)| (a - b).exp()).collect();
        let a = advantages[i];
        let s = surrogate_term(&rho, a, cfg.eps_clip).map_err(|e| match e {
            TrainError::NonFinite { token, ratio, .. } => TrainError::NonFinite { candidate: i, token, ratio },
            other => other,
        })?;
        if let Some((buf, scale)) = grad.as_mut() {
            let k_len = rho.len() as f64;
            for (k, &r) in rho.iter().enumerate() {
                let clipped = r.clamp(1.0 - cfg.eps_clip, 1.0 + cfg.eps_clip);
                let unclipped_active = clipped == r || r * a < clipped * a;
                if unclipped_active && a != 0.0 {
                    // d(-s / g) = -(1/g)(1/K) A rho dlogp
                    let coef = -*scale * a * r / (g as f64 * k_len);
                    policy.add_token_grad(trace, k, coef, buf);
                }
            }
        }
        ratios.push(rho);
        surrogates.push(s);
    }
    let loss = -surrogates.iter().sum::<f64>() / g as f64;
    Ok(AdvantageBatch { rewards: batch.rewards.clone(), advantages, mu, sigma, ratios, surrogates, loss })
}

/// Full two-step objective for one episode and, optionally, its gradient.
pub fn episode_loss(
    policy: &TokenSoftmaxPolicy,
    terminal: &StepBatch,
    penultimate: Option<&StepBatch>,
    cfg: &TrainConfig,
    grad: Option<&mut [f64]>,
) -> Result<f64, TrainError> {
    match grad {
        Some(buf) => {
            let t = batch_loss(policy, terminal, cfg, Some((&mut *buf, cfg.gamma)))?;
            let p = match penultimate {
                Some(b) => batch_loss(policy, b, cfg, Some((buf, 1.0)))?.loss,
                None => 0.0,
            };
            Ok(egrpo_loss(t.loss, p, cfg.gamma))
        }
        None => {
            let t = batch_loss(policy, terminal, cfg, None)?;
            let p = match penultimate {
                Some(b) => batch_loss(policy, b, cfg, None)?.loss,
                None => 0.0,
            };
            Ok(egrpo_loss(t.loss, p, cfg.gamma))
        }
    }
}

/// One step group recorded during a training episode.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGroup {
    pub step: usize,
    pub state: NavState,
    pub candidates: Vec<Candidate>,
    pub subset: Vec<usize>,
    pub chosen: usize,
}

/// Reward of one greedy step from the state a scroll candidate leads to.
/// Candidates that answered keep their own reward as the estimate.
pub fn project_terminal(
    policy: &TokenSoftmaxPolicy,
    doc: &Document,
    query: &Query,
    state: &NavState,
    candidate: &Candidate,
    engine: &EngineConfig,
    seed: u64,
) -> Result<f64, TrainError> {
    if candidate.kind == StepKind::Answer {
        return Ok(candidate.reward);
    }
    let (note, scroll) = match &candidate.action {
        Some(Action::Scroll { note, value }) => (Some(note.as_str()), Some(*value)),
        _ => (None, None),
    };
    let next = transition(state, note, scroll, engine, &mut seed::rng(seed)).next;
    let (prompt, view) = observe(doc, query, &next, engine).map_err(EngineError::from)?;
    let obs = Observation {
        prompt: &prompt,
        page: &view,
        state: &next,
        question: &query.question,
        query: Some(query),
        document: Some(doc),
        max_visit_count: engine.max_visit_count,
    };
    let (_, response) = policy.greedy(&obs);
    Ok(assess(query, &next, parse_response(&response), None, engine).reward.total)
}

/// Outcome of one training episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainEpisode {
    pub query_id: String,
    pub groups: Vec<CandidateGroup>,
    pub answer: String,
    pub trajectory: Vec<usize>,
    pub total_pages: usize,
    pub episode_return: f64,
    pub success: bool,
}

/// Roll one episode, broadcasting the selected candidate at every step.
pub fn roll_episode(
    actor: &TokenSoftmaxPolicy,
    reference: &TokenSoftmaxPolicy,
    doc: &Document,
    query: &Query,
    engine: &EngineConfig,
    cfg: &TrainConfig,
    label: &str,
) -> Result<TrainEpisode, TrainError> {
    let mut state = NavState::new(doc.total_pages());
    let mut rng = seed::stream(cfg.seed, &format!("{label}:env"));
    let mut groups = Vec::new();
    let mut trajectory = Vec::new();
    let mut answer = String::new();
    for t in 0..engine.step_limit(doc.total_pages()) {
        let (prompt, view) = observe(doc, query, &state, engine).map_err(EngineError::from)?;
        trajectory.push(state.page);
        let obs = Observation {
            prompt: &prompt,
            page: &view,
            state: &state,
            question: &query.question,
            query: Some(query),
            document: Some(doc),
            max_visit_count: engine.max_visit_count,
        };
        let group_seed = seed::derive(cfg.seed, &format!("{label}:group:{t}"));
        let candidates = generate_group(actor, reference, &obs, query, &state, engine, cfg.g_tilde, group_seed);
        let rewards: Vec<f64> = candidates.iter().map(|c| c.reward).collect();
        let mut pick_rng = seed::stream(cfg.seed, &format!("{label}:select:{t}"));
        let subset = match cfg.sampling {
            SubsetSampling::Ordered => ordered_uniform_sample(&rewards, cfg.g),
            SubsetSampling::Uniform => uniform_sample(rewards.len(), cfg.g, &mut pick_rng),
        };
        let chosen = select_top_n(&rewards, &subset, cfg.n, &mut pick_rng);
        let pick = &candidates[chosen];
        let before = state.clone();
        let stop = match &pick.action {
            Some(Action::Answer { text }) => {
                answer = text.clone();
                true
            }
            action => {
                let (note, scroll) = match action {
                    Some(Action::Scroll { note, value }) => (Some(note.as_str()), Some(*value)),
                    _ => (None, None),
                };
                let tr = transition(&state, note, scroll, engine, &mut rng);
                state = tr.next;
                tr.exhausted
            }
        };
        groups.push(CandidateGroup { step: t, state: before, candidates, subset, chosen });
        if stop {
            break;
        }
    }
    let illegal = groups.iter().any(|g| {
        let c = &g.candidates[g.chosen];
        match c.kind {
            StepKind::Exception => true,
            StepKind::Scroll => {
                let s = match &c.action {
                    Some(Action::Scroll { value, .. }) => *value,
                    _ => 0,
                };
                !(g.state.in_range(s) && g.state.is_eligible((g.state.page as i64 + s) as usize, engine.max_visit_count))
            }
            StepKind::Answer => false,
        }
    });
    let trimmed = answer.trim();
    let success = !trimmed.is_empty() && !(query.is_answerable() && trimmed == NO_ANSWER) && !illegal;
    let episode_return = groups.iter().map(|g| g.candidates[g.chosen].reward).sum();
    Ok(TrainEpisode {
        query_id: query.id.clone(),
        groups,
        answer,
        trajectory,
        total_pages: doc.total_pages(),
        episode_return,
        success,
    })
}

fn subset_batch(group: &CandidateGroup, rewards: Vec<f64>) -> StepBatch {
    StepBatch {
        traces: group.subset.iter().map(|&i| group.candidates[i].trace.clone()).collect(),
        ref_logprobs: group.subset.iter().map(|&i| group.candidates[i].ref_logprobs.clone()).collect(),
        rewards,
    }
}

/// Terminal and penultimate batches of a finished training episode.
pub fn episode_batches(
    actor: &TokenSoftmaxPolicy,
    doc: &Document,
    query: &Query,
    episode: &TrainEpisode,
    engine: &EngineConfig,
    cfg: &TrainConfig,
    label: &str,
) -> Result<(StepBatch, Option<StepBatch>), TrainError> {
    let last = episode.groups.last().expect("an episode has at least one step");
    let terminal = subset_batch(last, last.subset.iter().map(|&i| last.candidates[i].reward).collect());
    if episode.groups.len() < 2 {
        return Ok((terminal, None));
    }
    let pen = &episode.groups[episode.groups.len() - 2];
    let mut r_hat = Vec::with_capacity(pen.subset.len());
    for &i in &pen.subset {
        let c = &pen.candidates[i];
        let proj_seed = seed::derive(cfg.seed, &format!("{label}:projection:{i}"));
        r_hat.push(c.reward + project_terminal(actor, doc, query, &pen.state, c, engine, proj_seed)?);
    }
    Ok((terminal, Some(subset_batch(pen, r_hat))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    pub loss: f64,
    pub visit_ratio: f64,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("iteration,mean_return,success_rate,loss,visit_ratio\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.iteration, r.mean_return, r.success_rate, r.loss, r.visit_ratio
        ));
    }
    out
}

/// Train `policy` in place. `on_iteration` sees each history row and the
/// parameters after the update.
pub fn train(
    corpus: &Corpus,
    policy: &mut TokenSoftmaxPolicy,
    engine: &EngineConfig,
    cfg: &TrainConfig,
    mut on_iteration: impl FnMut(&HistoryRow, &TokenSoftmaxPolicy),
) -> Result<Vec<HistoryRow>, TrainError> {
    cfg.validate()?;
    engine.validate().map_err(EngineError::from)?;
    let pairs: Vec<(&Document, &Query)> = corpus.pairs().collect();
    if pairs.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    policy.temperature = cfg.temperature;
    policy.top_k = cfg.top_k;
    policy.top_p = cfg.top_p;
    let mut reference = policy.clone();
    let mut order_rng = seed::stream(cfg.seed, "train:order");
    let mut order: Vec<usize> = Vec::new();
    let mut history = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let mut grad = vec![0.0; policy.n_params()];
        let mut loss_sum = 0.0;
        let mut return_sum = 0.0;
        let mut successes = 0usize;
        let mut ratio_sum = 0.0;
        for b in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..pairs.len()).collect();
                order.shuffle(&mut order_rng);
            }
            let (doc, query) = pairs[order.pop().expect("refilled above")];
            let label = format!("iter:{it}:{b}");
            let ep = roll_episode(policy, &reference, doc, query, engine, cfg, &label)?;
            let (terminal, pen) = episode_batches(policy, doc, query, &ep, engine, cfg, &label)?;
            let mut ep_grad = vec![0.0; policy.n_params()];
            loss_sum += episode_loss(policy, &terminal, pen.as_ref(), cfg, Some(&mut ep_grad))?;
            for (g, e) in grad.iter_mut().zip(&ep_grad) {
                *g += e / cfg.batch_size as f64;
            }
            return_sum += ep.episode_return;
            successes += usize::from(ep.success);
            let mut seen = ep.trajectory.clone();
            seen.sort_unstable();
            seen.dedup();
            ratio_sum += seen.len() as f64 / ep.total_pages as f64;
        }
        for (p, g) in policy.params_mut().iter_mut().zip(&grad) {
            *p -= cfg.learning_rate * g;
        }
        if let Some(k) = cfg.ref_sync_every {
            if (it + 1) % k == 0 {
                reference = policy.clone();
            }
        }
        let n = cfg.batch_size as f64;
        let row = HistoryRow {
            iteration: it,
            mean_return: return_sum / n,
            success_rate: successes as f64 / n,
            loss: loss_sum / n,
            visit_ratio: ratio_sum / n,
        };
        on_iteration(&row, policy);
        history.push(row);
    }
    Ok(history)
}
