//! Step rewards, ANLS, and episode-level evaluation metrics.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, NO_ANSWER};
use crate::nav::{Episode, ParsedResponse};
use crate::text::normalize;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("inconsistent reward context: {0}")]
    Contract(String),
    #[error("episode references unknown query {0:?}")]
    UnknownQuery(String),
}

/// Every constant of the reward table, plus the ANLS threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Maximum answer reward `w`.
    pub w: f64,
    pub anls_tau: f64,
    pub exception: f64,
    pub valid_scroll: f64,
    pub invalid_scroll: f64,
    pub all_visited: f64,
    pub long_answer: f64,
    /// Answers at least this many times longer than the gold are penalized.
    pub long_answer_ratio: usize,
    /// Decay applies once `pages_read / max_page_num` exceeds `decay_num / decay_den`.
    pub decay_num: usize,
    pub decay_den: usize,
    pub format_base: f64,
    pub format_answer_tag: f64,
    pub format_answer_think: f64,
    pub format_scroll_tag: f64,
    pub format_scroll_think: f64,
    pub format_scroll_note: f64,
    pub format_scroll_value: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w: 7.0,
            anls_tau: 0.5,
            exception: -1.0,
            valid_scroll: 2.0,
            invalid_scroll: -2.0,
            all_visited: -4.0,
            long_answer: -1.0,
            long_answer_ratio: 4,
            decay_num: 2,
            decay_den: 3,
            format_base: 1.0,
            format_answer_tag: 4.0,
            format_answer_think: 2.0,
            format_scroll_tag: 2.0,
            format_scroll_think: 1.0,
            format_scroll_note: 1.0,
            format_scroll_value: 2.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.w > 0.0 && self.w.is_finite()) {
            return Err(format!("reward w must be positive, got {}", self.w));
        }
        if !(self.anls_tau > 0.0 && self.anls_tau <= 1.0) {
            return Err(format!("anls_tau must be in (0, 1], got {}", self.anls_tau));
        }
        if self.decay_den == 0 || self.decay_num > self.decay_den {
            return Err("decay threshold must be a fraction in [0, 1]".into());
        }
        if self.long_answer_ratio == 0 {
            return Err("long_answer_ratio must be positive".into());
        }
        Ok(())
    }
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn anls_single(pred: &str, gold: &str, tau: f64) -> f64 {
    let p = normalize(pred);
    let g = normalize(gold);
    let longest = p.chars().count().max(g.chars().count());
    if longest == 0 {
        return 1.0;
    }
    let nl = levenshtein(&p, &g) as f64 / longest as f64;
    if nl < tau {
        1.0 - nl
    } else {
        0.0
    }
}

/// Best normalized Levenshtein similarity over the gold answers.
pub fn anls<S: AsRef<str>>(pred: &str, golds: &[S], tau: f64) -> f64 {
    golds.iter().map(|g| anls_single(pred, g.as_ref(), tau)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Scroll,
    Answer,
    /// Malformed response or policy failure.
    Exception,
}

/// Inputs of the accuracy reward for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardContext {
    pub valid_scroll: bool,
    /// Distinct pages seen before this step's action, page 0 included.
    pub pages_read: usize,
    /// Total number of pages in the document.
    pub max_page_num: usize,
    pub all_visited: bool,
    pub anls: f64,
    /// Normalized character length of the prediction.
    pub pred_len: usize,
    /// Normalized character length of the longest gold answer.
    pub gold_len: usize,
    pub exception: bool,
}

impl RewardContext {
    pub fn scroll(valid_scroll: bool, pages_read: usize, max_page_num: usize, all_visited: bool) -> Self {
        Self {
            valid_scroll,
            pages_read,
            max_page_num,
            all_visited,
            anls: 0.0,
            pred_len: 0,
            gold_len: 0,
            exception: false,
        }
    }

    pub fn answer<S: AsRef<str>>(
        pred: &str,
        golds: &[S],
        pages_read: usize,
        max_page_num: usize,
        cfg: &RewardConfig,
    ) -> Self {
        Self {
            valid_scroll: false,
            pages_read,
            max_page_num,
            all_visited: pages_read == max_page_num,
            anls: anls(pred, golds, cfg.anls_tau),
            pred_len: normalize(pred).chars().count(),
            gold_len: golds.iter().map(|g| normalize(g.as_ref()).chars().count()).max().unwrap_or(0),
            exception: false,
        }
    }

    pub fn exception(pages_read: usize, max_page_num: usize) -> Self {
        Self { exception: true, ..Self::scroll(false, pages_read, max_page_num, pages_read == max_page_num) }
    }
}

/// A fired row of the reward table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardRule {
    Exception,
    ValidScroll,
    InvalidScroll,
    DecayedScroll,
    ScrollAllVisited,
    AnswerAnls,
    LongAnswer,
    FormatBase,
    FormatAnswerTag,
    FormatAnswerThink,
    FormatScrollTag,
    FormatScrollThink,
    FormatScrollNote,
    FormatScrollValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub accuracy: f64,
    pub format: f64,
    pub total: f64,
    pub rule_trace: Vec<RewardRule>,
}

pub fn accuracy_reward(
    kind: StepKind,
    ctx: &RewardContext,
    cfg: &RewardConfig,
) -> Result<(f64, RewardRule), RewardError> {
    let contract = |m: &str| Err(RewardError::Contract(m.to_string()));
    if ctx.exception != (kind == StepKind::Exception) {
        return contract("exception flag disagrees with the step kind");
    }
    if ctx.max_page_num == 0 {
        return contract("max_page_num must be positive");
    }
    if ctx.pages_read > ctx.max_page_num {
        return contract("pages_read exceeds max_page_num");
    }
    if ctx.all_visited != (ctx.pages_read == ctx.max_page_num) {
        return contract("all_visited disagrees with pages_read");
    }
    match kind {
        StepKind::Exception => Ok((cfg.exception, RewardRule::Exception)),
        StepKind::Scroll => {
            if ctx.all_visited {
                Ok((cfg.all_visited, RewardRule::ScrollAllVisited))
            } else if !ctx.valid_scroll {
                Ok((cfg.invalid_scroll, RewardRule::InvalidScroll))
            } else if ctx.pages_read * cfg.decay_den > cfg.decay_num * ctx.max_page_num {
                let decayed = cfg.valid_scroll * ctx.pages_read as f64 / ctx.max_page_num as f64;
                Ok((decayed, RewardRule::DecayedScroll))
            } else {
                Ok((cfg.valid_scroll, RewardRule::ValidScroll))
            }
        }
        StepKind::Answer => {
            if !(0.0..=1.0).contains(&ctx.anls) {
                return contract("anls outside [0, 1]");
            }
            if ctx.gold_len > 0 && ctx.pred_len >= cfg.long_answer_ratio * ctx.gold_len {
                Ok((cfg.long_answer, RewardRule::LongAnswer))
            } else {
                Ok((cfg.w * ctx.anls, RewardRule::AnswerAnls))
            }
        }
    }
}

/// Rows used for the format reward: answer rows when an `<answer>` tag is
/// well formed, scroll rows otherwise.
pub fn format_kind(parsed: &ParsedResponse) -> StepKind {
    if parsed.tag_flags.answer {
        StepKind::Answer
    } else {
        StepKind::Scroll
    }
}

pub fn format_reward(parsed: &ParsedResponse, kind: StepKind, cfg: &RewardConfig) -> (f64, Vec<RewardRule>) {
    let f = parsed.tag_flags;
    let mut total = cfg.format_base;
    let mut rules = vec![RewardRule::FormatBase];
    let mut add = |on: bool, value: f64, rule: RewardRule| {
        if on {
            total += value;
            rules.push(rule);
        }
    };
    match kind {
        StepKind::Answer => {
            add(f.answer, cfg.format_answer_tag, RewardRule::FormatAnswerTag);
            add(f.think, cfg.format_answer_think, RewardRule::FormatAnswerThink);
        }
        StepKind::Scroll | StepKind::Exception => {
            add(f.scroll, cfg.format_scroll_tag, RewardRule::FormatScrollTag);
            add(f.think, cfg.format_scroll_think, RewardRule::FormatScrollThink);
            add(f.note, cfg.format_scroll_note, RewardRule::FormatScrollNote);
            add(f.scroll_value, cfg.format_scroll_value, RewardRule::FormatScrollValue);
        }
    }
    (total, rules)
}

/// Accuracy plus format for one response.
pub fn score_step(
    kind: StepKind,
    ctx: &RewardContext,
    parsed: &ParsedResponse,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    let (accuracy, rule) = accuracy_reward(kind, ctx, cfg)?;
    let (format, format_rules) = format_reward(parsed, format_kind(parsed), cfg);
    let mut rule_trace = vec![rule];
    rule_trace.extend(format_rules);
    Ok(RewardBreakdown { accuracy, format, total: accuracy + format, rule_trace })
}

/// Distinct pages shown during the episode over the document's page count.
pub fn visit_ratio(episode: &Episode) -> f64 {
    let seen: BTreeSet<usize> = episode.trajectory.iter().copied().collect();
    seen.len() as f64 / episode.total_pages as f64
}

/// Whether an episode ended with a usable answer reached without an illegal step.
pub fn is_success(episode: &Episode, answerable: bool) -> bool {
    let answer = episode.answer.trim();
    if answer.is_empty() || (answerable && answer == NO_ANSWER) {
        return false;
    }
    episode.steps.iter().all(|s| match s.action_kind {
        StepKind::Exception => false,
        StepKind::Scroll => s.valid_scroll,
        StepKind::Answer => true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub anls_mean: f64,
    /// Share of episodes with ANLS at or above the threshold.
    pub accuracy: f64,
    pub visit_ratio_mean: f64,
    pub success_rate: f64,
    pub no_answer_count: usize,
    pub peak_token_proxy: u64,
    pub mean_return: f64,
    pub mean_steps: f64,
}

pub fn summarize(episodes: &[Episode], corpus: &Corpus, cfg: &RewardConfig) -> Result<EvalReport, RewardError> {
    let n = episodes.len();
    let mut anls_sum = 0.0;
    let mut hits = 0usize;
    let mut ratio_sum = 0.0;
    let mut successes = 0usize;
    let mut no_answer = 0usize;
    let mut peak = 0u64;
    let mut return_sum = 0.0;
    let mut step_sum = 0usize;
    for ep in episodes {
        let (_, query) = corpus
            .find_query(&ep.query_id)
            .ok_or_else(|| RewardError::UnknownQuery(ep.query_id.clone()))?;
        let score = anls(&ep.answer, &query.gold_answers, cfg.anls_tau);
        anls_sum += score;
        if score >= cfg.anls_tau {
            hits += 1;
        }
        ratio_sum += visit_ratio(ep);
        if is_success(ep, query.is_answerable()) {
            successes += 1;
        }
        let answer = ep.answer.trim();
        if answer.is_empty() || (query.is_answerable() && answer == NO_ANSWER) {
            no_answer += 1;
        }
        peak = ep.steps.iter().map(|s| s.tokens).fold(peak, u64::max);
        return_sum += ep.steps.iter().map(|s| s.reward.total).sum::<f64>();
        step_sum += ep.steps.len();
    }
    let mean = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    Ok(EvalReport {
        episodes: n,
        anls_mean: mean(anls_sum),
        accuracy: mean(hits as f64),
        visit_ratio_mean: mean(ratio_sum),
        success_rate: mean(successes as f64),
        no_answer_count: no_answer,
        peak_token_proxy: peak,
        mean_return: mean(return_sum),
        mean_steps: mean(step_sum as f64),
    })
}

impl EvalReport {
    const HEADER: [&'static str; 9] =
        ["label", "episodes", "anls", "accuracy", "visit_ratio", "success", "no_answer", "peak_tokens", "return"];

    fn cells(&self, label: &str) -> [String; 9] {
        [
            label.to_string(),
            self.episodes.to_string(),
            format!("{:.4}", self.anls_mean),
            format!("{:.4}", self.accuracy),
            format!("{:.4}", self.visit_ratio_mean),
            format!("{:.4}", self.success_rate),
            self.no_answer_count.to_string(),
            self.peak_token_proxy.to_string(),
            format!("{:.4}", self.mean_return),
        ]
    }

    /// Aligned plain-text table, one row per labelled report.
    pub fn table(rows: &[(String, EvalReport)]) -> String {
        let mut grid: Vec<[String; 9]> = vec![Self::HEADER.map(str::to_string)];
        grid.extend(rows.iter().map(|(label, r)| r.cells(label)));
        let widths: Vec<usize> = (0..9).map(|c| grid.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for row in &grid {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, cell)| if c == 0 { format!("{cell:<w$}", w = widths[c]) } else { format!("{cell:>w$}", w = widths[c]) })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nav::parse_response;

    fn cfg() -> RewardConfig {
        RewardConfig::default()
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("2247727", "224-7727"), 1);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
    }

    #[test]
    fn anls_examples() {
        assert_eq!(anls("224-7727", &["224-7727"], 0.5), 1.0);
        assert_eq!(anls("2247727", &["224-7727"], 0.5), 0.875);
        assert_eq!(anls("paris", &["london"], 0.5), 0.0);
        assert_eq!(anls("  PARIS ", &["london", "paris"], 0.5), 1.0);
        assert_eq!(anls("", &["abc"], 0.5), 0.0);
    }

    #[test]
    fn scroll_rows() {
        let c = cfg();
        let r = |ctx: RewardContext| accuracy_reward(StepKind::Scroll, &ctx, &c).unwrap().0;
        assert_eq!(r(RewardContext::scroll(true, 5, 20, false)), 2.0);
        assert_eq!(r(RewardContext::scroll(false, 5, 20, false)), -2.0);
        assert_eq!(r(RewardContext::scroll(true, 15, 20, false)), 1.5);
        assert_eq!(r(RewardContext::scroll(true, 20, 20, true)), -4.0);
        assert_eq!(r(RewardContext::scroll(false, 20, 20, true)), -4.0);
        // exactly two thirds keeps the plain reward
        assert_eq!(r(RewardContext::scroll(true, 12, 18, false)), 2.0);
        assert!((r(RewardContext::scroll(true, 13, 18, false)) - 26.0 / 18.0).abs() < 1e-15);
    }

    #[test]
    fn answer_rows() {
        let c = cfg();
        let ctx = RewardContext::answer("2247727", &["224-7727"], 3, 20, &c);
        assert_eq!(accuracy_reward(StepKind::Answer, &ctx, &c).unwrap().0, 6.125);
        let long = RewardContext::answer("abcdefghijklmnop", &["abcd"], 3, 20, &c);
        assert_eq!(accuracy_reward(StepKind::Answer, &long, &c).unwrap(), (-1.0, RewardRule::LongAnswer));
        let just_short = RewardContext::answer("abcdefghijklmno", &["abcd"], 3, 20, &c);
        assert_eq!(accuracy_reward(StepKind::Answer, &just_short, &c).unwrap().1, RewardRule::AnswerAnls);
    }

    #[test]
    fn exception_row() {
        let c = cfg();
        let ctx = RewardContext::exception(1, 10);
        assert_eq!(accuracy_reward(StepKind::Exception, &ctx, &c).unwrap().0, -1.0);
        assert!(accuracy_reward(StepKind::Scroll, &ctx, &c).is_err());
    }

    #[test]
    fn contract_errors() {
        let c = cfg();
        assert!(accuracy_reward(StepKind::Scroll, &RewardContext::scroll(true, 3, 0, false), &c).is_err());
        assert!(accuracy_reward(StepKind::Scroll, &RewardContext::scroll(true, 30, 20, false), &c).is_err());
        let mut bad = RewardContext::answer("a", &["a"], 1, 2, &c);
        bad.anls = 1.5;
        assert!(accuracy_reward(StepKind::Answer, &bad, &c).is_err());
    }

    #[test]
    fn format_sums() {
        let c = cfg();
        let p = parse_response("<think>t</think><answer>a</answer>");
        assert_eq!(format_reward(&p, format_kind(&p), &c).0, 7.0);
        let p = parse_response("<think>t</think><note>n</note><scroll>+2</scroll>");
        assert_eq!(format_reward(&p, format_kind(&p), &c).0, 7.0);
        let p = parse_response("plain words");
        assert_eq!(format_reward(&p, format_kind(&p), &c).0, 1.0);
    }

    #[test]
    fn table_is_aligned() {
        let r = EvalReport {
            episodes: 3,
            anls_mean: 1.0,
            accuracy: 1.0,
            visit_ratio_mean: 0.25,
            success_rate: 1.0,
            no_answer_count: 0,
            peak_token_proxy: 1248,
            mean_return: 20.0,
            mean_steps: 2.0,
        };
        let t = EvalReport::table(&[("cos".into(), r.clone()), ("serial".into(), r)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1].len(), lines[2].len());
    }
}
