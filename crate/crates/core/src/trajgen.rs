//! Supervised trajectory data: sampled page paths, annotation requests,
//! annotator clients, and the SFT dataset writer.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Document, Query, Span, NO_ANSWER};
use crate::nav::episode::sha256_hex;
use crate::nav::parse::render_action;
use crate::nav::prompt::fill_template;
use crate::nav::{build_prompt, parse_response, Action, NavState, Note, ParsedResponse};
use crate::seed;
use crate::text::best_sentence;

pub const EVIDENCE_PROMPT_V1: &str = include_str!("../assets/evidence_prompt_v1.txt");
pub const SCROLL_STEP_PROMPT_V1: &str = include_str!("../assets/scroll_step_prompt_v1.txt");
pub const ANSWER_STEP_PROMPT_V1: &str = include_str!("../assets/answer_step_prompt_v1.txt");

#[derive(Debug, Error)]
pub enum TrajGenError {
    #[error("query {query}: no trajectory length in {min}..={max} fits a {pages}-page document")]
    InfeasibleBounds { query: String, min: usize, max: usize, pages: usize },
    #[error(transparent)]
    Annotator(#[from] AnnotatorError),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AnnotatorError {
    #[error("request {request_id} timed out after {millis} ms")]
    Timeout { request_id: String, millis: u64 },
    #[error("request {request_id} failed: {message}")]
    Failed { request_id: String, message: String },
    #[error("request {request_id} failed after {attempts} attempts: {last}")]
    Exhausted { request_id: String, attempts: usize, last: String },
}

impl AnnotatorError {
    pub fn request_id(&self) -> &str {
        match self {
            AnnotatorError::Timeout { request_id, .. }
            | AnnotatorError::Failed { request_id, .. }
            | AnnotatorError::Exhausted { request_id, .. } => request_id,
        }
    }
}

/// Page path from page 0 to a terminal page, with the scroll between each pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryPlan {
    pub query_id: String,
    pub pages: Vec<usize>,
    pub deltas: Vec<i64>,
}

impl TrajectoryPlan {
    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn terminal(&self) -> usize {
        *self.pages.last().expect("plans are never empty")
    }
}

/// Lengths `l` in `bounds` (capped at the page count) for which a plan exists.
fn feasible_lengths(pages: usize, evidence: &[usize], answerable: bool, bounds: Span) -> Vec<usize> {
    let mut required: Vec<usize> = evidence.to_vec();
    required.push(0);
    required.sort_unstable();
    required.dedup();
    let has_nonzero_evidence = evidence.iter().any(|&p| p != 0);
    (bounds.min.max(1)..=bounds.max.min(pages))
        .filter(|&l| {
            if l == 1 {
                !answerable || evidence.iter().all(|&p| p == 0)
            } else if answerable {
                has_nonzero_evidence && l >= required.len()
            } else {
                pages >= 2
            }
        })
        .collect()
}

/// Sample a page path for `query`: starts at page 0, ends on an evidence
/// page, and passes every other evidence page on the way. Unanswerable
/// queries end on any page.
pub fn sample_trajectory(
    doc: &Document,
    query: &Query,
    evidence: &[usize],
    bounds: Span,
    seed: u64,
) -> Result<TrajectoryPlan, TrajGenError> {
    let mut rng = seed::stream(seed, &format!("trajectory:{}", query.id));
    let pages = doc.total_pages();
    let answerable = !evidence.is_empty();
    let lengths = feasible_lengths(pages, evidence, answerable, bounds);
    let &len = lengths.choose(&mut rng).ok_or_else(|| TrajGenError::InfeasibleBounds {
        query: query.id.clone(),
        min: bounds.min,
        max: bounds.max,
        pages,
    })?;
    let mut path = vec![0usize];
    if len > 1 {
        let terminal_choices: Vec<usize> = if answerable {
            evidence.iter().copied().filter(|&p| p != 0).collect()
        } else {
            (1..pages).collect()
        };
        let terminal = *terminal_choices.choose(&mut rng).expect("feasible length has a terminal page");
        let mut ev_left: Vec<usize> = evidence.iter().copied().filter(|&p| p != 0 && p != terminal).collect();
        let mut other_left: Vec<usize> =
            (1..pages).filter(|p| *p != terminal && !evidence.contains(p)).collect();
        for slot in 0..len - 2 {
            let slots_left = len - 2 - slot;
            let take_evidence = if ev_left.len() >= slots_left || other_left.is_empty() {
                true
            } else if ev_left.is_empty() {
                false
            } else {
                rng.gen_bool(0.5)
            };
            let pool = if take_evidence { &mut ev_left } else { &mut other_left };
            let i = rng.gen_range(0..pool.len());
            path.push(pool.swap_remove(i));
        }
        path.push(terminal);
    }
    let deltas = path.windows(2).map(|w| w[1] as i64 - w[0] as i64).collect();
    Ok(TrajectoryPlan { query_id: query.id.clone(), pages: path, deltas })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationKind {
    Evidence,
    ScrollStep,
    AnswerStep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub id: String,
    pub kind: AnnotationKind,
    pub query_id: String,
    /// Plan step; absent for evidence requests.
    pub step: Option<usize>,
    pub prompt: String,
    pub slots: BTreeMap<String, String>,
    /// Pages attached to the request: every page for evidence requests,
    /// the current page otherwise.
    pub pages: Vec<(usize, String)>,
}

fn request(
    kind: AnnotationKind,
    query: &Query,
    step: Option<usize>,
    template: &str,
    slots: Vec<(&str, String)>,
    pages: Vec<(usize, String)>,
) -> AnnotationRequest {
    let pairs: Vec<(&str, &str)> = slots.iter().map(|(k, v)| (*k, v.as_str())).collect();
    let prompt = fill_template(template, &pairs);
    let mut key = format!("{kind:?}\n{}\n{step:?}\n{prompt}", query.id);
    for (i, text) in &pages {
        key.push_str(&format!("\n{i}:{text}"));
    }
    let id = sha256_hex(&key)[..16].to_string();
    AnnotationRequest {
        id,
        kind,
        query_id: query.id.clone(),
        step,
        prompt,
        slots: slots.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        pages,
    }
}

fn gold(query: &Query) -> String {
    query.gold_answers.first().cloned().unwrap_or_else(|| NO_ANSWER.to_string())
}

pub fn evidence_request(doc: &Document, query: &Query) -> AnnotationRequest {
    request(
        AnnotationKind::Evidence,
        query,
        None,
        EVIDENCE_PROMPT_V1,
        vec![("Question", query.question.clone()), ("Answer", gold(query))],
        doc.pages.iter().map(|p| (p.index, p.text.clone())).collect(),
    )
}

/// Notes rendered for the annotation templates.
fn notes_text(notes: &[Note]) -> String {
    let mut state = NavState::new(1);
    state.notes = notes.to_vec();
    crate::nav::prompt::render_notes(&state)
}

/// Request for plan step `step`, given the notes gathered at earlier steps.
pub fn step_request(doc: &Document, query: &Query, plan: &TrajectoryPlan, step: usize, notes: &[Note]) -> AnnotationRequest {
    let page = plan.pages[step];
    let page_text = vec![(page, doc.pages[page].text.clone())];
    let notes = notes_text(notes);
    if step + 1 < plan.len() {
        let delta = format!("{:+}", plan.deltas[step]);
        request(
            AnnotationKind::ScrollStep,
            query,
            Some(step),
            SCROLL_STEP_PROMPT_V1,
            vec![
                ("Question", query.question.clone()),
                ("Previous_note", notes),
                ("Scroll_value", delta),
                ("Current_page_num", page.to_string()),
                ("Total_page_num", doc.total_pages().to_string()),
            ],
            page_text,
        )
    } else {
        request(
            AnnotationKind::AnswerStep,
            query,
            Some(step),
            ANSWER_STEP_PROMPT_V1,
            vec![
                ("Question", query.question.clone()),
                ("Answer", gold(query)),
                ("Previous_Note", notes),
                ("Current_page_num", page.to_string()),
            ],
            page_text,
        )
    }
}

/// All requests for a plan. `notes[i]` is the note produced at step `i`;
/// later requests see the notes of every earlier step.
pub fn emit_annotation_prompts(
    doc: &Document,
    query: &Query,
    plan: &TrajectoryPlan,
    notes: &[Note],
    identify_evidence: bool,
) -> Vec<AnnotationRequest> {
    let mut out = Vec::with_capacity(plan.len() + 1);
    if identify_evidence {
        out.push(evidence_request(doc, query));
    }
    for step in 0..plan.len() {
        out.push(step_request(doc, query, plan, step, &notes[..step.min(notes.len())]));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub request_id: String,
    pub kind: AnnotationKind,
    pub query_id: String,
    pub step: Option<usize>,
    pub response: String,
    pub parsed: ParsedResponse,
    /// Page list returned by an evidence request.
    pub evidence_pages: Option<Vec<usize>>,
}

/// Anything that turns a request into response text.
pub trait AnnotatorClient: Send + Sync {
    fn complete(&self, request: &AnnotationRequest) -> Result<String, AnnotatorError>;
}

#[derive(Debug, Serialize, Deserialize)]
struct EvidenceReply {
    thoughts: String,
    output: Vec<usize>,
}

/// Parse an evidence reply of the form `{"thoughts": "...", "output": [pages]}`.
pub fn parse_evidence_reply(text: &str) -> Option<Vec<usize>> {
    let reply: EvidenceReply = serde_json::from_str(text.trim()).ok()?;
    let mut pages = reply.output;
    pages.sort_unstable();
    pages.dedup();
    Some(pages)
}

/// Deterministic annotator: templated responses built from the slots and
/// the attached page text.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockAnnotator;

impl AnnotatorClient for MockAnnotator {
    fn complete(&self, req: &AnnotationRequest) -> Result<String, AnnotatorError> {
        let slot = |name: &str| req.slots.get(name).map(String::as_str).unwrap_or("");
        let question = slot("Question");
        match req.kind {
            AnnotationKind::Evidence => {
                let answer = slot("Answer");
                let output: Vec<usize> = if answer == NO_ANSWER {
                    Vec::new()
                } else {
                    req.pages.iter().filter(|(_, t)| t.contains(answer)).map(|(i, _)| *i).collect()
                };
                let reply = EvidenceReply {
                    thoughts: format!("The answer {answer:?} is printed on {} page(s).", output.len()),
                    output,
                };
                Ok(serde_json::to_string(&reply).expect("reply serializes"))
            }
            AnnotationKind::ScrollStep => {
                let value: i64 = slot("Scroll_value").parse().map_err(|_| AnnotatorError::Failed {
                    request_id: req.id.clone(),
                    message: "Scroll_value slot is not an integer".into(),
                })?;
                let (page, text) = req.pages.first().cloned().unwrap_or_default();
                let note = best_sentence(question, &text)
                    .map(|s| s.replace(['<', '>'], " "))
                    .unwrap_or_else(|| format!("Page {page} has nothing relevant."));
                let think = format!(
                    "Page {page} does not settle the question yet, so moving {value:+} pages is the next move."
                );
                Ok(render_action(&think, &Action::Scroll { note, value }))
            }
            AnnotationKind::AnswerStep => {
                let answer = slot("Answer");
                let page = slot("Current_page_num");
                let think = if answer == NO_ANSWER {
                    "None of the pages read so far answers the question.".to_string()
                } else {
                    format!("Page {page} together with the notes gives the answer.")
                };
                Ok(render_action(&think, &Action::Answer { text: answer.to_string() }))
            }
        }
    }
}

/// Wraps a client with a per-attempt timeout, bounded retries and an
/// optional on-disk cache keyed by request id.
pub struct RetryingAnnotator<C> {
    inner: Arc<C>,
    pub timeout: Duration,
    pub max_retries: usize,
    pub cache_dir: Option<PathBuf>,
}

impl<C: AnnotatorClient + 'static> RetryingAnnotator<C> {
    pub fn new(inner: C, timeout: Duration, max_retries: usize, cache_dir: Option<PathBuf>) -> Self {
        Self { inner: Arc::new(inner), timeout, max_retries, cache_dir }
    }

    fn cache_path(&self, req: &AnnotationRequest) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|d| d.join(format!("{}.txt", req.id)))
    }

    fn attempt(&self, req: &AnnotationRequest) -> Result<String, AnnotatorError> {
        let (tx, rx) = mpsc::channel();
        let inner = Arc::clone(&self.inner);
        let owned = req.clone();
        thread::spawn(move || {
            let _ = tx.send(inner.complete(&owned));
        });
        match rx.recv_timeout(self.timeout) {
            Ok(result) => result,
            Err(_) => Err(AnnotatorError::Timeout {
                request_id: req.id.clone(),
                millis: self.timeout.as_millis() as u64,
            }),
        }
    }
}

impl<C: AnnotatorClient + 'static> AnnotatorClient for RetryingAnnotator<C> {
    fn complete(&self, req: &AnnotationRequest) -> Result<String, AnnotatorError> {
        let cache = self.cache_path(req);
        if let Some(text) = cache.as_ref().and_then(|p| fs::read_to_string(p).ok()) {
            return Ok(text);
        }
        let mut last = String::new();
        for _ in 0..=self.max_retries {
            match self.attempt(req) {
                Ok(text) => {
                    if let Some(p) = &cache {
                        // a failed cache write only costs a repeat request later
                        let _ = fs::create_dir_all(p.parent().unwrap_or(Path::new("."))).and_then(|_| fs::write(p, &text));
                    }
                    return Ok(text);
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(AnnotatorError::Exhausted { request_id: req.id.clone(), attempts: self.max_retries + 1, last })
    }
}

pub fn annotate(client: &dyn AnnotatorClient, req: &AnnotationRequest) -> Result<AnnotationRecord, AnnotatorError> {
    let response = client.complete(req)?;
    let (parsed, evidence_pages) = match req.kind {
        AnnotationKind::Evidence => (ParsedResponse::default(), parse_evidence_reply(&response)),
        _ => (parse_response(&response), None),
    };
    Ok(AnnotationRecord {
        request_id: req.id.clone(),
        kind: req.kind,
        query_id: req.query_id.clone(),
        step: req.step,
        response,
        parsed,
        evidence_pages,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajGenConfig {
    pub len_bounds: Span,
    /// Ask the annotator for evidence pages instead of using the annotations.
    pub identify_evidence: bool,
    pub seed: u64,
    /// Plans annotated concurrently.
    pub max_in_flight: usize,
}

impl Default for TrajGenConfig {
    fn default() -> Self {
        Self { len_bounds: Span::new(1, 6), identify_evidence: false, seed: 0, max_in_flight: 4 }
    }
}

/// Plan and annotate one query.
pub fn annotate_query(
    client: &dyn AnnotatorClient,
    doc: &Document,
    query: &Query,
    cfg: &TrajGenConfig,
) -> Result<(TrajectoryPlan, Vec<AnnotationRecord>), TrajGenError> {
    let mut records = Vec::new();
    let evidence: Vec<usize> = if cfg.identify_evidence {
        let rec = annotate(client, &evidence_request(doc, query))?;
        let pages = rec.evidence_pages.clone().unwrap_or_default();
        records.push(rec);
        pages.into_iter().filter(|&p| p < doc.total_pages()).collect()
    } else {
        query.evidence_pages.iter().copied().collect()
    };
    let plan = sample_trajectory(doc, query, &evidence, cfg.len_bounds, cfg.seed)?;
    let mut notes = Vec::new();
    for step in 0..plan.len() {
        let rec = annotate(client, &step_request(doc, query, &plan, step, &notes))?;
        if rec.kind == AnnotationKind::ScrollStep {
            notes.push(Note { page: plan.pages[step], text: rec.parsed.note.clone().unwrap_or_default() });
        }
        records.push(rec);
    }
    Ok((plan, records))
}

/// Plan and annotate every query, at most `max_in_flight` at a time; results follow corpus order.
pub fn annotate_corpus(
    client: &dyn AnnotatorClient,
    corpus: &Corpus,
    cfg: &TrajGenConfig,
) -> Result<Vec<(TrajectoryPlan, Vec<AnnotationRecord>)>, TrajGenError> {
    let pairs: Vec<(&Document, &Query)> = corpus.pairs().collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_in_flight.max(1))
        .build()
        .map_err(|e| TrajGenError::Integrity(format!("cannot start annotation workers: {e}")))?;
    pool.install(|| pairs.par_iter().map(|(d, q)| annotate_query(client, d, q, cfg)).collect())
}

/// One supervised example: the step prompt and the response to learn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRow {
    pub query_id: String,
    pub step: usize,
    pub prompt: String,
    pub target: String,
}

/// Build SFT rows by replaying each plan with the annotated responses.
pub fn sft_rows(corpus: &Corpus, plans: &[TrajectoryPlan], records: &[AnnotationRecord]) -> Result<Vec<SftRow>, TrajGenError> {
    let mut by_step: BTreeMap<(&str, usize), &AnnotationRecord> = BTreeMap::new();
    for r in records {
        if let Some(step) = r.step {
            by_step.insert((r.query_id.as_str(), step), r);
        }
    }
    let mut rows = Vec::new();
    for plan in plans {
        let (doc, query) = corpus
            .find_query(&plan.query_id)
            .ok_or_else(|| TrajGenError::Integrity(format!("plan for unknown query {}", plan.query_id)))?;
        let mut state = NavState::new(doc.total_pages());
        for (step, &page) in plan.pages.iter().enumerate() {
            let rec = by_step.get(&(plan.query_id.as_str(), step)).ok_or_else(|| {
                TrajGenError::Integrity(format!("query {} has no annotation for step {step}", plan.query_id))
            })?;
            rows.push(SftRow {
                query_id: plan.query_id.clone(),
                step,
                prompt: build_prompt(&query.question, &state, doc.total_pages()),
                target: rec.response.clone(),
            });
            if let Some(&next) = plan.pages.get(step + 1) {
                state.notes.push(Note { page, text: rec.parsed.note.clone().unwrap_or_default() });
                state.page = next;
                state.visited[next] = true;
                state.visit_counts[next] += 1;
                state.step += 1;
                state.scroll = next as i64 - page as i64;
            }
        }
    }
    Ok(rows)
}

pub fn write_sft_dataset(rows: &[SftRow], path: &Path) -> Result<(), TrajGenError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|e| TrajGenError::Integrity(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sft_dataset(text: &str) -> Result<Vec<SftRow>, TrajGenError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TrajGenError::Integrity(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Page;
    use std::collections::BTreeSet;

    fn doc(n: usize) -> Document {
        Document {
            id: "d".into(),
            pages: (0..n)
                .map(|i| Page { index: i, text: format!("Lamp {i} river."), width_px: 10, height_px: 10 })
                .collect(),
        }
    }

    fn query(ev: &[usize]) -> Query {
        Query {
            id: "q".into(),
            question: "What is the code of zorb?".into(),
            gold_answers: vec![if ev.is_empty() { NO_ANSWER.into() } else { "11".into() }],
            evidence_pages: ev.iter().copied().collect::<BTreeSet<_>>(),
        }
    }

    #[test]
    fn single_page_plan() {
        let p = sample_trajectory(&doc(5), &query(&[0]), &[0], Span::new(1, 1), 0).unwrap();
        assert_eq!(p.pages, vec![0]);
        assert!(p.deltas.is_empty());
    }

    #[test]
    fn plan_shape() {
        for s in 0..50 {
            let p = sample_trajectory(&doc(20), &query(&[7]), &[7], Span::new(2, 5), s).unwrap();
            assert_eq!(p.pages[0], 0);
            assert_eq!(p.terminal(), 7);
            assert!((2..=5).contains(&p.len()));
            let unique: BTreeSet<_> = p.pages.iter().collect();
            assert_eq!(unique.len(), p.len());
        }
    }

    #[test]
    fn infeasible_bounds() {
        let err = sample_trajectory(&doc(3), &query(&[0]), &[0], Span::new(2, 3), 0).unwrap_err();
        assert!(matches!(err, TrajGenError::InfeasibleBounds { .. }));
    }

    #[test]
    fn all_evidence_pages_included() {
        let q = query(&[2, 5, 9]);
        for s in 0..30 {
            let p = sample_trajectory(&doc(12), &q, &[2, 5, 9], Span::new(3, 6), s).unwrap();
            for e in [2, 5, 9] {
                assert!(p.pages.contains(&e), "{p:?}");
            }
        }
    }

    #[test]
    fn scroll_request_carries_delta() {
        let d = doc(10);
        let q = query(&[7]);
        let plan = TrajectoryPlan { query_id: "q".into(), pages: vec![0, 3, 7], deltas: vec![3, 4] };
        let reqs = emit_annotation_prompts(&d, &q, &plan, &[], false);
        assert_eq!(reqs.len(), 3);
        assert!(reqs[1].prompt.contains("Scroll_value: +4\n"));
        assert!(reqs[2].prompt.contains("Answer: 11\n"));
        assert_eq!(reqs[2].kind, AnnotationKind::AnswerStep);
    }

    #[test]
    fn mock_contract() {
        let d = doc(10);
        let q = query(&[7]);
        let plan = TrajectoryPlan { query_id: "q".into(), pages: vec![0, 4, 7], deltas: vec![4, 3] };
        let reqs = emit_annotation_prompts(&d, &q, &plan, &[], true);
        let ev = annotate(&MockAnnotator, &reqs[0]).unwrap();
        assert_eq!(ev.evidence_pages, Some(vec![]));
        let scroll = annotate(&MockAnnotator, &reqs[1]).unwrap();
        assert_eq!(scroll.parsed.scroll, Some(4));
        let answer = annotate(&MockAnnotator, &reqs[3]).unwrap();
        assert_eq!(answer.parsed.answer.as_deref(), Some("11"));
        assert_eq!(annotate(&MockAnnotator, &reqs[1]).unwrap(), scroll);
    }

    struct Slow;

    impl AnnotatorClient for Slow {
        fn complete(&self, _req: &AnnotationRequest) -> Result<String, AnnotatorError> {
            thread::sleep(Duration::from_millis(200));
            Ok("late".into())
        }
    }

    #[test]
    fn retrying_client_times_out_with_request_id() {
        let client = RetryingAnnotator::new(Slow, Duration::from_millis(10), 1, None);
        let req = evidence_request(&doc(2), &query(&[1]));
        let err = client.complete(&req).unwrap_err();
        assert_eq!(err.request_id(), req.id);
        assert!(matches!(err, AnnotatorError::Exhausted { attempts: 2, .. }));
    }

    #[test]
    fn cache_serves_repeat_requests() {
        let dir = tempfile::tempdir().unwrap();
        let client = RetryingAnnotator::new(MockAnnotator, Duration::from_secs(5), 0, Some(dir.path().to_path_buf()));
        let req = evidence_request(&doc(3), &query(&[1]));
        let first = client.complete(&req).unwrap();
        fs::write(dir.path().join(format!("{}.txt", req.id)), "cached").unwrap();
        assert_eq!(client.complete(&req).unwrap(), "cached");
        assert_ne!(first, "cached");
    }

    #[test]
    fn missing_step_is_integrity_error() {
        let corpus = Corpus {
            records: vec![crate::corpus::DocRecord { document: doc(10), queries: vec![query(&[7])] }],
        };
        let plan = TrajectoryPlan { query_id: "q".into(), pages: vec![0, 7], deltas: vec![7] };
        assert!(matches!(sft_rows(&corpus, &[plan], &[]), Err(TrajGenError::Integrity(_))));
    }
}
