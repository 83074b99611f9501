//! JSONL episode logs.
//!
//! Line 1 is a header carrying the resolved run configuration. Each episode
//! follows as one `step` line per step and a closing `end` line.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nav::{Episode, StepRecord};

pub const LOG_FORMAT: &str = "scrollnav.episodes.v1";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: {message}")]
    Structure { line: usize, message: String },
    #[error("log is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Header {
        format: String,
        policy: String,
        config: BTreeMap<String, String>,
    },
    Step {
        query_id: String,
        record: Box<StepRecord>,
    },
    End {
        query_id: String,
        doc_id: String,
        total_pages: usize,
        answer: String,
        trajectory: Vec<usize>,
        final_page: usize,
        exhausted: bool,
        aborted: bool,
        steps: usize,
        total_return: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub policy: String,
    pub config: BTreeMap<String, String>,
    pub episodes: Vec<Episode>,
}

pub fn write_log(policy: &str, config: &BTreeMap<String, String>, episodes: &[Episode]) -> String {
    let mut out = String::new();
    let mut push = |line: &LogLine| {
        out.push_str(&serde_json::to_string(line).expect("log lines serialize"));
        out.push('\n');
    };
    push(&LogLine::Header { format: LOG_FORMAT.to_string(), policy: policy.to_string(), config: config.clone() });
    for ep in episodes {
        for record in &ep.steps {
            push(&LogLine::Step { query_id: ep.query_id.clone(), record: Box::new(record.clone()) });
        }
        push(&LogLine::End {
            query_id: ep.query_id.clone(),
            doc_id: ep.doc_id.clone(),
            total_pages: ep.total_pages,
            answer: ep.answer.clone(),
            trajectory: ep.trajectory.clone(),
            final_page: ep.final_page,
            exhausted: ep.exhausted,
            aborted: ep.aborted,
            steps: ep.steps.len(),
            total_return: ep.total_return(),
        });
    }
    out
}

/// Read a log back into episodes. Step prompts are not stored, so the
/// recovered records carry empty prompt text.
pub fn parse_log(text: &str) -> Result<EpisodeLog, LogError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let parse = |i: usize, l: &str| serde_json::from_str::<LogLine>(l).map_err(|e| LogError::Json { line: i + 1, source: e });
    let structure = |i: usize, m: String| LogError::Structure { line: i + 1, message: m };

    let (i, first) = lines.next().ok_or(LogError::Empty)?;
    let (policy, config) = match parse(i, first)? {
        LogLine::Header { format, policy, config } => {
            if format != LOG_FORMAT {
                return Err(structure(i, format!("unsupported log format {format:?}")));
            }
            (policy, config)
        }
        _ => return Err(structure(i, "first line must be the header".into())),
    };

    let mut episodes = Vec::new();
    let mut open: Option<(String, Vec<StepRecord>)> = None;
    for (i, l) in lines {
        match parse(i, l)? {
            LogLine::Header { .. } => return Err(structure(i, "header repeated".into())),
            LogLine::Step { query_id, record } => {
                let (qid, steps) = open.get_or_insert_with(|| (query_id.clone(), Vec::new()));
                if *qid != query_id {
                    return Err(structure(i, format!("step for {query_id} inside episode {qid}")));
                }
                if record.step != steps.len() {
                    return Err(structure(i, format!("expected step {}, found {}", steps.len(), record.step)));
                }
                steps.push(*record);
            }
            LogLine::End {
                query_id,
                doc_id,
                total_pages,
                answer,
                trajectory,
                final_page,
                exhausted,
                aborted,
                steps: n_steps,
                total_return: _,
            } => {
                let (qid, steps) = open.take().unwrap_or_else(|| (query_id.clone(), Vec::new()));
                if qid != query_id {
                    return Err(structure(i, format!("end for {query_id} closes episode {qid}")));
                }
                if steps.len() != n_steps || trajectory.len() != n_steps {
                    return Err(structure(i, format!("episode {qid} declares {n_steps} steps, found {}", steps.len())));
                }
                episodes.push(Episode {
                    query_id,
                    doc_id,
                    total_pages,
                    steps,
                    answer,
                    trajectory,
                    final_page,
                    exhausted,
                    aborted,
                });
            }
        }
    }
    if let Some((qid, _)) = open {
        return Err(LogError::Structure { line: text.lines().count(), message: format!("episode {qid} has no end line") });
    }
    Ok(EpisodeLog { policy, config, episodes })
}
