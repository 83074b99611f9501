//! The page-by-page navigation process: state, prompt, parsing, transition
//! and the episode loop.

pub mod env;
pub mod episode;
pub mod parse;
pub mod prompt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::{resize_for_budget, BudgetError, BudgetSpec};
use crate::corpus::Document;
use crate::reward::RewardConfig;

pub use env::{apply_strategy, transition, Transition};
pub use episode::{run_corpus, run_episode, Episode, StepRecord};
pub use parse::{parse_action, parse_response, Action, MalformedResponse, ParsedResponse, TagFlags};
pub use prompt::build_prompt;

/// Pixel budget granted to each page in the one-page-per-step protocol.
pub const DEFAULT_MAX_PIXELS: u64 = 1_003_520;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    /// Page the note was taken on.
    pub page: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NavState {
    pub page: usize,
    pub notes: Vec<Note>,
    pub visited: Vec<bool>,
    /// Number of completed steps.
    pub step: usize,
    /// Last effective scroll value.
    pub scroll: i64,
    pub visit_counts: Vec<u32>,
}

impl NavState {
    /// Start on page 0, which counts as visited once.
    pub fn new(total_pages: usize) -> Self {
        assert!(total_pages > 0, "a document has at least one page");
        let mut visited = vec![false; total_pages];
        let mut visit_counts = vec![0; total_pages];
        visited[0] = true;
        visit_counts[0] = 1;
        Self { page: 0, notes: Vec::new(), visited, step: 0, scroll: 0, visit_counts }
    }

    pub fn total_pages(&self) -> usize {
        self.visited.len()
    }

    pub fn last_page(&self) -> usize {
        self.visited.len() - 1
    }

    /// Distinct pages seen so far.
    pub fn pages_read(&self) -> usize {
        self.visited.iter().filter(|&&v| v).count()
    }

    pub fn all_visited(&self) -> bool {
        self.visited.iter().all(|&v| v)
    }

    pub fn is_eligible(&self, page: usize, max_visit_count: u32) -> bool {
        self.visit_counts.get(page).is_some_and(|&c| c < max_visit_count)
    }

    /// `-page <= scroll <= N - page`.
    pub fn in_range(&self, scroll: i64) -> bool {
        let target = self.page as i64 + scroll;
        target >= 0 && target <= self.last_page() as i64
    }

    pub fn unvisited(&self) -> Vec<usize> {
        (0..self.visited.len()).filter(|&p| !self.visited[p]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InvalidScrollMode {
    /// Clamp into range, then move to the nearest page still under the visit limit.
    #[default]
    Clamp,
    /// Jump to a seeded uniformly drawn page that is still under the visit limit.
    RandomUnvisited,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Always scroll `+1`.
    Serial,
    /// Scroll to a uniformly drawn unvisited page.
    Random,
    /// Use the policy's own scroll value.
    #[default]
    Cos,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Serial => "serial",
            Strategy::Random => "random",
            Strategy::Cos => "cos",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "serial" => Ok(Strategy::Serial),
            "random" => Ok(Strategy::Random),
            "cos" => Ok(Strategy::Cos),
            other => Err(format!("unknown strategy {other:?} (expected serial, random or cos)")),
        }
    }
}

impl std::str::FromStr for InvalidScrollMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clamp" => Ok(InvalidScrollMode::Clamp),
            "random_unvisited" | "random-unvisited" => Ok(InvalidScrollMode::RandomUnvisited),
            other => Err(format!("unknown invalid-scroll mode {other:?} (expected clamp or random_unvisited)")),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("max_steps must be at least 1")]
    MaxSteps,
    #[error("max_visit_count must be at least 1")]
    MaxVisitCount,
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error("{0}")]
    Reward(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub max_steps: usize,
    pub max_visit_count: u32,
    pub invalid_scroll_mode: InvalidScrollMode,
    pub strategy: Strategy,
    pub seed: u64,
    /// Per-page pixel budget used for the token count in each page view.
    pub max_pixels: u64,
    pub reward: RewardConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_steps: 24,
            max_visit_count: 2,
            invalid_scroll_mode: InvalidScrollMode::Clamp,
            strategy: Strategy::Cos,
            seed: 0,
            max_pixels: DEFAULT_MAX_PIXELS,
            reward: RewardConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_steps == 0 {
            return Err(ConfigError::MaxSteps);
        }
        if self.max_visit_count == 0 {
            return Err(ConfigError::MaxVisitCount);
        }
        BudgetSpec::new(self.max_pixels)?;
        self.reward.validate().map_err(ConfigError::Reward)
    }

    /// Loop bound `min(max_steps, N + 1)`.
    pub fn step_limit(&self, total_pages: usize) -> usize {
        self.max_steps.min(total_pages)
    }
}

/// What the policy sees of the current page: its text and its image-token cost.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageView {
    pub index: usize,
    pub text: String,
    pub tokens: u64,
}

impl PageView {
    pub fn of(doc: &Document, page: usize, max_pixels: u64) -> Result<Self, BudgetError> {
        let p = &doc.pages[page];
        let spec = BudgetSpec::new(max_pixels)?;
        let r = resize_for_budget(p.height_px as u64, p.width_px as u64, spec)?;
        Ok(Self { index: page, text: p.text.clone(), tokens: r.tokens })
    }
}
