//! Flat `key=value` run configuration shared by every CLI command.
//!
//! Values are resolved in the order defaults, config file, `SCROLLNAV_*`
//! environment variables, command-line overrides; later sources win. The
//! resolved map is written next to (or inside) every artifact so a run can
//! be repeated from it.

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

use crate::budget::BudgetSpec;
use crate::corpus::{GenSpec, Span};
use crate::egrpo::{SubsetSampling, TrainConfig};
use crate::nav::{EngineConfig, InvalidScrollMode, Strategy};
use crate::reward::RewardConfig;
use crate::trajgen::TrajGenConfig;

pub const ENV_PREFIX: &str = "SCROLLNAV_";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
}

/// Every recognised key with its default value.
const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    // corpus
    ("corpus", ""),
    ("n_docs", "16"),
    ("pages_min", "10"),
    ("pages_max", "20"),
    ("facts_min", "3"),
    ("facts_max", "6"),
    ("distractors_min", "3"),
    ("distractors_max", "6"),
    ("unanswerable_fraction", "0.1"),
    ("page_width_px", "1980"),
    ("page_height_px", "1080"),
    // engine
    ("max_steps", "24"),
    ("max_visit_count", "2"),
    ("invalid_scroll_mode", "clamp"),
    ("strategy", "cos"),
    ("max_pixels", "1003520"),
    ("reward_w", "7"),
    ("anls_tau", "0.5"),
    // policy
    ("policy", "relevance"),
    ("answer_threshold", "0.6"),
    ("p_answer", "0.15"),
    ("checkpoint", ""),
    // training
    ("g_tilde", "8"),
    ("g", "4"),
    ("n", "2"),
    ("gamma", "3"),
    ("eps_clip", "0.2"),
    ("sigma_guard", "0.000001"),
    ("learning_rate", "1"),
    ("temperature", "0.9"),
    ("top_k", ""),
    ("top_p", ""),
    ("iterations", "500"),
    ("batch_size", "1"),
    ("sampling", "ordered"),
    ("ref_sync_every", ""),
    // data generation
    ("traj_min", "1"),
    ("traj_max", "6"),
    ("identify_evidence", "false"),
    ("max_in_flight", "4"),
    ("annotator_timeout_ms", "10000"),
    ("annotator_retries", "2"),
];

/// Resolved configuration: every key of the registry mapped to its text value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }
}

fn invalid(key: &str, value: &str, reason: impl ToString) -> ConfigError {
    ConfigError::InvalidValue { key: key.to_string(), value: value.to_string(), reason: reason.to_string() }
}

/// Parse `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1, text: raw.to_string() });
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn keys() -> impl Iterator<Item = &'static str> {
        DEFAULTS.iter().map(|(k, _)| *k)
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    /// Set one key, checking that its value parses.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim();
        if !self.values.contains_key(key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        let previous = self.values.insert(key.to_string(), value.trim().to_string());
        if let Err(e) = self.check_key(key) {
            self.values.insert(key.to_string(), previous.unwrap_or_default());
            return Err(e);
        }
        Ok(())
    }

    pub fn apply_kv(&mut self, text: &str) -> Result<(), ConfigError> {
        for (k, v) in parse_kv(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Apply `SCROLLNAV_<KEY>` variables from `vars`; other variables are ignored.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<(), ConfigError> {
        let mut found: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|rest| (rest.to_ascii_lowercase(), v)))
            .filter(|(k, _)| self.values.contains_key(k))
            .collect();
        found.sort();
        for (k, v) in found {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn as_map(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (k, v) in map {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: ToString,
    {
        let v = self.get(key);
        v.parse::<T>().map_err(|e| invalid(key, v, e))
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: ToString,
    {
        if self.get(key).is_empty() {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }

    fn check_key(&self, key: &str) -> Result<(), ConfigError> {
        match key {
            "corpus" | "checkpoint" => Ok(()),
            "policy" => match self.get(key) {
                "oracle" | "random" | "relevance" | "token" => Ok(()),
                other => Err(invalid(key, other, "expected oracle, random, relevance or token")),
            },
            "strategy" => self.parse::<Strategy>(key).map(drop),
            "invalid_scroll_mode" => self.parse::<InvalidScrollMode>(key).map(drop),
            "sampling" => self.parse::<SubsetSampling>(key).map(drop),
            "identify_evidence" => self.parse::<bool>(key).map(drop),
            "top_k" | "ref_sync_every" => self.optional::<usize>(key).map(drop),
            "top_p" => match self.optional::<f64>(key)? {
                Some(p) if !(p > 0.0 && p <= 1.0) => Err(invalid(key, self.get(key), "must be in (0, 1]")),
                _ => Ok(()),
            },
            "seed" | "max_pixels" | "annotator_timeout_ms" => self.parse::<u64>(key).map(drop),
            "page_width_px" | "page_height_px" | "max_visit_count" => self.parse::<u32>(key).map(drop),
            "unanswerable_fraction" | "reward_w" | "anls_tau" | "answer_threshold" | "p_answer" | "gamma"
            | "eps_clip" | "sigma_guard" | "learning_rate" | "temperature" => {
                let v: f64 = self.parse(key)?;
                if v.is_finite() {
                    Ok(())
                } else {
                    Err(invalid(key, self.get(key), "must be finite"))
                }
            }
            _ => self.parse::<usize>(key).map(drop),
        }
    }

    pub fn seed(&self) -> u64 {
        self.parse("seed").expect("validated on set")
    }

    pub fn corpus_path(&self) -> Option<&str> {
        Some(self.get("corpus")).filter(|s| !s.is_empty())
    }

    pub fn checkpoint_path(&self) -> Option<&str> {
        Some(self.get("checkpoint")).filter(|s| !s.is_empty())
    }

    pub fn policy_name(&self) -> &str {
        self.get("policy")
    }

    pub fn answer_threshold(&self) -> f64 {
        self.parse("answer_threshold").expect("validated on set")
    }

    pub fn p_answer(&self) -> f64 {
        self.parse("p_answer").expect("validated on set")
    }

    pub fn gen_spec(&self) -> GenSpec {
        let p = |k: &str| self.parse::<usize>(k).expect("validated on set");
        GenSpec {
            n_docs: p("n_docs"),
            pages_per_doc: Span::new(p("pages_min"), p("pages_max")),
            facts_per_doc: Span::new(p("facts_min"), p("facts_max")),
            distractor_sentences: Span::new(p("distractors_min"), p("distractors_max")),
            unanswerable_fraction: self.parse("unanswerable_fraction").expect("validated on set"),
            seed: self.seed(),
            width_px: self.parse("page_width_px").expect("validated on set"),
            height_px: self.parse("page_height_px").expect("validated on set"),
        }
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            max_steps: self.parse("max_steps").expect("validated on set"),
            max_visit_count: self.parse("max_visit_count").expect("validated on set"),
            invalid_scroll_mode: self.parse("invalid_scroll_mode").expect("validated on set"),
            strategy: self.parse("strategy").expect("validated on set"),
            seed: self.seed(),
            max_pixels: self.parse("max_pixels").expect("validated on set"),
            reward: RewardConfig {
                w: self.parse("reward_w").expect("validated on set"),
                anls_tau: self.parse("anls_tau").expect("validated on set"),
                ..RewardConfig::default()
            },
        }
    }

    pub fn train(&self) -> TrainConfig {
        let p = |k: &str| self.parse::<f64>(k).expect("validated on set");
        let u = |k: &str| self.parse::<usize>(k).expect("validated on set");
        TrainConfig {
            g_tilde: u("g_tilde"),
            g: u("g"),
            n: u("n"),
            gamma: p("gamma"),
            eps_clip: p("eps_clip"),
            sigma_guard: p("sigma_guard"),
            learning_rate: p("learning_rate"),
            temperature: p("temperature"),
            top_k: self.optional("top_k").expect("validated on set"),
            top_p: self.optional("top_p").expect("validated on set"),
            iterations: u("iterations"),
            batch_size: u("batch_size"),
            sampling: self.parse("sampling").expect("validated on set"),
            ref_sync_every: self.optional("ref_sync_every").expect("validated on set"),
            seed: self.seed(),
        }
    }

    pub fn trajgen(&self) -> TrajGenConfig {
        let u = |k: &str| self.parse::<usize>(k).expect("validated on set");
        TrajGenConfig {
            len_bounds: Span::new(u("traj_min"), u("traj_max")),
            identify_evidence: self.parse("identify_evidence").expect("validated on set"),
            seed: self.seed(),
            max_in_flight: u("max_in_flight"),
        }
    }

    pub fn annotator_timeout_ms(&self) -> u64 {
        self.parse("annotator_timeout_ms").expect("validated on set")
    }

    pub fn annotator_retries(&self) -> usize {
        self.parse("annotator_retries").expect("validated on set")
    }

    pub fn budget(&self) -> Result<BudgetSpec, crate::budget::BudgetError> {
        BudgetSpec::new(self.parse("max_pixels").expect("validated on set"))
    }
}
