//! Strategy override and the state transition, including the handling of
//! out-of-range, over-visited and malformed scrolls.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EngineConfig, InvalidScrollMode, NavState, Note, Strategy};

/// Outcome of one scroll transition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub next: NavState,
    /// Scroll was in range and its target still under the visit limit.
    pub valid_scroll: bool,
    /// The page actually moved to differs from `page + scroll`.
    pub redirected: bool,
    /// No page is left under the visit limit; the episode cannot continue.
    pub exhausted: bool,
}

/// Scroll value after the page-selection strategy has had its say.
pub fn apply_strategy<R: Rng>(strategy: Strategy, scroll: i64, state: &NavState, rng: &mut R) -> i64 {
    match strategy {
        Strategy::Cos => scroll,
        Strategy::Serial => 1,
        Strategy::Random => match state.unvisited().choose(rng) {
            Some(&target) => target as i64 - state.page as i64,
            None => scroll,
        },
    }
}

/// Closest page under the visit limit; lower index wins ties.
fn nearest_eligible(state: &NavState, from: usize, max_visit_count: u32) -> Option<usize> {
    (0..state.total_pages())
        .filter(|&p| state.is_eligible(p, max_visit_count))
        .min_by_key(|&p| (p.abs_diff(from), p))
}

fn random_target<R: Rng>(state: &NavState, max_visit_count: u32, rng: &mut R) -> Option<usize> {
    let unvisited = state.unvisited();
    if let Some(&p) = unvisited.choose(rng) {
        return Some(p);
    }
    let eligible: Vec<usize> =
        (0..state.total_pages()).filter(|&p| state.is_eligible(p, max_visit_count)).collect();
    eligible.choose(rng).copied()
}

/// Apply a scroll step. `scroll` is `None` for a malformed response, which
/// moves like an invalid scroll but records no note.
pub fn transition<R: Rng>(
    state: &NavState,
    note: Option<&str>,
    scroll: Option<i64>,
    config: &EngineConfig,
    rng: &mut R,
) -> Transition {
    let max_visits = config.max_visit_count;
    let mut next = state.clone();
    next.step += 1;
    if let (Some(_), Some(text)) = (scroll, note) {
        next.notes.push(Note { page: state.page, text: text.to_string() });
    } else if scroll.is_some() {
        next.notes.push(Note { page: state.page, text: String::new() });
    }

    let last = state.last_page() as i64;
    let requested = scroll.map(|s| state.page as i64 + s);
    let valid_scroll = match (scroll, requested) {
        (Some(s), Some(t)) => state.in_range(s) && state.is_eligible(t as usize, max_visits),
        _ => false,
    };

    let target = if valid_scroll {
        requested.map(|t| t as usize)
    } else {
        match config.invalid_scroll_mode {
            InvalidScrollMode::Clamp => {
                let clamped = requested.unwrap_or(state.page as i64).clamp(0, last) as usize;
                if state.is_eligible(clamped, max_visits) {
                    Some(clamped)
                } else {
                    nearest_eligible(state, clamped, max_visits)
                }
            }
            InvalidScrollMode::RandomUnvisited => random_target(state, max_visits, rng),
        }
    };

    next.scroll = scroll.unwrap_or(0);
    match target {
        Some(page) => {
            next.page = page;
            next.visited[page] = true;
            next.visit_counts[page] += 1;
            Transition {
                redirected: requested != Some(page as i64),
                next,
                valid_scroll,
                exhausted: false,
            }
        }
        None => {
            let clamped = requested.unwrap_or(state.page as i64).clamp(0, last) as usize;
            next.page = clamped;
            next.visited[clamped] = true;
            Transition { redirected: requested != Some(clamped as i64), next, valid_scroll, exhausted: true }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn state_at(total: usize, page: usize) -> NavState {
        let mut s = NavState::new(total);
        s.page = page;
        s.visited[page] = true;
        s.visit_counts[page] += 1;
        s
    }

    fn clamp_cfg() -> EngineConfig {
        EngineConfig::default()
    }

    #[test]
    fn plain_scroll() {
        let s = state_at(20, 5);
        let t = transition(&s, Some("n"), Some(3), &clamp_cfg(), &mut seed::rng(0));
        assert_eq!(t.next.page, 8);
        assert!(t.next.visited[8]);
        assert!(t.valid_scroll);
        assert_eq!(t.next.notes, vec![Note { page: 5, text: "n".into() }]);
    }

    #[test]
    fn clamp_upper_and_lower() {
        let s = state_at(20, 19);
        let t = transition(&s, None, Some(5), &clamp_cfg(), &mut seed::rng(0));
        assert_eq!(t.next.page, 19);
        assert!(!t.valid_scroll);

        let s = state_at(20, 2);
        let t = transition(&s, None, Some(-5), &clamp_cfg(), &mut seed::rng(0));
        assert_eq!(t.next.page, 0);
        assert!(!t.valid_scroll);
    }

    #[test]
    fn visit_limit_redirects_to_nearest_eligible() {
        let cfg = EngineConfig { max_visit_count: 1, ..EngineConfig::default() };
        let mut s = NavState::new(6);
        for p in [1, 2] {
            s.visited[p] = true;
            s.visit_counts[p] = 1;
        }
        s.page = 2;
        let t = transition(&s, Some("x"), Some(-1), &cfg, &mut seed::rng(0));
        assert!(!t.valid_scroll);
        assert_eq!(t.next.page, 3);
        assert!(t.redirected);
    }

    #[test]
    fn malformed_adds_no_note() {
        let s = NavState::new(4);
        let t = transition(&s, Some("ignored"), None, &clamp_cfg(), &mut seed::rng(0));
        assert!(t.next.notes.is_empty());
        assert!(!t.valid_scroll);
        assert_eq!(t.next.page, 0);
    }

    #[test]
    fn random_unvisited_is_seeded() {
        let cfg = EngineConfig { invalid_scroll_mode: InvalidScrollMode::RandomUnvisited, ..EngineConfig::default() };
        let s = NavState::new(10);
        let a = transition(&s, None, None, &cfg, &mut seed::rng(11));
        let b = transition(&s, None, None, &cfg, &mut seed::rng(11));
        assert_eq!(a, b);
        assert!(!s.visited[a.next.page]);
    }

    #[test]
    fn exhausted_when_nothing_eligible() {
        let cfg = EngineConfig { max_visit_count: 1, ..EngineConfig::default() };
        let mut s = NavState::new(2);
        s.visited[1] = true;
        s.visit_counts[1] = 1;
        s.page = 1;
        let t = transition(&s, Some("x"), Some(1), &cfg, &mut seed::rng(0));
        assert!(t.exhausted);
        assert_eq!(t.next.visit_counts, vec![1, 1]);
    }

    #[test]
    fn serial_and_cos_overrides() {
        let s = state_at(10, 4);
        let mut rng = seed::rng(0);
        assert_eq!(apply_strategy(Strategy::Serial, -3, &s, &mut rng), 1);
        assert_eq!(apply_strategy(Strategy::Cos, -2, &s, &mut rng), -2);
        let r = apply_strategy(Strategy::Random, 0, &s, &mut rng);
        assert!(!s.visited[(4 + r) as usize]);
    }

    #[test]
    fn random_strategy_is_uniform() {
        let s = NavState::new(10);
        let mut rng = seed::rng(5);
        let mut counts = [0usize; 10];
        let n = 10_000;
        for _ in 0..n {
            counts[apply_strategy(Strategy::Random, 0, &s, &mut rng) as usize] += 1;
        }
        assert_eq!(counts[0], 0);
        let p = 1.0 / 9.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts[1..] {
            assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }
}
