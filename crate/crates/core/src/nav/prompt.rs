//! Step prompt rendering.

use super::NavState;

/// Versioned step prompt; slots are `{Question}`, `{Previous_Note}`,
/// `{Current_page_num}` and `{Total_page_num}`.
pub const COS_PROMPT_V1: &str = include_str!("../../assets/cos_prompt_v1.txt");

/// Rendered in the note slot before any note has been taken.
pub const EMPTY_NOTES: &str = "None";

/// Substitute `{Name}` slots in one left-to-right pass. Unknown braces are
/// kept verbatim and substituted values are never rescanned.
pub fn fill_template(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    'scan: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open..];
        for (name, value) in slots {
            if after[1..].starts_with(name) && after[1 + name.len()..].starts_with('}') {
                out.push_str(value);
                rest = &after[name.len() + 2..];
                continue 'scan;
            }
        }
        out.push('{');
        rest = &after[1..];
    }
    out.push_str(rest);
    out
}

/// Notes rendered as `Page k: text` entries in the order they were taken.
pub fn render_notes(state: &NavState) -> String {
    let entries: Vec<String> = state
        .notes
        .iter()
        .filter(|n| !n.text.trim().is_empty())
        .map(|n| format!("Page {}: {}", n.page, n.text.trim()))
        .collect();
    if entries.is_empty() {
        EMPTY_NOTES.to_string()
    } else {
        entries.join(" ")
    }
}

pub fn build_prompt(question: &str, state: &NavState, total_pages: usize) -> String {
    let notes = render_notes(state);
    let page = state.page.to_string();
    let total = total_pages.to_string();
    fill_template(
        COS_PROMPT_V1,
        &[
            ("Question", question),
            ("Previous_Note", &notes),
            ("Current_page_num", &page),
            ("Total_page_num", &total),
        ],
    )
}

/// Recover the question slot from a rendered prompt.
pub fn extract_question(prompt: &str) -> Option<&str> {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix("Question: "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nav::Note;

    const FIG_BODY: &str = "At each step, you will receive this prompt repeatedly, enabling you to scroll through the document page by page to gather information and ultimately answer the question. Imagine yourself as a human analyzing the document, making observations, and reasoning about whether to continue scrolling or answer the question. The first page of the document is page number 0.";
    const FIG_TAIL: &str = "Using the given information above, you can choose to scroll the document to explore other pages or answer the question. If you choose to scroll, return your thoughts, notes to pass question\u{2010}relevant information to the next step, and scroll values to scroll forward or backward. Return the thinking process in <think>\u{2026}</think>, the notes in <note>\u{2026}</note>, and the scroll value (+n or -n) in <scroll>\u{2026}</scroll> tags. If you choose to answer, return your thoughts and final answer to the given question. Return the thinking process in <think>\u{2026}</think> and the answer in <answer>\u{2026}</answer> tags.";

    #[test]
    fn template_matches_reference_wording() {
        let expected = format!(
            "{FIG_BODY}\n\nQuestion: {{Question}}\nPrevious_Note: {{Previous_Note}}\nCurrent_page_num: {{Current_page_num}}\nTotal_page_num: {{Total_page_num}}\n\n{FIG_TAIL}\n"
        );
        assert_eq!(COS_PROMPT_V1, expected);
    }

    #[test]
    fn slots_are_filled() {
        let state = NavState::new(20);
        let p = build_prompt("Which Cluster ranks highest?", &state, 20);
        assert!(p.contains("Question: Which Cluster ranks highest?\n"));
        assert!(p.contains("Previous_Note: None\n"));
        assert!(p.contains("Current_page_num: 0\n"));
        assert!(p.contains("Total_page_num: 20\n"));
        assert_eq!(p, build_prompt("Which Cluster ranks highest?", &state, 20));
    }

    #[test]
    fn notes_keep_insertion_order() {
        let mut state = NavState::new(20);
        for (page, text) in [(0, "title"), (17, "cluster two"), (6, "concept mapping"), (13, "map")] {
            state.notes.push(Note { page, text: text.into() });
        }
        state.page = 19;
        let p = build_prompt("q", &state, 20);
        assert!(p.contains(
            "Previous_Note: Page 0: title Page 17: cluster two Page 6: concept mapping Page 13: map\n"
        ));
        assert!(p.contains("Current_page_num: 19\n"));
    }

    #[test]
    fn substituted_values_are_not_rescanned() {
        let out = fill_template("{A}-{B}-{C}", &[("A", "{B}"), ("B", "b")]);
        assert_eq!(out, "{B}-b-{C}");
    }

    #[test]
    fn question_is_recoverable() {
        let p = build_prompt("What is the code of zorb?", &NavState::new(3), 3);
        assert_eq!(extract_question(&p), Some("What is the code of zorb?"));
    }
}
