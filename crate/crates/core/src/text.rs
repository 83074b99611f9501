//! Small text helpers shared by policies, rewards and the corpus generator.

/// Lowercase, trim and collapse internal whitespace.
pub fn normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Lowercase alphanumeric runs.
pub fn words(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

/// Split page text into sentences on `.`, `?` and `!` followed by whitespace or end.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if matches!(b, b'.' | b'?' | b'!') {
            let at_end = i + 1 == bytes.len() || bytes[i + 1].is_ascii_whitespace();
            if at_end {
                let s = text[start..=i].trim();
                if !s.is_empty() {
                    out.push(s);
                }
                start = i + 1;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// Fraction of the distinct question words that also occur on the page.
pub fn overlap_score(question: &str, text: &str) -> f64 {
    let mut q: Vec<String> = words(question).collect();
    q.sort();
    q.dedup();
    if q.is_empty() {
        return 0.0;
    }
    let page: std::collections::HashSet<String> = words(text).collect();
    let shared = q.iter().filter(|w| page.contains(*w)).count();
    shared as f64 / q.len() as f64
}

/// The sentence of `text` sharing the most words with `question`; earliest wins ties.
pub fn best_sentence<'a>(question: &str, text: &'a str) -> Option<&'a str> {
    let mut best: Option<(&str, f64)> = None;
    for s in sentences(text) {
        let score = overlap_score(question, s);
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((s, score));
        }
    }
    best.map(|(s, _)| s)
}

/// Pull an answer span out of the most question-like sentence on the page.
///
/// Fact sentences read `The <relation> of <entity> is <answer>.`, so the span
/// after the last ` is ` is returned; otherwise the sentence's last word.
pub fn extract_answer(question: &str, text: &str) -> Option<String> {
    let sentence = best_sentence(question, text)?;
    let body = sentence.trim_end_matches(['.', '?', '!']).trim();
    let span = match body.rfind(" is ") {
        Some(pos) => &body[pos + 4..],
        None => body.rsplit(' ').next().unwrap_or(body),
    };
    let span = span.trim();
    (!span.is_empty()).then(|| span.to_string())
}
