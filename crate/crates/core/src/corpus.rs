//! Documents, queries, the newline-delimited JSON corpus file, and a seeded
//! generator that plants answerable facts on chosen evidence pages.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

/// Gold answer of every unanswerable query.
pub const NO_ANSWER: &str = "The answer cannot be found.";

pub const CORPUS_SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_WIDTH_PX: u32 = 1980;
pub const DEFAULT_HEIGHT_PX: u32 = 1080;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("invalid generator spec: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub index: usize,
    pub text: String,
    pub width_px: u32,
    pub height_px: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub pages: Vec<Page>,
}

impl Document {
    /// Index of the last page (`N`).
    pub fn last_page(&self) -> usize {
        self.pages.len().saturating_sub(1)
    }

    pub fn total_pages(&self) -> usize {
        self.pages.len()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.pages.is_empty() {
            return Err(CorpusError::Integrity(format!("document {} has no pages", self.id)));
        }
        for (i, page) in self.pages.iter().enumerate() {
            if page.index != i {
                return Err(CorpusError::Integrity(format!(
                    "document {}: page at position {i} has index {} (indices must be 0..N contiguous)",
                    self.id, page.index
                )));
            }
            if page.text.trim().is_empty() {
                return Err(CorpusError::Integrity(format!("document {} page {i} has empty text", self.id)));
            }
            if page.width_px == 0 || page.height_px == 0 {
                return Err(CorpusError::Integrity(format!(
                    "document {} page {i} has a zero pixel dimension",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub evidence_pages: BTreeSet<usize>,
}

impl Query {
    pub fn is_answerable(&self) -> bool {
        !self.evidence_pages.is_empty()
    }

    fn validate(&self, doc: &Document) -> Result<(), CorpusError> {
        if self.gold_answers.is_empty() {
            return Err(CorpusError::Integrity(format!("query {} has no gold answers", self.id)));
        }
        if let Some(&p) = self.evidence_pages.iter().find(|&&p| p > doc.last_page()) {
            return Err(CorpusError::Integrity(format!(
                "query {} names evidence page {p} but document {} ends at page {}",
                self.id,
                doc.id,
                doc.last_page()
            )));
        }
        if !self.is_answerable() && self.gold_answers.iter().any(|g| g != NO_ANSWER) {
            return Err(CorpusError::Integrity(format!(
                "query {} has no evidence pages but its gold answer is not {NO_ANSWER:?}",
                self.id
            )));
        }
        Ok(())
    }
}

/// One corpus line: a document together with the queries asked about it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocRecord {
    #[serde(flatten)]
    pub document: Document,
    pub queries: Vec<Query>,
}

#[derive(Serialize, Deserialize)]
struct DocLine {
    v: u32,
    #[serde(flatten)]
    record: DocRecord,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub records: Vec<DocRecord>,
}

impl Corpus {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut doc_ids = HashSet::new();
        let mut query_ids = HashSet::new();
        for rec in &self.records {
            if !doc_ids.insert(rec.document.id.as_str()) {
                return Err(CorpusError::Integrity(format!("duplicate document id {}", rec.document.id)));
            }
            rec.document.validate()?;
            for q in &rec.queries {
                if !query_ids.insert(q.id.as_str()) {
                    return Err(CorpusError::Integrity(format!("duplicate query id {}", q.id)));
                }
                q.validate(&rec.document)?;
            }
        }
        Ok(())
    }

    /// All `(document, query)` pairs in file order.
    pub fn pairs(&self) -> impl Iterator<Item = (&Document, &Query)> {
        self.records
            .iter()
            .flat_map(|r| r.queries.iter().map(move |q| (&r.document, q)))
    }

    pub fn find_query(&self, query_id: &str) -> Option<(&Document, &Query)> {
        self.pairs().find(|(_, q)| q.id == query_id)
    }

    pub fn query_count(&self) -> usize {
        self.records.iter().map(|r| r.queries.len()).sum()
    }

    /// Parse newline-delimited JSON. Blank lines are skipped.
    pub fn from_jsonl(input: &str) -> Result<Self, CorpusError> {
        let mut records = Vec::new();
        for (i, line) in input.lines().enumerate() {
            if let Some(rec) = parse_line(i + 1, line)? {
                records.push(rec);
            }
        }
        let corpus = Corpus { records };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.records {
            out.push_str(&record_line(rec));
            out.push('\n');
        }
        out
    }
}

fn parse_line(line_no: usize, line: &str) -> Result<Option<DocRecord>, CorpusError> {
    if line.trim().is_empty() {
        return Ok(None);
    }
    let parsed: DocLine = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    if parsed.v != CORPUS_SCHEMA_VERSION {
        return Err(CorpusError::Parse {
            line: line_no,
            message: format!("unsupported schema version {}", parsed.v),
        });
    }
    Ok(Some(parsed.record))
}

fn record_line(rec: &DocRecord) -> String {
    let line = DocLine { v: CORPUS_SCHEMA_VERSION, record: rec.clone() };
    serde_json::to_string(&line).expect("corpus records always serialize")
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        if let Some(rec) = parse_line(i + 1, &line?)? {
            records.push(rec);
        }
    }
    let corpus = Corpus { records };
    corpus.validate()?;
    Ok(corpus)
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    corpus.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    for rec in &corpus.records {
        writeln!(w, "{}", record_line(rec))?;
    }
    w.flush()?;
    Ok(())
}

/// Inclusive integer range used by the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub min: usize,
    pub max: usize,
}

impl Span {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        rng.gen_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n_docs: usize,
    pub pages_per_doc: Span,
    pub facts_per_doc: Span,
    pub distractor_sentences: Span,
    pub unanswerable_fraction: f64,
    pub seed: u64,
    pub width_px: u32,
    pub height_px: u32,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            n_docs: 16,
            pages_per_doc: Span::new(10, 20),
            facts_per_doc: Span::new(3, 6),
            distractor_sentences: Span::new(3, 6),
            unanswerable_fraction: 0.1,
            seed: 0,
            width_px: DEFAULT_WIDTH_PX,
            height_px: DEFAULT_HEIGHT_PX,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let check = |name: &str, s: Span, lo: usize| {
            if s.min > s.max {
                Err(CorpusError::Config(format!("{name} range {}..={} is empty", s.min, s.max)))
            } else if s.min < lo {
                Err(CorpusError::Config(format!("{name} must be at least {lo}")))
            } else {
                Ok(())
            }
        };
        check("pages_per_doc", self.pages_per_doc, 1)?;
        check("facts_per_doc", self.facts_per_doc, 0)?;
        check("distractor_sentences", self.distractor_sentences, 1)?;
        if self.facts_per_doc.max > MAX_FACTS_PER_DOC {
            return Err(CorpusError::Config(format!(
                "facts_per_doc may not exceed {MAX_FACTS_PER_DOC}"
            )));
        }
        if !(0.0..=1.0).contains(&self.unanswerable_fraction) || self.unanswerable_fraction.is_nan() {
            return Err(CorpusError::Config(format!(
                "unanswerable_fraction {} is outside [0, 1]",
                self.unanswerable_fraction
            )));
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(CorpusError::Config("page dimensions must be positive".into()));
        }
        Ok(())
    }
}

const MAX_FACTS_PER_DOC: usize = 64;

const RELATIONS: &[&str] = &[
    "color", "height", "code", "owner", "origin", "weight", "price", "rank", "license", "serial",
];

// Never overlaps question words ("what", "is", "the", "of") or RELATIONS.
const FILLER: &[&str] = &[
    "amber", "anchor", "basket", "beacon", "blossom", "bridge", "candle", "canyon", "cedar",
    "copper", "coral", "cottage", "crystal", "dawn", "desert", "ember", "feather", "fern",
    "field", "forest", "garden", "glacier", "granite", "harbor", "hazel", "horizon", "island",
    "ivory", "lagoon", "lantern", "maple", "meadow", "mirror", "moss", "needle", "orchard",
    "pebble", "pillar", "prairie", "quartz", "quiet", "rapid", "ribbon", "river", "saddle",
    "shadow", "silver", "slate", "spruce", "stone", "summit", "thunder", "timber", "tunnel",
    "velvet", "village", "walnut", "willow", "winter", "yellow",
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mir", "zen", "tor", "vi", "bra", "quo", "fel", "dun", "sa", "ri", "mo", "thal",
    "gex", "pyr", "ul", "nex", "dra", "wo",
];

struct Fact {
    relation: &'static str,
    entity: String,
    answer: String,
    evidence: Option<usize>,
}

fn entity_name<R: Rng>(rng: &mut R, taken: &mut HashSet<String>) -> String {
    loop {
        let n = rng.gen_range(2..=3);
        let name: String = (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
        if FILLER.contains(&name.as_str()) || RELATIONS.contains(&name.as_str()) {
            continue;
        }
        if taken.insert(name.clone()) {
            return name;
        }
    }
}

fn answer_code<R: Rng>(rng: &mut R, taken: &mut HashSet<String>) -> String {
    loop {
        let code = format!("{}-{:04}", rng.gen_range(100..1000), rng.gen_range(0..10_000));
        if taken.insert(code.clone()) {
            return code;
        }
    }
}

fn filler_sentence<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(4..=8);
    let mut words: Vec<&str> = (0..n).map(|_| *FILLER.choose(rng).unwrap()).collect();
    let first = words[0];
    let mut capitalized = first[..1].to_uppercase();
    capitalized.push_str(&first[1..]);
    words[0] = &capitalized;
    let mut s = words.join(" ");
    s.push('.');
    s
}

pub fn fact_sentence(relation: &str, entity: &str, answer: &str) -> String {
    format!("The {relation} of {entity} is {answer}.")
}

pub fn question_for(relation: &str, entity: &str) -> String {
    format!("What is the {relation} of {entity}?")
}

/// Build a corpus from `spec`; the output depends on nothing else, seed included.
pub fn generate_synthetic_corpus(spec: &GenSpec) -> Result<Corpus, CorpusError> {
    spec.validate()?;
    let mut rng = seed::stream(spec.seed, "corpus");

    // Shapes first, so the unanswerable subset is chosen over all queries at once.
    let shapes: Vec<(usize, usize)> = (0..spec.n_docs)
        .map(|_| (spec.pages_per_doc.sample(&mut rng), spec.facts_per_doc.sample(&mut rng)))
        .collect();
    let total_queries: usize = shapes.iter().map(|s| s.1).sum();
    let n_unanswerable = (spec.unanswerable_fraction * total_queries as f64).round() as usize;
    let mut order: Vec<usize> = (0..total_queries).collect();
    order.shuffle(&mut rng);
    let unanswerable: HashSet<usize> = order.into_iter().take(n_unanswerable).collect();

    let mut records = Vec::with_capacity(spec.n_docs);
    let mut global_q = 0usize;
    for (d, &(n_pages, n_facts)) in shapes.iter().enumerate() {
        let doc_id = format!("doc-{d:04}");
        let mut entities = HashSet::new();
        let mut answers = HashSet::new();
        let mut facts = Vec::with_capacity(n_facts);
        for _ in 0..n_facts {
            let planted = !unanswerable.contains(&global_q);
            global_q += 1;
            facts.push(Fact {
                relation: RELATIONS.choose(&mut rng).unwrap(),
                entity: entity_name(&mut rng, &mut entities),
                answer: answer_code(&mut rng, &mut answers),
                evidence: planted.then(|| rng.gen_range(0..n_pages)),
            });
        }

        let mut pages = Vec::with_capacity(n_pages);
        for index in 0..n_pages {
            let mut sentences: Vec<String> = (0..spec.distractor_sentences.sample(&mut rng))
                .map(|_| filler_sentence(&mut rng))
                .collect();
            for fact in facts.iter().filter(|f| f.evidence == Some(index)) {
                let at = rng.gen_range(0..=sentences.len());
                sentences.insert(at, fact_sentence(fact.relation, &fact.entity, &fact.answer));
            }
            pages.push(Page {
                index,
                text: sentences.join(" "),
                width_px: spec.width_px,
                height_px: spec.height_px,
            });
        }

        let queries = facts
            .iter()
            .enumerate()
            .map(|(j, f)| Query {
                id: format!("{doc_id}-q{j}"),
                question: question_for(f.relation, &f.entity),
                gold_answers: vec![match f.evidence {
                    Some(_) => f.answer.clone(),
                    None => NO_ANSWER.to_string(),
                }],
                evidence_pages: f.evidence.into_iter().collect(),
            })
            .collect();
        records.push(DocRecord { document: Document { id: doc_id, pages }, queries });
    }
    let corpus = Corpus { records };
    corpus.validate()?;
    Ok(corpus)
}
