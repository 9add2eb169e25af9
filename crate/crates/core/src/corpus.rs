//! Tagged corpora: IOB tags, entity spans, CoNLL and i2b2-2010 ingestion, and
//! summary statistics.
//!
//! Tokens are whitespace-delimited strings. A sentence pairs its tokens with one
//! IOB tag per token; an entity of class `X` is a `B-X` followed by zero or more
//! `I-X` tags.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Entity classes used when no label set is configured.
pub const DEFAULT_CLASSES: [&str; 3] = ["problem", "treatment", "test"];

pub fn default_label_set() -> Vec<String> {
    DEFAULT_CLASSES.iter().map(|c| c.to_string()).collect()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid tag `{0}` (expected O, B-<class> or I-<class>)")]
    InvalidTag(String),
    #[error("sentence {sentence}: {tokens} tokens but {tags} tags")]
    LengthMismatch {
        sentence: usize,
        tokens: usize,
        tags: usize,
    },
    #[error("sentence {sentence}: token {token} is empty or contains whitespace")]
    InvalidToken { sentence: usize, token: usize },
    #[error("sentence {0} is empty")]
    EmptySentence(usize),
    #[error("sentence {sentence}: invalid IOB sequence ({} violation(s), first at token {})", violations.len(), violations.first().map(|v| v.index).unwrap_or(0))]
    InvalidIob {
        sentence: usize,
        violations: Vec<IobViolation>,
    },
    #[error("spans {first:?} and {second:?} overlap")]
    OverlappingSpans {
        first: (usize, usize),
        second: (usize, usize),
    },
    #[error("span {start}..={end} out of range for sentence of length {len}")]
    SpanOutOfRange {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("class `{0}` is not in the label set")]
    UnknownClass(String),
    #[error("concept line {line}: {message}")]
    Concept { line: usize, message: String },
}

/// A single IOB tag. Class names are case-sensitive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Outside,
    Begin(String),
    Inside(String),
}

impl Tag {
    pub fn class(&self) -> Option<&str> {
        match self {
            Tag::Outside => None,
            Tag::Begin(c) | Tag::Inside(c) => Some(c),
        }
    }

    pub fn is_outside(&self) -> bool {
        matches!(self, Tag::Outside)
    }

    pub fn begin(class: &str) -> Self {
        Tag::Begin(class.to_string())
    }

    pub fn inside(class: &str) -> Self {
        Tag::Inside(class.to_string())
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(c) => write!(f, "B-{c}"),
            Tag::Inside(c) => write!(f, "I-{c}"),
        }
    }
}

impl FromStr for Tag {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(Tag::Outside);
        }
        let valid_class = |c: &str| !c.is_empty() && !c.chars().any(char::is_whitespace);
        match s.split_at_checked(2) {
            Some(("B-", c)) if valid_class(c) => Ok(Tag::Begin(c.to_string())),
            Some(("I-", c)) if valid_class(c) => Ok(Tag::Inside(c.to_string())),
            _ => Err(CorpusError::InvalidTag(s.to_string())),
        }
    }
}

impl Serialize for Tag {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses a whitespace-separated tag line such as `"B-test I-test O"`.
pub fn parse_tags(line: &str) -> Result<Vec<Tag>, CorpusError> {
    line.split_whitespace().map(str::parse).collect()
}

/// The ordered tag inventory of a label set: `O`, then `B-X`, `I-X` per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    classes: Vec<String>,
    tags: Vec<Tag>,
}

impl TagSet {
    pub fn new(classes: &[String]) -> Self {
        let mut tags = Vec::with_capacity(2 * classes.len() + 1);
        tags.push(Tag::Outside);
        for class in classes {
            tags.push(Tag::Begin(class.clone()));
            tags.push(Tag::Inside(class.clone()));
        }
        TagSet {
            classes: classes.to_vec(),
            tags,
        }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn tag(&self, index: usize) -> &Tag {
        &self.tags[index]
    }

    pub fn index_of(&self, tag: &Tag) -> Option<usize> {
        match tag {
            Tag::Outside => Some(0),
            Tag::Begin(c) => self.class_index(c).map(|i| 1 + 2 * i),
            Tag::Inside(c) => self.class_index(c).map(|i| 2 + 2 * i),
        }
    }

    pub fn encode(&self, tags: &[Tag]) -> Result<Vec<usize>, CorpusError> {
        tags.iter()
            .map(|t| {
                self.index_of(t)
                    .ok_or_else(|| CorpusError::UnknownClass(t.class().unwrap_or("O").to_string()))
            })
            .collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Vec<Tag> {
        indices.iter().map(|&i| self.tags[i].clone()).collect()
    }

    fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }
}

/// A typed entity covering tokens `start..=end` of one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub label: String,
    pub sentence_index: usize,
    pub start: usize,
    pub end: usize,
}

impl EntitySpan {
    pub fn new(label: &str, sentence_index: usize, start: usize, end: usize) -> Self {
        EntitySpan {
            label: label.to_string(),
            sentence_index,
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
}

impl Sentence {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>, tags: Vec<Tag>) -> Self {
        Sentence {
            tokens: tokens.into_iter().map(Into::into).collect(),
            tags,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedCorpus {
    pub sentences: Vec<Sentence>,
    pub label_set: Vec<String>,
}

impl TaggedCorpus {
    /// Builds a corpus whose label set lists classes in order of first appearance.
    pub fn new(sentences: Vec<Sentence>) -> Self {
        let mut label_set: Vec<String> = Vec::new();
        for tag in sentences.iter().flat_map(|s| &s.tags) {
            if let Some(c) = tag.class() {
                if !label_set.iter().any(|l| l == c) {
                    label_set.push(c.to_string());
                }
            }
        }
        TaggedCorpus {
            sentences,
            label_set,
        }
    }

    /// Builds a corpus with an explicit label set; every tag class must belong to it.
    pub fn with_label_set(
        sentences: Vec<Sentence>,
        label_set: Vec<String>,
    ) -> Result<Self, CorpusError> {
        for tag in sentences.iter().flat_map(|s| &s.tags) {
            if let Some(c) = tag.class() {
                if !label_set.iter().any(|l| l == c) {
                    return Err(CorpusError::UnknownClass(c.to_string()));
                }
            }
        }
        Ok(TaggedCorpus {
            sentences,
            label_set,
        })
    }

    /// Returns `base` followed by any class of this corpus not already in it.
    pub fn merged_label_set(&self, base: &[String]) -> Vec<String> {
        let mut out = base.to_vec();
        for c in &self.label_set {
            if !out.contains(c) {
                out.push(c.clone());
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// Checks token shape, length agreement, and IOB validity of every sentence.
    pub fn validate(&self) -> Result<(), CorpusError> {
        for (i, s) in self.sentences.iter().enumerate() {
            check_sentence_shape(i, s)?;
            let violations = validate_iob(&s.tags);
            if !violations.is_empty() {
                return Err(CorpusError::InvalidIob {
                    sentence: i,
                    violations,
                });
            }
        }
        Ok(())
    }

    /// Same sentences with every tag replaced by `O`.
    pub fn untagged(&self) -> TaggedCorpus {
        let sentences = self
            .sentences
            .iter()
            .map(|s| Sentence {
                tokens: s.tokens.clone(),
                tags: vec![Tag::Outside; s.len()],
            })
            .collect();
        TaggedCorpus {
            sentences,
            label_set: self.label_set.clone(),
        }
    }
}

fn check_sentence_shape(index: usize, s: &Sentence) -> Result<(), CorpusError> {
    if s.is_empty() {
        return Err(CorpusError::EmptySentence(index));
    }
    if s.tokens.len() != s.tags.len() {
        return Err(CorpusError::LengthMismatch {
            sentence: index,
            tokens: s.tokens.len(),
            tags: s.tags.len(),
        });
    }
    if let Some(t) = s.tokens.iter().position(|t| !is_valid_token(t)) {
        return Err(CorpusError::InvalidToken {
            sentence: index,
            token: t,
        });
    }
    Ok(())
}

pub fn is_valid_token(text: &str) -> bool {
    !text.is_empty() && !text.chars().any(char::is_whitespace)
}

/// An `I-X` tag at `index` whose predecessor is not `B-X` or `I-X`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IobViolation {
    pub index: usize,
    pub tag: Tag,
    pub previous: Option<Tag>,
}

pub fn validate_iob(tags: &[Tag]) -> Vec<IobViolation> {
    let mut violations = Vec::new();
    for (i, tag) in tags.iter().enumerate() {
        if let Tag::Inside(class) = tag {
            let previous = if i == 0 { None } else { Some(&tags[i - 1]) };
            let continues =
                matches!(previous, Some(Tag::Begin(c)) | Some(Tag::Inside(c)) if c == class);
            if !continues {
                violations.push(IobViolation {
                    index: i,
                    tag: tag.clone(),
                    previous: previous.cloned(),
                });
            }
        }
    }
    violations
}

pub fn is_valid_iob(tags: &[Tag]) -> bool {
    validate_iob(tags).is_empty()
}

/// Renders spans as IOB tags. Spans may be given in any order but must not overlap.
pub fn spans_to_iob(sentence_length: usize, spans: &[EntitySpan]) -> Result<Vec<Tag>, CorpusError> {
    let mut sorted: Vec<&EntitySpan> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    for s in &sorted {
        if s.start > s.end || s.end >= sentence_length {
            return Err(CorpusError::SpanOutOfRange {
                start: s.start,
                end: s.end,
                len: sentence_length,
            });
        }
    }
    for pair in sorted.windows(2) {
        if pair[1].start <= pair[0].end {
            return Err(CorpusError::OverlappingSpans {
                first: (pair[0].start, pair[0].end),
                second: (pair[1].start, pair[1].end),
            });
        }
    }
    let mut tags = vec![Tag::Outside; sentence_length];
    for s in sorted {
        tags[s.start] = Tag::Begin(s.label.clone());
        for tag in &mut tags[s.start + 1..=s.end] {
            *tag = Tag::Inside(s.label.clone());
        }
    }
    Ok(tags)
}

/// Extracts entity spans from a valid IOB sequence, sorted by start.
pub fn iob_to_spans(tags: &[Tag], sentence_index: usize) -> Result<Vec<EntitySpan>, CorpusError> {
    let violations = validate_iob(tags);
    if !violations.is_empty() {
        return Err(CorpusError::InvalidIob {
            sentence: sentence_index,
            violations,
        });
    }
    let mut spans = Vec::new();
    let mut open: Option<EntitySpan> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            Tag::Inside(_) => {
                if let Some(span) = open.as_mut() {
                    span.end = i;
                }
            }
            Tag::Begin(c) => {
                spans.extend(open.take());
                open = Some(EntitySpan::new(c, sentence_index, i, i));
            }
            Tag::Outside => spans.extend(open.take()),
        }
    }
    spans.extend(open);
    Ok(spans)
}

/// All entity spans of a corpus, in sentence order.
pub fn corpus_spans(corpus: &TaggedCorpus) -> Result<Vec<EntitySpan>, CorpusError> {
    let mut out = Vec::new();
    for (i, s) in corpus.sentences.iter().enumerate() {
        out.extend(iob_to_spans(&s.tags, i)?);
    }
    Ok(out)
}

/// Parses `token<TAB>tag` lines with blank lines between sentences.
///
/// IOB validity is not enforced here; see [`validate_iob`].
pub fn parse_conll(input: &str) -> Result<TaggedCorpus, CorpusError> {
    let mut sentences = Vec::new();
    let mut current = Sentence::new(Vec::<String>::new(), Vec::new());
    for (n, raw) in input.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::replace(
                    &mut current,
                    Sentence::new(Vec::<String>::new(), Vec::new()),
                ));
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(CorpusError::Parse {
                line: line_no,
                message: format!("expected 2 tab-separated fields, found {}", fields.len()),
            });
        }
        if !is_valid_token(fields[0]) {
            return Err(CorpusError::Parse {
                line: line_no,
                message: format!("token `{}` is empty or contains whitespace", fields[0]),
            });
        }
        let tag: Tag = fields[1]
            .parse()
            .map_err(|e: CorpusError| CorpusError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        current.tokens.push(fields[0].to_string());
        current.tags.push(tag);
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    Ok(TaggedCorpus::new(sentences))
}

pub fn write_conll(corpus: &TaggedCorpus) -> String {
    let mut out = String::new();
    for s in &corpus.sentences {
        for (token, tag) in s.tokens.iter().zip(&s.tags) {
            out.push_str(token);
            out.push('\t');
            out.push_str(&tag.to_string());
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// A report tokenized one sentence per line, with its concept annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct I2b2Document {
    pub sentences: Vec<Vec<String>>,
    pub spans: Vec<EntitySpan>,
    /// Concept lines whose quoted text disagrees with the referenced tokens.
    pub warnings: Vec<String>,
}

impl I2b2Document {
    /// Converts to a tagged corpus, dropping blank report lines.
    pub fn to_corpus(&self, label_set: &[String]) -> Result<TaggedCorpus, CorpusError> {
        let mut per_sentence: Vec<Vec<EntitySpan>> = vec![Vec::new(); self.sentences.len()];
        for span in &self.spans {
            per_sentence[span.sentence_index].push(span.clone());
        }
        let mut sentences = Vec::new();
        for (tokens, spans) in self.sentences.iter().zip(per_sentence) {
            if tokens.is_empty() {
                continue;
            }
            let tags = spans_to_iob(tokens.len(), &spans)?;
            sentences.push(Sentence::new(tokens.clone(), tags));
        }
        let mut labels = label_set.to_vec();
        for span in &self.spans {
            if !labels.contains(&span.label) {
                labels.push(span.label.clone());
            }
        }
        TaggedCorpus::with_label_set(sentences, labels)
    }
}

fn concept_regex() -> Regex {
    Regex::new(r#"^c="(.*)" (\d+):(\d+) (\d+):(\d+)\|\|t="([^"]+)"$"#).expect("static regex")
}

/// Parses an i2b2-2010 report and its `.con` concept lines.
///
/// Line numbers in concept lines are 1-based and token offsets 0-based, both
/// over whitespace tokenization of the report lines.
pub fn parse_i2b2(report_text: &str, concept_lines: &str) -> Result<I2b2Document, CorpusError> {
    let sentences: Vec<Vec<String>> = report_text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect();
    let re = concept_regex();
    let mut spans = Vec::new();
    let mut warnings = Vec::new();
    for (n, raw) in concept_lines.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let caps = re.captures(line).ok_or_else(|| CorpusError::Concept {
            line: line_no,
            message: format!("does not match c=\"...\" L:T L:T||t=\"...\": `{line}`"),
        })?;
        let num = |i: usize| -> Result<usize, CorpusError> {
            caps[i].parse().map_err(|_| CorpusError::Concept {
                line: line_no,
                message: format!("index `{}` out of range", &caps[i]),
            })
        };
        let (l1, t1, l2, t2) = (num(2)?, num(3)?, num(4)?, num(5)?);
        if l1 != l2 {
            return Err(CorpusError::Concept {
                line: line_no,
                message: format!("concept spans report lines {l1} and {l2}"),
            });
        }
        if l1 == 0 || l1 > sentences.len() {
            return Err(CorpusError::Concept {
                line: line_no,
                message: format!(
                    "report line {l1} out of range (report has {} lines)",
                    sentences.len()
                ),
            });
        }
        let tokens = &sentences[l1 - 1];
        if t1 > t2 || t2 >= tokens.len() {
            return Err(CorpusError::Concept {
                line: line_no,
                message: format!(
                    "token range {t1}..={t2} out of range for line {l1} with {} tokens",
                    tokens.len()
                ),
            });
        }
        let quoted: Vec<String> = caps[1].split_whitespace().map(str::to_lowercase).collect();
        let actual: Vec<String> = tokens[t1..=t2].iter().map(|t| t.to_lowercase()).collect();
        if quoted != actual {
            warnings.push(format!(
                "concept line {line_no}: text \"{}\" differs from tokens \"{}\"",
                &caps[1],
                tokens[t1..=t2].join(" ")
            ));
        }
        spans.push(EntitySpan::new(&caps[6], l1 - 1, t1, t2));
    }
    Ok(I2b2Document {
        sentences,
        spans,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// Percentage of all tokens carrying each tag.
    pub tag_distribution: BTreeMap<String, f64>,
    pub entity_counts: BTreeMap<String, usize>,
    /// Entity length in tokens → number of entities.
    pub length_histogram: BTreeMap<usize, usize>,
}

pub fn corpus_stats(corpus: &TaggedCorpus) -> Result<CorpusStats, CorpusError> {
    let mut tag_counts: BTreeMap<String, usize> = BTreeMap::new();
    for tag in corpus.sentences.iter().flat_map(|s| &s.tags) {
        *tag_counts.entry(tag.to_string()).or_default() += 1;
    }
    let total = corpus.num_tokens() as f64;
    let tag_distribution = tag_counts
        .into_iter()
        .map(|(tag, n)| (tag, 100.0 * n as f64 / total))
        .collect();
    let mut entity_counts = BTreeMap::new();
    let mut length_histogram = BTreeMap::new();
    for span in corpus_spans(corpus)? {
        *entity_counts.entry(span.label.clone()).or_default() += 1;
        *length_histogram.entry(span.len()).or_default() += 1;
    }
    Ok(CorpusStats {
        tag_distribution,
        entity_counts,
        length_histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(s: &str) -> Vec<Tag> {
        parse_tags(s).unwrap()
    }

    #[test]
    fn tag_parsing() {
        assert_eq!("O".parse::<Tag>().unwrap(), Tag::Outside);
        assert_eq!("B-problem".parse::<Tag>().unwrap(), Tag::begin("problem"));
        assert_eq!("I-test".parse::<Tag>().unwrap(), Tag::inside("test"));
        for bad in ["", "B-", "X-test", "b-test", "o", "B problem"] {
            assert!(bad.parse::<Tag>().is_err(), "{bad:?}");
        }
        assert_eq!(Tag::begin("problem").to_string(), "B-problem");
    }

    #[test]
    fn tag_set_layout() {
        let ts = TagSet::new(&default_label_set());
        assert_eq!(ts.len(), 7);
        assert_eq!(ts.index_of(&Tag::Outside), Some(0));
        assert_eq!(ts.index_of(&Tag::begin("treatment")), Some(3));
        assert_eq!(ts.index_of(&Tag::inside("test")), Some(6));
        assert_eq!(ts.index_of(&Tag::begin("drug")), None);
        assert_eq!(ts.tag(4), &Tag::inside("treatment"));
    }

    #[test]
    fn conll_empty_input() {
        assert_eq!(parse_conll("").unwrap().len(), 0);
        assert_eq!(write_conll(&TaggedCorpus::new(vec![])), "");
    }

    #[test]
    fn conll_single_sentence() {
        let text = "a\tB-problem\nbacterial\tI-problem\nsuperinfection\tI-problem\n\n";
        let c = parse_conll(text).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.sentences[0].tokens, ["a", "bacterial", "superinfection"]);
        assert_eq!(c.sentences[0].tags, tags("B-problem I-problem I-problem"));
        assert_eq!(write_conll(&c), text);
    }

    #[test]
    fn conll_two_sentences_trailing_blanks() {
        let text = "x\tO\n\ny\tB-test\nz\tI-test\n\n\n\n";
        let c = parse_conll(text).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.sentences[1].tags, tags("B-test I-test"));
        assert_eq!(c.label_set, ["test"]);
    }

    #[test]
    fn conll_missing_final_blank_line() {
        let c = parse_conll("x\tO\ny\tO").unwrap();
        assert_eq!(c.sentences[0].len(), 2);
    }

    #[test]
    fn conll_errors_carry_line_numbers() {
        let err = parse_conll("a\tO\nb O\n").unwrap_err();
        assert_eq!(
            err,
            CorpusError::Parse {
                line: 2,
                message: "expected 2 tab-separated fields, found 1".into()
            }
        );
        let err = parse_conll("a\tO\n\nb\tQ-test\n").unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 3, .. }));
        let err = parse_conll("a\tO\tO\n").unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 1, .. }));
    }

    #[test]
    fn conll_does_not_enforce_iob() {
        let c = parse_conll("a\tI-test\n").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn spans_to_iob_examples() {
        let s = [EntitySpan::new("problem", 0, 0, 2)];
        assert_eq!(
            spans_to_iob(3, &s).unwrap(),
            tags("B-problem I-problem I-problem")
        );
        assert_eq!(spans_to_iob(4, &[]).unwrap(), tags("O O O O"));
        let s = [
            EntitySpan::new("test", 0, 0, 0),
            EntitySpan::new("test", 0, 1, 2),
        ];
        assert_eq!(
            spans_to_iob(5, &s).unwrap(),
            tags("B-test B-test I-test O O")
        );
    }

    #[test]
    fn spans_to_iob_rejects_overlap_and_range() {
        let s = [
            EntitySpan::new("test", 0, 0, 2),
            EntitySpan::new("test", 0, 2, 3),
        ];
        assert!(matches!(
            spans_to_iob(5, &s),
            Err(CorpusError::OverlappingSpans { .. })
        ));
        let s = [EntitySpan::new("test", 0, 3, 5)];
        assert!(matches!(
            spans_to_iob(5, &s),
            Err(CorpusError::SpanOutOfRange { .. })
        ));
    }

    #[test]
    fn iob_to_spans_examples() {
        assert!(iob_to_spans(&tags("O O O"), 0).unwrap().is_empty());
        assert_eq!(
            iob_to_spans(&tags("B-problem I-problem I-problem"), 0).unwrap(),
            [EntitySpan::new("problem", 0, 0, 2)]
        );
        assert_eq!(
            iob_to_spans(&tags("B-test B-test I-test O O"), 4).unwrap(),
            [
                EntitySpan::new("test", 4, 0, 0),
                EntitySpan::new("test", 4, 1, 2)
            ]
        );
        assert!(iob_to_spans(&tags("O I-test"), 0).is_err());
    }

    #[test]
    fn validate_iob_examples() {
        let v = validate_iob(&tags("O I-test"));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].index, 1);
        let v = validate_iob(&tags("B-problem I-treatment"));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].index, 1);
        assert!(validate_iob(&tags("B-test I-test O B-test")).is_empty());
        assert_eq!(validate_iob(&tags("I-test")).len(), 1);
    }

    #[test]
    fn i2b2_concept_conversion() {
        let report = "line one\nsecond line here\na bacterial superinfection noted\n";
        let con = "c=\"bacterial superinfection\" 3:1 3:2||t=\"problem\"\n";
        let doc = parse_i2b2(report, con).unwrap();
        assert_eq!(doc.spans, [EntitySpan::new("problem", 2, 1, 2)]);
        assert!(doc.warnings.is_empty());
        let corpus = doc.to_corpus(&default_label_set()).unwrap();
        assert_eq!(corpus.sentences[2].tags, tags("O B-problem I-problem O"));
    }

    #[test]
    fn i2b2_empty_concepts_and_errors() {
        let report = "a bacterial superinfection noted\n";
        assert!(parse_i2b2(report, "").unwrap().spans.is_empty());
        let err = parse_i2b2(report, "c=\"noted again\" 1:3 1:4||t=\"problem\"").unwrap_err();
        assert!(matches!(err, CorpusError::Concept { line: 1, .. }));
        let err = parse_i2b2(report, "c=\"x\" 2:0 2:0||t=\"problem\"").unwrap_err();
        assert!(matches!(err, CorpusError::Concept { line: 1, .. }));
        let err = parse_i2b2(report, "garbage").unwrap_err();
        assert!(matches!(err, CorpusError::Concept { line: 1, .. }));
    }

    #[test]
    fn i2b2_text_mismatch_is_a_warning() {
        let report = "a Bacterial   superinfection noted\n";
        let ok = parse_i2b2(
            report,
            "c=\"bacterial superinfection\" 1:1 1:2||t=\"problem\"",
        )
        .unwrap();
        assert!(ok.warnings.is_empty());
        let warn = parse_i2b2(report, "c=\"viral infection\" 1:1 1:2||t=\"problem\"").unwrap();
        assert_eq!(warn.warnings.len(), 1);
        assert_eq!(warn.spans.len(), 1);
    }

    #[test]
    fn stats_examples() {
        let empty = corpus_stats(&TaggedCorpus::new(vec![])).unwrap();
        assert!(empty.tag_distribution.is_empty() && empty.entity_counts.is_empty());

        let c =
            parse_conll("a\tB-problem\nbacterial\tI-problem\nsuperinfection\tI-problem\n").unwrap();
        let st = corpus_stats(&c).unwrap();
        assert!((st.tag_distribution["B-problem"] - 100.0 / 3.0).abs() < 1e-12);
        assert!((st.tag_distribution["I-problem"] - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(st.entity_counts["problem"], 1);
        assert_eq!(st.length_histogram[&3], 1);
    }
}
