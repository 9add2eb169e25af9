//! Enhanced labeling: moves the `B` tag of a multi-token entity past leading
//! stopwords and frequent words, so that the entity starts at its first
//! content word.
//!
//! `[a, bacterial, superinfection]` tagged `B I I` becomes `O B I`. The shift
//! repeats while the new leading token is still flagged, so
//! `[Patient, 's, neurologic, exam]` becomes `O O B I`. Single-token entities
//! and whitelisted abbreviations are never touched.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{iob_to_spans, validate_iob, CorpusError, Sentence, Tag, TaggedCorpus};

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");
const DEFAULT_FREQUENT_WORDS: &str = include_str!("../data/frequent_words.txt");
const DEFAULT_ABBREVIATIONS: &str = include_str!("../data/abbreviations.txt");

#[derive(Debug, Error)]
pub enum RelabelError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("sentence {sentence}: {source}")]
    Sentence {
        sentence: usize,
        #[source]
        source: CorpusError,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("relabel config {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Word lists driving the relabeling rule.
///
/// Stopwords and frequent words are stored lowercase; the abbreviation
/// whitelist is case-sensitive. Construction removes from the first two sets
/// any entry that matches a whitelist entry case-insensitively.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelabelConfig {
    stopwords: HashSet<String>,
    frequent_words: HashSet<String>,
    abbreviation_whitelist: HashSet<String>,
}

impl RelabelConfig {
    pub fn new<I, J, K>(stopwords: I, frequent_words: J, abbreviation_whitelist: K) -> Self
    where
        I: IntoIterator,
        I::Item: AsRef<str>,
        J: IntoIterator,
        J::Item: AsRef<str>,
        K: IntoIterator,
        K::Item: AsRef<str>,
    {
        let abbreviation_whitelist: HashSet<String> = abbreviation_whitelist
            .into_iter()
            .map(|w| w.as_ref().trim().to_string())
            .filter(|w| !w.is_empty())
            .collect();
        let blocked: HashSet<String> = abbreviation_whitelist
            .iter()
            .map(|w| w.to_lowercase())
            .collect();
        let normalize = |words: Vec<String>| -> HashSet<String> {
            words
                .into_iter()
                .map(|w| w.trim().to_lowercase())
                .filter(|w| !w.is_empty() && !blocked.contains(w))
                .collect()
        };
        RelabelConfig {
            stopwords: normalize(
                stopwords
                    .into_iter()
                    .map(|w| w.as_ref().to_string())
                    .collect(),
            ),
            frequent_words: normalize(
                frequent_words
                    .into_iter()
                    .map(|w| w.as_ref().to_string())
                    .collect(),
            ),
            abbreviation_whitelist,
        }
    }

    /// An empty configuration: nothing is ever relabeled.
    pub fn empty() -> Self {
        RelabelConfig::new(
            Vec::<String>::new(),
            Vec::<String>::new(),
            Vec::<String>::new(),
        )
    }

    pub fn stopwords(&self) -> &HashSet<String> {
        &self.stopwords
    }

    pub fn frequent_words(&self) -> &HashSet<String> {
        &self.frequent_words
    }

    pub fn abbreviation_whitelist(&self) -> &HashSet<String> {
        &self.abbreviation_whitelist
    }

    /// Whether a leading entity token should be moved out of its entity.
    pub fn is_flagged(&self, token: &str) -> bool {
        if self.abbreviation_whitelist.contains(token) {
            return false;
        }
        let lower = token.to_lowercase();
        self.stopwords.contains(&lower) || self.frequent_words.contains(&lower)
    }

    /// Loads a JSON file of the form
    /// `{"stopwords": "...", "frequent_words": "...", "abbreviation_whitelist": "..."}`.
    ///
    /// Each value is a word-list path, relative paths resolved against the JSON
    /// file's directory. Omitted keys fall back to the built-in lists.
    pub fn from_json_file(path: &Path) -> Result<Self, RelabelError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Files {
            stopwords: Option<PathBuf>,
            frequent_words: Option<PathBuf>,
            abbreviation_whitelist: Option<PathBuf>,
        }
        let text = read(path)?;
        let files: Files = serde_json::from_str(&text).map_err(|source| RelabelError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let load = |file: Option<PathBuf>, default: &str| -> Result<Vec<String>, RelabelError> {
            match file {
                Some(p) => Ok(parse_word_list(&read(&base.join(p))?)),
                None => Ok(parse_word_list(default)),
            }
        };
        Ok(RelabelConfig::new(
            load(files.stopwords, DEFAULT_STOPWORDS)?,
            load(files.frequent_words, DEFAULT_FREQUENT_WORDS)?,
            load(files.abbreviation_whitelist, DEFAULT_ABBREVIATIONS)?,
        ))
    }
}

impl Default for RelabelConfig {
    fn default() -> Self {
        RelabelConfig::new(
            parse_word_list(DEFAULT_STOPWORDS),
            parse_word_list(DEFAULT_FREQUENT_WORDS),
            parse_word_list(DEFAULT_ABBREVIATIONS),
        )
    }
}

fn read(path: &Path) -> Result<String, RelabelError> {
    fs::read_to_string(path).map_err(|source| RelabelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One entry per line; `#` starts a comment; blank lines are skipped.
pub fn parse_word_list(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Token-level tag changes for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassChanges {
    /// Entities whose start moved.
    pub entities_shifted: usize,
    pub b_to_o: usize,
    pub i_to_o: usize,
    pub i_to_b: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelabelSummary {
    pub per_class: BTreeMap<String, ClassChanges>,
}

impl RelabelSummary {
    pub fn total(&self) -> ClassChanges {
        self.per_class
            .values()
            .fold(ClassChanges::default(), |acc, c| ClassChanges {
                entities_shifted: acc.entities_shifted + c.entities_shifted,
                b_to_o: acc.b_to_o + c.b_to_o,
                i_to_o: acc.i_to_o + c.i_to_o,
                i_to_b: acc.i_to_b + c.i_to_b,
            })
    }
}

// Returns the new tags and, per shifted entity, its class and the number of
// leading tokens removed.
fn shift_entities(
    tokens: &[String],
    tags: &[Tag],
    config: &RelabelConfig,
) -> Result<(Vec<Tag>, Vec<(String, usize)>), CorpusError> {
    if tokens.len() != tags.len() {
        return Err(CorpusError::LengthMismatch {
            sentence: 0,
            tokens: tokens.len(),
            tags: tags.len(),
        });
    }
    let violations = validate_iob(tags);
    if !violations.is_empty() {
        return Err(CorpusError::InvalidIob {
            sentence: 0,
            violations,
        });
    }
    let mut out = tags.to_vec();
    let mut shifted = Vec::new();
    for span in iob_to_spans(tags, 0)? {
        let mut start = span.start;
        while start < span.end && config.is_flagged(&tokens[start]) {
            out[start] = Tag::Outside;
            out[start + 1] = Tag::Begin(span.label.clone());
            start += 1;
        }
        if start > span.start {
            shifted.push((span.label, start - span.start));
        }
    }
    Ok((out, shifted))
}

/// Applies the relabeling rule to one sentence; returns the new tags and the
/// number of tokens moved out of entities.
pub fn relabel_sentence(
    tokens: &[String],
    tags: &[Tag],
    config: &RelabelConfig,
) -> Result<(Vec<Tag>, usize), CorpusError> {
    let (out, shifted) = shift_entities(tokens, tags, config)?;
    Ok((out, shifted.iter().map(|(_, n)| n).sum()))
}

pub fn relabel_corpus(
    corpus: &TaggedCorpus,
    config: &RelabelConfig,
) -> Result<(TaggedCorpus, RelabelSummary), RelabelError> {
    let mut summary = RelabelSummary::default();
    for class in &corpus.label_set {
        summary
            .per_class
            .insert(class.clone(), ClassChanges::default());
    }
    let mut sentences = Vec::with_capacity(corpus.len());
    for (i, s) in corpus.sentences.iter().enumerate() {
        let (tags, shifted) = shift_entities(&s.tokens, &s.tags, config).map_err(|source| {
            RelabelError::Sentence {
                sentence: i,
                source,
            }
        })?;
        for (class, removed) in shifted {
            let c = summary.per_class.entry(class).or_default();
            c.entities_shifted += 1;
            c.b_to_o += 1;
            c.i_to_o += removed - 1;
            c.i_to_b += 1;
        }
        sentences.push(Sentence {
            tokens: s.tokens.clone(),
            tags,
        });
    }
    Ok((
        TaggedCorpus {
            sentences,
            label_set: corpus.label_set.clone(),
        },
        summary,
    ))
}
