//! Per-token input features: character index vectors for the character CNN,
//! the 8-way writing-format one-hot, and word vectors from a pluggable source.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TaggedCorpus;

pub const CHAR_VOCAB_SIZE: usize = 97;
pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const FORMAT_DIM: usize = 8;
pub const DEFAULT_MAX_WORD_LEN: usize = 30;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("embedding file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(
        "embedding file: sentence {sentence} declares {declared} tokens but has {found} vectors"
    )]
    DeclaredCount {
        sentence: usize,
        declared: usize,
        found: usize,
    },
    #[error("no word vectors for sentence {0}")]
    MissingSentence(usize),
    #[error("sentence {sentence}: embedding file has {found} tokens but the corpus sentence has {expected}")]
    SentenceLength {
        sentence: usize,
        expected: usize,
        found: usize,
    },
    #[error("no word vector for sentence {sentence}, token {token}")]
    MissingVector { sentence: usize, token: usize },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Fixed 97-symbol character table.
///
/// Layout: 0 PAD, 1 UNK, 2–27 `a`–`z`, 28–53 `A`–`Z`, 54–63 `0`–`9`, 64–95 the
/// printable ASCII punctuation characters in code-point order, 96 space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    table: HashMap<char, usize>,
    symbols: Vec<Option<char>>,
}

/// Shared instance of the fixed table.
pub fn char_vocab() -> &'static CharVocab {
    static VOCAB: OnceLock<CharVocab> = OnceLock::new();
    VOCAB.get_or_init(build_char_vocab)
}

pub fn build_char_vocab() -> CharVocab {
    let mut symbols: Vec<Option<char>> = vec![None, None];
    symbols.extend(('a'..='z').map(Some));
    symbols.extend(('A'..='Z').map(Some));
    symbols.extend(('0'..='9').map(Some));
    symbols.extend(
        (0x21u8..=0x7e)
            .map(char::from)
            .filter(|c| c.is_ascii_punctuation())
            .map(Some),
    );
    symbols.push(Some(' '));
    debug_assert_eq!(symbols.len(), CHAR_VOCAB_SIZE);
    let table = symbols
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|c| (c, i)))
        .collect();
    CharVocab { table, symbols }
}

impl CharVocab {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn index(&self, c: char) -> usize {
        self.table.get(&c).copied().unwrap_or(UNK)
    }

    /// The character at `index`, or `None` for PAD and UNK.
    pub fn symbol(&self, index: usize) -> Option<char> {
        self.symbols.get(index).copied().flatten()
    }
}

impl Default for CharVocab {
    fn default() -> Self {
        build_char_vocab()
    }
}

/// Character indices of one word, zero-padded to a fixed length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharMatrix {
    pub indices: Vec<usize>,
}

pub fn encode_chars(word: &str, max_word_len: usize, vocab: &CharVocab) -> CharMatrix {
    let mut indices: Vec<usize> = word
        .chars()
        .take(max_word_len)
        .map(|c| vocab.index(c))
        .collect();
    indices.resize(max_word_len, PAD);
    CharMatrix { indices }
}

/// Length in characters of the longest token in the corpus.
pub fn longest_word_len(corpus: &TaggedCorpus) -> usize {
    corpus
        .sentences
        .iter()
        .flat_map(|s| &s.tokens)
        .map(|t| t.chars().count())
        .max()
        .unwrap_or(0)
}

/// Orthographic shape classes, indexed as in the one-hot vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(usize)]
pub enum WritingFormat {
    AllUpper = 0,
    InitCap = 1,
    MixedCase = 2,
    AllDigits = 3,
    DigitsPunct = 4,
    Alphanumeric = 5,
    AllLower = 6,
    Other = 7,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FormatVector {
    pub category: WritingFormat,
}

impl FormatVector {
    pub fn index(&self) -> usize {
        self.category as usize
    }

    pub fn onehot(&self) -> [f64; FORMAT_DIM] {
        let mut v = [0.0; FORMAT_DIM];
        v[self.index()] = 1.0;
        v
    }
}

/// Classifies a word's writing format.
///
/// Rules are tried in the order digits, digits+punctuation, alphanumeric,
/// all-upper, init-cap, all-lower, mixed-case; anything else (including
/// letters mixed with punctuation only, or whitespace) is `Other`.
pub fn writing_format(word: &str) -> FormatVector {
    let mut letters = 0usize;
    let mut digits = 0usize;
    let mut punct = 0usize;
    let mut other = 0usize;
    for c in word.chars() {
        if c.is_alphabetic() {
            letters += 1;
        } else if c.is_numeric() {
            digits += 1;
        } else if c.is_whitespace() || c.is_control() {
            other += 1;
        } else {
            punct += 1;
        }
    }
    let all_letters = letters > 0 && digits == 0 && punct == 0 && other == 0;
    let category = if other > 0 || word.is_empty() {
        WritingFormat::Other
    } else if digits > 0 && letters == 0 && punct == 0 {
        WritingFormat::AllDigits
    } else if digits > 0 && letters == 0 {
        WritingFormat::DigitsPunct
    } else if digits > 0 && letters > 0 {
        WritingFormat::Alphanumeric
    } else if all_letters && word.chars().all(char::is_uppercase) {
        WritingFormat::AllUpper
    } else if all_letters && letters >= 2 && is_init_cap(word) {
        WritingFormat::InitCap
    } else if all_letters && word.chars().all(char::is_lowercase) {
        WritingFormat::AllLower
    } else if all_letters {
        WritingFormat::MixedCase
    } else {
        WritingFormat::Other
    };
    FormatVector { category }
}

fn is_init_cap(word: &str) -> bool {
    let mut chars = word.chars();
    chars.next().is_some_and(char::is_uppercase) && chars.all(char::is_lowercase)
}

/// Word vectors read from an embedding file, keyed by corpus sentence index.
///
/// ```text
/// #DIM <d>
/// #SENT <sentence_id> <n_tokens>
/// <v1> <v2> ... <vd>
/// ```
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub sentences: BTreeMap<usize, Vec<Vec<f64>>>,
}

impl EmbeddingTable {
    pub fn parse(text: &str) -> Result<Self, FeatureError> {
        let fail = |line: usize, message: String| FeatureError::Format { line, message };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
        let dim = match lines.next() {
            Some((n, header)) => {
                let dim = header
                    .strip_prefix("#DIM ")
                    .and_then(|d| d.parse::<usize>().ok())
                    .ok_or_else(|| fail(n, format!("expected `#DIM <d>`, found `{header}`")))?;
                if dim == 0 {
                    return Err(fail(n, "dimension must be positive".into()));
                }
                dim
            }
            None => return Err(fail(1, "missing `#DIM` header".into())),
        };
        let mut table = EmbeddingTable {
            dim,
            sentences: BTreeMap::new(),
        };
        let mut current: Option<(usize, usize, Vec<Vec<f64>>)> = None;
        let finish = |table: &mut EmbeddingTable, cur: Option<(usize, usize, Vec<Vec<f64>>)>| {
            if let Some((id, declared, vectors)) = cur {
                if vectors.len() != declared {
                    return Err(FeatureError::DeclaredCount {
                        sentence: id,
                        declared,
                        found: vectors.len(),
                    });
                }
                table.sentences.insert(id, vectors);
            }
            Ok(())
        };
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#SENT ") {
                finish(&mut table, current.take())?;
                let fields: Vec<&str> = rest.split(' ').collect();
                let parsed: Option<Vec<usize>> = fields.iter().map(|f| f.parse().ok()).collect();
                let (id, count) = match parsed.as_deref() {
                    Some(&[id, count]) => (id, count),
                    _ => {
                        return Err(fail(
                            n,
                            format!("expected `#SENT <id> <n_tokens>`, found `{line}`"),
                        ))
                    }
                };
                if table.sentences.contains_key(&id) {
                    return Err(fail(n, format!("duplicate sentence id {id}")));
                }
                current = Some((id, count, Vec::with_capacity(count)));
                continue;
            }
            let Some((_, _, vectors)) = current.as_mut() else {
                return Err(fail(n, "vector line before any `#SENT` header".into()));
            };
            let values: Result<Vec<f64>, _> = line.split(' ').map(str::parse::<f64>).collect();
            let values = values.map_err(|e| fail(n, format!("bad number: {e}")))?;
            if values.len() != dim {
                return Err(fail(
                    n,
                    format!("expected {dim} values, found {}", values.len()),
                ));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(fail(n, "non-finite value".into()));
            }
            vectors.push(values);
        }
        finish(&mut table, current)?;
        Ok(table)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("#DIM {}\n", self.dim);
        for (id, vectors) in &self.sentences {
            let _ = writeln!(out, "#SENT {id} {}", vectors.len());
            for v in vectors {
                let line: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn get(&self, sentence: usize, token: usize) -> Result<&[f64], FeatureError> {
        self.sentences
            .get(&sentence)
            .and_then(|s| s.get(token))
            .map(Vec::as_slice)
            .ok_or(FeatureError::MissingVector { sentence, token })
    }
}

pub fn load_embedding_file(path: &Path) -> Result<WordVectorProvider, FeatureError> {
    let text = fs::read_to_string(path).map_err(|source| FeatureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(WordVectorProvider::File(EmbeddingTable::parse(&text)?))
}

/// Trainable word table: row 0 is the unknown-word row, row `i + 1` is `words[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordLookup {
    pub dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl WordLookup {
    pub fn new(dim: usize, words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i + 1))
            .collect();
        WordLookup { dim, words, index }
    }

    /// Vocabulary of every distinct token in the corpus, in order of first use.
    pub fn from_corpus(dim: usize, corpus: &TaggedCorpus) -> Self {
        let mut seen = std::collections::HashSet::new();
        let words = corpus
            .sentences
            .iter()
            .flat_map(|s| &s.tokens)
            .filter(|t| seen.insert(t.as_str()))
            .cloned()
            .collect();
        WordLookup::new(dim, words)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn rows(&self) -> usize {
        self.words.len() + 1
    }

    pub fn row(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(0)
    }
}

/// Source of the word-level input vector for each token.
#[derive(Debug, Clone, PartialEq)]
pub enum WordVectorProvider {
    File(EmbeddingTable),
    Hash { dim: usize, seed: u64 },
    Lookup(WordLookup),
}

impl WordVectorProvider {
    pub fn dim(&self) -> usize {
        match self {
            WordVectorProvider::File(t) => t.dim,
            WordVectorProvider::Hash { dim, .. } => *dim,
            WordVectorProvider::Lookup(l) => l.dim,
        }
    }

    pub fn lookup(
        &self,
        sentence: usize,
        token: usize,
        word: &str,
    ) -> Result<WordFeature, FeatureError> {
        Ok(match self {
            WordVectorProvider::File(t) => WordFeature::Dense(t.get(sentence, token)?.to_vec()),
            WordVectorProvider::Hash { dim, seed } => {
                WordFeature::Dense(hash_embedding(word, *dim, *seed))
            }
            WordVectorProvider::Lookup(l) => WordFeature::Row(l.row(word)),
        })
    }
}

/// The word part of a token's input: a fixed vector, or a row of the model's
/// trainable word table.
#[derive(Debug, Clone, PartialEq)]
pub enum WordFeature {
    Dense(Vec<f64>),
    Row(usize),
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic pseudo-random word vector with components in `[-1, 1]`.
///
/// Stands in for contextual embeddings when no embedding file is available.
pub fn hash_embedding(word: &str, dim: usize, seed: u64) -> Vec<f64> {
    // FNV-1a over the UTF-8 bytes.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in word.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut state = h ^ seed.rotate_left(17) ^ (dim as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    (0..dim)
        .map(|_| {
            let bits = splitmix64(&mut state) >> 11;
            (bits as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenFeatures {
    pub word: WordFeature,
    pub chars: CharMatrix,
    pub format: FormatVector,
}

/// Builds aligned per-token features for sentence `sentence_id` of a corpus.
pub fn assemble_features(
    sentence_id: usize,
    tokens: &[String],
    provider: &WordVectorProvider,
    vocab: &CharVocab,
    max_word_len: usize,
) -> Result<Vec<TokenFeatures>, FeatureError> {
    if let WordVectorProvider::File(table) = provider {
        if !tokens.is_empty() {
            let found = table
                .sentences
                .get(&sentence_id)
                .ok_or(FeatureError::MissingSentence(sentence_id))?
                .len();
            if found != tokens.len() {
                return Err(FeatureError::SentenceLength {
                    sentence: sentence_id,
                    expected: tokens.len(),
                    found,
                });
            }
        }
    }
    tokens
        .iter()
        .enumerate()
        .map(|(i, word)| {
            Ok(TokenFeatures {
                word: provider.lookup(sentence_id, i, word)?,
                chars: encode_chars(word, max_word_len, vocab),
                format: writing_format(word),
            })
        })
        .collect()
}

/// Features for every sentence of a corpus; sentence ids are corpus positions.
pub fn corpus_features(
    corpus: &TaggedCorpus,
    provider: &WordVectorProvider,
    vocab: &CharVocab,
    max_word_len: usize,
) -> Result<Vec<Vec<TokenFeatures>>, FeatureError> {
    corpus
        .sentences
        .iter()
        .enumerate()
        .map(|(i, s)| assemble_features(i, &s.tokens, provider, vocab, max_word_len))
        .collect()
}

/// Serializable description of where word vectors come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WordSource {
    /// Vectors supplied per corpus by an embedding file.
    File,
    Hash {
        seed: u64,
    },
    Lookup {
        vocab: Vec<String>,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_layout() {
        let v = build_char_vocab();
        assert_eq!(v.len(), 97);
        assert_eq!(v.index('a'), 2);
        assert_eq!(v.index('z'), 27);
        assert_eq!(v.index('A'), 28);
        assert_eq!(v.index('0'), 54);
        assert_eq!(v.index('9'), 63);
        assert_eq!(v.index('!'), 64);
        assert_eq!(v.index('~'), 95);
        assert_eq!(v.index(' '), 96);
        assert_eq!(v.index('é'), UNK);
        assert_eq!(v.symbol(PAD), None);
        assert_eq!(v.symbol(96), Some(' '));
        for i in 2..97 {
            assert_eq!(v.index(v.symbol(i).unwrap()), i);
        }
    }

    #[test]
    fn char_encoding() {
        let v = build_char_vocab();
        assert_eq!(encode_chars("ab", 4, &v).indices, [2, 3, 0, 0]);
        assert_eq!(encode_chars("A1", 4, &v).indices, [28, 55, 0, 0]);
        assert_eq!(encode_chars("é", 4, &v).indices, [1, 0, 0, 0]);
        assert_eq!(encode_chars("abcdef", 3, &v).indices, [2, 3, 4]);
    }

    #[test]
    fn format_examples() {
        assert_eq!(
            writing_format("a").onehot(),
            [0., 0., 0., 0., 0., 0., 1., 0.]
        );
        assert_eq!(
            writing_format("c5-6").onehot(),
            [0., 0., 0., 0., 0., 1., 0., 0.]
        );
        assert_eq!(writing_format("herniation").index(), 6);
        assert_eq!(writing_format("disk").index(), 6);
        assert_eq!(writing_format("120").index(), 3);
        assert_eq!(writing_format("12.5").index(), 4);
        assert_eq!(writing_format("CBC").index(), 0);
        assert_eq!(writing_format("A").index(), 0);
        assert_eq!(writing_format("Patient").index(), 1);
        assert_eq!(writing_format("mRNA").index(), 2);
        assert_eq!(writing_format("'s").index(), 7);
        assert_eq!(writing_format(".").index(), 7);
    }

    #[test]
    fn embedding_file_lookup() {
        let t = EmbeddingTable::parse("#DIM 4\n#SENT 0 2\n1 2 3 4\n5 6 7 8.5\n").unwrap();
        let p = WordVectorProvider::File(t);
        assert_eq!(p.dim(), 4);
        assert_eq!(
            p.lookup(0, 1, "x").unwrap(),
            WordFeature::Dense(vec![5., 6., 7., 8.5])
        );
    }

    #[test]
    fn embedding_file_empty_body() {
        let t = EmbeddingTable::parse("#DIM 3\n").unwrap();
        assert!(t.sentences.is_empty());
        assert!(matches!(
            t.get(0, 0),
            Err(FeatureError::MissingVector { .. })
        ));
    }

    #[test]
    fn embedding_file_errors() {
        let short = EmbeddingTable::parse("#DIM 4\n#SENT 0 1\n1 2 3\n");
        assert!(matches!(short, Err(FeatureError::Format { line: 3, .. })));
        assert!(matches!(
            EmbeddingTable::parse(""),
            Err(FeatureError::Format { .. })
        ));
        assert!(matches!(
            EmbeddingTable::parse("DIM 4\n"),
            Err(FeatureError::Format { line: 1, .. })
        ));
        assert!(matches!(
            EmbeddingTable::parse("#DIM x\n"),
            Err(FeatureError::Format { .. })
        ));
        let count = EmbeddingTable::parse("#DIM 1\n#SENT 3 2\n1\n#SENT 4 1\n2\n");
        assert!(matches!(
            count,
            Err(FeatureError::DeclaredCount {
                sentence: 3,
                declared: 2,
                found: 1
            })
        ));
        let orphan = EmbeddingTable::parse("#DIM 1\n1\n");
        assert!(matches!(orphan, Err(FeatureError::Format { line: 2, .. })));
    }

    #[test]
    fn embedding_text_roundtrip() {
        let mut t = EmbeddingTable {
            dim: 2,
            ..Default::default()
        };
        t.sentences
            .insert(0, vec![vec![0.1, -2.5e-7], vec![3.0, 1.0 / 3.0]]);
        t.sentences.insert(2, vec![vec![1e300, -0.0]]);
        assert_eq!(EmbeddingTable::parse(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn hash_embedding_contract() {
        assert_eq!(hash_embedding("x", 8, 7), hash_embedding("x", 8, 7));
        assert_ne!(hash_embedding("x", 8, 7), hash_embedding("y", 8, 7));
        assert_ne!(hash_embedding("x", 8, 7), hash_embedding("x", 8, 8));
        for dim in [1, 64, 768] {
            let v = hash_embedding("word", dim, 1);
            assert_eq!(v.len(), dim);
            assert!(v.iter().all(|x| (-1.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn hash_embedding_collisions() {
        let words: Vec<String> = (0..10_000).map(|i| format!("w{i}")).collect();
        let mut seen = std::collections::HashSet::new();
        for w in &words {
            let v = hash_embedding(w, 8, 7);
            let key: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
            assert!(seen.insert(key), "collision for {w}");
        }
    }

    #[test]
    fn assemble_shapes() {
        let tokens: Vec<String> = ["a", "bacterial", "superinfection"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let provider = WordVectorProvider::Hash { dim: 16, seed: 3 };
        let vocab = build_char_vocab();
        let feats = assemble_features(0, &tokens, &provider, &vocab, 30).unwrap();
        assert_eq!(feats.len(), 3);
        for f in &feats {
            match &f.word {
                WordFeature::Dense(v) => assert_eq!(v.len(), 16),
                WordFeature::Row(_) => panic!("expected a dense vector"),
            }
            assert_eq!(f.chars.indices.len(), 30);
            assert_eq!(f.format.onehot().len(), 8);
        }
        let cats: Vec<usize> = feats.iter().map(|f| f.format.index()).collect();
        assert_eq!(cats, [6, 6, 6]);
        assert!(assemble_features(0, &[], &provider, &vocab, 30)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn assemble_reports_missing_vectors() {
        let tokens: Vec<String> = vec!["a".into(), "b".into()];
        let vocab = build_char_vocab();
        let table = EmbeddingTable::parse("#DIM 1\n#SENT 0 1\n0.5\n").unwrap();
        let p = WordVectorProvider::File(table);
        assert!(matches!(
            assemble_features(0, &tokens, &p, &vocab, 8),
            Err(FeatureError::SentenceLength { sentence: 0, .. })
        ));
        assert!(matches!(
            assemble_features(1, &tokens, &p, &vocab, 8),
            Err(FeatureError::MissingSentence(1))
        ));
    }

    #[test]
    fn lookup_rows() {
        let l = WordLookup::new(4, vec!["a".into(), "b".into()]);
        assert_eq!(l.rows(), 3);
        assert_eq!(l.row("b"), 2);
        assert_eq!(l.row("zzz"), 0);
    }
}
