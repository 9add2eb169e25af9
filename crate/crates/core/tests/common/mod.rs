//! Helpers shared by the integration suites: random instances, an exhaustive
//! CRF enumerator written independently of the library's dynamic programs,
//! and a finite-difference comparison wrapper.

#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;

use seqlab::corpus::TagSet;
use seqlab::crf::{CrfParams, EmissionMatrix, TransitionMask};
use seqlab::features::WordSource;
use seqlab::neural::{finite_diff_grad, max_relative_error, CharEncoderConfig};
use seqlab::tagger::ModelConfig;

pub const FD_EPS: f64 = 1e-6;

pub fn normal<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn uniform<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// `Σ w_i · y_i`, a scalar readout with a non-trivial gradient.
pub fn readout(y: &[f64], w: &[f64]) -> f64 {
    assert_eq!(y.len(), w.len());
    y.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Max relative error between `analytic` and central differences of `loss` at `at`.
pub fn grad_error(loss: impl FnMut(&[f64]) -> f64, at: &[f64], analytic: &[f64]) -> f64 {
    max_relative_error(analytic, &finite_diff_grad(loss, at, FD_EPS))
}

#[derive(Debug, Clone, Copy)]
pub enum MaskKind {
    AllLegal,
    Iob,
    Random,
}

/// A mask over `k` tags. `Iob` needs odd `k` and falls back to `AllLegal`
/// otherwise. Random masks always leave tag 0 start-legal and self-looping so
/// at least one path exists.
pub fn make_mask<R: Rng>(rng: &mut R, k: usize, kind: MaskKind) -> TransitionMask {
    match kind {
        MaskKind::Iob if k % 2 == 1 => {
            let classes: Vec<String> = (0..k / 2).map(|i| format!("c{i}")).collect();
            TransitionMask::iob(&TagSet::new(&classes))
        }
        MaskKind::Random => {
            let mut start: Vec<bool> = (0..k).map(|_| rng.random_bool(0.7)).collect();
            let mut trans: Vec<bool> = (0..k * k).map(|_| rng.random_bool(0.7)).collect();
            start[0] = true;
            trans[0] = true;
            TransitionMask::new(start, trans)
        }
        _ => TransitionMask::all_legal(k),
    }
}

pub fn random_crf<R: Rng>(
    rng: &mut R,
    t: usize,
    k: usize,
    kind: MaskKind,
) -> (EmissionMatrix, CrfParams) {
    let mask = make_mask(rng, k, kind);
    let emissions = EmissionMatrix::new(k, normal(rng, t * k)).unwrap();
    let params = CrfParams {
        transitions: normal(rng, k * k),
        start: normal(rng, k),
        stop: normal(rng, k),
        mask,
    };
    (emissions, params)
}

/// Exhaustive enumeration of all `K^T` tag sequences.
pub mod brute {
    use super::*;

    /// Score of `path`, or `None` if the mask forbids it. Terms are summed
    /// left to right: start, emission, then transition plus emission per step,
    /// then stop.
    pub fn score(e: &EmissionMatrix, p: &CrfParams, path: &[usize]) -> Option<f64> {
        let k = p.start.len();
        if !p.mask.start_legal(path[0]) {
            return None;
        }
        let mut s = p.start[path[0]] + e.get(0, path[0]);
        for t in 1..path.len() {
            if !p.mask.legal(path[t - 1], path[t]) {
                return None;
            }
            s = s + p.transitions[path[t - 1] * k + path[t]] + e.get(t, path[t]);
        }
        Some(s + p.stop[path[path.len() - 1]])
    }

    pub fn all_paths(t: usize, k: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        for _ in 0..t {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (0..k).map(move |y| {
                        let mut p = prefix.clone();
                        p.push(y);
                        p
                    })
                })
                .collect();
        }
        out
    }

    pub fn legal_paths(e: &EmissionMatrix, p: &CrfParams) -> Vec<(Vec<usize>, f64)> {
        all_paths(e.len(), p.start.len())
            .into_iter()
            .filter_map(|path| score(e, p, &path).map(|s| (path, s)))
            .collect()
    }

    pub fn log_partition(e: &EmissionMatrix, p: &CrfParams) -> f64 {
        let scores: Vec<f64> = legal_paths(e, p).into_iter().map(|(_, s)| s).collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
    }

    /// Maximum score; among tied paths, the one whose last tag is lowest, then
    /// whose second-to-last tag is lowest, and so on.
    pub fn best(e: &EmissionMatrix, p: &CrfParams) -> (Vec<usize>, f64) {
        let paths = legal_paths(e, p);
        let top = paths
            .iter()
            .map(|(_, s)| *s)
            .fold(f64::NEG_INFINITY, f64::max);
        paths
            .into_iter()
            .filter(|(_, s)| *s == top)
            .min_by(|(a, _), (b, _)| a.iter().rev().cmp(b.iter().rev()))
            .unwrap()
    }

    pub fn marginals(e: &EmissionMatrix, p: &CrfParams) -> Vec<Vec<f64>> {
        let z = log_partition(e, p);
        let mut m = vec![vec![0.0; p.start.len()]; e.len()];
        for (path, s) in legal_paths(e, p) {
            for (t, &y) in path.iter().enumerate() {
                m[t][y] += (s - z).exp();
            }
        }
        m
    }
}

/// Word 6, char embedding 3, 2 filters per kernel, char output 4, units 3/2.
pub fn tiny_model_config(lookup: bool) -> ModelConfig {
    ModelConfig {
        word_dim: 6,
        word_source: if lookup {
            WordSource::Lookup {
                vocab: ["chest", "pain", "CBC", "aspirin"]
                    .map(String::from)
                    .to_vec(),
            }
        } else {
            WordSource::Hash { seed: 3 }
        },
        char_encoder: CharEncoderConfig {
            char_dim: 3,
            filters: 2,
            kernels: vec![3, 5, 7],
            output_dim: 4,
        },
        max_word_len: 8,
        bilstm1_units: 3,
        bilstm2_units: 2,
        ..ModelConfig::default()
    }
}

/// Hash embeddings of width 64 and 32/16 BiLSTM units.
pub fn synthetic_config(max_word_len: usize) -> ModelConfig {
    ModelConfig {
        word_dim: 64,
        word_source: WordSource::Hash { seed: 1 },
        max_word_len,
        bilstm1_units: 32,
        bilstm2_units: 16,
        ..ModelConfig::default()
    }
}

pub const TOKEN_POOL: &[&str] = &[
    "a",
    "the",
    "of",
    "'s",
    "Patient",
    "patients",
    "US",
    "NO",
    "no",
    "bacterial",
    "superinfection",
    "neurologic",
    "exam",
    "CBC",
    "c5-6",
    "12.5",
    "x-ray",
    "pain",
    "chest",
    "MRI",
    "aspirin",
    "Tylenol",
    ",",
    ".",
    "%",
    "IV",
];

/// A random corpus with valid IOB tags over `classes`; sentence lengths 1..=max_len.
pub fn random_corpus<R: Rng>(
    rng: &mut R,
    sentences: usize,
    max_len: usize,
    classes: &[&str],
) -> seqlab::corpus::TaggedCorpus {
    use seqlab::corpus::{Sentence, Tag, TaggedCorpus};
    let out = (0..sentences)
        .map(|_| {
            let n = rng.random_range(1..=max_len);
            let tokens: Vec<String> = (0..n)
                .map(|_| TOKEN_POOL[rng.random_range(0..TOKEN_POOL.len())].to_string())
                .collect();
            let mut tags: Vec<Tag> = Vec::with_capacity(n);
            for _ in 0..n {
                let class = classes[rng.random_range(0..classes.len())];
                let continues =
                    matches!(tags.last(), Some(Tag::Begin(c)) | Some(Tag::Inside(c)) if c == class);
                let tag = match rng.random_range(0..3) {
                    0 => Tag::Outside,
                    1 => Tag::begin(class),
                    _ if continues => Tag::inside(class),
                    _ => Tag::begin(class),
                };
                tags.push(tag);
            }
            Sentence { tokens, tags }
        })
        .collect();
    TaggedCorpus::with_label_set(out, classes.iter().map(|c| c.to_string()).collect()).unwrap()
}

/// Entity count per class.
pub fn entity_counts(
    corpus: &seqlab::corpus::TaggedCorpus,
) -> std::collections::BTreeMap<String, usize> {
    let mut out = std::collections::BTreeMap::new();
    for span in seqlab::corpus::corpus_spans(corpus).unwrap() {
        *out.entry(span.label).or_insert(0) += 1;
    }
    out
}
