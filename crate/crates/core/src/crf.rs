//! Linear-chain CRF over per-token emission scores.
//!
//! A tag path `y` of length `T` scores
//! `start[y0] + Σ emit[t][yt] + Σ trans[y(t-1)][yt] + stop[y(T-1)]`.
//! Transitions and start tags forbidden by a [`TransitionMask`] score `-inf`
//! inside every recursion; the stored real-valued scores are never modified.
//! All recursions run in log space.

use thiserror::Error;

use crate::corpus::{Tag, TagSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrfError {
    #[error("empty sequence")]
    Empty,
    #[error("emission matrix has {found} values, not a multiple of {num_tags} tags")]
    EmissionShape { num_tags: usize, found: usize },
    #[error("tag sequence has length {found}, emissions have {expected} rows")]
    LengthMismatch { expected: usize, found: usize },
    #[error("tag index {0} out of range")]
    TagOutOfRange(usize),
    #[error("tag path is illegal at position {0}")]
    IllegalPath(usize),
    #[error("no legal tag sequence exists")]
    NoLegalPath,
}

/// Which start tags and tag-to-tag transitions are allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionMask {
    num_tags: usize,
    start: Vec<bool>,
    /// Row-major `[from × to]`.
    transitions: Vec<bool>,
}

impl TransitionMask {
    pub fn all_legal(num_tags: usize) -> Self {
        TransitionMask {
            num_tags,
            start: vec![true; num_tags],
            transitions: vec![true; num_tags * num_tags],
        }
    }

    pub fn new(start: Vec<bool>, transitions: Vec<bool>) -> Self {
        let num_tags = start.len();
        assert_eq!(
            transitions.len(),
            num_tags * num_tags,
            "transition mask must be K×K"
        );
        TransitionMask {
            num_tags,
            start,
            transitions,
        }
    }

    /// IOB constraints: `I-X` may only follow `B-X` or `I-X`, and never starts a sentence.
    pub fn iob(tag_set: &TagSet) -> Self {
        let tags = tag_set.tags();
        let start = tags.iter().map(|t| !matches!(t, Tag::Inside(_))).collect();
        let mut transitions = Vec::with_capacity(tags.len() * tags.len());
        for from in tags {
            for to in tags {
                transitions.push(match to {
                    Tag::Inside(c) => from.class() == Some(c.as_str()),
                    _ => true,
                });
            }
        }
        TransitionMask {
            num_tags: tags.len(),
            start,
            transitions,
        }
    }

    pub fn num_tags(&self) -> usize {
        self.num_tags
    }

    pub fn start_legal(&self, tag: usize) -> bool {
        self.start[tag]
    }

    pub fn legal(&self, from: usize, to: usize) -> bool {
        self.transitions[from * self.num_tags + to]
    }
}

/// The IOB legality mask for a label set, over the tag order of [`TagSet`].
pub fn transition_mask(label_set: &[String]) -> TransitionMask {
    TransitionMask::iob(&TagSet::new(label_set))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    /// Row-major `[from × to]`.
    pub transitions: Vec<f64>,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
    pub mask: TransitionMask,
}

impl CrfParams {
    pub fn zeros(mask: TransitionMask) -> Self {
        let k = mask.num_tags();
        CrfParams {
            transitions: vec![0.0; k * k],
            start: vec![0.0; k],
            stop: vec![0.0; k],
            mask,
        }
    }

    pub fn num_tags(&self) -> usize {
        self.start.len()
    }

    fn start_score(&self, tag: usize) -> f64 {
        if self.mask.start_legal(tag) {
            self.start[tag]
        } else {
            f64::NEG_INFINITY
        }
    }

    fn trans(&self, from: usize, to: usize) -> f64 {
        if self.mask.legal(from, to) {
            self.transitions[from * self.num_tags() + to]
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Per-token tag scores, row-major `[T × K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionMatrix {
    num_tags: usize,
    scores: Vec<f64>,
}

impl EmissionMatrix {
    pub fn new(num_tags: usize, scores: Vec<f64>) -> Result<Self, CrfError> {
        if num_tags == 0 || !scores.len().is_multiple_of(num_tags) {
            return Err(CrfError::EmissionShape {
                num_tags,
                found: scores.len(),
            });
        }
        Ok(EmissionMatrix { num_tags, scores })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, CrfError> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(CrfError::EmissionShape {
                num_tags: k,
                found: rows.iter().map(Vec::len).sum(),
            });
        }
        EmissionMatrix::new(k, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.scores.len() / self.num_tags
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn num_tags(&self) -> usize {
        self.num_tags
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.scores[t * self.num_tags..(t + 1) * self.num_tags]
    }

    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.scores[t * self.num_tags + k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }
}

fn check(emissions: &EmissionMatrix, params: &CrfParams) -> Result<(), CrfError> {
    if emissions.num_tags() != params.num_tags() {
        return Err(CrfError::EmissionShape {
            num_tags: params.num_tags(),
            found: emissions.as_slice().len(),
        });
    }
    if emissions.is_empty() {
        return Err(CrfError::Empty);
    }
    Ok(())
}

fn check_path(
    emissions: &EmissionMatrix,
    params: &CrfParams,
    tags: &[usize],
) -> Result<(), CrfError> {
    check(emissions, params)?;
    if tags.len() != emissions.len() {
        return Err(CrfError::LengthMismatch {
            expected: emissions.len(),
            found: tags.len(),
        });
    }
    if let Some(&bad) = tags.iter().find(|&&t| t >= params.num_tags()) {
        return Err(CrfError::TagOutOfRange(bad));
    }
    if !params.mask.start_legal(tags[0]) {
        return Err(CrfError::IllegalPath(0));
    }
    for (i, w) in tags.windows(2).enumerate() {
        if !params.mask.legal(w[0], w[1]) {
            return Err(CrfError::IllegalPath(i + 1));
        }
    }
    Ok(())
}

/// Unnormalized score of a legal tag path.
///
/// Terms are added left to right in the same order as [`viterbi_decode`]
/// accumulates them, so the decoded score equals the path score exactly.
pub fn path_score(
    emissions: &EmissionMatrix,
    params: &CrfParams,
    tags: &[usize],
) -> Result<f64, CrfError> {
    check_path(emissions, params, tags)?;
    let mut score = params.start[tags[0]] + emissions.get(0, tags[0]);
    for t in 1..tags.len() {
        score = score
            + params.transitions[tags[t - 1] * params.num_tags() + tags[t]]
            + emissions.get(t, tags[t]);
    }
    Ok(score + params.stop[tags[tags.len() - 1]])
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

// alpha[t][j]: log-sum of all legal prefixes ending in tag j at position t.
fn forward_scores(emissions: &EmissionMatrix, params: &CrfParams) -> Vec<Vec<f64>> {
    let k = params.num_tags();
    let mut alpha = Vec::with_capacity(emissions.len());
    alpha.push(
        (0..k)
            .map(|j| params.start_score(j) + emissions.get(0, j))
            .collect::<Vec<_>>(),
    );
    for t in 1..emissions.len() {
        let prev = &alpha[t - 1];
        let row: Vec<f64> = (0..k)
            .map(|j| {
                log_sum_exp((0..k).map(|i| prev[i] + params.trans(i, j))) + emissions.get(t, j)
            })
            .collect();
        alpha.push(row);
    }
    alpha
}

// beta[t][i]: log-sum of all legal suffixes after position t given tag i there,
// including the stop score.
fn backward_scores(emissions: &EmissionMatrix, params: &CrfParams) -> Vec<Vec<f64>> {
    let k = params.num_tags();
    let n = emissions.len();
    let mut beta = vec![Vec::new(); n];
    beta[n - 1] = params.stop.clone();
    for t in (0..n - 1).rev() {
        let next = &beta[t + 1];
        beta[t] = (0..k)
            .map(|i| {
                log_sum_exp((0..k).map(|j| params.trans(i, j) + emissions.get(t + 1, j) + next[j]))
            })
            .collect();
    }
    beta
}

fn log_z(alpha: &[Vec<f64>], params: &CrfParams) -> f64 {
    let last = &alpha[alpha.len() - 1];
    log_sum_exp((0..params.num_tags()).map(|j| last[j] + params.stop[j]))
}

/// Log of the sum of `exp(path_score)` over all legal paths (`-inf` if none).
pub fn log_partition(emissions: &EmissionMatrix, params: &CrfParams) -> Result<f64, CrfError> {
    check(emissions, params)?;
    Ok(log_z(&forward_scores(emissions, params), params))
}

/// Per-position tag posteriors `[T][K]`; illegal tags get probability 0.
pub fn forward_backward_marginals(
    emissions: &EmissionMatrix,
    params: &CrfParams,
) -> Result<Vec<Vec<f64>>, CrfError> {
    check(emissions, params)?;
    let alpha = forward_scores(emissions, params);
    let beta = backward_scores(emissions, params);
    let z = log_z(&alpha, params);
    if z == f64::NEG_INFINITY {
        return Err(CrfError::NoLegalPath);
    }
    Ok(alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x + y - z).exp()).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfGradients {
    pub nll: f64,
    /// `[T × K]`, row-major.
    pub emissions: Vec<f64>,
    /// `[K × K]`, row-major.
    pub transitions: Vec<f64>,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
}

/// Negative log-likelihood of `gold` and its gradients: expected feature
/// counts under the model minus the gold path's counts.
pub fn crf_nll_grad(
    emissions: &EmissionMatrix,
    params: &CrfParams,
    gold: &[usize],
) -> Result<CrfGradients, CrfError> {
    let gold_score = path_score(emissions, params, gold)?;
    let k = params.num_tags();
    let n = emissions.len();
    let alpha = forward_scores(emissions, params);
    let beta = backward_scores(emissions, params);
    let z = log_z(&alpha, params);

    let mut d_em = vec![0.0; n * k];
    for t in 0..n {
        for j in 0..k {
            d_em[t * k + j] = (alpha[t][j] + beta[t][j] - z).exp();
        }
    }
    let d_start = d_em[..k].to_vec();
    let d_stop = d_em[(n - 1) * k..].to_vec();
    let mut d_trans = vec![0.0; k * k];
    for t in 1..n {
        for i in 0..k {
            if alpha[t - 1][i] == f64::NEG_INFINITY {
                continue;
            }
            for j in 0..k {
                let s = params.trans(i, j);
                if s == f64::NEG_INFINITY {
                    continue;
                }
                d_trans[i * k + j] +=
                    (alpha[t - 1][i] + s + emissions.get(t, j) + beta[t][j] - z).exp();
            }
        }
    }
    let mut grads = CrfGradients {
        nll: z - gold_score,
        emissions: d_em,
        transitions: d_trans,
        start: d_start,
        stop: d_stop,
    };
    grads.start[gold[0]] -= 1.0;
    grads.stop[gold[n - 1]] -= 1.0;
    for (t, &y) in gold.iter().enumerate() {
        grads.emissions[t * k + y] -= 1.0;
        if t > 0 {
            grads.transitions[gold[t - 1] * k + y] -= 1.0;
        }
    }
    Ok(grads)
}

/// Highest-scoring legal path and its score.
///
/// Ties go to the lowest tag index, both for the final tag and for each
/// back-pointer.
pub fn viterbi_decode(
    emissions: &EmissionMatrix,
    params: &CrfParams,
) -> Result<(Vec<usize>, f64), CrfError> {
    check(emissions, params)?;
    let k = params.num_tags();
    let n = emissions.len();
    let mut delta: Vec<f64> = (0..k)
        .map(|j| params.start_score(j) + emissions.get(0, j))
        .collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(n.saturating_sub(1));
    for t in 1..n {
        let mut next = vec![f64::NEG_INFINITY; k];
        let mut ptr = vec![0usize; k];
        for j in 0..k {
            let mut best = f64::NEG_INFINITY;
            let mut best_i = 0;
            for (i, d) in delta.iter().enumerate() {
                let s = d + params.trans(i, j);
                if s > best {
                    best = s;
                    best_i = i;
                }
            }
            next[j] = best + emissions.get(t, j);
            ptr[j] = best_i;
        }
        back.push(ptr);
        delta = next;
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for (j, d) in delta.iter().enumerate() {
        let s = d + params.stop[j];
        if s > best {
            best = s;
            last = j;
        }
    }
    if best == f64::NEG_INFINITY {
        return Err(CrfError::NoLegalPath);
    }
    let mut path = vec![last; n];
    for t in (1..n).rev() {
        path[t - 1] = back[t - 1][path[t]];
    }
    Ok((path, best))
}

/// Exhaustive enumeration over all `K^T` paths, for cross-checking the
/// dynamic programs on small instances.
pub mod reference {
    use super::*;

    /// Calls `visit` with every legal path and its score.
    pub fn for_each_legal_path(
        emissions: &EmissionMatrix,
        params: &CrfParams,
        mut visit: impl FnMut(&[usize], f64),
    ) {
        let n = emissions.len();
        let k = params.num_tags();
        let mut path = vec![0usize; n];
        loop {
            if let Ok(s) = path_score(emissions, params, &path) {
                visit(&path, s);
            }
            // Odometer increment, first position fastest.
            let mut pos = 0;
            loop {
                if pos == n {
                    return;
                }
                path[pos] += 1;
                if path[pos] < k {
                    break;
                }
                path[pos] = 0;
                pos += 1;
            }
        }
    }

    pub fn log_partition(emissions: &EmissionMatrix, params: &CrfParams) -> f64 {
        let mut scores = Vec::new();
        for_each_legal_path(emissions, params, |_, s| scores.push(s));
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
    }

    /// Best path; among equal scores, the one that is smallest when compared
    /// from the last position backwards.
    pub fn best_path(emissions: &EmissionMatrix, params: &CrfParams) -> Option<(Vec<usize>, f64)> {
        let mut best: Option<(Vec<usize>, f64)> = None;
        for_each_legal_path(emissions, params, |p, s| {
            let better = match &best {
                None => true,
                Some((bp, bs)) => s > *bs || (s == *bs && p.iter().rev().lt(bp.iter().rev())),
            };
            if better {
                best = Some((p.to_vec(), s));
            }
        });
        best
    }

    pub fn marginals(emissions: &EmissionMatrix, params: &CrfParams) -> Vec<Vec<f64>> {
        let z = log_partition(emissions, params);
        let mut m = vec![vec![0.0; params.num_tags()]; emissions.len()];
        for_each_legal_path(emissions, params, |p, s| {
            let w = (s - z).exp();
            for (t, &y) in p.iter().enumerate() {
                m[t][y] += w;
            }
        });
        m
    }
}
