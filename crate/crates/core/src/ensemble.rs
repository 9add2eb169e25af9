//! Per-token majority voting over the predictions of several models.

use thiserror::Error;

use crate::corpus::{Tag, TagSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("no predictions to vote on")]
    NoModels,
    #[error("model {model} predicts {found} tags, model 0 predicts {expected}")]
    LengthMismatch {
        model: usize,
        expected: usize,
        found: usize,
    },
    #[error("model {model}: marginal matrix does not match the sequence")]
    MarginalShape { model: usize },
}

/// Posterior tag probabilities per model, `[model][token][tag]`, over the tag
/// order of `tag_set`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteMarginals {
    pub tag_set: TagSet,
    pub per_model: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoteInput {
    pub predictions: Vec<Vec<Tag>>,
    pub marginals: Option<VoteMarginals>,
}

impl VoteInput {
    pub fn new(predictions: Vec<Vec<Tag>>) -> Self {
        VoteInput {
            predictions,
            marginals: None,
        }
    }

    fn check(&self) -> Result<usize, EnsembleError> {
        let first = self.predictions.first().ok_or(EnsembleError::NoModels)?;
        let n = first.len();
        for (model, p) in self.predictions.iter().enumerate() {
            if p.len() != n {
                return Err(EnsembleError::LengthMismatch {
                    model,
                    expected: n,
                    found: p.len(),
                });
            }
        }
        if let Some(m) = &self.marginals {
            if m.per_model.len() != self.predictions.len() {
                return Err(EnsembleError::MarginalShape {
                    model: m.per_model.len(),
                });
            }
            for (model, rows) in m.per_model.iter().enumerate() {
                if rows.len() != n || rows.iter().any(|r| r.len() != m.tag_set.len()) {
                    return Err(EnsembleError::MarginalShape { model });
                }
            }
        }
        Ok(n)
    }
}

/// Voting result before and after IOB repair.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteOutcome {
    pub voted: Vec<Tag>,
    pub repaired: Vec<Tag>,
}

/// Majority vote; see [`vote`] for the tie-break rules.
pub fn majority_vote(input: &VoteInput) -> Result<Vec<Tag>, EnsembleError> {
    vote(input).map(|o| o.repaired)
}

/// Picks the most-voted tag at each token.
///
/// Ties go to the tied tag with the highest summed posterior when marginals
/// are supplied; remaining ties go to the tag whose first voter has the lowest
/// model index. The result is then repaired so that every `I-X` not preceded by
/// `B-X`/`I-X` becomes `B-X`.
pub fn vote(input: &VoteInput) -> Result<VoteOutcome, EnsembleError> {
    let n = input.check()?;
    let voted: Vec<Tag> = (0..n).map(|t| vote_token(input, t)).collect();
    let repaired = repair_iob(&voted);
    Ok(VoteOutcome { voted, repaired })
}

fn vote_token(input: &VoteInput, t: usize) -> Tag {
    // (tag, votes, first voter), in order of first voter.
    let mut tally: Vec<(&Tag, usize, usize)> = Vec::new();
    for (model, pred) in input.predictions.iter().enumerate() {
        let tag = &pred[t];
        match tally.iter_mut().find(|(g, _, _)| *g == tag) {
            Some(entry) => entry.1 += 1,
            None => tally.push((tag, 1, model)),
        }
    }
    let top = tally.iter().map(|e| e.1).max().unwrap_or(0);
    let mut tied: Vec<&(&Tag, usize, usize)> = tally.iter().filter(|e| e.1 == top).collect();
    if tied.len() > 1 {
        if let Some(m) = &input.marginals {
            let mass = |tag: &Tag| -> f64 {
                m.tag_set.index_of(tag).map_or(f64::NEG_INFINITY, |k| {
                    m.per_model.iter().map(|rows| rows[t][k]).sum()
                })
            };
            let best = tied
                .iter()
                .map(|e| mass(e.0))
                .fold(f64::NEG_INFINITY, f64::max);
            tied.retain(|e| mass(e.0) == best);
        }
    }
    // `tally` is ordered by first voter, so the first tied entry wins the remaining ties.
    tied[0].0.clone()
}

/// Rewrites each `I-X` that does not continue a `B-X`/`I-X` into `B-X`.
pub fn repair_iob(tags: &[Tag]) -> Vec<Tag> {
    let mut out: Vec<Tag> = Vec::with_capacity(tags.len());
    for tag in tags {
        let fixed = match tag {
            Tag::Inside(c) => {
                let continues =
                    matches!(out.last(), Some(Tag::Begin(p)) | Some(Tag::Inside(p)) if p == c);
                if continues {
                    tag.clone()
                } else {
                    Tag::Begin(c.clone())
                }
            }
            _ => tag.clone(),
        };
        out.push(fixed);
    }
    out
}
