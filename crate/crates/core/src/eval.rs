//! Entity-level precision, recall and F1 with exact span matching.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::corpus::{corpus_spans, CorpusError, EntitySpan, TaggedCorpus};

pub const MICRO_ROW: &str = "avg/total";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold has {gold} sentences, prediction has {pred}")]
    SentenceCount { gold: usize, pred: usize },
    #[error("sentence {sentence}: gold has {gold} tokens, prediction has {pred}")]
    SentenceLength {
        sentence: usize,
        gold: usize,
        pred: usize,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("report json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScore {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of gold spans.
    pub support: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl ClassScore {
    pub fn from_counts(name: &str, tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassScore {
            name: name.to_string(),
            precision,
            recall,
            f1,
            support: tp + fn_,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
        }
    }
}

/// Per-class scores plus the micro-averaged `avg/total` row.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub classes: Vec<ClassScore>,
    pub micro: ClassScore,
}

impl EvalReport {
    pub fn class(&self, name: &str) -> Option<&ClassScore> {
        self.classes.iter().find(|c| c.name == name)
    }
}

fn check_aligned(gold: &TaggedCorpus, pred: &TaggedCorpus) -> Result<(), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::SentenceCount {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    for (i, (g, p)) in gold.sentences.iter().zip(&pred.sentences).enumerate() {
        if g.tags.len() != p.tags.len() {
            return Err(EvalError::SentenceLength {
                sentence: i,
                gold: g.tags.len(),
                pred: p.tags.len(),
            });
        }
    }
    Ok(())
}

/// Scores predicted entities against gold; a prediction counts only if class,
/// sentence, start and end all match a gold span.
pub fn entity_prf(gold: &TaggedCorpus, pred: &TaggedCorpus) -> Result<EvalReport, EvalError> {
    check_aligned(gold, pred)?;
    let gold_spans: HashSet<EntitySpan> = corpus_spans(gold)?.into_iter().collect();
    let pred_spans: HashSet<EntitySpan> = corpus_spans(pred)?.into_iter().collect();

    let mut names = gold.label_set.clone();
    for s in gold_spans.iter().chain(&pred_spans) {
        if !names.contains(&s.label) {
            names.push(s.label.clone());
        }
    }
    names[gold.label_set.len()..].sort();

    let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
    let classes = names
        .iter()
        .map(|name| {
            let tp = pred_spans
                .iter()
                .filter(|s| &s.label == name && gold_spans.contains(s))
                .count();
            let fp = pred_spans.iter().filter(|s| &s.label == name).count() - tp;
            let fn_ = gold_spans.iter().filter(|s| &s.label == name).count() - tp;
            tp_all += tp;
            fp_all += fp;
            fn_all += fn_;
            ClassScore::from_counts(name, tp, fp, fn_)
        })
        .collect();
    Ok(EvalReport {
        classes,
        micro: ClassScore::from_counts(MICRO_ROW, tp_all, fp_all, fn_all),
    })
}

/// Fraction of tokens whose predicted tag equals the gold tag.
pub fn token_accuracy(gold: &TaggedCorpus, pred: &TaggedCorpus) -> Result<f64, EvalError> {
    check_aligned(gold, pred)?;
    let total = gold.num_tokens();
    if total == 0 {
        return Ok(0.0);
    }
    let same = gold
        .sentences
        .iter()
        .zip(&pred.sentences)
        .flat_map(|(g, p)| g.tags.iter().zip(&p.tags))
        .filter(|(a, b)| a == b)
        .count();
    Ok(same as f64 / total as f64)
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn score_json(s: &ClassScore) -> Value {
    json!({
        "precision": s.precision,
        "recall": s.recall,
        "f1": s.f1,
        "support": s.support,
        "true_positives": s.true_positives,
        "false_positives": s.false_positives,
        "false_negatives": s.false_negatives,
        "display": {
            "precision": round4(s.precision),
            "recall": round4(s.recall),
            "f1": round4(s.f1),
        },
    })
}

/// One object per class plus `avg/total`, full-precision values alongside
/// 4-decimal display values.
pub fn report_json(report: &EvalReport) -> String {
    let mut map = Map::new();
    for c in &report.classes {
        map.insert(c.name.clone(), score_json(c));
    }
    map.insert(MICRO_ROW.to_string(), score_json(&report.micro));
    serde_json::to_string_pretty(&Value::Object(map)).expect("report serializes")
}

pub fn parse_report_json(text: &str) -> Result<EvalReport, EvalError> {
    let value: Value = serde_json::from_str(text).map_err(|e| EvalError::Json(e.to_string()))?;
    let map = value
        .as_object()
        .ok_or_else(|| EvalError::Json("expected an object".into()))?;
    let parse = |name: &str, v: &Value| -> Result<ClassScore, EvalError> {
        let f = |k: &str| {
            v.get(k)
                .and_then(Value::as_f64)
                .ok_or_else(|| EvalError::Json(format!("{name}.{k} missing")))
        };
        let u = |k: &str| {
            v.get(k)
                .and_then(Value::as_u64)
                .map(|x| x as usize)
                .ok_or_else(|| EvalError::Json(format!("{name}.{k} missing")))
        };
        Ok(ClassScore {
            name: name.to_string(),
            precision: f("precision")?,
            recall: f("recall")?,
            f1: f("f1")?,
            support: u("support")?,
            true_positives: u("true_positives")?,
            false_positives: u("false_positives")?,
            false_negatives: u("false_negatives")?,
        })
    };
    let mut classes = Vec::new();
    let mut micro = None;
    for (name, v) in map {
        if name == MICRO_ROW {
            micro = Some(parse(name, v)?);
        } else {
            classes.push(parse(name, v)?);
        }
    }
    Ok(EvalReport {
        classes,
        micro: micro.ok_or_else(|| EvalError::Json(format!("missing `{MICRO_ROW}`")))?,
    })
}

/// Aligned text table with precision, recall, F1 and support columns.
pub fn report_table(report: &EvalReport) -> String {
    let width = report
        .classes
        .iter()
        .map(|c| c.name.len())
        .chain([MICRO_ROW.len()])
        .max()
        .unwrap_or(0);
    let mut out = format!(
        "{:>width$}  {:>9}  {:>9}  {:>9}  {:>9}\n\n",
        "", "precision", "recall", "f1-score", "support"
    );
    let row = |out: &mut String, c: &ClassScore| {
        let _ = writeln!(
            out,
            "{:>width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9}",
            c.name, c.precision, c.recall, c.f1, c.support
        );
    };
    for c in &report.classes {
        row(&mut out, c);
    }
    out.push('\n');
    row(&mut out, &report.micro);
    out
}
