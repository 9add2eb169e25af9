//! Generated template corpora for end-to-end checks.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{default_label_set, spans_to_iob, EntitySpan, Sentence, TaggedCorpus};

const FILLER: &[&str] = &[
    "the", "patient", "was", "given", "for", "with", "and", "noted", "on", "after", "reports",
    "denies", "a", "of", "daily", "shows", "history", "today", "were", "started", ",", ".",
];

const PROBLEM: &[&str] = &[
    "pain",
    "fever",
    "cough",
    "edema",
    "nausea",
    "rash",
    "anemia",
    "fracture",
    "infection",
    "hypertension",
    "chest",
    "acute",
    "chronic",
    "renal",
    "failure",
];

const TREATMENT: &[&str] = &[
    "aspirin",
    "insulin",
    "surgery",
    "heparin",
    "antibiotics",
    "morphine",
    "dialysis",
    "lasix",
    "iv",
    "fluids",
    "Tylenol",
    "50mg",
    "therapy",
];

const TEST: &[&str] = &[
    "CBC",
    "x-ray",
    "MRI",
    "CT",
    "biopsy",
    "ECG",
    "ultrasound",
    "culture",
    "blood",
    "urine",
    "scan",
    "levels",
];

/// Entity length weights for lengths 1..=4; most entities are short.
pub const LENGTH_WEIGHTS: [f64; 4] = [0.35, 0.35, 0.2, 0.1];

fn vocabulary(class: &str) -> &'static [&'static str] {
    match class {
        "problem" => PROBLEM,
        "treatment" => TREATMENT,
        _ => TEST,
    }
}

/// `n` sentences over the default classes. Each class draws words from its own
/// vocabulary, disjoint from the others and from the filler words, and every
/// pair of entities is separated by at least one filler token.
pub fn template_corpus(n: usize, seed: u64) -> TaggedCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lengths = WeightedIndex::new(LENGTH_WEIGHTS).expect("weights are positive");
    let classes = default_label_set();
    let mut sentences = Vec::with_capacity(n);
    for sentence_index in 0..n {
        let mut tokens: Vec<String> = Vec::new();
        let mut spans = Vec::new();
        let filler = |rng: &mut ChaCha8Rng, tokens: &mut Vec<String>, min: usize| {
            for _ in 0..rng.random_range(min..=3) {
                tokens.push(FILLER[rng.random_range(0..FILLER.len())].to_string());
            }
        };
        filler(&mut rng, &mut tokens, 0);
        for e in 0..rng.random_range(1..=3) {
            if e > 0 {
                filler(&mut rng, &mut tokens, 1);
            }
            let class = &classes[rng.random_range(0..classes.len())];
            let vocab = vocabulary(class);
            let len = lengths.sample(&mut rng) + 1;
            let start = tokens.len();
            for _ in 0..len {
                tokens.push(vocab[rng.random_range(0..vocab.len())].to_string());
            }
            spans.push(EntitySpan::new(
                class,
                sentence_index,
                start,
                start + len - 1,
            ));
        }
        filler(&mut rng, &mut tokens, 1);
        let tags = spans_to_iob(tokens.len(), &spans).expect("generated spans are disjoint");
        sentences.push(Sentence { tokens, tags });
    }
    TaggedCorpus {
        sentences,
        label_set: classes,
    }
}
