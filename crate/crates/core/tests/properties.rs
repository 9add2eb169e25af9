//! Property tests over corpora, relabeling, features, evaluation and voting.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{entity_counts, random_corpus, TOKEN_POOL};
use seqlab::corpus::{
    corpus_spans, iob_to_spans, is_valid_iob, parse_conll, spans_to_iob, write_conll, EntitySpan,
    Sentence, Tag, TaggedCorpus,
};
use seqlab::ensemble::{majority_vote, vote, VoteInput};
use seqlab::eval::{entity_prf, token_accuracy};
use seqlab::features::{
    build_char_vocab, encode_chars, writing_format, EmbeddingTable, CHAR_VOCAB_SIZE,
};
use seqlab::relabel::{relabel_corpus, RelabelConfig};

const CLASSES: &[&str] = &["problem", "treatment", "test"];

fn corpus_from_seed(seed: u64, sentences: usize, max_len: usize) -> TaggedCorpus {
    random_corpus(
        &mut ChaCha8Rng::seed_from_u64(seed),
        sentences,
        max_len,
        CLASSES,
    )
}

fn config_from_seed(seed: u64) -> RelabelConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |p: f64| -> Vec<&str> {
        TOKEN_POOL
            .iter()
            .copied()
            .filter(|_| rng.random_bool(p))
            .collect()
    };
    RelabelConfig::new(pick(0.3), pick(0.2), pick(0.15))
}

fn o_positions(c: &TaggedCorpus) -> HashSet<(usize, usize)> {
    c.sentences
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            s.tags
                .iter()
                .enumerate()
                .filter(|(_, t)| t.is_outside())
                .map(move |(j, _)| (i, j))
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn spans_and_iob_roundtrip(seed: u64) {
        let c = corpus_from_seed(seed, 4, 15);
        for (i, s) in c.sentences.iter().enumerate() {
            let spans = iob_to_spans(&s.tags, i).unwrap();
            prop_assert_eq!(spans_to_iob(s.len(), &spans).unwrap(), s.tags.clone());
            prop_assert_eq!(iob_to_spans(&spans_to_iob(s.len(), &spans).unwrap(), i).unwrap(), spans);
        }
    }

    #[test]
    fn conll_roundtrip(seed: u64) {
        let c = corpus_from_seed(seed, 5, 10);
        let text = write_conll(&c);
        let parsed = parse_conll(&text).unwrap();
        prop_assert_eq!(&parsed.sentences, &c.sentences);
        prop_assert_eq!(write_conll(&parsed), text);
    }

    #[test]
    fn relabel_invariants(corpus_seed: u64, config_seed: u64) {
        let c = corpus_from_seed(corpus_seed, 4, 12);
        let cfg = config_from_seed(config_seed);
        let (once, summary) = relabel_corpus(&c, &cfg).unwrap();
        let (twice, again) = relabel_corpus(&once, &cfg).unwrap();
        prop_assert_eq!(&twice, &once);
        prop_assert_eq!(again.total().entities_shifted, 0);
        prop_assert_eq!(entity_counts(&once), entity_counts(&c));
        prop_assert!(once.validate().is_ok());
        for (a, b) in once.sentences.iter().zip(&c.sentences) {
            prop_assert_eq!(&a.tokens, &b.tokens);
        }
        // O positions only grow.
        prop_assert!(o_positions(&c).is_subset(&o_positions(&once)));
        // Whitelisted tokens are never moved out of an entity.
        for (a, b) in once.sentences.iter().zip(&c.sentences) {
            for ((tok, new), old) in a.tokens.iter().zip(&a.tags).zip(&b.tags) {
                if cfg.abbreviation_whitelist().contains(tok) {
                    prop_assert_eq!(new.is_outside(), old.is_outside());
                }
            }
        }
        let t = summary.total();
        prop_assert_eq!(t.b_to_o, t.entities_shifted);
        prop_assert_eq!(t.i_to_b, t.entities_shifted);
        let newly_o = o_positions(&once).len() - o_positions(&c).len();
        prop_assert_eq!(t.b_to_o + t.i_to_o, newly_o);
    }

    #[test]
    fn writing_format_is_total(word in "\\PC{0,12}") {
        let f = writing_format(&word);
        prop_assert!(f.index() < 8);
        let onehot = f.onehot();
        prop_assert_eq!(onehot.iter().sum::<f64>(), 1.0);
        prop_assert_eq!(onehot[f.index()], 1.0);
    }

    #[test]
    fn encode_chars_invariants(word in "\\PC{0,40}", max_len in 1usize..40) {
        let vocab = build_char_vocab();
        let m = encode_chars(&word, max_len, &vocab);
        prop_assert_eq!(m.indices.len(), max_len);
        prop_assert!(m.indices.iter().all(|&i| i < CHAR_VOCAB_SIZE));
        let n = word.chars().count().min(max_len);
        prop_assert!(m.indices[n..].iter().all(|&i| i == 0));
        prop_assert!(m.indices[..n].iter().all(|&i| i != 0));
    }

    #[test]
    fn embedding_text_roundtrip(seed: u64, dim in 1usize..6, sentences in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = EmbeddingTable { dim, sentences: BTreeMap::new() };
        for _ in 0..sentences {
            let id = rng.random_range(0..20);
            let n = rng.random_range(1..4);
            let rows = (0..n).map(|_| common::normal(&mut rng, dim).iter().map(|v| v * 10f64.powi(rng.random_range(-8..8))).collect()).collect();
            table.sentences.insert(id, rows);
        }
        let text = table.to_text();
        prop_assert_eq!(EmbeddingTable::parse(&text).unwrap(), table);
        prop_assert_eq!(reference_parse(&text), Some((dim, EmbeddingTable::parse(&text).unwrap().sentences)));
    }

    #[test]
    fn eval_matches_set_oracle(gold_seed: u64, pred_seed: u64) {
        let gold = corpus_from_seed(gold_seed, 6, 10);
        // Predictions over the same tokens with independently drawn tags.
        let mut rng = ChaCha8Rng::seed_from_u64(pred_seed);
        let pred_sentences = gold.sentences.iter().map(|s| {
            let tags = if rng.random_bool(0.3) { s.tags.clone() } else {
                random_corpus(&mut rng, 1, s.len(), CLASSES).sentences[0].tags.iter().cloned().chain(std::iter::repeat(Tag::Outside)).take(s.len()).collect()
            };
            Sentence { tokens: s.tokens.clone(), tags: repair(tags) }
        }).collect();
        let pred = TaggedCorpus::with_label_set(pred_sentences, gold.label_set.clone()).unwrap();
        let report = entity_prf(&gold, &pred).unwrap();

        let g: HashSet<EntitySpan> = corpus_spans(&gold).unwrap().into_iter().collect();
        let p: HashSet<EntitySpan> = corpus_spans(&pred).unwrap().into_iter().collect();
        let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
        for class in CLASSES {
            let gc: HashSet<_> = g.iter().filter(|s| s.label == *class).collect();
            let pc: HashSet<_> = p.iter().filter(|s| s.label == *class).collect();
            let tp = gc.intersection(&pc).count();
            let row = report.class(class).unwrap();
            prop_assert_eq!(row.true_positives, tp);
            prop_assert_eq!(row.false_positives, pc.len() - tp);
            prop_assert_eq!(row.false_negatives, gc.len() - tp);
            prop_assert_eq!(row.support, gc.len());
            let f1 = if row.precision + row.recall > 0.0 { 2.0 * row.precision * row.recall / (row.precision + row.recall) } else { 0.0 };
            prop_assert!((row.f1 - f1).abs() < 1e-15);
            tp_all += tp;
            fp_all += pc.len() - tp;
            fn_all += gc.len() - tp;
        }
        prop_assert_eq!((report.micro.true_positives, report.micro.false_positives, report.micro.false_negatives), (tp_all, fp_all, fn_all));
        prop_assert_eq!(report.micro.support, report.classes.iter().map(|c| c.support).sum::<usize>());

        // Naive token recount.
        let total: usize = gold.sentences.iter().map(|s| s.len()).sum();
        let same: usize = gold.sentences.iter().zip(&pred.sentences).map(|(a, b)| a.tags.iter().zip(&b.tags).filter(|(x, y)| x == y).count()).sum();
        prop_assert_eq!(token_accuracy(&gold, &pred).unwrap(), same as f64 / total as f64);

        // Reordering sentences identically leaves the scores unchanged.
        let mut order: Vec<usize> = (0..gold.len()).collect();
        order.reverse();
        let reorder = |c: &TaggedCorpus| TaggedCorpus { sentences: order.iter().map(|&i| c.sentences[i].clone()).collect(), label_set: c.label_set.clone() };
        let shuffled = entity_prf(&reorder(&gold), &reorder(&pred)).unwrap();
        prop_assert_eq!(shuffled, report);
    }

    #[test]
    fn voting_properties(seed: u64, models in 1usize..8, len in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let preds: Vec<Vec<Tag>> = (0..models).map(|_| {
            let mut tags = random_corpus(&mut rng, 1, len, CLASSES).sentences[0].tags.clone();
            tags.resize(len, Tag::Outside);
            repair(tags)
        }).collect();
        let input = VoteInput::new(preds.clone());
        let out = vote(&input).unwrap();
        prop_assert!(is_valid_iob(&out.repaired));
        prop_assert_eq!(&vote(&input).unwrap(), &out);
        for t in 0..len {
            let column: Vec<&Tag> = preds.iter().map(|p| &p[t]).collect();
            for tag in &column {
                if 2 * column.iter().filter(|o| o == &tag).count() > models {
                    prop_assert_eq!(&out.voted[t], *tag);
                }
            }
        }
        // Reversing the model order only matters where tie-breaking decided.
        let reversed = VoteInput::new(preds.iter().rev().cloned().collect());
        let out_rev = vote(&reversed).unwrap();
        for t in 0..len {
            let column: Vec<&Tag> = preds.iter().map(|p| &p[t]).collect();
            let top = column.iter().map(|x| column.iter().filter(|o| o == &x).count()).max().unwrap();
            let leaders: HashSet<&&Tag> = column.iter().filter(|x| column.iter().filter(|o| o == x).count() == top).collect();
            if leaders.len() == 1 {
                prop_assert_eq!(&out_rev.voted[t], &out.voted[t]);
            }
        }
        // An ensemble of copies of one model is that model.
        let copies = VoteInput::new(vec![preds[0].clone(); models]);
        prop_assert_eq!(majority_vote(&copies).unwrap(), preds[0].clone());
    }
}

/// `I-X` after anything but `B-X`/`I-X` becomes `B-X`.
fn repair(tags: Vec<Tag>) -> Vec<Tag> {
    seqlab::ensemble::repair_iob(&tags)
}

type Sentences = BTreeMap<usize, Vec<Vec<f64>>>;

/// Minimal second reader for the embedding format.
fn reference_parse(text: &str) -> Option<(usize, Sentences)> {
    let mut lines = text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty());
    let dim: usize = lines.next()?.strip_prefix("#DIM ")?.parse().ok()?;
    let mut out = Sentences::new();
    let mut current: Option<(usize, usize)> = None;
    for line in lines {
        if let Some(rest) = line.strip_prefix("#SENT ") {
            let mut it = rest.split(' ');
            let id: usize = it.next()?.parse().ok()?;
            let n: usize = it.next()?.parse().ok()?;
            out.insert(id, Vec::new());
            current = Some((id, n));
        } else {
            let (id, _) = current?;
            let row: Vec<f64> = line
                .split(' ')
                .map(|v| v.parse().ok())
                .collect::<Option<_>>()?;
            if row.len() != dim {
                return None;
            }
            out.get_mut(&id)?.push(row);
        }
    }
    Some((dim, out))
}

#[test]
fn loader_agrees_with_reference_reader_on_fixtures() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "emb") {
            let text = std::fs::read_to_string(&path).unwrap();
            let table = EmbeddingTable::parse(&text).unwrap();
            assert_eq!(
                reference_parse(&text),
                Some((table.dim, table.sentences.clone())),
                "{}",
                path.display()
            );
            for (id, rows) in &table.sentences {
                assert!(
                    rows.iter().all(|r| r.len() == table.dim),
                    "{} sentence {id}",
                    path.display()
                );
            }
            seen += 1;
        }
    }
    assert!(seen >= 4);
}

#[test]
fn two_sentence_fixture_statistics() {
    let text = "a\tB-problem\nbacterial\tI-problem\nsuperinfection\tI-problem\n\n\
                Patient\tB-test\n's\tI-test\nneurologic\tI-test\nexam\tI-test\n\n";
    let c = parse_conll(text).unwrap();
    let stats = seqlab::corpus::corpus_stats(&c).unwrap();
    assert_eq!(
        stats.entity_counts,
        BTreeMap::from([("problem".to_string(), 1), ("test".to_string(), 1)])
    );
    assert_eq!(stats.length_histogram, BTreeMap::from([(3, 1), (4, 1)]));
    let (relabeled, summary) = relabel_corpus(&c, &RelabelConfig::default()).unwrap();
    assert_eq!(summary.total().entities_shifted, 2);
    let b = |c: &TaggedCorpus| {
        c.sentences
            .iter()
            .flat_map(|s| &s.tags)
            .filter(|t| matches!(t, Tag::Begin(_)))
            .count()
    };
    let i = |c: &TaggedCorpus| {
        c.sentences
            .iter()
            .flat_map(|s| &s.tags)
            .filter(|t| matches!(t, Tag::Inside(_)))
            .count()
    };
    assert_eq!(b(&relabeled), b(&c));
    assert_eq!(i(&c) - i(&relabeled), 3);
}
