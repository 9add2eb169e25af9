//! Quick built-in checks of the numerical core, run by `seqlab selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{iob_to_spans, parse_conll, parse_tags, spans_to_iob, write_conll, Tag};
use crate::crf::{
    crf_nll_grad, forward_backward_marginals, log_partition, reference, viterbi_decode, CrfParams,
    EmissionMatrix, TransitionMask,
};
use crate::features::{writing_format, WordSource};
use crate::neural::{finite_diff_grad, max_relative_error, CharEncoderConfig, Lstm, Mode, Params};
use crate::relabel::{relabel_sentence, RelabelConfig};
use crate::synthetic::template_corpus;
use crate::tagger::{init_model, model_from_bytes, model_to_bytes, sentence_loss, ModelConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<String, String>) -> CheckResult {
    match outcome {
        Ok(detail) => CheckResult {
            name,
            passed: true,
            detail,
        },
        Err(detail) => CheckResult {
            name,
            passed: false,
            detail,
        },
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Runs every check with randomness drawn from `seed`.
pub fn run_selftest(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        check("crf_oracle", crf_oracle(&mut rng, 100)),
        check("crf_gradient", crf_gradient(&mut rng, 10)),
        check("lstm_gradient", lstm_gradient(&mut rng, 10)),
        check("model_gradient", model_gradient(&mut rng)),
        check("golden_examples", golden()),
        check("roundtrips", roundtrips(seed)),
    ]
}

fn random_crf(rng: &mut impl Rng, t: usize, k: usize) -> (EmissionMatrix, CrfParams) {
    let mut draw = |n: usize| {
        (0..n)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect::<Vec<f64>>()
    };
    let emissions = EmissionMatrix::new(k, draw(t * k)).expect("shape");
    let params = CrfParams {
        transitions: draw(k * k),
        start: draw(k),
        stop: draw(k),
        mask: TransitionMask::all_legal(k),
    };
    (emissions, params)
}

fn crf_oracle(rng: &mut impl Rng, instances: usize) -> Result<String, String> {
    for i in 0..instances {
        let (t, k) = (rng.random_range(1..=5), rng.random_range(2..=4));
        let (e, p) = random_crf(rng, t, k);
        let z = log_partition(&e, &p).map_err(|e| e.to_string())?;
        let z_ref = reference::log_partition(&e, &p);
        ensure((z - z_ref).abs() <= 1e-9 * z_ref.abs().max(1.0), || {
            format!("instance {i}: log Z {z} vs {z_ref}")
        })?;
        let (path, score) = viterbi_decode(&e, &p).map_err(|e| e.to_string())?;
        let (path_ref, score_ref) = reference::best_path(&e, &p).ok_or("no legal path")?;
        ensure(path == path_ref && score == score_ref, || {
            format!("instance {i}: viterbi differs")
        })?;
        let m = forward_backward_marginals(&e, &p).map_err(|e| e.to_string())?;
        let m_ref = reference::marginals(&e, &p);
        let worst = m
            .iter()
            .flatten()
            .zip(m_ref.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        ensure(worst <= 1e-9, || {
            format!("instance {i}: marginals differ by {worst:e}")
        })?;
    }
    Ok(format!("{instances} instances"))
}

fn crf_gradient(rng: &mut impl Rng, instances: usize) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (e, p) = random_crf(rng, 4, 4);
        let gold: Vec<usize> = (0..4).map(|_| rng.random_range(0..4)).collect();
        let g = crf_nll_grad(&e, &p, &gold).map_err(|e| e.to_string())?;
        let numeric = finite_diff_grad(
            |x| {
                let e = EmissionMatrix::new(4, x.to_vec()).expect("shape");
                crf_nll_grad(&e, &p, &gold).expect("legal").nll
            },
            e.as_slice(),
            1e-6,
        );
        worst = worst.max(max_relative_error(&g.emissions, &numeric));
    }
    ensure(worst <= 1e-5, || format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.2e}"))
}

fn lstm_gradient(rng: &mut ChaCha8Rng, instances: usize) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let lstm = Lstm::new("lstm", 3, 2, rng);
        let xs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let (hs, cache) = lstm.forward_seq(&xs, false).map_err(|e| e.to_string())?;
        let ones: Vec<Vec<f64>> = hs.iter().map(|h| vec![1.0; h.len()]).collect();
        let mut grad = lstm.zeros_like();
        lstm.backward_seq(&cache, &ones, &mut grad);
        let numeric = finite_diff_grad(
            |flat| {
                let mut l = lstm.clone();
                l.assign_flat(flat);
                l.forward_seq(&xs, false)
                    .expect("shape")
                    .0
                    .iter()
                    .flatten()
                    .sum()
            },
            &lstm.flatten(),
            1e-6,
        );
        worst = worst.max(max_relative_error(&grad.flatten(), &numeric));
    }
    ensure(worst <= 1e-5, || format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.2e}"))
}

fn model_gradient(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let config = ModelConfig {
        word_dim: 6,
        word_source: WordSource::Hash { seed: 5 },
        char_encoder: CharEncoderConfig {
            char_dim: 3,
            filters: 2,
            kernels: vec![3, 5, 7],
            output_dim: 4,
        },
        max_word_len: 7,
        bilstm1_units: 3,
        bilstm2_units: 2,
        ..ModelConfig::default()
    };
    let mut bundle = init_model(&config, rng.random()).map_err(|e| e.to_string())?;
    // Non-zero transition scores so their gradients are exercised too.
    for v in &mut bundle.params.crf_transitions.values {
        *v = rng.random_range(-0.5..0.5);
    }
    let provider = bundle.builtin_provider().expect("hash source");
    let tokens: Vec<String> = ["chest", "pain", "CBC"].map(String::from).to_vec();
    let features = bundle
        .features(0, &tokens, &provider)
        .map_err(|e| e.to_string())?;
    let gold = bundle
        .tag_set()
        .encode(&parse_tags("B-problem I-problem B-test").expect("tags"))
        .map_err(|e| e.to_string())?;
    let mut grads = bundle.params.zeros_like();
    sentence_loss(&bundle, &features, &gold, &mut Mode::Eval, &mut grads)
        .map_err(|e| e.to_string())?;
    let numeric = finite_diff_grad(
        |flat| {
            let mut b = bundle.clone();
            b.params.assign_flat(flat);
            let mut scratch = b.params.zeros_like();
            sentence_loss(&b, &features, &gold, &mut Mode::Eval, &mut scratch).expect("loss")
        },
        &bundle.params.flatten(),
        1e-6,
    );
    let worst = max_relative_error(&grads.flatten(), &numeric);
    ensure(worst <= 1e-5, || format!("max relative error {worst:e}"))?;
    Ok(format!(
        "{} parameters, max relative error {worst:.2e}",
        numeric.len()
    ))
}

fn golden() -> Result<String, String> {
    let cfg = RelabelConfig::default();
    let rows = [
        (
            "a bacterial superinfection",
            "B-problem I-problem I-problem",
            "O B-problem I-problem",
        ),
        (
            "Patient 's neurologic exam",
            "B-test I-test I-test I-test",
            "O O B-test I-test",
        ),
    ];
    for (text, before, after) in rows {
        let tokens: Vec<String> = text.split(' ').map(String::from).collect();
        let tags = parse_tags(before).map_err(|e| e.to_string())?;
        let (out, _) = relabel_sentence(&tokens, &tags, &cfg).map_err(|e| e.to_string())?;
        let want: Vec<Tag> = parse_tags(after).map_err(|e| e.to_string())?;
        ensure(out == want, || format!("relabel `{text}` gave {out:?}"))?;
    }
    for (word, index) in [("a", 6), ("c5-6", 5)] {
        let got = writing_format(word).index();
        ensure(got == index, || {
            format!("writing format of `{word}` is {got}, expected {index}")
        })?;
    }
    Ok("relabel and writing-format examples".into())
}

fn roundtrips(seed: u64) -> Result<String, String> {
    let corpus = template_corpus(20, seed);
    let reparsed = parse_conll(&write_conll(&corpus)).map_err(|e| e.to_string())?;
    ensure(reparsed.sentences == corpus.sentences, || {
        "CoNLL roundtrip changed the corpus".into()
    })?;
    for (i, s) in corpus.sentences.iter().enumerate() {
        let spans = iob_to_spans(&s.tags, i).map_err(|e| e.to_string())?;
        let tags = spans_to_iob(s.len(), &spans).map_err(|e| e.to_string())?;
        ensure(tags == s.tags, || {
            format!("span roundtrip changed sentence {i}")
        })?;
    }
    let config = ModelConfig {
        word_dim: 4,
        word_source: WordSource::Hash { seed },
        char_encoder: CharEncoderConfig {
            char_dim: 2,
            filters: 2,
            kernels: vec![3],
            output_dim: 3,
        },
        max_word_len: 5,
        bilstm1_units: 2,
        bilstm2_units: 2,
        ..ModelConfig::default()
    };
    let bundle = init_model(&config, seed).map_err(|e| e.to_string())?;
    let bytes = model_to_bytes(&bundle);
    let back = model_from_bytes(&bytes).map_err(|e| e.to_string())?;
    ensure(back == bundle && model_to_bytes(&back) == bytes, || {
        "model file roundtrip differs".into()
    })?;
    Ok("CoNLL, spans and model file".into())
}
