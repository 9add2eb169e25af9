//! The full tagger: word, character-CNN and writing-format features are
//! concatenated per token, passed through two stacked BiLSTMs with dropout,
//! projected to per-tag emission scores, and decoded by a linear-chain CRF.

mod io;
mod train;

pub use io::{load_model, model_from_bytes, model_to_bytes, save_model, MAGIC};
pub use train::{train, train_with_callback, EpochStats, TrainOptions, TrainReport};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{default_label_set, CorpusError, Sentence, Tag, TagSet, TaggedCorpus};
use crate::crf::{
    crf_nll_grad, forward_backward_marginals, viterbi_decode, CrfError, CrfParams, EmissionMatrix,
    TransitionMask,
};
use crate::eval::EvalError;
use crate::features::{
    assemble_features, char_vocab, FeatureError, TokenFeatures, WordFeature, WordLookup,
    WordSource, WordVectorProvider, DEFAULT_MAX_WORD_LEN, FORMAT_DIM,
};
use crate::neural::{
    BiLstm, BiLstmCache, CharEncoder, CharEncoderCache, CharEncoderConfig, Dense, Mode,
    NeuralError, ParamTensor, Params,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("sentence {sentence}: {source}")]
    Sentence {
        sentence: usize,
        #[source]
        source: Box<TaggerError>,
    },
    #[error("non-finite loss at epoch {epoch}, sentence {sentence}")]
    NonFiniteLoss { epoch: usize, sentence: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Architecture and training hyperparameters. Defaults are the final
/// configuration of the clinical tagger (2×BiLSTM 275/100, dropout
/// 0.25/0.50, Nadam at 0.02 for 200 epochs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub label_set: Vec<String>,
    pub word_dim: usize,
    pub word_source: WordSource,
    pub char_encoder: CharEncoderConfig,
    pub max_word_len: usize,
    pub format_dim: usize,
    pub bilstm1_units: usize,
    pub bilstm2_units: usize,
    /// Dropout on the first BiLSTM's outputs.
    pub bilstm_dropout: f64,
    /// Dropout on the second BiLSTM's outputs.
    pub dropout: f64,
    /// Dropout at the end of the character encoder.
    pub char_dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: String,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            label_set: default_label_set(),
            word_dim: 768,
            word_source: WordSource::File,
            char_encoder: CharEncoderConfig::default(),
            max_word_len: DEFAULT_MAX_WORD_LEN,
            format_dim: FORMAT_DIM,
            bilstm1_units: 275,
            bilstm2_units: 100,
            bilstm_dropout: 0.25,
            dropout: 0.50,
            char_dropout: 0.50,
            learning_rate: 0.02,
            epochs: 200,
            optimizer: "nadam".to_string(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), TaggerError> {
        let fail = |m: &str| Err(TaggerError::Config(m.to_string()));
        if self.label_set.is_empty() {
            return fail("label_set is empty");
        }
        for (i, c) in self.label_set.iter().enumerate() {
            if c.is_empty() || c.chars().any(char::is_whitespace) || self.label_set[..i].contains(c)
            {
                return fail(&format!("bad or duplicate class `{c}`"));
            }
        }
        let ce = &self.char_encoder;
        let dims = [
            ("word_dim", self.word_dim),
            ("char_encoder.char_dim", ce.char_dim),
            ("char_encoder.filters", ce.filters),
            ("char_encoder.output_dim", ce.output_dim),
            ("bilstm1_units", self.bilstm1_units),
            ("bilstm2_units", self.bilstm2_units),
            ("epochs", self.epochs),
        ];
        for (name, v) in dims {
            if v == 0 {
                return fail(&format!("{name} must be positive"));
            }
        }
        if ce.kernels.is_empty() || ce.kernels.contains(&0) {
            return fail("char_encoder.kernels must be non-empty and positive");
        }
        if self.max_word_len < ce.max_kernel() {
            return fail(&format!(
                "max_word_len {} is shorter than the widest kernel {}",
                self.max_word_len,
                ce.max_kernel()
            ));
        }
        if self.format_dim != FORMAT_DIM {
            return fail("format_dim must be 8");
        }
        for (name, r) in [
            ("bilstm_dropout", self.bilstm_dropout),
            ("dropout", self.dropout),
            ("char_dropout", self.char_dropout),
        ] {
            if !(0.0..1.0).contains(&r) {
                return fail(&format!("{name} must lie in [0, 1)"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.optimizer != "nadam" {
            return fail("only the `nadam` optimizer is supported");
        }
        Ok(())
    }

    pub fn tag_set(&self) -> TagSet {
        TagSet::new(&self.label_set)
    }

    pub fn input_dim(&self) -> usize {
        self.word_dim + self.char_encoder.output_dim + self.format_dim
    }
}

/// Every learned tensor of the tagger.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub word_lookup: Option<ParamTensor>,
    pub char_encoder: CharEncoder,
    pub bilstm1: BiLstm,
    pub bilstm2: BiLstm,
    pub projection: Dense,
    pub crf_transitions: ParamTensor,
    pub crf_start: ParamTensor,
    pub crf_stop: ParamTensor,
}

impl Params for ModelParams {
    fn tensors(&self) -> Vec<&ParamTensor> {
        let mut out: Vec<&ParamTensor> = self.word_lookup.iter().collect();
        out.extend(self.char_encoder.tensors());
        out.extend(self.bilstm1.tensors());
        out.extend(self.bilstm2.tensors());
        out.extend(self.projection.tensors());
        out.extend([&self.crf_transitions, &self.crf_start, &self.crf_stop]);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out: Vec<&mut ParamTensor> = self.word_lookup.iter_mut().collect();
        out.extend(self.char_encoder.tensors_mut());
        out.extend(self.bilstm1.tensors_mut());
        out.extend(self.bilstm2.tensors_mut());
        out.extend(self.projection.tensors_mut());
        out.extend([
            &mut self.crf_transitions,
            &mut self.crf_start,
            &mut self.crf_stop,
        ]);
        out
    }
}

/// A configured model with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub format_version: u32,
}

/// Builds a model with freshly initialized parameters; `seed` is recorded in
/// the config.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelBundle, TaggerError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = config.tag_set().len();
    let word_lookup = match &config.word_source {
        WordSource::Lookup { vocab } => Some(ParamTensor::glorot(
            "word_lookup",
            &[vocab.len() + 1, config.word_dim],
            vocab.len() + 1,
            config.word_dim,
            &mut rng,
        )),
        _ => None,
    };
    let char_encoder = CharEncoder::new("char", &config.char_encoder, &mut rng);
    let bilstm1 = BiLstm::new(
        "bilstm1",
        config.input_dim(),
        config.bilstm1_units,
        &mut rng,
    );
    let bilstm2 = BiLstm::new(
        "bilstm2",
        2 * config.bilstm1_units,
        config.bilstm2_units,
        &mut rng,
    );
    let projection = Dense::new("projection", 2 * config.bilstm2_units, k, &mut rng);
    let mut config = config.clone();
    config.seed = seed;
    Ok(ModelBundle {
        config,
        params: ModelParams {
            word_lookup,
            char_encoder,
            bilstm1,
            bilstm2,
            projection,
            crf_transitions: ParamTensor::zeros("crf.transitions", &[k, k]),
            crf_start: ParamTensor::zeros("crf.start", &[k]),
            crf_stop: ParamTensor::zeros("crf.stop", &[k]),
        },
        format_version: FORMAT_VERSION,
    })
}

/// Activations kept from [`model_forward`] for [`model_backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    word_rows: Vec<Option<usize>>,
    chars: Vec<CharEncoderCache>,
    bilstm1: BiLstmCache,
    mask1: Vec<Option<Vec<f64>>>,
    bilstm2: BiLstmCache,
    mask2: Vec<Option<Vec<f64>>>,
    h2: Vec<Vec<f64>>,
}

fn masked(
    rows: Vec<Vec<f64>>,
    mode: &mut Mode<'_>,
    rate: f64,
) -> (Vec<Vec<f64>>, Vec<Option<Vec<f64>>>) {
    let mut masks = Vec::with_capacity(rows.len());
    let out = rows
        .into_iter()
        .map(|mut r| {
            let m = mode.mask(r.len(), rate);
            if let Some(m) = &m {
                r.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
            }
            masks.push(m);
            r
        })
        .collect();
    (out, masks)
}

fn unmask(rows: &mut [Vec<f64>], masks: &[Option<Vec<f64>>]) {
    for (r, m) in rows.iter_mut().zip(masks) {
        if let Some(m) = m {
            r.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
        }
    }
}

impl ModelBundle {
    pub fn tag_set(&self) -> TagSet {
        self.config.tag_set()
    }

    pub fn crf_params(&self) -> CrfParams {
        CrfParams {
            transitions: self.params.crf_transitions.values.clone(),
            start: self.params.crf_start.values.clone(),
            stop: self.params.crf_stop.values.clone(),
            mask: TransitionMask::iob(&self.tag_set()),
        }
    }

    /// The provider implied by the config for hash and lookup sources; file
    /// sources need the caller's embedding file.
    pub fn builtin_provider(&self) -> Option<WordVectorProvider> {
        match &self.config.word_source {
            WordSource::File => None,
            WordSource::Hash { seed } => Some(WordVectorProvider::Hash {
                dim: self.config.word_dim,
                seed: *seed,
            }),
            WordSource::Lookup { vocab } => Some(WordVectorProvider::Lookup(WordLookup::new(
                self.config.word_dim,
                vocab.clone(),
            ))),
        }
    }

    pub fn check_provider(&self, provider: &WordVectorProvider) -> Result<(), TaggerError> {
        if provider.dim() != self.config.word_dim {
            return Err(TaggerError::Config(format!(
                "word vectors have dimension {}, model expects {}",
                provider.dim(),
                self.config.word_dim
            )));
        }
        let rows = self.params.word_lookup.as_ref().map(|t| t.shape[0]);
        match (provider, rows) {
            (WordVectorProvider::Lookup(l), Some(r)) if l.rows() == r => Ok(()),
            (WordVectorProvider::Lookup(_), _) => Err(TaggerError::Config(
                "lookup provider does not match the model's word table".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Features of sentence `sentence_id`, using this model's word length.
    pub fn features(
        &self,
        sentence_id: usize,
        tokens: &[String],
        provider: &WordVectorProvider,
    ) -> Result<Vec<TokenFeatures>, TaggerError> {
        Ok(assemble_features(
            sentence_id,
            tokens,
            provider,
            char_vocab(),
            self.config.max_word_len,
        )?)
    }

    pub fn corpus_features(
        &self,
        corpus: &TaggedCorpus,
        provider: &WordVectorProvider,
    ) -> Result<Vec<Vec<TokenFeatures>>, TaggerError> {
        self.check_provider(provider)?;
        corpus
            .sentences
            .iter()
            .enumerate()
            .map(|(i, s)| self.features(i, &s.tokens, provider))
            .collect()
    }
}

/// Computes emission scores `[T × K]` for one sentence.
pub fn model_forward(
    bundle: &ModelBundle,
    features: &[TokenFeatures],
    mode: &mut Mode<'_>,
) -> Result<(EmissionMatrix, ForwardCache), TaggerError> {
    let cfg = &bundle.config;
    let p = &bundle.params;
    if features.is_empty() {
        return Err(CrfError::Empty.into());
    }
    let mut inputs = Vec::with_capacity(features.len());
    let mut word_rows = Vec::with_capacity(features.len());
    let mut chars = Vec::with_capacity(features.len());
    for f in features {
        let mut x = Vec::with_capacity(cfg.input_dim());
        match (&f.word, &p.word_lookup) {
            (WordFeature::Dense(v), _) => {
                x.extend_from_slice(v);
                word_rows.push(None);
            }
            (WordFeature::Row(r), Some(table)) if *r < table.shape[0] => {
                x.extend_from_slice(&table.values[r * cfg.word_dim..(r + 1) * cfg.word_dim]);
                word_rows.push(Some(*r));
            }
            (WordFeature::Row(_), _) => {
                return Err(TaggerError::Config(
                    "word table row out of range or model has no word table".into(),
                ))
            }
        }
        if x.len() != cfg.word_dim {
            return Err(TaggerError::Config(format!(
                "word vector has {} components, model expects {}",
                x.len(),
                cfg.word_dim
            )));
        }
        let (c, cache) = p
            .char_encoder
            .forward(&f.chars.indices, mode, cfg.char_dropout)?;
        x.extend(c);
        x.extend(f.format.onehot());
        inputs.push(x);
        chars.push(cache);
    }
    let (h1, bilstm1) = p.bilstm1.forward(&inputs)?;
    let (h1, mask1) = masked(h1, mode, cfg.bilstm_dropout);
    let (h2, bilstm2) = p.bilstm2.forward(&h1)?;
    let (h2, mask2) = masked(h2, mode, cfg.dropout);
    let k = p.projection.outputs();
    let mut scores = Vec::with_capacity(h2.len() * k);
    for h in &h2 {
        scores.extend(p.projection.forward(h)?);
    }
    let emissions = EmissionMatrix::new(k, scores)?;
    Ok((
        emissions,
        ForwardCache {
            word_rows,
            chars,
            bilstm1,
            mask1,
            bilstm2,
            mask2,
            h2,
        },
    ))
}

/// Backpropagates `dL/d(emissions)` through the network, accumulating into `grads`.
pub fn model_backward(
    bundle: &ModelBundle,
    cache: &ForwardCache,
    d_emissions: &[f64],
    grads: &mut ModelParams,
) {
    let cfg = &bundle.config;
    let p = &bundle.params;
    let k = p.projection.outputs();
    let mut d_h2: Vec<Vec<f64>> = cache
        .h2
        .iter()
        .zip(d_emissions.chunks_exact(k))
        .map(|(h, d)| p.projection.backward(h, d, &mut grads.projection))
        .collect();
    unmask(&mut d_h2, &cache.mask2);
    let mut d_h1 = p
        .bilstm2
        .backward(&cache.bilstm2, &d_h2, &mut grads.bilstm2);
    unmask(&mut d_h1, &cache.mask1);
    let d_inputs = p
        .bilstm1
        .backward(&cache.bilstm1, &d_h1, &mut grads.bilstm1);
    let wd = cfg.word_dim;
    let cd = cfg.char_encoder.output_dim;
    for ((dx, char_cache), row) in d_inputs.iter().zip(&cache.chars).zip(&cache.word_rows) {
        if let (Some(r), Some(table)) = (row, grads.word_lookup.as_mut()) {
            for (g, d) in table.values[r * wd..(r + 1) * wd].iter_mut().zip(&dx[..wd]) {
                *g += d;
            }
        }
        p.char_encoder
            .backward(char_cache, &dx[wd..wd + cd], &mut grads.char_encoder);
    }
}

/// CRF negative log-likelihood of `gold` (tag indices) and its gradient with
/// respect to every parameter.
pub fn sentence_loss(
    bundle: &ModelBundle,
    features: &[TokenFeatures],
    gold: &[usize],
    mode: &mut Mode<'_>,
    grads: &mut ModelParams,
) -> Result<f64, TaggerError> {
    let (emissions, cache) = model_forward(bundle, features, mode)?;
    let g = crf_nll_grad(&emissions, &bundle.crf_params(), gold)?;
    let acc = |dst: &mut ParamTensor, src: &[f64]| {
        dst.values.iter_mut().zip(src).for_each(|(a, b)| *a += b)
    };
    acc(&mut grads.crf_transitions, &g.transitions);
    acc(&mut grads.crf_start, &g.start);
    acc(&mut grads.crf_stop, &g.stop);
    model_backward(bundle, &cache, &g.emissions, grads);
    Ok(g.nll)
}

/// Viterbi-decoded tags for one sentence's features.
pub fn predict_features(
    bundle: &ModelBundle,
    features: &[TokenFeatures],
) -> Result<Vec<Tag>, TaggerError> {
    if features.is_empty() {
        return Ok(Vec::new());
    }
    let (emissions, _) = model_forward(bundle, features, &mut Mode::Eval)?;
    let (path, _) = viterbi_decode(&emissions, &bundle.crf_params())?;
    Ok(bundle.tag_set().decode(&path))
}

/// Decoded tags plus per-token tag posteriors.
pub fn predict_with_marginals(
    bundle: &ModelBundle,
    features: &[TokenFeatures],
) -> Result<(Vec<Tag>, Vec<Vec<f64>>), TaggerError> {
    let (emissions, _) = model_forward(bundle, features, &mut Mode::Eval)?;
    let crf = bundle.crf_params();
    let (path, _) = viterbi_decode(&emissions, &crf)?;
    let marginals = forward_backward_marginals(&emissions, &crf)?;
    Ok((bundle.tag_set().decode(&path), marginals))
}

/// Tags sentence `sentence_id` of a corpus.
pub fn predict(
    bundle: &ModelBundle,
    sentence_id: usize,
    tokens: &[String],
    provider: &WordVectorProvider,
) -> Result<Vec<Tag>, TaggerError> {
    bundle.check_provider(provider)?;
    let features = bundle.features(sentence_id, tokens, provider)?;
    predict_features(bundle, &features)
}

pub fn predict_corpus(
    bundle: &ModelBundle,
    corpus: &TaggedCorpus,
    provider: &WordVectorProvider,
) -> Result<TaggedCorpus, TaggerError> {
    let features = bundle.corpus_features(corpus, provider)?;
    tag_features(bundle, corpus, &features)
}

pub(crate) fn tag_features(
    bundle: &ModelBundle,
    corpus: &TaggedCorpus,
    features: &[Vec<TokenFeatures>],
) -> Result<TaggedCorpus, TaggerError> {
    let sentences = corpus
        .sentences
        .iter()
        .zip(features)
        .enumerate()
        .map(|(i, (s, f))| {
            let tags = predict_features(bundle, f).map_err(|e| TaggerError::Sentence {
                sentence: i,
                source: Box::new(e),
            })?;
            Ok(Sentence {
                tokens: s.tokens.clone(),
                tags,
            })
        })
        .collect::<Result<Vec<_>, TaggerError>>()?;
    Ok(TaggedCorpus {
        sentences,
        label_set: bundle.config.label_set.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::is_valid_iob;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            word_dim: 6,
            word_source: WordSource::Hash { seed: 9 },
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

    fn tokens(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn default_config_matches_final_hyperparameters() {
        let c = ModelConfig::default();
        assert_eq!((c.bilstm1_units, c.bilstm2_units), (275, 100));
        assert_eq!((c.bilstm_dropout, c.dropout), (0.25, 0.5));
        assert_eq!((c.learning_rate, c.epochs), (0.02, 200));
        assert_eq!(c.char_encoder.filters, 15);
        assert_eq!(c.char_encoder.kernels, [3, 5, 7]);
        assert_eq!(c.char_encoder.output_dim, 45);
        assert_eq!(c.optimizer, "nadam");
        c.validate().unwrap();
    }

    #[test]
    fn default_shapes() {
        let b = init_model(&ModelConfig::default(), 1).unwrap();
        assert_eq!(b.params.projection.weight.shape, [200, 7]);
        assert_eq!(
            b.params.bilstm1.forward.input_weight.shape,
            [768 + 45 + 8, 4 * 275]
        );
        assert_eq!(b.params.bilstm2.forward.input_weight.shape, [550, 400]);
        assert_eq!(b.params.crf_transitions.shape, [7, 7]);
    }

    #[test]
    fn seeds_determine_parameters() {
        let cfg = tiny_config();
        assert_eq!(init_model(&cfg, 1).unwrap(), init_model(&cfg, 1).unwrap());
        assert_ne!(
            init_model(&cfg, 1).unwrap().params,
            init_model(&cfg, 2).unwrap().params
        );
    }

    #[test]
    fn invalid_configs() {
        let mut c = tiny_config();
        c.max_word_len = 5;
        assert!(init_model(&c, 0).is_err());
        let mut c = tiny_config();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.label_set = vec!["a".into(), "a".into()];
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.optimizer = "sgd".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn forward_shape_and_eval_determinism() {
        let b = init_model(&tiny_config(), 3).unwrap();
        let provider = b.builtin_provider().unwrap();
        let f = b.features(0, &tokens("chest pain"), &provider).unwrap();
        let (e1, _) = model_forward(&b, &f, &mut Mode::Eval).unwrap();
        let (e2, _) = model_forward(&b, &f, &mut Mode::Eval).unwrap();
        assert_eq!(e1.len(), 2);
        assert_eq!(e1.num_tags(), 7);
        assert_eq!(e1, e2);
    }

    #[test]
    fn untrained_predictions_are_legal() {
        let b = init_model(&tiny_config(), 4).unwrap();
        let provider = b.builtin_provider().unwrap();
        for s in [
            "a",
            "the patient has chest pain",
            "CBC 12.5 x-ray c5-6 herniation , .",
        ] {
            let tags = predict(&b, 0, &tokens(s), &provider).unwrap();
            assert_eq!(tags.len(), tokens(s).len());
            assert!(is_valid_iob(&tags));
        }
    }

    #[test]
    fn provider_dimension_is_checked() {
        let b = init_model(&tiny_config(), 4).unwrap();
        let wrong = WordVectorProvider::Hash { dim: 5, seed: 9 };
        assert!(matches!(
            predict(&b, 0, &tokens("x"), &wrong),
            Err(TaggerError::Config(_))
        ));
    }
}
