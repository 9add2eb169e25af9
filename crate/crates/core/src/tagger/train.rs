use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sentence_loss, tag_features, ModelBundle, TaggerError};
use crate::corpus::TaggedCorpus;
use crate::eval::entity_prf;
use crate::features::WordVectorProvider;
use crate::neural::{nadam_step, Mode, NadamConfig, OptimizerState, Params};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Seeds sentence shuffling and dropout masks.
    pub seed: u64,
    /// Stop after this many epochs without a validation F1 improvement.
    /// Ignored without validation data.
    pub patience: Option<usize>,
    /// Stop as soon as validation F1 reaches this value.
    pub target_f1: Option<f64>,
}

impl TrainOptions {
    pub fn from_bundle(bundle: &ModelBundle) -> Self {
        TrainOptions {
            epochs: bundle.config.epochs,
            learning_rate: bundle.config.learning_rate,
            seed: bundle.config.seed,
            patience: None,
            target_f1: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-sentence negative log-likelihood.
    pub nll: f64,
    pub validation_f1: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
    pub best_validation_f1: Option<f64>,
    pub stopped_early: bool,
    pub seconds: f64,
}

impl TrainReport {
    pub fn epoch_nll(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.nll).collect()
    }
}

/// Trains `bundle` in place; see [`train_with_callback`].
pub fn train(
    bundle: &mut ModelBundle,
    corpus: &TaggedCorpus,
    provider: &WordVectorProvider,
    validation: Option<(&TaggedCorpus, &WordVectorProvider)>,
    options: &TrainOptions,
) -> Result<TrainReport, TaggerError> {
    train_with_callback(bundle, corpus, provider, validation, options, |_| {})
}

/// Trains with one Nadam step per sentence, visiting sentences in a freshly
/// shuffled order each epoch.
///
/// With validation data the parameters of the best-scoring epoch are kept.
/// `on_epoch` is called after every epoch.
pub fn train_with_callback(
    bundle: &mut ModelBundle,
    corpus: &TaggedCorpus,
    provider: &WordVectorProvider,
    validation: Option<(&TaggedCorpus, &WordVectorProvider)>,
    options: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport, TaggerError> {
    let start = Instant::now();
    let tag_set = bundle.tag_set();
    let features = bundle.corpus_features(corpus, provider)?;
    let gold = corpus
        .sentences
        .iter()
        .map(|s| tag_set.encode(&s.tags))
        .collect::<Result<Vec<_>, _>>()?;
    let validation = match validation {
        Some((c, p)) => Some((c, bundle.corpus_features(c, p)?)),
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut state = OptimizerState::new(&bundle.params, NadamConfig::default());
    let mut grads = bundle.params.zeros_like();
    let mut order: Vec<usize> = (0..corpus.len())
        .filter(|&i| !corpus.sentences[i].is_empty())
        .collect();

    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, super::ModelParams)> = None;
    let mut stopped_early = false;
    for epoch in 1..=options.epochs {
        let epoch_start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            grads.fill_zero();
            let nll = sentence_loss(
                bundle,
                &features[i],
                &gold[i],
                &mut Mode::Train(&mut rng),
                &mut grads,
            )
            .map_err(|e| TaggerError::Sentence {
                sentence: i,
                source: Box::new(e),
            })?;
            if !nll.is_finite() {
                return Err(TaggerError::NonFiniteLoss { epoch, sentence: i });
            }
            nadam_step(
                &mut bundle.params,
                &grads,
                &mut state,
                options.learning_rate,
            )
            .map_err(|_| TaggerError::NonFiniteLoss { epoch, sentence: i })?;
            total += nll;
        }
        let validation_f1 = match &validation {
            Some((c, f)) => Some(entity_prf(c, &tag_features(bundle, c, f)?)?.micro.f1),
            None => None,
        };
        let stats = EpochStats {
            epoch,
            nll: total / order.len().max(1) as f64,
            validation_f1,
            seconds: epoch_start.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        epochs.push(stats);

        if let Some(f1) = validation_f1 {
            if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
                best = Some((f1, epoch, bundle.params.clone()));
            }
            let (best_f1, best_epoch, _) = best.as_ref().expect("set above");
            let reached = options.target_f1.is_some_and(|t| *best_f1 >= t);
            let stale = options.patience.is_some_and(|p| epoch - best_epoch >= p);
            if (reached || stale) && epoch < options.epochs {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_epoch, best_validation_f1) = match best {
        Some((f1, epoch, params)) => {
            bundle.params = params;
            (epoch, Some(f1))
        }
        None => (epochs.len(), None),
    };
    Ok(TrainReport {
        epochs,
        best_epoch,
        best_validation_f1,
        stopped_early,
        seconds: start.elapsed().as_secs_f64(),
    })
}
