//! Glue between trajectories, the model and the metrics: labeled examples,
//! corpus evaluation and top-k recognition.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctc::ctc_greedy_decode;
use crate::error::{Error, Result};
use crate::metrics::{edit_ops, MetricsReport, SampleReport};
use crate::model::{Decoder, Model, Target};
use crate::trajectory::{featurize, FeatureSequence, Trajectory};
use crate::vocab::{VocabKind, Vocabulary};

/// A featurized, labeled sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: FeatureSequence,
    pub target: Target,
    pub label: String,
}

impl Example {
    /// Reference symbol sequence used for metrics.
    pub fn reference(&self) -> Vec<usize> {
        match &self.target {
            Target::Class(k) => vec![*k],
            Target::Sequence(seq) => seq.symbols.clone(),
        }
    }
}

/// Featurizes a labeled corpus. Errors name the 0-based sample index.
pub fn prepare_examples(
    corpus: &[Trajectory],
    vocab: &Vocabulary,
    spacing: f64,
) -> Result<Vec<Example>> {
    corpus
        .par_iter()
        .enumerate()
        .map(|(i, traj)| {
            let label = traj
                .label
                .clone()
                .ok_or_else(|| Error::UnknownLabel(format!("sample {i} has no label")))?;
            let target = match vocab.kind() {
                VocabKind::Class => Target::Class(vocab.class_of(&label)?),
                VocabKind::Ctc => Target::Sequence(vocab.encode(&label)?),
            };
            Ok(Example {
                features: featurize(traj, spacing)?,
                target,
                label,
            })
        })
        .collect()
}

/// Greedy prediction as symbol indices: top-1 class, or the collapsed CTC path.
pub fn predict_symbols(model: &Model, features: &FeatureSequence) -> Result<Vec<usize>> {
    match model.config().decoder {
        Decoder::Fc { .. } => Ok(vec![model.predict(features)?.argmax()]),
        Decoder::Ctc => Ok(ctc_greedy_decode(&model.frame_log_posteriors(features)?)),
    }
}

/// Metrics over prepared examples, micro-averaged.
pub fn evaluate_examples(
    model: &Model,
    vocab: &Vocabulary,
    examples: &[Example],
    keep_samples: bool,
) -> Result<MetricsReport> {
    let samples = examples
        .par_iter()
        .enumerate()
        .map(|(index, ex)| {
            let predicted = predict_symbols(model, &ex.features)?;
            Ok(SampleReport {
                index,
                label: ex.label.clone(),
                prediction: vocab.decode(&predicted),
                stats: edit_ops(&ex.reference(), &predicted),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::aggregate(samples, keep_samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: String,
    pub prob: f64,
}

/// A frozen model with its vocabulary and preprocessing settings.
#[derive(Debug, Clone)]
pub struct Recognizer {
    model: Model,
    vocab: Vocabulary,
    spacing: f64,
}

impl Recognizer {
    pub fn new(model: Model, vocab: Vocabulary, spacing: f64) -> Result<Self> {
        let expected = match model.config().decoder {
            Decoder::Fc { .. } => VocabKind::Class,
            Decoder::Ctc => VocabKind::Ctc,
        };
        if vocab.kind() != expected || vocab.len() != model.config().num_classes {
            return Err(Error::ConfigMismatch(format!(
                "vocabulary of {} {:?} symbols does not fit a model with {} outputs",
                vocab.len(),
                vocab.kind(),
                model.config().num_classes
            )));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "spacing must be positive, got {spacing}"
            )));
        }
        Ok(Self {
            model,
            vocab,
            spacing,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Up to `topk` candidates, most probable first. A CTC model yields its
    /// single greedy transcription, scored by the product of the frame maxima.
    pub fn recognize(&self, traj: &Trajectory, topk: usize) -> Result<Vec<Candidate>> {
        let features = featurize(traj, self.spacing)?;
        match self.model.config().decoder {
            Decoder::Fc { .. } => {
                let prediction = self.model.predict(&features)?;
                if !prediction.probabilities.iter().all(|p| p.is_finite()) {
                    return Err(crate::tensor::TensorError::NumericFailure(
                        "non-finite class probability".into(),
                    )
                    .into());
                }
                Ok(prediction
                    .top_k(topk)
                    .into_iter()
                    .map(|(k, prob)| Candidate {
                        label: self.vocab.symbol(k).unwrap_or_default().to_string(),
                        prob,
                    })
                    .collect())
            }
            Decoder::Ctc => {
                let logp = self.model.frame_log_posteriors(&features)?;
                let score: f64 = (0..logp.rows())
                    .map(|r| {
                        logp.row(r)
                            .iter()
                            .cloned()
                            .fold(f64::NEG_INFINITY, f64::max)
                    })
                    .sum();
                let label = self.vocab.decode(&ctc_greedy_decode(&logp));
                Ok(vec![Candidate {
                    label,
                    prob: score.exp(),
                }]
                .into_iter()
                .take(topk)
                .collect())
            }
        }
    }

    /// Featurizes and evaluates a labeled corpus.
    pub fn evaluate_corpus(
        &self,
        corpus: &[Trajectory],
        keep_samples: bool,
    ) -> Result<MetricsReport> {
        if corpus.is_empty() {
            return Err(Error::EmptyInput("empty corpus".into()));
        }
        let examples = prepare_examples(corpus, &self.vocab, self.spacing)?;
        evaluate_examples(&self.model, &self.vocab, &examples, keep_samples)
    }
}
