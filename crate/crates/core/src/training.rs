//! Mini-batch training with loss-plateau early stopping, and held-out
//! evaluation.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Optimizer, Tape};
use crate::lexicon::{word_graphemes, Lexicon, PhonemeSequence};
use crate::metrics::{aggregate, EvalReport, MetricsError, WordScore};
use crate::models::{ModelError, Seq2SeqModel};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_WINDOW: usize = 50;
pub const DEFAULT_THRESHOLD: f64 = 0.01;
pub const DEFAULT_SMOOTHING: usize = 10;

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;
const DECODE_CHUNK: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error("no usable training pairs")]
    NoData,
    #[error("lexicon symbol {0:?} is missing from the model vocabulary")]
    VocabMismatch(String),
    #[error("test word {0:?} also appears in the training data")]
    Overlap(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Independent sub-seed for a numbered stream (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        ^ stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Overrides the genome's batch gene when set.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub seed: u64,
    pub early_stopping: bool,
    pub early_stop_window: usize,
    pub early_stop_threshold: f64,
    /// Moving-average width applied to per-step losses before the window test.
    pub loss_smoothing: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 20,
            batch_size: None,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: 0,
            early_stopping: true,
            early_stop_window: DEFAULT_WINDOW,
            early_stop_threshold: DEFAULT_THRESHOLD,
            loss_smoothing: DEFAULT_SMOOTHING,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if self.early_stop_window < 2 {
            return bad("early-stop window must be at least 2");
        }
        if !(self.early_stop_threshold > 0.0) {
            return bad("early-stop threshold must be positive");
        }
        if self.loss_smoothing == 0 {
            return bad("loss smoothing must be at least 1");
        }
        if self.batch_size == Some(0) {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive and finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub stopped_early: bool,
    pub steps_run: usize,
    /// Hash of the pair indices making up each step's batch.
    pub batch_fingerprints: Vec<u64>,
    /// Pairs left out because they exceed the model's length limit.
    pub skipped_pairs: usize,
    pub loss_smoothing: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, l) in self.step_losses.iter().enumerate() {
            let _ = writeln!(out, "{},{}", i + 1, l);
        }
        out
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "steps_run": self.steps_run,
            "epochs_run": self.epoch_losses.len(),
            "stopped_early": self.stopped_early,
            "final_loss": self.step_losses.last(),
            "epoch_losses": self.epoch_losses,
            "skipped_pairs": self.skipped_pairs,
            "loss_smoothing": self.loss_smoothing,
        })
    }
}

/// True when the trailing `window` values vary by less than `threshold`
/// relative to their maximum.
pub fn should_stop(losses: &[f64], window: usize, threshold: f64) -> bool {
    if window < 2 || losses.len() < window {
        return false;
    }
    let tail = &losses[losses.len() - window..];
    let max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = tail.iter().copied().fold(f64::INFINITY, f64::min);
    if max <= 0.0 {
        return max == min;
    }
    (max - min) / max < threshold
}

/// Trailing moving average of width `width` (shorter at the start).
pub fn moving_average(values: &[f64], width: usize) -> Vec<f64> {
    let width = width.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= width {
            sum -= values[i - width];
        }
        out.push(sum / (i + 1).min(width) as f64);
    }
    out
}

fn check_vocab(model: &Seq2SeqModel, lex: &Lexicon) -> Result<(), TrainError> {
    for e in lex.entries() {
        for g in word_graphemes(&e.word) {
            if model.graphemes().id(&g).is_none() {
                return Err(TrainError::VocabMismatch(g));
            }
        }
    }
    for p in lex.phoneme_counts().keys() {
        if model.phonemes().id(p).is_none() {
            return Err(TrainError::VocabMismatch(p.clone()));
        }
    }
    Ok(())
}

fn diverged(step: usize) -> impl Fn(ModelError) -> TrainError {
    move |e| match e {
        ModelError::Autodiff(AutodiffError::Numerical(_)) => TrainError::Diverged { step },
        other => TrainError::Model(other),
    }
}

pub fn train(
    model: &mut Seq2SeqModel,
    lex: &Lexicon,
    cfg: &TrainConfig,
) -> Result<TrainHistory, TrainError> {
    train_with(model, lex, cfg, |_, _, _| {})
}

/// `train` with a hook called after every completed epoch.
pub fn train_with<F>(
    model: &mut Seq2SeqModel,
    lex: &Lexicon,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainHistory, TrainError>
where
    F: FnMut(usize, &Seq2SeqModel, &TrainHistory),
{
    cfg.validate()?;
    check_vocab(model, lex)?;
    let all: Vec<(&str, &[String])> = lex
        .entries()
        .iter()
        .flat_map(|e| {
            e.pronunciations
                .iter()
                .map(move |p| (e.word.as_str(), p.as_slice()))
        })
        .collect();
    let pairs: Vec<(&str, &[String])> = all
        .iter()
        .copied()
        .filter(|(w, p)| model.fits(w, p))
        .collect();
    if pairs.is_empty() {
        return Err(TrainError::NoData);
    }
    let batch_size = cfg
        .batch_size
        .unwrap_or_else(|| model.genome().batch_size());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SHUFFLE_STREAM));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, DROPOUT_STREAM));
    let mut opt = Optimizer::new(
        model.genome().optimizer(),
        cfg.learning_rate,
        model.params(),
    )
    .map_err(|e| TrainError::Config(e.to_string()))?;

    let mut history = TrainHistory {
        step_losses: Vec::new(),
        epoch_losses: Vec::new(),
        stopped_early: false,
        steps_run: 0,
        batch_fingerprints: Vec::new(),
        skipped_pairs: all.len() - pairs.len(),
        loss_smoothing: cfg.loss_smoothing,
    };
    let mut smoothed: Vec<f64> = Vec::new();
    let mut order: Vec<usize> = (0..pairs.len()).collect();

    'epochs: for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let epoch_start = history.step_losses.len();
        for chunk in order.chunks(batch_size) {
            let step = history.steps_run + 1;
            let mut h = DefaultHasher::new();
            chunk.hash(&mut h);
            let members: Vec<(&str, &[String])> = chunk.iter().map(|&i| pairs[i]).collect();
            let batch = model.make_batch(&members)?;

            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape);
            let loss = model
                .loss(&mut tape, &bound, &batch, Some(&mut dropout_rng))
                .map_err(|e| diverged(step)(e.into()))?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(TrainError::Diverged { step });
            }
            let mut grads = tape.backward(loss).map_err(|e| diverged(step)(e.into()))?;
            let grads = bound.collect(model.params(), &mut grads);
            drop(tape);
            opt.step(model.params_mut(), &grads)
                .map_err(|e| diverged(step)(e.into()))?;

            history.step_losses.push(value);
            history.batch_fingerprints.push(h.finish());
            history.steps_run = step;
            let w = cfg.loss_smoothing.min(history.step_losses.len());
            let recent = &history.step_losses[history.step_losses.len() - w..];
            smoothed.push(recent.iter().sum::<f64>() / w as f64);
            if cfg.early_stopping
                && should_stop(&smoothed, cfg.early_stop_window, cfg.early_stop_threshold)
            {
                history.stopped_early = true;
            }
            if history.stopped_early {
                let part = &history.step_losses[epoch_start..];
                history
                    .epoch_losses
                    .push(part.iter().sum::<f64>() / part.len() as f64);
                on_epoch(epoch + 1, model, &history);
                break 'epochs;
            }
        }
        let part = &history.step_losses[epoch_start..];
        history
            .epoch_losses
            .push(part.iter().sum::<f64>() / part.len() as f64);
        on_epoch(epoch + 1, model, &history);
    }
    Ok(history)
}

/// Greedy-decodes every test word and scores it against all of its
/// references. Words too long for the model score as an empty hypothesis.
pub fn evaluate(model: &Seq2SeqModel, test: &Lexicon) -> Result<EvalReport, TrainError> {
    if test.is_empty() {
        return Err(TrainError::Metrics(MetricsError::Empty));
    }
    let entries = test.entries();
    let hypotheses: Vec<Vec<PhonemeSequence>> = entries
        .par_chunks(DECODE_CHUNK)
        .map(|chunk| {
            let fit: Vec<&str> = chunk
                .iter()
                .map(|e| e.word.as_str())
                .filter(|w| model.source_ids(w).is_ok())
                .collect();
            let mut decoded = model.greedy_decode_batch(&fit)?.into_iter();
            Ok(chunk
                .iter()
                .map(|e| match model.source_ids(&e.word) {
                    Ok(_) => decoded.next().expect("one hypothesis per decodable word"),
                    Err(_) => Vec::new(),
                })
                .collect())
        })
        .collect::<Result<_, ModelError>>()?;
    let scored = entries
        .iter()
        .zip(hypotheses.into_iter().flatten())
        .map(|(e, hyp)| WordScore::new(&e.word, hyp, &e.pronunciations))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate(scored)?)
}

/// `evaluate` after checking that no test word occurs in `train`.
pub fn evaluate_disjoint(
    model: &Seq2SeqModel,
    test: &Lexicon,
    train: &Lexicon,
) -> Result<EvalReport, TrainError> {
    let seen: HashSet<&str> = train.entries().iter().map(|e| e.word.as_str()).collect();
    if let Some(e) = test
        .entries()
        .iter()
        .find(|e| seen.contains(e.word.as_str()))
    {
        return Err(TrainError::Overlap(e.word.clone()));
    }
    evaluate(model, test)
}
