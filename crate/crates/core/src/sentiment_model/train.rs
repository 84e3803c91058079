use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cell::{backward, bce_loss, forward};
use super::eval::{evaluate, EvalReport};
use super::params::{LstmHyperparams, LstmModel, LstmParams, Real};
use super::ModelError;
use crate::ingest::Sentiment;
use crate::textprep::EncodedSequence;

pub const TRAIN_FRACTION: f64 = 0.7;
const MIN_DATASET: usize = 10;

/// One encoded, labeled training example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub seq: EncodedSequence,
    pub label: Sentiment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_loss: f64,
    pub valid_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn best_epoch(&self) -> Option<&EpochStats> {
        self.epochs
            .iter()
            .fold(None, |best: Option<&EpochStats>, e| match best {
                Some(b) if b.valid_accuracy >= e.valid_accuracy => Some(b),
                _ => Some(e),
            })
    }
}

/// Indices into the dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Worker threads per mini-batch. Results are bit-identical for a fixed
    /// thread count; 1 is the reference configuration.
    pub threads: usize,
    /// Called after every epoch.
    pub on_epoch: Option<fn(&EpochStats)>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            threads: 1,
            on_epoch: None,
        }
    }
}

pub struct TrainOutcome<T> {
    /// The epoch snapshot with the best validation accuracy (the initial model
    /// when no epoch ran).
    pub model: LstmModel<T>,
    pub history: TrainHistory,
    pub split: Split,
    /// Validation metrics of `model`.
    pub validation: EvalReport,
}

/// Per-class 70/30 split: each class is shuffled with `seed` and its first
/// `round(0.7 · n_class)` members go to training. Both lists come back sorted.
pub fn stratified_split(labels: &[Sentiment], seed: u64) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for class in [Sentiment::Positive, Sentiment::Negative] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        let n_train = (members.len() as f64 * TRAIN_FRACTION).round() as usize;
        train.extend_from_slice(&members[..n_train]);
        valid.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    valid.sort_unstable();
    Split { train, valid }
}

/// Adam with bias correction (β1 = 0.9, β2 = 0.999, ε = 1e-8).
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: LstmParams<T>,
    v: LstmParams<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(hyper: &LstmHyperparams) -> Self {
        Self {
            learning_rate: hyper.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: LstmParams::zeros(hyper),
            v: LstmParams::zeros(hyper),
        }
    }

    pub fn update(&mut self, params: &mut LstmParams<T>, grads: &LstmParams<T>) {
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let step_size = T::of(self.learning_rate / (1.0 - self.beta1.powi(self.step)));
        let v_correction = T::of(1.0 / (1.0 - self.beta2.powi(self.step)));
        let eps = T::of(self.epsilon);
        let one = T::one();
        let padding_cols = params.embedding.cols();
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (n, (((p, g), m), v)) in tensors.enumerate() {
            // Tensor 0 is the embedding; its first row (padding) is frozen.
            let skip = if n == 0 { padding_cols } else { 0 };
            for i in skip..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                p[i] -= step_size * m[i] / ((v[i] * v_correction).sqrt() + eps);
            }
        }
    }
}

struct Worker<T> {
    grads: LstmParams<T>,
    loss: f64,
    correct: usize,
}

fn accumulate<T: Real>(
    model: &LstmModel<T>,
    examples: &[Example],
    batch: &[usize],
    worker: &mut Worker<T>,
) -> Result<(), ModelError> {
    worker.grads.fill_zero();
    worker.loss = 0.0;
    worker.correct = 0;
    for &i in batch {
        let ex = &examples[i];
        let (p, cache) = forward(model, &ex.seq)?;
        let y = ex.label.target();
        worker.loss += bce_loss(p, y).to_f64().unwrap();
        if Sentiment::from_probability(p.to_f64().unwrap()) == ex.label {
            worker.correct += 1;
        }
        backward(model, &cache, y, &mut worker.grads);
    }
    Ok(())
}

/// Mini-batch Adam training on a stratified 70/30 split with global-norm
/// gradient clipping. Returns the epoch snapshot with the best validation
/// accuracy.
pub fn train<T: Real>(
    examples: &[Example],
    hyper: &LstmHyperparams,
    options: &TrainOptions,
) -> Result<TrainOutcome<T>, ModelError> {
    hyper.validate()?;
    if examples.len() < MIN_DATASET {
        return Err(ModelError::TrainData(format!(
            "need at least {MIN_DATASET} examples, got {}",
            examples.len()
        )));
    }
    let labels: Vec<Sentiment> = examples.iter().map(|e| e.label).collect();
    for class in [Sentiment::Positive, Sentiment::Negative] {
        if !labels.contains(&class) {
            return Err(ModelError::TrainData(format!(
                "no {class} examples; both classes are required"
            )));
        }
    }
    let split = stratified_split(&labels, hyper.seed);
    let valid_set: Vec<Example> = split.valid.iter().map(|&i| examples[i].clone()).collect();

    let mut model = LstmModel::<T>::init(hyper)?;
    let mut adam = Adam::new(hyper);
    let threads = options.threads.max(1);
    let mut workers: Vec<Worker<T>> = (0..threads)
        .map(|_| Worker {
            grads: LstmParams::zeros(hyper),
            loss: 0.0,
            correct: 0,
        })
        .collect();
    let mut total = LstmParams::zeros(hyper);
    let mut order = split.train.clone();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5eed_0f_ba7c4);

    let mut history = TrainHistory::default();
    let mut best = model.clone();
    let mut best_report = evaluate(&model, &valid_set)?;
    let mut best_accuracy = f64::NEG_INFINITY;

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;
        for batch in order.chunks(hyper.batch_size) {
            let per_worker = batch.len().div_ceil(threads);
            if threads == 1 {
                accumulate(&model, examples, batch, &mut workers[0])?;
            } else {
                let model_ref = &model;
                std::thread::scope(|s| -> Result<(), ModelError> {
                    let handles: Vec<_> = batch
                        .chunks(per_worker)
                        .zip(workers.iter_mut())
                        .map(|(part, w)| s.spawn(move || accumulate(model_ref, examples, part, w)))
                        .collect();
                    for h in handles {
                        h.join().expect("training worker panicked")?;
                    }
                    Ok(())
                })?;
            }
            let used = batch.chunks(per_worker).count();
            total.fill_zero();
            for w in &workers[..used] {
                total.add_assign(&w.grads);
                epoch_loss += w.loss;
                epoch_correct += w.correct;
            }
            total.scale(T::of(1.0 / batch.len() as f64));
            let norm = total.norm().to_f64().unwrap();
            if norm > hyper.clip_norm {
                total.scale(T::of(hyper.clip_norm / norm));
            }
            adam.update(&mut model.params, &total);
        }
        let n_train = order.len().max(1) as f64;
        let report = evaluate(&model, &valid_set)?;
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss: epoch_loss / n_train,
            train_accuracy: epoch_correct as f64 / n_train,
            valid_loss: report.mean_loss,
            valid_accuracy: report.accuracy_total,
        };
        log::info!(
            "epoch {}: train loss {:.4} acc {:.4} | valid loss {:.4} acc {:.4}",
            stats.epoch,
            stats.train_loss,
            stats.train_accuracy,
            stats.valid_loss,
            stats.valid_accuracy
        );
        if let Some(cb) = options.on_epoch {
            cb(&stats);
        }
        history.epochs.push(stats);
        if stats.valid_accuracy > best_accuracy {
            best_accuracy = stats.valid_accuracy;
            best = model.clone();
            best_report = report;
        }
    }
    Ok(TrainOutcome {
        model: best,
        history,
        split,
        validation: best_report,
    })
}
