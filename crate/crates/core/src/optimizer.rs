//! AdaGrad training with L2 regularization and dropout.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::EncodedExample;
use crate::error::{Error, Result};
use crate::network::{argmax, cross_entropy, one_hot, Gradients, Model};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Penalty `l2_weight·‖θ‖²` over every trainable tensor.
    pub l2_weight: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Added to `√G` in the AdaGrad denominator.
    pub epsilon: f64,
    pub shuffle: bool,
    /// Examples per update; gradients within a batch are summed.
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            l2_weight: 1e-5,
            epochs: 10,
            seed: 0,
            epsilon: 1e-8,
            shuffle: true,
            batch_size: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::invalid(
                "learning rate must be a nonnegative finite number",
            ));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if self.l2_weight.is_nan() || self.l2_weight < 0.0 {
            return Err(Error::invalid("l2 weight must be nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// Running sums of squared gradients, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGradState {
    pub accumulators: Vec<Vec<f64>>,
    pub steps: u64,
}

impl AdaGradState {
    pub fn new(model: &Model) -> Self {
        Self::with_lengths(model.param_slices().iter().map(|s| s.len()))
    }

    pub fn with_lengths(lengths: impl IntoIterator<Item = usize>) -> Self {
        AdaGradState {
            accumulators: lengths.into_iter().map(|n| vec![0.0; n]).collect(),
            steps: 0,
        }
    }
}

fn check_lengths(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!(
            "{what}: tensor sizes {a:?} vs {b:?}"
        )));
    }
    Ok(())
}

/// Per coordinate: `G += g²; θ -= lr·g/(√G + ε)`.
pub fn adagrad_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdaGradState,
    cfg: &TrainConfig,
) -> Result<()> {
    let p_len: Vec<usize> = params.iter().map(|p| p.len()).collect();
    let g_len: Vec<usize> = grads.iter().map(|g| g.len()).collect();
    let a_len: Vec<usize> = state.accumulators.iter().map(|a| a.len()).collect();
    check_lengths(&p_len, &g_len, "parameters vs gradients")?;
    check_lengths(&p_len, &a_len, "parameters vs accumulators")?;

    for ((theta, g), acc) in params
        .iter_mut()
        .zip(grads)
        .zip(state.accumulators.iter_mut())
    {
        for ((t, &g), a) in theta.iter_mut().zip(g.iter()).zip(acc.iter_mut()) {
            if g == 0.0 {
                continue;
            }
            *a += g * g;
            *t -= cfg.learning_rate * g / (a.sqrt() + cfg.epsilon);
        }
    }
    state.steps += 1;
    Ok(())
}

/// Adds the gradient of `l2_weight·‖θ‖²`, i.e. `2·l2_weight·θ`.
pub fn apply_l2(grads: &mut [&mut [f64]], params: &[&[f64]], l2_weight: f64) -> Result<()> {
    let p_len: Vec<usize> = params.iter().map(|p| p.len()).collect();
    let g_len: Vec<usize> = grads.iter().map(|g| g.len()).collect();
    check_lengths(&p_len, &g_len, "parameters vs gradients")?;
    if l2_weight == 0.0 {
        return Ok(());
    }
    for (g, p) in grads.iter_mut().zip(params) {
        for (g, &p) in g.iter_mut().zip(p.iter()) {
            *g += 2.0 * l2_weight * p;
        }
    }
    Ok(())
}

/// Accuracy, mean loss and confusion counts of a model on a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub count: usize,
    pub correct: usize,
    /// Mean cross-entropy, without the L2 penalty.
    pub mean_loss: f64,
    pub predictions: Vec<usize>,
    /// `confusion[[gold, predicted]]`.
    pub confusion: Array2<usize>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        }
    }
}

pub fn evaluate(model: &Model, data: &[EncodedExample]) -> Result<Evaluation> {
    let m = model.num_labels();
    let mut confusion = Array2::zeros((m, m));
    let mut predictions = Vec::with_capacity(data.len());
    let mut loss = 0.0;
    let mut correct = 0;
    for (i, ex) in data.iter().enumerate() {
        check_label(ex, i, m)?;
        let out = model.forward_eval(ex.inputs.view())?;
        let predicted = argmax(out.probs.view());
        loss += cross_entropy(out.probs.view(), one_hot(ex.label, m).view())?;
        confusion[[ex.label, predicted]] += 1;
        if predicted == ex.label {
            correct += 1;
        }
        predictions.push(predicted);
    }
    Ok(Evaluation {
        count: data.len(),
        correct,
        mean_loss: if data.is_empty() {
            0.0
        } else {
            loss / data.len() as f64
        },
        predictions,
        confusion,
    })
}

fn check_label(ex: &EncodedExample, index: usize, m: usize) -> Result<()> {
    if ex.label >= m {
        return Err(Error::Data {
            line: index + 1,
            message: format!("label index {} outside the model's {m} labels", ex.label),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training cross-entropy after the epoch plus `l2_weight·‖θ‖²`.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub dev_accuracy: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last epoch.
    pub model: Model,
    /// Earliest epoch with the highest dev accuracy, when a dev set was given.
    pub best: Option<(usize, Model)>,
    pub history: Vec<EpochStats>,
}

impl TrainOutcome {
    /// The best-on-dev checkpoint if there is one, else the final model.
    pub fn selected(&self) -> &Model {
        self.best.as_ref().map_or(&self.model, |(_, m)| m)
    }
}

/// Trains without a dev set.
pub fn train(model: Model, data: &[EncodedExample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, data, None, cfg, |_| {})
}

/// Stochastic AdaGrad over `data` for `cfg.epochs` epochs, reporting each
/// epoch to `on_epoch`. Shuffling and dropout draw from one stream seeded by
/// `cfg.seed`.
pub fn train_with<F>(
    mut model: Model,
    data: &[EncodedExample],
    dev: Option<&[EncodedExample]>,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochStats),
{
    cfg.validate()?;
    model.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let m = model.num_labels();
    for (i, ex) in data.iter().chain(dev.unwrap_or(&[])).enumerate() {
        check_label(ex, i % data.len().max(1), m)?;
        if ex.inputs.ncols() != model.config.word_dim {
            return Err(Error::shape(format!(
                "example {} has dimension {}, model expects {}",
                i + 1,
                ex.inputs.ncols(),
                model.config.word_dim
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdaGradState::new(&model);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Model)> = None;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros_like(&model);
            for &i in batch {
                let ex = &data[i];
                let out = model.forward_train(ex.inputs.view(), &mut rng)?;
                let g = model.backward(&out, one_hot(ex.label, m).view())?;
                grads.accumulate(&g);
            }
            apply_l2(
                &mut grads.slices_mut(),
                &model.param_slices(),
                cfg.l2_weight,
            )?;
            adagrad_step(
                &mut model.param_slices_mut(),
                &grads.slices(),
                &mut state,
                cfg,
            )?;
        }

        let train_eval = evaluate(&model, data)?;
        let dev_accuracy = match dev {
            Some(d) if !d.is_empty() => Some(evaluate(&model, d)?.accuracy()),
            _ => None,
        };
        let stats = EpochStats {
            epoch,
            train_loss: train_eval.mean_loss + cfg.l2_weight * model.squared_norm(),
            train_accuracy: train_eval.accuracy(),
            dev_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(acc) = dev_accuracy {
            if best.as_ref().is_none_or(|(_, b, _)| acc > *b) {
                best = Some((epoch, acc, model.clone()));
            }
        }
        on_epoch(&stats);
        history.push(stats);
    }

    Ok(TrainOutcome {
        model,
        best: best.map(|(e, _, m)| (e, m)),
        history,
    })
}
