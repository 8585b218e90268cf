use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::loss::loss_into;
use super::sampling::sample_into;
use super::{evaluate_ranking, init_embeddings, sigmoid, ComplexModel, KgeError};
use crate::kg::{IndexedTriple, TripleSplit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub k: usize,
    /// Corruptions per positive triple.
    pub eta: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adversarial_temperature: f64,
    pub max_epochs: usize,
    /// Epochs between validation MRR checks.
    pub check_interval: usize,
    /// Checks without improvement before stopping.
    pub patience: usize,
    /// Coefficient of `0.5 * l2 * |theta|^2`; 0 disables it.
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            k: 150,
            eta: 15,
            learning_rate: 0.0005,
            batch_size: 8000,
            adversarial_temperature: 1.0,
            max_epochs: 500,
            check_interval: 10,
            patience: 5,
            l2: 0.0,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), KgeError> {
        let bad = |m: &str| Err(KgeError::InvalidConfig(m.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.eta == 0 {
            return bad("eta must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a finite non-negative number");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.adversarial_temperature > 0.0 && self.adversarial_temperature.is_finite()) {
            return bad("adversarial_temperature must be positive");
        }
        if self.check_interval == 0 {
            return bad("check_interval must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be a finite non-negative number");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckRecord {
    pub epoch: usize,
    pub mrr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainingHistory {
    /// Mean per-positive loss of every completed epoch.
    pub epoch_losses: Vec<(usize, f64)>,
    /// Validation MRR checks, starting with the untrained model at epoch 0.
    pub checks: Vec<CheckRecord>,
    pub best_epoch: usize,
    pub best_mrr: Option<f64>,
    pub stopped_early: bool,
}

impl TrainingHistory {
    /// `epoch<TAB>loss` and `check<TAB>epoch<TAB>mrr` lines in epoch order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut checks = self.checks.iter().peekable();
        while let Some(c) = checks.next_if(|c| c.epoch == 0) {
            let _ = writeln!(out, "check\t{}\t{}", c.epoch, c.mrr);
        }
        for &(epoch, loss) in &self.epoch_losses {
            let _ = writeln!(out, "{epoch}\t{loss}");
            while let Some(c) = checks.next_if(|c| c.epoch == epoch) {
                let _ = writeln!(out, "check\t{}\t{}", c.epoch, c.mrr);
            }
        }
        out
    }
}

struct Scratch<'a> {
    scores: &'a mut [f64],
    weights: &'a mut [f64],
    d_neg: &'a mut [f64],
}

/// Adds `scale` times the loss gradient of one positive and its negatives to
/// `grads`; returns the unscaled loss.
fn accumulate_example(
    model: &ComplexModel,
    pos: IndexedTriple,
    negs: &[IndexedTriple],
    temperature: f64,
    scale: f64,
    grads: &mut [f64],
    scratch: &mut Scratch<'_>,
) -> f64 {
    let f_pos = model.score_unchecked(pos);
    for (s, &t) in scratch.scores.iter_mut().zip(negs) {
        *s = model.score_unchecked(t);
    }
    let loss = loss_into(f_pos, scratch.scores, temperature, scratch.weights, scratch.d_neg);
    model.accumulate_score_gradient(grads, pos, (sigmoid(f_pos) - 1.0) * scale);
    for (&t, &d) in negs.iter().zip(scratch.d_neg.iter()) {
        model.accumulate_score_gradient(grads, t, d * scale);
    }
    loss
}

/// Self-adversarial loss of one positive against `negatives` and its
/// gradient over the flat parameter vector, softmax weights held constant.
pub fn example_loss_gradient(
    model: &ComplexModel,
    positive: IndexedTriple,
    negatives: &[IndexedTriple],
    temperature: f64,
) -> Result<(f64, Vec<f64>), KgeError> {
    if negatives.is_empty() {
        return Err(KgeError::NoNegatives);
    }
    if !(temperature > 0.0) {
        return Err(KgeError::InvalidConfig(format!("adversarial temperature must be positive, got {temperature}")));
    }
    model.check(positive)?;
    for &t in negatives {
        model.check(t)?;
    }
    let n = negatives.len();
    let (mut scores, mut weights, mut d_neg) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut grads = vec![0.0; model.params().len()];
    let mut scratch = Scratch { scores: &mut scores, weights: &mut weights, d_neg: &mut d_neg };
    let loss = accumulate_example(model, positive, negatives, temperature, 1.0, &mut grads, &mut scratch);
    Ok((loss, grads))
}

/// Initializes a model for `split.kg` and trains it.
pub fn train(split: &TripleSplit, config: &TrainingConfig) -> Result<(ComplexModel, TrainingHistory), KgeError> {
    config.validate()?;
    let model = init_embeddings(&split.kg, config.k, config.seed)?;
    train_from(model, split, config)
}

/// Mini-batch training from a given starting model. Returns the snapshot
/// with the best validation MRR, or the final model when the split has no
/// validation triples.
pub fn train_from(
    mut model: ComplexModel,
    split: &TripleSplit,
    config: &TrainingConfig,
) -> Result<(ComplexModel, TrainingHistory), KgeError> {
    config.validate()?;
    let n_entities = model.n_entities();
    if n_entities < 2 {
        return Err(KgeError::TooFewEntities(n_entities));
    }
    if split.train.is_empty() {
        return Err(KgeError::EmptyEvaluation);
    }
    for &t in &split.train {
        model.check(t)?;
    }
    let filter: HashSet<IndexedTriple> = split.known_triples().into_iter().collect();
    let validating = !split.validation.is_empty();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(model.params().len());
    let mut grads = vec![0.0; model.params().len()];
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut negs = Vec::with_capacity(config.eta);
    let mut neg_scores = vec![0.0; config.eta];
    let mut weights = vec![0.0; config.eta];
    let mut d_neg = vec![0.0; config.eta];

    let mut history = TrainingHistory::default();
    let mut best = None;
    let mut bad_checks = 0;
    if validating {
        let mrr = evaluate_ranking(&model, &split.validation, &filter)?.mrr;
        history.checks.push(CheckRecord { epoch: 0, mrr });
        history.best_mrr = Some(mrr);
        best = Some(model.clone());
    }

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            grads.fill(0.0);
            let scale = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &i in chunk {
                let pos = split.train[i];
                sample_into(pos, n_entities, config.eta, &mut rng, &mut negs)?;
                let mut scratch = Scratch { scores: &mut neg_scores, weights: &mut weights, d_neg: &mut d_neg };
                batch_loss +=
                    accumulate_example(&model, pos, &negs, config.adversarial_temperature, scale, &mut grads, &mut scratch);
            }
            if !batch_loss.is_finite() {
                return Err(KgeError::NonFiniteLoss { epoch, batch });
            }
            if config.l2 > 0.0 {
                for (g, p) in grads.iter_mut().zip(model.params()) {
                    *g += config.l2 * p;
                }
            }
            adam_step(&mut adam, model.params_mut(), &grads, config.learning_rate)?;
            if !model.params().iter().all(|v| v.is_finite()) {
                return Err(KgeError::NonFiniteLoss { epoch, batch });
            }
            epoch_loss += batch_loss;
        }
        history.epoch_losses.push((epoch, epoch_loss / split.train.len() as f64));

        if validating && epoch % config.check_interval == 0 {
            let mrr = evaluate_ranking(&model, &split.validation, &filter)?.mrr;
            history.checks.push(CheckRecord { epoch, mrr });
            if history.best_mrr.is_none_or(|b| mrr > b) {
                history.best_mrr = Some(mrr);
                history.best_epoch = epoch;
                best = Some(model.clone());
                bad_checks = 0;
            } else {
                bad_checks += 1;
                if bad_checks >= config.patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }
    match best {
        Some(b) => Ok((b, history)),
        None => {
            history.best_epoch = history.epoch_losses.last().map_or(0, |e| e.0);
            Ok((model, history))
        }
    }
}
