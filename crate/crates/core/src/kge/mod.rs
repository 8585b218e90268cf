//! ComplEx knowledge graph embeddings: scoring, training, ranking and
//! probability calibration.

use thiserror::Error;

use crate::kg::{IndexedTriple, Vocab};

mod adam;
mod calibrate;
pub mod checkpoint;
mod loss;
mod model;
mod ranking;
mod sampling;
mod train;

pub use adam::{adam_step, AdamState};
pub use calibrate::{calibrate, calibration_negatives, fit_platt, PlattFit};
pub use loss::{self_adversarial_loss, LossTerms};
pub use model::{
    calibrated_probability, init_bound, init_embeddings, init_with_shape, sigmoid, Calibration, ComplexModel,
    ScoreGradient, PROBABILITY_FLOOR,
};
pub use ranking::{evaluate_ranking, RankingReport, TripleRank};
pub use sampling::{sample_corruptions, MAX_CORRUPTION_RETRIES};
pub use train::{example_loss_gradient, train, train_from, CheckRecord, TrainingConfig, TrainingHistory};

#[derive(Debug, Error)]
pub enum KgeError {
    #[error("knowledge graph has no entities")]
    EmptyGraph,
    #[error("corruption needs at least 2 entities, graph has {0}")]
    TooFewEntities(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("triple {triple:?} out of range for {n_entities} entities / {n_relations} relations")]
    IndexOutOfRange { triple: IndexedTriple, n_entities: usize, n_relations: usize },
    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("negative score list is empty")]
    NoNegatives,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("evaluation set is empty")]
    EmptyEvaluation,
    #[error("test triple {0:?} is missing from the filter set")]
    NotInFilter(IndexedTriple),
    #[error("calibration needs non-empty positive and negative sets")]
    EmptyCalibrationSet,
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A trained model together with the vocabularies its indices refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: ComplexModel,
    pub entities: Vocab,
    pub relations: Vocab,
}

impl TrainedModel {
    /// Index form of a named triple, `None` if any id is unknown to the model.
    pub fn index(&self, subject: &str, relation: &str, object: &str) -> Option<IndexedTriple> {
        Some(IndexedTriple::new(
            self.entities.get(subject)?,
            self.relations.get(relation)?,
            self.entities.get(object)?,
        ))
    }

    /// Calibrated probability of a named triple, `None` for unknown ids.
    pub fn probability(&self, subject: &str, relation: &str, object: &str) -> Option<f64> {
        let t = self.index(subject, relation, object)?;
        self.model.triple_probability(t).ok()
    }
}
