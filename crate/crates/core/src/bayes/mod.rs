//! Naive-Bayes scene prediction over calibrated triple probabilities.
//!
//! `P(h | e) = P(h) * prod_i P(e_i | h) / prod_i P(e_i)`, where each factor
//! is the probability of one class-level triple: the prior is
//! `<RoadScene, contains, label>`, the conditional `<prototype, r, o>` and the
//! marginal `<RoadScene, r, o>`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::kg::ontology::{self, Relation};
use crate::kge::{TrainedModel, PROBABILITY_FLOOR};
use crate::scene::{PedestriansScene, RoadSceneDocument};

#[derive(Debug, Error, PartialEq)]
pub enum BayesError {
    #[error("entity or relation missing from the model: <{subject}, {relation}, {object}>")]
    MissingEntity { subject: String, relation: String, object: String },
    #[error("frame index {index} out of range for scene {scene_id:?} with {frames} frames")]
    FrameIndex { scene_id: String, index: usize, frames: usize },
    #[error("scene {0:?} has no frames")]
    NoFrames(String),
    #[error("probability {value} for <{subject}, {relation}, {object}> is outside (0, 1]")]
    BadProbability { subject: String, relation: String, object: String, value: f64 },
}

/// Source of triple probabilities.
pub trait TripleProbability {
    /// Probability of `<subject, relation, object>`; errors when an id is
    /// unknown.
    fn triple_probability(&self, subject: &str, relation: &str, object: &str) -> Result<f64, BayesError>;

    /// Whether the model can score triples mentioning `entity`.
    fn knows_entity(&self, entity: &str) -> bool;

    fn knows_relation(&self, relation: &str) -> bool;
}

fn missing(s: &str, r: &str, o: &str) -> BayesError {
    BayesError::MissingEntity { subject: s.into(), relation: r.into(), object: o.into() }
}

impl TripleProbability for TrainedModel {
    fn triple_probability(&self, s: &str, r: &str, o: &str) -> Result<f64, BayesError> {
        self.probability(s, r, o).ok_or_else(|| missing(s, r, o))
    }

    fn knows_entity(&self, entity: &str) -> bool {
        self.entities.get(entity).is_some()
    }

    fn knows_relation(&self, relation: &str) -> bool {
        self.relations.get(relation).is_some()
    }
}

/// A candidate pedestrian-scene label and its class prototype.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Hypothesis {
    pub label: PedestriansScene,
    pub prototype: &'static str,
}

impl Hypothesis {
    /// All hypotheses in tie-breaking priority order.
    pub const ORDER: [PedestriansScene; 3] = [
        PedestriansScene::PedestrianOccluded,
        PedestriansScene::PedestrianNotOccluded,
        PedestriansScene::NonePedestrian,
    ];

    pub fn new(label: PedestriansScene) -> Self {
        Self { label, prototype: ontology::prototype(label) }
    }

    pub fn all() -> [Hypothesis; 3] {
        Self::ORDER.map(Hypothesis::new)
    }

    pub fn label_entity(&self) -> &'static str {
        ontology::label_entity(self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum EvidenceSource {
    Context,
    Vehicle,
}

fn relation_name<S: Serializer>(r: &Relation, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(r.as_str())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct EvidenceItem {
    #[serde(serialize_with = "relation_name")]
    pub relation: Relation,
    pub object: String,
    pub source: EvidenceSource,
}

impl EvidenceItem {
    pub fn new(relation: Relation, object: impl Into<String>, source: EvidenceSource) -> Self {
        Self { relation, object: object.into(), source }
    }
}

impl fmt::Display for EvidenceItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.relation, self.object)
    }
}

/// Evidence observable in frame `frame_index` (a position in `doc.frames`):
/// scene context first, then each vehicle in id order. Repeated
/// (relation, object) pairs are kept once.
pub fn extract_evidence(doc: &RoadSceneDocument, frame_index: usize) -> Result<Vec<EvidenceItem>, BayesError> {
    let frame = doc.frames.get(frame_index).ok_or_else(|| BayesError::FrameIndex {
        scene_id: doc.scene_id().to_string(),
        index: frame_index,
        frames: doc.frames.len(),
    })?;
    let ctx = &doc.context;
    let mut items = Vec::new();
    if ctx.zebra_crossing {
        items.push(EvidenceItem::new(Relation::ThereIs, ontology::ZEBRA_CROSSING, EvidenceSource::Context));
    }
    items.push(EvidenceItem::new(Relation::HasSurroundings, ctx.surroundings.as_str(), EvidenceSource::Context));
    items.push(EvidenceItem::new(Relation::HasLanes, ontology::lane_entity(ctx.lanes), EvidenceSource::Context));

    let mut vehicles: Vec<_> = frame.vehicles.iter().collect();
    vehicles.sort_by(|a, b| a.vehicle_id.cmp(&b.vehicle_id));
    for v in vehicles {
        let src = EvidenceSource::Vehicle;
        items.push(EvidenceItem::new(Relation::Includes, ontology::vehicle_summary(v.state), src));
        items.push(EvidenceItem::new(Relation::HasBrakingLights, v.braking_lights.as_str(), src));
        items.push(EvidenceItem::new(Relation::HasDistance, v.distance.as_str(), src));
        items.push(EvidenceItem::new(Relation::HasPosition, v.position.as_str(), src));
    }
    let mut seen = BTreeSet::new();
    items.retain(|i| seen.insert((i.relation, i.object.clone())));
    Ok(items)
}

fn checked<M: TripleProbability + ?Sized>(model: &M, s: &str, r: &str, o: &str) -> Result<f64, BayesError> {
    let p = model.triple_probability(s, r, o)?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(BayesError::BadProbability { subject: s.into(), relation: r.into(), object: o.into(), value: p });
    }
    Ok(p)
}

/// `P(h)`: probability of `<RoadScene, contains, label>`. A label the model
/// has never seen gets the probability floor.
pub fn prior<M: TripleProbability + ?Sized>(model: &M, h: Hypothesis) -> Result<f64, BayesError> {
    if !model.knows_entity(h.label_entity()) {
        return Ok(PROBABILITY_FLOOR);
    }
    checked(model, ontology::ROAD_SCENE, Relation::Contains.as_str(), h.label_entity())
}

/// `P(e)`: probability of `<RoadScene, relation, object>`.
pub fn evidence_marginal<M: TripleProbability + ?Sized>(model: &M, e: &EvidenceItem) -> Result<f64, BayesError> {
    checked(model, ontology::ROAD_SCENE, e.relation.as_str(), &e.object)
}

/// `P(e | h)`: probability of `<prototype, relation, object>`; the probability
/// floor when the model has never seen the prototype.
pub fn evidence_conditional<M: TripleProbability + ?Sized>(
    model: &M,
    e: &EvidenceItem,
    h: Hypothesis,
) -> Result<f64, BayesError> {
    if !model.knows_entity(h.prototype) {
        return Ok(PROBABILITY_FLOOR);
    }
    checked(model, h.prototype, e.relation.as_str(), &e.object)
}

/// How the evidence denominator `P(e_i)` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Denominator {
    /// Generic-subject triple `<RoadScene, r, o>`.
    #[default]
    Marginal,
    /// `sum_h pi_h P(e_i | h)` with priors normalized to sum to 1.
    Mixture,
}

impl fmt::Display for Denominator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Denominator::Marginal => "marginal",
            Denominator::Mixture => "mixture",
        })
    }
}

impl FromStr for Denominator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "marginal" => Ok(Denominator::Marginal),
            "mixture" => Ok(Denominator::Mixture),
            other => Err(format!("unknown denominator {other:?} (expected marginal or mixture)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvidenceFactor {
    pub item: EvidenceItem,
    /// `P(e_i)`.
    pub marginal: f64,
    /// `P(e_i | h)`.
    pub conditional: f64,
    /// `conditional / marginal`.
    pub likelihood_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorReport {
    pub hypothesis: PedestriansScene,
    pub prior: f64,
    pub factors: Vec<EvidenceFactor>,
    /// `prior * prod_i likelihood_ratio_i`, folded left to right.
    pub raw: f64,
    pub clamped: f64,
    pub was_clamped: bool,
    pub denominator: Denominator,
}

impl PosteriorReport {
    /// Builds a report from already-computed factors.
    pub fn from_factors(
        hypothesis: PedestriansScene,
        prior: f64,
        factors: Vec<EvidenceFactor>,
        denominator: Denominator,
    ) -> Self {
        let raw = Self::combine(prior, &factors);
        let clamped = raw.clamp(0.0, 1.0);
        Self { hypothesis, prior, factors, raw, clamped, was_clamped: clamped != raw, denominator }
    }

    fn combine(prior: f64, factors: &[EvidenceFactor]) -> f64 {
        factors.iter().fold(prior, |acc, f| acc * f.likelihood_ratio)
    }

    /// Raw posterior recomputed from the recorded factors.
    pub fn recompute_raw(&self) -> f64 {
        Self::combine(self.prior, &self.factors)
    }
}

fn factor(item: &EvidenceItem, marginal: f64, conditional: f64) -> EvidenceFactor {
    EvidenceFactor { item: item.clone(), marginal, conditional, likelihood_ratio: conditional / marginal }
}

/// Posterior of one hypothesis with generic-subject marginals.
pub fn posterior<M: TripleProbability + ?Sized>(
    model: &M,
    h: Hypothesis,
    evidence: &[EvidenceItem],
) -> Result<PosteriorReport, BayesError> {
    let p = prior(model, h)?;
    let factors = evidence
        .iter()
        .map(|e| Ok(factor(e, evidence_marginal(model, e)?, evidence_conditional(model, e, h)?)))
        .collect::<Result<Vec<_>, BayesError>>()?;
    Ok(PosteriorReport::from_factors(h.label, p, factors, Denominator::Marginal))
}

/// Posteriors of all hypotheses, in [`Hypothesis::ORDER`].
pub fn posteriors<M: TripleProbability + ?Sized>(
    model: &M,
    evidence: &[EvidenceItem],
    denominator: Denominator,
) -> Result<Vec<PosteriorReport>, BayesError> {
    let hyps = Hypothesis::all();
    match denominator {
        Denominator::Marginal => hyps.iter().map(|&h| posterior(model, h, evidence)).collect(),
        Denominator::Mixture => {
            let priors = hyps.iter().map(|&h| prior(model, h)).collect::<Result<Vec<_>, _>>()?;
            let total: f64 = priors.iter().sum();
            let conditionals = hyps
                .iter()
                .map(|&h| evidence.iter().map(|e| evidence_conditional(model, e, h)).collect::<Result<Vec<_>, _>>())
                .collect::<Result<Vec<_>, _>>()?;
            let mixtures: Vec<f64> = (0..evidence.len())
                .map(|i| (0..hyps.len()).map(|j| priors[j] / total * conditionals[j][i]).sum())
                .collect();
            Ok(hyps
                .iter()
                .enumerate()
                .map(|(j, h)| {
                    let factors =
                        evidence.iter().enumerate().map(|(i, e)| factor(e, mixtures[i], conditionals[j][i])).collect();
                    PosteriorReport::from_factors(h.label, priors[j], factors, Denominator::Mixture)
                })
                .collect())
        }
    }
}

/// Highest clamped posterior; ties fall to the higher raw posterior, then to
/// the earlier hypothesis in [`Hypothesis::ORDER`].
pub fn decide(reports: &[PosteriorReport]) -> Option<PedestriansScene> {
    let rank = |l: PedestriansScene| Hypothesis::ORDER.iter().position(|&x| x == l).unwrap_or(usize::MAX);
    reports
        .iter()
        .min_by(|a, b| {
            b.clamped
                .total_cmp(&a.clamped)
                .then(b.raw.total_cmp(&a.raw))
                .then(rank(a.hypothesis).cmp(&rank(b.hypothesis)))
        })
        .map(|r| r.hypothesis)
}

fn label_name<S: Serializer>(l: &PedestriansScene, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(l.as_str())
}

/// Prediction for one frame, serializable as a single JSON record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FramePrediction {
    pub scene_id: String,
    /// Frame number evidence was taken from.
    pub frame: u32,
    pub horizon: usize,
    /// Frame number whose label is the ground truth.
    pub target_frame: u32,
    /// The horizon ran past the last frame and the last frame was used.
    pub truncated: bool,
    pub denominator: Denominator,
    pub evidence: Vec<EvidenceItem>,
    /// Evidence dropped because the model has never seen its object.
    pub skipped_evidence: Vec<EvidenceItem>,
    pub posteriors: Vec<PosteriorReport>,
    #[serde(serialize_with = "label_name")]
    pub predicted: PedestriansScene,
    #[serde(serialize_with = "label_name")]
    pub ground_truth: PedestriansScene,
}

/// Predicts the label of frame `t + horizon` from the evidence of frame `t`
/// (positions in `doc.frames`). Evidence the model cannot score is skipped
/// and listed in the result.
pub fn predict_frame<M: TripleProbability + ?Sized>(
    model: &M,
    doc: &RoadSceneDocument,
    t: usize,
    horizon: usize,
    denominator: Denominator,
) -> Result<FramePrediction, BayesError> {
    if doc.frames.is_empty() {
        return Err(BayesError::NoFrames(doc.scene_id().to_string()));
    }
    let all = extract_evidence(doc, t)?;
    let (evidence, skipped): (Vec<_>, Vec<_>) =
        all.into_iter().partition(|e| model.knows_relation(e.relation.as_str()) && model.knows_entity(&e.object));
    let reports = posteriors(model, &evidence, denominator)?;
    let predicted = decide(&reports).expect("three hypotheses");
    let last = doc.frames.len() - 1;
    let target = t.saturating_add(horizon);
    let target_index = target.min(last);
    Ok(FramePrediction {
        scene_id: doc.scene_id().to_string(),
        frame: doc.frames[t].frame_number,
        horizon,
        target_frame: doc.frames[target_index].frame_number,
        truncated: target > last,
        denominator,
        evidence,
        skipped_evidence: skipped,
        posteriors: reports,
        predicted,
        ground_truth: doc.frames[target_index].pedestrians_scene,
    })
}
