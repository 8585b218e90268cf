//! End-to-end experiments: split, train, calibrate, predict and score.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayes::{predict_frame, BayesError, Denominator, FramePrediction};
use crate::config::{from_flat_toml, to_flat_toml, ConfigError};
use crate::kg::ontology::{self, EntityKind};
use crate::kg::{assign_folds, split_from_folds, FoldAssignment, KgError, SplitPlan};
use crate::kge::{
    calibrate, calibration_negatives, train, Calibration, KgeError, TrainedModel, TrainingConfig, TrainingHistory,
};
use crate::scene::{Environment, RoadSceneDocument};

mod metrics;

pub use metrics::{compute_metrics, ConfusionMatrix, Metrics};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("infeasible experiment: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Kge(#[from] KgeError),
    #[error(transparent)]
    Bayes(#[from] BayesError),
    #[error("invalid experiment spec: {0}")]
    Config(String),
}

impl From<ConfigError> for EvalError {
    fn from(e: ConfigError) -> Self {
        EvalError::Config(e.0)
    }
}

/// Environments whose scenes form the training graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrainSet {
    Real,
    Virtual,
    Mixed,
}

impl TrainSet {
    pub const ALL: [TrainSet; 3] = [TrainSet::Real, TrainSet::Virtual, TrainSet::Mixed];

    pub fn environments(self) -> &'static [Environment] {
        match self {
            TrainSet::Real => &[Environment::Real],
            TrainSet::Virtual => &[Environment::Virtual],
            TrainSet::Mixed => &[Environment::Real, Environment::Virtual],
        }
    }
}

impl fmt::Display for TrainSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for TrainSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TrainSet::ALL.into_iter().find(|t| t.to_string() == s).ok_or_else(|| format!("unknown train set {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentMode {
    /// One training set, scored on the test scenes of `test`.
    #[default]
    Single,
    /// Every training set scored on every environment's test scenes.
    Cross,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub name: String,
    pub mode: ExperimentMode,
    pub train: TrainSet,
    pub test: Vec<Environment>,
    pub split: SplitPlan,
    /// Frames between the evidence frame and the predicted frame.
    pub horizon: usize,
    /// Seeds the scene split and calibration negatives; training has its own
    /// seed under `training`.
    pub seed: u64,
    pub denominator: Denominator,
    /// Fit Platt scaling after training; otherwise probabilities are
    /// `sigmoid(score)`.
    pub calibrate: bool,
    pub training: TrainingConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            mode: ExperimentMode::Single,
            train: TrainSet::Virtual,
            test: vec![Environment::Virtual],
            split: SplitPlan::standard(),
            horizon: 30,
            seed: 0,
            denominator: Denominator::Marginal,
            calibrate: true,
            training: TrainingConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_text(text: &str) -> Result<Self, EvalError> {
        let spec: Self = from_flat_toml(text)?;
        spec.training.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        to_flat_toml(self).expect("experiment spec serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub enabled: bool,
    pub a: f64,
    pub b: f64,
    /// The fit fell back to `(1, 0)` because all scores were equal.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentBreakdown {
    pub environment: Environment,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    pub train: TrainSet,
    pub test: Vec<Environment>,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub per_environment: Vec<EnvironmentBreakdown>,
    pub frames: u64,
    /// Share of hypothesis posteriors whose raw value left `[0, 1]`.
    pub clamp_rate: f64,
    /// Share of frames whose horizon ran past the end of the scene.
    pub truncation_rate: f64,
    /// Share of evidence items skipped as unknown to the model.
    pub skipped_evidence_rate: f64,
    pub calibration: CalibrationRecord,
    pub best_mrr: Option<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Validation triples were empty and the training graph's class-level
    /// triples were used instead.
    pub validation_fallback: bool,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub spec: ExperimentSpec,
}

/// Everything an experiment produces besides the report.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: MetricsReport,
    pub predictions: Vec<FramePrediction>,
    pub history: TrainingHistory,
    pub model: TrainedModel,
}

fn env_of(corpus: &[RoadSceneDocument]) -> BTreeMap<&str, Environment> {
    corpus.iter().map(|d| (d.scene_id(), d.context.environment)).collect()
}

fn restrict(ids: &[String], envs: &[Environment], map: &BTreeMap<&str, Environment>) -> Vec<String> {
    ids.iter().filter(|id| map.get(id.as_str()).is_some_and(|e| envs.contains(e))).cloned().collect()
}

fn check_spec(corpus: &[RoadSceneDocument], spec: &ExperimentSpec, envs: &[Environment]) -> Result<(), EvalError> {
    spec.training.validate()?;
    let present: BTreeSet<Environment> = corpus.iter().map(|d| d.context.environment).collect();
    for env in spec.train.environments().iter().chain(envs) {
        if !present.contains(env) {
            return Err(EvalError::Infeasible(format!("corpus has no {env} scenes")));
        }
        let counts = spec.split.counts.get(env).copied().unwrap_or(crate::kg::FoldCounts { train: 0, test: 0 });
        if spec.train.environments().contains(env) && counts.train == 0 {
            return Err(EvalError::Infeasible(format!("split assigns no {env} training scenes")));
        }
        if envs.contains(env) && counts.test == 0 {
            return Err(EvalError::Infeasible(format!("split assigns no {env} test scenes")));
        }
    }
    if envs.is_empty() {
        return Err(EvalError::Infeasible("no test environment".into()));
    }
    Ok(())
}

/// Trains and calibrates on the spec's training environments.
fn train_for(corpus: &[RoadSceneDocument], spec: &ExperimentSpec, folds: &FoldAssignment) -> Result<Trained, EvalError> {
    let map = env_of(corpus);
    let envs = spec.train.environments();
    let restricted = FoldAssignment {
        train: restrict(&folds.train, envs, &map),
        validation: restrict(&folds.validation, envs, &map),
        test: Vec::new(),
    };
    let train_scenes = restricted.train.len() + restricted.validation.len();
    let mut split = split_from_folds(corpus, restricted)?;
    let fallback = split.validation.is_empty();
    if fallback {
        let kg = &split.kg;
        split.validation = kg
            .triples()
            .iter()
            .copied()
            .filter(|t| ontology::kind_of(kg.entities().name(t.subject)) == Some(EntityKind::SceneClass))
            .collect();
    }
    let (mut model, history) = train(&split, &spec.training)?;

    let mut calibration = CalibrationRecord { enabled: spec.calibrate, a: 1.0, b: 0.0, degenerate: false };
    if spec.calibrate {
        let known: HashSet<_> = split.known_triples().into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(2);
        let negatives = calibration_negatives(&split.validation, &known, model.n_entities(), spec.training.eta, &mut rng)?;
        let fit = calibrate(&mut model, &split.validation, &negatives)?;
        calibration.a = fit.calibration.a;
        calibration.b = fit.calibration.b;
        calibration.degenerate = fit.degenerate;
    } else {
        model.calibration = Calibration::default();
    }
    let model = TrainedModel { model, entities: split.kg.entities().clone(), relations: split.kg.relations().clone() };
    Ok(Trained { model, history, calibration, fallback, train_scenes })
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    clamped: u64,
    posteriors: u64,
    truncated: u64,
    skipped: u64,
    evidence: u64,
}

struct Scored {
    predictions: Vec<FramePrediction>,
    breakdown: Vec<EnvironmentBreakdown>,
    confusion: ConfusionMatrix,
    tally: Tally,
    scenes: usize,
}

/// Predicts every frame of the test scenes in `envs`.
fn score(
    corpus: &[RoadSceneDocument],
    model: &TrainedModel,
    test_ids: &[String],
    envs: &[Environment],
    spec: &ExperimentSpec,
) -> Result<Scored, EvalError> {
    let wanted: BTreeSet<&str> = test_ids.iter().map(String::as_str).collect();
    let mut docs: Vec<&RoadSceneDocument> =
        corpus.iter().filter(|d| wanted.contains(d.scene_id()) && envs.contains(&d.context.environment)).collect();
    docs.sort_by(|a, b| a.scene_id().cmp(b.scene_id()));
    let mut per_env: BTreeMap<Environment, ConfusionMatrix> = envs.iter().map(|&e| (e, Default::default())).collect();
    let mut confusion = ConfusionMatrix::default();
    let mut tally = Tally::default();
    let mut predictions = Vec::new();
    for doc in &docs {
        for t in 0..doc.frames.len() {
            let p = predict_frame(model, doc, t, spec.horizon, spec.denominator)?;
            per_env.entry(doc.context.environment).or_default().record(p.predicted, p.ground_truth);
            confusion.record(p.predicted, p.ground_truth);
            tally.clamped += p.posteriors.iter().filter(|r| r.was_clamped).count() as u64;
            tally.posteriors += p.posteriors.len() as u64;
            tally.truncated += p.truncated as u64;
            tally.skipped += p.skipped_evidence.len() as u64;
            tally.evidence += (p.evidence.len() + p.skipped_evidence.len()) as u64;
            predictions.push(p);
        }
    }
    let breakdown = per_env
        .into_iter()
        .map(|(environment, confusion)| EnvironmentBreakdown { environment, confusion, metrics: compute_metrics(&confusion) })
        .collect();
    Ok(Scored { predictions, breakdown, confusion, tally, scenes: docs.len() })
}

fn rate(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

struct Trained {
    model: TrainedModel,
    history: TrainingHistory,
    calibration: CalibrationRecord,
    fallback: bool,
    train_scenes: usize,
}

fn report(spec: &ExperimentSpec, test: &[Environment], trained: &Trained, scored: &Scored) -> MetricsReport {
    let frames = scored.confusion.total();
    let t = scored.tally;
    MetricsReport {
        name: spec.name.clone(),
        train: spec.train,
        test: test.to_vec(),
        confusion: scored.confusion,
        metrics: compute_metrics(&scored.confusion),
        per_environment: scored.breakdown.clone(),
        frames,
        clamp_rate: rate(t.clamped, t.posteriors),
        truncation_rate: rate(t.truncated, frames),
        skipped_evidence_rate: rate(t.skipped, t.evidence),
        calibration: trained.calibration,
        best_mrr: trained.history.best_mrr,
        best_epoch: trained.history.best_epoch,
        epochs_run: trained.history.epoch_losses.len(),
        validation_fallback: trained.fallback,
        train_scenes: trained.train_scenes,
        test_scenes: scored.scenes,
        spec: spec.clone(),
    }
}

/// Fold assignment over the environments the spec touches.
fn folds_for(corpus: &[RoadSceneDocument], spec: &ExperimentSpec, test: &[Environment]) -> Result<FoldAssignment, EvalError> {
    let mut plan = spec.split.clone();
    plan.counts.retain(|env, _| spec.train.environments().contains(env) || test.contains(env));
    Ok(assign_folds(corpus, &plan, spec.seed)?)
}

/// Splits the corpus by scene, trains on the spec's training environments,
/// calibrates and scores every frame of the test scenes.
pub fn run_experiment(corpus: &[RoadSceneDocument], spec: &ExperimentSpec) -> Result<ExperimentOutcome, EvalError> {
    check_spec(corpus, spec, &spec.test)?;
    let folds = folds_for(corpus, spec, &spec.test)?;
    let trained = train_for(corpus, spec, &folds)?;
    let scored = score(corpus, &trained.model, &folds.test, &spec.test, spec)?;
    if scored.scenes == 0 {
        return Err(EvalError::Infeasible("no test scenes".into()));
    }
    let report = report(spec, &spec.test, &trained, &scored);
    Ok(ExperimentOutcome { report, predictions: scored.predictions, history: trained.history, model: trained.model })
}

/// Trains once per training set (Real, Virtual, Mixed) on a shared scene
/// split and scores each model on every environment's test scenes: six
/// outcomes ordered by training set, then test environment.
pub fn run_cross_environment(corpus: &[RoadSceneDocument], base: &ExperimentSpec) -> Result<Vec<ExperimentOutcome>, EvalError> {
    let present: BTreeSet<Environment> = corpus.iter().map(|d| d.context.environment).collect();
    if present.len() < Environment::ALL.len() {
        return Err(EvalError::Infeasible("cross-environment runs need both Real and Virtual scenes".into()));
    }
    let all = ExperimentSpec { train: TrainSet::Mixed, test: Environment::ALL.to_vec(), ..base.clone() };
    check_spec(corpus, &all, Environment::ALL)?;
    let folds = folds_for(corpus, &all, Environment::ALL)?;
    let mut out = Vec::new();
    for train_set in TrainSet::ALL {
        let spec = ExperimentSpec { train: train_set, ..all.clone() };
        let trained = train_for(corpus, &spec, &folds)?;
        for &env in Environment::ALL {
            let test = [env];
            let scored = score(corpus, &trained.model, &folds.test, &test, &spec)?;
            let report = report(&spec, &test, &trained, &scored);
            out.push(ExperimentOutcome {
                report,
                predictions: scored.predictions,
                history: trained.history.clone(),
                model: trained.model.clone(),
            });
        }
    }
    Ok(out)
}

fn env_list(envs: &[Environment]) -> String {
    envs.iter().map(|e| e.as_str()).collect::<Vec<_>>().join("+")
}

/// Aligned text table (`Train Data | Test Data | F1 | Precision | Recall`,
/// two decimals) and one JSON record per report.
pub fn render_report(reports: &[MetricsReport]) -> (String, String) {
    let header = ["Train Data", "Test Data", "F1", "Precision", "Recall"];
    let rows: Vec<[String; 5]> = reports
        .iter()
        .map(|r| {
            [
                r.train.to_string(),
                env_list(&r.test),
                format!("{:.2}", r.metrics.f1),
                format!("{:.2}", r.metrics.precision),
                format!("{:.2}", r.metrics.recall),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut text = String::new();
    let mut line = |cells: [&str; 5]| {
        let padded: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(text, "{}", padded.join("  ").trim_end());
    };
    line(header);
    for row in &rows {
        line([&row[0], &row[1], &row[2], &row[3], &row[4]]);
    }
    let mut jsonl = String::new();
    for r in reports {
        jsonl.push_str(&serde_json::to_string(r).expect("report serializes"));
        jsonl.push('\n');
    }
    (text, jsonl)
}
