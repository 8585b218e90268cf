//! Command implementations behind the `occlukg` binary.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use occlukg_core::bayes::{predict_frame, Denominator};
use occlukg_core::config::from_flat_toml;
use occlukg_core::eval::{render_report, run_cross_environment, run_experiment, ExperimentMode, ExperimentSpec};
use occlukg_core::kg::ontology::{self, EntityKind};
use occlukg_core::kg::{build_kg, BuildOptions, KnowledgeGraph, TripleSplit};
use occlukg_core::kge::{calibrate, calibration_negatives, checkpoint, train, TrainedModel, TrainingConfig};
use occlukg_core::scene::xml::parse_scene_xml;
use occlukg_core::scene::{validate_document, RoadSceneDocument};
use occlukg_core::synth::{default_config, generate_corpus, write_corpus, GeneratorConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod error;

pub use error::{CliError, CliResult};
use error::io_error;

pub const EFFECTIVE_CONFIG: &str = "effective-config.txt";

#[derive(Debug, Parser)]
#[command(name = "occlukg", version, about = "Occluded-pedestrian prediction from road-scene knowledge graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic annotated corpus.
    Gen(GenArgs),
    /// Compile a corpus directory into a triple file.
    BuildKg(BuildKgArgs),
    /// Train ComplEx embeddings on a triple file.
    Train(TrainArgs),
    /// Run a split/train/predict experiment on a corpus.
    Experiment(ExperimentArgs),
    /// Explain the prediction for one frame of one scene.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Generator config (`key = value` lines); defaults to the built-in tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BuildKgArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip class prototypes and the generic `RoadScene` subject.
    #[arg(long)]
    pub no_prototypes: bool,
}

#[derive(Debug, Args, Default)]
pub struct TrainingFlags {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub eta: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub check_interval: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrainingFlags {
    fn apply(&self, c: &mut TrainingConfig) {
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { c.$field = v; })*
            };
        }
        set!(k => k, eta => eta, lr => learning_rate, batch => batch_size, epochs => max_epochs,
             check_interval => check_interval, patience => patience, temperature => adversarial_temperature,
             l2 => l2, seed => seed);
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub kg: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training config (`key = value` lines); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Validation triples (TSV); defaults to the graph's class-level triples.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// Keep `p = sigmoid(score)` instead of fitting Platt scaling.
    #[arg(long)]
    pub no_calibrate: bool,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub denominator: Option<Denominator>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    /// Frame number as annotated in the scene file.
    #[arg(long)]
    pub frame: u32,
    #[arg(long, default_value_t = 30)]
    pub horizon: usize,
    #[arg(long, default_value_t = Denominator::Marginal)]
    pub denominator: Denominator,
}

pub fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::BuildKg(a) => cmd_build_kg(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Experiment(a) => cmd_experiment(&a),
        Command::Predict(a) => cmd_predict(&a),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

/// Directory holding an output file, created if missing.
fn parent_dir(path: &Path) -> CliResult<PathBuf> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    create_dir(&dir)?;
    Ok(dir)
}

/// Parses every `*.xml` file of `dir` in file-name order.
pub fn read_corpus(dir: &Path) -> CliResult<Vec<RoadSceneDocument>> {
    let entries = fs::read_dir(dir).map_err(|e| io_error(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "xml"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("{}: no .xml scene files", dir.display())));
    }
    files
        .iter()
        .map(|f| {
            let bytes = fs::read(f).map_err(|e| io_error(f, e))?;
            parse_scene_xml(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", f.display())))
        })
        .collect()
}

fn check_corpus(corpus: &[RoadSceneDocument]) -> CliResult<()> {
    let invalid: Vec<String> = corpus
        .iter()
        .filter_map(|d| {
            let v = validate_document(d);
            (!v.is_empty()).then(|| format!("{}: {}", d.scene_id(), v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")))
        })
        .collect();
    if invalid.is_empty() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{} invalid scene(s):\n  {}", invalid.len(), invalid.join("\n  "))))
    }
}

pub fn cmd_gen(a: &GenArgs) -> CliResult<String> {
    let mut config = match &a.config {
        Some(p) => GeneratorConfig::from_text(&read_text(p)?)?,
        None => default_config(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let corpus = generate_corpus(&config, config.seed)?;
    write_corpus(&a.out, &corpus).map_err(|e| CliError::Usage(format!("{}: {e}", a.out.display())))?;
    write(&a.out.join(EFFECTIVE_CONFIG), config.to_text())?;
    Ok(format!("wrote {} scenes to {}\n", corpus.len(), a.out.display()))
}

pub fn cmd_build_kg(a: &BuildKgArgs) -> CliResult<String> {
    let corpus = read_corpus(&a.corpus)?;
    check_corpus(&corpus)?;
    let kg = build_kg(&corpus, BuildOptions { link_prototypes: !a.no_prototypes })?;
    let dir = parent_dir(&a.out)?;
    write(&a.out, kg.to_tsv())?;
    write(&dir.join(EFFECTIVE_CONFIG), format!("link_prototypes = {}\n", !a.no_prototypes))?;
    Ok(kg.stats().to_string())
}

/// Triples whose subject is a class prototype or `RoadScene`.
fn class_level(kg: &KnowledgeGraph) -> Vec<occlukg_core::kg::IndexedTriple> {
    kg.triples()
        .iter()
        .copied()
        .filter(|t| ontology::kind_of(kg.entities().name(t.subject)) == Some(EntityKind::SceneClass))
        .collect()
}

#[derive(serde::Serialize)]
struct TrainEcho<'a> {
    training: &'a TrainingConfig,
    calibrate: bool,
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<String> {
    let mut config = match &a.config {
        Some(p) => from_flat_toml::<TrainingConfig>(&read_text(p)?).map_err(|e| CliError::Usage(e.0))?,
        None => TrainingConfig::default(),
    };
    a.training.apply(&mut config);
    config.validate()?;
    let kg = KnowledgeGraph::from_tsv(&read_text(&a.kg)?)?;
    let validation = match &a.validation {
        Some(p) => {
            let held = KnowledgeGraph::from_tsv(&read_text(p)?)?;
            let idx: Vec<_> = held.named_triples().filter_map(|t| kg.index_of(&t)).collect();
            if idx.len() < held.len() {
                eprintln!("{} validation triple(s) mention unknown entities and were dropped", held.len() - idx.len());
            }
            idx
        }
        None => {
            let v = class_level(&kg);
            if v.is_empty() {
                kg.triples().to_vec()
            } else {
                v
            }
        }
    };
    let split = TripleSplit::from_parts(kg, validation, Vec::new());
    let (mut model, history) = train(&split, &config)?;
    let calibrated = !a.no_calibrate && !split.validation.is_empty();
    if calibrated {
        let known: HashSet<_> = split.known_triples().into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(2);
        let negatives = calibration_negatives(&split.validation, &known, model.n_entities(), config.eta, &mut rng)?;
        calibrate(&mut model, &split.validation, &negatives)?;
    }
    let trained =
        TrainedModel { model, entities: split.kg.entities().clone(), relations: split.kg.relations().clone() };
    let dir = parent_dir(&a.out)?;
    checkpoint::save(&trained, &a.out)?;
    write(&history_path(&a.out), history.to_text())?;
    let echo = occlukg_core::config::to_flat_toml(&TrainEcho { training: &config, calibrate: calibrated })
        .map_err(|e| CliError::Usage(e.0))?;
    write(&dir.join(EFFECTIVE_CONFIG), echo)?;
    let c = trained.model.calibration;
    Ok(format!(
        "epochs\t{}\nbest_epoch\t{}\nbest_mrr\t{}\nstopped_early\t{}\ncalibration\t{}\t{}\n",
        history.epoch_losses.len(),
        history.best_epoch,
        history.best_mrr.map_or("-".to_string(), |m| format!("{m:.4}")),
        history.stopped_early,
        c.a,
        c.b
    ))
}

pub fn history_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".history.tsv");
    PathBuf::from(s)
}

pub fn cmd_experiment(a: &ExperimentArgs) -> CliResult<String> {
    let mut spec = ExperimentSpec::from_text(&read_text(&a.spec)?)?;
    if let Some(h) = a.horizon {
        spec.horizon = h;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(d) = a.denominator {
        spec.denominator = d;
    }
    if spec.name.is_empty() || spec.name.contains(['/', '\\']) {
        return Err(CliError::Usage(format!("experiment name {:?} is not a valid file stem", spec.name)));
    }
    let corpus = read_corpus(&a.corpus)?;
    check_corpus(&corpus)?;
    let outcomes = match spec.mode {
        ExperimentMode::Single => vec![run_experiment(&corpus, &spec)?],
        ExperimentMode::Cross => run_cross_environment(&corpus, &spec)?,
    };
    create_dir(&a.out)?;
    let reports: Vec<_> = outcomes.iter().map(|o| o.report.clone()).collect();
    let (table, jsonl) = render_report(&reports);
    write(&a.out.join(format!("{}.txt", spec.name)), &table)?;
    write(&a.out.join(format!("{}.jsonl", spec.name)), jsonl)?;
    let mut predictions = String::new();
    let mut histories: BTreeMap<String, String> = BTreeMap::new();
    for o in &outcomes {
        for p in &o.predictions {
            predictions.push_str(&serde_json::to_string(p).expect("prediction serializes"));
            predictions.push('\n');
        }
        histories.entry(o.report.train.to_string()).or_insert_with(|| o.history.to_text());
    }
    write(&a.out.join(format!("{}.predictions.jsonl", spec.name)), predictions)?;
    for (train, text) in histories {
        write(&a.out.join(format!("{}.{}.history.tsv", spec.name, train.to_lowercase())), text)?;
    }
    write(&a.out.join(EFFECTIVE_CONFIG), spec.to_text())?;
    Ok(table)
}

pub fn cmd_predict(a: &PredictArgs) -> CliResult<String> {
    let model = checkpoint::load(&a.model)?;
    let bytes = fs::read(&a.scene).map_err(|e| io_error(&a.scene, e))?;
    let doc = parse_scene_xml(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", a.scene.display())))?;
    let t = doc
        .frames
        .iter()
        .position(|f| f.frame_number == a.frame)
        .ok_or_else(|| CliError::Usage(format!("scene {:?} has no frame {}", doc.scene_id(), a.frame)))?;
    let p = predict_frame(&model, &doc, t, a.horizon, a.denominator)?;
    let mut out = String::new();
    for r in &p.posteriors {
        out.push_str(&serde_json::to_string(r).expect("report serializes"));
        out.push('\n');
    }
    let summary = serde_json::json!({
        "scene_id": p.scene_id,
        "frame": p.frame,
        "horizon": p.horizon,
        "target_frame": p.target_frame,
        "truncated": p.truncated,
        "predicted": p.predicted.as_str(),
        "ground_truth": p.ground_truth.as_str(),
        "skipped_evidence": p.skipped_evidence,
    });
    out.push_str(&summary.to_string());
    out.push('\n');
    Ok(out)
}
