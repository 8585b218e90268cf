//! Synthetic annotated road-scene corpora with configurable label/feature
//! correlations.

use std::fs;
use std::io;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{from_flat_toml, to_flat_toml, ConfigError};
use crate::scene::xml::serialize_scene_xml;
use crate::scene::*;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<ConfigError> for SynthError {
    fn from(e: ConfigError) -> Self {
        SynthError::Config(e.0)
    }
}

/// One value per pedestrian-scene label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRows<T> {
    #[serde(rename = "NonePedestrian")]
    pub none: T,
    #[serde(rename = "PedestrianOccluded")]
    pub occluded: T,
    #[serde(rename = "PedestrianNotOccluded")]
    pub not_occluded: T,
}

impl<T> LabelRows<T> {
    pub fn get(&self, label: PedestriansScene) -> &T {
        match label {
            PedestriansScene::NonePedestrian => &self.none,
            PedestriansScene::PedestrianOccluded => &self.occluded,
            PedestriansScene::PedestrianNotOccluded => &self.not_occluded,
        }
    }

    fn rows(&self) -> [(PedestriansScene, &T); 3] {
        [PedestriansScene::NonePedestrian, PedestriansScene::PedestrianOccluded, PedestriansScene::PedestrianNotOccluded]
            .map(|l| (l, self.get(l)))
    }

    pub fn uniform(value: T) -> Self
    where
        T: Clone,
    {
        Self { none: value.clone(), occluded: value.clone(), not_occluded: value }
    }
}

/// One value per vehicle movement state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRows<T> {
    #[serde(rename = "ContinuousMovement")]
    pub continuous_movement: T,
    #[serde(rename = "Stopped")]
    pub stopped: T,
    #[serde(rename = "Accelerating")]
    pub accelerating: T,
    #[serde(rename = "Decelerating")]
    pub decelerating: T,
}

impl<T> StateRows<T> {
    pub fn get(&self, state: VehicleState) -> &T {
        match state {
            VehicleState::ContinuousMovement => &self.continuous_movement,
            VehicleState::Stopped => &self.stopped,
            VehicleState::Accelerating => &self.accelerating,
            VehicleState::Decelerating => &self.decelerating,
        }
    }
}

/// Scenes to generate per environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneCounts {
    #[serde(rename = "Real")]
    pub real: usize,
    #[serde(rename = "Virtual")]
    pub virtual_: usize,
}

impl SceneCounts {
    pub fn get(&self, env: Environment) -> usize {
        match env {
            Environment::Real => self.real,
            Environment::Virtual => self.virtual_,
        }
    }
}

pub const MAX_VEHICLES: usize = 3;
pub const MAX_LANES: usize = 4;

/// Generator parameters. Every categorical row is a probability vector whose
/// columns follow the `ALL` order of the corresponding enum; `vehicles` rows
/// cover counts `0..=3`, `lanes` rows cover `1..=4`, `zebra` is the
/// probability of a zebra crossing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub scenes: SceneCounts,
    pub frames_min: usize,
    pub frames_max: usize,
    /// Over `PedestriansScene::ALL`.
    pub label_prior: Vec<f64>,
    pub vehicles: LabelRows<Vec<f64>>,
    pub state: LabelRows<Vec<f64>>,
    pub lights: StateRows<Vec<f64>>,
    pub distance: LabelRows<Vec<f64>>,
    pub position: LabelRows<Vec<f64>>,
    pub surroundings: LabelRows<Vec<f64>>,
    pub zebra: LabelRows<f64>,
    pub lanes: LabelRows<Vec<f64>>,
    /// Occlusion level of each pedestrian; the first pedestrian of an
    /// occluded frame is drawn from the non-`None` part of the row.
    pub occlusion: LabelRows<Vec<f64>>,
    /// Probability of a second pedestrian in frames that have pedestrians.
    pub extra_pedestrian: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        default_config()
    }
}

/// Frame counts per label in the reference dataset: occluded, not occluded,
/// no pedestrian.
pub const REFERENCE_FRAME_COUNTS: [f64; 3] = [8459.0, 9735.0, 21520.0];

/// Informative defaults: no-pedestrian scenes are dominated by vehicles in
/// continuous motion with lights off and far away; occluded scenes by
/// decelerating vehicles with lights on and vegetation. Zero cells make some
/// feature values exclusive to a class; stopped and decelerating vehicles only
/// appear in occluded scenes, and every frame has at least one vehicle.
pub fn default_config() -> GeneratorConfig {
    let [occ, vis, none] = REFERENCE_FRAME_COUNTS;
    let total = occ + vis + none;
    GeneratorConfig {
        scenes: SceneCounts { real: 40, virtual_: 59 },
        frames_min: 20,
        frames_max: 40,
        label_prior: vec![none / total, occ / total, vis / total],
        vehicles: LabelRows {
            none: vec![0.0, 0.4, 0.35, 0.25],
            occluded: vec![0.0, 0.4, 0.4, 0.2],
            not_occluded: vec![0.0, 0.45, 0.35, 0.2],
        },
        // ContinuousMovement, Stopped, Accelerating, Decelerating
        state: LabelRows {
            none: vec![0.8, 0.0, 0.2, 0.0],
            occluded: vec![0.0, 0.3, 0.0, 0.7],
            not_occluded: vec![0.6, 0.0, 0.4, 0.0],
        },
        // On, Off
        lights: StateRows {
            continuous_movement: vec![0.1, 0.9],
            stopped: vec![0.8, 0.2],
            accelerating: vec![0.05, 0.95],
            decelerating: vec![0.9, 0.1],
        },
        // Near, Middle, Far
        distance: LabelRows {
            none: vec![0.1, 0.3, 0.6],
            occluded: vec![0.6, 0.4, 0.0],
            not_occluded: vec![0.2, 0.3, 0.5],
        },
        // Front, FrontLeft, FrontRight, Left, Right
        position: LabelRows {
            none: vec![0.4, 0.0, 0.0, 0.3, 0.3],
            occluded: vec![0.2, 0.4, 0.4, 0.0, 0.0],
            not_occluded: vec![0.4, 0.0, 0.0, 0.3, 0.3],
        },
        // Vegetation, Clear
        surroundings: LabelRows {
            none: vec![0.3, 0.7],
            occluded: vec![0.7, 0.3],
            not_occluded: vec![0.3, 0.7],
        },
        zebra: LabelRows { none: 0.2, occluded: 0.6, not_occluded: 0.5 },
        lanes: LabelRows {
            none: vec![0.3, 0.2, 0.2, 0.3],
            occluded: vec![0.0, 0.6, 0.4, 0.0],
            not_occluded: vec![0.3, 0.2, 0.2, 0.3],
        },
        // None, Partial, Full
        occlusion: LabelRows {
            none: vec![1.0, 0.0, 0.0],
            occluded: vec![0.0, 0.4, 0.6],
            not_occluded: vec![1.0, 0.0, 0.0],
        },
        extra_pedestrian: 0.3,
        seed: 0,
    }
}

/// Defaults with every label sharing the same pooled rows, so features carry
/// no information about the label.
pub fn uninformative_config() -> GeneratorConfig {
    let base = default_config();
    let pool = |rows: &LabelRows<Vec<f64>>| -> LabelRows<Vec<f64>> {
        let n = rows.none.len();
        let mut avg = vec![0.0; n];
        for (_, row) in rows.rows() {
            for (a, v) in avg.iter_mut().zip(row) {
                *a += v / 3.0;
            }
        }
        LabelRows::uniform(avg)
    };
    GeneratorConfig {
        vehicles: pool(&base.vehicles),
        state: pool(&base.state),
        distance: pool(&base.distance),
        position: pool(&base.position),
        surroundings: pool(&base.surroundings),
        zebra: LabelRows::uniform((base.zebra.none + base.zebra.occluded + base.zebra.not_occluded) / 3.0),
        lanes: pool(&base.lanes),
        ..base
    }
}

fn check_row(name: &str, row: &[f64], len: usize) -> Result<(), SynthError> {
    if row.len() != len {
        return Err(SynthError::Config(format!("{name} has {} entries, expected {len}", row.len())));
    }
    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(SynthError::Config(format!("{name} has a negative or non-finite entry")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SynthError::Config(format!("{name} sums to {sum}, expected 1")));
    }
    Ok(())
}

fn check_unit(name: &str, p: f64) -> Result<(), SynthError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(SynthError::Config(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.frames_min == 0 || self.frames_min > self.frames_max {
            return Err(SynthError::Config(format!(
                "frame range {}..={} must be non-empty and start at 1 or more",
                self.frames_min, self.frames_max
            )));
        }
        check_row("label_prior", &self.label_prior, 3)?;
        for (label, _) in self.vehicles.rows() {
            check_row(&format!("vehicles.{label}"), self.vehicles.get(label), MAX_VEHICLES + 1)?;
            check_row(&format!("state.{label}"), self.state.get(label), VehicleState::ALL.len())?;
            check_row(&format!("distance.{label}"), self.distance.get(label), Distance::ALL.len())?;
            check_row(&format!("position.{label}"), self.position.get(label), Position::ALL.len())?;
            check_row(&format!("surroundings.{label}"), self.surroundings.get(label), Surroundings::ALL.len())?;
            check_row(&format!("lanes.{label}"), self.lanes.get(label), MAX_LANES)?;
            check_row(&format!("occlusion.{label}"), self.occlusion.get(label), Occlusion::ALL.len())?;
            check_unit(&format!("zebra.{label}"), *self.zebra.get(label))?;
        }
        for &state in VehicleState::ALL {
            check_row(&format!("lights.{state}"), self.lights.get(state), BrakingLights::ALL.len())?;
        }
        if self.occlusion.occluded[1..].iter().sum::<f64>() <= 0.0 {
            return Err(SynthError::Config("occlusion.PedestrianOccluded gives no mass to Partial or Full".into()));
        }
        check_unit("extra_pedestrian", self.extra_pedestrian)?;
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, SynthError> {
        let config: Self = from_flat_toml(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_text(&self) -> String {
        to_flat_toml(self).expect("generator config serializes")
    }
}

fn categorical(row: &[f64]) -> WeightedIndex<f64> {
    WeightedIndex::new(row).expect("validated row")
}

/// Pre-built samplers for one label.
struct LabelSampler {
    vehicles: WeightedIndex<f64>,
    state: WeightedIndex<f64>,
    distance: WeightedIndex<f64>,
    position: WeightedIndex<f64>,
    surroundings: WeightedIndex<f64>,
    lanes: WeightedIndex<f64>,
    occlusion: WeightedIndex<f64>,
    /// Occlusion restricted to Partial/Full.
    occluded_only: Option<WeightedIndex<f64>>,
    zebra: f64,
}

struct Sampler {
    label: WeightedIndex<f64>,
    per_label: Vec<LabelSampler>,
    lights: Vec<WeightedIndex<f64>>,
}

impl Sampler {
    fn new(c: &GeneratorConfig) -> Self {
        let per_label = PedestriansScene::ALL
            .iter()
            .map(|&l| {
                let occ = c.occlusion.get(l);
                LabelSampler {
                    vehicles: categorical(c.vehicles.get(l)),
                    state: categorical(c.state.get(l)),
                    distance: categorical(c.distance.get(l)),
                    position: categorical(c.position.get(l)),
                    surroundings: categorical(c.surroundings.get(l)),
                    lanes: categorical(c.lanes.get(l)),
                    occlusion: categorical(occ),
                    occluded_only: WeightedIndex::new(&occ[1..]).ok(),
                    zebra: *c.zebra.get(l),
                }
            })
            .collect();
        let lights = VehicleState::ALL.iter().map(|&s| categorical(c.lights.get(s))).collect();
        Self { label: categorical(&c.label_prior), per_label, lights }
    }
}

fn pedestrian<R: Rng>(rng: &mut R, id: usize, occlusion: Occlusion) -> PedestrianRecord {
    let visible_fraction = match occlusion {
        Occlusion::None => None,
        Occlusion::Partial => Some(rng.gen_range(FULL_OCCLUSION_VISIBILITY..1.0)),
        Occlusion::Full => Some(rng.gen_range(0.0..FULL_OCCLUSION_VISIBILITY)),
    };
    PedestrianRecord { pedestrian_id: format!("p{id}"), occlusion, visible_fraction }
}

fn scene<R: Rng>(rng: &mut R, s: &Sampler, c: &GeneratorConfig, env: Environment, id: String) -> RoadSceneDocument {
    let label = PedestriansScene::ALL[s.label.sample(rng)];
    let ls = &s.per_label[label.index()];
    let context = SceneContext {
        scene_id: id,
        environment: env,
        zebra_crossing: rng.gen_bool(ls.zebra),
        lanes: 1 + ls.lanes.sample(rng) as u32,
        surroundings: Surroundings::ALL[ls.surroundings.sample(rng)],
    };
    let n_frames = rng.gen_range(c.frames_min..=c.frames_max);
    let frames = (0..n_frames)
        .map(|n| {
            let mut pedestrians = Vec::new();
            if label != PedestriansScene::NonePedestrian {
                let count = 1 + rng.gen_bool(c.extra_pedestrian) as usize;
                for i in 0..count {
                    let level = match (&ls.occluded_only, i, label) {
                        (Some(only), 0, PedestriansScene::PedestrianOccluded) => Occlusion::ALL[1 + only.sample(rng)],
                        _ => Occlusion::ALL[ls.occlusion.sample(rng)],
                    };
                    pedestrians.push(pedestrian(rng, i + 1, level));
                }
            }
            let vehicles = (0..ls.vehicles.sample(rng))
                .map(|i| {
                    let state = VehicleState::ALL[ls.state.sample(rng)];
                    VehicleRecord {
                        vehicle_id: format!("v{}", i + 1),
                        state,
                        braking_lights: BrakingLights::ALL[s.lights[state as usize].sample(rng)],
                        distance: Distance::ALL[ls.distance.sample(rng)],
                        position: Position::ALL[ls.position.sample(rng)],
                    }
                })
                .collect();
            FrameAnnotation { frame_number: n as u32, pedestrians_scene: label, pedestrians, vehicles }
        })
        .collect();
    RoadSceneDocument { context, frames }
}

/// Scene id for the `i`-th scene of an environment, e.g. `virtual-007`.
pub fn scene_id(env: Environment, i: usize) -> String {
    format!("{}-{i:03}", env.as_str().to_lowercase())
}

/// Generates `config.scenes` documents per environment, Real first. Each
/// scene draws from its own random stream derived from `seed`.
pub fn generate_corpus(config: &GeneratorConfig, seed: u64) -> Result<Vec<RoadSceneDocument>, SynthError> {
    config.validate()?;
    let sampler = Sampler::new(config);
    let mut out = Vec::new();
    for (e, &env) in Environment::ALL.iter().enumerate() {
        for i in 0..config.scenes.get(env) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((e as u64) << 32) | i as u64);
            out.push(scene(&mut rng, &sampler, config, env, scene_id(env, i)));
        }
    }
    Ok(out)
}

/// `scene_id<TAB>environment<TAB>label<TAB>frames` with a header line; the
/// label is the scene's dominant label.
pub fn manifest(corpus: &[RoadSceneDocument]) -> String {
    let mut out = String::from("scene_id\tenvironment\tlabel\tframes\n");
    for d in corpus {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            d.scene_id(),
            d.context.environment,
            d.dominant_label(),
            d.frames.len()
        ));
    }
    out
}

/// Writes `<scene_id>.xml` per document and `manifest.tsv` into `dir`.
pub fn write_corpus(dir: &Path, corpus: &[RoadSceneDocument]) -> Result<(), SynthError> {
    fs::create_dir_all(dir)?;
    for d in corpus {
        fs::write(dir.join(format!("{}.xml", d.scene_id())), serialize_scene_xml(d))?;
    }
    fs::write(dir.join("manifest.tsv"), manifest(corpus))?;
    Ok(())
}
