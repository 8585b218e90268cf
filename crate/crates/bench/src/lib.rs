//! Shared fixtures for the benchmarks.

use occlukg_core::kg::{split_corpus, FoldCounts, SplitPlan, TripleSplit};
use occlukg_core::kge::{init_embeddings, ComplexModel, TrainedModel};
use occlukg_core::scene::{Environment, RoadSceneDocument};
use occlukg_core::synth::{default_config, generate_corpus, SceneCounts};

/// Virtual-only synthetic corpus with `scenes` scenes of 20 to 40 frames.
pub fn corpus(scenes: usize, seed: u64) -> Vec<RoadSceneDocument> {
    let mut config = default_config();
    config.scenes = SceneCounts { real: 0, virtual_: scenes };
    generate_corpus(&config, seed).expect("default config is valid")
}

/// Scene split holding out a fifth of the scenes for testing.
pub fn split(corpus: &[RoadSceneDocument]) -> TripleSplit {
    let test = (corpus.len() / 5).max(1);
    let mut counts = std::collections::BTreeMap::new();
    counts.insert(Environment::Virtual, FoldCounts { train: corpus.len() - test, test });
    split_corpus(corpus, &SplitPlan { counts, validation_ratio: 0.1 }, 0).expect("split fits corpus")
}

pub fn model(split: &TripleSplit, k: usize) -> ComplexModel {
    init_embeddings(&split.kg, k, 0).expect("non-empty graph")
}

pub fn trained(split: &TripleSplit, k: usize) -> TrainedModel {
    TrainedModel { model: model(split, k), entities: split.kg.entities().clone(), relations: split.kg.relations().clone() }
}
