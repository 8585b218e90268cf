use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ontology::{self, EntityKind};
use super::{build_kg, BuildOptions, IndexedTriple, KgError, KnowledgeGraph};
use crate::scene::{Environment, PedestriansScene, RoadSceneDocument};

/// Scenes requested for training and testing in one environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldCounts {
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitPlan {
    pub counts: BTreeMap<Environment, FoldCounts>,
    /// Share of each environment's training scenes held out for validation.
    pub validation_ratio: f64,
}

impl SplitPlan {
    /// 32/8 real and 50/9 virtual scenes, 10% of training scenes for validation.
    pub fn standard() -> Self {
        let mut counts = BTreeMap::new();
        counts.insert(Environment::Real, FoldCounts { train: 32, test: 8 });
        counts.insert(Environment::Virtual, FoldCounts { train: 50, test: 9 });
        Self { counts, validation_ratio: 0.1 }
    }
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self::standard()
    }
}

/// Scene ids per fold.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Training graph plus held-out triples indexed against it.
///
/// `train` is the full training graph. `validation` and `test` hold the
/// class-level triples (prototype and `RoadScene` subjects) induced by the
/// held-out scenes, restricted to entities known to the training graph; these
/// are the facts the predictor queries.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleSplit {
    pub kg: KnowledgeGraph,
    pub train: Vec<IndexedTriple>,
    pub validation: Vec<IndexedTriple>,
    pub test: Vec<IndexedTriple>,
    pub folds: FoldAssignment,
}

impl TripleSplit {
    /// Split over an arbitrary graph; `validation` and `test` are indexed
    /// against `kg` and may overlap its triples.
    pub fn from_parts(kg: KnowledgeGraph, validation: Vec<IndexedTriple>, test: Vec<IndexedTriple>) -> Self {
        let train = kg.triples().to_vec();
        Self { kg, train, validation, test, folds: FoldAssignment::default() }
    }

    /// Every known-true triple, the filter for ranking evaluation.
    pub fn known_triples(&self) -> Vec<IndexedTriple> {
        let set: BTreeSet<IndexedTriple> =
            self.train.iter().chain(&self.validation).chain(&self.test).copied().collect();
        set.into_iter().collect()
    }
}

/// Largest-remainder apportionment of `total` over strata of the given sizes.
fn apportion(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let mut out: Vec<usize> = sizes.iter().map(|&s| total * s / n).collect();
    let mut rema: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(i, &s)| ((total * s) % n, i)).collect();
    // larger remainder first, earlier stratum on ties
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = total - out.iter().sum::<usize>();
    for (_, i) in rema {
        if left == 0 {
            break;
        }
        if out[i] < sizes[i] {
            out[i] += 1;
            left -= 1;
        }
    }
    out
}

/// Take `quota[i]` items from the front of each stratum.
fn take(strata: &mut [Vec<String>], quota: &[usize]) -> Vec<String> {
    let mut out = Vec::new();
    for (s, &q) in strata.iter_mut().zip(quota) {
        out.extend(s.drain(..q));
    }
    out
}

/// Scene-level fold assignment, stratified by each scene's dominant label
/// within every environment and deterministic under `seed`.
pub fn assign_folds(corpus: &[RoadSceneDocument], plan: &SplitPlan, seed: u64) -> Result<FoldAssignment, KgError> {
    if !(0.0..1.0).contains(&plan.validation_ratio) {
        return Err(KgError::Split(format!("validation ratio {} outside [0, 1)", plan.validation_ratio)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = FoldAssignment::default();
    for (&env, counts) in &plan.counts {
        let mut docs: Vec<&RoadSceneDocument> = corpus.iter().filter(|d| d.context.environment == env).collect();
        docs.sort_by(|a, b| a.scene_id().cmp(b.scene_id()));
        if counts.train + counts.test > docs.len() {
            return Err(KgError::Split(format!(
                "{env}: requested {} train + {} test scenes but only {} available",
                counts.train,
                counts.test,
                docs.len()
            )));
        }
        let mut strata: Vec<Vec<String>> = PedestriansScene::ALL
            .iter()
            .map(|&label| {
                docs.iter().filter(|d| d.dominant_label() == label).map(|d| d.scene_id().to_string()).collect()
            })
            .collect();
        for s in &mut strata {
            s.shuffle(&mut rng);
        }
        let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
        let test = take(&mut strata, &apportion(&sizes, counts.test));
        let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
        let mut train_strata: Vec<Vec<String>> = Vec::new();
        let quota = apportion(&sizes, counts.train);
        for (s, &q) in strata.iter_mut().zip(&quota) {
            train_strata.push(s.drain(..q).collect());
        }
        let n_val = if counts.train >= 2 {
            ((counts.train as f64 * plan.validation_ratio).round() as usize).min(counts.train - 1)
        } else {
            0
        };
        let sizes: Vec<usize> = train_strata.iter().map(Vec::len).collect();
        let validation = take(&mut train_strata, &apportion(&sizes, n_val));
        folds.test.extend(test);
        folds.validation.extend(validation);
        folds.train.extend(train_strata.into_iter().flatten());
    }
    for f in [&mut folds.train, &mut folds.validation, &mut folds.test] {
        f.sort();
    }
    Ok(folds)
}

fn docs_in<'a>(corpus: &'a [RoadSceneDocument], ids: &[String]) -> Vec<RoadSceneDocument> {
    let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    corpus.iter().filter(|d| wanted.contains(d.scene_id())).cloned().collect()
}

/// Class-level triples induced by `docs`, indexed against `kg`; triples with
/// entities or relations unknown to `kg` are dropped.
pub(crate) fn class_level_triples(kg: &KnowledgeGraph, docs: &[RoadSceneDocument]) -> Result<Vec<IndexedTriple>, KgError> {
    if docs.is_empty() {
        return Ok(Vec::new());
    }
    let held_out = build_kg(docs, BuildOptions { link_prototypes: true })?;
    Ok(held_out
        .named_triples()
        .filter(|t| ontology::kind_of(&t.subject) == Some(EntityKind::SceneClass))
        .filter_map(|t| kg.index_of(&t))
        .collect())
}

/// Builds the training graph from the training scenes and derives held-out
/// validation and test triples from the remaining folds.
pub fn split_corpus(corpus: &[RoadSceneDocument], plan: &SplitPlan, seed: u64) -> Result<TripleSplit, KgError> {
    let folds = assign_folds(corpus, plan, seed)?;
    split_from_folds(corpus, folds)
}

pub(crate) fn split_from_folds(corpus: &[RoadSceneDocument], folds: FoldAssignment) -> Result<TripleSplit, KgError> {
    let kg = build_kg(&docs_in(corpus, &folds.train), BuildOptions::default())?;
    let validation = class_level_triples(&kg, &docs_in(corpus, &folds.validation))?;
    let test = class_level_triples(&kg, &docs_in(corpus, &folds.test))?;
    let train = kg.triples().to_vec();
    Ok(TripleSplit { kg, train, validation, test, folds })
}
