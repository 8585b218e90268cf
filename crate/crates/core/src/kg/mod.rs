//! Knowledge graph construction from annotated road scenes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::scene::ViolationList;

pub(crate) mod build;
pub mod ontology;
mod split;

pub use build::{build_kg, link_prototypes, BuildOptions};
pub use ontology::{EntityKind, Relation};
pub use split::{assign_folds, split_corpus, FoldAssignment, FoldCounts, SplitPlan, TripleSplit};
pub(crate) use split::split_from_folds;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("scene {scene_id:?} is invalid: {violations}")]
    InvalidDocument { scene_id: String, violations: ViolationList },
    #[error("duplicate scene id {0:?} in corpus")]
    DuplicateScene(String),
    #[error("ontology type-check failed for <{subject}, {relation}, {object}>: {reason}")]
    TypeCheck { subject: String, relation: String, object: String, reason: String },
    #[error("frame {0} has no pedestrians-scene label")]
    UnlabeledFrame(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("line {line}: {message}")]
    Tsv { line: usize, message: String },
}

/// Bidirectional id ↔ dense index table. Ids are stored in sorted order so
/// that indices only depend on the id set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_sorted(names: Vec<String>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i as u32)).collect();
        Self { names, index }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: u32) -> &str {
        &self.names[idx as usize]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Triple over dense entity / relation indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct IndexedTriple {
    pub subject: u32,
    pub relation: u32,
    pub object: u32,
}

impl IndexedTriple {
    pub fn new(subject: u32, relation: u32, object: u32) -> Self {
        Self { subject, relation, object }
    }
}

/// Triple over entity / relation ids.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl Triple {
    pub fn new(subject: impl Into<String>, relation: impl Into<String>, object: impl Into<String>) -> Self {
        Self { subject: subject.into(), relation: relation.into(), object: object.into() }
    }
}

/// Entity and relation tables plus a duplicate-free, sorted triple set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    triples: Vec<IndexedTriple>,
}

impl KnowledgeGraph {
    /// Builds a graph from named triples. Duplicates collapse; vocabularies
    /// contain exactly the ids that occur in some triple.
    pub fn from_triples<I: IntoIterator<Item = Triple>>(triples: I) -> Self {
        let set: BTreeSet<Triple> = triples.into_iter().collect();
        let mut ents = BTreeSet::new();
        let mut rels = BTreeSet::new();
        for t in &set {
            ents.insert(t.subject.as_str());
            ents.insert(t.object.as_str());
            rels.insert(t.relation.as_str());
        }
        let entities = Vocab::from_sorted(ents.into_iter().map(str::to_string).collect());
        let relations = Vocab::from_sorted(rels.into_iter().map(str::to_string).collect());
        let mut indexed: Vec<IndexedTriple> = set
            .iter()
            .map(|t| {
                IndexedTriple::new(
                    entities.get(&t.subject).unwrap(),
                    relations.get(&t.relation).unwrap(),
                    entities.get(&t.object).unwrap(),
                )
            })
            .collect();
        indexed.sort_unstable();
        Self { entities, relations, triples: indexed }
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn triples(&self) -> &[IndexedTriple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn named(&self, t: IndexedTriple) -> Triple {
        Triple::new(
            self.entities.name(t.subject),
            self.relations.name(t.relation),
            self.entities.name(t.object),
        )
    }

    pub fn named_triples(&self) -> impl Iterator<Item = Triple> + '_ {
        self.triples.iter().map(|&t| self.named(t))
    }

    pub fn index_of(&self, t: &Triple) -> Option<IndexedTriple> {
        Some(IndexedTriple::new(
            self.entities.get(&t.subject)?,
            self.relations.get(&t.relation)?,
            self.entities.get(&t.object)?,
        ))
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.index_of(t).is_some_and(|it| self.triples.binary_search(&it).is_ok())
    }

    /// Checks every triple against the ontology's domain/range signatures.
    pub fn type_check(&self) -> Result<(), KgError> {
        for t in self.named_triples() {
            type_check_triple(&t)?;
        }
        Ok(())
    }

    /// Sorted `subject<TAB>relation<TAB>object` lines.
    pub fn to_tsv(&self) -> String {
        let mut lines: Vec<Triple> = self.named_triples().collect();
        lines.sort();
        let mut out = String::new();
        for t in lines {
            let _ = writeln!(out, "{}\t{}\t{}", t.subject, t.relation, t.object);
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, KgError> {
        let mut triples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
                return Err(KgError::Tsv { line: i + 1, message: format!("expected 3 tab-separated fields: {line:?}") });
            }
            triples.push(Triple::new(fields[0], fields[1], fields[2]));
        }
        Ok(Self::from_triples(triples))
    }

    pub fn stats(&self) -> KgStats {
        kg_stats(self)
    }
}

pub(crate) fn type_check_triple(t: &Triple) -> Result<(), KgError> {
    let fail = |reason: String| KgError::TypeCheck {
        subject: t.subject.clone(),
        relation: t.relation.clone(),
        object: t.object.clone(),
        reason,
    };
    let relation: Relation = t.relation.parse().map_err(fail)?;
    let s = ontology::kind_of(&t.subject).ok_or_else(|| fail(format!("unknown entity {:?}", t.subject)))?;
    let o = ontology::kind_of(&t.object).ok_or_else(|| fail(format!("unknown entity {:?}", t.object)))?;
    if !relation.accepts(s, o) {
        return Err(fail(format!("{relation} does not accept {s:?} -> {o:?}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct KgStats {
    pub entities: usize,
    /// Distinct relations occurring in the graph.
    pub relations: usize,
    pub triples: usize,
    pub per_relation: BTreeMap<String, usize>,
    /// Frame entities per pedestrians-scene label.
    pub frames_per_label: BTreeMap<String, usize>,
}

impl std::fmt::Display for KgStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "entities\t{}", self.entities)?;
        writeln!(f, "relations\t{}", self.relations)?;
        writeln!(f, "triples\t{}", self.triples)?;
        for (r, n) in &self.per_relation {
            writeln!(f, "relation\t{r}\t{n}")?;
        }
        for (l, n) in &self.frames_per_label {
            writeln!(f, "label\t{l}\t{n}")?;
        }
        Ok(())
    }
}

pub fn kg_stats(kg: &KnowledgeGraph) -> KgStats {
    let mut per_relation = BTreeMap::new();
    let mut frames_per_label = BTreeMap::new();
    let contains = kg.relations.get(Relation::Contains.as_str());
    for &t in &kg.triples {
        *per_relation.entry(kg.relations.name(t.relation).to_string()).or_insert(0) += 1;
        if Some(t.relation) == contains
            && ontology::kind_of(kg.entities.name(t.subject)) == Some(EntityKind::Frame)
            && ontology::kind_of(kg.entities.name(t.object)) == Some(EntityKind::SceneLabel)
        {
            *frames_per_label.entry(kg.entities.name(t.object).to_string()).or_insert(0) += 1;
        }
    }
    KgStats {
        entities: kg.entities.len(),
        relations: kg.relations.len(),
        triples: kg.triples.len(),
        per_relation,
        frames_per_label,
    }
}
