use std::collections::{BTreeMap, BTreeSet};

use super::ontology::{self, EntityKind, Relation};
use super::{type_check_triple, KgError, KnowledgeGraph, Triple};
use crate::scene::{validate_document, PedestriansScene, RoadSceneDocument, ViolationList};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    /// Add class prototypes and the generic `RoadScene` subject.
    pub link_prototypes: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { link_prototypes: true }
    }
}

fn push(out: &mut Vec<Triple>, s: &str, r: Relation, o: &str) {
    out.push(Triple::new(s, r.as_str(), o));
}

fn scene_triples(doc: &RoadSceneDocument, out: &mut Vec<Triple>) {
    let sid = doc.scene_id();
    let scene = ontology::scene_entity(sid);
    let ctx = &doc.context;
    if ctx.zebra_crossing {
        push(out, &scene, Relation::ThereIs, ontology::ZEBRA_CROSSING);
    }
    push(out, &scene, Relation::HasSurroundings, ctx.surroundings.as_str());
    push(out, &scene, Relation::HasLanes, &ontology::lane_entity(ctx.lanes));

    let mut prev: Option<String> = None;
    for frame in &doc.frames {
        let n = frame.frame_number;
        let f = ontology::frame_entity(sid, n);
        push(out, &scene, Relation::Contains, &f);
        push(out, &f, Relation::Contains, ontology::label_entity(frame.pedestrians_scene));
        if let Some(p) = prev.take() {
            push(out, &p, Relation::NextFrame, &f);
            push(out, &f, Relation::PrevFrame, &p);
        }
        for ped in &frame.pedestrians {
            let pe = ontology::pedestrian_entity(sid, n, &ped.pedestrian_id);
            push(out, &f, Relation::Contains, &pe);
            push(out, &pe, Relation::HasOcclusionLevel, &ontology::occlusion_entity(ped.occlusion));
        }
        for veh in &frame.vehicles {
            let ve = ontology::vehicle_entity(sid, n, &veh.vehicle_id);
            push(out, &f, Relation::Contains, &ve);
            push(out, &f, Relation::Includes, &ontology::vehicle_summary(veh.state));
            push(out, &ve, Relation::HasState, ontology::movement_entity(veh.state));
            push(out, &ve, Relation::HasBrakingLights, veh.braking_lights.as_str());
            push(out, &ve, Relation::HasDistance, veh.distance.as_str());
            push(out, &ve, Relation::HasPosition, veh.position.as_str());
        }
        prev = Some(f);
    }
}

/// Compiles a corpus into a knowledge graph. Every document must validate
/// cleanly; the triple set does not depend on document order.
pub fn build_kg(corpus: &[RoadSceneDocument], options: BuildOptions) -> Result<KnowledgeGraph, KgError> {
    let mut seen = BTreeSet::new();
    let mut triples = Vec::new();
    for doc in corpus {
        let violations = validate_document(doc);
        if !violations.is_empty() {
            return Err(KgError::InvalidDocument {
                scene_id: doc.scene_id().to_string(),
                violations: ViolationList(violations),
            });
        }
        if !seen.insert(doc.scene_id()) {
            return Err(KgError::DuplicateScene(doc.scene_id().to_string()));
        }
        scene_triples(doc, &mut triples);
    }
    for t in &triples {
        type_check_triple(t)?;
    }
    let kg = KnowledgeGraph::from_triples(triples);
    if options.link_prototypes {
        link_prototypes(&kg)
    } else {
        Ok(kg)
    }
}

/// Evidence (relation, object) pairs per frame entity, derived from the scene
/// context and the frame's vehicles. Matches what the predictor extracts from
/// the source document.
pub(crate) fn frame_evidence(kg: &KnowledgeGraph) -> Result<BTreeMap<String, (PedestriansScene, BTreeSet<(Relation, String)>)>, KgError> {
    let mut scene_context: BTreeMap<&str, Vec<(Relation, &str)>> = BTreeMap::new();
    let mut frame_scene: BTreeMap<&str, &str> = BTreeMap::new();
    let mut frame_labels: BTreeMap<&str, Vec<PedestriansScene>> = BTreeMap::new();
    let mut frame_vehicles: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut frame_includes: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut vehicle_attrs: BTreeMap<&str, Vec<(Relation, &str)>> = BTreeMap::new();
    let mut frames: BTreeSet<&str> = BTreeSet::new();

    let ents = kg.entities();
    let rels = kg.relations();
    for &t in kg.triples() {
        let s = ents.name(t.subject);
        let o = ents.name(t.object);
        let Ok(r) = rels.name(t.relation).parse::<Relation>() else { continue };
        let sk = ontology::kind_of(s);
        let ok = ontology::kind_of(o);
        if sk == Some(EntityKind::Frame) {
            frames.insert(s);
        }
        if ok == Some(EntityKind::Frame) {
            frames.insert(o);
        }
        match (r, sk, ok) {
            (Relation::ThereIs | Relation::HasSurroundings | Relation::HasLanes, Some(EntityKind::Scene), _) => {
                scene_context.entry(s).or_default().push((r, o));
            }
            (Relation::Contains, Some(EntityKind::Scene), Some(EntityKind::Frame)) => {
                frame_scene.insert(o, s);
            }
            (Relation::Contains, Some(EntityKind::Frame), Some(EntityKind::SceneLabel)) => {
                frame_labels.entry(s).or_default().push(o.parse().expect("label kind"));
            }
            (Relation::Contains, Some(EntityKind::Frame), Some(EntityKind::Vehicle)) => {
                frame_vehicles.entry(s).or_default().push(o);
            }
            (Relation::Includes, Some(EntityKind::Frame), _) => {
                frame_includes.entry(s).or_default().push(o);
            }
            (
                Relation::HasBrakingLights | Relation::HasDistance | Relation::HasPosition,
                Some(EntityKind::Vehicle),
                _,
            ) => {
                vehicle_attrs.entry(s).or_default().push((r, o));
            }
            _ => {}
        }
    }

    let mut out = BTreeMap::new();
    for frame in frames {
        let label = match frame_labels.get(frame).map(Vec::as_slice) {
            Some([label]) => *label,
            _ => return Err(KgError::UnlabeledFrame(frame.to_string())),
        };
        let mut evidence = BTreeSet::new();
        if let Some(ctx) = frame_scene.get(frame).and_then(|s| scene_context.get(s)) {
            evidence.extend(ctx.iter().map(|&(r, o)| (r, o.to_string())));
        }
        for &summary in frame_includes.get(frame).into_iter().flatten() {
            evidence.insert((Relation::Includes, summary.to_string()));
        }
        for veh in frame_vehicles.get(frame).into_iter().flatten() {
            for &(r, o) in vehicle_attrs.get(veh).into_iter().flatten() {
                evidence.insert((r, o.to_string()));
            }
        }
        out.insert(frame.to_string(), (label, evidence));
    }
    Ok(out)
}

/// Attaches each frame to its class prototype and materializes class-level
/// evidence: every prototype receives the union of its member frames'
/// evidence, and `RoadScene` receives the union over all frames together
/// with one `contains` triple per observed label. Linking is idempotent.
pub fn link_prototypes(kg: &KnowledgeGraph) -> Result<KnowledgeGraph, KgError> {
    let evidence = frame_evidence(kg)?;
    let mut added = BTreeSet::new();
    for (frame, (label, items)) in &evidence {
        let proto = ontology::prototype(*label);
        added.insert(Triple::new(frame.as_str(), Relation::InstanceOfSceneClass.as_str(), proto));
        added.insert(Triple::new(ontology::ROAD_SCENE, Relation::Contains.as_str(), ontology::label_entity(*label)));
        for (r, o) in items {
            added.insert(Triple::new(proto, r.as_str(), o.as_str()));
            added.insert(Triple::new(ontology::ROAD_SCENE, r.as_str(), o.as_str()));
        }
    }
    Ok(KnowledgeGraph::from_triples(kg.named_triples().chain(added)))
}
