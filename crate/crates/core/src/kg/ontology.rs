//! The occluded-pedestrian ontology: entity kinds, relations and the naming
//! scheme that ties entity ids to kinds.
//!
//! Instance entities live under `scene/<id>` (`scene/<id>/frame/<n>`,
//! `.../vehicle/<vid>`, `.../pedestrian/<pid>`); every other entity is a
//! fixed vocabulary term such as `ZebraCrossing` or `VehDecelerating`.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::scene::{
    BrakingLights, Distance, Occlusion, PedestriansScene, Position, Surroundings, VehicleState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum EntityKind {
    Scene,
    Frame,
    Vehicle,
    Pedestrian,
    /// Class prototypes and the generic `RoadScene` subject.
    SceneClass,
    SceneLabel,
    ZebraCrossing,
    Surroundings,
    LaneCount,
    /// Condensed per-frame vehicle state, e.g. `VehDecelerating`.
    VehicleSummary,
    Movement,
    BrakingLights,
    Distance,
    Position,
    OcclusionLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Relation {
    Contains,
    ThereIs,
    Includes,
    HasSurroundings,
    HasLanes,
    NextFrame,
    PrevFrame,
    HasOcclusionLevel,
    HasState,
    HasBrakingLights,
    HasDistance,
    HasPosition,
    InstanceOfSceneClass,
}

use EntityKind as K;

impl Relation {
    pub const ALL: &'static [Relation] = &[
        Relation::Contains,
        Relation::ThereIs,
        Relation::Includes,
        Relation::HasSurroundings,
        Relation::HasLanes,
        Relation::NextFrame,
        Relation::PrevFrame,
        Relation::HasOcclusionLevel,
        Relation::HasState,
        Relation::HasBrakingLights,
        Relation::HasDistance,
        Relation::HasPosition,
        Relation::InstanceOfSceneClass,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Contains => "contains",
            Relation::ThereIs => "thereIs",
            Relation::Includes => "includes",
            Relation::HasSurroundings => "hasSurroundings",
            Relation::HasLanes => "hasLanes",
            Relation::NextFrame => "nextFrame",
            Relation::PrevFrame => "prevFrame",
            Relation::HasOcclusionLevel => "hasOcclusionLevel",
            Relation::HasState => "hasState",
            Relation::HasBrakingLights => "hasBrakingLights",
            Relation::HasDistance => "hasDistance",
            Relation::HasPosition => "hasPosition",
            Relation::InstanceOfSceneClass => "instanceOfSceneClass",
        }
    }

    /// Allowed (domain, range) kind pairs.
    pub fn signatures(self) -> &'static [(EntityKind, EntityKind)] {
        match self {
            Relation::Contains => &[
                (K::Scene, K::Frame),
                (K::Frame, K::SceneLabel),
                (K::Frame, K::Vehicle),
                (K::Frame, K::Pedestrian),
                (K::SceneClass, K::SceneLabel),
            ],
            Relation::ThereIs => &[(K::Scene, K::ZebraCrossing), (K::SceneClass, K::ZebraCrossing)],
            Relation::Includes => &[(K::Frame, K::VehicleSummary), (K::SceneClass, K::VehicleSummary)],
            Relation::HasSurroundings => &[(K::Scene, K::Surroundings), (K::SceneClass, K::Surroundings)],
            Relation::HasLanes => &[(K::Scene, K::LaneCount), (K::SceneClass, K::LaneCount)],
            Relation::NextFrame | Relation::PrevFrame => &[(K::Frame, K::Frame)],
            Relation::HasOcclusionLevel => &[(K::Pedestrian, K::OcclusionLevel)],
            Relation::HasState => &[(K::Vehicle, K::Movement)],
            Relation::HasBrakingLights => &[(K::Vehicle, K::BrakingLights), (K::SceneClass, K::BrakingLights)],
            Relation::HasDistance => &[(K::Vehicle, K::Distance), (K::SceneClass, K::Distance)],
            Relation::HasPosition => &[(K::Vehicle, K::Position), (K::SceneClass, K::Position)],
            Relation::InstanceOfSceneClass => &[(K::Frame, K::SceneClass)],
        }
    }

    pub fn accepts(self, subject: EntityKind, object: EntityKind) -> bool {
        self.signatures().contains(&(subject, object))
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Relation::ALL
            .iter()
            .copied()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown relation {s:?}"))
    }
}

pub const ROAD_SCENE: &str = "RoadScene";
pub const ZEBRA_CROSSING: &str = "ZebraCrossing";
pub const MAX_LANES: u32 = 6;

/// Class prototype entity for a pedestrian-scene label.
pub fn prototype(label: PedestriansScene) -> &'static str {
    match label {
        PedestriansScene::PedestrianOccluded => "SceneWithOccludedPed",
        PedestriansScene::PedestrianNotOccluded => "SceneWithVisiblePed",
        PedestriansScene::NonePedestrian => "SceneWithNoPed",
    }
}

pub fn label_entity(label: PedestriansScene) -> &'static str {
    label.as_str()
}

/// Lane counts are categorical, clamped to `1..=6`.
pub fn lane_entity(lanes: u32) -> String {
    format!("LaneCount_{}", lanes.clamp(1, MAX_LANES))
}

pub fn vehicle_summary(state: VehicleState) -> String {
    format!("Veh{state}")
}

pub fn movement_entity(state: VehicleState) -> &'static str {
    state.as_str()
}

pub fn occlusion_entity(level: Occlusion) -> String {
    format!("Occlusion{level}")
}

pub fn scene_entity(scene_id: &str) -> String {
    format!("scene/{scene_id}")
}

pub fn frame_entity(scene_id: &str, frame: u32) -> String {
    format!("scene/{scene_id}/frame/{frame}")
}

pub fn vehicle_entity(scene_id: &str, frame: u32, vehicle_id: &str) -> String {
    format!("scene/{scene_id}/frame/{frame}/vehicle/{vehicle_id}")
}

pub fn pedestrian_entity(scene_id: &str, frame: u32, pedestrian_id: &str) -> String {
    format!("scene/{scene_id}/frame/{frame}/pedestrian/{pedestrian_id}")
}

/// Kind of an entity id under the naming scheme, `None` for foreign ids.
pub fn kind_of(id: &str) -> Option<EntityKind> {
    if let Some(rest) = id.strip_prefix("scene/") {
        let parts: Vec<&str> = rest.split('/').collect();
        return match parts.as_slice() {
            [s] if !s.is_empty() => Some(K::Scene),
            [_, "frame", n] if n.parse::<u32>().is_ok() => Some(K::Frame),
            [_, "frame", n, "vehicle", v] if n.parse::<u32>().is_ok() && !v.is_empty() => Some(K::Vehicle),
            [_, "frame", n, "pedestrian", p] if n.parse::<u32>().is_ok() && !p.is_empty() => Some(K::Pedestrian),
            _ => None,
        };
    }
    if id == ROAD_SCENE || PedestriansScene::ALL.iter().any(|&l| prototype(l) == id) {
        return Some(K::SceneClass);
    }
    if id.parse::<PedestriansScene>().is_ok() {
        return Some(K::SceneLabel);
    }
    if id == ZEBRA_CROSSING {
        return Some(K::ZebraCrossing);
    }
    if id.parse::<Surroundings>().is_ok() {
        return Some(K::Surroundings);
    }
    if let Some(n) = id.strip_prefix("LaneCount_") {
        return match n.parse::<u32>() {
            Ok(n) if (1..=MAX_LANES).contains(&n) => Some(K::LaneCount),
            _ => None,
        };
    }
    if let Some(state) = id.strip_prefix("Veh") {
        if state.parse::<VehicleState>().is_ok() {
            return Some(K::VehicleSummary);
        }
    }
    if id.parse::<VehicleState>().is_ok() {
        return Some(K::Movement);
    }
    if id.parse::<BrakingLights>().is_ok() {
        return Some(K::BrakingLights);
    }
    if id.parse::<Distance>().is_ok() {
        return Some(K::Distance);
    }
    if id.parse::<Position>().is_ok() {
        return Some(K::Position);
    }
    if let Some(level) = id.strip_prefix("Occlusion") {
        if level.parse::<Occlusion>().is_ok() {
            return Some(K::OcclusionLevel);
        }
    }
    None
}

/// Scene id and frame number of a frame entity.
pub fn parse_frame_entity(id: &str) -> Option<(&str, u32)> {
    let rest = id.strip_prefix("scene/")?;
    let mut parts = rest.split('/');
    let scene = parts.next()?;
    if parts.next()? != "frame" {
        return None;
    }
    let n = parts.next()?.parse().ok()?;
    parts.next().is_none().then_some((scene, n))
}
