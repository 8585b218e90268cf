//! Annotated road scenes: domain types, labeling rules and validation.
//!
//! A [`RoadSceneDocument`] holds the per-scene context labels plus one
//! [`FrameAnnotation`] per annotated frame. Documents are read from and written
//! to the annotation XML format in [`xml`].

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod xml;

pub use xml::{parse_scene_xml, serialize_scene_xml};

/// A value that does not belong to the closed label set of `kind`.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown {kind} value {value:?}")]
pub struct UnknownValue {
    pub kind: &'static str,
    pub value: String,
}

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            /// Canonical spelling used in annotation files and the knowledge graph.
            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => stringify!($variant)),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = UnknownValue;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $(stringify!($variant) => Ok($name::$variant),)+
                    _ => Err(UnknownValue { kind: stringify!($name), value: s.to_string() }),
                }
            }
        }
    };
}

label_enum!(
    /// Where the footage was captured.
    Environment { Real, Virtual }
);
label_enum!(Surroundings { Vegetation, Clear });
label_enum!(
    /// Per-frame pedestrian presence label.
    PedestriansScene { NonePedestrian, PedestrianOccluded, PedestrianNotOccluded }
);
label_enum!(Occlusion { None, Partial, Full });
label_enum!(VehicleState { ContinuousMovement, Stopped, Accelerating, Decelerating });
label_enum!(BrakingLights { On, Off });
label_enum!(
    /// Categorical distance between a vehicle and the ego-vehicle.
    Distance { NearToEgoVeh, MiddleDisToEgoVeh, FarToEgoVeh }
);
label_enum!(Position { Front, FrontLeft, FrontRight, Left, Right });

impl PedestriansScene {
    /// Position of the label in the one-hot layouts used by the generator and
    /// the predictor (same order as [`PedestriansScene::ALL`]).
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneContext {
    pub scene_id: String,
    pub environment: Environment,
    pub zebra_crossing: bool,
    pub lanes: u32,
    pub surroundings: Surroundings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestrianRecord {
    pub pedestrian_id: String,
    pub occlusion: Occlusion,
    pub visible_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub vehicle_id: String,
    pub state: VehicleState,
    pub braking_lights: BrakingLights,
    pub distance: Distance,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub frame_number: u32,
    pub pedestrians_scene: PedestriansScene,
    pub pedestrians: Vec<PedestrianRecord>,
    pub vehicles: Vec<VehicleRecord>,
}

impl FrameAnnotation {
    pub fn empty(frame_number: u32) -> Self {
        Self {
            frame_number,
            pedestrians_scene: PedestriansScene::NonePedestrian,
            pedestrians: Vec::new(),
            vehicles: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSceneDocument {
    pub context: SceneContext,
    pub frames: Vec<FrameAnnotation>,
}

impl RoadSceneDocument {
    pub fn scene_id(&self) -> &str {
        &self.context.scene_id
    }

    /// Label held by most frames; ties resolve to the earlier label in
    /// [`PedestriansScene::ALL`].
    pub fn dominant_label(&self) -> PedestriansScene {
        let mut counts = [0usize; 3];
        for frame in &self.frames {
            counts[frame.pedestrians_scene.index()] += 1;
        }
        let mut best = 0;
        for i in 1..3 {
            if counts[i] > counts[best] {
                best = i;
            }
        }
        PedestriansScene::ALL[best]
    }
}

/// Camera parameters for the triangle-similarity distance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Focal length in pixels.
    pub focal_length: f64,
    /// Real-world pedestrian width in meters.
    pub known_pedestrian_width: f64,
}

impl CameraIntrinsics {
    pub const DEFAULT_PEDESTRIAN_WIDTH: f64 = 0.5;

    pub fn new(focal_length: f64, known_pedestrian_width: f64) -> Result<Self, SceneError> {
        if !(focal_length > 0.0 && focal_length.is_finite()) {
            return Err(SceneError::Domain(format!("focal length must be positive, got {focal_length}")));
        }
        if !(known_pedestrian_width > 0.0 && known_pedestrian_width.is_finite()) {
            return Err(SceneError::Domain(format!(
                "known pedestrian width must be positive, got {known_pedestrian_width}"
            )));
        }
        Ok(Self { focal_length, known_pedestrian_width })
    }

    /// Distance in meters to a pedestrian spanning `pixel_width` pixels.
    pub fn distance_to(&self, pixel_width: f64) -> Result<f64, SceneError> {
        estimate_distance(self.known_pedestrian_width, self.focal_length, pixel_width)
    }
}

/// Triangle similarity: `D = W * F / P`.
pub fn estimate_distance(known_width: f64, focal_length: f64, pixel_width: f64) -> Result<f64, SceneError> {
    for (name, v) in [("known width", known_width), ("focal length", focal_length), ("pixel width", pixel_width)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(SceneError::Domain(format!("{name} must be positive and finite, got {v}")));
        }
    }
    Ok(known_width * focal_length / pixel_width)
}

/// Bucket boundaries (meters) for the categorical distance label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceThresholds {
    pub near: f64,
    pub far: f64,
}

impl DistanceThresholds {
    pub fn new(near: f64, far: f64) -> Result<Self, SceneError> {
        if !(near > 0.0 && near < far && far.is_finite()) {
            return Err(SceneError::Domain(format!("thresholds must satisfy 0 < near < far, got ({near}, {far})")));
        }
        Ok(Self { near, far })
    }
}

impl Default for DistanceThresholds {
    fn default() -> Self {
        Self { near: 10.0, far: 30.0 }
    }
}

/// Maps a metric distance onto Near / Middle / Far. A boundary value goes to
/// the upper bucket.
pub fn quantize_distance(distance: f64, thresholds: DistanceThresholds) -> Result<Distance, SceneError> {
    if !distance.is_finite() {
        return Err(SceneError::Domain(format!("distance must be finite, got {distance}")));
    }
    Ok(if distance < thresholds.near {
        Distance::NearToEgoVeh
    } else if distance < thresholds.far {
        Distance::MiddleDisToEgoVeh
    } else {
        Distance::FarToEgoVeh
    })
}

/// Fraction of the body below which a missed pedestrian counts as fully occluded.
pub const FULL_OCCLUSION_VISIBILITY: f64 = 0.25;

/// Occlusion labeling rule: a detected pedestrian is not occluded; a missed
/// one is fully occluded under 25% visibility and partially occluded otherwise.
pub fn occlusion_level_from_visibility(detector_detected: bool, visible_fraction: f64) -> Result<Occlusion, SceneError> {
    if !(0.0..=1.0).contains(&visible_fraction) {
        return Err(SceneError::Domain(format!("visible fraction must lie in [0, 1], got {visible_fraction}")));
    }
    Ok(if detector_detected {
        Occlusion::None
    } else if visible_fraction < FULL_OCCLUSION_VISIBILITY {
        Occlusion::Full
    } else {
        Occlusion::Partial
    })
}

/// Which consistency rule a [`Violation`] breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Rule {
    InvalidIdentifier,
    NoFrames,
    FramesNotIncreasing,
    ZeroLanes,
    PedestriansInEmptyScene,
    OccludedWithoutOccludedPedestrian,
    DuplicateIdentifier,
    VisibleFractionOutOfRange,
    VisibilityOcclusionMismatch,
}

impl Rule {
    /// Structural rules are type invariants and make a document unparseable.
    /// The remaining rules are labeling consistency checks.
    pub fn is_structural(self) -> bool {
        !matches!(self, Rule::VisibilityOcclusionMismatch)
    }

    fn describe(self) -> &'static str {
        match self {
            Rule::InvalidIdentifier => "identifier must be non-empty without whitespace or '/'",
            Rule::NoFrames => "document has no frames",
            Rule::FramesNotIncreasing => "frames not strictly increasing",
            Rule::ZeroLanes => "lane count must be at least 1",
            Rule::PedestriansInEmptyScene => "NonePedestrian frame lists pedestrians",
            Rule::OccludedWithoutOccludedPedestrian => {
                "PedestrianOccluded frame has no partially or fully occluded pedestrian"
            }
            Rule::DuplicateIdentifier => "duplicate identifier within frame",
            Rule::VisibleFractionOutOfRange => "visible fraction outside [0, 1]",
            Rule::VisibilityOcclusionMismatch => "occlusion level disagrees with the 25% visibility rule",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: Rule,
    /// Where the rule was broken, e.g. `frame 12 pedestrian p3`.
    pub location: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.rule.describe())
    }
}

/// Wrapper so a violation list can be rendered inside an error message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViolationList(pub Vec<Violation>);

impl fmt::Display for ViolationList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("malformed XML at line {line}, column {column}: {message}")]
    Xml { line: usize, column: usize, message: String },
    #[error("schema violation in <{element}>: {rule}")]
    Schema { element: String, rule: String },
    #[error("invalid scene {scene_id:?}: {violations}")]
    Invalid { scene_id: String, violations: ViolationList },
    #[error("domain error: {0}")]
    Domain(String),
}

pub(crate) fn valid_identifier(id: &str) -> bool {
    !id.is_empty() && !id.chars().any(|c| c.is_whitespace() || c == '/')
}

/// Checks every type invariant and labeling consistency rule. An empty list
/// means the document is valid.
pub fn validate_document(doc: &RoadSceneDocument) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |rule: Rule, location: String| out.push(Violation { rule, location });

    if !valid_identifier(&doc.context.scene_id) {
        push(Rule::InvalidIdentifier, format!("scene {:?}", doc.context.scene_id));
    }
    if doc.context.lanes == 0 {
        push(Rule::ZeroLanes, "context".to_string());
    }
    if doc.frames.is_empty() {
        push(Rule::NoFrames, "document".to_string());
    }
    for pair in doc.frames.windows(2) {
        if pair[1].frame_number <= pair[0].frame_number {
            push(
                Rule::FramesNotIncreasing,
                format!("frame {} after frame {}", pair[1].frame_number, pair[0].frame_number),
            );
        }
    }

    for frame in &doc.frames {
        let n = frame.frame_number;
        match frame.pedestrians_scene {
            PedestriansScene::NonePedestrian if !frame.pedestrians.is_empty() => {
                push(Rule::PedestriansInEmptyScene, format!("frame {n}"));
            }
            PedestriansScene::PedestrianOccluded
                if !frame.pedestrians.iter().any(|p| p.occlusion != Occlusion::None) =>
            {
                push(Rule::OccludedWithoutOccludedPedestrian, format!("frame {n}"));
            }
            _ => {}
        }

        let mut seen = BTreeSet::new();
        for ped in &frame.pedestrians {
            let loc = format!("frame {n} pedestrian {}", ped.pedestrian_id);
            if !valid_identifier(&ped.pedestrian_id) {
                push(Rule::InvalidIdentifier, loc.clone());
            }
            if !seen.insert(("pedestrian", ped.pedestrian_id.as_str())) {
                push(Rule::DuplicateIdentifier, loc.clone());
            }
            if let Some(vf) = ped.visible_fraction {
                if !(0.0..=1.0).contains(&vf) {
                    push(Rule::VisibleFractionOutOfRange, loc);
                } else {
                    let mismatch = match ped.occlusion {
                        Occlusion::Partial => vf < FULL_OCCLUSION_VISIBILITY,
                        Occlusion::Full => vf >= FULL_OCCLUSION_VISIBILITY,
                        Occlusion::None => false,
                    };
                    if mismatch {
                        push(Rule::VisibilityOcclusionMismatch, loc);
                    }
                }
            }
        }
        for veh in &frame.vehicles {
            let loc = format!("frame {n} vehicle {}", veh.vehicle_id);
            if !valid_identifier(&veh.vehicle_id) {
                push(Rule::InvalidIdentifier, loc.clone());
            }
            if !seen.insert(("vehicle", veh.vehicle_id.as_str())) {
                push(Rule::DuplicateIdentifier, loc);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn minimal_doc() -> RoadSceneDocument {
        RoadSceneDocument {
            context: SceneContext {
                scene_id: "s1".into(),
                environment: Environment::Real,
                zebra_crossing: false,
                lanes: 2,
                surroundings: Surroundings::Clear,
            },
            frames: vec![FrameAnnotation::empty(0)],
        }
    }

    #[test]
    fn distance_examples() {
        assert_eq!(estimate_distance(0.5, 1000.0, 500.0).unwrap(), 1.0);
        assert_eq!(estimate_distance(0.5, 800.0, 8.0).unwrap(), 50.0);
        assert!(matches!(estimate_distance(0.5, 1000.0, 0.0), Err(SceneError::Domain(_))));
        assert!(estimate_distance(-0.5, 1000.0, 10.0).is_err());
        let cam = CameraIntrinsics::new(1000.0, CameraIntrinsics::DEFAULT_PEDESTRIAN_WIDTH).unwrap();
        assert_eq!(cam.distance_to(500.0).unwrap(), 1.0);
        assert!(CameraIntrinsics::new(0.0, 0.5).is_err());
    }

    #[test]
    fn quantize_examples() {
        let t = DistanceThresholds::default();
        assert_eq!(quantize_distance(5.0, t).unwrap(), Distance::NearToEgoVeh);
        assert_eq!(quantize_distance(10.0, t).unwrap(), Distance::MiddleDisToEgoVeh);
        assert_eq!(quantize_distance(30.0, t).unwrap(), Distance::FarToEgoVeh);
        assert!(quantize_distance(f64::NAN, t).is_err());
        assert!(quantize_distance(f64::INFINITY, t).is_err());
        assert!(DistanceThresholds::new(30.0, 10.0).is_err());
    }

    #[test]
    fn occlusion_examples() {
        assert_eq!(occlusion_level_from_visibility(true, 1.0).unwrap(), Occlusion::None);
        assert_eq!(occlusion_level_from_visibility(false, 0.20).unwrap(), Occlusion::Full);
        assert_eq!(occlusion_level_from_visibility(false, 0.50).unwrap(), Occlusion::Partial);
        assert_eq!(occlusion_level_from_visibility(false, 0.25).unwrap(), Occlusion::Partial);
        assert!(occlusion_level_from_visibility(false, 1.5).is_err());
    }

    #[test]
    fn validate_examples() {
        assert!(validate_document(&minimal_doc()).is_empty());

        let mut doc = minimal_doc();
        doc.frames[0].pedestrians_scene = PedestriansScene::PedestrianOccluded;
        let v = validate_document(&doc);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::OccludedWithoutOccludedPedestrian);

        let mut doc = minimal_doc();
        doc.frames[0].pedestrians_scene = PedestriansScene::PedestrianOccluded;
        doc.frames[0].pedestrians.push(PedestrianRecord {
            pedestrian_id: "p1".into(),
            occlusion: Occlusion::Partial,
            visible_fraction: Some(0.1),
        });
        let v = validate_document(&doc);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::VisibilityOcclusionMismatch);
        assert!(!v[0].rule.is_structural());
    }

    #[test]
    fn validate_structural_rules() {
        let mut doc = minimal_doc();
        doc.frames.push(FrameAnnotation::empty(0));
        doc.context.lanes = 0;
        let rules: Vec<_> = validate_document(&doc).into_iter().map(|v| v.rule).collect();
        assert_eq!(rules, vec![Rule::ZeroLanes, Rule::FramesNotIncreasing]);

        let mut doc = minimal_doc();
        doc.frames.clear();
        doc.context.scene_id = "a b".into();
        let rules: Vec<_> = validate_document(&doc).into_iter().map(|v| v.rule).collect();
        assert_eq!(rules, vec![Rule::InvalidIdentifier, Rule::NoFrames]);
    }

    #[test]
    fn label_spellings_round_trip() {
        for s in VehicleState::ALL {
            assert_eq!(s.as_str().parse::<VehicleState>().unwrap(), *s);
        }
        assert_eq!("MiddleDisToEgoVeh".parse::<Distance>().unwrap(), Distance::MiddleDisToEgoVeh);
        let err = "decelerating".parse::<VehicleState>().unwrap_err();
        assert_eq!(err.kind, "VehicleState");
    }

    proptest! {
        #[test]
        fn distance_is_homogeneous(w in 0.1f64..2.0, f in 10.0f64..5000.0, p in 1.0f64..2000.0) {
            let base = estimate_distance(w, f, p).unwrap();
            let doubled_focal = estimate_distance(w, 2.0 * f, p).unwrap();
            let doubled_pixels = estimate_distance(w, f, 2.0 * p).unwrap();
            prop_assert!((doubled_focal - 2.0 * base).abs() <= 1e-12 * base.abs().max(1.0));
            prop_assert!((doubled_pixels - 0.5 * base).abs() <= 1e-12 * base.abs().max(1.0));
        }

        #[test]
        fn quantize_is_monotone(a in 0.0f64..100.0, b in 0.0f64..100.0) {
            let t = DistanceThresholds::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize_distance(lo, t).unwrap() <= quantize_distance(hi, t).unwrap());
        }

        #[test]
        fn occlusion_rule_is_total(detected: bool, vf in 0.0f64..=1.0) {
            let level = occlusion_level_from_visibility(detected, vf).unwrap();
            let expected = if detected { Occlusion::None } else if vf < 0.25 { Occlusion::Full } else { Occlusion::Partial };
            prop_assert_eq!(level, expected);
        }
    }
}
