//! Annotation XML reader and writer.
//!
//! ```xml
//! <roadScene id="s1" environment="Real">
//!   <context zebraCrossing="true" lanes="2" surroundings="Vegetation"/>
//!   <frame number="0" pedestriansScene="PedestrianOccluded">
//!     <pedestrian id="p1" occlusion="Full" visibleFraction="0.1"/>
//!     <vehicle id="v1" state="Decelerating" brakingLights="On" distance="NearToEgoVeh" position="FrontLeft"/>
//!   </frame>
//! </roadScene>
//! ```
//!
//! Element and attribute names are case-sensitive. Unknown elements or
//! attributes are rejected.

use std::fmt::Write as _;
use std::str::FromStr;

use quick_xml::escape::escape;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{
    validate_document, FrameAnnotation, PedestrianRecord, RoadSceneDocument, SceneContext, SceneError,
    VehicleRecord, ViolationList,
};

const ROOT: &str = "roadScene";

fn line_column(input: &[u8], offset: usize) -> (usize, usize) {
    let upto = &input[..offset.min(input.len())];
    let line = upto.iter().filter(|&&b| b == b'\n').count() + 1;
    let line_start = upto.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    let column = String::from_utf8_lossy(&upto[line_start..]).chars().count() + 1;
    (line, column)
}

fn schema(element: &str, rule: impl Into<String>) -> SceneError {
    SceneError::Schema { element: element.to_string(), rule: rule.into() }
}

/// Attributes of one start tag, checked against the element's allowed set.
struct Attrs {
    element: String,
    pairs: Vec<(String, String)>,
}

impl Attrs {
    fn read(start: &BytesStart<'_>, allowed: &[&str], input: &[u8], pos: usize) -> Result<Self, SceneError> {
        let element = String::from_utf8_lossy(start.name().as_ref()).into_owned();
        let mut pairs = Vec::new();
        for attr in start.attributes() {
            let attr = attr.map_err(|e| {
                let (line, column) = line_column(input, pos);
                SceneError::Xml { line, column, message: e.to_string() }
            })?;
            let key = String::from_utf8_lossy(attr.key.as_ref()).into_owned();
            if !allowed.contains(&key.as_str()) {
                return Err(schema(&element, format!("unknown attribute {key:?}")));
            }
            let value = attr.unescape_value().map_err(|e| {
                let (line, column) = line_column(input, pos);
                SceneError::Xml { line, column, message: e.to_string() }
            })?;
            pairs.push((key, value.into_owned()));
        }
        Ok(Self { element, pairs })
    }

    fn optional(&self, key: &str) -> Option<&str> {
        self.pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn required(&self, key: &str) -> Result<&str, SceneError> {
        self.optional(key).ok_or_else(|| schema(&self.element, format!("missing attribute {key:?}")))
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<T, SceneError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.required(key)?;
        raw.parse::<T>()
            .map_err(|e| schema(&self.element, format!("attribute {key:?}: {e}")))
    }

    fn boolean(&self, key: &str) -> Result<bool, SceneError> {
        match self.required(key)? {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(schema(&self.element, format!("attribute {key:?} must be true or false, got {other:?}"))),
        }
    }
}

fn parse_pedestrian(attrs: &Attrs) -> Result<PedestrianRecord, SceneError> {
    let visible_fraction = match attrs.optional("visibleFraction") {
        None => None,
        Some(raw) => {
            let v: f64 = raw
                .parse()
                .map_err(|_| schema("pedestrian", format!("visibleFraction {raw:?} is not a number")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(schema("pedestrian", format!("visibleFraction {raw} outside [0, 1]")));
            }
            Some(v)
        }
    };
    Ok(PedestrianRecord {
        pedestrian_id: attrs.required("id")?.to_string(),
        occlusion: attrs.parsed("occlusion")?,
        visible_fraction,
    })
}

fn parse_vehicle(attrs: &Attrs) -> Result<VehicleRecord, SceneError> {
    Ok(VehicleRecord {
        vehicle_id: attrs.required("id")?.to_string(),
        state: attrs.parsed("state")?,
        braking_lights: attrs.parsed("brakingLights")?,
        distance: attrs.parsed("distance")?,
        position: attrs.parsed("position")?,
    })
}

/// Parses one annotation document. Structural invariants (frame ordering,
/// label/pedestrian consistency, ...) are enforced; the softer visibility
/// consistency rule is left to [`validate_document`].
pub fn parse_scene_xml(bytes: &[u8]) -> Result<RoadSceneDocument, SceneError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let (line, column) = line_column(bytes, e.valid_up_to());
        SceneError::Xml { line, column, message: format!("invalid UTF-8: {e}") }
    })?;
    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(true);

    // (scene_id, environment) from the root, context, frames, open frame.
    let mut root: Option<(String, super::Environment)> = None;
    let mut root_closed = false;
    let mut context: Option<(bool, u32, super::Surroundings)> = None;
    let mut frames: Vec<FrameAnnotation> = Vec::new();
    let mut open_frame: Option<FrameAnnotation> = None;

    loop {
        let pos = reader.buffer_position() as usize;
        let event = reader.read_event().map_err(|e| {
            let (line, column) = line_column(bytes, reader.error_position() as usize);
            SceneError::Xml { line, column, message: e.to_string() }
        })?;
        match event {
            Event::Decl(_) | Event::Comment(_) | Event::PI(_) => {}
            Event::Eof => break,
            Event::Text(t) => {
                let raw = t.unescape().map_err(|e| {
                    let (line, column) = line_column(bytes, pos);
                    SceneError::Xml { line, column, message: e.to_string() }
                })?;
                if !raw.trim().is_empty() {
                    let element = if open_frame.is_some() { "frame" } else { ROOT };
                    return Err(schema(element, "unexpected text content"));
                }
            }
            Event::CData(_) | Event::DocType(_) => {
                return Err(schema(ROOT, "CDATA and DOCTYPE are not allowed"));
            }
            Event::End(end) => {
                let name = String::from_utf8_lossy(end.name().as_ref()).into_owned();
                match name.as_str() {
                    "frame" => {
                        let frame = open_frame.take().ok_or_else(|| schema("frame", "unbalanced end tag"))?;
                        frames.push(frame);
                    }
                    ROOT => root_closed = true,
                    other => return Err(schema(other, "unexpected end tag")),
                }
            }
            ev @ (Event::Start(_) | Event::Empty(_)) => {
                let is_empty = matches!(ev, Event::Empty(_));
                let start = match &ev {
                    Event::Start(s) | Event::Empty(s) => s,
                    _ => unreachable!(),
                };
                let name = String::from_utf8_lossy(start.name().as_ref()).into_owned();
                if root_closed {
                    return Err(schema(&name, "content after the root element"));
                }
                match name.as_str() {
                    ROOT => {
                        if root.is_some() {
                            return Err(schema(ROOT, "nested root element"));
                        }
                        let attrs = Attrs::read(start, &["id", "environment"], bytes, pos)?;
                        root = Some((attrs.required("id")?.to_string(), attrs.parsed("environment")?));
                        if is_empty {
                            root_closed = true;
                        }
                    }
                    "context" => {
                        if root.is_none() || open_frame.is_some() {
                            return Err(schema("context", "must be a direct child of <roadScene>"));
                        }
                        if context.is_some() {
                            return Err(schema("context", "duplicate element"));
                        }
                        if !frames.is_empty() {
                            return Err(schema("context", "must precede every <frame>"));
                        }
                        if !is_empty {
                            return Err(schema("context", "must be an empty element"));
                        }
                        let attrs = Attrs::read(start, &["zebraCrossing", "lanes", "surroundings"], bytes, pos)?;
                        context = Some((
                            attrs.boolean("zebraCrossing")?,
                            attrs.parsed("lanes")?,
                            attrs.parsed("surroundings")?,
                        ));
                    }
                    "frame" => {
                        if root.is_none() || open_frame.is_some() {
                            return Err(schema("frame", "must be a direct child of <roadScene>"));
                        }
                        if context.is_none() {
                            return Err(schema("frame", "appears before <context>"));
                        }
                        let attrs = Attrs::read(start, &["number", "pedestriansScene"], bytes, pos)?;
                        let frame = FrameAnnotation {
                            frame_number: attrs.parsed("number")?,
                            pedestrians_scene: attrs.parsed("pedestriansScene")?,
                            pedestrians: Vec::new(),
                            vehicles: Vec::new(),
                        };
                        if is_empty {
                            frames.push(frame);
                        } else {
                            open_frame = Some(frame);
                        }
                    }
                    "pedestrian" | "vehicle" => {
                        let frame = open_frame
                            .as_mut()
                            .ok_or_else(|| schema(&name, "must be a child of <frame>"))?;
                        if !is_empty {
                            return Err(schema(&name, "must be an empty element"));
                        }
                        if name == "pedestrian" {
                            let attrs = Attrs::read(start, &["id", "occlusion", "visibleFraction"], bytes, pos)?;
                            frame.pedestrians.push(parse_pedestrian(&attrs)?);
                        } else {
                            let attrs = Attrs::read(
                                start,
                                &["id", "state", "brakingLights", "distance", "position"],
                                bytes,
                                pos,
                            )?;
                            frame.vehicles.push(parse_vehicle(&attrs)?);
                        }
                    }
                    other => return Err(schema(other, "unknown element")),
                }
            }
        }
    }

    let (scene_id, environment) = root.ok_or_else(|| schema(ROOT, "missing root element"))?;
    if !root_closed || open_frame.is_some() {
        let (line, column) = line_column(bytes, bytes.len());
        return Err(SceneError::Xml { line, column, message: "unexpected end of input".into() });
    }
    let (zebra_crossing, lanes, surroundings) = context.ok_or_else(|| schema(ROOT, "missing <context>"))?;
    let doc = RoadSceneDocument {
        context: SceneContext { scene_id, environment, zebra_crossing, lanes, surroundings },
        frames,
    };
    let structural: Vec<_> = validate_document(&doc).into_iter().filter(|v| v.rule.is_structural()).collect();
    if !structural.is_empty() {
        return Err(SceneError::Invalid {
            scene_id: doc.context.scene_id.clone(),
            violations: ViolationList(structural),
        });
    }
    Ok(doc)
}

/// Writes a document in the annotation XML format. Floating-point values use
/// the shortest representation that parses back to the same number.
pub fn serialize_scene_xml(doc: &RoadSceneDocument) -> Vec<u8> {
    let mut out = String::new();
    let ctx = &doc.context;
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(out, "<{ROOT} id=\"{}\" environment=\"{}\">", escape(ctx.scene_id.as_str()), ctx.environment);
    let _ = writeln!(
        out,
        "  <context zebraCrossing=\"{}\" lanes=\"{}\" surroundings=\"{}\"/>",
        ctx.zebra_crossing, ctx.lanes, ctx.surroundings
    );
    for frame in &doc.frames {
        let _ = write!(
            out,
            "  <frame number=\"{}\" pedestriansScene=\"{}\"",
            frame.frame_number, frame.pedestrians_scene
        );
        if frame.pedestrians.is_empty() && frame.vehicles.is_empty() {
            out.push_str("/>\n");
            continue;
        }
        out.push_str(">\n");
        for ped in &frame.pedestrians {
            let _ = write!(
                out,
                "    <pedestrian id=\"{}\" occlusion=\"{}\"",
                escape(ped.pedestrian_id.as_str()),
                ped.occlusion
            );
            if let Some(vf) = ped.visible_fraction {
                let _ = write!(out, " visibleFraction=\"{vf}\"");
            }
            out.push_str("/>\n");
        }
        for veh in &frame.vehicles {
            let _ = writeln!(
                out,
                "    <vehicle id=\"{}\" state=\"{}\" brakingLights=\"{}\" distance=\"{}\" position=\"{}\"/>",
                escape(veh.vehicle_id.as_str()),
                veh.state,
                veh.braking_lights,
                veh.distance,
                veh.position
            );
        }
        out.push_str("  </frame>\n");
    }
    let _ = writeln!(out, "</{ROOT}>");
    out.into_bytes()
}
