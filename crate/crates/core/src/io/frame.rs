//! Frame-annotation documents.
//!
//! One frame serializes as a pretty-printed JSON object with fixed field
//! order; unknown top-level fields survive round trips (sorted by key).
//! Value-range invariants (category codes, scene-tag vocabulary, CIPO
//! levels) report as validation errors rather than parse errors.

use std::path::Path;

use serde_json::Value;

use super::IoError;
use crate::lane::FrameRecord;

const WEATHER_VOCAB: [&str; 5] = ["clear", "partly-cloud", "overcast", "rainy", "foggy"];
const SCENE_VOCAB: [&str; 5] = ["residential", "urban", "suburbs", "highway", "parking-lot"];
const HOURS_VOCAB: [&str; 3] = ["daytime", "night", "dawn-dusk"];

// Value-range checks on the raw document, before typed parsing.
fn prevalidate(doc: &Value) -> Result<(), IoError> {
    let obj = match doc.as_object() {
        Some(o) => o,
        None => return Ok(()), // typed parse reports the shape error
    };
    for key in ["lanes_3d", "lanes_2d"] {
        if let Some(lanes) = obj.get(key).and_then(|v| v.as_array()) {
            for (i, lane) in lanes.iter().enumerate() {
                if let Some(code) = lane.get("category").and_then(|c| c.as_u64()) {
                    if code > 13 {
                        return Err(IoError::Validation(format!(
                            "{key}[{i}]: lane category code {code} outside 0-13"
                        )));
                    }
                }
            }
        }
    }
    if let Some(tags) = obj.get("scene_tags").and_then(|v| v.as_object()) {
        for (field, vocab) in [
            ("weather", WEATHER_VOCAB.as_slice()),
            ("scene", SCENE_VOCAB.as_slice()),
            ("hours", HOURS_VOCAB.as_slice()),
        ] {
            if let Some(s) = tags.get(field).and_then(|v| v.as_str()) {
                if !vocab.contains(&s) {
                    return Err(IoError::Validation(format!(
                        "scene_tags.{field}: unknown value {s:?}"
                    )));
                }
            }
        }
    }
    if let Some(cipo) = obj.get("cipo").and_then(|v| v.as_array()) {
        let mut level1 = 0;
        for (i, entry) in cipo.iter().enumerate() {
            if let Some(level) = entry.get("level").and_then(|v| v.as_u64()) {
                if !(1..=4).contains(&level) {
                    return Err(IoError::Validation(format!("cipo[{i}]: level {level} outside 1-4")));
                }
                if level == 1 {
                    level1 += 1;
                }
            }
        }
        if level1 > 1 {
            return Err(IoError::Validation("more than one CIPO level-1 object".into()));
        }
    }
    Ok(())
}

/// Parse and fully validate one frame document.
pub fn parse_frame(text: &str) -> Result<FrameRecord, IoError> {
    let raw: Value = serde_json::from_str(text).map_err(|e| IoError::from_json(&e))?;
    prevalidate(&raw)?;
    let rec: FrameRecord = serde_json::from_str(text).map_err(|e| IoError::from_json(&e))?;
    rec.validate().map_err(IoError::Validation)?;
    Ok(rec)
}

/// Canonical serialization of one frame.
pub fn write_frame(rec: &FrameRecord) -> String {
    let mut s = serde_json::to_string_pretty(rec).expect("frame serializes");
    s.push('\n');
    s
}

/// Parse and validate a whole frame set (a JSON array of frames).
pub fn parse_frame_set(text: &str) -> Result<Vec<FrameRecord>, IoError> {
    let raw: Value = serde_json::from_str(text).map_err(|e| IoError::from_json(&e))?;
    if let Some(arr) = raw.as_array() {
        for frame in arr {
            prevalidate(frame)?;
        }
    }
    let recs: Vec<FrameRecord> = serde_json::from_str(text).map_err(|e| IoError::from_json(&e))?;
    for (i, rec) in recs.iter().enumerate() {
        rec.validate().map_err(|m| IoError::Validation(format!("frame {i}: {m}")))?;
    }
    Ok(recs)
}

/// Canonical serialization of a frame set.
pub fn write_frame_set(recs: &[FrameRecord]) -> String {
    let mut s = serde_json::to_string_pretty(recs).expect("frames serialize");
    s.push('\n');
    s
}

pub fn read_frame_set(path: &Path) -> Result<Vec<FrameRecord>, IoError> {
    parse_frame_set(&std::fs::read_to_string(path)?)
}

pub fn write_frame_set_file(recs: &[FrameRecord], path: &Path) -> Result<(), IoError> {
    Ok(std::fs::write(path, write_frame_set(recs))?)
}
