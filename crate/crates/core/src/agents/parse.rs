//! Extraction of gantry angles from free-form model replies.

use serde_json::Value;
use thiserror::Error;

use crate::dose::{degree_key, normalize_angle};

pub const ANGLES_KEY: &str = "gantry_angles";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no JSON object with a \"gantry_angles\" key")]
    NotFound,
    #[error("\"gantry_angles\" is not a list of numbers: {0}")]
    BadValues(String),
    #[error("\"gantry_angles\" is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAngles {
    /// Normalised to `[0, 360)`, de-duplicated at 1°, at most `max_beams`.
    pub angles: Vec<f64>,
    /// Count before truncation, when the list was cut to `max_beams`.
    pub truncated_from: Option<usize>,
    pub duplicates_dropped: usize,
}

fn coerce(v: &Value) -> Option<f64> {
    let x = match v {
        Value::Number(n) => n.as_f64()?,
        Value::String(s) => s.trim().trim_end_matches('°').trim().parse().ok()?,
        _ => return None,
    };
    x.is_finite().then_some(x)
}

/// Finds the first JSON object in `text` that has a `"gantry_angles"` key
/// (code fences and surrounding prose are ignored) and returns its angles.
pub fn parse_angles(text: &str, max_beams: usize) -> Result<ParsedAngles, ParseError> {
    for (pos, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[pos..]).into_iter::<Value>();
        let Some(Ok(Value::Object(obj))) = stream.next() else {
            continue;
        };
        let Some(raw) = obj.get(ANGLES_KEY) else {
            continue;
        };
        let Value::Array(items) = raw else {
            return Err(ParseError::BadValues(raw.to_string()));
        };
        let mut angles = Vec::with_capacity(items.len());
        let mut keys = Vec::with_capacity(items.len());
        let mut duplicates_dropped = 0;
        for item in items {
            let a = normalize_angle(coerce(item).ok_or_else(|| ParseError::BadValues(item.to_string()))?);
            let k = degree_key(a);
            if keys.contains(&k) {
                duplicates_dropped += 1;
            } else {
                keys.push(k);
                angles.push(a);
            }
        }
        if angles.is_empty() {
            return Err(ParseError::Empty);
        }
        let truncated_from = (angles.len() > max_beams).then_some(angles.len());
        angles.truncate(max_beams);
        return Ok(ParsedAngles {
            angles,
            truncated_from,
            duplicates_dropped,
        });
    }
    Err(ParseError::NotFound)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_block_in_prose() {
        let text = "Here you go:\n```json\n{\n  \"gantry_angles\": [30, 80, 130]\n}\n```\nGood luck.";
        let p = parse_angles(text, 5).unwrap();
        assert_eq!(p.angles, vec![30.0, 80.0, 130.0]);
        assert_eq!(p.truncated_from, None);
    }

    #[test]
    fn normalises_dedupes_and_truncates() {
        let p = parse_angles(r#"{"gantry_angles": [370, -10, 10.2, "45", 90, 180]}"#, 4).unwrap();
        assert_eq!(p.angles, vec![10.0, 350.0, 45.0, 90.0]);
        assert_eq!(p.duplicates_dropped, 1);
        assert_eq!(p.truncated_from, Some(5));
    }

    #[test]
    fn skips_objects_without_the_key() {
        let p = parse_angles(r#"{"note": 1} then {"gantry_angles": [5]}"#, 5).unwrap();
        assert_eq!(p.angles, vec![5.0]);
        let nested = parse_angles(r#"{"plan": {"gantry_angles": [7]}}"#, 5).unwrap();
        assert_eq!(nested.angles, vec![7.0]);
    }

    #[test]
    fn failures_are_typed() {
        assert_eq!(parse_angles("no json here", 5), Err(ParseError::NotFound));
        assert_eq!(parse_angles("{broken", 5), Err(ParseError::NotFound));
        assert_eq!(parse_angles(r#"{"gantry_angles": []}"#, 5), Err(ParseError::Empty));
        assert!(matches!(parse_angles(r#"{"gantry_angles": ["x"]}"#, 5), Err(ParseError::BadValues(_))));
        assert!(matches!(parse_angles(r#"{"gantry_angles": 90}"#, 5), Err(ParseError::BadValues(_))));
    }
}
