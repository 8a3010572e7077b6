//! JSON-lines context datasets.
//!
//! Line 1 is a header `{"format": "ecozoo-contexts", "version": 1}`; every
//! following non-blank line is one [`ContextVector`]. An empty file is an
//! empty dataset.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ContextError, ContextVector};

pub const DATASET_FORMAT: &str = "ecozoo-contexts";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
}

fn parse_line<'a, T: Deserialize<'a>>(text: &'a str, line: usize) -> Result<T, ContextError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| ContextError::Dataset {
        line,
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn parse_dataset(text: &str) -> Result<Vec<ContextVector>, ContextError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((idx, first)) = lines.next() else {
        return Ok(Vec::new());
    };
    let header: Header = parse_line(first, idx + 1)?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(ContextError::Dataset {
            line: idx + 1,
            field: "format".into(),
            message: format!(
                "expected {DATASET_FORMAT} version {DATASET_VERSION}, found {} version {}",
                header.format, header.version
            ),
        });
    }
    let mut out = Vec::new();
    for (idx, text) in lines {
        let ctx: ContextVector = parse_line(text, idx + 1)?;
        ctx.validate().map_err(|e| ContextError::Dataset {
            line: idx + 1,
            field: field_of(&e.to_string()),
            message: e.to_string(),
        })?;
        out.push(ctx);
    }
    Ok(out)
}

/// Best-effort name of the offending field in a validation message.
fn field_of(message: &str) -> String {
    const FIELDS: [&str; 9] = [
        "lane_count",
        "lane_length",
        "speed_limit",
        "road_grade",
        "turn_lane_map",
        "turn_shares",
        "inflows",
        "adoption_level",
        "offset_s",
    ];
    FIELDS
        .iter()
        .find(|f| message.contains(*f))
        .map_or_else(|| "record".to_string(), |f| f.to_string())
}

pub fn load_dataset(path: &Path) -> Result<Vec<ContextVector>, ContextError> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

pub fn write_dataset<W: Write>(contexts: &[ContextVector], mut out: W) -> Result<(), ContextError> {
    let header = Header {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for ctx in contexts {
        writeln!(out, "{}", serde_json::to_string(ctx).expect("context serializes"))?;
    }
    Ok(())
}

pub fn save_dataset(contexts: &[ContextVector], path: &Path) -> Result<(), ContextError> {
    let mut buf = Vec::new();
    write_dataset(contexts, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}
