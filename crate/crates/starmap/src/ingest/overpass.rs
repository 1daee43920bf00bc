//! Overpass API JSON parsing.
//!
//! Reads the `elements` array of an Overpass response. Node and way
//! elements are collected; anything else (relations, counts) is skipped.
//! Errors carry the line and column reported by the JSON parser.

use std::collections::BTreeMap;

use serde::Deserialize;

use super::{IngestError, RawFeatureSet, RawNode, RawWay};

#[derive(Deserialize)]
struct Doc {
    elements: Vec<Element>,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Element {
    Node {
        id: i64,
        lat: f64,
        lon: f64,
        #[serde(default)]
        tags: BTreeMap<String, String>,
    },
    Way {
        id: i64,
        #[serde(default)]
        nodes: Vec<i64>,
        #[serde(default)]
        tags: BTreeMap<String, String>,
    },
    #[serde(other)]
    Other,
}

pub(super) fn parse(bytes: &[u8]) -> Result<RawFeatureSet, IngestError> {
    let doc: Doc = serde_json::from_slice(bytes).map_err(|e| {
        let looks_like_xml = bytes
            .iter()
            .find(|b| !b.is_ascii_whitespace())
            .is_some_and(|b| *b == b'<');
        IngestError::Json {
            line: e.line(),
            col: e.column(),
            message: e.to_string(),
            hint: if looks_like_xml {
                "; the content looks like XML (use --format osm_xml)"
            } else {
                ""
            },
        }
    })?;

    let mut raw = RawFeatureSet::default();
    for element in doc.elements {
        match element {
            Element::Node { id, lat, lon, tags } => raw.nodes.push(RawNode {
                id,
                lat,
                lon,
                tags: tags.into_iter().collect(),
            }),
            Element::Way { id, nodes, tags } => raw.ways.push(RawWay {
                id,
                node_refs: nodes,
                tags: tags.into_iter().collect(),
            }),
            Element::Other => {}
        }
    }
    Ok(raw)
}
