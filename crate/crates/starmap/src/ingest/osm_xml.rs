//! OpenStreetMap XML parsing.
//!
//! Reads the subset relevant for map building: `<node>` with `lat`/`lon`,
//! `<way>` with ordered `<nd ref=..>` children, and `<tag k= v=>` on
//! either. Relations and metadata attributes are skipped. Errors carry
//! the byte offset into the document.

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{IngestError, RawFeatureSet, RawNode, RawWay};

pub(super) fn parse(bytes: &[u8]) -> Result<RawFeatureSet, IngestError> {
    let mut reader = Reader::from_reader(bytes);
    reader.config_mut().trim_text(true);
    let mut buf = Vec::new();
    let mut raw = RawFeatureSet::default();
    let mut seen_root = false;
    // The element currently open, if it is one we collect tags/refs for.
    enum Open {
        Node(RawNode),
        Way(RawWay),
        None,
    }
    let mut open = Open::None;
    let mut depth = 0usize;

    loop {
        let offset = reader.buffer_position();
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| IngestError::Xml {
                offset,
                message: e.to_string(),
            })?;
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let empty = matches!(event, Event::Empty(_));
                if !empty {
                    depth += 1;
                }
                match e.local_name().as_ref() {
                    b"osm" => seen_root = true,
                    b"node" => {
                        let node = RawNode {
                            id: required_attr(&reader, e, b"id", offset)?,
                            lat: required_attr(&reader, e, b"lat", offset)?,
                            lon: required_attr(&reader, e, b"lon", offset)?,
                            tags: vec![],
                        };
                        if empty {
                            raw.nodes.push(node);
                        } else {
                            open = Open::Node(node);
                        }
                    }
                    b"way" => {
                        let way = RawWay {
                            id: required_attr(&reader, e, b"id", offset)?,
                            node_refs: vec![],
                            tags: vec![],
                        };
                        if empty {
                            raw.ways.push(way);
                        } else {
                            open = Open::Way(way);
                        }
                    }
                    b"nd" => {
                        if let Open::Way(way) = &mut open {
                            way.node_refs
                                .push(required_attr(&reader, e, b"ref", offset)?);
                        }
                    }
                    b"tag" => {
                        let k: String = required_attr(&reader, e, b"k", offset)?;
                        let v: String = required_attr(&reader, e, b"v", offset)?;
                        match &mut open {
                            Open::Node(node) => node.tags.push((k, v)),
                            Open::Way(way) => way.tags.push((k, v)),
                            Open::None => {}
                        }
                    }
                    _ => {}
                }
            }
            Event::End(ref e) => {
                depth = depth.saturating_sub(1);
                match e.local_name().as_ref() {
                    b"node" | b"way" => match std::mem::replace(&mut open, Open::None) {
                        Open::Node(node) => raw.nodes.push(node),
                        Open::Way(way) => raw.ways.push(way),
                        Open::None => {}
                    },
                    _ => {}
                }
            }
            Event::Eof => {
                // The event reader does not flag missing end tags itself.
                if depth > 0 {
                    return Err(IngestError::Xml {
                        offset,
                        message: format!("unexpected end of file, {depth} unclosed elements"),
                    });
                }
                break;
            }
            _ => {}
        }
        buf.clear();
    }

    if !seen_root {
        return Err(IngestError::Xml {
            offset: 0,
            message: "no <osm> root element; is this Overpass JSON? (use --format overpass_json)"
                .to_string(),
        });
    }
    Ok(raw)
}

fn required_attr<T: std::str::FromStr>(
    reader: &Reader<&[u8]>,
    element: &BytesStart<'_>,
    name: &[u8],
    offset: u64,
) -> Result<T, IngestError> {
    let attr = element
        .try_get_attribute(name)
        .map_err(|e| IngestError::Xml {
            offset,
            message: e.to_string(),
        })?
        .ok_or_else(|| IngestError::Xml {
            offset,
            message: format!(
                "<{}> is missing the {} attribute",
                String::from_utf8_lossy(element.local_name().as_ref()),
                String::from_utf8_lossy(name)
            ),
        })?;
    let text = attr.decode_and_unescape_value(reader.decoder()).map_err(|e| IngestError::Xml {
        offset,
        message: e.to_string(),
    })?;
    text.parse().map_err(|_| IngestError::Xml {
        offset,
        message: format!(
            "attribute {}=\"{}\" is not a valid number",
            String::from_utf8_lossy(name),
            text
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nodes_ways_and_tags() {
        let xml = r#"<?xml version="1.0"?>
<osm version="0.6">
  <node id="1" lat="49.0" lon="8.0"/>
  <node id="2" lat="49.001" lon="8.002">
    <tag k="amenity" v="bench"/>
  </node>
  <way id="10">
    <nd ref="1"/>
    <nd ref="2"/>
    <tag k="highway" v="primary"/>
    <tag k="name" v="A &amp; B"/>
  </way>
</osm>"#;
        let raw = parse(xml.as_bytes()).unwrap();
        assert_eq!(raw.nodes.len(), 2);
        assert_eq!(raw.nodes[0], RawNode { id: 1, lat: 49.0, lon: 8.0, tags: vec![] });
        assert_eq!(raw.nodes[1].tags, [("amenity".to_string(), "bench".to_string())]);
        assert_eq!(raw.ways.len(), 1);
        assert_eq!(raw.ways[0].node_refs, [1, 2]);
        assert_eq!(
            raw.ways[0].tags,
            [
                ("highway".to_string(), "primary".to_string()),
                ("name".to_string(), "A & B".to_string()),
            ]
        );
    }

    #[test]
    fn truncated_documents_report_the_byte_offset() {
        let xml = "<osm>\n  <node id=\"1\" lat=\"49.0\" lon=\"8.0\"/>\n  <way id=\"2\">";
        let err = parse(xml.as_bytes()).unwrap_err();
        match err {
            IngestError::Xml { offset, .. } => assert!(offset > 0, "offset {offset}"),
            other => panic!("expected Xml error, got {other}"),
        }
    }

    #[test]
    fn bad_numbers_and_missing_attributes_are_rejected() {
        let err = parse(b"<osm><node id=\"1\" lat=\"abc\" lon=\"8.0\"/></osm>").unwrap_err();
        assert!(err.to_string().contains("not a valid number"), "{err}");

        let err = parse(b"<osm><node id=\"1\" lat=\"49.0\"/></osm>").unwrap_err();
        assert!(err.to_string().contains("missing the lon attribute"), "{err}");
    }

    #[test]
    fn json_input_gets_a_format_hint() {
        let err = parse(br#"{"elements": []}"#).unwrap_err();
        assert!(err.to_string().contains("Overpass JSON"), "{err}");
    }
}
