//! Raster output formats: CSV, GeoJSON, and a portable-pixmap heatmap.
//!
//! All writers are deterministic: the same raster produces the same
//! bytes. CSV is the interchange format (it reads back losslessly),
//! GeoJSON targets standard map viewers, and PPM is the rendered
//! heatmap.

use std::io::{BufRead, Write};

use serde::Serialize;
use thiserror::Error;

use crate::fields::RasterGrid;
use crate::geometry::{BBox, GeoOrigin, GeometryError};
use crate::ingest::unproject;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("malformed raster CSV at record {record}: {message}")]
    Csv { record: u64, message: String },
    #[error("raster CSV is not a row-major grid: {0}")]
    NotAGrid(String),
    #[error("raster CSV is empty")]
    Empty,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Field(#[from] crate::fields::FieldError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Writes `x,y,value` records, one per node, row-major from the south
/// row up, CRLF-terminated. Coordinates use the shortest representation
/// that parses back to the same float, so a read inverts the write
/// bitwise.
pub fn write_raster_csv(raster: &RasterGrid, out: impl Write) -> Result<(), ExportError> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(out);
    writer
        .write_record(["x", "y", "value"])
        .map_err(csv_error)?;
    for ((_, _, point), value) in raster.nodes().zip(raster.values()) {
        writer
            .serialize((point.x, point.y, *value))
            .map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> ExportError {
    ExportError::Csv {
        record: e.position().map_or(0, |p| p.record()),
        message: e.to_string(),
    }
}

/// Reads a raster written by [`write_raster_csv`]. The records must form
/// a complete row-major grid: x cycling fastest through a fixed set of
/// columns, y constant within a row and increasing across rows.
pub fn read_raster_csv(input: impl BufRead) -> Result<RasterGrid, ExportError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(input);
    let mut triples: Vec<(f64, f64, f64)> = Vec::new();
    for record in reader.deserialize() {
        triples.push(record.map_err(csv_error)?);
    }
    if triples.is_empty() {
        return Err(ExportError::Empty);
    }

    let first_y = triples[0].1;
    let cols = triples.iter().take_while(|t| t.1 == first_y).count();
    if cols < 2 || triples.len() % cols != 0 {
        return Err(ExportError::NotAGrid(format!(
            "{} records do not tile rows of {cols} columns",
            triples.len()
        )));
    }
    let rows = triples.len() / cols;
    if rows < 2 {
        return Err(ExportError::NotAGrid("fewer than two rows".to_string()));
    }
    let xs: Vec<f64> = triples[..cols].iter().map(|t| t.0).collect();
    for (i, chunk) in triples.chunks(cols).enumerate() {
        let y = chunk[0].1;
        if i > 0 && y <= triples[(i - 1) * cols].1 {
            return Err(ExportError::NotAGrid(format!("row {i} does not move north")));
        }
        for (j, t) in chunk.iter().enumerate() {
            if t.0 != xs[j] || t.1 != y {
                return Err(ExportError::NotAGrid(format!(
                    "record {} breaks the grid pattern",
                    i * cols + j
                )));
            }
        }
    }

    let extent = BBox::new(xs[0], first_y, xs[cols - 1], triples[(rows - 1) * cols].1)?;
    let values = triples.iter().map(|t| t.2).collect();
    Ok(RasterGrid::new(extent, rows, cols, values)?)
}

#[derive(Serialize)]
struct GeoJsonDoc {
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    metadata: Option<serde_json::Value>,
    features: Vec<GeoJsonFeature>,
}

#[derive(Serialize)]
struct GeoJsonFeature {
    #[serde(rename = "type")]
    kind: &'static str,
    geometry: GeoJsonPolygon,
    properties: CellProperties,
}

#[derive(Serialize)]
struct GeoJsonPolygon {
    #[serde(rename = "type")]
    kind: &'static str,
    /// One exterior ring, `[lon, lat]` pairs, counterclockwise, closed.
    coordinates: [Vec<[f64; 2]>; 1],
}

#[derive(Serialize)]
struct CellProperties {
    value: f64,
}

/// Writes one polygon cell per raster node with the node's value as a
/// `value` property. Cells split the spacing between neighboring nodes
/// and are clamped to the extent, so they tile it exactly. Coordinates
/// are WGS84 (inverse projection around `origin`).
pub fn write_raster_geojson(
    raster: &RasterGrid,
    origin: GeoOrigin,
    metadata: Option<serde_json::Value>,
    out: impl Write,
) -> Result<(), ExportError> {
    let extent = raster.extent();
    let dx = extent.width() / (raster.cols() - 1) as f64;
    let dy = extent.height() / (raster.rows() - 1) as f64;
    let mut features = Vec::with_capacity(raster.rows() * raster.cols());
    for ((_, _, point), value) in raster.nodes().zip(raster.values()) {
        let min_x = (point.x - dx / 2.0).max(extent.min_x);
        let max_x = (point.x + dx / 2.0).min(extent.max_x);
        let min_y = (point.y - dy / 2.0).max(extent.min_y);
        let max_y = (point.y + dy / 2.0).min(extent.max_y);
        let corner = |x: f64, y: f64| {
            let (lat, lon) = unproject(origin, crate::geometry::Point::new(x, y));
            [lon, lat]
        };
        let ring = vec![
            corner(min_x, min_y),
            corner(max_x, min_y),
            corner(max_x, max_y),
            corner(min_x, max_y),
            corner(min_x, min_y),
        ];
        features.push(GeoJsonFeature {
            kind: "Feature",
            geometry: GeoJsonPolygon {
                kind: "Polygon",
                coordinates: [ring],
            },
            properties: CellProperties { value: *value },
        });
    }
    let doc = GeoJsonDoc {
        kind: "FeatureCollection",
        metadata,
        features,
    };
    let mut out = out;
    serde_json::to_writer(&mut out, &doc)
        .map_err(|e| ExportError::Io(std::io::Error::other(e)))?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Value range a rendered image spans, for printing a legend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Legend {
    pub min: f64,
    pub max: f64,
}

impl Legend {
    /// The color for a value, interpolating blue (minimum) to red
    /// (maximum). A constant raster renders mid-scale.
    pub fn color(&self, value: f64) -> [u8; 3] {
        let t = if self.max > self.min {
            ((value - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        } else {
            0.5
        };
        [
            (255.0 * t).round() as u8,
            0,
            (255.0 * (1.0 - t)).round() as u8,
        ]
    }
}

/// Renders a binary portable pixmap (P6), one pixel per node, north row
/// on top. Output bytes are a pure function of the raster.
pub fn render_ppm(raster: &RasterGrid, out: impl Write) -> Result<Legend, ExportError> {
    let legend = Legend {
        min: raster.min(),
        max: raster.max(),
    };
    let (rows, cols) = (raster.rows(), raster.cols());
    let mut out = out;
    write!(out, "P6\n{cols} {rows}\n255\n")?;
    let values = raster.values();
    let mut pixels = Vec::with_capacity(rows * cols * 3);
    for row in (0..rows).rev() {
        for col in 0..cols {
            pixels.extend_from_slice(&legend.color(values[row * cols + col]));
        }
    }
    out.write_all(&pixels)?;
    Ok(legend)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;

    fn raster() -> RasterGrid {
        let extent = BBox::new(-30.0, 0.0, 150.0, 90.0).unwrap();
        RasterGrid::from_fn(extent, 4, 7, |p| {
            Ok::<_, crate::fields::FieldError>((0.37 * p.x).sin() + p.y / 91.0)
        })
        .unwrap()
    }

    #[test]
    fn csv_round_trips_bitwise() {
        let raster = raster();
        let mut bytes = Vec::new();
        write_raster_csv(&raster, &mut bytes).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("x,y,value\r\n"), "CRLF records");
        assert_eq!(text.lines().count(), 1 + 4 * 7);

        let back = read_raster_csv(&bytes[..]).unwrap();
        assert_eq!(back.extent(), raster.extent());
        assert_eq!((back.rows(), back.cols()), (4, 7));
        assert_eq!(back.values(), raster.values());
        // Reconstructed nodes are the written nodes.
        assert!(back.nodes().zip(raster.nodes()).all(|(a, b)| a == b));
    }

    #[test]
    fn csv_rejects_non_grids() {
        assert!(matches!(read_raster_csv(&b"x,y,value\r\n"[..]), Err(ExportError::Empty)));

        let short = b"x,y,value\r\n0,0,1\r\n1,0,2\r\n0,1,3\r\n";
        assert!(matches!(read_raster_csv(&short[..]), Err(ExportError::NotAGrid(_))));

        let scrambled = b"x,y,value\r\n0,0,1\r\n1,0,2\r\n0,1,3\r\n2,1,4\r\n";
        assert!(matches!(read_raster_csv(&scrambled[..]), Err(ExportError::NotAGrid(_))));

        let bad_number = b"x,y,value\r\n0,0,one\r\n";
        assert!(matches!(read_raster_csv(&bad_number[..]), Err(ExportError::Csv { .. })));
    }

    #[test]
    fn geojson_cells_tile_the_extent_in_wgs84() {
        let raster = raster();
        let origin = GeoOrigin::new(49.0, 8.0).unwrap();
        let mut bytes = Vec::new();
        write_raster_geojson(&raster, origin, Some(serde_json::json!({"seed": 7})), &mut bytes)
            .unwrap();
        let doc: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(doc["type"], "FeatureCollection");
        assert_eq!(doc["metadata"]["seed"], 7);
        let features = doc["features"].as_array().unwrap();
        assert_eq!(features.len(), 4 * 7);

        // Cell corners unproject the extent corners: the south-west cell
        // starts at the extent's south-west corner.
        let ring = features[0]["geometry"]["coordinates"][0].as_array().unwrap();
        assert_eq!(ring.len(), 5);
        assert_eq!(ring[0], ring[4]);
        let (lat, lon) = unproject(origin, Point::new(-30.0, 0.0));
        assert_eq!(ring[0][0].as_f64().unwrap(), lon);
        assert_eq!(ring[0][1].as_f64().unwrap(), lat);

        // Interior edges are shared: cell 0's east edge is cell 1's west.
        let next = features[1]["geometry"]["coordinates"][0].as_array().unwrap();
        assert_eq!(ring[1][0], next[0][0]);

        // Values land in properties in node order.
        let value = features[10]["properties"]["value"].as_f64().unwrap();
        assert_eq!(value, raster.values()[10]);
    }

    #[test]
    fn ppm_is_north_up_and_deterministic() {
        let raster = raster();
        let mut a = Vec::new();
        let legend = render_ppm(&raster, &mut a).unwrap();
        let mut b = Vec::new();
        render_ppm(&raster, &mut b).unwrap();
        assert_eq!(a, b, "render twice, byte-identical");
        assert_eq!(legend, Legend { min: raster.min(), max: raster.max() });

        let header = b"P6\n7 4\n255\n";
        assert_eq!(&a[..header.len()], header);
        assert_eq!(a.len(), header.len() + 4 * 7 * 3);

        // First pixel row is the NORTHERN raster row (row index 3).
        let first_pixel: [u8; 3] = a[header.len()..header.len() + 3].try_into().unwrap();
        assert_eq!(first_pixel, legend.color(raster.values()[3 * 7]));

        // The maximum maps to pure red, the minimum to pure blue.
        assert_eq!(legend.color(raster.max()), [255, 0, 0]);
        assert_eq!(legend.color(raster.min()), [0, 0, 255]);
    }

    #[test]
    fn constant_rasters_render_one_color() {
        let extent = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let flat =
            RasterGrid::from_fn(extent, 3, 3, |_| Ok::<_, crate::fields::FieldError>(2.5)).unwrap();
        let mut bytes = Vec::new();
        let legend = render_ppm(&flat, &mut bytes).unwrap();
        let body = &bytes[b"P6\n3 3\n255\n".len()..];
        let first: [u8; 3] = body[..3].try_into().unwrap();
        assert_eq!(first, legend.color(2.5));
        assert!(body.chunks(3).all(|px| px == first));
    }
}
