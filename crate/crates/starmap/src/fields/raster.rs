//! Regular raster grids with bilinear interpolation.

use serde::{Deserialize, Serialize};

use crate::fields::FieldError;
use crate::geometry::{BBox, Point};

/// A scalar field sampled on a regular, endpoint-inclusive grid.
///
/// Node `(0, 0)` sits at `(min_x, min_y)` of the extent, node
/// `(rows-1, cols-1)` at `(max_x, max_y)`; values are stored row-major with
/// row 0 at the south edge. Between nodes the field is the bilinear
/// interpolant of the enclosing cell; outside the extent it is undefined
/// and evaluation errors rather than extrapolates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRasterGrid")]
pub struct RasterGrid {
    extent: BBox,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawRasterGrid {
    extent: BBox,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl TryFrom<RawRasterGrid> for RasterGrid {
    type Error = FieldError;

    fn try_from(raw: RawRasterGrid) -> Result<Self, FieldError> {
        RasterGrid::new(raw.extent, raw.rows, raw.cols, raw.values)
    }
}

impl RasterGrid {
    pub fn new(
        extent: BBox,
        rows: usize,
        cols: usize,
        values: Vec<f64>,
    ) -> Result<Self, FieldError> {
        if rows < 2 || cols < 2 {
            return Err(FieldError::ResolutionTooSmall { rows, cols });
        }
        if !(extent.width() > 0.0 && extent.height() > 0.0) {
            return Err(FieldError::DegenerateExtent(extent));
        }
        if values.len() != rows * cols {
            return Err(FieldError::ValueCount {
                rows,
                cols,
                expected: rows * cols,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFiniteValue {
                row: i / cols,
                col: i % cols,
            });
        }
        Ok(RasterGrid {
            extent,
            rows,
            cols,
            values,
        })
    }

    /// Builds a grid by evaluating `f` at every node, row-major.
    pub fn from_fn<E>(
        extent: BBox,
        rows: usize,
        cols: usize,
        mut f: impl FnMut(Point) -> Result<f64, E>,
    ) -> Result<Self, FieldError>
    where
        FieldError: From<E>,
    {
        if rows < 2 || cols < 2 {
            return Err(FieldError::ResolutionTooSmall { rows, cols });
        }
        if !(extent.width() > 0.0 && extent.height() > 0.0) {
            return Err(FieldError::DegenerateExtent(extent));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for row in 0..rows {
            for col in 0..cols {
                values.push(f(node_point(extent, rows, cols, row, col))?);
            }
        }
        RasterGrid::new(extent, rows, cols, values)
    }

    pub fn extent(&self) -> BBox {
        self.extent
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn node_point(&self, row: usize, col: usize) -> Point {
        node_point(self.extent, self.rows, self.cols, row, col)
    }

    /// Node indices and positions, row-major.
    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize, Point)> + '_ {
        (0..self.rows).flat_map(move |row| {
            (0..self.cols).map(move |col| (row, col, self.node_point(row, col)))
        })
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Bilinear interpolation, exact at nodes.
    ///
    /// Points on the extent boundary are valid; anything outside errors.
    pub fn interpolate(&self, p: Point) -> Result<f64, FieldError> {
        if !self.extent.contains(p) {
            return Err(FieldError::OutOfExtent {
                point: p,
                extent: self.extent,
            });
        }
        let (col, fx) = cell_fraction(p.x, self.extent.min_x, self.extent.max_x, self.cols);
        let (row, fy) = cell_fraction(p.y, self.extent.min_y, self.extent.max_y, self.rows);
        let v00 = self.value(row, col);
        let v10 = self.value(row, col + 1);
        let v01 = self.value(row + 1, col);
        let v11 = self.value(row + 1, col + 1);
        Ok((1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11))
    }
}

/// Row-major node positions of a grid over `extent`, without building the
/// grid. Matches [`RasterGrid::node_point`] bit for bit.
pub(crate) fn grid_points(extent: BBox, rows: usize, cols: usize) -> Vec<Point> {
    let mut points = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            points.push(node_point(extent, rows, cols, row, col));
        }
    }
    points
}

fn node_point(extent: BBox, rows: usize, cols: usize, row: usize, col: usize) -> Point {
    Point::new(
        axis_node(extent.min_x, extent.max_x, cols, col),
        axis_node(extent.min_y, extent.max_y, rows, row),
    )
}

fn axis_node(min: f64, max: f64, count: usize, index: usize) -> f64 {
    // index / (count-1) is exact at both ends, so the first and last node
    // land exactly on the extent boundary.
    min + (max - min) * (index as f64 / (count - 1) as f64)
}

/// Cell index and in-cell fraction along one axis.
///
/// The fraction is computed against the actual node coordinates, so a query
/// coordinate that equals a node bit-for-bit yields a fraction of exactly
/// 0 or 1 and interpolation reproduces the node value without rounding.
fn cell_fraction(v: f64, min: f64, max: f64, count: usize) -> (usize, f64) {
    let u = (v - min) / (max - min) * (count - 1) as f64;
    let cell = (u.floor() as usize).min(count - 2);
    let lo = axis_node(min, max, count, cell);
    let hi = axis_node(min, max, count, cell + 1);
    let f = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    (cell, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn extent() -> BBox {
        BBox::new(-10.0, -5.0, 30.0, 25.0).unwrap()
    }

    #[test]
    fn construction_is_validated() {
        assert!(matches!(
            RasterGrid::new(extent(), 1, 4, vec![0.0; 4]),
            Err(FieldError::ResolutionTooSmall { .. })
        ));
        assert!(matches!(
            RasterGrid::new(extent(), 3, 3, vec![0.0; 8]),
            Err(FieldError::ValueCount { .. })
        ));
        assert!(matches!(
            RasterGrid::new(extent(), 2, 2, vec![0.0, f64::NAN, 0.0, 0.0]),
            Err(FieldError::NonFiniteValue { row: 0, col: 1 })
        ));
        let flat = BBox::new(0.0, 0.0, 1.0, 0.0).unwrap();
        assert!(matches!(
            RasterGrid::new(flat, 2, 2, vec![0.0; 4]),
            Err(FieldError::DegenerateExtent(_))
        ));
    }

    #[test]
    fn nodes_cover_the_extent_inclusive() {
        let g = RasterGrid::from_fn(extent(), 4, 5, |p| Ok::<_, FieldError>(p.x + p.y)).unwrap();
        assert_eq!(g.node_point(0, 0), Point::new(-10.0, -5.0));
        assert_eq!(g.node_point(3, 4), Point::new(30.0, 25.0));
        assert_eq!(g.nodes().count(), 20);
    }

    #[test]
    fn interpolation_reproduces_nodes_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..7 * 9).map(|_| rng.random_range(-1e3..1e3)).collect();
        let g = RasterGrid::new(extent(), 7, 9, values).unwrap();
        for (row, col, p) in g.nodes() {
            // Bit-exact, not merely close.
            assert_eq!(g.interpolate(p).unwrap(), g.value(row, col));
        }
    }

    #[test]
    fn interpolation_is_exact_for_bilinear_functions() {
        let f = |p: Point| 3.0 * p.x + 2.0 * p.y - 1.0 + 0.25 * p.x * p.y;
        let g = RasterGrid::from_fn(extent(), 6, 6, |p| Ok::<_, FieldError>(f(p))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let p = Point::new(rng.random_range(-10.0..30.0), rng.random_range(-5.0..25.0));
            assert_relative_eq!(g.interpolate(p).unwrap(), f(p), epsilon = 1e-9);
        }
    }

    #[test]
    fn midpoint_is_the_average_of_cell_corners() {
        let g = RasterGrid::new(
            BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            2,
            2,
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        assert_relative_eq!(g.interpolate(Point::new(0.5, 0.5)).unwrap(), 2.5);
    }

    #[test]
    fn outside_the_extent_is_an_error() {
        let g = RasterGrid::from_fn(extent(), 3, 3, |p| Ok::<_, FieldError>(p.x)).unwrap();
        // Boundary itself is fine.
        assert!(g.interpolate(Point::new(30.0, 25.0)).is_ok());
        assert!(g.interpolate(Point::new(-10.0, 25.0)).is_ok());
        let err = g.interpolate(Point::new(30.000001, 0.0));
        assert!(matches!(err, Err(FieldError::OutOfExtent { .. })));
        assert!(g.interpolate(Point::new(0.0, -5.1)).is_err());
    }

    #[test]
    fn serde_round_trip_is_validated() {
        let g = RasterGrid::from_fn(extent(), 3, 4, |p| Ok::<_, FieldError>(p.y)).unwrap();
        let json = serde_json::to_string(&g).unwrap();
        let back: RasterGrid = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);

        let bad = json.replace("\"rows\":3", "\"rows\":5");
        assert!(serde_json::from_str::<RasterGrid>(&bad).is_err());
    }
}
