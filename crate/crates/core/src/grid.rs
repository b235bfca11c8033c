//! Regular prediction grids over a bounding box and their rendering
//! as temperature heatmaps.

use thiserror::Error;

use crate::geo::{BoundingBox, GeoPoint};
use crate::gpr::GprModel;
use crate::pixmap::{ramp_color, Pixmap};

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid resolution must be finite and positive, got {0}")]
    InvalidResolution(f64),
}

/// A regular grid: the box is split into `round(span * cells_per_degree)`
/// equal cells per axis (at least one), and predictions are made at the
/// cell centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    bbox: BoundingBox,
    cells_per_degree: f64,
}

impl GridSpec {
    pub fn new(bbox: BoundingBox, cells_per_degree: f64) -> Result<Self, GridError> {
        if !cells_per_degree.is_finite() || cells_per_degree <= 0.0 {
            return Err(GridError::InvalidResolution(cells_per_degree));
        }
        Ok(GridSpec { bbox, cells_per_degree })
    }

    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    pub fn n_lat(&self) -> usize {
        ((self.bbox.lat_span() * self.cells_per_degree).round() as usize).max(1)
    }

    pub fn n_lon(&self) -> usize {
        ((self.bbox.lon_span() * self.cells_per_degree).round() as usize).max(1)
    }

    /// Cell centers in row-major order: latitude rises in the outer
    /// loop (southernmost row first), longitude in the inner loop.
    pub fn cell_centers(&self) -> Vec<GeoPoint> {
        let (n_lat, n_lon) = (self.n_lat(), self.n_lon());
        let dlat = self.bbox.lat_span() / n_lat as f64;
        let dlon = self.bbox.lon_span() / n_lon as f64;
        let mut out = Vec::with_capacity(n_lat * n_lon);
        for i in 0..n_lat {
            let lat = self.bbox.lat_min() + (i as f64 + 0.5) * dlat;
            for j in 0..n_lon {
                let lon = self.bbox.lon_min() + (j as f64 + 0.5) * dlon;
                out.push(GeoPoint::new(lat, lon).expect("cell centers stay inside the box"));
            }
        }
        out
    }
}

/// One evaluated grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub lat: f64,
    pub lon: f64,
    pub mean_c: f64,
    pub variance_c2: f64,
}

/// Evaluates the model at every cell center, in the same row-major
/// order as [`GridSpec::cell_centers`].
pub fn predict_grid(model: &GprModel, spec: &GridSpec) -> Vec<GridCell> {
    let centers = spec.cell_centers();
    let mut out = Vec::with_capacity(centers.len());
    // Chunked so the cross-covariance matrix stays small on big grids.
    for chunk in centers.chunks(4096) {
        for (point, pred) in chunk.iter().zip(model.predict(chunk)) {
            out.push(GridCell {
                lat: point.lat(),
                lon: point.lon(),
                mean_c: pred.mean_c,
                variance_c2: pred.variance_c2,
            });
        }
    }
    out
}

/// Renders grid means as a blue (cold) to red (warm) heatmap with one
/// pixel per cell and north at the top. A flat field renders mid-ramp.
pub fn heatmap(cells: &[GridCell], spec: &GridSpec) -> Pixmap {
    let (n_lat, n_lon) = (spec.n_lat(), spec.n_lon());
    assert_eq!(cells.len(), n_lat * n_lon, "cell count does not match the grid spec");
    let min = cells.iter().map(|c| c.mean_c).fold(f64::INFINITY, f64::min);
    let max = cells.iter().map(|c| c.mean_c).fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let mut img = Pixmap::new(n_lon, n_lat);
    for (idx, cell) in cells.iter().enumerate() {
        let row = idx / n_lon;
        let col = idx % n_lon;
        let t = if span > 0.0 { (cell.mean_c - min) / span } else { 0.5 };
        // Row 0 of the image is the northernmost grid row.
        img.set(col, n_lat - 1 - row, ramp_color(t));
    }
    img
}
