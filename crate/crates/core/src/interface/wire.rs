//! JSON request and response bodies of the prediction service. Arrays are
//! nested row-major lists, row 0 on the north edge.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalharness::comfort::{comfort_of_field, COMFORT_THRESHOLD};
use crate::flowsim::{solve, FlowConfig, SolveReport};
use crate::geomodel::{Footprint, Point, Tile};
use crate::raster::{canonicalize, decanonicalize, rasterize, Direction, HeightGrid, NormStats, VelocityField};
use crate::surrogate::{predict_directional, ModelBundle, TrainingMeta, UNetSpec};

fn default_threshold() -> f64 {
    COMFORT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    /// Building heights in meters, 0 for open ground.
    pub heights: Vec<Vec<f64>>,
    pub direction: Direction,
    #[serde(default)]
    pub include_mask: bool,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Meters per cell; defaults to the model's training cell size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_size: Option<f64>,
}

impl PredictRequest {
    pub fn new(grid: &HeightGrid, direction: Direction) -> Self {
        PredictRequest {
            heights: to_rows(&grid.data, grid.resolution)
                .into_iter()
                .map(|r| r.into_iter().map(f64::from).collect())
                .collect(),
            direction,
            include_mask: false,
            threshold: COMFORT_THRESHOLD,
            cell_size: Some(grid.cell_size),
        }
    }

    /// Converts the body to a height grid. Ragged or oddly sized arrays are
    /// shape errors; negative heights and values that overflow f32 are
    /// validation errors.
    pub fn to_grid(&self, default_cell_size: f64) -> Result<HeightGrid> {
        let w = self.heights.len();
        if w < 16 || !w.is_power_of_two() {
            return Err(Error::Shape(format!("heights must be a W x W array with W a power of two >= 16, got {w} rows")));
        }
        if let Some((i, row)) = self.heights.iter().enumerate().find(|(_, r)| r.len() != w) {
            return Err(Error::Shape(format!("heights row {i} has {} values, expected {w}", row.len())));
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(Error::Validation(format!("threshold must be finite and >= 0, got {}", self.threshold)));
        }
        let cell_size = self.cell_size.unwrap_or(default_cell_size);
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::Validation(format!("cell_size must be positive, got {cell_size}")));
        }
        let data = self.heights.iter().flatten().map(|&h| h as f32).collect();
        HeightGrid::new(w, cell_size, data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    /// "surrogate" or "oracle".
    pub kind: String,
    pub note: Option<String>,
    pub spec: Option<UNetSpec>,
    pub u_seed: Option<u64>,
    pub v_seed: Option<u64>,
    pub solver_iterations: Option<usize>,
    pub solver_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub resolution: usize,
    pub direction: Direction,
    pub threshold: f64,
    pub u: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub magnitude: Vec<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<Vec<bool>>>,
    pub comfort_fraction: f64,
    pub model: ModelInfo,
    pub latency_ms: f64,
}

impl PredictResponse {
    fn from_field(field: &VelocityField, grid: &HeightGrid, req: &PredictRequest, model: ModelInfo, started: Instant) -> Self {
        let w = field.resolution;
        let c = comfort_of_field(field, grid, req.direction, req.threshold);
        PredictResponse {
            resolution: w,
            direction: req.direction,
            threshold: req.threshold,
            u: to_rows(&field.u, w),
            v: to_rows(&field.v, w),
            magnitude: to_rows(&c.magnitude, w),
            mask: req.include_mask.then(|| to_rows(&c.mask, w)),
            comfort_fraction: c.fraction,
            model,
            latency_ms: started.elapsed().as_secs_f64() * 1e3,
        }
    }

    /// Flattens the response back to a world-frame field.
    pub fn field(&self, cell_size: f64) -> Result<VelocityField> {
        let flat = |rows: &[Vec<f32>], name: &str| -> Result<Vec<f32>> {
            if rows.len() != self.resolution || rows.iter().any(|r| r.len() != self.resolution) {
                return Err(Error::Shape(format!("response {name} is not {0}x{0}", self.resolution)));
            }
            Ok(rows.concat())
        };
        Ok(VelocityField {
            resolution: self.resolution,
            cell_size,
            u: flat(&self.u, "u")?,
            v: flat(&self.v, "v")?,
            cut_height: crate::raster::CUT_HEIGHT,
        })
    }
}

pub fn to_rows<T: Copy>(data: &[T], w: usize) -> Vec<Vec<T>> {
    data.chunks(w).map(|r| r.to_vec()).collect()
}

/// Surrogate prediction for one request, shared by the CLI and the service.
pub fn surrogate_response(u_model: &ModelBundle, v_model: &ModelBundle, req: &PredictRequest) -> Result<PredictResponse> {
    let started = Instant::now();
    let grid = req.to_grid(u_model.training.cell_size)?;
    let field = predict_directional(u_model, v_model, &grid, req.direction)?;
    let model = ModelInfo {
        kind: "surrogate".into(),
        note: None,
        spec: Some(*u_model.spec()),
        u_seed: Some(u_model.training.seed),
        v_seed: Some(v_model.training.seed),
        solver_iterations: None,
        solver_residual: None,
    };
    Ok(PredictResponse::from_field(&field, &grid, req, model, started))
}

/// Flow-oracle answer to the same request shape. Takes seconds at 64x64.
pub fn oracle_response(flow: &FlowConfig, req: &PredictRequest, default_cell_size: f64) -> Result<PredictResponse> {
    let started = Instant::now();
    let grid = req.to_grid(default_cell_size)?;
    let (canonical, report): (VelocityField, SolveReport) = solve(&canonicalize(&grid, req.direction), flow)?;
    let field = decanonicalize(&canonical, req.direction);
    let model = ModelInfo {
        kind: "oracle".into(),
        note: Some("full flow solve; slow, intended for side-by-side comparison".into()),
        spec: None,
        u_seed: None,
        v_seed: None,
        solver_iterations: Some(report.iterations),
        solver_residual: Some(report.residual),
    };
    Ok(PredictResponse::from_field(&field, &grid, req, model, started))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectangleBuilding {
    /// South-west corner in tile-local meters (y points north).
    pub x: f64,
    pub y: f64,
    /// Extent along x.
    pub width: f64,
    /// Extent along y.
    pub depth: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolygonBuilding {
    pub vertices: Vec<Point>,
    pub height: f64,
}

/// Debug rasterization request, used to check client-side rasterizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterizeRequest {
    pub resolution: usize,
    /// Tile side in meters.
    pub side: f64,
    #[serde(default)]
    pub rectangles: Vec<RectangleBuilding>,
    #[serde(default)]
    pub polygons: Vec<PolygonBuilding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterizeResponse {
    pub resolution: usize,
    pub cell_size: f64,
    pub heights: Vec<Vec<f32>>,
}

impl RasterizeRequest {
    pub fn to_tile(&self) -> Result<Tile> {
        if self.resolution < 16 || !self.resolution.is_power_of_two() {
            return Err(Error::Shape(format!(
                "resolution must be a power of two >= 16, got {}",
                self.resolution
            )));
        }
        if !(self.side.is_finite() && self.side > 0.0) {
            return Err(Error::Validation(format!("tile side must be positive, got {}", self.side)));
        }
        let mut footprints = Vec::with_capacity(self.rectangles.len() + self.polygons.len());
        for r in &self.rectangles {
            if !(r.width > 0.0 && r.depth > 0.0) {
                return Err(Error::Validation(format!(
                    "rectangle extents must be positive, got {} x {}",
                    r.width, r.depth
                )));
            }
            let ring = vec![[r.x, r.y], [r.x + r.width, r.y], [r.x + r.width, r.y + r.depth], [r.x, r.y + r.depth]];
            footprints.push(Footprint::new(ring, r.height)?);
        }
        for p in &self.polygons {
            footprints.push(Footprint::new(p.vertices.clone(), p.height)?);
        }
        Ok(Tile {
            id: 0,
            origin: [0.0, 0.0],
            side: self.side,
            footprints,
        })
    }
}

pub fn rasterize_response(req: &RasterizeRequest) -> Result<RasterizeResponse> {
    let grid = rasterize(&req.to_tile()?, req.resolution);
    Ok(RasterizeResponse {
        resolution: grid.resolution,
        cell_size: grid.cell_size,
        heights: to_rows(&grid.data, grid.resolution),
    })
}

/// Body of `GET /model/meta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub spec: UNetSpec,
    pub norm: NormStats,
    pub u: TrainingMeta,
    pub v: TrainingMeta,
}

impl ModelMeta {
    pub fn of(u_model: &ModelBundle, v_model: &ModelBundle) -> Self {
        ModelMeta {
            spec: *u_model.spec(),
            norm: u_model.norm,
            u: u_model.training.clone(),
            v: v_model.training.clone(),
        }
    }
}
