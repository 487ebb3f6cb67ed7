//! Height rasters, velocity fields, quarter-turn rotations and scaling.
//!
//! Grids are row-major with row 0 on the north edge and column 0 on the west
//! edge. `u` points east (+column), `v` points north (-row).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomodel::{geometry::point_in_polygon, Tile};

/// Pedestrian cut-plane height in meters.
pub const CUT_HEIGHT: f64 = 1.2;

/// Velocity headroom applied when scaling targets, so training magnitudes stay below one.
pub const VELOCITY_HEADROOM: f64 = 1.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightGrid {
    pub resolution: usize,
    pub cell_size: f64,
    pub data: Vec<f32>,
}

impl HeightGrid {
    pub fn new(resolution: usize, cell_size: f64, data: Vec<f32>) -> Result<Self> {
        validate_resolution(resolution)?;
        if data.len() != resolution * resolution {
            return Err(Error::Shape(format!(
                "height grid of resolution {resolution} needs {} values, got {}",
                resolution * resolution,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|h| !h.is_finite() || **h < 0.0) {
            return Err(Error::Validation(format!("height values must be finite and >= 0, got {bad}")));
        }
        Ok(HeightGrid {
            resolution,
            cell_size,
            data,
        })
    }

    pub fn zeros(resolution: usize, cell_size: f64) -> Self {
        HeightGrid {
            resolution,
            cell_size,
            data: vec![0.0; resolution * resolution],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.resolution + col]
    }

    pub fn is_building(&self, idx: usize) -> bool {
        self.data[idx] > 0.0
    }
}

pub fn validate_resolution(resolution: usize) -> Result<()> {
    if resolution < 16 || !resolution.is_power_of_two() {
        return Err(Error::Validation(format!(
            "resolution must be a power of two >= 16, got {resolution}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Component {
    U,
    V,
}

impl Component {
    pub const ALL: [Component; 2] = [Component::U, Component::V];

    pub fn name(self) -> &'static str {
        match self {
            Component::U => "u",
            Component::V => "v",
        }
    }
}

impl std::str::FromStr for Component {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "u" => Ok(Component::U),
            "v" => Ok(Component::V),
            _ => Err(Error::Parse(format!("unknown velocity component '{s}'"))),
        }
    }
}

impl std::fmt::Display for Component {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityField {
    pub resolution: usize,
    pub cell_size: f64,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
    pub cut_height: f64,
}

impl VelocityField {
    pub fn uniform(resolution: usize, cell_size: f64, u: f32, v: f32) -> Self {
        let n = resolution * resolution;
        VelocityField {
            resolution,
            cell_size,
            u: vec![u; n],
            v: vec![v; n],
            cut_height: CUT_HEIGHT,
        }
    }

    pub fn component(&self, c: Component) -> &[f32] {
        match c {
            Component::U => &self.u,
            Component::V => &self.v,
        }
    }

    pub fn speed(&self) -> Vec<f32> {
        self.u.iter().zip(&self.v).map(|(u, v)| (u * u + v * v).sqrt()).collect()
    }
}

/// Compass direction the wind blows from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    N,
    E,
    S,
    W,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::N, Direction::E, Direction::S, Direction::W];

    /// Counterclockwise quarter-turns that bring this inflow to the canonical north inflow.
    pub fn quarter_turns(self) -> u8 {
        match self {
            Direction::N => 0,
            Direction::E => 1,
            Direction::S => 2,
            Direction::W => 3,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Direction::N => 'N',
            Direction::E => 'E',
            Direction::S => 'S',
            Direction::W => 'W',
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "N" => Ok(Direction::N),
            "E" => Ok(Direction::E),
            "S" => Ok(Direction::S),
            "W" => Ok(Direction::W),
            _ => Err(Error::Parse(format!("unknown wind direction '{s}'"))),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Cell-center sampling: each cell takes the height of the tallest footprint
/// containing its center point.
pub fn rasterize(tile: &Tile, resolution: usize) -> HeightGrid {
    let cell = tile.side / resolution as f64;
    let mut data = vec![0.0f32; resolution * resolution];
    for f in &tile.footprints {
        let b = f.bounds();
        // columns/rows whose centers can fall inside the footprint bbox
        let c0 = ((b.min[0] / cell - 0.5).floor().max(0.0)) as usize;
        let c1 = ((b.max[0] / cell - 0.5).ceil().max(0.0) as usize).min(resolution - 1);
        let r0 = (((tile.side - b.max[1]) / cell - 0.5).floor().max(0.0)) as usize;
        let r1 = ((((tile.side - b.min[1]) / cell - 0.5).ceil().max(0.0)) as usize).min(resolution - 1);
        let h = f.height as f32;
        for r in r0..=r1 {
            let y = tile.side - (r as f64 + 0.5) * cell;
            for c in c0..=c1 {
                let x = (c as f64 + 0.5) * cell;
                let idx = r * resolution + c;
                if h > data[idx] && point_in_polygon([x, y], &f.vertices) {
                    data[idx] = h;
                }
            }
        }
    }
    HeightGrid {
        resolution,
        cell_size: cell,
        data,
    }
}

/// Exact counterclockwise rotation by `k` quarter-turns:
/// one turn maps `out[r][c] = in[c][w - 1 - r]`.
pub fn rotate_grid_ccw<T: Copy>(data: &[T], w: usize, k: u8) -> Vec<T> {
    assert_eq!(data.len(), w * w, "rotation needs a square grid");
    let mut out = data.to_vec();
    for _ in 0..(k % 4) {
        let src = out.clone();
        for r in 0..w {
            for c in 0..w {
                out[r * w + c] = src[c * w + (w - 1 - r)];
            }
        }
    }
    out
}

/// Rotates positions like [`rotate_grid_ccw`]; each quarter-turn maps `(u, v)` to `(-v, u)`.
pub fn rotate_vector_field(field: &VelocityField, k: u8) -> VelocityField {
    let w = field.resolution;
    let mut u = rotate_grid_ccw(&field.u, w, k);
    let mut v = rotate_grid_ccw(&field.v, w, k);
    for _ in 0..(k % 4) {
        for (a, b) in u.iter_mut().zip(v.iter_mut()) {
            let (nu, nv) = (-*b, *a);
            *a = nu;
            *b = nv;
        }
    }
    VelocityField {
        resolution: w,
        cell_size: field.cell_size,
        u,
        v,
        cut_height: field.cut_height,
    }
}

pub fn rotate_height_grid(grid: &HeightGrid, k: u8) -> HeightGrid {
    HeightGrid {
        resolution: grid.resolution,
        cell_size: grid.cell_size,
        data: rotate_grid_ccw(&grid.data, grid.resolution, k),
    }
}

/// Rotates a world-frame layout into the frame where the wind comes from the north.
pub fn canonicalize(grid: &HeightGrid, dir: Direction) -> HeightGrid {
    rotate_height_grid(grid, dir.quarter_turns())
}

/// Rotates a canonical-frame field back to the world frame of `dir`.
pub fn decanonicalize(field: &VelocityField, dir: Direction) -> VelocityField {
    rotate_vector_field(field, (4 - dir.quarter_turns()) % 4)
}

/// Frozen training-set scaling constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub h_max: f64,
    pub v_scale_u: f64,
    pub v_scale_v: f64,
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("h_max", self.h_max), ("v_scale_u", self.v_scale_u), ("v_scale_v", self.v_scale_v)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("normalization stat {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Max building height and per-component max-abs velocity over the given pairs.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a HeightGrid, &'a VelocityField)>) -> Result<Self> {
        let mut stats = NormStats {
            h_max: 0.0,
            v_scale_u: 0.0,
            v_scale_v: 0.0,
        };
        for (g, f) in pairs {
            stats.h_max = g.data.iter().fold(stats.h_max, |m, h| m.max(*h as f64));
            stats.v_scale_u = f.u.iter().fold(stats.v_scale_u, |m, x| m.max(x.abs() as f64));
            stats.v_scale_v = f.v.iter().fold(stats.v_scale_v, |m, x| m.max(x.abs() as f64));
        }
        stats.validate()?;
        Ok(stats)
    }

    pub fn height_scale(&self) -> f32 {
        self.h_max as f32
    }

    pub fn velocity_scale(&self, c: Component) -> f32 {
        let s = match c {
            Component::U => self.v_scale_u,
            Component::V => self.v_scale_v,
        };
        (VELOCITY_HEADROOM * s) as f32
    }
}

pub fn normalize_heights(grid: &HeightGrid, stats: &NormStats) -> Result<Vec<f32>> {
    stats.validate()?;
    let s = stats.height_scale();
    Ok(grid.data.iter().map(|h| h / s).collect())
}

pub fn normalize_component(values: &[f32], c: Component, stats: &NormStats) -> Result<Vec<f32>> {
    stats.validate()?;
    let s = stats.velocity_scale(c);
    Ok(values.iter().map(|x| x / s).collect())
}

pub fn denormalize_component(values: &[f32], c: Component, stats: &NormStats) -> Result<Vec<f32>> {
    stats.validate()?;
    let s = stats.velocity_scale(c);
    Ok(values.iter().map(|x| x * s).collect())
}
