use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::raster::{Direction, HeightGrid, VelocityField};
use crate::surrogate::{predict_directional, ModelBundle};

/// Default low-wind comfort threshold in m/s.
pub const COMFORT_THRESHOLD: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComfortResult {
    pub direction: Direction,
    pub threshold: f64,
    pub magnitude: Vec<f32>,
    /// True where a pedestrian cell reaches the threshold; always false on buildings.
    pub mask: Vec<bool>,
    /// Share of non-building cells in the mask (0 when every cell is a building).
    pub fraction: f64,
}

/// Exceedance mask and comfort fraction of a world-frame field.
pub fn comfort_of_field(field: &VelocityField, grid: &HeightGrid, direction: Direction, threshold: f64) -> ComfortResult {
    let magnitude = field.speed();
    let mut open = 0usize;
    let mut hits = 0usize;
    let mask = magnitude
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if grid.is_building(i) {
                return false;
            }
            open += 1;
            let ok = *m as f64 >= threshold;
            hits += ok as usize;
            ok
        })
        .collect();
    ComfortResult {
        direction,
        threshold,
        magnitude,
        mask,
        fraction: if open == 0 { 0.0 } else { hits as f64 / open as f64 },
    }
}

/// Predicts each direction and derives its comfort mask.
pub fn comfort(
    u_model: &ModelBundle,
    v_model: &ModelBundle,
    grid: &HeightGrid,
    directions: &[Direction],
    threshold: f64,
) -> Result<Vec<ComfortResult>> {
    directions
        .iter()
        .map(|&d| {
            let field = predict_directional(u_model, v_model, grid, d)?;
            Ok(comfort_of_field(&field, grid, d, threshold))
        })
        .collect()
}
