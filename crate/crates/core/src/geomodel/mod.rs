//! Building footprints, city models and square tile sampling.
//!
//! A [`CityModel`] is a flat list of extruded footprints (flat roofs). Tiles
//! are square windows of the city that keep only buildings lying wholly inside
//! the window; anything touching or crossing the window edge is dropped.

pub mod geometry;
pub mod synth;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use geometry::{polygon_is_simple, signed_area};

pub type Point = [f64; 2];

/// Axis-aligned rectangle in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Point,
    pub max: Point,
}

impl Bounds {
    pub const EMPTY: Bounds = Bounds {
        min: [0.0, 0.0],
        max: [0.0, 0.0],
    };

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    fn of_points<'a>(points: impl Iterator<Item = &'a Point>) -> Option<Bounds> {
        let mut it = points.peekable();
        it.peek()?;
        let mut b = Bounds {
            min: [f64::INFINITY; 2],
            max: [f64::NEG_INFINITY; 2],
        };
        for p in it {
            b.min[0] = b.min[0].min(p[0]);
            b.min[1] = b.min[1].min(p[1]);
            b.max[0] = b.max[0].max(p[0]);
            b.max[1] = b.max[1].max(p[1]);
        }
        Some(b)
    }
}

/// Extruded building footprint: a simple counterclockwise polygon with a roof height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub vertices: Vec<Point>,
    pub height: f64,
}

impl Footprint {
    /// Validates the footprint and reorients clockwise input to counterclockwise.
    pub fn new(mut vertices: Vec<Point>, height: f64) -> Result<Self> {
        if vertices.len() >= 2 && vertices.first() == vertices.last() {
            // closed rings repeat the first vertex
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(Error::Validation(format!(
                "footprint needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("footprint has non-finite coordinates".into()));
        }
        if !(height.is_finite() && height > 0.0) {
            return Err(Error::Validation(format!(
                "building height must be positive, got {height}"
            )));
        }
        if !polygon_is_simple(&vertices) {
            return Err(Error::Validation("footprint polygon is self-intersecting".into()));
        }
        let area = signed_area(&vertices);
        if area == 0.0 {
            return Err(Error::Validation("footprint polygon has zero area".into()));
        }
        if area < 0.0 {
            vertices.reverse();
        }
        Ok(Footprint { vertices, height })
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).abs()
    }

    pub fn bounds(&self) -> Bounds {
        Bounds::of_points(self.vertices.iter()).expect("footprint has vertices")
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Footprint {
        Footprint {
            vertices: self.vertices.iter().map(|p| [p[0] + dx, p[1] + dy]).collect(),
            height: self.height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityModel {
    pub footprints: Vec<Footprint>,
    pub bounds: Bounds,
}

impl CityModel {
    pub fn new(footprints: Vec<Footprint>) -> Self {
        let bounds =
            Bounds::of_points(footprints.iter().flat_map(|f| f.vertices.iter())).unwrap_or(Bounds::EMPTY);
        CityModel { footprints, bounds }
    }

    pub fn len(&self) -> usize {
        self.footprints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.footprints.is_empty()
    }
}

/// A sampled square layout. Footprints are in tile-local coordinates with the
/// origin at the south-west corner and `y` pointing north.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub id: usize,
    /// World position of the south-west corner.
    pub origin: Point,
    pub side: f64,
    pub footprints: Vec<Footprint>,
}

impl Tile {
    pub fn building_count(&self) -> usize {
        self.footprints.len()
    }

    pub fn built_area(&self) -> f64 {
        self.footprints.iter().map(Footprint::area).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub side: f64,
    pub min_buildings: usize,
    pub seed: u64,
    pub max_attempts_per_tile: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            side: 1000.0,
            min_buildings: 1,
            seed: 0,
            max_attempts_per_tile: 1000,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.side.is_finite() && self.side > 0.0) {
            return Err(Error::Validation(format!("tile side must be positive, got {}", self.side)));
        }
        if self.min_buildings < 1 {
            return Err(Error::Validation("min_buildings must be at least 1".into()));
        }
        if self.max_attempts_per_tile < 1 {
            return Err(Error::Validation("max_attempts_per_tile must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CityFile {
    format: String,
    version: u32,
    buildings: Vec<BuildingRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BuildingRecord {
    vertices: Vec<Point>,
    height: f64,
}

pub const CITY_FORMAT: &str = "urbanwind-city";
pub const CITY_VERSION: u32 = 1;

pub fn parse_city(text: &str) -> Result<CityModel> {
    let file: CityFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if file.format != CITY_FORMAT {
        return Err(Error::Parse(format!("expected format '{CITY_FORMAT}', got '{}'", file.format)));
    }
    if file.version != CITY_VERSION {
        return Err(Error::Parse(format!("unsupported city file version {}", file.version)));
    }
    let footprints = file
        .buildings
        .into_iter()
        .enumerate()
        .map(|(i, b)| {
            Footprint::new(b.vertices, b.height).map_err(|e| match e {
                Error::Validation(m) => Error::Validation(format!("building {i}: {m}")),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CityModel::new(footprints))
}

pub fn load_city(path: impl AsRef<Path>) -> Result<CityModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_city(&text)
}

pub fn city_to_string(city: &CityModel) -> String {
    let file = CityFile {
        format: CITY_FORMAT.into(),
        version: CITY_VERSION,
        buildings: city
            .footprints
            .iter()
            .map(|f| BuildingRecord {
                vertices: f.vertices.clone(),
                height: f.height,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("city serializes")
}

pub fn save_city(city: &CityModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, city_to_string(city)).map_err(|e| Error::io(path, e))
}

/// Returns true when every vertex lies strictly inside the open square.
pub fn footprint_inside_square(f: &Footprint, min: Point, side: f64) -> bool {
    f.vertices.iter().all(|p| {
        p[0] > min[0] && p[0] < min[0] + side && p[1] > min[1] && p[1] < min[1] + side
    })
}

/// Cuts the square with south-west corner `min` out of the city.
pub fn extract_tile(city: &CityModel, id: usize, min: Point, side: f64) -> Tile {
    let footprints = city
        .footprints
        .iter()
        .filter(|f| footprint_inside_square(f, min, side))
        .map(|f| f.translated(-min[0], -min[1]))
        .collect();
    Tile {
        id,
        origin: min,
        side,
        footprints,
    }
}

/// Draws one tile center uniformly within the city bounds. `None` means the
/// draw was rejected for holding fewer than `min_buildings` buildings.
pub fn sample_tile<R: Rng + ?Sized>(
    city: &CityModel,
    config: &SamplerConfig,
    rng: &mut R,
) -> Option<Tile> {
    let b = city.bounds;
    let cx = b.min[0] + rng.random::<f64>() * b.width();
    let cy = b.min[1] + rng.random::<f64>() * b.height();
    let half = config.side / 2.0;
    let tile = extract_tile(city, 0, [cx - half, cy - half], config.side);
    (tile.building_count() >= config.min_buildings).then_some(tile)
}

pub fn sample_dataset(city: &CityModel, n: usize, config: &SamplerConfig) -> Result<Vec<Tile>> {
    config.validate()?;
    if n < 1 {
        return Err(Error::Validation("requested tile count must be at least 1".into()));
    }
    if city.bounds.width() < config.side || city.bounds.height() < config.side {
        return Err(Error::Validation(format!(
            "city bounds {:.1} x {:.1} m are smaller than the {:.1} m tile",
            city.bounds.width(),
            city.bounds.height(),
            config.side
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tiles = Vec::with_capacity(n);
    while tiles.len() < n {
        let mut accepted = None;
        for _ in 0..config.max_attempts_per_tile {
            if let Some(t) = sample_tile(city, config, &mut rng) {
                accepted = Some(t);
                break;
            }
        }
        match accepted {
            Some(mut t) => {
                t.id = tiles.len();
                tiles.push(t);
            }
            None => {
                return Err(Error::BudgetExhausted {
                    accepted: tiles.len(),
                    requested: n,
                })
            }
        }
    }
    Ok(tiles)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// `counts.len() + 1` edges starting at zero.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn height_histogram(city: &CityModel, bin_width: f64) -> Result<Histogram> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::Validation(format!("bin width must be positive, got {bin_width}")));
    }
    let Some(max) = city.footprints.iter().map(|f| f.height).reduce(f64::max) else {
        return Ok(Histogram {
            bin_width,
            edges: Vec::new(),
            counts: Vec::new(),
        });
    };
    let nbins = (max / bin_width).floor() as usize + 1;
    let mut counts = vec![0usize; nbins];
    for f in &city.footprints {
        let bin = ((f.height / bin_width).floor() as usize).min(nbins - 1);
        counts[bin] += 1;
    }
    let edges = (0..=nbins).map(|i| i as f64 * bin_width).collect();
    Ok(Histogram {
        bin_width,
        edges,
        counts,
    })
}
