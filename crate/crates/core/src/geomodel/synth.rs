//! Synthetic city generator: clustered housing estates of rotated rectangular
//! slab blocks with right-skewed (log-normal) heights.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::{CityModel, Footprint};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCityConfig {
    pub buildings: usize,
    pub seed: u64,
    /// Fraction of buildings placed inside estates; the rest are scattered.
    pub estate_fraction: f64,
    /// Mean number of buildings per estate.
    pub buildings_per_estate: f64,
    pub estate_radius_m: (f64, f64),
    pub slab_length_m: (f64, f64),
    pub slab_depth_m: (f64, f64),
    pub median_height_m: f64,
    pub height_sigma: f64,
    pub height_range_m: (f64, f64),
    /// Share of low podium buildings drawn uniformly from `podium_height_m`.
    pub podium_fraction: f64,
    pub podium_height_m: (f64, f64),
    /// Minimum gap between bounding circles of neighboring buildings.
    pub clearance_m: f64,
}

impl Default for SynthCityConfig {
    fn default() -> Self {
        SynthCityConfig {
            buildings: 3000,
            seed: 0,
            estate_fraction: 0.85,
            buildings_per_estate: 40.0,
            estate_radius_m: (250.0, 500.0),
            slab_length_m: (30.0, 90.0),
            slab_depth_m: (18.0, 28.0),
            median_height_m: 36.0,
            height_sigma: 0.5,
            height_range_m: (4.0, 140.0),
            podium_fraction: 0.15,
            podium_height_m: (4.0, 12.0),
            clearance_m: 10.0,
        }
    }
}

struct Estate {
    center: [f64; 2],
    radius: f64,
    orientation: f64,
}

/// Spatial hash of placed bounding circles.
struct Occupancy {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<([f64; 2], f64)>>,
}

impl Occupancy {
    fn key(&self, p: [f64; 2]) -> (i64, i64) {
        ((p[0] / self.cell).floor() as i64, (p[1] / self.cell).floor() as i64)
    }

    fn is_free(&self, c: [f64; 2], r: f64, clearance: f64) -> bool {
        let (kx, ky) = self.key(c);
        for dx in -2..=2 {
            for dy in -2..=2 {
                if let Some(items) = self.buckets.get(&(kx + dx, ky + dy)) {
                    for (o, orad) in items {
                        let d = ((o[0] - c[0]).powi(2) + (o[1] - c[1]).powi(2)).sqrt();
                        if d < r + orad + clearance {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    fn insert(&mut self, c: [f64; 2], r: f64) {
        let k = self.key(c);
        self.buckets.entry(k).or_default().push((c, r));
    }
}

fn rectangle(center: [f64; 2], length: f64, depth: f64, angle: f64) -> Vec<[f64; 2]> {
    let (s, c) = angle.sin_cos();
    let (hl, hd) = (length / 2.0, depth / 2.0);
    [[-hl, -hd], [hl, -hd], [hl, hd], [-hl, hd]]
        .iter()
        .map(|[x, y]| [center[0] + x * c - y * s, center[1] + x * s + y * c])
        .collect()
}

fn uniform<R: Rng>(rng: &mut R, range: (f64, f64)) -> f64 {
    range.0 + rng.random::<f64>() * (range.1 - range.0)
}

pub fn synth_city(config: &SynthCityConfig) -> Result<CityModel> {
    if config.buildings == 0 {
        return Ok(CityModel::new(Vec::new()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_estates = ((config.buildings as f64 * config.estate_fraction) / config.buildings_per_estate)
        .ceil()
        .max(1.0) as usize;
    // estates cover roughly 40% of the city area
    let mean_r = (config.estate_radius_m.0 + config.estate_radius_m.1) / 2.0;
    let estate_area = n_estates as f64 * std::f64::consts::PI * mean_r * mean_r;
    let extent = (estate_area / 0.4).sqrt().max(2500.0);

    let estates: Vec<Estate> = (0..n_estates)
        .map(|_| Estate {
            center: [uniform(&mut rng, (0.0, extent)), uniform(&mut rng, (0.0, extent))],
            radius: uniform(&mut rng, config.estate_radius_m),
            orientation: rng.random::<f64>() * std::f64::consts::PI,
        })
        .collect();

    let heights = LogNormal::new(config.median_height_m.ln(), config.height_sigma)
        .map_err(|e| Error::Validation(e.to_string()))?;
    let jitter = Normal::new(0.0, 0.08).expect("valid normal");
    let mut occupancy = Occupancy {
        cell: 100.0,
        buckets: HashMap::new(),
    };
    let mut footprints = Vec::with_capacity(config.buildings);
    let budget = config.buildings * 200;
    let mut attempts = 0;
    while footprints.len() < config.buildings {
        attempts += 1;
        if attempts > budget {
            return Err(Error::Validation(format!(
                "could not place {} buildings without overlap (placed {})",
                config.buildings,
                footprints.len()
            )));
        }
        let length = uniform(&mut rng, config.slab_length_m);
        let depth = uniform(&mut rng, config.slab_depth_m);
        let (center, angle) = if rng.random::<f64>() < config.estate_fraction {
            let e = &estates[rng.random_range(0..estates.len())];
            let spread = Normal::new(0.0, e.radius / 2.0).expect("valid normal");
            let c = [e.center[0] + spread.sample(&mut rng), e.center[1] + spread.sample(&mut rng)];
            let quarter = if rng.random::<bool>() { std::f64::consts::FRAC_PI_2 } else { 0.0 };
            (c, e.orientation + quarter + jitter.sample(&mut rng))
        } else {
            let c = [uniform(&mut rng, (0.0, extent)), uniform(&mut rng, (0.0, extent))];
            (c, rng.random::<f64>() * std::f64::consts::PI)
        };
        if !(0.0..=extent).contains(&center[0]) || !(0.0..=extent).contains(&center[1]) {
            continue;
        }
        let radius = 0.5 * (length * length + depth * depth).sqrt();
        if !occupancy.is_free(center, radius, config.clearance_m) {
            continue;
        }
        let height = if rng.random::<f64>() < config.podium_fraction {
            uniform(&mut rng, config.podium_height_m)
        } else {
            heights.sample(&mut rng).clamp(config.height_range_m.0, config.height_range_m.1)
        };
        occupancy.insert(center, radius);
        let height = (height * 10.0).round() / 10.0;
        footprints.push(Footprint::new(rectangle(center, length, depth, angle), height)?);
    }
    Ok(CityModel::new(footprints))
}
