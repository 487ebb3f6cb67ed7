#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use urbanwind::geomodel::{Footprint, Tile};
use urbanwind::raster::{rasterize, Component, HeightGrid, NormStats};
use urbanwind::surrogate::{ModelBundle, TrainingMeta, UNet, UNetSpec};
use urbanwind_cli::service::Models;

pub const W: usize = 64;
pub const SIDE: f64 = 1000.0;

pub fn random_bundle(component: Component, seed: u64) -> ModelBundle {
    let spec = UNetSpec {
        depth: 3,
        base_channels: 4,
        kernel: 3,
        ..UNetSpec::default()
    };
    let net = UNet::<f32>::build(spec, seed).unwrap();
    let norm = NormStats {
        h_max: 120.0,
        v_scale_u: 3.0,
        v_scale_v: 3.5,
    };
    let meta = TrainingMeta {
        seed,
        epochs_run: 0,
        best_epoch: 0,
        validation_mae: 0.0,
        train_layouts: 0,
        resolution: W,
        cell_size: SIDE / W as f64,
        dataset_hash: None,
    };
    ModelBundle::new(net, component, norm, meta).unwrap()
}

pub fn random_models(seed: u64) -> Models {
    Models {
        u: random_bundle(Component::U, seed),
        v: random_bundle(Component::V, seed + 1),
    }
}

/// A few axis-aligned blocks at random positions.
pub fn random_layout(rng: &mut ChaCha8Rng) -> HeightGrid {
    let n = rng.random_range(1..8);
    let footprints = (0..n)
        .map(|_| {
            let x = rng.random_range(20.0..800.0);
            let y = rng.random_range(20.0..800.0);
            let w = rng.random_range(30.0..150.0);
            let d = rng.random_range(30.0..150.0);
            let h = rng.random_range(5.0..110.0);
            Footprint::new(vec![[x, y], [x + w, y], [x + w, y + d], [x, y + d]], h).unwrap()
        })
        .collect();
    let tile = Tile {
        id: 0,
        origin: [0.0, 0.0],
        side: SIDE,
        footprints,
    };
    rasterize(&tile, W)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
