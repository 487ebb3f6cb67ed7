#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use urbanwind::flowsim::FlowConfig;
use urbanwind::geomodel::{Footprint, SamplerConfig, Tile};
use urbanwind::interface::dataset::{simulate_dataset, Dataset, SplitSpec, TileSet};
use urbanwind::interface::sha256_hex;
use urbanwind::surrogate::{TrainConfig, UNetSpec};

/// Tiles with one to five random blocks, sized for a 1 km window.
pub fn random_tiles(n: usize, seed: u64) -> Vec<Tile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|id| {
            let count = rng.random_range(1..=5);
            let footprints = (0..count)
                .map(|_| {
                    let x = rng.random_range(50.0..750.0);
                    let y = rng.random_range(50.0..750.0);
                    let w = rng.random_range(60.0..200.0);
                    let d = rng.random_range(60.0..200.0);
                    let h = rng.random_range(5.0..80.0);
                    Footprint::new(vec![[x, y], [x + w, y], [x + w, y + d], [x, y + d]], h).unwrap()
                })
                .collect();
            Tile {
                id,
                origin: [0.0, 0.0],
                side: 1000.0,
                footprints,
            }
        })
        .collect()
}

/// Writes and opens a simulated dataset of random tiles at 16x16.
pub fn tiny_dataset(dir: &Path, split: SplitSpec) -> Dataset {
    let n = split.train + split.validation + split.test;
    TileSet::new(SamplerConfig::default(), random_tiles(n, 42)).save(dir).unwrap();
    let m = simulate_dataset(dir, 16, &FlowConfig::default(), &split).unwrap();
    assert!(m.discarded.is_empty(), "{:?}", m.discarded);
    Dataset::open(dir).unwrap()
}

pub fn tiny_spec() -> UNetSpec {
    UNetSpec {
        depth: 2,
        base_channels: 2,
        kernel: 3,
        ..UNetSpec::default()
    }
}

pub fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        ..TrainConfig::default()
    }
}

/// Hash over relative paths and contents of every file below `dir`.
pub fn dir_hash(dir: &Path) -> String {
    let mut files = Vec::new();
    collect(dir, &mut files);
    files.sort();
    let mut acc = Vec::new();
    for f in files {
        acc.extend_from_slice(f.strip_prefix(dir).unwrap().to_str().unwrap().as_bytes());
        acc.extend_from_slice(&std::fs::read(&f).unwrap());
    }
    sha256_hex(&acc)
}

fn collect(dir: &Path, out: &mut Vec<std::path::PathBuf>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            collect(&p, out);
        } else {
            out.push(p);
        }
    }
}
