//! Dataset directories.
//!
//! ```text
//! <dir>/tiles.json      sampled layouts (written by `sample`)
//! <dir>/manifest.json   resolution, flow config, per-case hashes, split
//! <dir>/fields/*.ufnd   canonical-frame oracle fields, one per (tile, direction)
//! ```
//!
//! Height grids are not stored: they are re-rasterized from the hashed tile
//! file, which is cheap and exact.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::field::{decode_field, encode_field};
use super::{read_bytes, sha256_hex, to_pretty_json, write_bytes};
use crate::error::{Error, Result};
use crate::flowsim::{generate_fields, FlowConfig};
use crate::geomodel::{SamplerConfig, Tile};
use crate::raster::{canonicalize, rasterize, validate_resolution, Direction, HeightGrid, VelocityField};

pub const TILES_FILE: &str = "tiles.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FIELDS_DIR: &str = "fields";
pub const TILES_FORMAT: &str = "urbanwind-tiles";
pub const DATASET_FORMAT: &str = "urbanwind-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileSet {
    pub format: String,
    pub version: u32,
    pub sampler: SamplerConfig,
    pub tiles: Vec<Tile>,
}

impl TileSet {
    pub fn new(sampler: SamplerConfig, tiles: Vec<Tile>) -> Self {
        TileSet {
            format: TILES_FORMAT.into(),
            version: DATASET_VERSION,
            sampler,
            tiles,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        to_pretty_json(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let set: TileSet = serde_json::from_slice(bytes).map_err(|e| Error::Parse(format!("tile file: {e}")))?;
        if set.format != TILES_FORMAT {
            return Err(Error::Format(format!("expected format '{TILES_FORMAT}', got '{}'", set.format)));
        }
        if set.version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported tile file version {}", set.version)));
        }
        Ok(set)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_bytes(&dir.join(TILES_FILE), &self.to_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(&dir.join(TILES_FILE))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

/// Layout counts per partition; the split is by layout, so each layout's four
/// directions land in the same partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 200,
            validation: 20,
            test: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitAssignment {
    pub fn ids(&self, p: Partition) -> &[usize] {
        match p {
            Partition::Train => &self.train,
            Partition::Validation => &self.validation,
            Partition::Test => &self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.train.iter().chain(&self.validation).chain(&self.test) {
            if !seen.insert(*id) {
                return Err(Error::Validation(format!("layout {id} appears in more than one partition")));
            }
        }
        Ok(())
    }
}

/// Seeded shuffle of the eligible layout ids. Test layouts are drawn first,
/// then validation, then train; each partition is stored sorted.
pub fn assign_split(eligible: &[usize], spec: &SplitSpec) -> Result<SplitAssignment> {
    let need = spec.train + spec.validation + spec.test;
    if need > eligible.len() {
        return Err(Error::Validation(format!(
            "split needs {need} layouts but only {} are available",
            eligible.len()
        )));
    }
    let mut ids = eligible.to_vec();
    ids.sort_unstable();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let take = |n: usize, from: &mut Vec<usize>| {
        let mut part: Vec<usize> = from.drain(..n).collect();
        part.sort_unstable();
        part
    };
    let test = take(spec.test, &mut ids);
    let validation = take(spec.validation, &mut ids);
    let train = take(spec.train, &mut ids);
    Ok(SplitAssignment { train, validation, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub tile: usize,
    pub direction: Direction,
    pub file: String,
    pub sha256: String,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscardRecord {
    pub tile: usize,
    pub direction: Direction,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub tile_count: usize,
    pub resolution: usize,
    pub cell_size: f64,
    pub directions_per_tile: usize,
    pub flow: FlowConfig,
    pub tiles_sha256: String,
    pub cases: Vec<CaseRecord>,
    pub discarded: Vec<DiscardRecord>,
    pub split: SplitAssignment,
}

impl DatasetManifest {
    pub fn to_bytes(&self) -> Vec<u8> {
        to_pretty_json(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let m: DatasetManifest =
            serde_json::from_slice(bytes).map_err(|e| Error::Parse(format!("dataset manifest: {e}")))?;
        if m.format != DATASET_FORMAT {
            return Err(Error::Format(format!("expected format '{DATASET_FORMAT}', got '{}'", m.format)));
        }
        if m.version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {}", m.version)));
        }
        validate_resolution(m.resolution)?;
        m.split.validate()?;
        Ok(m)
    }
}

/// A canonical-frame training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tile_id: usize,
    pub direction: Direction,
    pub grid: HeightGrid,
    pub field: VelocityField,
}

fn field_file_name(tile: usize, dir: Direction) -> String {
    format!("tile{tile:05}_{dir}.ufnd")
}

/// Runs the oracle for every tile and writes fields and manifest into `dir`,
/// next to the existing tile file. Layouts with any failed direction are
/// dropped entirely so every split layout carries all four directions.
pub fn simulate_dataset(dir: &Path, resolution: usize, flow: &FlowConfig, split: &SplitSpec) -> Result<DatasetManifest> {
    validate_resolution(resolution)?;
    flow.validate()?;
    let tiles_bytes = read_bytes(&dir.join(TILES_FILE))?;
    let set = TileSet::from_bytes(&tiles_bytes)?;
    let (cases, failures) = generate_fields(&set.tiles, resolution, flow);

    let failed: BTreeSet<usize> = failures.iter().map(|f| f.tile_id).collect();
    let mut discarded: Vec<DiscardRecord> = failures
        .into_iter()
        .map(|f| DiscardRecord {
            tile: f.tile_id,
            direction: f.direction,
            reason: f.reason,
        })
        .collect();

    let fields_dir = dir.join(FIELDS_DIR);
    std::fs::create_dir_all(&fields_dir).map_err(|e| Error::io(&fields_dir, e))?;
    let mut records = Vec::new();
    for case in cases {
        if failed.contains(&case.tile_id) {
            discarded.push(DiscardRecord {
                tile: case.tile_id,
                direction: case.direction,
                reason: "another direction of this layout failed".into(),
            });
            continue;
        }
        let name = field_file_name(case.tile_id, case.direction);
        let bytes = encode_field(&case.field);
        write_bytes(&fields_dir.join(&name), &bytes)?;
        records.push(CaseRecord {
            tile: case.tile_id,
            direction: case.direction,
            file: format!("{FIELDS_DIR}/{name}"),
            sha256: sha256_hex(&bytes),
            iterations: case.report.iterations,
            residual: case.report.residual,
        });
    }
    discarded.sort_by_key(|d| (d.tile, d.direction));

    let eligible: Vec<usize> = set
        .tiles
        .iter()
        .map(|t| t.id)
        .filter(|id| !failed.contains(id))
        .collect();
    let side = set.tiles.first().map(|t| t.side).unwrap_or(set.sampler.side);
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        tile_count: set.tiles.len(),
        resolution,
        cell_size: side / resolution as f64,
        directions_per_tile: Direction::ALL.len(),
        flow: flow.clone(),
        tiles_sha256: sha256_hex(&tiles_bytes),
        cases: records,
        discarded,
        split: assign_split(&eligible, split)?,
    };
    write_bytes(&dir.join(MANIFEST_FILE), &manifest.to_bytes())?;
    Ok(manifest)
}

/// An opened dataset. Field files are read (and hash-checked) per partition on
/// demand; every partition read is recorded so tests can prove which data a
/// consumer touched.
#[derive(Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub tiles: Vec<Tile>,
    manifest_sha256: String,
    by_id: BTreeMap<usize, usize>,
    access_log: Mutex<Vec<Partition>>,
}

impl Dataset {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let manifest_bytes = read_bytes(&dir.join(MANIFEST_FILE))?;
        let manifest = DatasetManifest::from_bytes(&manifest_bytes)?;
        let tiles_bytes = read_bytes(&dir.join(TILES_FILE))?;
        let actual = sha256_hex(&tiles_bytes);
        if actual != manifest.tiles_sha256 {
            return Err(Error::Integrity(format!(
                "{TILES_FILE} hash mismatch: manifest {}, file {actual}",
                manifest.tiles_sha256
            )));
        }
        let tiles = TileSet::from_bytes(&tiles_bytes)?.tiles;
        let by_id = tiles.iter().enumerate().map(|(i, t)| (t.id, i)).collect::<BTreeMap<_, _>>();
        for id in manifest.split.train.iter().chain(&manifest.split.validation).chain(&manifest.split.test) {
            if !by_id.contains_key(id) {
                return Err(Error::Integrity(format!("split references unknown layout {id}")));
            }
        }
        Ok(Dataset {
            dir,
            manifest,
            tiles,
            manifest_sha256: sha256_hex(&manifest_bytes),
            by_id,
            access_log: Mutex::new(Vec::new()),
        })
    }

    /// Hash of the manifest file, which transitively covers every field and the tile file.
    pub fn content_hash(&self) -> &str {
        &self.manifest_sha256
    }

    pub fn tile(&self, id: usize) -> Result<&Tile> {
        self.by_id
            .get(&id)
            .map(|i| &self.tiles[*i])
            .ok_or_else(|| Error::Validation(format!("unknown layout id {id}")))
    }

    pub fn partition_ids(&self, p: Partition) -> &[usize] {
        self.manifest.split.ids(p)
    }

    pub fn access_log(&self) -> Vec<Partition> {
        self.access_log.lock().expect("access log poisoned").clone()
    }

    pub fn height_grid(&self, tile_id: usize, dir: Direction) -> Result<HeightGrid> {
        Ok(canonicalize(&rasterize(self.tile(tile_id)?, self.manifest.resolution), dir))
    }

    fn read_case(&self, record: &CaseRecord) -> Result<Sample> {
        let path = self.dir.join(&record.file);
        let bytes = read_bytes(&path)?;
        let actual = sha256_hex(&bytes);
        if actual != record.sha256 {
            return Err(Error::Integrity(format!(
                "{} hash mismatch: manifest {}, file {actual}",
                record.file, record.sha256
            )));
        }
        let field = decode_field(&bytes, self.manifest.cell_size)?;
        if field.resolution != self.manifest.resolution {
            return Err(Error::Integrity(format!(
                "{} has resolution {}, manifest says {}",
                record.file, field.resolution, self.manifest.resolution
            )));
        }
        Ok(Sample {
            tile_id: record.tile,
            direction: record.direction,
            grid: self.height_grid(record.tile, record.direction)?,
            field,
        })
    }

    /// Samples of the given layouts (each with all stored directions), in
    /// ascending `(layout, direction)` order.
    pub fn samples_for(&self, ids: &[usize]) -> Result<Vec<Sample>> {
        let wanted: BTreeSet<usize> = ids.iter().copied().collect();
        let mut records: Vec<&CaseRecord> = self.manifest.cases.iter().filter(|c| wanted.contains(&c.tile)).collect();
        records.sort_by_key(|c| (c.tile, c.direction));
        records.into_iter().map(|r| self.read_case(r)).collect()
    }

    pub fn partition(&self, p: Partition) -> Result<Vec<Sample>> {
        self.access_log.lock().expect("access log poisoned").push(p);
        self.samples_for(self.partition_ids(p))
    }

    /// Every stored case, split membership ignored.
    pub fn all_samples(&self) -> Result<Vec<Sample>> {
        let all: Vec<usize> = self.tiles.iter().map(|t| t.id).collect();
        let mut log = self.access_log.lock().expect("access log poisoned");
        log.extend([Partition::Train, Partition::Validation, Partition::Test]);
        drop(log);
        self.samples_for(&all)
    }

    /// Copies the dataset to `dir` by re-encoding every file from its loaded form.
    pub fn save_to(&self, dir: &Path) -> Result<()> {
        TileSet::from_bytes(&read_bytes(&self.dir.join(TILES_FILE))?)?.save(dir)?;
        let fields = dir.join(FIELDS_DIR);
        std::fs::create_dir_all(&fields).map_err(|e| Error::io(&fields, e))?;
        for record in &self.manifest.cases {
            let sample = self.read_case(record)?;
            write_bytes(&dir.join(&record.file), &encode_field(&sample.field))?;
        }
        write_bytes(&dir.join(MANIFEST_FILE), &self.manifest.to_bytes())
    }

    /// Re-reads every field and checks its hash.
    pub fn verify(&self) -> Result<()> {
        for record in &self.manifest.cases {
            self.read_case(record)?;
        }
        Ok(())
    }
}
