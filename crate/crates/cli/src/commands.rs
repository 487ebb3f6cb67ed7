//! Command-line definitions and their implementations.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use urbanwind::evalharness::{
    comfort, dataset_stats, density_correlation, density_study, evaluate, size_study, EvalReport, StudyConfig,
    StudyRunner, COMFORT_THRESHOLD,
};
use urbanwind::flowsim::FlowConfig;
use urbanwind::geomodel::{
    height_histogram, load_city, sample_dataset, save_city, synth::synth_city, synth::SynthCityConfig, SamplerConfig,
};
use urbanwind::interface::dataset::{simulate_dataset, Dataset, Partition, SplitSpec, TileSet};
use urbanwind::interface::field::write_field;
use urbanwind::interface::wire::{rasterize_response, surrogate_response, PredictRequest, RasterizeRequest};
use urbanwind::interface::{read_bytes, to_pretty_json, write_bytes};
use urbanwind::raster::{Component, Direction, HeightGrid};
use urbanwind::registry::{build_predictor, Predictor, PredictorArgs};
use urbanwind::surrogate::{train_on_dataset, ModelBundle, TrainConfig, UNetSpec};
use urbanwind::{Error, Result};

use crate::service;

pub const CITY_FILE: &str = "city.json";

#[derive(Debug, Parser)]
#[command(name = "urbanwind", version, about = "Urban pedestrian-wind surrogate toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate a city model, writing it and a summary to a directory.
    Ingest {
        #[arg(long)]
        city: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic city model.
    SynthCity {
        #[arg(long, default_value_t = 3000)]
        buildings: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample square tiles from a city into a new dataset directory.
    Sample {
        /// City file, or a directory written by `ingest`.
        #[arg(long)]
        city: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000.0)]
        tile_m: f64,
        #[arg(long, default_value_t = 1)]
        min_buildings: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the flow oracle on every tile of a dataset and write its manifest.
    Simulate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[command(flatten)]
        flow: FlowArgs,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Train one velocity-component model.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        component: ComponentArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON file for the per-epoch history.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Predict the world-frame field of one layout.
    Predict {
        #[arg(long)]
        model_u: PathBuf,
        #[arg(long)]
        model_v: PathBuf,
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        direction: Direction,
        /// Field file (UFND) to write.
        #[arg(long)]
        out: PathBuf,
        /// Also write the full JSON response here.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, default_value_t = COMFORT_THRESHOLD)]
        threshold: f64,
    },
    /// Evaluate a predictor on the test partition.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        /// Registry name: unet, oracle, zero or mean.
        #[arg(long, default_value = "unet")]
        predictor: String,
        /// Directory with u-<seed>.ufnm and v-<seed>.ufnm (unet only).
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test error against training-set size.
    SizeStudy {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "25,50,100,200")]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random versus densest training subsets.
    DensityStudy {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "50,100")]
        sizes: Vec<usize>,
        /// Registry name of the dense selector.
        #[arg(long, default_value = "densest-count")]
        dense: String,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Spearman correlation of per-layout error with building count.
    Correlate {
        #[arg(long)]
        dataset: PathBuf,
        /// Report written by `evaluate`.
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Comfort masks of one layout for several directions.
    Comfort {
        #[arg(long)]
        model_u: PathBuf,
        #[arg(long)]
        model_v: PathBuf,
        #[arg(long)]
        layout: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "N,E,S,W")]
        directions: Vec<Direction>,
        #[arg(long, default_value_t = COMFORT_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Velocity statistics of a dataset partition.
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "train")]
        partition: PartitionArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve predictions over HTTP from a directory holding u.ufnm and v.ufnm.
    Serve {
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[command(flatten)]
        flow: FlowArgs,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ComponentArg {
    U,
    V,
}

impl From<ComponentArg> for Component {
    fn from(c: ComponentArg) -> Self {
        match c {
            ComponentArg::U => Component::U,
            ComponentArg::V => Component::V,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PartitionArg {
    Train,
    Validation,
    Test,
}

impl From<PartitionArg> for Partition {
    fn from(p: PartitionArg) -> Self {
        match p {
            PartitionArg::Train => Partition::Train,
            PartitionArg::Validation => Partition::Validation,
            PartitionArg::Test => Partition::Test,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FlowArgs {
    #[arg(long, default_value_t = FlowConfig::default().inflow_speed)]
    pub inflow: f64,
    #[arg(long, default_value_t = FlowConfig::default().effective_viscosity)]
    pub viscosity: f64,
    #[arg(long, default_value_t = FlowConfig::default().padding_fraction)]
    pub padding: f64,
    #[arg(long, default_value_t = FlowConfig::default().convergence_tol)]
    pub tol: f64,
    #[arg(long, default_value_t = FlowConfig::default().max_iterations)]
    pub max_iterations: usize,
}

impl FlowArgs {
    pub fn config(&self) -> FlowConfig {
        FlowConfig {
            inflow_speed: self.inflow,
            effective_viscosity: self.viscosity,
            padding_fraction: self.padding,
            convergence_tol: self.tol,
            max_iterations: self.max_iterations,
            ..FlowConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    #[arg(long = "train-layouts", default_value_t = 200)]
    pub train: usize,
    #[arg(long = "validation-layouts", default_value_t = 20)]
    pub validation: usize,
    #[arg(long = "test-layouts", default_value_t = 20)]
    pub test: usize,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long, default_value_t = 16)]
    pub base_channels: usize,
    #[arg(long, default_value_t = 5)]
    pub kernel: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 200)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 25)]
    pub early_stop: usize,
    #[arg(long, default_value_t = 10)]
    pub plateau_patience: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub l1: f64,
}

impl TrainArgs {
    pub fn spec(&self) -> UNetSpec {
        UNetSpec {
            depth: self.depth,
            base_channels: self.base_channels,
            kernel: self.kernel,
            ..UNetSpec::default()
        }
    }

    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            initial_lr: self.lr,
            max_epochs: self.max_epochs,
            early_stop_patience: self.early_stop,
            plateau_patience: self.plateau_patience,
            l1_lambda: self.l1,
            ..TrainConfig::default()
        }
    }

    fn study(&self, seeds: Vec<u64>) -> StudyConfig {
        StudyConfig {
            spec: self.spec(),
            train: self.config(),
            seeds,
            memoize: true,
        }
    }
}

/// A layout to predict: explicit heights, or buildings to rasterize.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayoutFile {
    Heights {
        heights: Vec<Vec<f64>>,
        #[serde(default)]
        cell_size: Option<f64>,
    },
    Buildings(RasterizeRequest),
}

impl LayoutFile {
    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_slice(&read_bytes(path)?)
            .map_err(|e| Error::Parse(format!("layout file {}: {e}", path.display())))
    }

    pub fn request(&self, direction: Direction, threshold: f64) -> Result<PredictRequest> {
        let (heights, cell_size) = match self {
            LayoutFile::Heights { heights, cell_size } => (heights.clone(), *cell_size),
            LayoutFile::Buildings(r) => {
                let raster = rasterize_response(r)?;
                let rows = raster.heights.iter().map(|row| row.iter().map(|&h| h as f64).collect()).collect();
                (rows, Some(raster.cell_size))
            }
        };
        Ok(PredictRequest {
            heights,
            direction,
            include_mask: true,
            threshold,
            cell_size,
        })
    }
}

fn load_pair(u: &Path, v: &Path) -> Result<(ModelBundle, ModelBundle)> {
    Ok((ModelBundle::load(u)?, ModelBundle::load(v)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, &to_pretty_json(value))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn city_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(CITY_FILE)
    } else {
        p.to_path_buf()
    }
}

pub fn model_file(dir: &Path, c: Component, seed: u64) -> PathBuf {
    dir.join(format!("{}-{seed}.ufnm", c.name().to_lowercase()))
}

#[derive(Debug, Serialize)]
struct CitySummary {
    buildings: usize,
    total_footprint_m2: f64,
    height_histogram: urbanwind::geomodel::Histogram,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { city, out } => {
            let model = load_city(&city)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            save_city(&model, out.join(CITY_FILE))?;
            let summary = CitySummary {
                buildings: model.len(),
                total_footprint_m2: model.footprints.iter().map(|f| f.area()).sum(),
                height_histogram: height_histogram(&model, 10.0)?,
            };
            write_json(&out.join("summary.json"), &summary)
        }
        Command::SynthCity { buildings, seed, out } => {
            let city = synth_city(&SynthCityConfig {
                buildings,
                seed,
                ..Default::default()
            })?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            save_city(&city, &out)?;
            log::info!("wrote {} buildings to {}", city.len(), out.display());
            Ok(())
        }
        Command::Sample {
            city,
            n,
            seed,
            tile_m,
            min_buildings,
            out,
        } => {
            let model = load_city(city_path(&city))?;
            let sampler = SamplerConfig {
                side: tile_m,
                min_buildings,
                seed,
                ..Default::default()
            };
            let tiles = sample_dataset(&model, n, &sampler)?;
            TileSet::new(sampler, tiles).save(&out)
        }
        Command::Simulate {
            dataset,
            resolution,
            flow,
            split,
        } => {
            let split = SplitSpec {
                train: split.train,
                validation: split.validation,
                test: split.test,
                seed: split.split_seed,
            };
            let m = simulate_dataset(&dataset, resolution, &flow.config(), &split)?;
            log::info!("{} cases written, {} discarded", m.cases.len(), m.discarded.len());
            Ok(())
        }
        Command::Train {
            dataset,
            component,
            seed,
            train,
            out,
            history,
        } => {
            let ds = Dataset::open(&dataset)?;
            let cfg = TrainConfig {
                seed,
                component: component.into(),
                ..train.config()
            };
            let (bundle, hist) = train_on_dataset(&ds, train.spec(), &cfg)?;
            bundle.save(&out)?;
            log::info!(
                "saved {} after {} epochs (best val {:.4} m/s)",
                out.display(),
                hist.len(),
                bundle.training.validation_mae
            );
            match history {
                Some(h) => write_json(&h, &hist),
                None => Ok(()),
            }
        }
        Command::Predict {
            model_u,
            model_v,
            layout,
            direction,
            out,
            json,
            threshold,
        } => {
            let (u, v) = load_pair(&model_u, &model_v)?;
            let req = LayoutFile::load(&layout)?.request(direction, threshold)?;
            let resp = surrogate_response(&u, &v, &req)?;
            let cell = req.cell_size.unwrap_or(u.training.cell_size);
            write_field(&resp.field(cell)?, &out)?;
            match json {
                Some(j) => write_json(&j, &resp),
                None => Ok(()),
            }
        }
        Command::Evaluate {
            dataset,
            predictor,
            models,
            seeds,
            out,
        } => write_json(&out, &run_evaluate(&dataset, &predictor, models.as_deref(), &seeds)?),
        Command::SizeStudy {
            dataset,
            sizes,
            seeds,
            train,
            out,
        } => {
            let ds = Dataset::open(&dataset)?;
            let runner = StudyRunner::new(&ds, train.study(seeds))?;
            write_json(&out, &size_study(&runner, &sizes)?)
        }
        Command::DensityStudy {
            dataset,
            sizes,
            dense,
            seeds,
            train,
            out,
        } => {
            let ds = Dataset::open(&dataset)?;
            let runner = StudyRunner::new(&ds, train.study(seeds))?;
            write_json(&out, &density_study(&runner, &sizes, &dense)?)
        }
        Command::Correlate { dataset, report, out } => {
            let ds = Dataset::open(&dataset)?;
            let report: EvalReport = serde_json::from_slice(&read_bytes(&report)?)
                .map_err(|e| Error::Parse(format!("evaluation report: {e}")))?;
            if report.dataset_hash.as_deref().is_some_and(|h| h != ds.content_hash()) {
                return Err(Error::Integrity("report was computed on a different dataset".into()));
            }
            write_json(&out, &density_correlation(&report, |id| ds.tile(id))?)
        }
        Command::Comfort {
            model_u,
            model_v,
            layout,
            directions,
            threshold,
            out,
        } => {
            let (u, v) = load_pair(&model_u, &model_v)?;
            let req = LayoutFile::load(&layout)?.request(Direction::N, threshold)?;
            let grid: HeightGrid = req.to_grid(u.training.cell_size)?;
            write_json(&out, &comfort(&u, &v, &grid, &directions, threshold)?)
        }
        Command::Stats { dataset, partition, out } => {
            let ds = Dataset::open(&dataset)?;
            write_json(&out, &dataset_stats(&ds.partition(partition.into())?)?)
        }
        Command::Serve {
            models,
            host,
            port,
            flow,
        } => {
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
            runtime.block_on(service::serve(&format!("{host}:{port}"), models, flow.config()))
        }
    }
}

/// Evaluates a registry predictor on the test partition. Surrogates are
/// loaded per seed from `models`; other predictors run once.
pub fn run_evaluate(dataset: &Path, name: &str, models: Option<&Path>, seeds: &[u64]) -> Result<EvalReport> {
    let ds = Dataset::open(dataset)?;
    let flow = ds.manifest.flow.clone();
    let mut predictors: Vec<(Box<dyn Predictor>, Option<u64>)> = Vec::new();
    match name {
        "unet" => {
            let dir = models.ok_or_else(|| Error::Validation("--models is required for the unet predictor".into()))?;
            if seeds.is_empty() {
                return Err(Error::Validation("--seeds must list at least one seed".into()));
            }
            for &seed in seeds {
                let (u, v) = load_pair(&model_file(dir, Component::U, seed), &model_file(dir, Component::V, seed))?;
                for m in [&u, &v] {
                    if m.training.dataset_hash.as_deref().is_some_and(|h| h != ds.content_hash()) {
                        log::warn!("model seed {seed} was trained on a different dataset");
                    }
                }
                let args = PredictorArgs {
                    u_model: Some(u),
                    v_model: Some(v),
                    ..Default::default()
                };
                predictors.push((build_predictor(name, args)?, Some(seed)));
            }
        }
        _ => {
            let train_means = if name == "mean" {
                let s = dataset_stats(&ds.partition(Partition::Train)?)?;
                Some((s.u.mean, s.v.mean))
            } else {
                None
            };
            let args = PredictorArgs {
                flow,
                train_means,
                ..Default::default()
            };
            predictors.push((build_predictor(name, args)?, None));
        }
    }
    let test = ds.partition(Partition::Test)?;
    let refs: Vec<(&dyn Predictor, Option<u64>)> = predictors.iter().map(|(p, s)| (p.as_ref(), *s)).collect();
    evaluate(&refs, &test, Some(ds.content_hash().to_string()))
}
