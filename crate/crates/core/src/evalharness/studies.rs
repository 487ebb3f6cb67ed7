//! Training-set studies. All of them train through one [`StudyRunner`], which
//! memoizes trained models by `(layout subset, seed, component)` so that, for
//! example, the random-subset rows of the density study reuse the size-study
//! models instead of retraining identical jobs.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate, Aggregate, EvalReport};
use super::metrics::{log_linear_slope, mean_std, spearman};
use crate::error::{Error, Result};
use crate::geomodel::Tile;
use crate::interface::dataset::{Dataset, Partition, Sample};
use crate::raster::Component;
use crate::registry::{build_selector, Predictor, SurrogatePredictor};
use crate::surrogate::{train, ModelBundle, TrainConfig, UNetSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub spec: UNetSpec,
    /// Template; `seed` and `component` are set per job.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub memoize: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            spec: UNetSpec::default(),
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2],
            memoize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct JobKey {
    ids: Vec<usize>,
    seed: u64,
    component: Component,
}

pub struct StudyRunner<'a> {
    ds: &'a Dataset,
    cfg: StudyConfig,
    train_samples: Vec<Sample>,
    val_samples: Vec<Sample>,
    test_samples: OnceLock<Vec<Sample>>,
    memo: Mutex<BTreeMap<JobKey, Arc<ModelBundle>>>,
    jobs_trained: Mutex<usize>,
}

impl<'a> StudyRunner<'a> {
    pub fn new(ds: &'a Dataset, cfg: StudyConfig) -> Result<Self> {
        if cfg.seeds.is_empty() {
            return Err(Error::Validation("studies need at least one seed".into()));
        }
        Ok(StudyRunner {
            ds,
            train_samples: ds.partition(Partition::Train)?,
            val_samples: ds.partition(Partition::Validation)?,
            cfg,
            test_samples: OnceLock::new(),
            memo: Mutex::new(BTreeMap::new()),
            jobs_trained: Mutex::new(0),
        })
    }

    pub fn config(&self) -> &StudyConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &Dataset {
        self.ds
    }

    /// Number of models actually trained so far (memo hits excluded).
    pub fn jobs_trained(&self) -> usize {
        *self.jobs_trained.lock().expect("counter poisoned")
    }

    pub fn train_pool(&self) -> Result<Vec<&'a Tile>> {
        self.ds.partition_ids(Partition::Train).iter().map(|id| self.ds.tile(*id)).collect()
    }

    pub fn test_samples(&self) -> Result<&[Sample]> {
        if let Some(t) = self.test_samples.get() {
            return Ok(t);
        }
        let loaded = self.ds.partition(Partition::Test)?;
        Ok(self.test_samples.get_or_init(|| loaded))
    }

    fn subset(&self, ids: &[usize]) -> Vec<Sample> {
        self.train_samples
            .iter()
            .filter(|s| ids.binary_search(&s.tile_id).is_ok())
            .cloned()
            .collect()
    }

    fn train_job(&self, key: &JobKey) -> Result<ModelBundle> {
        let samples = self.subset(&key.ids);
        let cfg = TrainConfig {
            seed: key.seed,
            component: key.component,
            ..self.cfg.train.clone()
        };
        let started = std::time::Instant::now();
        let (mut bundle, history) = train(&samples, &self.val_samples, self.cfg.spec, &cfg)?;
        bundle.training.dataset_hash = Some(self.ds.content_hash().to_string());
        log::info!(
            "trained {} on {} layouts, seed {}: {} epochs, best val {:.4} m/s ({:.0}s)",
            key.component,
            key.ids.len(),
            key.seed,
            history.len(),
            bundle.training.validation_mae,
            started.elapsed().as_secs_f64()
        );
        *self.jobs_trained.lock().expect("counter poisoned") += 1;
        Ok(bundle)
    }

    fn run_jobs(&self, keys: Vec<JobKey>) -> Result<Vec<Arc<ModelBundle>>> {
        if !self.cfg.memoize {
            // every job trains independently, duplicates included
            return keys
                .par_iter()
                .map(|k| self.train_job(k).map(Arc::new))
                .collect();
        }
        let missing: Vec<JobKey> = {
            let memo = self.memo.lock().expect("memo poisoned");
            let mut m: Vec<JobKey> = keys.iter().filter(|k| !memo.contains_key(k)).cloned().collect();
            m.sort();
            m.dedup();
            m
        };
        let trained: Vec<(JobKey, Arc<ModelBundle>)> = missing
            .into_par_iter()
            .map(|k| self.train_job(&k).map(|b| (k, Arc::new(b))))
            .collect::<Result<_>>()?;
        let mut memo = self.memo.lock().expect("memo poisoned");
        memo.extend(trained);
        Ok(keys.iter().map(|k| memo[k].clone()).collect())
    }

    /// Trains (or fetches) a U/V model pair for every seed on the given layouts.
    pub fn model_pairs(&self, ids: &[usize]) -> Result<Vec<(u64, Arc<ModelBundle>, Arc<ModelBundle>)>> {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let keys: Vec<JobKey> = self
            .cfg
            .seeds
            .iter()
            .flat_map(|&seed| {
                let ids = ids.clone();
                Component::ALL.into_iter().map(move |component| JobKey {
                    ids: ids.clone(),
                    seed,
                    component,
                })
            })
            .collect();
        let models = self.run_jobs(keys)?;
        Ok(self
            .cfg
            .seeds
            .iter()
            .zip(models.chunks_exact(2))
            .map(|(seed, pair)| (*seed, pair[0].clone(), pair[1].clone()))
            .collect())
    }

    /// Test-partition report over all seeds for models trained on `ids`.
    pub fn evaluate_subset(&self, ids: &[usize]) -> Result<EvalReport> {
        let pairs = self.model_pairs(ids)?;
        let predictors: Vec<(SurrogatePredictor, u64)> = pairs
            .iter()
            .map(|(seed, u, v)| {
                (
                    SurrogatePredictor {
                        u: (**u).clone(),
                        v: (**v).clone(),
                    },
                    *seed,
                )
            })
            .collect();
        let refs: Vec<(&dyn Predictor, Option<u64>)> =
            predictors.iter().map(|(p, s)| (p as &dyn Predictor, Some(*s))).collect();
        evaluate(&refs, self.test_samples()?, Some(self.ds.content_hash().to_string()))
    }

    /// Models trained on the full train partition, one pair per seed.
    pub fn baseline(&self) -> Result<EvalReport> {
        self.evaluate_subset(self.ds.partition_ids(Partition::Train))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMeans {
    pub seed: u64,
    pub mae_u: f64,
    pub mae_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub size: usize,
    pub selector: String,
    pub u: Aggregate,
    pub v: Aggregate,
    pub per_seed: Vec<SeedMeans>,
}

impl StudyRow {
    pub fn aggregate(&self, c: Component) -> &Aggregate {
        match c {
            Component::U => &self.u,
            Component::V => &self.v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeStudyResult {
    pub dataset_hash: String,
    pub rows: Vec<StudyRow>,
    /// Slope of mean MAE against ln(size).
    pub slope_u: f64,
    pub slope_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityStudyResult {
    pub dataset_hash: String,
    /// Two rows per size: random then dense.
    pub rows: Vec<StudyRow>,
}

fn check_sizes(sizes: &[usize], pool: usize) -> Result<()> {
    if sizes.is_empty() {
        return Err(Error::Validation("study needs at least one size".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation(format!("study sizes must be strictly increasing, got {sizes:?}")));
    }
    if let Some(&bad) = sizes.iter().find(|&&s| s == 0 || s > pool) {
        return Err(Error::Validation(format!("study size {bad} exceeds the training pool of {pool}")));
    }
    Ok(())
}

/// Trains every `(size, selector, seed)` job of the plan as one batch, then
/// evaluates each on the test partition. Rows keep the plan order.
fn rows_for(runner: &StudyRunner, pool: &[&Tile], plan: &[(usize, &str)]) -> Result<Vec<StudyRow>> {
    let seeds = &runner.cfg.seeds;
    let mut keys = Vec::new();
    for &(size, selector) in plan {
        let sel = build_selector(selector)?;
        for &seed in seeds {
            let ids = sel.select(pool, size, seed)?;
            for component in Component::ALL {
                keys.push(JobKey {
                    ids: ids.clone(),
                    seed,
                    component,
                });
            }
        }
    }
    let models = runner.run_jobs(keys)?;
    let test = runner.test_samples()?;
    let mut pairs = models.chunks_exact(2);
    let mut rows = Vec::with_capacity(plan.len());
    for &(size, selector) in plan {
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let pair = pairs.next().expect("two models per seed");
            let predictor = SurrogatePredictor {
                u: (*pair[0]).clone(),
                v: (*pair[1]).clone(),
            };
            let report = evaluate(&[(&predictor, Some(seed))], test, None)?;
            per_seed.push(SeedMeans {
                seed,
                mae_u: report.u.mean,
                mae_v: report.v.mean,
            });
        }
        let (mu, su) = mean_std(&per_seed.iter().map(|s| s.mae_u).collect::<Vec<_>>());
        let (mv, sv) = mean_std(&per_seed.iter().map(|s| s.mae_v).collect::<Vec<_>>());
        rows.push(StudyRow {
            size,
            selector: selector.to_string(),
            u: Aggregate { mean: mu, std: su },
            v: Aggregate { mean: mv, std: sv },
            per_seed,
        });
    }
    Ok(rows)
}

/// Trains on seeded random subsets of each size and evaluates on the fixed test partition.
pub fn size_study(runner: &StudyRunner, sizes: &[usize]) -> Result<SizeStudyResult> {
    let pool = runner.train_pool()?;
    check_sizes(sizes, pool.len())?;
    let plan: Vec<(usize, &str)> = sizes.iter().map(|&s| (s, "random")).collect();
    let rows = rows_for(runner, &pool, &plan)?;
    let x: Vec<f64> = rows.iter().map(|r| r.size as f64).collect();
    let (slope_u, slope_v) = if rows.len() >= 2 {
        (
            log_linear_slope(&x, &rows.iter().map(|r| r.u.mean).collect::<Vec<_>>()),
            log_linear_slope(&x, &rows.iter().map(|r| r.v.mean).collect::<Vec<_>>()),
        )
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(SizeStudyResult {
        dataset_hash: runner.ds.content_hash().to_string(),
        rows,
        slope_u,
        slope_v,
    })
}

/// Random versus densest subsets at each size; the comparison is reported, not judged.
pub fn density_study(runner: &StudyRunner, sizes: &[usize], dense_selector: &str) -> Result<DensityStudyResult> {
    let pool = runner.train_pool()?;
    density_study_on(runner, &pool, sizes, dense_selector)
}

/// [`density_study`] over an explicit pool of training layouts.
pub fn density_study_on(
    runner: &StudyRunner,
    pool: &[&Tile],
    sizes: &[usize],
    dense_selector: &str,
) -> Result<DensityStudyResult> {
    check_sizes(sizes, pool.len())?;
    let plan: Vec<(usize, &str)> = sizes.iter().flat_map(|&s| [(s, "random"), (s, dense_selector)]).collect();
    let rows = rows_for(runner, pool, &plan)?;
    Ok(DensityStudyResult {
        dataset_hash: runner.ds.content_hash().to_string(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutPoint {
    pub tile: usize,
    pub building_count: usize,
    pub mae_u: f64,
    pub mae_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub dataset_hash: Option<String>,
    pub points: Vec<LayoutPoint>,
    pub rho_u: f64,
    pub rho_v: f64,
}

/// Per-layout MAE (averaged over directions and replicates) against building
/// count, with Spearman correlation per component.
pub fn density_correlation<'t>(
    report: &EvalReport,
    tile: impl Fn(usize) -> Result<&'t Tile>,
) -> Result<CorrelationResult> {
    let mut acc: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for rep in &report.replicates {
        for c in &rep.cases {
            let e = acc.entry(c.tile).or_insert((0.0, 0.0, 0));
            e.0 += c.mae_u;
            e.1 += c.mae_v;
            e.2 += 1;
        }
    }
    if acc.len() < 3 {
        return Err(Error::Validation(format!("correlation needs at least 3 layouts, got {}", acc.len())));
    }
    let points = acc
        .into_iter()
        .map(|(id, (u, v, n))| {
            Ok(LayoutPoint {
                tile: id,
                building_count: tile(id)?.building_count(),
                mae_u: u / n as f64,
                mae_v: v / n as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let counts: Vec<f64> = points.iter().map(|p| p.building_count as f64).collect();
    let rho_u = spearman(&counts, &points.iter().map(|p| p.mae_u).collect::<Vec<_>>());
    let rho_v = spearman(&counts, &points.iter().map(|p| p.mae_v).collect::<Vec<_>>());
    Ok(CorrelationResult {
        dataset_hash: report.dataset_hash.clone(),
        points,
        rho_u,
        rho_v,
    })
}
