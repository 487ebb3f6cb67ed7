//! Interchangeable strategies selected by name at runtime: predictors for
//! evaluation and subset selectors for the training-set studies.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flowsim::{solve, FlowConfig};
use crate::geomodel::Tile;
use crate::raster::{HeightGrid, VelocityField, CUT_HEIGHT};
use crate::surrogate::{predict_batch, ModelBundle};

/// Produces canonical-frame velocity fields from canonical-frame height grids.
pub trait Predictor: Send + Sync {
    fn name(&self) -> &str;

    fn predict(&self, grid: &HeightGrid) -> Result<VelocityField>;

    fn predict_many(&self, grids: &[&HeightGrid]) -> Result<Vec<VelocityField>> {
        grids.iter().map(|g| self.predict(g)).collect()
    }
}

/// A U and a V model trained together.
pub struct SurrogatePredictor {
    pub u: ModelBundle,
    pub v: ModelBundle,
}

impl Predictor for SurrogatePredictor {
    fn name(&self) -> &str {
        "unet"
    }

    fn predict(&self, grid: &HeightGrid) -> Result<VelocityField> {
        Ok(self.predict_many(&[grid])?.remove(0))
    }

    fn predict_many(&self, grids: &[&HeightGrid]) -> Result<Vec<VelocityField>> {
        let u = predict_batch(&self.u, grids)?;
        let v = predict_batch(&self.v, grids)?;
        Ok(grids
            .iter()
            .zip(u.into_iter().zip(v))
            .map(|(g, (u, v))| VelocityField {
                resolution: g.resolution,
                cell_size: g.cell_size,
                u,
                v,
                cut_height: CUT_HEIGHT,
            })
            .collect())
    }
}

/// Runs the flow solver itself; slow, used for side-by-side comparisons.
pub struct OraclePredictor {
    pub flow: FlowConfig,
}

impl Predictor for OraclePredictor {
    fn name(&self) -> &str {
        "oracle"
    }

    fn predict(&self, grid: &HeightGrid) -> Result<VelocityField> {
        let (field, report) = solve(grid, &self.flow)?;
        if !report.converged {
            log::warn!("oracle prediction did not converge (residual {:.3e})", report.residual);
        }
        Ok(field)
    }
}

/// Predicts a fixed `(u, v)` everywhere.
pub struct ConstantPredictor {
    pub label: &'static str,
    pub u: f32,
    pub v: f32,
}

impl Predictor for ConstantPredictor {
    fn name(&self) -> &str {
        self.label
    }

    fn predict(&self, grid: &HeightGrid) -> Result<VelocityField> {
        Ok(VelocityField::uniform(grid.resolution, grid.cell_size, self.u, self.v))
    }
}

/// Inputs a predictor may need when built by name.
#[derive(Default)]
pub struct PredictorArgs {
    pub u_model: Option<ModelBundle>,
    pub v_model: Option<ModelBundle>,
    pub flow: FlowConfig,
    /// Per-component training-set means, for the constant-mean baseline.
    pub train_means: Option<(f64, f64)>,
}

type PredictorCtor = fn(PredictorArgs) -> Result<Box<dyn Predictor>>;

const PREDICTORS: &[(&str, PredictorCtor)] = &[
    ("unet", |a| match (a.u_model, a.v_model) {
        (Some(u), Some(v)) => Ok(Box::new(SurrogatePredictor { u, v })),
        _ => Err(Error::Validation("the unet predictor needs both U and V models".into())),
    }),
    ("oracle", |a| Ok(Box::new(OraclePredictor { flow: a.flow }))),
    ("zero", |_| {
        Ok(Box::new(ConstantPredictor {
            label: "zero",
            u: 0.0,
            v: 0.0,
        }))
    }),
    ("mean", |a| {
        let (u, v) = a
            .train_means
            .ok_or_else(|| Error::Validation("the mean predictor needs training-set means".into()))?;
        Ok(Box::new(ConstantPredictor {
            label: "mean",
            u: u as f32,
            v: v as f32,
        }))
    }),
];

pub fn predictor_names() -> Vec<&'static str> {
    PREDICTORS.iter().map(|(n, _)| *n).collect()
}

pub fn build_predictor(name: &str, args: PredictorArgs) -> Result<Box<dyn Predictor>> {
    let (_, ctor) = PREDICTORS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::UnknownStrategy {
            kind: "predictor",
            name: name.into(),
        })?;
    ctor(args)
}

/// Chooses `k` training layouts out of a pool.
pub trait SubsetSelector: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns `k` layout ids, sorted ascending.
    fn select(&self, pool: &[&Tile], k: usize, seed: u64) -> Result<Vec<usize>>;
}

fn check_k(pool: &[&Tile], k: usize) -> Result<()> {
    if k == 0 || k > pool.len() {
        return Err(Error::Validation(format!("subset size {k} must be in 1..={}", pool.len())));
    }
    Ok(())
}

/// Seeded shuffle of the id-sorted pool; the subset is the first `k`, so
/// subsets for one seed are nested across sizes.
pub struct RandomSubset;

impl SubsetSelector for RandomSubset {
    fn name(&self) -> &'static str {
        "random"
    }

    fn select(&self, pool: &[&Tile], k: usize, seed: u64) -> Result<Vec<usize>> {
        check_k(pool, k)?;
        let mut ids: Vec<usize> = pool.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut out = ids[..k].to_vec();
        out.sort_unstable();
        Ok(out)
    }
}

/// Top-`k` by a density score, ties broken by ascending layout id. Seed-independent.
pub struct Densest {
    pub label: &'static str,
    pub score: fn(&Tile) -> f64,
}

impl SubsetSelector for Densest {
    fn name(&self) -> &'static str {
        self.label
    }

    fn select(&self, pool: &[&Tile], k: usize, _seed: u64) -> Result<Vec<usize>> {
        check_k(pool, k)?;
        let mut ranked: Vec<(f64, usize)> = pool.iter().map(|t| ((self.score)(t), t.id)).collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut out: Vec<usize> = ranked[..k].iter().map(|(_, id)| *id).collect();
        out.sort_unstable();
        Ok(out)
    }
}

type SelectorCtor = fn() -> Box<dyn SubsetSelector>;

const SELECTORS: &[(&str, SelectorCtor)] = &[
    ("random", || Box::new(RandomSubset)),
    ("densest-count", || {
        Box::new(Densest {
            label: "densest-count",
            score: |t| t.building_count() as f64,
        })
    }),
    ("densest-area", || {
        Box::new(Densest {
            label: "densest-area",
            score: Tile::built_area,
        })
    }),
];

pub fn selector_names() -> Vec<&'static str> {
    SELECTORS.iter().map(|(n, _)| *n).collect()
}

pub fn build_selector(name: &str) -> Result<Box<dyn SubsetSelector>> {
    SELECTORS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, ctor)| ctor())
        .ok_or_else(|| Error::UnknownStrategy {
            kind: "subset selector",
            name: name.into(),
        })
}
