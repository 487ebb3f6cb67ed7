use serde::{Deserialize, Serialize};

use super::metrics::{mae, mean_std};
use crate::error::{Error, Result};
use crate::interface::dataset::Sample;
use crate::raster::{Component, Direction};
use crate::registry::Predictor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseError {
    pub tile: usize,
    pub direction: Direction,
    pub mae_u: f64,
    pub mae_v: f64,
}

impl CaseError {
    pub fn get(&self, c: Component) -> f64 {
        match c {
            Component::U => self.mae_u,
            Component::V => self.mae_v,
        }
    }
}

/// Errors of one replicate (one trained model pair, or one baseline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub predictor: String,
    pub seed: Option<u64>,
    pub cases: Vec<CaseError>,
    pub mean_u: f64,
    pub mean_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation of the replicate means.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_hash: Option<String>,
    pub replicates: Vec<ReplicateReport>,
    pub u: Aggregate,
    pub v: Aggregate,
}

impl EvalReport {
    pub fn aggregate(&self, c: Component) -> &Aggregate {
        match c {
            Component::U => &self.u,
            Component::V => &self.v,
        }
    }

    fn from_replicates(replicates: Vec<ReplicateReport>, dataset_hash: Option<String>) -> Self {
        let (mu, su) = mean_std(&replicates.iter().map(|r| r.mean_u).collect::<Vec<_>>());
        let (mv, sv) = mean_std(&replicates.iter().map(|r| r.mean_v).collect::<Vec<_>>());
        EvalReport {
            dataset_hash,
            replicates,
            u: Aggregate { mean: mu, std: su },
            v: Aggregate { mean: mv, std: sv },
        }
    }
}

/// Per-case MAE of one predictor over canonical-frame test samples.
pub fn evaluate_one(predictor: &dyn Predictor, seed: Option<u64>, test: &[Sample]) -> Result<ReplicateReport> {
    if test.is_empty() {
        return Err(Error::Validation("evaluation needs a non-empty test set".into()));
    }
    let mut cases = Vec::with_capacity(test.len());
    for chunk in test.chunks(8) {
        let grids: Vec<_> = chunk.iter().map(|s| &s.grid).collect();
        let preds = predictor.predict_many(&grids)?;
        for (s, p) in chunk.iter().zip(preds) {
            cases.push(CaseError {
                tile: s.tile_id,
                direction: s.direction,
                mae_u: mae(&p.u, &s.field.u),
                mae_v: mae(&p.v, &s.field.v),
            });
        }
    }
    let n = cases.len() as f64;
    let mean_u = cases.iter().map(|c| c.mae_u).sum::<f64>() / n;
    let mean_v = cases.iter().map(|c| c.mae_v).sum::<f64>() / n;
    Ok(ReplicateReport {
        predictor: predictor.name().to_string(),
        seed,
        cases,
        mean_u,
        mean_v,
    })
}

/// Evaluates each replicate on the same test samples and aggregates across them.
pub fn evaluate(
    replicates: &[(&dyn Predictor, Option<u64>)],
    test: &[Sample],
    dataset_hash: Option<String>,
) -> Result<EvalReport> {
    if replicates.is_empty() {
        return Err(Error::Validation("evaluation needs at least one predictor".into()));
    }
    let reports = replicates
        .iter()
        .map(|(p, seed)| evaluate_one(*p, *seed, test))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_replicates(reports, dataset_hash))
}
