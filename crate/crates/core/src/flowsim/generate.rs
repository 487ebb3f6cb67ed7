use rayon::prelude::*;

use super::{solve, FlowConfig, SolveReport};
use crate::geomodel::Tile;
use crate::raster::{canonicalize, rasterize, Direction, HeightGrid, VelocityField};

/// One canonical-frame oracle solution.
#[derive(Debug, Clone)]
pub struct GeneratedCase {
    pub tile_id: usize,
    pub direction: Direction,
    pub grid: HeightGrid,
    pub field: VelocityField,
    pub report: SolveReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseFailure {
    pub tile_id: usize,
    pub direction: Direction,
    pub reason: String,
}

/// Rasterizes each tile, canonicalizes it for each direction and solves once
/// per direction. Non-converged and failed cases are returned separately;
/// output order is `(tile order, N, E, S, W)` regardless of scheduling.
pub fn generate_fields(
    tiles: &[Tile],
    resolution: usize,
    config: &FlowConfig,
) -> (Vec<GeneratedCase>, Vec<CaseFailure>) {
    let jobs: Vec<(usize, Direction)> = (0..tiles.len())
        .flat_map(|t| Direction::ALL.into_iter().map(move |d| (t, d)))
        .collect();
    let total = jobs.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<Result<GeneratedCase, CaseFailure>> = jobs
        .par_iter()
        .map(|&(t, direction)| {
            let tile = &tiles[t];
            let grid = canonicalize(&rasterize(tile, resolution), direction);
            let outcome = match solve(&grid, config) {
                Ok((field, report)) if report.converged => Ok(GeneratedCase {
                    tile_id: tile.id,
                    direction,
                    grid,
                    field,
                    report,
                }),
                Ok((_, report)) => Err(CaseFailure {
                    tile_id: tile.id,
                    direction,
                    reason: format!(
                        "not converged after {} iterations (residual {:.3e})",
                        report.iterations, report.residual
                    ),
                }),
                Err(e) => Err(CaseFailure {
                    tile_id: tile.id,
                    direction,
                    reason: e.to_string(),
                }),
            };
            let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
            if n % 40 == 0 || n == total {
                log::info!("simulated {n}/{total} cases");
            }
            outcome
        })
        .collect();

    let mut cases = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(c) => cases.push(c),
            Err(f) => {
                log::warn!("discarding tile {} direction {}: {}", f.tile_id, f.direction, f.reason);
                failures.push(f);
            }
        }
    }
    (cases, failures)
}
