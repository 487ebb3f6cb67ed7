//! Ground-truth generator: steady 2D incompressible flow past building
//! obstacles at the pedestrian cut-plane.
//!
//! Staggered (MAC) grid over the tile plus lateral/upstream/downstream
//! padding. Velocities live on cell faces, pressure at cell centers. Steady
//! state is reached by explicit pseudo-time marching (first-order upwind
//! convection, central diffusion) with an exact pressure projection each step.
//!
//! Boundaries: north edge is a fixed inflow `(0, -inflow_speed)`, the south
//! edge is a zero-gradient outflow with reference pressure zero, east/west
//! edges are free-slip walls, and solid cells carry zero velocity on all of
//! their faces.

pub mod banded;
mod generate;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{HeightGrid, VelocityField, CUT_HEIGHT};
use banded::{BandCholesky, BandMatrix};
pub use generate::{generate_fields, CaseFailure, GeneratedCase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub inflow_speed: f64,
    pub effective_viscosity: f64,
    /// Padding added on every side, as a fraction of the tile resolution.
    pub padding_fraction: f64,
    pub convergence_tol: f64,
    pub max_iterations: usize,
    pub cut_height: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            inflow_speed: 2.0,
            effective_viscosity: 5.0,
            padding_fraction: 0.25,
            convergence_tol: 1e-5,
            max_iterations: 20_000,
            cut_height: CUT_HEIGHT,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("inflow_speed", self.inflow_speed),
            ("effective_viscosity", self.effective_viscosity),
            ("convergence_tol", self.convergence_tol),
            ("cut_height", self.cut_height),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("flow config {name} must be positive, got {v}")));
            }
        }
        if !(self.padding_fraction.is_finite() && self.padding_fraction >= 0.0) {
            return Err(Error::Validation("padding_fraction must be >= 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Validation("max_iterations must be positive".into()));
        }
        Ok(())
    }

    pub fn padding_cells(&self, resolution: usize) -> usize {
        (self.padding_fraction * resolution as f64).round() as usize
    }
}

/// Solid cells of the unpadded tile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObstacleMask {
    pub resolution: usize,
    pub solid: Vec<bool>,
}

pub fn obstacle_mask(grid: &HeightGrid, config: &FlowConfig) -> ObstacleMask {
    let threshold = config.cut_height;
    ObstacleMask {
        resolution: grid.resolution,
        solid: grid.data.iter().map(|h| *h as f64 >= threshold).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub seconds: f64,
}

/// Solution on the padded staggered grid, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct PaddedSolution {
    pub rows: usize,
    pub cols: usize,
    pub pad: usize,
    pub cell_size: f64,
    /// Cells treated as solid, including fluid pockets sealed off from the outflow.
    pub solid: Vec<bool>,
    /// East-west face velocities, `rows x (cols + 1)`, positive east.
    pub ux: Vec<f64>,
    /// North-south face velocities, `(rows + 1) x cols`, positive SOUTH (row direction).
    pub uy: Vec<f64>,
}

impl PaddedSolution {
    /// Per-cell discrete divergence, zero for solid cells.
    pub fn divergence(&self) -> Vec<f64> {
        let (nr, nc) = (self.rows, self.cols);
        let mut div = vec![0.0; nr * nc];
        for r in 0..nr {
            for c in 0..nc {
                if self.solid[r * nc + c] {
                    continue;
                }
                let e = self.ux[r * (nc + 1) + c + 1];
                let w = self.ux[r * (nc + 1) + c];
                let n = self.uy[r * nc + c];
                let s = self.uy[(r + 1) * nc + c];
                div[r * nc + c] = (e - w + s - n) / self.cell_size;
            }
        }
        div
    }

    /// Volumetric flux per unit depth entering the north edge and leaving the south edge.
    pub fn boundary_fluxes(&self) -> (f64, f64) {
        let nc = self.cols;
        let inflow: f64 = self.uy[..nc].iter().sum::<f64>() * self.cell_size;
        let outflow: f64 = self.uy[self.rows * nc..].iter().sum::<f64>() * self.cell_size;
        (inflow, outflow)
    }

    fn crop(&self, resolution: usize, cut_height: f64) -> VelocityField {
        let nc = self.cols;
        let mut u = Vec::with_capacity(resolution * resolution);
        let mut v = Vec::with_capacity(resolution * resolution);
        for r in self.pad..self.pad + resolution {
            for c in self.pad..self.pad + resolution {
                let ue = 0.5 * (self.ux[r * (nc + 1) + c] + self.ux[r * (nc + 1) + c + 1]);
                let ys = 0.5 * (self.uy[r * nc + c] + self.uy[(r + 1) * nc + c]);
                u.push(ue as f32);
                // row direction is southward; v is northward
                v.push((-ys) as f32);
            }
        }
        VelocityField {
            resolution,
            cell_size: self.cell_size,
            u,
            v,
            cut_height,
        }
    }
}

struct Solver<'a> {
    cfg: &'a FlowConfig,
    nr: usize,
    nc: usize,
    dx: f64,
    solid: Vec<bool>,
    ux_fixed: Vec<bool>,
    uy_fixed: Vec<bool>,
    ux: Vec<f64>,
    uy: Vec<f64>,
    poisson: BandCholesky,
}

impl<'a> Solver<'a> {
    fn new(grid: &HeightGrid, cfg: &'a FlowConfig) -> Result<Self> {
        let w = grid.resolution;
        let pad = cfg.padding_cells(w);
        let (nr, nc) = (w + 2 * pad, w + 2 * pad);
        let mask = obstacle_mask(grid, cfg);
        let mut solid = vec![false; nr * nc];
        for r in 0..w {
            for c in 0..w {
                solid[(r + pad) * nc + c + pad] = mask.solid[r * w + c];
            }
        }
        seal_pockets(&mut solid, nr, nc)?;

        let mut ux_fixed = vec![false; nr * (nc + 1)];
        for r in 0..nr {
            for f in 0..=nc {
                let west_solid = f == 0 || solid[r * nc + f - 1];
                let east_solid = f == nc || solid[r * nc + f];
                ux_fixed[r * (nc + 1) + f] = west_solid || east_solid;
            }
        }
        let mut uy_fixed = vec![false; (nr + 1) * nc];
        let mut uy = vec![0.0; (nr + 1) * nc];
        for f in 0..=nr {
            for c in 0..nc {
                let north_solid = f > 0 && solid[(f - 1) * nc + c];
                let south_solid = f < nr && solid[f * nc + c];
                let idx = f * nc + c;
                uy_fixed[idx] = f == 0 || north_solid || south_solid;
                if !(north_solid || south_solid) {
                    uy[idx] = cfg.inflow_speed;
                }
            }
        }
        let poisson = assemble_poisson(&solid, &ux_fixed, &uy_fixed, nr, nc)
            .factor()
            .ok_or_else(|| Error::Validation("pressure system is not positive definite".into()))?;
        Ok(Solver {
            cfg,
            nr,
            nc,
            dx: grid.cell_size,
            solid,
            ux_fixed,
            uy_fixed,
            ux: vec![0.0; nr * (nc + 1)],
            uy,
            poisson,
        })
    }

    fn project(&mut self) {
        let (nr, nc, dx) = (self.nr, self.nc, self.dx);
        let mut phi = vec![0.0; nr * nc];
        for r in 0..nr {
            for c in 0..nc {
                let p = r * nc + c;
                if self.solid[p] {
                    continue;
                }
                let div = self.ux[r * (nc + 1) + c + 1] - self.ux[r * (nc + 1) + c] + self.uy[(r + 1) * nc + c]
                    - self.uy[r * nc + c];
                // dx^2 * (div / dx)
                phi[p] = -div * dx;
            }
        }
        self.poisson.solve_in_place(&mut phi);
        for r in 0..nr {
            for f in 1..nc {
                let idx = r * (nc + 1) + f;
                if !self.ux_fixed[idx] {
                    self.ux[idx] -= (phi[r * nc + f] - phi[r * nc + f - 1]) / dx;
                }
            }
        }
        for f in 1..=nr {
            for c in 0..nc {
                let idx = f * nc + c;
                if self.uy_fixed[idx] {
                    continue;
                }
                let north = phi[(f - 1) * nc + c];
                let south = if f == nr { -north } else { phi[f * nc + c] };
                self.uy[idx] -= (south - north) / dx;
            }
        }
    }

    fn time_step(&self) -> f64 {
        let umax = self.ux.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let vmax = self.uy.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let rate = (umax + vmax) / self.dx + 4.0 * self.cfg.effective_viscosity / (self.dx * self.dx);
        0.9 / rate
    }

    /// Explicit momentum predictor; returns the new face arrays.
    fn predict(&self, dt: f64) -> (Vec<f64>, Vec<f64>) {
        let (nr, nc, dx) = (self.nr, self.nc, self.dx);
        let nu = self.cfg.effective_viscosity;
        let inv_dx = 1.0 / dx;
        let inv_dx2 = inv_dx * inv_dx;
        let ux = &self.ux;
        let uy = &self.uy;
        let su = nc + 1;
        let mut new_ux = ux.clone();
        for r in 0..nr {
            for f in 1..nc {
                let idx = r * su + f;
                if self.ux_fixed[idx] {
                    continue;
                }
                let u = ux[idx];
                let e = ux[idx + 1];
                let w = ux[idx - 1];
                // inflow edge has zero tangential velocity; outflow is zero-gradient
                let n = if r == 0 { -u } else { ux[idx - su] };
                let s = if r == nr - 1 { u } else { ux[idx + su] };
                let vy = 0.25 * (uy[r * nc + f - 1] + uy[r * nc + f] + uy[(r + 1) * nc + f - 1] + uy[(r + 1) * nc + f]);
                let dudx = if u > 0.0 { u - w } else { e - u } * inv_dx;
                let dudy = if vy > 0.0 { u - n } else { s - u } * inv_dx;
                let lap = (e + w + n + s - 4.0 * u) * inv_dx2;
                new_ux[idx] = u + dt * (-u * dudx - vy * dudy + nu * lap);
            }
        }
        let mut new_uy = uy.clone();
        for f in 1..=nr {
            for c in 0..nc {
                let idx = f * nc + c;
                if self.uy_fixed[idx] {
                    continue;
                }
                let v = uy[idx];
                let n = uy[idx - nc];
                let s = if f == nr { v } else { uy[idx + nc] };
                // free-slip side walls
                let e = if c == nc - 1 { v } else { uy[idx + 1] };
                let w = if c == 0 { v } else { uy[idx - 1] };
                let ux_here = if f < nr {
                    0.25 * (ux[(f - 1) * su + c] + ux[(f - 1) * su + c + 1] + ux[f * su + c] + ux[f * su + c + 1])
                } else {
                    0.5 * (ux[(f - 1) * su + c] + ux[(f - 1) * su + c + 1])
                };
                let dvdx = if ux_here > 0.0 { v - w } else { e - v } * inv_dx;
                let dvdy = if v > 0.0 { v - n } else { s - v } * inv_dx;
                let lap = (e + w + n + s - 4.0 * v) * inv_dx2;
                new_uy[idx] = v + dt * (-ux_here * dvdx - v * dvdy + nu * lap);
            }
        }
        (new_ux, new_uy)
    }

    fn run(&mut self) -> SolveReport {
        let start = Instant::now();
        self.project();
        let scale = self.cfg.inflow_speed * self.cfg.inflow_speed / self.dx;
        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < self.cfg.max_iterations {
            iterations += 1;
            let dt = self.time_step();
            let (nux, nuy) = self.predict(dt);
            let old_ux = std::mem::replace(&mut self.ux, nux);
            let old_uy = std::mem::replace(&mut self.uy, nuy);
            self.project();
            let change = self
                .ux
                .iter()
                .zip(&old_ux)
                .chain(self.uy.iter().zip(&old_uy))
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            residual = change / (dt * scale);
            if !residual.is_finite() {
                break;
            }
            if residual <= self.cfg.convergence_tol {
                converged = true;
                break;
            }
        }
        SolveReport {
            iterations,
            residual,
            converged,
            seconds: start.elapsed().as_secs_f64(),
        }
    }
}

/// Fluid cells that cannot reach the outflow edge through fluid neighbors are
/// enclosed courtyards with no through-flow; they are treated as solid.
fn seal_pockets(solid: &mut [bool], nr: usize, nc: usize) -> Result<()> {
    let mut reached = vec![false; nr * nc];
    let mut stack: Vec<usize> = (0..nc).map(|c| (nr - 1) * nc + c).filter(|&p| !solid[p]).collect();
    for &p in &stack {
        reached[p] = true;
    }
    while let Some(p) = stack.pop() {
        let (r, c) = (p / nc, p % nc);
        let mut visit = |q: usize| {
            if !solid[q] && !reached[q] {
                reached[q] = true;
                stack.push(q);
            }
        };
        if r > 0 {
            visit(p - nc);
        }
        if r + 1 < nr {
            visit(p + nc);
        }
        if c > 0 {
            visit(p - 1);
        }
        if c + 1 < nc {
            visit(p + 1);
        }
    }
    if !(0..nc).any(|c| reached[c]) {
        return Err(Error::BlockedDomain);
    }
    for (s, r) in solid.iter_mut().zip(&reached) {
        if !*r {
            *s = true;
        }
    }
    Ok(())
}

fn assemble_poisson(solid: &[bool], ux_fixed: &[bool], uy_fixed: &[bool], nr: usize, nc: usize) -> BandMatrix {
    let n = nr * nc;
    let mut m = BandMatrix::zeros(n, nc);
    for r in 0..nr {
        for c in 0..nc {
            let p = r * nc + c;
            if solid[p] {
                m.add(p, p, 1.0);
                continue;
            }
            let mut diag = 0.0;
            // west and north neighbors carry the off-diagonal entries
            if !ux_fixed[r * (nc + 1) + c] {
                diag += 1.0;
                m.add(p, p - 1, -1.0);
            }
            if !ux_fixed[r * (nc + 1) + c + 1] {
                diag += 1.0;
            }
            if !uy_fixed[r * nc + c] {
                diag += 1.0;
                m.add(p, p - nc, -1.0);
            }
            if !uy_fixed[(r + 1) * nc + c] {
                diag += if r == nr - 1 { 2.0 } else { 1.0 };
            }
            m.add(p, p, diag);
        }
    }
    m
}

/// Full solve returning the padded solution alongside the cropped field.
pub fn solve_padded(grid: &HeightGrid, config: &FlowConfig) -> Result<(VelocityField, PaddedSolution, SolveReport)> {
    config.validate()?;
    let mut solver = Solver::new(grid, config)?;
    let report = solver.run();
    let padded = PaddedSolution {
        rows: solver.nr,
        cols: solver.nc,
        pad: config.padding_cells(grid.resolution),
        cell_size: solver.dx,
        solid: solver.solid,
        ux: solver.ux,
        uy: solver.uy,
    };
    let field = padded.crop(grid.resolution, config.cut_height);
    Ok((field, padded, report))
}

pub fn solve(grid: &HeightGrid, config: &FlowConfig) -> Result<(VelocityField, SolveReport)> {
    let (field, _, report) = solve_padded(grid, config)?;
    Ok((field, report))
}
