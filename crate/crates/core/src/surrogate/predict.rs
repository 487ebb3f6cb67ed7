use urbanwind_autodiff::{Tape, Tensor};

use super::bundle::ModelBundle;
use super::unet::forward;
use crate::error::{Error, Result};
use crate::raster::{
    canonicalize, decanonicalize, denormalize_component, normalize_heights, Component, Direction, HeightGrid,
    VelocityField, CUT_HEIGHT,
};

/// Runs the network on already-normalized inputs laid out `(n, 1, w, w)`.
pub(crate) fn forward_normalized(bundle: &ModelBundle, inputs: Vec<f32>, n: usize, w: usize) -> Result<Vec<f32>> {
    let mut tape = Tape::new();
    let params: Vec<_> = bundle
        .network()
        .params
        .iter()
        .map(|p| tape.leaf(p.value.clone(), false))
        .collect();
    let x = tape.leaf(Tensor::new(&[n, 1, w, w], inputs)?, false);
    let out = forward(bundle.spec(), &mut tape, &params, x)?;
    Ok(tape.value(out).data().to_vec())
}

fn check_grid(bundle: &ModelBundle, grid: &HeightGrid) -> Result<()> {
    let trained = bundle.training.resolution;
    if trained != 0 && grid.resolution != trained {
        return Err(Error::Shape(format!(
            "model was trained at resolution {trained}, got a {0}x{0} grid",
            grid.resolution
        )));
    }
    bundle.spec().check_resolution(grid.resolution)
}

/// Canonical-frame prediction of the bundle's component, in m/s.
pub fn predict(bundle: &ModelBundle, grid: &HeightGrid) -> Result<Vec<f32>> {
    Ok(predict_batch(bundle, &[grid])?.remove(0))
}

/// Same as calling [`predict`] on each grid; samples are evaluated together
/// in chunks of eight.
pub fn predict_batch(bundle: &ModelBundle, grids: &[&HeightGrid]) -> Result<Vec<Vec<f32>>> {
    let Some(first) = grids.first() else {
        return Ok(Vec::new());
    };
    let w = first.resolution;
    let mut out = Vec::with_capacity(grids.len());
    for chunk in grids.chunks(8) {
        let mut inputs = Vec::with_capacity(chunk.len() * w * w);
        for g in chunk {
            check_grid(bundle, g)?;
            if g.resolution != w {
                return Err(Error::Shape(format!("mixed resolutions {w} and {}", g.resolution)));
            }
            inputs.extend(normalize_heights(g, &bundle.norm)?);
        }
        let raw = forward_normalized(bundle, inputs, chunk.len(), w)?;
        for sample in raw.chunks_exact(w * w) {
            out.push(denormalize_component(sample, bundle.component, &bundle.norm)?);
        }
    }
    Ok(out)
}

/// Predicts both components in the canonical frame of `dir` and rotates the
/// result back to the world frame.
pub fn predict_directional(
    u_model: &ModelBundle,
    v_model: &ModelBundle,
    grid: &HeightGrid,
    dir: Direction,
) -> Result<VelocityField> {
    if u_model.component != Component::U || v_model.component != Component::V {
        return Err(Error::Validation(format!(
            "expected (U, V) models, got ({}, {})",
            u_model.component, v_model.component
        )));
    }
    if u_model.norm != v_model.norm {
        return Err(Error::Validation(
            "U and V models were trained with different normalization stats".into(),
        ));
    }
    let canonical = canonicalize(grid, dir);
    let field = VelocityField {
        resolution: grid.resolution,
        cell_size: grid.cell_size,
        u: predict(u_model, &canonical)?,
        v: predict(v_model, &canonical)?,
        cut_height: CUT_HEIGHT,
    };
    Ok(decanonicalize(&field, dir))
}
