use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interface::dataset::Sample;
use crate::raster::Component;

/// Mean absolute error between two equally sized slices.
pub fn mae(pred: &[f32], truth: &[f32]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "mae needs equal lengths");
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| (*p as f64 - *t as f64).abs()).sum();
    s / pred.len() as f64
}

/// Mean and sample standard deviation (`n - 1`); the deviation of a single value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Least-squares slope of `y` against `ln(x)`.
pub fn log_linear_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Ranks starting at 1; tied values share the average of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; 0 when either side has no spread.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Population standard deviation over all cells.
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub cases: usize,
    pub u: ComponentStats,
    pub v: ComponentStats,
}

impl DatasetStats {
    pub fn component(&self, c: Component) -> &ComponentStats {
        match c {
            Component::U => &self.u,
            Component::V => &self.v,
        }
    }
}

fn component_stats<'a>(values: impl Iterator<Item = &'a f32> + Clone) -> ComponentStats {
    let mut n = 0usize;
    let mut sum = 0.0f64;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for v in values.clone() {
        let v = *v as f64;
        n += 1;
        sum += v;
        min = min.min(v);
        max = max.max(v);
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
    ComponentStats {
        mean,
        min,
        max,
        std: var.sqrt(),
    }
}

/// Velocity statistics over every cell of every canonical-frame field.
pub fn dataset_stats(samples: &[Sample]) -> Result<DatasetStats> {
    if samples.is_empty() {
        return Err(Error::Validation("dataset statistics need at least one case".into()));
    }
    Ok(DatasetStats {
        cases: samples.len(),
        u: component_stats(samples.iter().flat_map(|s| s.field.u.iter())),
        v: component_stats(samples.iter().flat_map(|s| s.field.v.iter())),
    })
}
