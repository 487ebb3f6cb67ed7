use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use urbanwind_autodiff::{Adam, Tape, Tensor};

use super::bundle::{ModelBundle, TrainingMeta};
use super::predict::forward_normalized;
use super::unet::{forward, UNet, UNetSpec};
use crate::error::{Error, Result};
use crate::interface::dataset::{Dataset, Partition, Sample};
use crate::raster::{normalize_component, normalize_heights, Component, NormStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    pub l1_lambda: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub component: Component,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            initial_lr: 1e-3,
            plateau_factor: 0.5,
            plateau_patience: 10,
            min_lr: 1e-5,
            l1_lambda: 1e-9,
            max_epochs: 200,
            early_stop_patience: 25,
            seed: 0,
            component: Component::U,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("plateau_patience", self.plateau_patience),
            ("max_epochs", self.max_epochs),
            ("early_stop_patience", self.early_stop_patience),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Validation(format!("train config {name} must be positive")));
            }
        }
        let rates = [
            ("initial_lr", self.initial_lr),
            ("plateau_factor", self.plateau_factor),
            ("min_lr", self.min_lr),
            ("l1_lambda", self.l1_lambda),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("train config {name} must be positive, got {v}")));
            }
        }
        if self.plateau_factor >= 1.0 {
            return Err(Error::Validation("plateau_factor must be below 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Mean normalized MAE over the epoch's batches (penalty excluded).
    pub train_loss: f64,
    /// Validation MAE in m/s.
    pub validation_mae: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }
}

/// Normalized, contiguous copies of a sample list.
struct Prepared {
    w: usize,
    inputs: Vec<f32>,
    targets: Vec<f32>,
    raw_targets: Vec<f32>,
}

impl Prepared {
    fn new(samples: &[Sample], c: Component, norm: &NormStats) -> Result<Self> {
        let w = samples[0].grid.resolution;
        let mut p = Prepared {
            w,
            inputs: Vec::with_capacity(samples.len() * w * w),
            targets: Vec::with_capacity(samples.len() * w * w),
            raw_targets: Vec::with_capacity(samples.len() * w * w),
        };
        for s in samples {
            if s.grid.resolution != w || s.field.resolution != w {
                return Err(Error::Shape(format!("mixed resolutions in training data ({w} vs {})", s.grid.resolution)));
            }
            p.inputs.extend(normalize_heights(&s.grid, norm)?);
            p.targets.extend(normalize_component(s.field.component(c), c, norm)?);
            p.raw_targets.extend_from_slice(s.field.component(c));
        }
        Ok(p)
    }

    fn len(&self) -> usize {
        self.inputs.len() / (self.w * self.w)
    }

    fn gather(&self, data: &[f32], idx: &[usize]) -> Vec<f32> {
        let n = self.w * self.w;
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&data[i * n..(i + 1) * n]);
        }
        out
    }
}

/// Mean absolute error in m/s of `bundle` over prepared samples.
fn validation_mae(bundle: &ModelBundle, data: &Prepared) -> Result<f64> {
    let n = data.w * data.w;
    let scale = bundle.norm.velocity_scale(bundle.component);
    let mut total = 0.0f64;
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(8) {
        let out = forward_normalized(bundle, data.gather(&data.inputs, chunk), chunk.len(), data.w)?;
        let truth = data.gather(&data.raw_targets, chunk);
        for (p, t) in out.iter().zip(&truth) {
            total += ((p * scale) - t).abs() as f64;
        }
    }
    Ok(total / (data.len() * n) as f64)
}

/// Trains one component model. Only `train` contributes to the normalization
/// stats; `validation` drives plateau decay, early stopping and the choice of
/// returned weights.
pub fn train(
    train: &[Sample],
    validation: &[Sample],
    spec: UNetSpec,
    cfg: &TrainConfig,
) -> Result<(ModelBundle, TrainingHistory)> {
    cfg.validate()?;
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::Training("empty training partition".into()));
    }
    if validation.is_empty() {
        return Err(Error::Training("empty validation partition".into()));
    }
    spec.check_resolution(train[0].grid.resolution)?;
    let norm = NormStats::from_pairs(train.iter().map(|s| (&s.grid, &s.field)))?;
    let train_data = Prepared::new(train, cfg.component, &norm)?;
    let val_data = Prepared::new(validation, cfg.component, &norm)?;
    let layouts = {
        let mut ids: Vec<usize> = train.iter().map(|s| s.tile_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    };

    let mut net = UNet::<f32>::build(spec, cfg.seed)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let adam = Adam::default();
    let lambda = cfg.l1_lambda as f32;
    let w = train_data.w;

    let mut lr = cfg.initial_lr;
    let mut history = TrainingHistory::default();
    let mut best: Option<(f64, UNet<f32>)> = None;
    let mut since_best = 0usize;
    let mut since_decay = 0usize;
    let mut order: Vec<usize> = (0..train_data.len()).collect();

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let vars = net.bind(&mut tape);
            let x = tape.leaf(Tensor::new(&[batch.len(), 1, w, w], train_data.gather(&train_data.inputs, batch))?, false);
            let t = tape.leaf(Tensor::new(&[batch.len(), 1, w, w], train_data.gather(&train_data.targets, batch))?, false);
            let pred = forward(&spec, &mut tape, &vars, x)?;
            let mae = tape.mae_loss(pred, t)?;
            let weights: Vec<_> = vars.iter().zip(&net.params).filter(|(_, p)| p.penalized).map(|(v, _)| *v).collect();
            let penalty = tape.l1_penalty(&weights, lambda);
            let loss = tape.add(mae, penalty)?;
            let value = tape.value(mae).item() as f64;
            if !value.is_finite() || !tape.value(loss).item().is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {batches} (lr {lr:e})"
                )));
            }
            let mut grads = tape.backward(loss)?;
            for (p, v) in net.params.iter_mut().zip(&vars) {
                match grads.take(*v) {
                    Some(g) => p.grad = g,
                    None => p.zero_grad(),
                }
            }
            adam.step(&mut net.params, lr);
            loss_sum += value;
            batches += 1;
        }

        let probe = ModelBundle::new(net.clone(), cfg.component, norm, placeholder_meta(cfg))?;
        let val = validation_mae(&probe, &val_data)?;
        history.epochs.push(EpochRecord {
            train_loss: loss_sum / batches as f64,
            validation_mae: val,
            learning_rate: lr,
        });
        log::debug!(
            "{} seed {} epoch {epoch}: train {:.5} val {val:.5} m/s lr {lr:.1e}",
            cfg.component,
            cfg.seed,
            loss_sum / batches as f64
        );

        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, net.clone()));
            history.best_epoch = epoch;
            since_best = 0;
            since_decay = 0;
        } else {
            since_best += 1;
            since_decay += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
            if since_decay >= cfg.plateau_patience {
                lr = (lr * cfg.plateau_factor).max(cfg.min_lr);
                since_decay = 0;
            }
        }
    }

    let (best_val, best_net) = best.expect("at least one epoch ran");
    let meta = TrainingMeta {
        seed: cfg.seed,
        epochs_run: history.len(),
        best_epoch: history.best_epoch,
        validation_mae: best_val,
        train_layouts: layouts,
        resolution: w,
        cell_size: train[0].grid.cell_size,
        dataset_hash: None,
    };
    Ok((ModelBundle::new(best_net, cfg.component, norm, meta)?, history))
}

fn placeholder_meta(cfg: &TrainConfig) -> TrainingMeta {
    TrainingMeta {
        seed: cfg.seed,
        epochs_run: 0,
        best_epoch: 0,
        validation_mae: f64::NAN,
        train_layouts: 0,
        resolution: 0,
        cell_size: 0.0,
        dataset_hash: None,
    }
}

/// Trains on the dataset's train partition, validating on its validation
/// partition. The test partition is never touched.
pub fn train_on_dataset(ds: &Dataset, spec: UNetSpec, cfg: &TrainConfig) -> Result<(ModelBundle, TrainingHistory)> {
    let train_set = ds.partition(Partition::Train)?;
    let val_set = ds.partition(Partition::Validation)?;
    let (mut bundle, history) = train(&train_set, &val_set, spec, cfg)?;
    bundle.training.dataset_hash = Some(ds.content_hash().to_string());
    Ok((bundle, history))
}
