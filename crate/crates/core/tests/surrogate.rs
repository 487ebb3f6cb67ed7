mod common;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use urbanwind::evalharness::metrics::mae;
use urbanwind::interface::dataset::{Partition, Sample, SplitSpec};
use urbanwind::raster::{canonicalize, rotate_vector_field, Component, Direction, HeightGrid, NormStats};
use urbanwind::surrogate::{
    predict, predict_batch, predict_directional, train, train_on_dataset, ModelBundle, TrainingMeta, UNet, UNetSpec,
};
use urbanwind::Error;

use common::{quick_config, tiny_dataset, tiny_spec};

fn random_bundle(spec: UNetSpec, component: Component, seed: u64, w: usize) -> ModelBundle {
    let norm = NormStats {
        h_max: 100.0,
        v_scale_u: 3.0,
        v_scale_v: 3.0,
    };
    let meta = TrainingMeta {
        seed,
        epochs_run: 0,
        best_epoch: 0,
        validation_mae: 0.0,
        train_layouts: 0,
        resolution: w,
        cell_size: 1000.0 / w as f64,
        dataset_hash: None,
    };
    ModelBundle::new(UNet::build(spec, seed).unwrap(), component, norm, meta).unwrap()
}

fn layout(w: usize, seed: u64) -> HeightGrid {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * w)
        .map(|_| if rng.random_bool(0.2) { rng.random_range(5.0..90.0) } else { 0.0 })
        .collect();
    HeightGrid::new(w, 1000.0 / w as f64, data).unwrap()
}

fn bits(x: &[f32]) -> Vec<u32> {
    x.iter().map(|v| v.to_bits()).collect()
}

#[test]
fn training_never_reads_the_test_partition() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(
        tmp.path(),
        SplitSpec {
            train: 3,
            validation: 1,
            test: 2,
            seed: 0,
        },
    );
    let (bundle, history) = train_on_dataset(&ds, tiny_spec(), &quick_config(2)).unwrap();
    assert_eq!(history.len(), 2);
    assert_eq!(bundle.training.train_layouts, 3);
    assert_eq!(bundle.training.dataset_hash.as_deref(), Some(ds.content_hash()));
    let log = ds.access_log();
    assert!(!log.contains(&Partition::Test), "{log:?}");
    assert!(log.contains(&Partition::Train) && log.contains(&Partition::Validation));
}

#[test]
fn training_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(
        tmp.path(),
        SplitSpec {
            train: 2,
            validation: 1,
            test: 1,
            seed: 0,
        },
    );
    let a = train_on_dataset(&ds, tiny_spec(), &quick_config(3)).unwrap();
    let b = train_on_dataset(&ds, tiny_spec(), &quick_config(3)).unwrap();
    assert_eq!(a.0.to_bytes(), b.0.to_bytes());
    assert_eq!(a.1, b.1);
}

#[test]
fn overfits_a_single_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(
        tmp.path(),
        SplitSpec {
            train: 1,
            validation: 1,
            test: 1,
            seed: 3,
        },
    );
    let one: Vec<Sample> = ds.partition(Partition::Train).unwrap().into_iter().take(1).collect();
    let spec = UNetSpec {
        depth: 2,
        base_channels: 8,
        kernel: 3,
        ..UNetSpec::default()
    };
    for c in Component::ALL {
        let cfg = urbanwind::surrogate::TrainConfig {
            component: c,
            max_epochs: 600,
            early_stop_patience: 600,
            plateau_patience: 60,
            batch_size: 1,
            ..Default::default()
        };
        // validating on the training pair itself makes the kept weights the best fit
        let (bundle, _) = train(&one, &one, spec, &cfg).unwrap();
        let pred = predict(&bundle, &one[0].grid).unwrap();
        let err = mae(&pred, one[0].field.component(c));
        let bound = 0.02 * bundle.norm.velocity_scale(c) as f64;
        assert!(err < bound, "{c}: training MAE {err:.5} vs bound {bound:.5}");
    }
}

#[test]
fn shuffled_labels_do_not_beat_the_constant_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(
        tmp.path(),
        SplitSpec {
            train: 16,
            validation: 6,
            test: 1,
            seed: 2,
        },
    );
    let mut train_set = ds.partition(Partition::Train).unwrap();
    let val = ds.partition(Partition::Validation).unwrap();
    // permute targets across layouts, keeping each layout's inputs
    let mut fields: Vec<_> = train_set.iter().map(|s| s.field.clone()).collect();
    fields.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    for (s, f) in train_set.iter_mut().zip(fields) {
        s.field = f;
    }
    let c = Component::U;
    let mean = train_set.iter().flat_map(|s| s.field.u.iter()).map(|x| *x as f64).sum::<f64>()
        / (train_set.len() * 256) as f64;
    let baseline = val.iter().map(|s| mae(&vec![mean as f32; 256], &s.field.u)).sum::<f64>() / val.len() as f64;
    let cfg = urbanwind::surrogate::TrainConfig {
        component: c,
        max_epochs: 30,
        ..Default::default()
    };
    let spec = UNetSpec {
        depth: 2,
        base_channels: 4,
        kernel: 3,
        ..UNetSpec::default()
    };
    let (bundle, _) = train(&train_set, &val, spec, &cfg).unwrap();
    // the reported validation MAE is selected on validation, so it is an optimistic bound
    assert!(
        bundle.training.validation_mae > 0.8 * baseline,
        "shuffled-label model {:.4} vs constant baseline {baseline:.4}",
        bundle.training.validation_mae
    );
}

#[test]
fn prediction_is_deterministic_and_batch_invariant() {
    let b = random_bundle(tiny_spec(), Component::U, 4, 16);
    let grids: Vec<HeightGrid> = (0..11).map(|i| layout(16, i)).collect();
    let refs: Vec<&HeightGrid> = grids.iter().collect();
    let batch = predict_batch(&b, &refs).unwrap();
    for (g, p) in grids.iter().zip(&batch) {
        let single = predict(&b, g).unwrap();
        assert_eq!(bits(&single), bits(p));
        assert_eq!(bits(&predict(&b, g).unwrap()), bits(&single));
    }
    let zeros = predict(&b, &HeightGrid::zeros(16, 62.5)).unwrap();
    assert!(zeros.iter().all(|x| x.is_finite()));
}

#[test]
fn wrong_resolution_is_a_shape_error() {
    let b = random_bundle(tiny_spec(), Component::U, 4, 32);
    assert!(matches!(predict(&b, &layout(16, 0)), Err(Error::Shape(_))));
}

#[test]
fn directional_prediction_equivariance() {
    let spec = tiny_spec();
    let u = random_bundle(spec, Component::U, 1, 16);
    let v = random_bundle(spec, Component::V, 2, 16);
    let g = layout(16, 7);

    let north = predict_directional(&u, &v, &g, Direction::N).unwrap();
    assert_eq!(bits(&north.u), bits(&predict(&u, &g).unwrap()));
    assert_eq!(bits(&north.v), bits(&predict(&v, &g).unwrap()));

    // a half-turn maps cell i to cell n - 1 - i
    let mut sym = g.clone();
    let n = sym.data.len();
    for i in 0..n / 2 {
        sym.data[n - 1 - i] = sym.data[i];
    }
    assert_eq!(canonicalize(&sym, Direction::S), sym);
    let n = predict_directional(&u, &v, &sym, Direction::N).unwrap();
    let s = predict_directional(&u, &v, &sym, Direction::S).unwrap();
    let rotated = rotate_vector_field(&n, 2);
    assert_eq!(bits(&s.u), bits(&rotated.u));
    assert_eq!(bits(&s.v), bits(&rotated.v));

    assert!(matches!(predict_directional(&v, &u, &g, Direction::N), Err(Error::Validation(_))));
}

fn median_and_max(mut times: Vec<f64>) -> (f64, f64) {
    times.sort_by(f64::total_cmp);
    (times[times.len() / 2], times[times.len() - 1])
}

#[test]
fn desk_resolution_latency() {
    let u = random_bundle(UNetSpec::default(), Component::U, 1, 64);
    let v = random_bundle(UNetSpec::default(), Component::V, 2, 64);
    let g = layout(64, 3);
    let single: Vec<f64> = (0..100)
        .map(|_| {
            let t = Instant::now();
            predict(&u, &g).unwrap();
            t.elapsed().as_secs_f64()
        })
        .collect();
    let both: Vec<f64> = (0..20)
        .map(|i| {
            let t = Instant::now();
            predict_directional(&u, &v, &g, Direction::ALL[i % 4]).unwrap();
            t.elapsed().as_secs_f64()
        })
        .collect();
    let (median, max) = median_and_max(single);
    let (both_median, both_max) = median_and_max(both);
    println!(
        "64x64 predict: median {:.1} ms, max {:.1} ms; U and V with rotation: median {:.1} ms, max {:.1} ms",
        median * 1e3,
        max * 1e3,
        both_median * 1e3,
        both_max * 1e3
    );
    assert!(median < 0.05 && max < 1.0);
    assert!(both_max < 1.0);
}
