mod common;

use proptest::prelude::*;
use urbanwind::evalharness::metrics::{average_ranks, spearman};
use urbanwind::evalharness::{
    comfort_of_field, dataset_stats, density_correlation, density_study_on, evaluate, size_study, StudyConfig,
    StudyRunner,
};
use urbanwind::interface::dataset::{Dataset, Partition, SplitSpec};
use urbanwind::interface::field::decode_field;
use urbanwind::raster::{Direction, HeightGrid, VelocityField};
use urbanwind::registry::{build_predictor, build_selector, ConstantPredictor, Predictor, PredictorArgs};

use common::{quick_config, tiny_dataset, tiny_spec};

fn split(train: usize, validation: usize, test: usize) -> SplitSpec {
    SplitSpec {
        train,
        validation,
        test,
        seed: 4,
    }
}

fn study_config(seeds: Vec<u64>, epochs: usize) -> StudyConfig {
    StudyConfig {
        spec: tiny_spec(),
        train: quick_config(epochs),
        seeds,
        memoize: true,
    }
}

/// Independent single-loop MAE of a predictor over the test fields, read
/// straight from the files on disk.
fn recompute_mae(ds: &Dataset, p: &dyn Predictor) -> (f64, f64) {
    let (mut su, mut sv, mut n) = (0.0f64, 0.0f64, 0usize);
    for case in ds.manifest.cases.iter().filter(|c| ds.manifest.split.test.contains(&c.tile)) {
        let bytes = std::fs::read(ds.dir.join(&case.file)).unwrap();
        let truth = decode_field(&bytes, ds.manifest.cell_size).unwrap();
        let pred = p.predict(&ds.height_grid(case.tile, case.direction).unwrap()).unwrap();
        for i in 0..truth.u.len() {
            su += (pred.u[i] as f64 - truth.u[i] as f64).abs();
            sv += (pred.v[i] as f64 - truth.v[i] as f64).abs();
        }
        n += truth.u.len();
    }
    (su / n as f64, sv / n as f64)
}

#[test]
fn zero_and_mean_baselines_have_closed_forms() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(tmp.path(), split(4, 1, 3));
    let test = ds.partition(Partition::Test).unwrap();

    let zero = build_predictor("zero", PredictorArgs::default()).unwrap();
    let report = evaluate(&[(zero.as_ref(), None)], &test, None).unwrap();
    let cells = (test.len() * 256) as f64;
    let mean_abs_u = test.iter().flat_map(|s| &s.field.u).map(|x| x.abs() as f64).sum::<f64>() / cells;
    let mean_abs_v = test.iter().flat_map(|s| &s.field.v).map(|x| x.abs() as f64).sum::<f64>() / cells;
    assert!((report.u.mean - mean_abs_u).abs() < 1e-9);
    assert!((report.v.mean - mean_abs_v).abs() < 1e-9);
    assert_eq!(report.u.std, 0.0);

    let stats = dataset_stats(&ds.partition(Partition::Train).unwrap()).unwrap();
    let args = PredictorArgs {
        train_means: Some((stats.u.mean, stats.v.mean)),
        ..Default::default()
    };
    let mean = build_predictor("mean", args).unwrap();
    let report = evaluate(&[(mean.as_ref(), None)], &test, None).unwrap();
    let (mu, mv) = (stats.u.mean as f32, stats.v.mean as f32);
    let dev_u = test.iter().flat_map(|s| &s.field.u).map(|x| (x - mu).abs() as f64).sum::<f64>() / cells;
    let dev_v = test.iter().flat_map(|s| &s.field.v).map(|x| (x - mv).abs() as f64).sum::<f64>() / cells;
    assert!((report.u.mean - dev_u).abs() < 1e-6);
    assert!((report.v.mean - dev_v).abs() < 1e-6);
}

#[test]
fn harness_mae_matches_recomputation_from_files() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(tmp.path(), split(3, 1, 3));
    let runner = StudyRunner::new(&ds, study_config(vec![0, 1], 2)).unwrap();
    let pool = ds.partition_ids(Partition::Train).to_vec();
    let pairs = runner.model_pairs(&pool).unwrap();
    let report = runner.evaluate_subset(&pool).unwrap();
    assert_eq!(report.replicates.len(), 2);
    for ((_, u, v), rep) in pairs.iter().zip(&report.replicates) {
        let p = urbanwind::registry::SurrogatePredictor {
            u: (**u).clone(),
            v: (**v).clone(),
        };
        let (mu, mv) = recompute_mae(&ds, &p);
        assert!((rep.mean_u - mu).abs() < 1e-9, "{} vs {mu}", rep.mean_u);
        assert!((rep.mean_v - mv).abs() < 1e-9);
    }
    let c = ConstantPredictor {
        label: "c",
        u: 0.3,
        v: -1.1,
    };
    let report = evaluate(&[(&c as &dyn Predictor, None)], &runner.test_samples().unwrap(), None).unwrap();
    let (mu, mv) = recompute_mae(&ds, &c);
    assert!((report.u.mean - mu).abs() < 1e-9 && (report.v.mean - mv).abs() < 1e-9);
}

#[test]
fn memorized_single_case_scores_its_training_residual() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(tmp.path(), split(1, 1, 1));
    let case = ds.partition(Partition::Test).unwrap().remove(0);
    let cfg = urbanwind::surrogate::TrainConfig {
        max_epochs: 5,
        ..Default::default()
    };
    let one = vec![case.clone()];
    let (u, _) = urbanwind::surrogate::train(&one, &one, tiny_spec(), &cfg).unwrap();
    let (v, _) = urbanwind::surrogate::train(
        &one,
        &one,
        tiny_spec(),
        &urbanwind::surrogate::TrainConfig {
            component: urbanwind::raster::Component::V,
            ..cfg
        },
    )
    .unwrap();
    let (res_u, res_v) = (u.training.validation_mae, v.training.validation_mae);
    let p = urbanwind::registry::SurrogatePredictor { u, v };
    let report = evaluate(&[(&p as &dyn Predictor, None)], &one, None).unwrap();
    assert!((report.u.mean - res_u).abs() < 1e-6);
    assert!((report.v.mean - res_v).abs() < 1e-6);
}

#[test]
fn size_study_shape_and_full_pool_degenerate_case() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(tmp.path(), split(8, 2, 2));
    let runner = StudyRunner::new(&ds, study_config(vec![0, 1], 2)).unwrap();
    let result = size_study(&runner, &[2, 4, 6, 8]).unwrap();
    assert_eq!(result.rows.len(), 4);
    for r in &result.rows {
        assert_eq!(r.per_seed.len(), 2);
        assert!(r.u.mean.is_finite() && r.u.std.is_finite() && r.v.mean.is_finite() && r.v.std.is_finite());
    }
    assert!(result.slope_u.is_finite() && result.slope_v.is_finite());

    let single = StudyRunner::new(&ds, study_config(vec![3], 2)).unwrap();
    let full = size_study(&single, &[8]).unwrap();
    let pool = ds.partition_ids(Partition::Train).to_vec();
    let (_, u, v) = single.model_pairs(&pool).unwrap().remove(0);
    let p = urbanwind::registry::SurrogatePredictor {
        u: (*u).clone(),
        v: (*v).clone(),
    };
    let direct = evaluate(&[(&p as &dyn Predictor, Some(3))], &ds.partition(Partition::Test).unwrap(), None).unwrap();
    assert_eq!(full.rows[0].u.mean, direct.u.mean);
    assert_eq!(full.rows[0].v.mean, direct.v.mean);
    assert!(matches!(size_study(&single, &[4, 2]), Err(urbanwind::Error::Validation(_))));
    assert!(matches!(size_study(&single, &[9]), Err(urbanwind::Error::Validation(_))));
}

#[test]
fn density_study_table_and_full_pool_equality() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(tmp.path(), split(6, 2, 2));
    let runner = StudyRunner::new(&ds, study_config(vec![0], 2)).unwrap();
    let pool = runner.train_pool().unwrap();
    let table = density_study_on(&runner, &pool, &[2, 4], "densest-count").unwrap();
    assert_eq!(table.rows.len(), 4);
    let labels: Vec<(usize, &str)> = table.rows.iter().map(|r| (r.size, r.selector.as_str())).collect();
    assert_eq!(labels, vec![(2, "random"), (2, "densest-count"), (4, "random"), (4, "densest-count")]);

    let cfg = StudyConfig {
        memoize: false,
        ..study_config(vec![0], 2)
    };
    let fresh = StudyRunner::new(&ds, cfg).unwrap();
    let full = density_study_on(&fresh, &pool, &[6], "densest-count").unwrap();
    assert_eq!(fresh.jobs_trained(), 4);
    let (a, b) = (&full.rows[0], &full.rows[1]);
    assert_eq!(a.u.mean.to_bits(), b.u.mean.to_bits());
    assert_eq!(a.v.mean.to_bits(), b.v.mean.to_bits());
}

#[test]
fn dense_selector_matches_brute_force_sort() {
    let tiles = common::random_tiles(30, 8);
    let refs: Vec<_> = tiles.iter().collect();
    let picked = build_selector("densest-count").unwrap().select(&refs, 7, 0).unwrap();
    // brute force: a tile is picked iff fewer than 7 tiles beat it
    let beats = |a: &urbanwind::geomodel::Tile, b: &urbanwind::geomodel::Tile| {
        a.building_count() > b.building_count() || (a.building_count() == b.building_count() && a.id < b.id)
    };
    let mut expect: Vec<usize> = tiles
        .iter()
        .filter(|t| tiles.iter().filter(|o| beats(o, t)).count() < 7)
        .map(|t| t.id)
        .collect();
    expect.sort();
    assert_eq!(picked, expect);
}

#[test]
fn correlation_uses_per_layout_means() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(tmp.path(), split(2, 1, 5));
    let c = ConstantPredictor {
        label: "c",
        u: 0.0,
        v: -2.0,
    };
    let report = evaluate(&[(&c as &dyn Predictor, None)], &ds.partition(Partition::Test).unwrap(), None).unwrap();
    let corr = density_correlation(&report, |id| ds.tile(id)).unwrap();
    assert_eq!(corr.points.len(), 5);
    let counts: Vec<f64> = corr.points.iter().map(|p| p.building_count as f64).collect();
    let mae_u: Vec<f64> = corr.points.iter().map(|p| p.mae_u).collect();
    assert_eq!(corr.rho_u, brute_spearman(&counts, &mae_u));
}

/// Rank of each value as 1 + (count below) + (ties - 1) / 2, computed by
/// comparing all pairs.
fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|a| {
            let below = x.iter().filter(|b| *b < a).count() as f64;
            let equal = x.iter().filter(|b| *b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (brute_ranks(x), brute_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

#[test]
fn spearman_hand_cases() {
    assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[0.3, 0.3, 0.3, 0.3]), 0.0);
    let counts = [3.0, 1.0, 7.0, 5.0, 2.0];
    assert!((spearman(&counts, &counts) - 1.0).abs() < 1e-15);
    assert_eq!(average_ranks(&[10.0, 20.0, 10.0]), vec![1.5, 3.0, 1.5]);
}

proptest! {
    #[test]
    fn spearman_equals_pairwise_rank_oracle(
        pairs in prop::collection::vec((0u8..6, -3i8..3), 3..40)
    ) {
        // small integer ranges force plenty of ties
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64 * 0.25).collect();
        prop_assert_eq!(average_ranks(&x), brute_ranks(&x));
        prop_assert_eq!(spearman(&x, &y).to_bits(), brute_spearman(&x, &y).to_bits());
    }

    #[test]
    fn comfort_mask_matches_elementwise_recomputation(
        u in prop::collection::vec(-3.0f32..3.0, 256),
        v in prop::collection::vec(-3.0f32..3.0, 256),
        buildings in prop::collection::vec(prop::bool::weighted(0.2), 256),
        t1 in 0.0f64..3.0,
        dt in 0.0f64..1.0,
    ) {
        let field = VelocityField { resolution: 16, cell_size: 62.5, u, v, cut_height: 1.2 };
        let grid = HeightGrid::new(16, 62.5, buildings.iter().map(|b| if *b { 20.0 } else { 0.0 }).collect()).unwrap();
        let low = comfort_of_field(&field, &grid, Direction::N, t1);
        let high = comfort_of_field(&field, &grid, Direction::N, t1 + dt);
        let open = buildings.iter().filter(|b| !**b).count();
        let mut hits = 0;
        for i in 0..256 {
            let expect = !buildings[i] && low.magnitude[i] as f64 >= t1;
            prop_assert_eq!(low.mask[i], expect);
            hits += expect as usize;
            // raising the threshold never adds cells
            prop_assert!(!high.mask[i] || low.mask[i]);
            let m = ((field.u[i] as f64).powi(2) + (field.v[i] as f64).powi(2)).sqrt();
            prop_assert!((low.magnitude[i] as f64 - m).abs() < 1e-6);
        }
        let frac = if open == 0 { 0.0 } else { hits as f64 / open as f64 };
        prop_assert_eq!(low.fraction, frac);
    }
}

#[test]
fn comfort_hand_cases() {
    let grid = HeightGrid::new(16, 62.5, (0..256).map(|i| if i % 5 == 0 { 10.0 } else { 0.0 }).collect()).unwrap();
    let uniform = VelocityField::uniform(16, 62.5, 0.0, -2.0);
    let c = comfort_of_field(&uniform, &grid, Direction::N, 1.5);
    for i in 0..256 {
        assert_eq!(c.mask[i], i % 5 != 0);
    }
    assert_eq!(c.fraction, 1.0);
    let still = comfort_of_field(&VelocityField::uniform(16, 62.5, 0.0, 0.0), &grid, Direction::E, 1.5);
    assert!(still.mask.iter().all(|m| !m));
    assert_eq!(still.fraction, 0.0);
}

#[test]
fn dataset_stats_oracles() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(tmp.path(), split(3, 1, 1));
    let samples = ds.partition(Partition::Train).unwrap();
    let stats = dataset_stats(&samples).unwrap();
    assert!(stats.v.mean < 0.0, "inflow is in -v, got mean {}", stats.v.mean);

    let two = &samples[..2];
    let vals: Vec<f64> = two.iter().flat_map(|s| &s.field.u).map(|x| *x as f64).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let std = (vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    let s2 = dataset_stats(two).unwrap();
    assert!((s2.u.mean - mean).abs() < 1e-12);
    assert!((s2.u.std - std).abs() < 1e-12);
    assert_eq!(s2.u.max, vals.iter().cloned().fold(f64::MIN, f64::max));

    let mut one = samples[0].clone();
    one.field = VelocityField::uniform(16, 62.5, 0.0, -2.0);
    let s1 = dataset_stats(&[one]).unwrap();
    assert_eq!((s1.u.mean, s1.u.std, s1.v.mean, s1.v.std), (0.0, 0.0, -2.0, 0.0));
}
