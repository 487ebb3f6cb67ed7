use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use urbanwind_autodiff::{grad_check, Tape, Tensor, Var};

const STEP: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero by `margin`, so relu/abs kinks are never crossed.
fn away_from_zero(shape: &[usize], margin: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(margin..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Distinct values spaced far apart relative to the step, so max-pool argmax is stable.
fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut levels: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    levels.shuffle(rng);
    Tensor::new(shape, levels).unwrap()
}

fn weights(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Reduces any tensor to a scalar with fixed random weights, a linear functional
/// with no kinks of its own.
fn project(tape: &mut Tape<f64>, y: Var, w: &[f64]) -> Var {
    tape.weighted_sum(y, w).unwrap()
}

#[test]
fn linear_graph_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[2, 3, 4, 4], &mut rng);
    let y = random(&[2, 3, 4, 4], &mut rng);
    // gradient entries of order one keep round-off far below the tolerance
    let w = away_from_zero(&[96], 0.5, &mut rng).into_data();
    let report = grad_check(
        |t, v| {
            let a = t.scale(v[0], 2.5);
            let s = t.add(a, v[1])?;
            Ok(project(t, s, &w))
        },
        &[x, y],
        STEP,
    )
    .unwrap();
    assert_eq!(report.checked, 192);
    assert!(report.max_relative_error < 1e-9, "{report:?}");
}

#[test]
fn conv_relu_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // redraw until no pre-activation sits near the relu kink
    let (x, w, b) = loop {
        let x = random(&[2, 3, 6, 6], &mut rng);
        let w = random(&[4, 3, 5, 5], &mut rng);
        let b = random(&[4], &mut rng);
        let mut tape = Tape::new();
        let v = [tape.leaf(x.clone(), false), tape.leaf(w.clone(), false), tape.leaf(b.clone(), false)];
        let y = tape.conv2d(v[0], v[1], v[2]).unwrap();
        if tape.value(y).data().iter().all(|z| z.abs() > 1e-2) {
            break (x, w, b);
        }
    };
    let proj = weights(2 * 4 * 36, &mut rng);
    let report = grad_check(
        |t, v| {
            let y = t.conv2d(v[0], v[1], v[2])?;
            let y = t.relu(y);
            Ok(project(t, y, &proj))
        },
        &[x, w, b],
        STEP,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-5, "{report:?}");
}

#[test]
fn mae_and_l1_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let target = random(&[1, 2, 4, 4], &mut rng);
    let diff = away_from_zero(&[1, 2, 4, 4], 0.05, &mut rng);
    let pred = Tensor::new(target.shape(), target.data().iter().zip(diff.data()).map(|(a, b)| a + b).collect()).unwrap();
    let w = away_from_zero(&[3, 2, 3, 3], 0.05, &mut rng);
    let report = grad_check(
        |t, v| {
            let m = t.mae_loss(v[0], v[1])?;
            let p = t.l1_penalty(&[v[2]], 0.3);
            t.add(m, p)
        },
        &[pred, target, w],
        STEP,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-6, "{report:?}");
}

fn check_unary(op: &str, x: Tensor<f64>, seed: u64) -> f64 {
    let mut probe = Tape::new();
    let xv = probe.leaf(x.clone(), false);
    let out_len = apply(op, &mut probe, xv).map(|y| probe.value(y).len()).unwrap();
    let w = weights(out_len, &mut ChaCha8Rng::seed_from_u64(seed));
    grad_check(
        |t, v| {
            let y = apply(op, t, v[0])?;
            Ok(project(t, y, &w))
        },
        &[x],
        STEP,
    )
    .unwrap()
    .max_relative_error
}

fn apply(op: &str, t: &mut Tape<f64>, x: Var) -> urbanwind_autodiff::Result<Var> {
    match op {
        "relu" => Ok(t.relu(x)),
        "maxpool2" => t.maxpool2(x),
        "upsample2" => t.upsample2(x),
        "scale" => Ok(t.scale(x, -1.7)),
        _ => unreachable!(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn conv_gradients(n in 1usize..3, cin in 1usize..4, cout in 1usize..4, half in 0usize..3, h in 2usize..7, w in 2usize..7, seed in any::<u64>()) {
        let k = 2 * half + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [random(&[n, cin, h, w], &mut rng), random(&[cout, cin, k, k], &mut rng), random(&[cout], &mut rng)];
        let proj = weights(n * cout * h * w, &mut rng);
        let report = grad_check(|t, v| {
            let y = t.conv2d(v[0], v[1], v[2])?;
            Ok(project(t, y, &proj))
        }, &inputs, STEP).unwrap();
        prop_assert!(report.max_relative_error < 1e-6, "{:?}", report);
    }

    #[test]
    fn relu_gradients(n in 1usize..3, c in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let x = away_from_zero(&[n, c, h, w], 0.01, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(check_unary("relu", x, seed) < 1e-6);
    }

    #[test]
    fn maxpool_gradients(n in 1usize..3, c in 1usize..4, h in 1usize..4, w in 1usize..4, seed in any::<u64>()) {
        let x = distinct(&[n, c, 2 * h, 2 * w], &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(check_unary("maxpool2", x, seed) < 1e-6);
    }

    #[test]
    fn upsample_and_scale_gradients(n in 1usize..3, c in 1usize..4, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        let x = random(&[n, c, h, w], &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(check_unary("upsample2", x.clone(), seed) < 1e-6);
        prop_assert!(check_unary("scale", x, seed) < 1e-6);
    }

    #[test]
    fn concat_gradients(n in 1usize..3, ca in 0usize..3, cb in 1usize..3, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [random(&[n, ca, h, w], &mut rng), random(&[n, cb, h, w], &mut rng)];
        let proj = weights(n * (ca + cb) * h * w, &mut rng);
        let report = grad_check(|t, v| {
            let y = t.concat_channels(v[0], v[1])?;
            Ok(project(t, y, &proj))
        }, &inputs, STEP).unwrap();
        prop_assert!(report.max_relative_error < 1e-6, "{:?}", report);
    }

    #[test]
    fn mae_gradients(len in 1usize..40, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random(&[len], &mut rng);
        let d = away_from_zero(&[len], 0.01, &mut rng);
        let p = Tensor::new(&[len], t.data().iter().zip(d.data()).map(|(a, b)| a + b).collect()).unwrap();
        let report = grad_check(|tape, v| tape.mae_loss(v[0], v[1]), &[p, t], STEP).unwrap();
        prop_assert!(report.max_relative_error < 1e-6, "{:?}", report);
    }
}
