//! Finite-difference checks for every differentiable op.
//!
//! Each case rebuilds the same graph from a single flat parameter vector, so
//! the analytic gradient from the tape and the central-difference gradient
//! come from identical code paths. Shapes are randomized per seed.

use ape_tensor::gradcheck::{central_diff, max_rel_err};
use ape_tensor::{Mode, SplitRng, Tape, Tensor};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-6;
const FLOOR: f64 = 1e-4;

/// Slice `shape.iter().product()` values out of the flat root and reshape.
fn piece(
    tape: &Tape<f64>,
    root: &Tensor<f64>,
    start: usize,
    shape: &[usize],
) -> (Tensor<f64>, usize) {
    let n: usize = shape.iter().product();
    let flat = tape.slice_cols(root, start, start + n).unwrap();
    (tape.reshape(&flat, shape).unwrap(), start + n)
}

/// Square loss over any tensor: sum(y * y). Non-linear, so gradient checks
/// see value-dependent gradients.
fn square_loss(tape: &Tape<f64>, y: &Tensor<f64>) -> Tensor<f64> {
    let sq = tape.mul(y, y).unwrap();
    tape.sum_all(&sq).unwrap()
}

fn fd_check(name: &str, x0: &[f64], build: impl Fn(&Tape<f64>, &Tensor<f64>) -> Tensor<f64>) {
    let n = x0.len();
    let root = Tensor::param(x0.to_vec(), &[1, n]).unwrap();
    let tape = Tape::new(Mode::Train);
    let loss = build(&tape, &root);
    tape.backward(&loss).unwrap();
    let analytic = root.grad().unwrap();

    let mut f = |p: &[f64]| {
        let root = Tensor::param(p.to_vec(), &[1, n]).unwrap();
        let tape = Tape::new(Mode::Train);
        build(&tape, &root).item()
    };
    let numeric = central_diff(&mut f, x0, EPS);
    let err = max_rel_err(&analytic, &numeric, FLOOR);
    assert!(err < TOL, "{name}: max relative error {err:.3e} >= {TOL:.0e}");
}

fn uniform_vec(rng: &mut SplitRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(lo, hi)).collect()
}

#[test]
fn matmul_gradients() {
    for seed in 0..5u64 {
        let mut rng = SplitRng::seed(100 + seed);
        let (m, k, n) = (rng.below(8) + 1, rng.below(8) + 1, rng.below(8) + 1);
        let x0 = uniform_vec(&mut rng, m * k + k * n, -1.5, 1.5);
        fd_check("matmul", &x0, move |tape, root| {
            let (a, at) = piece(tape, root, 0, &[m, k]);
            let (b, _) = piece(tape, root, at, &[k, n]);
            let c = tape.matmul(&a, &b).unwrap();
            square_loss(tape, &c)
        });
    }
}

#[test]
fn elementwise_gradients() {
    for seed in 0..3u64 {
        let mut rng = SplitRng::seed(200 + seed);
        let (r, c) = (rng.below(6) + 1, rng.below(6) + 1);
        let x0 = uniform_vec(&mut rng, 2 * r * c, -1.2, 1.2);
        fd_check("add/mul/scale", &x0, move |tape, root| {
            let (a, at) = piece(tape, root, 0, &[r, c]);
            let (b, _) = piece(tape, root, at, &[r, c]);
            let s = tape.add(&a, &b).unwrap();
            let p = tape.mul(&s, &b).unwrap();
            let y = tape.scale(&p, 0.7).unwrap();
            square_loss(tape, &y)
        });
    }
}

#[test]
fn relu_gradients_away_from_kink() {
    for seed in 0..3u64 {
        let mut rng = SplitRng::seed(300 + seed);
        let n = rng.below(20) + 4;
        // Keep every coordinate at least 0.2 from zero so the finite
        // difference never straddles the kink.
        let x0: Vec<f64> = (0..n)
            .map(|_| {
                let mag = rng.uniform(0.2, 1.5);
                if rng.unit() < 0.5 {
                    -mag
                } else {
                    mag
                }
            })
            .collect();
        fd_check("relu", &x0, |tape, root| {
            let y = tape.relu(root).unwrap();
            square_loss(tape, &y)
        });
    }
}

#[test]
fn bias_and_transpose_gradients() {
    for seed in 0..3u64 {
        let mut rng = SplitRng::seed(400 + seed);
        let (r, c) = (rng.below(6) + 1, rng.below(6) + 2);
        let x0 = uniform_vec(&mut rng, r * c + c, -1.0, 1.0);
        fd_check("add_bias/transpose", &x0, move |tape, root| {
            let (x, at) = piece(tape, root, 0, &[r, c]);
            let (b, _) = piece(tape, root, at, &[c]);
            let y = tape.add_bias(&x, &b).unwrap();
            let t = tape.transpose(&y).unwrap();
            square_loss(tape, &t)
        });
    }
}

#[test]
fn softmax_gradients_along_both_axes() {
    for seed in 0..3u64 {
        for axis in [0usize, 1] {
            let mut rng = SplitRng::seed(500 + seed);
            let (r, c) = (rng.below(5) + 2, rng.below(6) + 2);
            let x0 = uniform_vec(&mut rng, r * c, -2.0, 2.0);
            let w = Tensor::from_vec(uniform_vec(&mut rng, r * c, -1.0, 1.0), &[r, c]).unwrap();
            fd_check("softmax", &x0, move |tape, root| {
                let (x, _) = piece(tape, root, 0, &[r, c]);
                let y = tape.softmax(&x, axis).unwrap();
                let weighted = tape.mul(&y, &w).unwrap();
                tape.sum_all(&weighted).unwrap()
            });
        }
    }
}

#[test]
fn log_softmax_gradients() {
    for seed in 0..3u64 {
        let mut rng = SplitRng::seed(600 + seed);
        let (r, c) = (rng.below(5) + 1, rng.below(6) + 2);
        let x0 = uniform_vec(&mut rng, r * c, -2.0, 2.0);
        let w = Tensor::from_vec(uniform_vec(&mut rng, r * c, -1.0, 1.0), &[r, c]).unwrap();
        fd_check("log_softmax", &x0, move |tape, root| {
            let (x, _) = piece(tape, root, 0, &[r, c]);
            let y = tape.log_softmax(&x).unwrap();
            let weighted = tape.mul(&y, &w).unwrap();
            tape.sum_all(&weighted).unwrap()
        });
    }
}

#[test]
fn layer_norm_gradients() {
    for seed in 0..3u64 {
        let mut rng = SplitRng::seed(700 + seed);
        let (r, d) = (rng.below(5) + 1, rng.below(6) + 2);
        let x0 = uniform_vec(&mut rng, r * d + 2 * d, -1.5, 1.5);
        fd_check("layer_norm", &x0, move |tape, root| {
            let (x, at) = piece(tape, root, 0, &[r, d]);
            let (gain, at) = piece(tape, root, at, &[d]);
            let (bias, _) = piece(tape, root, at, &[d]);
            let y = tape.layer_norm(&x, &gain, &bias, 1e-5).unwrap();
            square_loss(tape, &y)
        });
    }
}

#[test]
fn embedding_gradients_with_repeated_ids() {
    for seed in 0..3u64 {
        let mut rng = SplitRng::seed(800 + seed);
        let (v, d) = (rng.below(6) + 2, rng.below(5) + 1);
        let ids: Vec<u32> = (0..6).map(|_| rng.below(v) as u32).collect();
        let x0 = uniform_vec(&mut rng, v * d, -1.0, 1.0);
        fd_check("embedding", &x0, move |tape, root| {
            let (table, _) = piece(tape, root, 0, &[v, d]);
            let y = tape.embedding_lookup(&table, &ids).unwrap();
            square_loss(tape, &y)
        });
    }
}

#[test]
fn cross_entropy_gradients_smoothed_and_plain() {
    for (seed, epsilon) in [(900u64, 0.0), (901, 0.1), (902, 0.3)] {
        let mut rng = SplitRng::seed(seed);
        let (n, v) = (rng.below(5) + 1, rng.below(6) + 2);
        let targets: Vec<u32> = (0..n).map(|_| rng.below(v) as u32).collect();
        let x0 = uniform_vec(&mut rng, n * v, -2.0, 2.0);
        fd_check("cross_entropy", &x0, move |tape, root| {
            let (logits, _) = piece(tape, root, 0, &[n, v]);
            tape.cross_entropy(&logits, &targets, epsilon).unwrap()
        });
    }
}

#[test]
fn slice_concat_gradients() {
    for seed in 0..3u64 {
        let mut rng = SplitRng::seed(1000 + seed);
        let (r, c) = (rng.below(4) + 2, rng.below(4) + 3);
        let x0 = uniform_vec(&mut rng, r * c, -1.0, 1.0);
        fd_check("slice/concat", &x0, move |tape, root| {
            let (x, _) = piece(tape, root, 0, &[r, c]);
            let left = tape.slice_cols(&x, 0, 1).unwrap();
            let right = tape.slice_cols(&x, 1, c).unwrap();
            let glued = tape.concat_cols(&[&right, &left]).unwrap();
            let top = tape.slice_rows(&glued, 0, 1).unwrap();
            let rows = tape.concat_rows(&[&top, &top]).unwrap();
            square_loss(tape, &rows)
        });
    }
}

#[test]
fn dropout_gradients_with_fixed_mask() {
    let mut rng = SplitRng::seed(1100);
    let n = 24;
    let x0 = uniform_vec(&mut rng, n, -1.0, 1.0);
    // The mask is replayed from the same seed on every evaluation, so the
    // finite difference sees a fixed linear map.
    fd_check("dropout", &x0, move |tape, root| {
        let mut mask_rng = SplitRng::seed(42);
        let y = tape.dropout(root, 0.4, &mut mask_rng).unwrap();
        square_loss(tape, &y)
    });
}

#[test]
fn masked_attention_chain_gradients() {
    // Full single-head attention with a causal mask, end to end.
    for seed in 0..3u64 {
        let mut rng = SplitRng::seed(1200 + seed);
        let (t, d) = (rng.below(4) + 2, rng.below(4) + 2);
        let x0 = uniform_vec(&mut rng, 3 * t * d, -1.0, 1.0);
        let mut mask = vec![0.0f64; t * t];
        for i in 0..t {
            for j in i + 1..t {
                mask[i * t + j] = f64::NEG_INFINITY;
            }
        }
        let mask = Tensor::from_vec(mask, &[t, t]).unwrap();
        fd_check("attention", &x0, move |tape, root| {
            let (q, at) = piece(tape, root, 0, &[t, d]);
            let (k, at) = piece(tape, root, at, &[t, d]);
            let (v, _) = piece(tape, root, at, &[t, d]);
            let kt = tape.transpose(&k).unwrap();
            let scores = tape.matmul(&q, &kt).unwrap();
            let scaled = tape.scale(&scores, 1.0 / (d as f64).sqrt()).unwrap();
            let masked = tape.add(&scaled, &mask).unwrap();
            let probs = tape.softmax(&masked, 1).unwrap();
            let ctx = tape.matmul(&probs, &v).unwrap();
            square_loss(tape, &ctx)
        });
    }
}

#[test]
fn dropout_expectation_matches_identity() {
    let mut rng = SplitRng::seed(1300);
    let n = 20_000;
    let x = Tensor::<f64>::from_vec(vec![1.0; n], &[n]).unwrap();
    let tape = Tape::new(Mode::Train);
    let y = tape.dropout(&x, 0.3, &mut rng).unwrap();
    let mean = y.data().iter().sum::<f64>() / n as f64;
    assert!(
        (mean - 1.0).abs() < 0.02,
        "dropout mean {mean} drifted more than 2% from 1.0"
    );
    // Surviving entries carry exactly 1/(1-p).
    for &v in y.data() {
        assert!(v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-12);
    }
}

#[test]
fn forward_passes_are_bit_deterministic() {
    // Large enough to engage the parallel matmul path; run twice and compare
    // exact bits.
    let run = || {
        let mut rng = SplitRng::seed(77);
        let (m, k, n) = (48, 40, 36);
        let a = Tensor::<f64>::from_vec(uniform_vec(&mut rng, m * k, -1.0, 1.0), &[m, k]).unwrap();
        let b = Tensor::<f64>::from_vec(uniform_vec(&mut rng, k * n, -1.0, 1.0), &[k, n]).unwrap();
        let bias = Tensor::<f64>::from_vec(uniform_vec(&mut rng, n, -1.0, 1.0), &[n]).unwrap();
        let tape = Tape::new(Mode::Infer);
        let c = tape.matmul(&a, &b).unwrap();
        let cb = tape.add_bias(&c, &bias).unwrap();
        let y = tape.softmax(&cb, 1).unwrap();
        y.data().iter().map(|v| v.to_bits()).collect::<Vec<u64>>()
    };
    assert_eq!(run(), run());
}
