use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::DEFAULT_STEP;
use super::*;

fn arr(shape: &[usize], data: &[f64]) -> Array<f64> {
    Array::from_f64(shape.to_vec(), data).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Array<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Array::new(shape.to_vec(), data).unwrap()
}

// A fixed random projection turns any tensor into a scalar whose gradient
// exercises every output coordinate with a distinct weight.
fn project_to_scalar(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var, crate::Error> {
    let shape = tape.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random(&mut rng, &shape, 1.0));
    let prod = tape.mul(y, w)?;
    tape.sum(prod)
}

#[test]
fn gelu_values() {
    let mut t = Tape::new();
    let x = t.constant(arr(&[3], &[0.0, 10.0, 1.0]));
    let y = t.gelu(x).unwrap();
    let v = t.value(y).data();
    assert_eq!(v[0], 0.0);
    assert!((v[1] - 10.0).abs() < 1e-6);
    // 0.5 * (1 + erf(1/sqrt 2)), 30-digit reference
    assert!((v[2] - 0.841_344_746_068_542_9).abs() < 1e-5);

    let mut t32 = Tape::<f32>::new();
    let x = t32.constant(Array::from_f64(vec![1], &[1.0]).unwrap());
    let y = t32.gelu(x).unwrap();
    assert!((t32.value(y).item() as f64 - 0.841_344_746).abs() < 1e-5);
}

#[test]
fn softmax_examples() {
    let mut t = Tape::new();
    let x = t.constant(arr(&[2, 3], &[5.0, 5.0, 5.0, 2f64.ln(), 0.0, -1e4]));
    let p = t.softmax_rows(x, 0.7).unwrap();
    let v = t.value(p).data();
    for &u in &v[..3] {
        assert!((u - 1.0 / 3.0).abs() < 1e-12);
    }
    let x = t.constant(arr(&[1, 2], &[2f64.ln(), 0.0]));
    let p = t.softmax_rows(x, 1.0).unwrap();
    let v = t.value(p).data();
    assert!((v[0] - 2.0 / 3.0).abs() < 1e-6 && (v[1] - 1.0 / 3.0).abs() < 1e-6);
    assert!(t.softmax_rows(x, 0.0).is_err());
    assert!(t.softmax_rows(x, -1.0).is_err());
}

#[test]
fn softmax_extreme_logits_stay_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut t = Tape::<f32>::new();
    for _ in 0..50 {
        let data: Vec<f64> = (0..16).map(|_| if rng.random_bool(0.5) { 1e4 } else { -1e4 } * rng.random::<f64>()).collect();
        let x = t.constant(Array::from_f64(vec![4, 4], &data).unwrap());
        for tau in [0.04f32, 0.1, 1.0] {
            let p = t.softmax_rows(x, tau).unwrap();
            for row in t.value(p).data().chunks(4) {
                assert!(row.iter().all(|v| v.is_finite()));
                assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            }
            let lp = t.log_softmax_rows(x, tau).unwrap();
            assert!(t.value(lp).data().iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn l2_normalize_examples() {
    let mut t = Tape::new();
    let x = t.constant(arr(&[2, 2], &[3.0, 4.0, 0.6, 0.8]));
    let y = t.l2_normalize_rows(x).unwrap();
    let v = t.value(y).data().to_vec();
    assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
    assert!((v[2] - 0.6).abs() < 1e-12 && (v[3] - 0.8).abs() < 1e-12);
    let z = t.l2_normalize_rows(y).unwrap();
    assert!(t.value(z).max_abs_diff(t.value(y)) < 1e-6);

    let zero = t.constant(arr(&[2, 2], &[1.0, 0.0, 0.0, 1e-9]));
    match t.l2_normalize_rows(zero) {
        Err(crate::Error::DegenerateEmbedding { row, .. }) => assert_eq!(row, 1),
        other => panic!("expected degenerate embedding, got {other:?}"),
    }
}

#[test]
fn l2_normalize_is_idempotent_on_random_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut t = Tape::<f32>::new();
    for _ in 0..20 {
        let x = t.constant(random(&mut rng, &[5, 7], 10.0).cast());
        let y = t.l2_normalize_rows(x).unwrap();
        let z = t.l2_normalize_rows(y).unwrap();
        assert!(t.value(z).max_abs_diff(t.value(y)) < 1e-6);
        for row in t.value(y).data().chunks(7) {
            let n: f32 = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn cross_entropy_examples() {
    let mut t = Tape::new();
    // uniform target against uniform log-probs -> ln n
    let n = 5;
    let target = Array::filled(&[2, n], 1.0 / n as f64);
    let lq = t.param(Array::filled(&[2, n], -(n as f64).ln()));
    let ce = t.cross_entropy_rows(&target, lq).unwrap();
    assert!((t.value(ce).item() - (n as f64).ln()).abs() < 1e-12);

    // one-hot target with log q = 0 at the hot index
    let target = arr(&[1, 3], &[0.0, 1.0, 0.0]);
    let lq = t.param(arr(&[1, 3], &[-30.0, 0.0, -2.0]));
    let ce = t.cross_entropy_rows(&target, lq).unwrap();
    assert_eq!(t.value(ce).item(), 0.0);

    // fixture evaluated at 30 digits
    let target = arr(&[2, 3], &[0.2, 0.3, 0.5, 1.0, 0.0, 0.0]);
    let logits = t.param(arr(&[2, 3], &[0.1, -0.4, 1.2, 2.0, 0.5, -1.0]));
    let lq = t.log_softmax_rows(logits, 1.0).unwrap();
    let ce = t.cross_entropy_rows(&target, lq).unwrap();
    assert!((t.value(ce).item() - 0.684_845_133_342_771).abs() < 1e-6);

    assert!(t.cross_entropy_rows(&Array::filled(&[1, 3], 1.0 / 3.0), lq).is_err());
    let g = t.backward(ce).unwrap();
    assert!(g.get(logits).is_some());
}

#[test]
fn core_op_examples() {
    let mut t = Tape::new();
    let eye = t.constant(arr(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let a = t.constant(arr(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let c = t.matmul(eye, a).unwrap();
    assert_eq!(t.value(c), t.value(a));
    assert!(t.matmul(a, a).is_err());
    assert!(t.add(a, eye).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = t.constant(random(&mut rng, &[4, 8], 3.0));
    let g = t.constant(Array::filled(&[8], 1.0));
    let b = t.constant(Array::zeros(&[8]));
    let y = t.layer_norm(x, g, b).unwrap();
    for row in t.value(y).data().chunks(8) {
        let m = row.iter().sum::<f64>() / 8.0;
        let v = row.iter().map(|u| (u - m) * (u - m)).sum::<f64>() / 8.0;
        assert!(m.abs() < 1e-5);
        assert!((v - 1.0).abs() < 1e-4);
    }

    let s = t.slice(a, 1, 1, 3).unwrap();
    assert_eq!(t.value(s).data(), &[2.0, 3.0, 5.0, 6.0]);
    let cat = t.concat(&[a, s], 1).unwrap();
    assert_eq!(t.shape(cat), &[2, 5]);
    assert_eq!(t.value(cat).data(), &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0, 5.0, 6.0, 5.0, 6.0]);
    let p = t.permute(a, &[1, 0]).unwrap();
    assert_eq!(t.value(p).data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    let m = t.mean(a).unwrap();
    assert_eq!(t.value(m).item(), 3.5);
}

#[test]
fn backward_examples() {
    let mut t = Tape::new();
    let x = t.param(arr(&[3], &[0.5, -2.0, 9.0]));
    let s = t.sum(x).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

    let mut t = Tape::new();
    let x = t.param(arr(&[2], &[1.0, 2.0]));
    let sq = t.mul(x, x).unwrap();
    let s = t.sum(sq).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);

    assert!(t.backward(sq).is_err());
}

#[test]
fn fan_out_accumulates_per_path() {
    // y = a*x, z = b*x, loss = sum(y) + sum(x ⊙ z): x is shared by three paths
    let mut t = Tape::new();
    let x = t.param(arr(&[2], &[1.5, -0.5]));
    let y = t.scale(x, 3.0).unwrap();
    let z = t.scale(x, 2.0).unwrap();
    let xz = t.mul(x, z).unwrap();
    let sum_y = t.sum(y).unwrap();
    let sum_xz = t.sum(xz).unwrap();
    let loss = t.add(sum_y, sum_xz).unwrap();
    let g = t.backward(loss).unwrap();
    // d/dx [3x + 2x²] = 3 + 4x
    assert_eq!(g.get(x).unwrap().data(), &[3.0 + 4.0 * 1.5, 3.0 + 4.0 * -0.5]);
}

#[test]
fn constants_and_detached_nodes_get_no_gradient() {
    let mut t = Tape::new();
    let x = t.param(arr(&[2], &[1.0, 2.0]));
    let c = t.constant(arr(&[2], &[3.0, 4.0]));
    let d = t.detach(x);
    let a = t.mul(x, c).unwrap();
    let b = t.mul(a, d).unwrap();
    let s = t.sum(b).unwrap();
    let g = t.backward(s).unwrap();
    assert!(g.get(c).is_none());
    assert!(g.get(d).is_none());
    assert_eq!(g.get(x).unwrap().data(), &[3.0, 8.0]);
}

#[test]
fn unreached_trainable_leaves_get_zero_gradient() {
    let mut t = Tape::new();
    let x = t.param(arr(&[2], &[1.0, 2.0]));
    let unused = t.param(arr(&[3], &[1.0, 2.0, 3.0]));
    let s = t.sum(x).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(unused).unwrap().data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn linear_op_grad_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[3, 4], 1.0);
    let err = grad_check(|t, v| project_to_scalar(t, v, 9), &x, DEFAULT_STEP).unwrap();
    assert!(err < 1e-10, "{err}");
}

/// Every op, 20 random inputs each, central differences in f64.
#[test]
fn every_op_passes_grad_check() {
    type OpFn = Box<dyn Fn(&mut Tape<f64>, Var) -> Result<Var, crate::Error>>;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let w = random(&mut rng, &[4, 5], 1.0);
    let w3 = random(&mut rng, &[2, 4, 3], 1.0);
    let row = random(&mut rng, &[4], 1.0);
    let gamma = random(&mut rng, &[4], 1.0);
    let beta = random(&mut rng, &[4], 1.0);
    let target = {
        let mut tape = Tape::new();
        let l = tape.constant(random(&mut rng, &[3, 4], 2.0));
        let p = tape.softmax_rows(l, 1.0).unwrap();
        tape.value(p).clone()
    };
    let ops: Vec<(&str, OpFn)> = vec![
        ("matmul", Box::new({
            let w = w.clone();
            move |t, x| {
                let wv = t.param(w.clone());
                let y = t.matmul(x, wv)?;
                project_to_scalar(t, y, 1)
            }
        })),
        ("matmul_t", Box::new(move |t, x| {
            let y = t.matmul_t(x, x, true)?;
            project_to_scalar(t, y, 2)
        })),
        ("bmm", Box::new({
            let w3 = w3.clone();
            move |t, x| {
                let x3 = t.reshape(x, &[1, 3, 4])?;
                let x3 = t.concat(&[x3, x3], 0)?;
                let wv = t.param(w3.clone());
                let y = t.bmm(x3, wv, false)?;
                let z = t.bmm(y, x3, false)?;
                let z = t.bmm(x3, z, true)?;
                project_to_scalar(t, z, 3)
            }
        })),
        ("add_mul_scale", Box::new(move |t, x| {
            let a = t.mul(x, x)?;
            let b = t.add(a, x)?;
            let c = t.scale(b, -1.7)?;
            project_to_scalar(t, c, 4)
        })),
        ("add_row", Box::new({
            let row = row.clone();
            move |t, x| {
                let r = t.param(row.clone());
                let y = t.add_row(x, r)?;
                let y = t.mul(y, y)?;
                project_to_scalar(t, y, 5)
            }
        })),
        ("gelu", Box::new(|t, x| {
            let y = t.gelu(x)?;
            project_to_scalar(t, y, 6)
        })),
        ("softmax", Box::new(|t, x| {
            let y = t.softmax_rows(x, 0.5)?;
            project_to_scalar(t, y, 7)
        })),
        ("log_softmax", Box::new(|t, x| {
            let y = t.log_softmax_rows(x, 0.3)?;
            project_to_scalar(t, y, 8)
        })),
        ("softmax_cross_entropy", Box::new({
            let target = target.clone();
            move |t, x| {
                let y = t.log_softmax_rows(x, 0.1)?;
                t.cross_entropy_rows(&target, y)
            }
        })),
        ("l2_normalize", Box::new(|t, x| {
            let y = t.l2_normalize_rows(x)?;
            project_to_scalar(t, y, 9)
        })),
        ("layer_norm", Box::new({
            let (gamma, beta) = (gamma.clone(), beta.clone());
            move |t, x| {
                let g = t.param(gamma.clone());
                let b = t.param(beta.clone());
                let y = t.layer_norm(x, g, b)?;
                project_to_scalar(t, y, 10)
            }
        })),
        ("mean", Box::new(|t, x| {
            let sq = t.mul(x, x)?;
            t.mean(sq)
        })),
        ("slice_concat", Box::new(|t, x| {
            let a = t.slice(x, 1, 1, 3)?;
            let b = t.slice(x, 0, 0, 2)?;
            let b = t.reshape(b, &[4, 2])?;
            let a3 = t.slice(x, 1, 0, 2)?;
            let a = t.add(a, a3)?;
            let c = t.concat(&[a, b, a], 0)?;
            let c = t.mul(c, c)?;
            project_to_scalar(t, c, 11)
        })),
        ("permute", Box::new(|t, x| {
            let y = t.reshape(x, &[3, 2, 2])?;
            let y = t.permute(y, &[2, 0, 1])?;
            let y = t.mul(y, y)?;
            project_to_scalar(t, y, 12)
        })),
        ("gather_tile", Box::new(|t, x| {
            let g = t.gather_rows(x, &[2, 0, 2, 1])?;
            let y = t.tile(g, 3)?;
            let y = t.mul(y, y)?;
            project_to_scalar(t, y, 13)
        })),
    ];
    for (name, op) in &ops {
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let x = random(&mut rng, &[3, 4], 2.0);
            let err = grad_check(|t, v| op(t, v), &x, DEFAULT_STEP).unwrap();
            worst = worst.max(err);
        }
        assert!(worst < 1e-5, "{name}: max relative error {worst:e}");
    }
}
