//! Analytic gradients against central finite differences, op by op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treeformer_autograd::{Array, Error, Graph, Var};

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Array<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Array::new(shape.to_vec(), data).unwrap()
}

/// Relative error with a floor of 1e-4 on the denominator, so gradients that are
/// numerically zero are compared absolutely.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Builds `f` on a fresh graph with `inputs` as trainable leaves, reduces the
/// output to a scalar through a fixed random weighting, and compares reverse-mode
/// gradients with central differences of the forward pass.
fn check<F>(inputs: &[Array<f64>], f: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let weights = {
        let mut g = Graph::<f64>::new();
        let vars: Vec<_> = inputs.iter().map(|a| g.constant(a.clone())).collect();
        let out = f(&mut g, &vars);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        random(&mut rng, g.shape(out), -1.0, 1.0)
    };
    let eval = |vals: &[Array<f64>]| -> f64 {
        let mut g = Graph::<f64>::new();
        let vars: Vec<_> = vals.iter().map(|a| g.constant(a.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(x, w)| x * w)
            .sum()
    };

    let mut g = Graph::<f64>::new();
    let vars: Vec<_> = inputs.iter().map(|a| g.param(a.clone())).collect();
    let out = f(&mut g, &vars);
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w).unwrap();
    let loss = g.sum_all(prod);
    g.backward(loss).unwrap();

    for (k, input) in inputs.iter().enumerate() {
        let analytic = g
            .grad(vars[k])
            .cloned()
            .unwrap_or_else(|| Array::zeros(input.shape().to_vec()));
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let a = analytic.data()[j];
            assert!(
                rel_err(a, numeric) < TOL,
                "input {k} entry {j}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

#[test]
fn log_derivative_at_two() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Array::scalar(2.0));
    let y = g.log(x);
    g.backward(y).unwrap();
    let analytic = g.grad(x).unwrap().item().unwrap();
    let numeric = ((2.0f64 + H).ln() - (2.0f64 - H).ln()) / (2.0 * H);
    assert!((analytic - 0.5).abs() < 1e-12);
    assert!((numeric - 0.5).abs() < 1e-8);
}

#[test]
fn broadcasting_binary_ops() {
    let mut r = rng();
    let a = random(&mut r, &[3, 4], -1.0, 1.0);
    let b = random(&mut r, &[4], -1.0, 1.0);
    let c = random(&mut r, &[3, 1], 0.5, 2.0);
    check(&[a.clone(), b.clone(), c.clone()], |g, v| {
        let s = g.add(v[0], v[1]).unwrap();
        let d = g.sub(s, v[2]).unwrap();
        let m = g.mul(d, v[1]).unwrap();
        g.div(m, v[2]).unwrap()
    });
    let x = random(&mut r, &[2, 1, 3], -1.0, 1.0);
    let y = random(&mut r, &[2, 3, 1], 0.5, 1.5);
    check(&[x, y], |g, v| {
        let p = g.mul(v[0], v[1]).unwrap();
        g.div(p, v[1]).unwrap()
    });
}

#[test]
fn unary_ops() {
    let mut r = rng();
    let x = random(&mut r, &[2, 5], 0.2, 2.0);
    check(&[x.clone()], |g, v| g.exp(v[0]));
    check(&[x.clone()], |g, v| g.log(v[0]));
    check(&[x.clone()], |g, v| g.sqrt(v[0]));
    check(&[x.clone()], |g, v| g.affine(v[0], -1.5, 0.25));
    let y = random(&mut r, &[4, 3], -1.0, 1.0);
    check(&[y.clone()], |g, v| g.relu(v[0]));
    check(&[y], |g, v| g.clamp_min(v[0], 0.1));
}

#[test]
fn matmul_plain_batched_and_shared() {
    let mut r = rng();
    let a = random(&mut r, &[3, 4], -1.0, 1.0);
    let b = random(&mut r, &[4, 2], -1.0, 1.0);
    check(&[a, b.clone()], |g, v| g.matmul(v[0], v[1]).unwrap());
    let a3 = random(&mut r, &[2, 3, 4], -1.0, 1.0);
    let b3 = random(&mut r, &[2, 4, 5], -1.0, 1.0);
    check(&[a3.clone(), b3], |g, v| g.matmul(v[0], v[1]).unwrap());
    check(&[a3, b], |g, v| g.matmul(v[0], v[1]).unwrap());
}

#[test]
fn softmax_variants_on_each_axis() {
    let mut r = rng();
    let x = random(&mut r, &[2, 3, 4], -2.0, 2.0);
    for axis in 0..3 {
        check(&[x.clone()], |g, v| g.softmax(v[0], axis).unwrap());
        check(&[x.clone()], |g, v| g.log_softmax(v[0], axis).unwrap());
    }
}

#[test]
fn layer_norm_rows() {
    let mut r = rng();
    let x = random(&mut r, &[3, 6], -2.0, 2.0);
    check(&[x], |g, v| g.layer_norm(v[0], 1e-5).unwrap());
}

#[test]
fn dropout_uses_its_mask() {
    let mut r = rng();
    let x = random(&mut r, &[4, 4], -1.0, 1.0);
    check(&[x.clone()], |g, v| {
        let mut drng = ChaCha8Rng::seed_from_u64(5);
        g.dropout(v[0], 0.3, true, &mut drng).unwrap()
    });
    let mut g = Graph::<f64>::new();
    let v = g.constant(x.clone());
    let mut drng = ChaCha8Rng::seed_from_u64(5);
    let out = g.dropout(v, 0.3, false, &mut drng).unwrap();
    assert_eq!(g.value(out), &x);
}

#[test]
fn indexing_ops() {
    let mut r = rng();
    let table = random(&mut r, &[5, 3], -1.0, 1.0);
    check(&[table], |g, v| g.embedding(v[0], &[4, 0, 4, 2]).unwrap());

    let a = random(&mut r, &[2, 3, 2], -1.0, 1.0);
    let b = random(&mut r, &[2, 1, 2], -1.0, 1.0);
    check(&[a.clone(), b], |g, v| g.concat(&[v[0], v[1], v[0]], 1).unwrap());
    check(&[a.clone()], |g, v| g.slice(v[0], 1, 1, 3).unwrap());
    check(&[a.clone()], |g, v| g.transpose(v[0], 0, 2).unwrap());
    check(&[a.clone()], |g, v| g.permute(v[0], &[1, 2, 0]).unwrap());
    check(&[a.clone()], |g, v| g.reshape(v[0], &[3, 4]).unwrap());
    let mask: Vec<bool> = (0..12).map(|i| i % 3 == 0).collect();
    check(&[a.clone()], |g, v| g.masked_fill(v[0], &mask, -7.0).unwrap());
    check(&[a], |g, v| g.gather(v[0], &[11, 0, 3, 3]).unwrap());
}

#[test]
fn reductions() {
    let mut r = rng();
    let x = random(&mut r, &[2, 3, 4], -1.0, 1.0);
    for axis in 0..3 {
        check(&[x.clone()], |g, v| g.sum(v[0], axis, false).unwrap());
        check(&[x.clone()], |g, v| g.mean(v[0], axis, true).unwrap());
    }
    check(&[x.clone()], |g, v| g.sum_all(v[0]));
    check(&[x], |g, v| g.mean_all(v[0]));
}

#[test]
fn composed_graph() {
    // Small attention-like block exercising several ops together.
    let mut r = rng();
    let x = random(&mut r, &[4, 6], -1.0, 1.0);
    let w = random(&mut r, &[6, 6], -0.5, 0.5);
    check(&[x, w], |g, v| {
        let h = g.matmul(v[0], v[1]).unwrap();
        let ht = g.transpose(h, 0, 1).unwrap();
        let s = g.matmul(h, ht).unwrap();
        let p = g.softmax(s, 1).unwrap();
        let o = g.matmul(p, v[0]).unwrap();
        let n = g.layer_norm(o, 1e-5).unwrap();
        let e = g.exp(n);
        g.log_softmax(e, 1).unwrap()
    });
}

#[test]
fn sum_of_squares_gradient() {
    let mut g = Graph::<f64>::new();
    let w = g.param(Array::from_f64(vec![2], &[1.0, 2.0]).unwrap());
    let sq = g.mul(w, w).unwrap();
    let loss = g.sum_all(sq);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(w).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn shared_subexpression_accumulates() {
    // y = e^x used three times: loss = y + y * y.
    let mut g = Graph::<f64>::new();
    let x = g.param(Array::scalar(0.3));
    let y = g.exp(x);
    let yy = g.mul(y, y).unwrap();
    let s = g.add(y, yy).unwrap();
    g.backward(s).unwrap();
    let e = 0.3f64.exp();
    let expected = e + 2.0 * e * e;
    assert!((g.grad(x).unwrap().item().unwrap() - expected).abs() < 1e-12);
}

#[test]
fn constant_subgraph_gets_no_gradient() {
    let mut g = Graph::<f64>::new();
    let c = g.constant(Array::scalar(4.0));
    let w = g.param(Array::scalar(1.5));
    let c2 = g.exp(c);
    let p = g.mul(w, c2).unwrap();
    g.backward(p).unwrap();
    assert!(g.grad(c).is_none());
    assert!(g.grad(c2).is_none());
    assert_eq!(g.grad(w).unwrap().item().unwrap(), 4.0f64.exp());

    // A parameter the loss ignores is reported as zero gradient.
    let mut g = Graph::<f64>::new();
    let unused = g.param(Array::scalar(1.0));
    let w = g.param(Array::scalar(2.0));
    let y = g.scale(w, 3.0);
    g.backward(y).unwrap();
    assert!(g.grad(unused).is_none());
}

#[test]
fn backward_guards() {
    let mut g = Graph::<f64>::new();
    let w = g.param(Array::from_f64(vec![2], &[1.0, 2.0]).unwrap());
    let err = g.backward(w).unwrap_err();
    assert!(matches!(err, Error::Usage(_)));

    let mut g = Graph::<f64>::new();
    let w = g.param(Array::scalar(1.0));
    let y = g.scale(w, 2.0);
    g.backward(y).unwrap();
    assert!(matches!(g.backward(y), Err(Error::Usage(_))));
    g.zero_grad();
    g.backward(y).unwrap();
    assert_eq!(g.grad(w).unwrap().item().unwrap(), 2.0);
}

#[test]
fn shape_errors_name_both_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Array::zeros(vec![2, 3]));
    let b = g.constant(Array::zeros(vec![4, 2]));
    let msg = g.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    let msg = g.add(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
}

#[test]
fn trivial_values() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(Array::zeros(vec![2]));
    let s = g.softmax(z, 0).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);

    let mut r = rng();
    let x = random(&mut r, &[3, 5], -1.0, 1.0);
    let i = g.constant(Array::eye(3));
    let xv = g.constant(x.clone());
    let p = g.matmul(i, xv).unwrap();
    assert_eq!(g.value(p), &x);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_is_a_distribution(vals in proptest::collection::vec(-30.0f64..30.0, 1..40), rows in 1usize..4) {
            let cols = vals.len();
            let data: Vec<f64> = (0..rows).flat_map(|r| vals.iter().map(move |v| v * (r as f64 + 1.0))).collect();
            let mut g = Graph::<f64>::new();
            let x = g.constant(Array::new(vec![rows, cols], data).unwrap());
            let s = g.softmax(x, 1).unwrap();
            for row in g.value(s).data().chunks(cols) {
                prop_assert!(row.iter().all(|&p| p >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn random_composite_gradients(seed in 0u64..1000) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let a = random(&mut r, &[3, 4], -1.0, 1.0);
            let b = random(&mut r, &[4, 3], -1.0, 1.0);
            check(&[a, b], |g, v| {
                let m = g.matmul(v[0], v[1]).unwrap();
                let s = g.softmax(m, 0).unwrap();
                let q = g.mul(s, m).unwrap();
                g.layer_norm(q, 1e-5).unwrap()
            });
        }
    }
}
