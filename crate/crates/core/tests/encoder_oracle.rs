use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treeformer::encoder::{constrained_attention, Model, ModelConfig, PriorMode, Variant};
use treeformer_autograd::{Array, Graph};

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Array<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Array::from_f64(shape.to_vec(), &v).unwrap()
}

/// Gated attention by explicit loops over query, key and feature indices.
fn naive_attention(q: &Array<f64>, k: &Array<f64>, v: &Array<f64>, c: &Array<f64>) -> (Vec<f64>, Vec<f64>) {
    let (n, dk) = (q.shape()[2], q.shape()[3]);
    let mut e = vec![0.0; n * n];
    let mut out = vec![0.0; n * dk];
    for i in 0..n {
        let s: Vec<f64> = (0..n)
            .map(|j| (0..dk).map(|t| q.get(&[0, 0, i, t]) * k.get(&[0, 0, j, t])).sum::<f64>() / (dk as f64).sqrt())
            .collect();
        let mx = s.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = s.iter().map(|x| (x - mx).exp()).sum();
        for j in 0..n {
            e[i * n + j] = c.get(&[0, 0, i, j]) * (s[j] - mx).exp() / z;
        }
        for t in 0..dk {
            out[i * dk + t] = (0..n).map(|j| e[i * n + j] * v.get(&[0, 0, j, t])).sum();
        }
    }
    (out, e)
}

#[test]
fn gated_attention_matches_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (n, dk) = (5, 3);
    for _ in 0..10 {
        let q = random(&mut rng, &[1, 1, n, dk], -1.0, 1.0);
        let k = random(&mut rng, &[1, 1, n, dk], -1.0, 1.0);
        let v = random(&mut rng, &[1, 1, n, dk], -1.0, 1.0);
        let c = random(&mut rng, &[1, 1, n, n], 0.0, 1.0);
        let mut g = Graph::<f64>::new();
        let (qv, kv, vv, cv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()), g.constant(c.clone()));
        let (out, e) = constrained_attention(&mut g, qv, kv, vv, Some(cv), None).unwrap();
        let (want_out, want_e) = naive_attention(&q, &k, &v, &c);
        for (a, b) in g.value(out).data().iter().zip(&want_out) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in g.value(e).data().iter().zip(&want_e) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn ones_gate_is_plain_attention_and_identity_gate_is_diagonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 4;
    let q = random(&mut rng, &[1, 1, n, 2], -1.0, 1.0);
    let k = random(&mut rng, &[1, 1, n, 2], -1.0, 1.0);
    let v = random(&mut rng, &[1, 1, n, 2], -1.0, 1.0);
    let mut g = Graph::<f64>::new();
    let (qv, kv, vv) = (g.constant(q), g.constant(k), g.constant(v.clone()));
    let ones = g.constant(Array::ones([1, 1, n, n]));
    let (plain, pe) = constrained_attention(&mut g, qv, kv, vv, None, None).unwrap();
    let (gated, _) = constrained_attention(&mut g, qv, kv, vv, Some(ones), None).unwrap();
    assert_eq!(g.value(plain).data(), g.value(gated).data());
    let eye = g.constant(Array::eye(n).reshape([1, 1, n, n]).unwrap());
    let (diag, de) = constrained_attention(&mut g, qv, kv, vv, Some(eye), None).unwrap();
    for i in 0..n {
        let w = g.value(pe).get(&[0, 0, i, i]);
        for j in 0..n {
            let expect = if i == j { w } else { 0.0 };
            assert_eq!(g.value(de).get(&[0, 0, i, j]), expect);
        }
        for t in 0..2 {
            assert!((g.value(diag).get(&[0, 0, i, t]) - w * v.get(&[0, 0, i, t])).abs() < 1e-15);
        }
    }
}

#[test]
fn raising_a_gate_entry_never_lowers_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 5;
    let q = random(&mut rng, &[1, 1, n, 3], -1.0, 1.0);
    let k = random(&mut rng, &[1, 1, n, 3], -1.0, 1.0);
    let v = random(&mut rng, &[1, 1, n, 3], -1.0, 1.0);
    let c = random(&mut rng, &[1, 1, n, n], 0.0, 0.9);
    for (i, j) in [(0, 1), (2, 2), (4, 0)] {
        let mut c2 = c.clone();
        c2.set(&[0, 0, i, j], c.get(&[0, 0, i, j]) + 0.1);
        let mut g = Graph::<f64>::new();
        let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
        let (c1v, c2v) = (g.constant(c.clone()), g.constant(c2));
        let (_, e1) = constrained_attention(&mut g, qv, kv, vv, Some(c1v), None).unwrap();
        let (_, e2) = constrained_attention(&mut g, qv, kv, vv, Some(c2v), None).unwrap();
        assert!(g.value(e2).get(&[0, 0, i, j]) >= g.value(e1).get(&[0, 0, i, j]));
    }
}

fn desk(layers: usize, vocab: usize) -> ModelConfig {
    ModelConfig {
        num_layers: layers,
        vocab_size: vocab,
        ..ModelConfig::desk()
    }
}

#[test]
fn links_are_monotone_across_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for seed in 0..20 {
        let m = Model::<f64>::new(desk(4, 40), seed).unwrap();
        let n = rng.gen_range(2..16);
        let s: Vec<usize> = (0..n).map(|_| rng.gen_range(3..40)).collect();
        let out = m.encode(&s).unwrap();
        for l in 1..4 {
            for (hi, lo) in out.links[l].probs.iter().zip(&out.links[l - 1].probs) {
                assert!(hi >= lo);
            }
        }
    }
}

#[test]
fn tree_with_unit_prior_equals_plain_transformer() {
    let tree = Model::<f64>::new(desk(3, 30), 12).unwrap();
    let plain = tree.without_links().unwrap();
    let s = vec![vec![3, 9, 14, 20, 7, 4], vec![5, 6, 7]];
    let a = tree.encode_batch(&s, PriorMode::AllOnes).unwrap();
    let b = plain.encode_batch(&s, PriorMode::Learned).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.hidden.data(), y.hidden.data());
        for (ex, ey) in x.attention.iter().zip(&y.attention) {
            assert_eq!(ex, ey);
        }
    }
}

/// Parameter count from the architecture alone.
fn tally(c: &ModelConfig) -> usize {
    let (d, f, v) = (c.d_model, c.d_ff, c.vocab_size);
    let attention = 4 * (d * d + d);
    let ff = d * f + f + f * d + d;
    let norms = 4 * d;
    let links = if c.variant == Variant::Tree { 2 * (d * d + d) } else { 0 };
    v * d + c.num_layers * (attention + ff + norms + links) + d * v + v
}

#[test]
fn parameter_counts_match_tally() {
    for base in [ModelConfig::desk(), desk(2, 57)] {
        for variant in [Variant::Tree, Variant::Plain] {
            let c = ModelConfig { variant, ..base.clone() };
            assert_eq!(Model::<f32>::new(c.clone(), 0).unwrap().count_params(), tally(&c));
        }
    }
    let tree = tally(&ModelConfig::desk()) as f64;
    let plain = tally(&ModelConfig {
        variant: Variant::Plain,
        ..ModelConfig::desk()
    }) as f64;
    let ratio = tree / plain - 1.0;
    assert!((0.08..=0.12).contains(&ratio), "overhead {ratio}");
}

#[test]
fn model_constructors_are_seeded() {
    let a = Model::<f32>::new(desk(2, 20), 3).unwrap();
    let b = Model::<f32>::new(desk(2, 20), 3).unwrap();
    let c = Model::<f32>::new(desk(2, 20), 4).unwrap();
    assert_eq!(a.params.get(a.embedding), b.params.get(b.embedding));
    assert_ne!(a.params.get(a.embedding), c.params.get(c.embedding));
}
