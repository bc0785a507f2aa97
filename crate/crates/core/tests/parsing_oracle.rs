use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treeformer::constituent::NeighborLinks;
use treeformer::parsing::{build_tree, greedy_parse_layer, parse_links, ParseMode, ParseTree, ParserConfig};

fn layers(v: &[Vec<f64>]) -> Vec<NeighborLinks> {
    v.iter()
        .enumerate()
        .map(|(l, p)| NeighborLinks {
            layer: l,
            probs: p.clone(),
        })
        .collect()
}

/// Spans of every node; laminar means any two are nested or disjoint.
fn assert_laminar(t: &ParseTree, n: usize) {
    t.validate(n).unwrap();
    let spans = t.all_spans();
    for &(a, b) in &spans {
        for &(c, d) in &spans {
            let disjoint = b < c || d < a;
            let nested = (a <= c && d <= b) || (c <= a && b <= d);
            assert!(disjoint || nested, "({a},{b}) crosses ({c},{d})");
        }
    }
}

/// Top-down greedy splitting written over slices: returns the spans of all
/// multi-token nodes. Ties go to the earliest link.
fn oracle_greedy(a: &[f64], offset: usize, out: &mut BTreeSet<(usize, usize)>) {
    let n = a.len() + 1;
    if n >= 2 {
        out.insert((offset, offset + n - 1));
    }
    if n <= 2 {
        return;
    }
    let (b, _) = a
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) });
    oracle_greedy(&a[..b], offset, out);
    oracle_greedy(&a[b + 1..], offset + b + 1, out);
}

fn multi_token_spans(t: &ParseTree) -> BTreeSet<(usize, usize)> {
    t.all_spans().into_iter().filter(|(s, e)| e > s).collect()
}

#[test]
fn greedy_matches_recursive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..2000 {
        let n = rng.gen_range(1..=10);
        // Coarse values make ties common.
        let a: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect();
        let t = greedy_parse_layer(&layers(&[a.clone()])[0]);
        let mut want = BTreeSet::new();
        oracle_greedy(&a, 0, &mut want);
        assert_eq!(multi_token_spans(&t), want, "a = {a:?}");
    }
}

/// With the top layer equal to the minimum layer, decoding is greedy splitting
/// that stops wherever the weakest link clears the threshold.
fn thresholded_greedy(a: &[f64], thres: f64, s: usize, e: usize) -> ParseTree {
    if e - s < 2 {
        return ParseTree::leaf(s, e);
    }
    let mut b = s;
    for k in s..e {
        if a[k] < a[b] {
            b = k;
        }
    }
    if a[b] > thres {
        return ParseTree::leaf(s, e);
    }
    ParseTree::node(thresholded_greedy(a, thres, s, b), thresholded_greedy(a, thres, b + 1, e))
}

#[test]
fn single_trusted_layer_is_thresholded_greedy() {
    let grid = [0.1, 0.5, 0.85, 0.95];
    for n in 1..=6usize {
        let m = n - 1;
        for code in 0..grid.len().pow(m as u32) {
            let mut c = code;
            let top: Vec<f64> = (0..m)
                .map(|_| {
                    let v = grid[c % grid.len()];
                    c /= grid.len();
                    v
                })
                .collect();
            // Layers below the minimum are ignored whatever they hold.
            let links = layers(&[vec![0.0; m], vec![0.0; m], top.clone()]);
            let cfg = ParserConfig {
                min_layer: 2,
                threshold: 0.8,
            };
            assert_eq!(build_tree(&links, &cfg).unwrap(), thresholded_greedy(&top, 0.8, 0, m));
        }
    }
}

#[test]
fn fuzzed_links_give_laminar_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=20);
        let l = rng.gen_range(1..=6);
        let mut probs: Vec<Vec<f64>> = Vec::with_capacity(l);
        let mut prev = vec![0.0; n - 1];
        for _ in 0..l {
            let hat: Vec<f64> = (0..n - 1).map(|_| rng.gen::<f64>()).collect();
            prev = prev.iter().zip(&hat).map(|(p, h)| p + (1.0 - p) * h).collect();
            probs.push(prev.clone());
        }
        let cfg = ParserConfig {
            min_layer: rng.gen_range(0..l),
            threshold: rng.gen_range(0.0..1.0),
        };
        let t = build_tree(&layers(&probs), &cfg).unwrap();
        assert_laminar(&t, n);
    }
}

#[test]
fn threshold_one_always_splits() {
    let links = layers(&[vec![0.99, 0.95, 0.97, 0.999], vec![0.995, 0.99, 0.98, 0.9999]]);
    let cfg = ParserConfig {
        min_layer: 0,
        threshold: 1.0,
    };
    let t = build_tree(&links, &cfg).unwrap();
    let w = ["a", "b", "c", "d", "e"];
    // Every span of three or more tokens is split, so no leaf is wider than two.
    fn widest_leaf(t: &ParseTree) -> usize {
        match t {
            ParseTree::Leaf { start, end } => end - start + 1,
            ParseTree::Node(l, r) => widest_leaf(l).max(widest_leaf(r)),
        }
    }
    assert_eq!(widest_leaf(&t), 2);
    assert_eq!(t.to_bracketed(&w), "(((a b) c) (d e))");
}

#[test]
fn mode_dispatch() {
    let links = layers(&[vec![0.1, 0.9, 0.9], vec![0.9, 0.1, 0.9]]);
    let single = parse_links(&links, &ParserConfig::default(), ParseMode::SingleLayer(0)).unwrap();
    assert_eq!(single, greedy_parse_layer(&links[0]));
    assert!(parse_links(&links, &ParserConfig::default(), ParseMode::SingleLayer(2)).is_err());
}

proptest! {
    #[test]
    fn greedy_is_laminar(a in prop::collection::vec(0.0f64..1.0, 0..19)) {
        let t = greedy_parse_layer(&layers(&[a.clone()])[0]);
        assert_laminar(&t, a.len() + 1);
    }
}
