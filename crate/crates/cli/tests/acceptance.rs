//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.
//!
//! Set `TREEFORMER_WSJ_TEST` to a PTB-format WSJ test file to also check the
//! trivial-tree baselines on real data. `TREEFORMER_CRITERIA=3,5` runs a
//! subset; perplexity reuses the grammar-induction models and needs both.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treeformer::constituent::{ConstituentPrior, NeighborLinks};
use treeformer::corpus::vocab::MASK_ID;
use treeformer::corpus::{self, synthetic, TreebankSentence, Vocabulary};
use treeformer::encoder::{ForwardOptions, Model, ModelConfig, PriorMode, Variant};
use treeformer::evaluation::{
    baseline_tree, corpus_f1, f1, spans_from_gold, spans_from_tree, BaselineKind, SpanConvention, SpanSet,
};
use treeformer::layout::BatchLayout;
use treeformer::parsing::{build_tree, parse_batch, ParseMode, ParseTree, ParserConfig};
use treeformer::training::{
    masked_lm_loss, masked_perplexity, train, FnScorer, MaskedBatch, MemorySink, Trainer, UniformScorer,
    UnigramScorer,
};
use treeformer_autograd::Graph;
use treeformer_cli::commands::eval::{gold_trees, load_gold};
use treeformer_cli::config::ResolvedConfig;

const BIN: &str = env!("CARGO_BIN_EXE_treeformer");

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> std::result::Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {:.1} s, limit {} s", t.as_secs_f64(), limit.as_secs()))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn desk(variant: Variant, vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        variant,
        ..ModelConfig::desk()
    }
}

fn prior_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = rng.gen_range(1..=16);
        let probs: Vec<f64> = (0..n - 1)
            .map(|_| match rng.gen_range(0..20) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.gen_range(0.0..=1.0),
            })
            .collect();
        let c = ConstituentPrior::from_links(&NeighborLinks { layer: 0, probs: probs.clone() })
            .map_err(|e| e.to_string())?;
        for i in 0..n {
            ensure(c.get(i, i) == 1.0, || format!("case {case}: diagonal {i} is {}", c.get(i, i)))?;
            for j in 0..n {
                ensure(c.get(i, j) == c.get(j, i), || format!("case {case}: asymmetric at ({i}, {j})"))?;
                let (lo, hi) = (i.min(j), i.max(j));
                let direct: f64 = probs[lo..hi].iter().product();
                worst = worst.max((c.get(i, j) - direct).abs());
            }
        }
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    within(start, Duration::from_secs(5))?;
    Ok(format!("max deviation {worst:.1e}, {:.2} s", start.elapsed().as_secs_f64()))
}

fn monotone_links() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut passes = 0;
    let mut links_checked = 0usize;
    for seed in 0..20 {
        let model = Model::<f64>::new(desk(Variant::Tree, 1000), seed).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let batch: Vec<Vec<usize>> = (0..4)
                .map(|_| {
                    let n = rng.gen_range(2..=30);
                    (0..n).map(|_| rng.gen_range(3..1000)).collect()
                })
                .collect();
            let out = model.encode_batch(&batch, PriorMode::Learned).map_err(|e| e.to_string())?;
            passes += 1;
            for (s, enc) in out.iter().enumerate() {
                ensure(enc.links.len() == 4, || format!("{} link layers", enc.links.len()))?;
                for l in 1..enc.links.len() {
                    for (i, (&hi, &lo)) in enc.links[l].probs.iter().zip(&enc.links[l - 1].probs).enumerate() {
                        ensure(hi >= lo, || {
                            format!("seed {seed} sentence {s}: layer {l} link {i} is {hi} below {lo}")
                        })?;
                        links_checked += 1;
                    }
                }
            }
        }
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!(
        "{passes} passes, {links_checked} link pairs, {:.1} s",
        start.elapsed().as_secs_f64()
    ))
}

fn masked_loss(model: &Model<f64>, b: &MaskedBatch, grads: bool) -> (f64, Option<Vec<Vec<f64>>>) {
    let mut g = Graph::new();
    let p = if grads { model.params.bind(&mut g) } else { model.params.bind_frozen(&mut g) };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model
        .forward_graph(&mut g, &p, &b.input, &b.layout, ForwardOptions::eval(), &mut rng)
        .unwrap();
    let l = masked_lm_loss(&mut g, out.logits, b).unwrap();
    let value = g.value(l).item().unwrap();
    if !grads {
        return (value, None);
    }
    g.backward(l).unwrap();
    let gs = model.params.collect_grads(&g, &p).into_iter().map(|a| a.into_data()).collect();
    (value, Some(gs))
}

/// Parameter name without its `layer<k>.` prefix.
fn family(name: &str) -> &str {
    match name.split_once('.') {
        Some((pre, rest)) if pre.starts_with("layer") => rest,
        _ => name,
    }
}

fn gradient_check() -> Check {
    // A loss near ln V leaves about 1e-9 of rounding noise in the central
    // difference at h = 1e-6; h = 1e-5 keeps truncation error far smaller.
    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-5;
    let start = Instant::now();
    let cfg = ModelConfig {
        num_layers: 2,
        ..desk(Variant::Tree, 1000)
    };
    let mut model = Model::<f64>::new(cfg, 7).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let words: Vec<usize> = (0..6).map(|_| rng.gen_range(3..1000)).collect();
    let masked = vec![false, true, false, false, true, false];
    let batch = MaskedBatch {
        layout: BatchLayout::new(vec![6]),
        input: words.iter().zip(&masked).map(|(&w, &m)| if m { MASK_ID } else { w }).collect(),
        targets: words.iter().zip(&masked).map(|(&w, &m)| if m { w } else { 0 }).collect(),
        masked,
        padding: vec![false; 6],
    };
    let (_, grads) = masked_loss(&model, &batch, true);
    let grads = grads.unwrap();

    let params: Vec<_> = model.params.iter().map(|(id, name, a)| (id, name.to_string(), a.len())).collect();
    let mut by_family: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (k, (_, name, _)) in params.iter().enumerate() {
        by_family.entry(family(name).to_string()).or_default().push(k);
    }
    ensure(by_family.keys().any(|f| f.starts_with("link_")), || "no link projection parameters".into())?;
    let mut picks: Vec<(usize, usize)> = by_family
        .values()
        .map(|ks| {
            let k = *ks.choose(&mut rng).unwrap();
            (k, rng.gen_range(0..params[k].2))
        })
        .collect();
    while picks.len() < 50 {
        let k = rng.gen_range(0..params.len());
        let pick = (k, rng.gen_range(0..params[k].2));
        if !picks.contains(&pick) {
            picks.push(pick);
        }
    }

    let mut worst = (0.0f64, String::new());
    for &(k, i) in &picks {
        let id = params[k].0;
        let orig = model.params.get(id).data()[i];
        model.params.get_mut(id).data_mut()[i] = orig + H;
        let (up, _) = masked_loss(&model, &batch, false);
        model.params.get_mut(id).data_mut()[i] = orig - H;
        let (down, _) = masked_loss(&model, &batch, false);
        model.params.get_mut(id).data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * H);
        let analytic = grads[k][i];
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(FLOOR);
        if rel >= worst.0 {
            worst = (rel, format!("{}[{i}]: analytic {analytic:e} numeric {numeric:e}", params[k].1));
        }
    }
    ensure(worst.0 < 1e-4, || format!("worst relative error {:.2e} at {}", worst.0, worst.1))?;
    within(start, Duration::from_secs(120))?;
    Ok(format!(
        "{} parameters over {} families, worst relative error {:.1e}, {:.1} s",
        picks.len(),
        by_family.len(),
        worst.0,
        start.elapsed().as_secs_f64()
    ))
}

fn gating_identity() -> Check {
    let tree = Model::<f64>::new(desk(Variant::Tree, 200), 4).map_err(|e| e.to_string())?;
    let plain = tree.without_links().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sentences: Vec<Vec<usize>> = (0..6)
        .map(|_| {
            let n = rng.gen_range(1..=20);
            (0..n).map(|_| rng.gen_range(0..200)).collect()
        })
        .collect();
    let (layout, ids) = BatchLayout::pad(&sentences);
    let run = |m: &Model<f64>, prior: PriorMode| {
        let mut g = Graph::new();
        let p = m.params.bind_frozen(&mut g);
        let opts = ForwardOptions { train: false, prior };
        let out = m.forward_graph(&mut g, &p, &ids, &layout, opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut values = g.value(out.hidden).data().to_vec();
        values.extend_from_slice(g.value(out.logits).data());
        for e in out.attention {
            values.extend_from_slice(g.value(e).data());
        }
        values
    };
    let a = run(&tree, PriorMode::AllOnes);
    let b = run(&plain, PriorMode::Learned);
    ensure(a.len() == b.len(), || "outputs differ in size".into())?;
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    ensure(diff == 0.0, || format!("max abs diff {diff:e}"))?;
    Ok(format!("{} values compared, max abs diff 0", a.len()))
}

fn links(layers: &[&[f64]]) -> Vec<NeighborLinks> {
    layers
        .iter()
        .enumerate()
        .map(|(layer, p)| NeighborLinks { layer, probs: p.to_vec() })
        .collect()
}

fn parser_fixtures() -> Check {
    let cfg = ParserConfig::default();
    let two = build_tree(&links(&[&[0.3], &[0.4], &[0.5], &[0.6]]), &cfg).map_err(|e| e.to_string())?;
    ensure(two == ParseTree::leaf(0, 1), || format!("two words gave {two:?}"))?;
    let words = ["w1", "w2", "w3", "w4"];
    let cfg0 = ParserConfig { min_layer: 0, threshold: 0.8 };
    let split = build_tree(&links(&[&[0.2, 0.9, 0.9], &[0.9, 0.1, 0.9]]), &cfg0).map_err(|e| e.to_string())?;
    ensure(split.to_bracketed(&words) == "((w1 w2) (w3 w4))", || {
        format!("two-layer case gave {}", split.to_bracketed(&words))
    })?;
    let strong: Vec<&[f64]> = vec![&[0.85, 0.9, 0.95]; 4];
    let flat = build_tree(&links(&strong), &cfg).map_err(|e| e.to_string())?;
    ensure(flat == ParseTree::leaf(0, 3), || format!("strong links gave {flat:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..10_000 {
        let n = rng.gen_range(1..=40);
        let layers = rng.gen_range(1..=6);
        let mut stack: Vec<Vec<f64>> = Vec::new();
        for _ in 0..layers {
            let row: Vec<f64> = (0..n - 1)
                .map(|i| {
                    let v: f64 = rng.gen_range(0.0..=1.0);
                    stack.last().map_or(v, |prev: &Vec<f64>| v.max(prev[i]))
                })
                .collect();
            stack.push(row);
        }
        let rows: Vec<&[f64]> = stack.iter().map(|r| r.as_slice()).collect();
        let cfg = ParserConfig {
            min_layer: rng.gen_range(0..layers),
            threshold: rng.gen_range(0.0..=1.0),
        };
        let tree = build_tree(&links(&rows), &cfg).map_err(|e| format!("case {case}: {e}"))?;
        tree.validate(n).map_err(|e| format!("case {case}: {e}"))?;
    }
    Ok("3 hand cases exact, 10000 fuzzed link tensors laminar".into())
}

fn set(v: &[(usize, usize)]) -> SpanSet {
    v.iter().copied().collect()
}

fn random_baseline(lens: &[usize], gold: &[SpanSet], seed: u64, draws: usize) -> std::result::Result<f64, String> {
    let conv = SpanConvention::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..draws {
        let pred: Vec<SpanSet> = lens
            .iter()
            .map(|&n| spans_from_tree(&baseline_tree(n, BaselineKind::Random, &mut rng), conv))
            .collect();
        total += corpus_f1(&pred, gold).map_err(|e| e.to_string())?.micro.f1;
    }
    Ok(total / draws as f64)
}

fn trivial_baseline(lens: &[usize], gold: &[SpanSet], kind: BaselineKind) -> std::result::Result<f64, String> {
    let conv = SpanConvention::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pred: Vec<SpanSet> = lens.iter().map(|&n| spans_from_tree(&baseline_tree(n, kind, &mut rng), conv)).collect();
    Ok(corpus_f1(&pred, gold).map_err(|e| e.to_string())?.micro.f1)
}

fn gold_spans(sentences: &[TreebankSentence]) -> Vec<SpanSet> {
    let conv = SpanConvention::default();
    sentences
        .iter()
        .map(|s| spans_from_gold(s.tree.as_ref().expect("gold tree"), conv))
        .collect()
}

fn scorer_checks() -> Check {
    let bank = corpus::read_ptb(fixture("synthetic50.mrg")).map_err(|e| e.to_string())?;
    let gold = gold_spans(&bank);
    let self_score = corpus_f1(&gold, &gold).map_err(|e| e.to_string())?.micro.f1;
    ensure(self_score == 100.0, || format!("gold vs gold {self_score}"))?;
    let hand = f1(&set(&[(1, 2), (1, 3)]), &set(&[(1, 2), (2, 3)])).f1;
    ensure(hand == 50.0, || format!("hand fixture {hand}"))?;

    let lens: Vec<usize> = bank.iter().map(|s| s.len()).collect();
    let means = (0..5)
        .map(|seed| random_baseline(&lens, &gold, seed, 1000))
        .collect::<std::result::Result<Vec<f64>, String>>()?;
    let center = means.iter().sum::<f64>() / means.len() as f64;
    let spread = means.iter().map(|m| (m - center).abs()).fold(0.0, f64::max);
    ensure(spread <= 1.5, || format!("random-tree means {means:?} spread {spread:.2}"))?;
    let mut detail = format!("gold 100, hand 50.0, random {center:.1} ± {spread:.2} over 5 seeds");

    match std::env::var_os("TREEFORMER_WSJ_TEST") {
        None => {
            println!("notice: TREEFORMER_WSJ_TEST is not set; skipping the WSJ-test baseline check");
            detail.push_str("; WSJ-test skipped");
        }
        Some(path) => {
            let wsj = load_gold(Path::new(&path), true, false).map_err(|e| e.to_string())?;
            let conv = SpanConvention::default();
            let gold: Vec<SpanSet> = gold_trees(&wsj).iter().map(|t| spans_from_gold(t, conv)).collect();
            let lens: Vec<usize> = wsj.iter().map(|s| s.len()).collect();
            let got = [
                ("random", random_baseline(&lens, &gold, 0, 20)?, 21.6),
                ("left-branching", trivial_baseline(&lens, &gold, BaselineKind::Left)?, 9.0),
                ("right-branching", trivial_baseline(&lens, &gold, BaselineKind::Right)?, 39.8),
            ];
            for (name, value, want) in got {
                ensure((value - want).abs() <= 2.0, || format!("WSJ-test {name} {value:.1}, expected {want}"))?;
                detail.push_str(&format!("; WSJ {name} {value:.1}"));
            }
        }
    }
    Ok(detail)
}

/// Models trained for the induction check, reused for perplexity.
struct Induction {
    vocab: Vocabulary,
    train_ids: Vec<Vec<usize>>,
    trees: Vec<(u64, Model<f32>)>,
}

thread_local! {
    static INDUCTION: RefCell<Option<Induction>> = const { RefCell::new(None) };
}

fn train_desk(variant: Variant, seed: u64, vocab: &Vocabulary, data: &[Vec<usize>]) -> std::result::Result<Model<f32>, String> {
    let profile = ResolvedConfig::profile("desk").map_err(|e| e.to_string())?;
    let config = desk(variant, vocab.len());
    let model = Model::<f32>::new(config, seed).map_err(|e| e.to_string())?;
    let tc = treeformer::training::TrainConfig { seed, ..profile.train };
    let mut trainer = Trainer::new(model, vocab.clone(), tc).map_err(|e| e.to_string())?;
    let outcome = train(&mut trainer, data, None, &mut MemorySink::default()).map_err(|e| e.to_string())?;
    if let Some(msg) = outcome.halted {
        return Err(format!("training halted: {msg}"));
    }
    Ok(trainer.model)
}

fn grammar_induction() -> Check {
    let start = Instant::now();
    let bank = synthetic::generate_treebank(2000, 5, 7).map_err(|e| e.to_string())?;
    let words: Vec<Vec<String>> = bank.iter().map(|s| s.words.clone()).collect();
    let vocab = Vocabulary::build(&words, ModelConfig::desk().vocab_size, 1).map_err(|e| e.to_string())?;
    let ids: Vec<Vec<usize>> = words.iter().map(|w| vocab.encode(w)).collect();
    let gold = gold_spans(&bank);
    let lens: Vec<usize> = ids.iter().map(|s| s.len()).collect();
    let random = random_baseline(&lens, &gold, 0, 20)?;
    let conv = SpanConvention::default();

    let mut scores = Vec::new();
    let mut trees = Vec::new();
    for seed in 1..=3u64 {
        let model = train_desk(Variant::Tree, seed, &vocab, &ids)?;
        let parsed = parse_batch(&model, &ids, &ParserConfig::default(), ParseMode::MultiLayer, 64)
            .map_err(|e| e.to_string())?;
        let pred: Vec<SpanSet> = parsed.iter().map(|t| spans_from_tree(t, conv)).collect();
        let score = corpus_f1(&pred, &gold).map_err(|e| e.to_string())?.micro.f1;
        println!("  seed {seed}: F1 {score:.1}");
        scores.push(score);
        trees.push((seed, model));
    }
    INDUCTION.with(|cell| {
        *cell.borrow_mut() = Some(Induction {
            vocab: vocab.clone(),
            train_ids: ids.clone(),
            trees,
        })
    });
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[1];
    ensure(median >= random + 10.0, || {
        format!("median F1 {median:.1} against random {random:.1}, need +10")
    })?;
    Ok(format!(
        "{} words in vocabulary, median F1 {median:.1} (seeds {:.1}/{:.1}/{:.1}) vs random {random:.1}, {:.0} s",
        vocab.len() - vocab.first_ordinary(),
        scores[0],
        scores[1],
        scores[2],
        start.elapsed().as_secs_f64()
    ))
}

fn perplexity_checks() -> Check {
    let sents = vec![vec![3, 4, 5], vec![6, 7]];
    let uniform = masked_perplexity(&UniformScorer { vocab_size: 57 }, &sents).map_err(|e| e.to_string())?;
    ensure((uniform - 57.0).abs() <= 1e-9 * 57.0, || format!("uniform gave {uniform}"))?;
    let perfect = masked_perplexity(&FnScorer(|_: &[usize], _| 0.0), &sents).map_err(|e| e.to_string())?;
    ensure(perfect == 1.0, || format!("perfect gave {perfect}"))?;
    // log p = -(i + 1) / 2 at position i: total -(0.5 + 1.0 + 1.5) - (0.5 + 1.0) over 5 masks.
    let hand = masked_perplexity(&FnScorer(|_: &[usize], i| -((i + 1) as f64) / 2.0), &sents)
        .map_err(|e| e.to_string())?;
    ensure((hand - 0.9f64.exp()).abs() < 1e-9, || format!("hand fixture {hand}"))?;

    let run = INDUCTION.with(|cell| cell.borrow_mut().take());
    let run = run.ok_or("the grammar induction models are unavailable")?;
    let test_words: Vec<Vec<String>> = synthetic::generate_treebank(200, 5, 70)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|s| s.words)
        .collect();
    let test: Vec<Vec<usize>> = test_words.iter().map(|w| run.vocab.encode(w)).collect();
    let unigram = UnigramScorer::fit(&run.train_ids, run.vocab.len(), run.vocab.first_ordinary());
    let unigram_ppl = masked_perplexity(&unigram, &test).map_err(|e| e.to_string())?;
    let plain = train_desk(Variant::Plain, 1, &run.vocab, &run.train_ids)?;

    let mut rows = vec![("uniform".to_string(), run.vocab.len() as f64), ("unigram".to_string(), unigram_ppl)];
    for (seed, m) in &run.trees {
        rows.push((format!("tree seed {seed}"), masked_perplexity(m, &test).map_err(|e| e.to_string())?));
    }
    rows.push(("plain seed 1".to_string(), masked_perplexity(&plain, &test).map_err(|e| e.to_string())?));
    println!("  {:<14} {:>10}", "model", "perplexity");
    for (name, ppl) in &rows {
        println!("  {name:<14} {ppl:>10.2}");
    }
    for (name, ppl) in &rows[2..] {
        ensure(*ppl < unigram_ppl, || format!("{name} perplexity {ppl:.2} not below unigram {unigram_ppl:.2}"))?;
    }
    Ok(format!("formula fixtures exact; all models below unigram {unigram_ppl:.2}"))
}

fn parameter_overhead() -> Check {
    let mut parts = Vec::new();
    for (name, cfg) in [("desk", ModelConfig::desk()), ("paper", ModelConfig::paper())] {
        let tree = Model::<f32>::new(cfg, 1).map_err(|e| e.to_string())?;
        let with = tree.count_params();
        let without = tree.without_links().map_err(|e| e.to_string())?.count_params();
        let pct = 100.0 * (with - without) as f64 / without as f64;
        ensure((8.0..=12.0).contains(&pct), || format!("{name}: {with} vs {without} is {pct:.2}%"))?;
        parts.push(format!("{name} {with} vs {without} (+{pct:.2}%)"));
    }
    Ok(parts.join(", "))
}

fn cli(dir: &Path, args: &[&str]) -> std::result::Result<(), String> {
    let o = Command::new(BIN).args(args).current_dir(dir).output().map_err(|e| e.to_string())?;
    ensure(o.status.success(), || {
        format!("`{}` failed: {}", args.join(" "), String::from_utf8_lossy(&o.stderr))
    })
}

fn files(dir: &Path) -> std::result::Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if !name.ends_with(".manifest.json") && name != "manifest.json" {
            out.insert(name, std::fs::read(&path).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

fn same_outputs(dir: &Path, a: &str, b: &str) -> std::result::Result<usize, String> {
    let (x, y) = (files(&dir.join(a))?, files(&dir.join(b))?);
    ensure(!x.is_empty() && x.keys().eq(y.keys()), || format!("{a} and {b} hold different files"))?;
    for (name, bytes) in &x {
        ensure(&y[name] == bytes, || format!("{name} differs between {a} and {b}"))?;
    }
    Ok(x.len())
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let data = fixture("synthetic50.mrg");
    let text = fixture("synthetic50.txt");
    let ck = fixture("tiny.ckpt");
    let (data, text, ck) = (data.to_str().unwrap(), text.to_str().unwrap(), ck.to_str().unwrap());
    let train_args = [
        "train", "--data", data, "--d-model", "16", "--heads", "2", "--d-ff", "32", "--batch-tokens", "64", "--epochs",
        "2", "--seed", "9",
    ];
    for out in ["t1", "t2"] {
        cli(dir, &[&train_args[..], &["--out", out]].concat())?;
    }
    let ckpts = same_outputs(dir, "t1", "t2")?;
    for out in ["p1", "p2"] {
        std::fs::create_dir_all(dir.join(out)).map_err(|e| e.to_string())?;
        cli(dir, &["parse", "--checkpoint", ck, "--input", text, "--out", &format!("{out}/trees.txt")])?;
    }
    same_outputs(dir, "p1", "p2")?;
    let sentence = "these cars held many cats near these dogs";
    for out in ["e1", "e2"] {
        for what in ["attention", "prior", "links"] {
            cli(
                dir,
                &["export-attn", "--checkpoint", ck, "--sentence", sentence, "--what", what, "--out", out],
            )?;
        }
    }
    let exports = same_outputs(dir, "e1", "e2")?;
    Ok(format!("{ckpts} training artifacts, parse output and {exports} exports byte-identical"))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("prior builder matches the direct product", prior_oracle),
        ("link probabilities never decrease with depth", monotone_links),
        ("gradients match finite differences", gradient_check),
        ("all-ones prior reproduces the plain encoder", gating_identity),
        ("tree decoding fixtures and fuzzing", parser_fixtures),
        ("bracket scorer and baselines", scorer_checks),
        ("grammar induction beats random trees", grammar_induction),
        ("masked perplexity", perplexity_checks),
        ("link parameter overhead", parameter_overhead),
        ("command-line determinism", determinism),
    ];
    let only: Option<Vec<usize>> = std::env::var("TREEFORMER_CRITERIA")
        .ok()
        .map(|v| v.split(',').filter_map(|k| k.trim().parse().ok()).collect());
    let mut failed = 0;
    let mut ran = 0;
    for (k, (title, check)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(k + 1))) {
            continue;
        }
        ran += 1;
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {title}: {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {title}: {why}", k + 1);
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
