use treeformer::corpus::Vocabulary;
use treeformer::encoder::checkpoint::Checkpoint;
use treeformer::encoder::Model;
use treeformer::training::{train, DirSink, TrainOutcome, Trainer};
use treeformer_autograd::Real;

use crate::config::{Precision, ResolvedConfig};
use crate::error::{CliError, Result};
use crate::io::{self, AnyCheckpoint, Pipeline};
use crate::manifest::RunManifest;
use crate::TrainArgs;

pub fn run(a: &TrainArgs, m: &mut RunManifest) -> Result<()> {
    let mut cfg = super::resolve_config(&a.config)?;
    m.seed = Some(cfg.train.seed);
    m.set_config(cfg.to_kv());
    for (k, v) in cfg.to_kv() {
        println!("{k}={v}");
    }
    if a.dry_run {
        return Ok(());
    }
    let data_path = a
        .data
        .as_ref()
        .ok_or_else(|| CliError::Usage("--data is required".into()))?;
    let pipeline = Pipeline {
        lowercase: cfg.corpus.lowercase,
        strip_punct: cfg.corpus.strip_punct,
    };
    let data = io::read_sentences(data_path, a.format, pipeline)?;
    if data.is_empty() {
        return Err(CliError::Usage(format!("data path `{}` holds no sentences", data_path.display())));
    }
    let words: Vec<Vec<String>> = data.iter().map(|s| pipeline.words(s)).collect();
    let valid_words: Option<Vec<Vec<String>>> = match &a.valid {
        Some(p) => Some(io::read_sentences(p, a.format, pipeline)?.iter().map(|s| pipeline.words(s)).collect()),
        None => None,
    };
    io::create_dir(&a.out)?;

    match &a.resume {
        Some(path) => match io::load_checkpoint(path)? {
            AnyCheckpoint::F32(ck) => resume(ck, &cfg, &words, valid_words.as_deref(), a, m),
            AnyCheckpoint::F64(ck) => resume(ck, &cfg, &words, valid_words.as_deref(), a, m),
        },
        None => {
            let vocab = Vocabulary::build(&words, cfg.model.vocab_size, cfg.corpus.min_freq)?;
            if vocab.len() < cfg.model.vocab_size {
                log::info!("vocabulary has {} tokens; model.vocab_size set to match", vocab.len());
            }
            cfg.model.vocab_size = vocab.len();
            m.set_config(cfg.to_kv());
            let vocab_path = a.out.join("vocab.txt");
            vocab.save(&vocab_path)?;
            m.output(&vocab_path);
            log::info!("unknown-word rate on training data: {:.4}", vocab.unk_rate(&words));
            match cfg.corpus.precision {
                Precision::F32 => fresh::<f32>(vocab, &cfg, pipeline, &words, valid_words.as_deref(), a, m),
                Precision::F64 => fresh::<f64>(vocab, &cfg, pipeline, &words, valid_words.as_deref(), a, m),
            }
        }
    }
}

fn fresh<T: Real>(
    vocab: Vocabulary,
    cfg: &ResolvedConfig,
    pipeline: Pipeline,
    words: &[Vec<String>],
    valid: Option<&[Vec<String>]>,
    a: &TrainArgs,
    m: &mut RunManifest,
) -> Result<()> {
    let model = Model::<T>::new(cfg.model.clone(), cfg.train.seed)?;
    let mut trainer = Trainer::new(model, vocab, cfg.train.clone())?;
    trainer.extra_meta = pipeline.to_meta();
    fit(trainer, words, valid, a, m)
}

fn resume<T: Real>(
    ck: Checkpoint<T>,
    cfg: &ResolvedConfig,
    words: &[Vec<String>],
    valid: Option<&[Vec<String>]>,
    a: &TrainArgs,
    m: &mut RunManifest,
) -> Result<()> {
    let trainer = Trainer::resume(ck, cfg.train.clone())?;
    log::info!("resuming after epoch {}", trainer.epoch);
    fit(trainer, words, valid, a, m)
}

fn fit<T: Real>(
    mut trainer: Trainer<T>,
    words: &[Vec<String>],
    valid: Option<&[Vec<String>]>,
    a: &TrainArgs,
    m: &mut RunManifest,
) -> Result<()> {
    let ids: Vec<Vec<usize>> = words.iter().map(|w| trainer.vocab.encode(w)).collect();
    let valid_ids: Option<Vec<Vec<usize>>> = valid.map(|v| v.iter().map(|w| trainer.vocab.encode(w)).collect());
    let mut sink = DirSink::new(&a.out)?;
    let result = train(&mut trainer, &ids, valid_ids.as_deref(), &mut sink);
    for p in &sink.written {
        if !m.checkpoints.contains(&p.display().to_string()) {
            m.checkpoint(p);
        }
    }
    let outcome: TrainOutcome = result?;
    let loss_path = a.out.join("loss.csv");
    let mut w = io::csv_writer(&loss_path)?;
    w.write_record(["step", "epoch", "loss"])?;
    for r in &outcome.losses {
        w.write_record([r.step.to_string(), r.epoch.to_string(), r.loss.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(&loss_path, e))?;
    m.output(&loss_path);
    if !outcome.valid_losses.is_empty() {
        let path = a.out.join("valid.csv");
        let mut w = io::csv_writer(&path)?;
        w.write_record(["epoch", "loss"])?;
        let first = trainer.epoch + 1 - outcome.valid_losses.len();
        for (i, l) in outcome.valid_losses.iter().enumerate() {
            w.write_record([(first + i).to_string(), l.to_string()])?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        m.output(&path);
    }
    for (e, l) in outcome.epoch_losses.iter().enumerate() {
        println!("epoch {} mean loss {l:.4}", e + 1 + trainer.epoch - outcome.epoch_losses.len());
    }
    if let Some(msg) = outcome.halted {
        return Err(CliError::Runtime(format!(
            "training halted: {msg}; the last good checkpoint is {}",
            a.out.join("last.ckpt").display()
        )));
    }
    Ok(())
}
