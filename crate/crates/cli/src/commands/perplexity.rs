use std::fmt::Write as _;

use treeformer::evaluation::aggregate;
use treeformer::training::{masked_perplexity, UniformScorer, UnigramScorer};

use crate::error::{CliError, Result};
use crate::io::{self, AnyCheckpoint, Pipeline};
use crate::manifest::RunManifest;
use crate::{with_checkpoint, PerplexityArgs};

pub fn run(a: &PerplexityArgs, m: &mut RunManifest) -> Result<()> {
    let mut rows: Vec<(String, f64)> = Vec::new();
    let mut vocab_ref = None;
    for path in &a.checkpoint {
        m.checkpoint(path);
        let ck = io::load_checkpoint(path)?;
        let ppl = with_checkpoint!(&ck, c => {
            let pipeline = Pipeline::from_meta(c);
            let test: Vec<Vec<usize>> = io::read_sentences(&a.data, a.format, pipeline)?
                .iter()
                .map(|s| c.vocab.encode(&pipeline.words(s)))
                .collect();
            masked_perplexity(&c.model, &test)?
        });
        let variant = with_checkpoint!(&ck, c => c.model.config.variant.as_str());
        rows.push((format!("{} ({variant})", path.display()), ppl));
        if vocab_ref.is_none() {
            vocab_ref = Some(ck);
        }
    }
    let ck = vocab_ref.ok_or_else(|| CliError::Usage("--checkpoint is required".into()))?;
    let (vocab, pipeline) = match &ck {
        AnyCheckpoint::F32(c) => (c.vocab.clone(), Pipeline::from_meta(c)),
        AnyCheckpoint::F64(c) => (c.vocab.clone(), Pipeline::from_meta(c)),
    };
    let test: Vec<Vec<usize>> = io::read_sentences(&a.data, a.format, pipeline)?
        .iter()
        .map(|s| vocab.encode(&pipeline.words(s)))
        .collect();
    rows.push((
        "uniform".into(),
        masked_perplexity(&UniformScorer { vocab_size: vocab.len() }, &test)?,
    ));
    if let Some(train) = &a.train {
        let ids: Vec<Vec<usize>> = io::read_sentences(train, a.format, pipeline)?
            .iter()
            .map(|s| vocab.encode(&pipeline.words(s)))
            .collect();
        let unigram = UnigramScorer::fit(&ids, vocab.len(), vocab.first_ordinary());
        rows.push(("unigram".into(), masked_perplexity(&unigram, &test)?));
    }
    let mut text = String::new();
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(5);
    let _ = writeln!(text, "{:<width$}  {:>10}", "model", "perplexity");
    for (name, p) in &rows {
        let _ = writeln!(text, "{name:<width$}  {p:>10.3}");
    }
    let models: Vec<f64> = rows.iter().take(a.checkpoint.len()).map(|r| r.1).collect();
    if models.len() > 1 {
        let (md, _) = aggregate(&models)?;
        let _ = writeln!(text, "median over models {md:.3}");
    }
    print!("{text}");
    io::create_dir(&a.out)?;
    let path = a.out.join("perplexity.csv");
    let mut w = io::csv_writer(&path)?;
    w.write_record(["model", "perplexity"])?;
    for (name, p) in &rows {
        w.write_record([name.clone(), p.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    m.output(&path);
    Ok(())
}
