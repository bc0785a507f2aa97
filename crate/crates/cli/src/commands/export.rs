use std::path::Path;

use treeformer::encoder::checkpoint::Checkpoint;
use treeformer::encoder::{PriorMode, Variant};
use treeformer_autograd::Real;

use crate::error::{CliError, Result};
use crate::io::{self, Pipeline};
use crate::manifest::RunManifest;
use crate::{with_checkpoint, ExportArgs, ExportWhat, PriorArg};

pub fn run(a: &ExportArgs, m: &mut RunManifest) -> Result<()> {
    m.set_config([
        ("export.what".to_string(), a.what.as_str().to_string()),
        ("export.prior".to_string(), format!("{:?}", a.prior).to_lowercase()),
        (
            "export.layers".to_string(),
            a.layers.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(","),
        ),
    ]);
    m.checkpoint(&a.checkpoint);
    let ck = io::load_checkpoint(&a.checkpoint)?;
    let written = with_checkpoint!(ck, c => export(&c, a)?);
    for p in written {
        m.output(&p);
    }
    Ok(())
}

fn export<T: Real>(ck: &Checkpoint<T>, a: &ExportArgs) -> Result<Vec<std::path::PathBuf>> {
    let n_layers = ck.model.config.num_layers;
    let layers: Vec<usize> = if a.layers.is_empty() { (0..n_layers).collect() } else { a.layers.clone() };
    if let Some(&bad) = layers.iter().find(|&&l| l >= n_layers) {
        return Err(CliError::Usage(format!("layer {bad} is out of range for a {n_layers}-layer model")));
    }
    let tree = ck.model.config.variant == Variant::Tree;
    if !tree && a.what != ExportWhat::Attention {
        return Err(CliError::Usage(format!(
            "a plain Transformer has no {}; export attention instead",
            a.what.as_str()
        )));
    }
    let pipeline = Pipeline::from_meta(ck);
    let words: Vec<String> = a.sentence.split_whitespace().map(String::from).collect();
    if words.is_empty() {
        return Err(CliError::Usage("--sentence is empty".into()));
    }
    let model_words: Vec<String> = words
        .iter()
        .map(|w| if pipeline.lowercase { w.to_lowercase() } else { w.clone() })
        .collect();
    let ids = ck.vocab.encode(&model_words);
    let prior = match a.prior {
        PriorArg::Learned => PriorMode::Learned,
        PriorArg::Ones => PriorMode::AllOnes,
    };
    let enc = ck.model.encode_batch(&[ids], prior)?.remove(0);
    io::create_dir(&a.out)?;
    let n = words.len();
    let mut written = Vec::new();
    match a.what {
        ExportWhat::Links => {
            let path = a.out.join("links.csv");
            let mut w = io::csv_writer(&path)?;
            w.write_record(["layer", "link", "left", "right", "prob"])?;
            for &l in &layers {
                for (i, p) in enc.links[l].probs.iter().enumerate() {
                    w.write_record([l.to_string(), i.to_string(), words[i].clone(), words[i + 1].clone(), p.to_string()])?;
                }
            }
            w.flush().map_err(|e| CliError::io(&path, e))?;
            written.push(path);
        }
        what => {
            for &l in &layers {
                let matrix: Vec<f64> = match what {
                    ExportWhat::Prior => enc.priors[l].matrix.clone(),
                    _ => enc.mean_attention(l).data().to_vec(),
                };
                let path = a.out.join(format!("{}_layer_{l}.csv", what.as_str()));
                write_matrix(&path, &words, &matrix, n)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

/// Square matrix with a header of column words and the row word in front.
fn write_matrix(path: &Path, words: &[String], matrix: &[f64], n: usize) -> Result<()> {
    let mut w = io::csv_writer(path)?;
    let mut header = vec!["token".to_string()];
    header.extend(words.iter().cloned());
    w.write_record(&header)?;
    for i in 0..n {
        let mut rec = vec![words[i].clone()];
        rec.extend(matrix[i * n..(i + 1) * n].iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
