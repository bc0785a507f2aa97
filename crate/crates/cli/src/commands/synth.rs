use treeformer::corpus::synthetic;

use crate::error::{CliError, Result};
use crate::io;
use crate::manifest::RunManifest;
use crate::SynthArgs;

pub fn run(a: &SynthArgs, m: &mut RunManifest) -> Result<()> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    m.seed = Some(a.seed);
    m.set_config([
        ("synthetic.n".to_string(), a.n.to_string()),
        ("synthetic.max_depth".to_string(), a.max_depth.to_string()),
    ]);
    let data = synthetic::generate_treebank(a.n, a.max_depth, a.seed)?;
    let mut trees = String::new();
    let mut raw = String::new();
    for s in &data {
        if let Some(t) = &s.tree {
            trees.push_str(&t.to_string());
            trees.push('\n');
        }
        raw.push_str(&s.words.join(" "));
        raw.push('\n');
    }
    io::write_text(&a.out, &trees)?;
    m.output(&a.out);
    if let Some(p) = &a.raw {
        io::write_text(p, &raw)?;
        m.output(p);
    }
    let words: usize = data.iter().map(|s| s.len()).sum();
    println!("{} sentences, {words} words", data.len());
    Ok(())
}
