//! Generates the mapped-swap corpus with a held-out split and writes it
//! next to its vocabulary.
//!
//! cargo run --release --example generate_corpus -- /tmp/hrt-data

use std::path::PathBuf;

use hrt::data::{generate_synthetic, SyntheticSpec, SyntheticTask};

fn main() -> hrt::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "hrt-data".into()));
    std::fs::create_dir_all(&dir)?;
    let spec = SyntheticSpec {
        task: SyntheticTask::mapped_swap(64, 0.3, 7),
        n_pairs: 51_000,
        ..Default::default()
    };
    let corpus = generate_synthetic(&spec)?;
    corpus.vocab.save(dir.join("vocab.txt"))?;
    let (train, test) = corpus.split_tail(1000);
    train.save(dir.join("train.tsv"))?;
    test.save(dir.join("test.tsv"))?;

    let p = &test.pairs[0];
    println!("source: {}", test.vocab.decode(&p.source));
    println!("target: {}", test.vocab.decode(&p.target));
    println!("{} train / {} test pairs in {}", train.len(), test.len(), dir.display());
    Ok(())
}
