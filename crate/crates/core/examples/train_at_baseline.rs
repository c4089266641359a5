//! Trains the autoregressive baseline on a small copy task and writes the
//! loss trace as CSV.
//!
//! cargo run --release --example train_at_baseline -- /tmp/at.ckpt

use hrt::data::{generate_synthetic, SyntheticSpec, SyntheticTask};
use hrt::decoding::{at_translate, DecodeOptions};
use hrt::model::{InferenceModel, ModelConfig, Seq2Seq};
use hrt::training::{loss_improvement, train_with, write_loss_csv, TaskMix, TrainConfig};

fn main() -> hrt::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "at.ckpt".into());
    let corpus = generate_synthetic(&SyntheticSpec {
        task: SyntheticTask::Copy,
        n_pairs: 5000,
        lengths: 3..=12,
        vocab_size: 23,
        max_len: 16,
        ..Default::default()
    })?;
    let (train, test) = corpus.split_tail(100);
    let config = ModelConfig {
        enc_layers: 2,
        max_len: 16,
        ..ModelConfig::for_vocab(&train.vocab)
    };
    let mut model = Seq2Seq::new(config, 0)?;
    let cfg = TrainConfig {
        steps: 600,
        tasks: TaskMix::AtOnly,
        warmup: 100,
        peak_lr: 2e-3,
        ..Default::default()
    };
    let trace = train_with(&mut model, &train, &cfg, |r| {
        if (r.step + 1) % 100 == 0 {
            println!("step {:>4} loss {:.4}", r.step + 1, r.loss);
        }
    })?;
    write_loss_csv(format!("{out}.loss.csv"), &trace)?;
    model.save(&out)?;
    if let Some((first, last)) = loss_improvement(&trace) {
        println!("mean loss {first:.3} -> {last:.3}");
    }

    let inf = InferenceModel::<f32>::from_model(&model);
    let mut correct = 0;
    for p in &test.pairs {
        let t = at_translate(&inf, &p.source, 1, DecodeOptions::at(1).length_penalty, None)?;
        correct += (t.tokens == p.target) as usize;
    }
    println!("held-out sequence accuracy {correct}/{}", test.len());
    Ok(())
}
