//! AT pretraining followed by joint four-task finetuning under the
//! curriculum, then a side-by-side decode.

use hrt::data::{generate_synthetic, SyntheticSpec, SyntheticTask};
use hrt::decoding::{translate, DecodeOptions};
use hrt::model::{InferenceModel, ModelConfig, Seq2Seq};
use hrt::training::{finetune_from_at, train, TaskMix, TrainConfig};

fn main() -> hrt::Result<()> {
    let corpus = generate_synthetic(&SyntheticSpec {
        task: SyntheticTask::Reverse,
        n_pairs: 5000,
        lengths: 3..=12,
        vocab_size: 23,
        max_len: 16,
        ..Default::default()
    })?;
    let (train_set, test) = corpus.split_tail(50);
    let config = ModelConfig {
        enc_layers: 2,
        max_len: 16,
        ..ModelConfig::for_vocab(&train_set.vocab)
    };
    let mut at = Seq2Seq::new(config, 1)?;
    let base = TrainConfig {
        steps: 600,
        warmup: 100,
        peak_lr: 2e-3,
        tasks: TaskMix::AtOnly,
        ..Default::default()
    };
    train(&mut at, &train_set, &base)?;
    let dir = std::env::temp_dir().join("hrt-finetune-example");
    std::fs::create_dir_all(&dir)?;
    let ckpt = dir.join("at.ckpt");
    at.save(&ckpt)?;

    let joint = TrainConfig {
        tasks: TaskMix::Joint,
        k: 2,
        steps: 400,
        ..base
    };
    let (hrt_model, trace) = finetune_from_at(&ckpt, &train_set, &joint)?;
    let last = trace.last().unwrap();
    println!("finetune done: p_k {:.2}, per-task loss {:?}", last.p_k, last.task_loss);

    let inf = InferenceModel::<f32>::from_model(&hrt_model);
    for p in test.pairs.iter().take(3) {
        let at_out = translate(&inf, &p.source, &DecodeOptions::at(1))?;
        let hrt_out = translate(&inf, &p.source, &DecodeOptions::hrt(2, 1, 1))?;
        println!("source {}", test.vocab.decode(&p.source));
        println!("  AT  ({} calls) {}", at_out.stats.decoder_calls, test.vocab.decode(&at_out.tokens));
        println!("  HRT ({} calls) {}", hrt_out.stats.decoder_calls, test.vocab.decode(&hrt_out.tokens));
    }
    Ok(())
}
