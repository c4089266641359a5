//! Distills a corpus through a briefly trained teacher and scores the
//! teacher outputs against the references with BLEU.

use hrt::bench::{bleu, sequence_accuracy};
use hrt::data::{generate_synthetic, SyntheticSpec, SyntheticTask};
use hrt::model::{InferenceModel, ModelConfig, Seq2Seq};
use hrt::training::{distill_corpus, train, TaskMix, TrainConfig};

fn main() -> hrt::Result<()> {
    let corpus = generate_synthetic(&SyntheticSpec {
        task: SyntheticTask::mapped_swap(16, 0.3, 7),
        n_pairs: 3000,
        lengths: 3..=10,
        vocab_size: 16 + 7,
        max_len: 12,
        ..Default::default()
    })?;
    let config = ModelConfig {
        enc_layers: 2,
        max_len: 12,
        ..ModelConfig::for_vocab(&corpus.vocab)
    };
    let mut teacher = Seq2Seq::new(config, 0)?;
    let cfg = TrainConfig {
        steps: 400,
        warmup: 100,
        peak_lr: 2e-3,
        tasks: TaskMix::AtOnly,
        ..Default::default()
    };
    train(&mut teacher, &corpus, &cfg)?;

    let (_, sample) = corpus.clone().split_tail(200);
    let inf = InferenceModel::<f32>::from_model(&teacher);
    let (distilled, report) = distill_corpus(&inf, &sample, 5, 0.6)?;
    println!("{report:?}");
    let hyps: Vec<_> = distilled.pairs.iter().map(|p| p.target.clone()).collect();
    let refs: Vec<_> = sample.pairs.iter().map(|p| p.target.clone()).collect();
    println!("teacher BLEU {:.2}, sequence accuracy {:.3}", bleu(&hyps, &refs, 4)?, sequence_accuracy(&hyps, &refs));
    Ok(())
}
