//! Batch-1 speed comparison of AT and HRT on one model: source words per
//! second over five runs, plus decoder call counts.

use hrt::bench::measure_wps;
use hrt::data::{generate_synthetic, SyntheticSpec, SyntheticTask};
use hrt::decoding::DecodeOptions;
use hrt::model::{InferenceModel, ModelConfig, Seq2Seq};

fn main() -> hrt::Result<()> {
    let corpus = generate_synthetic(&SyntheticSpec {
        task: SyntheticTask::Copy,
        n_pairs: 100,
        lengths: 10..=30,
        ..Default::default()
    })?;
    let config = ModelConfig::for_vocab(&corpus.vocab);
    let model = InferenceModel::<f32>::from_model(&Seq2Seq::new(config, 0)?);
    let sources: Vec<_> = corpus.pairs.iter().map(|p| p.source.clone()).collect();
    for (name, opts) in [
        ("AT b=1", DecodeOptions::at(1)),
        ("HRT k=2", DecodeOptions::hrt(2, 1, 1)),
        ("HRT k=3", DecodeOptions::hrt(3, 1, 1)),
        ("HRT k=4", DecodeOptions::hrt(4, 1, 1)),
    ] {
        let (r, _) = measure_wps(&model, "copy", &sources, &opts, 5)?;
        println!(
            "{name:<8} {:>9.0} wps (std {:>6.0})  {:>6} decoder calls",
            r.wps_mean, r.wps_std, r.decoder_calls
        );
    }
    Ok(())
}
