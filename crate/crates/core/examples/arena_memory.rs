//! Sizes a decoding workspace from the closed-form estimate, runs decodes
//! through it, and prints the arena high-water marks per phase.

use hrt::bench::{estimate_max_bytes, Phase};
use hrt::data::TokenId;
use hrt::decoding::{DecodeOptions, Workspace};
use hrt::model::{InferenceModel, ModelConfig, Seq2Seq};

fn main() -> hrt::Result<()> {
    let config = ModelConfig::default();
    let model = InferenceModel::<f32>::from_model(&Seq2Seq::new(config.clone(), 0)?);
    for k in [1, 2, 4] {
        let e = estimate_max_bytes::<f32>(&config, config.max_len, k, 5, 5);
        println!(
            "k={k}: encoder {} B, step {} B, infill {} B, sentence {} B",
            e.encoder, e.skip_at, e.skip_cmlm, e.sentence
        );
    }

    let mut ws = Workspace::new(&config, 5, 5)?;
    let mut out = Vec::new();
    for n in [5usize, 50, 200] {
        let src: Vec<TokenId> = (0..n).map(|i| 7 + (i % 60) as TokenId).collect();
        ws.translate_into(&model, &src, &DecodeOptions::at(5), &mut out)?;
        ws.translate_into(&model, &src, &DecodeOptions::hrt(2, 5, 5), &mut out)?;
    }
    let est = ws.estimate();
    let arena = ws.phase_arena();
    for (phase, bound) in [(Phase::Encoder, est.encoder), (Phase::SkipAt, est.skip_at), (Phase::SkipCmlm, est.skip_cmlm)] {
        println!("{phase:>9}: peak {:>8} B of {:>8} B", arena.phase_peak(phase), bound);
    }
    println!(" sentence: peak {:>8} B of {:>8} B", ws.state_arena().high_water(), est.sentence);
    Ok(())
}
