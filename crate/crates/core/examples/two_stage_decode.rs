//! Walks through one hybrid decode step by step: Skip-AT anchors, the
//! stage-II input, the one-pass fill, and the combined score.

use hrt::data::TokenId;
use hrt::decoding::{build_stage2_input, combined_score, hrt_translate, skip_at_stage, skip_cmlm_fill};
use hrt::model::{InferenceModel, ModelConfig, Seq2Seq};

fn main() -> hrt::Result<()> {
    let config = ModelConfig {
        vocab_size: 20,
        max_len: 12,
        enc_layers: 2,
        ..ModelConfig::default()
    };
    // Untrained weights: the outputs are arbitrary, the mechanics are not.
    let model = InferenceModel::<f64>::from_model(&Seq2Seq::new(config, 42)?);
    let source: Vec<TokenId> = vec![8, 9, 10, 11, 12];
    let k = 2;

    let (hyps, steps) = skip_at_stage(&model, &source, k, 3, None)?;
    println!("stage I: {steps} decoder calls, {} finished hypotheses", hyps.len());
    let best = &hyps[0];
    println!("  anchors {:?} at positions {:?}, score {:.3}", best.anchors, best.positions, best.score);

    let input = build_stage2_input(&best.anchors, k)?;
    println!("stage II input {:?}", input.tokens());
    let memory = model.encode(&source)?;
    let (filled, fill_lps, calls) = skip_cmlm_fill(&model, &memory, &input)?;
    println!("filled {filled:?} in {calls} call");
    println!("combined score {:.4}", combined_score(best.score, &fill_lps, filled.len(), 0.6));

    let t = hrt_translate(&model, &source, k, 3, 1, 0.6)?;
    println!("hrt_translate -> {:?} ({} decoder calls)", t.tokens, t.stats.decoder_calls);
    Ok(())
}
