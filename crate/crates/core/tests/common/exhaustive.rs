//! Brute-force check of HRT candidate selection on a tiny trained model.

use hrt::data::{generate_synthetic, SyntheticSpec, SyntheticTask, TokenId, EOS, MASK};
use hrt::decoding::{build_stage2_input, hrt_translate, skip_at_stage, truncate_at_eos};
use hrt::model::{InferenceModel, MaskMode, ModelConfig, Seq2Seq};
use hrt::training::{train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAX_LEN: usize = 6;
pub const K: usize = 2;

/// Vocabulary of 8: four fixed specials, `[BOS_2]`, three regular tokens.
pub fn tiny_model() -> Seq2Seq {
    let corpus = generate_synthetic(&SyntheticSpec {
        task: SyntheticTask::Reverse,
        n_pairs: 2000,
        lengths: 1..=MAX_LEN,
        vocab_size: 8,
        chunk_sizes: vec![K],
        max_len: MAX_LEN,
        seed: 5,
    })
    .unwrap();
    let config = ModelConfig {
        d_model: 16,
        d_ff: 32,
        n_heads: 2,
        enc_layers: 1,
        dec_layers: 1,
        max_len: MAX_LEN,
        ..ModelConfig::for_vocab(&corpus.vocab)
    };
    let mut model = Seq2Seq::new(config, 3).unwrap();
    let cfg = TrainConfig {
        steps: 300,
        batch_pairs: 16,
        k: K,
        warmup: 50,
        peak_lr: 3e-3,
        fixed_pk: Some(0.5),
        ..Default::default()
    };
    train(&mut model, &corpus, &cfg).unwrap();
    model
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z = row.iter().map(|x| (x - m).exp()).sum::<f64>().ln() + m;
    row.iter().map(|x| x - z).collect()
}

pub struct ExhaustiveReport {
    pub sources: usize,
    pub passed: usize,
    pub fills_enumerated: usize,
    pub first_failure: Option<String>,
}

/// For `n` random sources, enumerates every fill of every stage-I survivor
/// and checks that the decoder returned the best one under the combined
/// score.
pub fn exhaustive_oracle(model: &Seq2Seq, n: usize, seed: u64) -> ExhaustiveReport {
    let (b_at, b_nat, alpha) = (4, 4, 0.6);
    let inf = InferenceModel::<f64>::from_model(model);
    let c = model.config();
    let first = 4 + c.chunk_sizes.len() as TokenId;
    let choices: Vec<TokenId> = std::iter::once(EOS).chain(first..c.vocab_size as TokenId).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ExhaustiveReport {
        sources: n,
        passed: 0,
        fills_enumerated: 0,
        first_failure: None,
    };
    for _ in 0..n {
        let src: Vec<TokenId> = (0..rng.gen_range(1..=MAX_LEN))
            .map(|_| rng.gen_range(first..c.vocab_size as TokenId))
            .collect();
        let got = hrt_translate(&inf, &src, K, b_at, b_nat, alpha).unwrap();
        let (mut hyps, _) = skip_at_stage(&inf, &src, K, b_at, None).unwrap();
        hyps.truncate(b_nat);

        let mut best: Option<(f64, Vec<TokenId>)> = None;
        for h in &hyps {
            let input = build_stage2_input(&h.anchors, K).unwrap();
            let logits = model
                .reference_logits(&src, input.tokens(), input.positions(), MaskMode::Full)
                .unwrap();
            let masks: Vec<usize> = (0..input.len()).filter(|&i| input.tokens()[i] == MASK).collect();
            let lps: Vec<Vec<f64>> = masks.iter().map(|&i| log_softmax(logits.row(i))).collect();
            let total = choices.len().pow(masks.len() as u32);
            for code in 0..total {
                let mut filled = input.tokens().to_vec();
                let mut fill_score = 0.0;
                let mut rest = code;
                for (j, &i) in masks.iter().enumerate() {
                    let tok = choices[rest % choices.len()];
                    rest /= choices.len();
                    filled[i] = tok;
                    fill_score += lps[j][tok as usize];
                }
                let score = (h.score + fill_score) / (filled.len() as f64).powf(alpha);
                report.fills_enumerated += 1;
                if best.as_ref().is_none_or(|b| score > b.0 + 1e-12) {
                    best = Some((score, filled));
                }
            }
        }
        let (score, filled) = best.unwrap();
        let mut want = truncate_at_eos(&filled).to_vec();
        want.truncate(c.max_len);
        if (got.stats.score - score).abs() < 1e-9 && got.tokens == want {
            report.passed += 1;
        } else if report.first_failure.is_none() {
            report.first_failure = Some(format!(
                "source {src:?}: decoder {:?} ({:.6}), enumeration {want:?} ({score:.6})",
                got.tokens, got.stats.score
            ));
        }
    }
    report
}
