//! Hand-written expectations for the four sample constructions and the
//! curriculum mix.

use hrt::data::{SentencePair, TokenId, BOS, EOS, MASK, PAD};
use hrt::training::{
    assemble_batch, build_at_sample, build_cmlm_sample_masked, build_skip_at_sample, build_skip_cmlm_sample,
    schedule_pk, SkipCmlmLayout, Task, TrainConfig, TrainingSample,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// y1..y4 and the [BOS_2] id of the default chunk set {2,3,4}.
const Y: [TokenId; 4] = [11, 12, 13, 14];
const BOS2: TokenId = 4;

fn expect(
    name: &str,
    s: &TrainingSample,
    tokens: &[TokenId],
    positions: &[usize],
    targets: &[TokenId],
    mask: &[bool],
) -> Result<(), String> {
    let got = (s.input.tokens(), s.input.positions(), s.targets.as_slice(), s.loss_mask.as_slice());
    if got != (tokens, positions, targets, mask) {
        return Err(format!("{name}: got {got:?}"));
    }
    Ok(())
}

/// The worked y1..y4, k=2 example for all four tasks.
pub fn four_task_example() -> Result<(), String> {
    let [y1, y2, y3, y4] = Y;
    let pair = SentencePair::new(vec![20, 21, 22], Y.to_vec());
    let e = |r: hrt::Result<TrainingSample>| r.map_err(|e| e.to_string());

    let at = e(build_at_sample(&pair))?;
    expect("AT", &at, &[BOS, y1, y2, y3, y4], &[0, 1, 2, 3, 4], &[y1, y2, y3, y4, EOS], &[true; 5])?;

    let cmlm = e(build_cmlm_sample_masked(&pair, &[2, 3]))?;
    expect(
        "CMLM",
        &cmlm,
        &[y1, MASK, MASK, y4, EOS],
        &[1, 2, 3, 4, 5],
        &[PAD, y2, y3, PAD, PAD],
        &[false, true, true, false, false],
    )?;

    let sat = e(build_skip_at_sample(&pair, 2, BOS2))?;
    expect("SKIP-AT", &sat, &[BOS2, y2, y4], &[0, 2, 4], &[y2, y4, EOS], &[true; 3])?;

    let scm = e(build_skip_cmlm_sample(&pair, 2))?;
    expect(
        "SKIP-CMLM",
        &scm,
        &[MASK, y2, MASK, y4, EOS],
        &[1, 2, 3, 4, 5],
        &[y1, PAD, y3, PAD, PAD],
        &[true, false, true, false, false],
    )?;

    let tasks = [at.task, cmlm.task, sat.task, scm.task];
    if tasks != [Task::At, Task::Cmlm, Task::SkipAt, Task::SkipCmlm] {
        return Err(format!("task labels {tasks:?}"));
    }
    Ok(())
}

fn primary_fraction(pairs: &[SentencePair], p_k: f64, rng: &mut ChaCha8Rng) -> f64 {
    let refs: Vec<&SentencePair> = pairs.iter().collect();
    let batch = assemble_batch(&refs, p_k, 2, BOS2, SkipCmlmLayout::Grid, rng).unwrap();
    let primary = batch.iter().filter(|s| s.task == Task::SkipAt).count();
    primary as f64 / pairs.len() as f64
}

/// Endpoints, the empirical mix at `p_k = 0.5`, and bucketed monotonicity
/// of the realized mix over a full schedule. Returns a summary line.
pub fn curriculum_checks() -> Result<String, String> {
    for lambda in [0.5, 1.0, 2.0] {
        let (a, b) = (schedule_pk(0, 1000, lambda).unwrap(), schedule_pk(1000, 1000, lambda).unwrap());
        if a != 0.0 || b != 1.0 {
            return Err(format!("lambda {lambda}: endpoints {a}, {b}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let pairs: Vec<SentencePair> = (0..10_000)
        .map(|i| SentencePair::new(vec![10 + (i % 7) as TokenId], vec![11, 12, 13, 14, 15][..1 + i % 5].to_vec()))
        .collect();
    let frac = primary_fraction(&pairs, 0.5, &mut rng);
    if !(0.47..=0.53).contains(&frac) {
        return Err(format!("primary fraction {frac:.4} at p_k = 0.5"));
    }

    let cfg = TrainConfig {
        steps: 2000,
        ..Default::default()
    };
    let per_step = &pairs[..32];
    let trace: Vec<f64> = (0..cfg.steps)
        .map(|t| primary_fraction(per_step, cfg.pk(t).unwrap(), &mut rng))
        .collect();
    let buckets: Vec<f64> = trace.chunks(cfg.steps / 20).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    if buckets.len() != 20 || buckets.windows(2).any(|w| w[1] < w[0]) {
        return Err(format!("bucket means not monotone: {buckets:.3?}"));
    }
    Ok(format!(
        "p_k(0)=0, p_k(T)=1; fraction at 0.5 = {frac:.4}; 20 bucket means {:.3}..{:.3} non-decreasing",
        buckets[0], buckets[19]
    ))
}
