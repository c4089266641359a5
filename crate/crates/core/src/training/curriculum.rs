use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{SentencePair, TokenId};
use crate::error::{Error, Result};
use crate::training::samples::{
    build_at_sample, build_cmlm_sample, build_skip_at_sample, build_skip_cmlm_with_layout, SkipCmlmLayout,
    TrainingSample,
};

/// Share of primary (skip) tasks at step `t` of `total`: `(t/T)^λ`.
pub fn schedule_pk(t: usize, total: usize, lambda: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::InvalidConfig("curriculum length T must be positive".into()));
    }
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::InvalidConfig(format!("curriculum exponent {lambda} must be positive")));
    }
    let r = (t.min(total) as f64) / total as f64;
    Ok(r.powf(lambda))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub total: usize,
    pub lambda: f64,
}

impl CurriculumSchedule {
    pub fn new(total: usize, lambda: f64) -> Result<Self> {
        schedule_pk(0, total, lambda)?;
        Ok(Self { total, lambda })
    }

    pub fn pk(&self, t: usize) -> f64 {
        schedule_pk(t, self.total, self.lambda).expect("validated in new")
    }
}

/// Samples for one step. Each pair is primary with probability `p_k`
/// and contributes two consecutive samples: SKIP-AT + SKIP-CMLM if
/// primary, AT + CMLM otherwise.
pub fn assemble_batch<R: Rng>(
    pairs: &[&SentencePair],
    p_k: f64,
    k: usize,
    bos_k: TokenId,
    layout: SkipCmlmLayout,
    rng: &mut R,
) -> Result<Vec<TrainingSample>> {
    if !(0.0..=1.0).contains(&p_k) {
        return Err(Error::InvalidConfig(format!("p_k {p_k} outside [0, 1]")));
    }
    let mut out = Vec::with_capacity(2 * pairs.len());
    for pair in pairs {
        if rng.gen::<f64>() < p_k {
            out.push(build_skip_at_sample(pair, k, bos_k)?);
            out.push(build_skip_cmlm_with_layout(pair, k, layout)?);
        } else {
            out.push(build_at_sample(pair)?);
            out.push(build_cmlm_sample(pair, rng)?);
        }
    }
    Ok(out)
}
