use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, SentencePair, TokenId};
use crate::error::{Error, Result};
use crate::model::{DecoderSegment, Seq2Seq};
use crate::numerics::{clip_grad_norm, Adam, AdamConfig, Graph, InverseSqrtSchedule};
use crate::training::curriculum::{assemble_batch, schedule_pk};
use crate::training::samples::{build_at_sample, SkipCmlmLayout, Task, TrainingSample};

/// Which tasks a run trains on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMix {
    /// AT + CMLM or SKIP-AT + SKIP-CMLM per pair, by curriculum.
    #[default]
    Joint,
    /// Plain autoregressive baseline: one AT sample per pair.
    AtOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    /// Sentence pairs drawn per step.
    pub batch_pairs: usize,
    pub k: usize,
    pub lambda: f64,
    /// Curriculum length `T`; defaults to `steps`.
    pub curriculum_steps: Option<usize>,
    /// Overrides the curriculum with a constant `p_k`.
    pub fixed_pk: Option<f64>,
    pub tasks: TaskMix,
    pub peak_lr: f64,
    pub warmup: usize,
    pub clip_norm: Option<f64>,
    pub skip_cmlm_layout: SkipCmlmLayout,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_pairs: 32,
            k: 2,
            lambda: 1.0,
            curriculum_steps: None,
            fixed_pk: None,
            tasks: TaskMix::Joint,
            peak_lr: 7e-4,
            warmup: 4000,
            clip_norm: None,
            skip_cmlm_layout: SkipCmlmLayout::Grid,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn pk(&self, step: usize) -> Result<f64> {
        if let Some(p) = self.fixed_pk {
            return Ok(p);
        }
        schedule_pk(step, self.curriculum_steps.unwrap_or(self.steps).max(1), self.lambda)
    }
}

/// One row of the loss trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossRecord {
    pub step: usize,
    pub p_k: f64,
    pub lr: f64,
    /// Batch objective: mean over samples of each sample's mean NLL.
    pub loss: f64,
    /// Mean per-sample loss for each task present in the batch, indexed
    /// by [`Task::index`].
    pub task_loss: [Option<f64>; 4],
}

pub fn write_loss_csv(path: impl AsRef<Path>, records: &[LossRecord]) -> Result<()> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(f);
    writeln!(w, "step,p_k,lr,loss,at,cmlm,skip_at,skip_cmlm")?;
    for r in records {
        write!(w, "{},{:.6},{:.3e},{:.6}", r.step, r.p_k, r.lr, r.loss)?;
        for t in r.task_loss {
            match t {
                Some(v) => write!(w, ",{v:.6}")?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean loss over the first and last tenth of a trace.
pub fn loss_improvement(records: &[LossRecord]) -> Option<(f64, f64)> {
    let n = records.len();
    if n < 10 {
        return None;
    }
    let w = n / 10;
    let mean = |rs: &[LossRecord]| rs.iter().map(|r| r.loss).sum::<f64>() / rs.len() as f64;
    Some((mean(&records[..w]), mean(&records[n - w..])))
}

struct Packed<'a> {
    sources: Vec<&'a [TokenId]>,
    segments: Vec<DecoderSegment<'a>>,
    rows: Vec<usize>,
    targets: Vec<TokenId>,
    weights: Vec<f64>,
    /// `(task, first loss row, loss row count)` per sample.
    spans: Vec<(Task, usize, usize)>,
}

fn pack<'a>(samples: &'a [TrainingSample], per_source: usize) -> Packed<'a> {
    let mut p = Packed {
        sources: Vec::with_capacity(samples.len() / per_source),
        segments: Vec::with_capacity(samples.len()),
        rows: Vec::new(),
        targets: Vec::new(),
        weights: Vec::new(),
        spans: Vec::with_capacity(samples.len()),
    };
    let share = 1.0 / samples.len() as f64;
    let mut row0 = 0;
    for (i, s) in samples.iter().enumerate() {
        if i % per_source == 0 {
            p.sources.push(&s.source);
        }
        p.segments.push(DecoderSegment {
            source: i / per_source,
            tokens: s.input.tokens(),
            positions: s.input.positions(),
            mode: s.task.mode(),
        });
        let count = s.loss_count();
        p.spans.push((s.task, p.rows.len(), count));
        for (j, &m) in s.loss_mask.iter().enumerate() {
            if m {
                p.rows.push(row0 + j);
                p.targets.push(s.targets[j]);
                p.weights.push(share / count as f64);
            }
        }
        row0 += s.len();
    }
    p
}

/// Per-row negative log-likelihood of `targets` under `logits`.
fn row_nll(logits: &[f64], vocab: usize, targets: &[TokenId]) -> Vec<f64> {
    logits
        .chunks_exact(vocab)
        .zip(targets)
        .map(|(row, &t)| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
            lse - row[t as usize]
        })
        .collect()
}

/// One optimizer step on `samples`. `per_source` consecutive samples
/// share a source.
fn train_step(
    model: &mut Seq2Seq,
    adam: &mut Adam,
    samples: &[TrainingSample],
    per_source: usize,
    lr: f64,
    clip: Option<f64>,
) -> Result<(f64, [Option<f64>; 4])> {
    let packed = pack(samples, per_source);
    let vocab = model.config().vocab_size;
    let (loss, task_loss, grads) = {
        let mut g = Graph::new(model.params());
        let logits = model.forward_graph(&mut g, &packed.sources, &packed.segments, &packed.rows)?;
        let nll = row_nll(g.value(logits), vocab, &packed.targets);
        let mut sums = [0.0; 4];
        let mut counts = [0usize; 4];
        for &(task, start, count) in &packed.spans {
            sums[task.index()] += nll[start..start + count].iter().sum::<f64>() / count as f64;
            counts[task.index()] += 1;
        }
        let mut task_loss = [None; 4];
        for i in 0..4 {
            if counts[i] > 0 {
                task_loss[i] = Some(sums[i] / counts[i] as f64);
            }
        }
        let loss_var = g.cross_entropy(logits, &packed.targets, &packed.weights)?;
        let loss = g.scalar(loss_var);
        (loss, task_loss, g.backward(loss_var)?)
    };
    let params = model.params_mut();
    params.accumulate(&grads)?;
    if let Some(c) = clip {
        clip_grad_norm(params, c);
    }
    adam.step(params, lr);
    Ok((loss, task_loss))
}

/// Trains `model` in place and returns the loss trace.
pub fn train(model: &mut Seq2Seq, corpus: &Corpus, cfg: &TrainConfig) -> Result<Vec<LossRecord>> {
    train_with(model, corpus, cfg, |_| {})
}

/// Like [`train`], calling `on_step` after every step.
pub fn train_with<F: FnMut(&LossRecord)>(
    model: &mut Seq2Seq,
    corpus: &Corpus,
    cfg: &TrainConfig,
    mut on_step: F,
) -> Result<Vec<LossRecord>> {
    model.config().check_vocab(&corpus.vocab)?;
    if cfg.steps == 0 {
        return Ok(Vec::new());
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if cfg.batch_pairs == 0 {
        return Err(Error::InvalidConfig("batch_pairs must be positive".into()));
    }
    let bos_k = if cfg.tasks == TaskMix::Joint {
        if !model.config().supports_chunk(cfg.k) {
            return Err(Error::UnsupportedChunk(cfg.k));
        }
        corpus.vocab.bos_k(cfg.k)?
    } else {
        0
    };
    let max_len = model.config().max_len;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let schedule = InverseSqrtSchedule {
        peak_lr: cfg.peak_lr,
        warmup: cfg.warmup.max(1),
    };
    let mut adam = Adam::new(AdamConfig::default());
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut batch: Vec<SentencePair> = Vec::with_capacity(cfg.batch_pairs);
    for step in 0..cfg.steps {
        batch.clear();
        for _ in 0..cfg.batch_pairs {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let p = &corpus.pairs[order[cursor]];
            cursor += 1;
            batch.push(SentencePair::new(
                crate::data::truncate(&p.source, max_len).to_vec(),
                crate::data::truncate(&p.target, max_len).to_vec(),
            ));
        }
        let p_k = match cfg.tasks {
            TaskMix::Joint => cfg.pk(step)?,
            TaskMix::AtOnly => 0.0,
        };
        let (samples, per_source) = match cfg.tasks {
            TaskMix::Joint => {
                let refs: Vec<&SentencePair> = batch.iter().collect();
                (assemble_batch(&refs, p_k, cfg.k, bos_k, cfg.skip_cmlm_layout, &mut rng)?, 2)
            }
            TaskMix::AtOnly => (batch.iter().map(build_at_sample).collect::<Result<Vec<_>>>()?, 1),
        };
        let lr = schedule.lr(step + 1);
        let (loss, task_loss) = match train_step(model, &mut adam, &samples, per_source, lr, cfg.clip_norm) {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) => return Err(Error::Divergence { step, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        let rec = LossRecord {
            step,
            p_k,
            lr,
            loss,
            task_loss,
        };
        on_step(&rec);
        trace.push(rec);
    }
    Ok(trace)
}

/// Initializes from an AT checkpoint and continues with joint training.
pub fn finetune_from_at(
    at_checkpoint: impl AsRef<Path>,
    corpus: &Corpus,
    cfg: &TrainConfig,
) -> Result<(Seq2Seq, Vec<LossRecord>)> {
    let mut model = Seq2Seq::load(at_checkpoint)?;
    let trace = train(&mut model, corpus, cfg)?;
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec, SyntheticTask};
    use crate::model::ModelConfig;

    fn setup() -> (Seq2Seq, Corpus) {
        let corpus = generate_synthetic(&SyntheticSpec {
            task: SyntheticTask::Copy,
            n_pairs: 64,
            lengths: 2..=6,
            vocab_size: 17,
            max_len: 12,
            ..Default::default()
        })
        .unwrap();
        let cfg = ModelConfig {
            d_model: 16,
            d_ff: 32,
            n_heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            max_len: 12,
            ..ModelConfig::for_vocab(&corpus.vocab)
        };
        (Seq2Seq::new(cfg, 5).unwrap(), corpus)
    }

    #[test]
    fn zero_steps_leave_model_unchanged() {
        let (mut m, c) = setup();
        let before = m.clone();
        let trace = train(
            &mut m,
            &c,
            &TrainConfig {
                steps: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(trace.is_empty());
        for (a, b) in m.params().iter().zip(before.params().iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn joint_training_reduces_loss() {
        let (mut m, c) = setup();
        let cfg = TrainConfig {
            steps: 60,
            batch_pairs: 8,
            warmup: 10,
            peak_lr: 3e-3,
            ..Default::default()
        };
        let trace = train(&mut m, &c, &cfg).unwrap();
        assert_eq!(trace.len(), 60);
        assert_eq!(trace[0].p_k, 0.0);
        let (first, last) = loss_improvement(&trace).unwrap();
        assert!(last < first, "loss {first} -> {last}");
    }

    #[test]
    fn at_only_trains_only_at() {
        let (mut m, c) = setup();
        let cfg = TrainConfig {
            steps: 3,
            batch_pairs: 4,
            tasks: TaskMix::AtOnly,
            ..Default::default()
        };
        let trace = train(&mut m, &c, &cfg).unwrap();
        for r in &trace {
            assert!(r.task_loss[0].is_some());
            assert!(r.task_loss[1..].iter().all(|t| t.is_none()));
        }
    }
}
