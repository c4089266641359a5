//! Batch-1 latency measurement in source words per second.

use std::time::Instant;

use serde::Serialize;

use crate::data::TokenId;
use crate::decoding::{DecodeOptions, Workspace};
use crate::error::{Error, Result};
use crate::model::InferenceModel;
use crate::numerics::Scalar;

/// Sentences decoded untimed before each measurement.
pub const WARMUP_SENTENCES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub run: usize,
    pub seconds: f64,
    pub wps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub dataset: String,
    pub options: DecodeOptions,
    pub sentences: usize,
    pub source_words: usize,
    pub runs: Vec<RunReport>,
    pub wps_mean: f64,
    pub wps_std: f64,
    /// Mean seconds per sentence over all runs.
    pub mean_latency: f64,
    /// Decoder calls for one pass over the corpus.
    pub decoder_calls: usize,
    pub output_tokens: usize,
}

/// Decodes `sources` one at a time `runs` times. Returns the report and
/// the outputs of the last run.
pub fn measure_wps<T: Scalar>(
    model: &InferenceModel<T>,
    dataset: &str,
    sources: &[Vec<TokenId>],
    opts: &DecodeOptions,
    runs: usize,
) -> Result<(BenchReport, Vec<Vec<TokenId>>)> {
    if sources.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if runs == 0 {
        return Err(Error::InvalidConfig("runs must be positive".into()));
    }
    let mut ws = Workspace::new(model.config(), opts.b_at, opts.b_nat)?;
    let mut out = Vec::new();
    for src in sources.iter().cycle().take(WARMUP_SENTENCES) {
        ws.translate_into(model, src, opts, &mut out)?;
    }
    let source_words: usize = sources.iter().map(Vec::len).sum();
    let mut outputs: Vec<Vec<TokenId>> = vec![Vec::new(); sources.len()];
    let mut reports = Vec::with_capacity(runs);
    let mut decoder_calls = 0;
    for run in 0..runs {
        decoder_calls = 0;
        let t0 = Instant::now();
        for (src, dst) in sources.iter().zip(outputs.iter_mut()) {
            decoder_calls += ws.translate_into(model, src, opts, dst)?.decoder_calls;
        }
        let seconds = t0.elapsed().as_secs_f64();
        reports.push(RunReport {
            run,
            seconds,
            wps: source_words as f64 / seconds.max(f64::MIN_POSITIVE),
        });
    }
    let n = reports.len() as f64;
    let wps_mean = reports.iter().map(|r| r.wps).sum::<f64>() / n;
    let wps_std = (reports.iter().map(|r| (r.wps - wps_mean).powi(2)).sum::<f64>() / n).sqrt();
    let mean_latency = reports.iter().map(|r| r.seconds).sum::<f64>() / (n * sources.len() as f64);
    let report = BenchReport {
        dataset: dataset.to_string(),
        options: *opts,
        sentences: sources.len(),
        source_words,
        runs: reports,
        wps_mean,
        wps_std,
        mean_latency,
        decoder_calls,
        output_tokens: outputs.iter().map(Vec::len).sum(),
    };
    Ok((report, outputs))
}
