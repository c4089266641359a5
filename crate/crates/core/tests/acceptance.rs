//! One pass/fail line per acceptance criterion, printed straight to stdout
//! so it shows without `--nocapture`.
//!
//! The quality and speed criteria train a full desk model (AT baseline plus
//! three HRT finetunes), so this target takes most of half an hour.

mod common;

use std::io::Write;
use std::time::Instant;

use common::alloc_audit::CountingAlloc;
use hrt::bench::{measure_wps, sequence_accuracy};
use hrt::data::{generate_synthetic, Corpus, SyntheticSpec, SyntheticTask, TokenId, EOS};
use hrt::decoding::{truncate_at_eos, DecodeMode, DecodeOptions, DecodeStats, Workspace};
use hrt::model::{InferenceModel, ModelConfig, Seq2Seq};
use hrt::training::{finetune_from_at, train, TaskMix, TrainConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

const AT_STEPS: usize = 5000;
const FINETUNE_STEPS: usize = 1200;
const CHUNKS: [usize; 3] = [2, 3, 4];

fn report(n: usize, name: &str, pass: bool, detail: &str) -> bool {
    let mut out = std::io::stdout().lock();
    let verdict = if pass { "PASS" } else { "FAIL" };
    writeln!(out, "criterion {n:>2} [{verdict}] {name}: {detail}").unwrap();
    out.flush().unwrap();
    pass
}

fn gradients() -> (bool, String) {
    let t = Instant::now();
    let mut worst = ("", 0.0f64);
    let mut min_shapes = usize::MAX;
    let mut layers = 0;
    for r in common::gradcheck::gradient_suite(11) {
        layers += 1;
        min_shapes = min_shapes.min(r.shapes);
        if r.max_rel_err >= worst.1 {
            worst = (r.layer, r.max_rel_err);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst.1 < 1e-4 && min_shapes >= 5 && secs < 60.0;
    let detail = format!(
        "{layers} layers x >={min_shapes} shapes, worst {} {:.2e} (< 1e-4), {secs:.1}s (< 60s)",
        worst.0, worst.1
    );
    (pass, detail)
}

struct Trained {
    test: Corpus,
    at: Seq2Seq,
    hrt: Vec<(usize, Seq2Seq)>,
    seconds: f64,
}

fn train_desk_models() -> hrt::Result<Trained> {
    let t = Instant::now();
    let corpus = generate_synthetic(&SyntheticSpec {
        task: SyntheticTask::mapped_swap(64, 0.3, 7),
        n_pairs: 51_000,
        ..Default::default()
    })?;
    let (train_set, test) = corpus.split_tail(1000);
    let mut at = Seq2Seq::new(ModelConfig::for_vocab(&train_set.vocab), 1)?;
    let base = TrainConfig {
        steps: AT_STEPS,
        tasks: TaskMix::AtOnly,
        warmup: 500,
        peak_lr: 1.5e-3,
        ..Default::default()
    };
    train(&mut at, &train_set, &base)?;
    let dir = tempfile::tempdir()?;
    let ckpt = dir.path().join("at.ckpt");
    at.save(&ckpt)?;
    let mut hrt = Vec::new();
    for k in CHUNKS {
        let cfg = TrainConfig {
            steps: FINETUNE_STEPS,
            tasks: TaskMix::Joint,
            k,
            warmup: 200,
            peak_lr: 1e-3,
            seed: k as u64,
            ..base.clone()
        };
        hrt.push((k, finetune_from_at(&ckpt, &train_set, &cfg)?.0));
    }
    Ok(Trained {
        test,
        at,
        hrt,
        seconds: t.elapsed().as_secs_f64(),
    })
}

fn decode_all(model: &Seq2Seq, corpus: &Corpus, opts: &DecodeOptions) -> (Vec<Vec<TokenId>>, Vec<DecodeStats>) {
    let inf = InferenceModel::<f64>::from_model(model);
    let mut ws = Workspace::new(model.config(), opts.b_at, opts.b_nat).unwrap();
    let mut out = Vec::new();
    let (mut hyps, mut stats) = (Vec::new(), Vec::new());
    for p in &corpus.pairs {
        stats.push(ws.translate_into(&inf, &p.source, opts, &mut out).unwrap());
        hyps.push(out.clone());
    }
    (hyps, stats)
}

fn refs(corpus: &Corpus) -> Vec<Vec<TokenId>> {
    corpus.pairs.iter().map(|p| p.target.clone()).collect()
}

fn quality(t: &Trained) -> (bool, String) {
    let refs = refs(&t.test);
    let at_acc = 100.0 * sequence_accuracy(&decode_all(&t.at, &t.test, &DecodeOptions::at(1)).0, &refs);
    let hrt_acc: Vec<f64> = t
        .hrt
        .iter()
        .map(|(k, m)| 100.0 * sequence_accuracy(&decode_all(m, &t.test, &DecodeOptions::hrt(*k, 1, 1)).0, &refs))
        .collect();
    let pass = at_acc >= 95.0
        && hrt_acc[0] >= at_acc - 2.0
        && hrt_acc.windows(2).all(|w| w[1] <= w[0])
        && t.seconds < 1800.0;
    let detail = format!(
        "AT {at_acc:.1}% (>= 95), HRT k=2/3/4 {:.1}/{:.1}/{:.1}% (k=2 within 2 pts, non-increasing), training {:.0}s (< 1800s)",
        hrt_acc[0], hrt_acc[1], hrt_acc[2], t.seconds
    );
    (pass, detail)
}

fn speed(t: &Trained) -> (bool, String) {
    let (at_out, at_stats) = decode_all(&t.at, &t.test, &DecodeOptions::at(1));
    let mut calls = vec![0usize; CHUNKS.len()];
    let mut at_calls = 0;
    let mut long = 0;
    let per_k: Vec<Vec<DecodeStats>> = t
        .hrt
        .iter()
        .map(|(k, m)| decode_all(m, &t.test, &DecodeOptions::hrt(*k, 1, 1)).1)
        .collect();
    for (i, out) in at_out.iter().enumerate() {
        if out.len() < 10 {
            continue;
        }
        long += 1;
        at_calls += at_stats[i].decoder_calls;
        for (c, s) in calls.iter_mut().zip(&per_k) {
            *c += s[i].decoder_calls;
        }
    }
    let ratio = calls[0] as f64 / at_calls as f64;

    let sources: Vec<Vec<TokenId>> = t.test.pairs.iter().map(|p| p.source.clone()).collect();
    let at_inf = InferenceModel::<f32>::from_model(&t.at);
    let k2_inf = InferenceModel::<f32>::from_model(&t.hrt[0].1);
    let (at_bench, _) = measure_wps(&at_inf, "mapped-swap", &sources, &DecodeOptions::at(1), 5).unwrap();
    let (k2_bench, _) = measure_wps(&k2_inf, "mapped-swap", &sources, &DecodeOptions::hrt(2, 1, 1), 5).unwrap();
    let wps_ratio = k2_bench.wps_mean / at_bench.wps_mean;

    let pass = long > 0 && ratio <= 0.6 && wps_ratio > 1.2 && calls[2] < calls[1] && calls[1] < calls[0];
    let detail = format!(
        "{long} outputs >= 10 tokens: calls AT {at_calls}, HRT k=2/3/4 {}/{}/{} (k=2 ratio {ratio:.3} <= 0.6); \
         WPS AT {:.0}, HRT k=2 {:.0}, ratio {wps_ratio:.2} (> 1.2, 5 runs)",
        calls[0], calls[1], calls[2], at_bench.wps_mean, k2_bench.wps_mean
    );
    (pass, detail)
}

fn beam_ablation(t: &Trained) -> (bool, String) {
    let (k, model) = (t.hrt[0].0, &t.hrt[0].1);
    let refs = refs(&t.test);
    let (narrow, ns) = decode_all(model, &t.test, &DecodeOptions::hrt(k, 1, 1));
    let (wide, ws) = decode_all(model, &t.test, &DecodeOptions::hrt(k, 5, 5));
    let violating: Vec<usize> = (0..ns.len()).filter(|&i| ns[i].score > ws[i].score + 1e-9).collect();
    // For each violation, whether the greedy anchors were still among the
    // wide search's stage-II candidates.
    let inf = InferenceModel::<f64>::from_model(model);
    let mut w1 = Workspace::new(model.config(), 1, 1).unwrap();
    let mut w5 = Workspace::new(model.config(), 5, 5).unwrap();
    let mut out = Vec::new();
    let mut pruned = 0;
    for &i in &violating {
        let src = &t.test.pairs[i].source;
        w1.translate_into(&inf, src, &DecodeOptions::hrt(k, 1, 1), &mut out).unwrap();
        let greedy = w1.finished_tokens(&w1.finished()[0]).to_vec();
        w5.translate_into(&inf, src, &DecodeOptions::hrt(k, 5, 5), &mut out).unwrap();
        let kept = w5.candidates().iter().any(|c| w5.finished_tokens(&w5.finished()[c.hypothesis]) == greedy.as_slice());
        if !kept {
            pruned += 1;
        }
    }
    let (a1, a5) = (100.0 * sequence_accuracy(&narrow, &refs), 100.0 * sequence_accuracy(&wide, &refs));
    let pass = violating.is_empty() && (a1 - a5).abs() <= 1.0;
    let detail = format!(
        "score(1,1) > score(5,5) on {}/{} sentences ({pruned} with the greedy anchors pruned from the wide beam); \
         accuracy (1,1) {a1:.1}% vs (5,5) {a5:.1}% (<= 1 pt)",
        violating.len(),
        ns.len()
    );
    (pass, detail)
}

fn memory() -> (bool, String) {
    let config = ModelConfig::default();
    let r = common::memory_audit::audit(&config, 1, 1000, 3);
    let within = r.peaks.iter().all(|(_, peak, est)| peak <= est);
    let peaks: Vec<String> = r.peaks.iter().map(|(p, peak, est)| format!("{p} {peak}/{est}")).collect();
    let pass = within && r.heap_allocations == 0 && r.decodes == 1000;
    let detail = format!(
        "{} decodes at L={}: peak/estimate bytes [{}]; heap allocations during decode {}",
        r.decodes,
        config.max_len,
        peaks.join(", "),
        r.heap_allocations
    );
    (pass, detail)
}

fn length_caps(t: &Trained) -> (bool, String) {
    let mut worst_steps = 0.0f64;
    let mut overlong = 0;
    let mut runs = 0;
    for (k, model) in &t.hrt {
        for cap in [model.config().max_len, 12, 5] {
            let opts = DecodeOptions {
                max_len: Some(cap),
                ..DecodeOptions::hrt(*k, 2, 1)
            };
            let (out, stats) = decode_all(model, &t.test, &opts);
            for (o, s) in out.iter().zip(&stats) {
                runs += 1;
                worst_steps = worst_steps.max(s.stage1_steps as f64 / cap.div_ceil(*k) as f64);
                overlong += (o.len() > cap) as usize;
            }
        }
    }
    let at_cap = 7;
    let opts = DecodeOptions {
        max_len: Some(at_cap),
        ..DecodeOptions::at(2)
    };
    let (at_out, at_stats) = decode_all(&t.at, &t.test, &opts);
    overlong += at_out.iter().filter(|o| o.len() > at_cap).count();
    let at_steps_ok = at_stats.iter().all(|s| s.stage1_steps <= at_cap + 1);
    assert!(matches!(opts.mode, DecodeMode::At));

    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    let tokens = prop::collection::vec(prop_oneof![Just(EOS), 0u32..80], 0..64);
    let fuzz = runner.run(&tokens, |v| {
        let cut = truncate_at_eos(&v);
        prop_assert!(!cut.contains(&EOS));
        prop_assert_eq!(cut, &v[..cut.len()]);
        match v.iter().position(|&x| x == EOS) {
            Some(i) => prop_assert_eq!(cut.len(), i),
            None => prop_assert_eq!(cut.len(), v.len()),
        }
        Ok(())
    });

    let pass = worst_steps <= 1.0 && overlong == 0 && at_steps_ok && fuzz.is_ok();
    let detail = format!(
        "{runs} HRT decodes, max stage-I steps / ceil(L/k) = {worst_steps:.2}; {overlong} outputs over L; \
         truncate_at_eos 10000 fuzz cases {}",
        if fuzz.is_ok() { "ok" } else { "FAILED" }
    );
    (pass, detail)
}

#[test]
fn acceptance_criteria() {
    let mut failed = Vec::new();
    let mut check = |n: usize, name: &str, (pass, detail): (bool, String)| {
        if !report(n, name, pass, &detail) {
            failed.push(n);
        }
    };

    check(1, "gradient suite", gradients());

    let fixtures = common::fixtures::four_task_example();
    check(
        2,
        "four-task sample fixtures",
        (fixtures.is_ok(), fixtures.err().unwrap_or_else(|| "AT, CMLM, SKIP-AT (positions 0,2,4), SKIP-CMLM exact".into())),
    );

    let curriculum = common::fixtures::curriculum_checks();
    check(3, "curriculum schedule", (curriculum.is_ok(), curriculum.unwrap_or_else(|e| e)));

    let diff = common::equivalence::incremental_vs_parallel(100, 4);
    check(
        4,
        "incremental/parallel equivalence",
        (diff < 1e-6, format!("100 prefixes, max logit difference {diff:.2e} (< 1e-6)")),
    );

    let tiny = common::exhaustive::tiny_model();
    let ex = common::exhaustive::exhaustive_oracle(&tiny, 100, 21);
    check(
        5,
        "exhaustive scoring oracle",
        (
            ex.passed == 100 && ex.sources == 100,
            format!(
                "{}/{} sources pass, {} fills enumerated{}",
                ex.passed,
                ex.sources,
                ex.fills_enumerated,
                ex.first_failure.map(|f| format!("; first failure: {f}")).unwrap_or_default()
            ),
        ),
    );

    let trained = train_desk_models().expect("desk training");
    check(6, "end-to-end quality", quality(&trained));
    check(7, "speed", speed(&trained));
    check(8, "beam ablation", beam_ablation(&trained));
    check(9, "memory", memory());
    check(10, "length caps", length_caps(&trained));

    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
