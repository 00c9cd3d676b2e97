//! Acceptance suite. Prints one line per criterion:
//!
//! ```text
//! cargo test -p vqa-harness --test acceptance -- --nocapture
//! ```
//!
//! Criterion 8 talks to a real endpoint and only runs when
//! `HARNESS_LIVE_CONFIG` names an experiment config file.

mod common;

use std::time::{Duration, Instant};

use common::*;
use vqa_harness::dataset::Dataset;
use vqa_harness::eval::{format_accuracy, is_correct, EvalRecord, NORMALIZATION_VERSION};
use vqa_harness::gateway::MockModel;
use vqa_harness::prompt::{build_prompt, TemplateId};
use vqa_harness::run::{
    load_run_meta, run_experiment, ExecuteOptions, Experiment, ExperimentConfig, ACCURACY_FILE,
    RECORDS_FILE,
};

const LIVE_CONFIG_ENV: &str = "HARNESS_LIVE_CONFIG";

type Criterion = (&'static str, u64, fn() -> Verdict);

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn accuracy(records: &[EvalRecord]) -> String {
    format_accuracy(records.iter().filter(|r| r.correct).count(), records.len())
}

fn prompt_fidelity() -> Verdict {
    let mut bad = Vec::new();
    for t in [TemplateId::Docvqa, TemplateId::Generic] {
        let p = build_prompt(t, "", "Q?", &[], usize::MAX).expect("unbounded budget");
        if p.rendered != reference_prompt(t, "", "Q?", "") || !p.rendered.starts_with(t.preamble())
        {
            bad.push(format!("{t:?}: {:?}", p.rendered));
        }
    }
    check(
        bad.is_empty(),
        if bad.is_empty() {
            "2/2 templates byte-equal".into()
        } else {
            bad.join("; ")
        },
    )
}

fn metric_oracle() -> Verdict {
    let pairs = metric_pairs();
    let agree = pairs
        .iter()
        .filter(|p| {
            let got = is_correct(&p.prediction, &p.answers);
            got == oracle_is_correct(&p.prediction, &p.answers) && got == p.correct
        })
        .count();
    let phrasings = ["four conferences", "kmittle@dwrite.com", "275,000"]
        .iter()
        .all(|ph| pairs.iter().any(|p| p.prediction.contains(ph)));
    check(
        pairs.len() == 200 && agree == pairs.len() && phrasings,
        format!("{agree}/{} pairs agree", pairs.len()),
    )
}

fn reading_order() -> Verdict {
    let cases = 3000;
    let (failures, first) = reading_order_sweep(cases, 0xACCE);
    check(
        failures == 0,
        format!(
            "{}/{cases} cases agree{}",
            cases - failures,
            first.map(|f| format!("; {f}")).unwrap_or_default()
        ),
    )
}

fn serializer_invariants() -> Verdict {
    let docs = 2000;
    let (violations, first) = serializer_sweep(docs, 0xACCE);
    check(
        violations == 0,
        format!(
            "{violations} violations on {docs} documents{}",
            first.map(|f| format!("; {f}")).unwrap_or_default()
        ),
    )
}

fn end_to_end() -> Verdict {
    let dirs: Vec<_> = (0..3)
        .map(|_| tempfile::tempdir().expect("tempdir"))
        .collect();
    let echo_a = run_experiment(e2e_config(dirs[0].path(), MockModel::EchoAnswer));
    let echo_b = run_experiment(e2e_config(dirs[1].path(), MockModel::EchoAnswer));
    let silent = run_experiment(e2e_config(dirs[2].path(), MockModel::Silent));
    let (Ok((a, _)), Ok(_), Ok((s, _))) = (echo_a, echo_b, silent) else {
        return Verdict::Fail("a fixture run failed".into());
    };
    let log_a = std::fs::read(dirs[0].path().join(RECORDS_FILE)).unwrap_or_default();
    let log_b = std::fs::read(dirs[1].path().join(RECORDS_FILE)).unwrap_or_default();
    let (acc_echo, acc_silent) = (accuracy(&a.records), accuracy(&s.records));
    let identical = !log_a.is_empty() && log_a == log_b;
    check(
        a.records.len() == 10 && acc_echo == "1.0000" && acc_silent == "0.0000" && identical,
        format!(
            "echo {acc_echo}, silent {acc_silent}, {} samples, logs {}",
            a.records.len(),
            if identical {
                "byte-identical"
            } else {
                "differ"
            }
        ),
    )
}

fn override_direction() -> Verdict {
    let dir = tempfile::tempdir().expect("tempdir");
    let Ok((outcome, _)) = run_experiment(override_config(dir.path())) else {
        return Verdict::Fail("override run failed".into());
    };
    let of = |name: &str| -> Vec<EvalRecord> {
        outcome
            .records
            .iter()
            .filter(|r| r.ocr_name == name)
            .cloned()
            .collect()
    };
    let (raw, fixed) = (of("paddleocr"), of("groundtruth"));
    let n_raw = raw.iter().filter(|r| r.correct).count() as f64 / raw.len().max(1) as f64;
    let n_fix = fixed.iter().filter(|r| r.correct).count() as f64 / fixed.len().max(1) as f64;
    check(
        !raw.is_empty() && n_fix > n_raw,
        format!(
            "groundtruth {} > engine {}",
            accuracy(&fixed),
            accuracy(&raw)
        ),
    )
}

fn resumability() -> Verdict {
    let full = tempfile::tempdir().expect("tempdir");
    let part = tempfile::tempdir().expect("tempdir");
    let Ok((whole, _)) = run_experiment(e2e_config(full.path(), MockModel::EchoAnswer)) else {
        return Verdict::Fail("uninterrupted run failed".into());
    };
    let load =
        || Experiment::load(e2e_config(part.path(), MockModel::EchoAnswer)).expect("config loads");
    let exp = load();
    let half = exp.plan().len() / 2;
    let first = exp.execute(&ExecuteOptions {
        stop_after: Some(half),
    });
    let second = load().execute(&ExecuteOptions::default());
    match (first, second) {
        (Ok(f), Ok(s)) => check(
            f.records.len() == half && s.resumed == half && s.records == whole.records,
            format!(
                "{half} + {} trials resumed into {} records",
                s.executed,
                s.records.len()
            ),
        ),
        _ => Verdict::Fail("partial or resumed execution failed".into()),
    }
}

fn live_smoke() -> Verdict {
    let Ok(path) = std::env::var(LIVE_CONFIG_ENV) else {
        return Verdict::Skip(format!(
            "set {LIVE_CONFIG_ENV} to an experiment config to run"
        ));
    };
    let cfg = match ExperimentConfig::load(std::path::Path::new(&path)) {
        Ok(c) => c,
        Err(e) => return Verdict::Fail(format!("config: {e}")),
    };
    let docvqa = cfg.datasets.iter().any(|d| d.name == Dataset::Docvqa);
    let out = cfg.output_path();
    let outcome = match run_experiment(cfg) {
        Ok((o, _)) => o,
        Err(e) => return Verdict::Fail(format!("run: {e}")),
    };
    let grid = std::fs::read_to_string(out.join(ACCURACY_FILE)).unwrap_or_default();
    let meta = load_run_meta(&out);
    let versions = meta
        .as_ref()
        .map(|m| m.normalization_version == NORMALIZATION_VERSION && !m.plan_hash.is_empty())
        .unwrap_or(false);
    check(
        docvqa && outcome.is_complete() && grid.starts_with("| Method |") && versions,
        format!(
            "{} records, {} trial errors, report at {}",
            outcome.records.len(),
            outcome.errors.len(),
            out.display()
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 8] = [
        ("prompt fidelity snapshot", 1, prompt_fidelity),
        ("metric oracle equivalence", 1, metric_oracle),
        ("reading-order oracle", 30, reading_order),
        ("serializer invariants", 30, serializer_invariants),
        ("end-to-end determinism and exact accuracy", 5, end_to_end),
        ("ground-truth override direction", 5, override_direction),
        ("resumability", 10, resumability),
        ("live smoke run", u64::MAX, live_smoke),
    ];
    let mut failed = Vec::new();
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        let started = Instant::now();
        let verdict = run();
        let took = started.elapsed();
        let over = *limit != u64::MAX && took > Duration::from_secs(*limit);
        let timing = if *limit == u64::MAX {
            format!("{:.2}s", took.as_secs_f64())
        } else {
            format!("{:.2}s of {limit}s", took.as_secs_f64())
        };
        let line = match verdict {
            Verdict::Pass(d) if !over => format!("PASS criterion {n} ({name}): {d} [{timing}]"),
            Verdict::Pass(d) => {
                format!("FAIL criterion {n} ({name}): over time limit; {d} [{timing}]")
            }
            Verdict::Fail(d) => format!("FAIL criterion {n} ({name}): {d} [{timing}]"),
            Verdict::Skip(d) => format!("SKIP criterion {n} ({name}): {d}"),
        };
        println!("{line}");
        if line.starts_with("FAIL") {
            failed.push(n);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
