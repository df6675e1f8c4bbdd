mod common;

use std::time::Instant;

use assertforge::dataset::{read_jsonl, BugRecord, PtRecord, SvaBugRecord};
use assertforge::eval::pass_at_k;
use assertforge::trainmath::{ChallengingCase, PreferenceTriple};
use assertforge::{CaseResult, EvalCase, PassAtKReport};
use common::*;
use serde_json::Value;

#[test]
fn regenerate_fixtures() {
    if std::env::var_os(REGEN_VAR).is_none() {
        return;
    }
    regenerate();
}

fn golden() -> std::path::PathBuf {
    fixtures().join("golden")
}

#[test]
fn hermetic_pipeline_is_reproducible_and_matches_golden() {
    if std::env::var_os(REGEN_VAR).is_some() {
        return;
    }
    let start = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        for step in run_pipeline(dir) {
            assert_eq!(step.code, Some(0), "{:?}\n{}", step.args, step.stderr);
        }
    }
    let sa = snapshot(a.path());
    let sb = snapshot(b.path());
    assert!(sa.len() >= 20);
    assert_eq!(differences(&sa, &sb), Vec::<String>::new(), "two runs differ");
    assert_eq!(differences(&sa, &snapshot(&golden())), Vec::<String>::new(), "run differs from golden");
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn golden_families_are_populated() {
    let g = golden();
    let pt: Vec<PtRecord> = read_jsonl(&g.join("pt.jsonl")).unwrap();
    let bug: Vec<BugRecord> = read_jsonl(&g.join("bug.jsonl")).unwrap();
    let svabug: Vec<SvaBugRecord> = read_jsonl(&g.join("svabug.jsonl")).unwrap();
    assert_eq!((pt.len(), bug.len(), svabug.len()), (2, 29, 64));
    assert!(svabug.iter().all(|r| r.log.contains("FAIL") && r.buggy_sv_code.contains("assert")));
    assert!(svabug.iter().all(|r| r.buggy_sv_code.lines().any(|l| l.trim() == r.buggy_line)));
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(g.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["pt"], 2);
    assert_eq!(summary["errors"], 0);
    let machine: Vec<EvalCase> = read_jsonl(&g.join("sva_eval_machine.jsonl")).unwrap();
    let bins = summary["bins"].as_array().unwrap();
    assert_eq!(bins.len(), 5);
    let total: u64 = bins.iter().map(|b| b["sva_eval_machine"].as_u64().unwrap()).sum();
    assert_eq!(total as usize, machine.len());
    assert!(bins.iter().all(|b| b["test_modules"].as_u64().unwrap() >= 1));
}

#[test]
fn golden_split_keeps_test_modules_out_of_training_data() {
    let g = golden();
    let plan: Value = serde_json::from_str(&std::fs::read_to_string(g.join("split_plan.json")).unwrap()).unwrap();
    let test: Vec<String> = plan["bins"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|b| b["test"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()))
        .collect();
    for file in ["svabug.jsonl", "bug.jsonl", "train_cases.jsonl"] {
        let text = std::fs::read_to_string(g.join(file)).unwrap();
        for m in &test {
            assert!(!text.contains(&format!("module {m} ")), "{m} leaks into {file}");
        }
    }
    let machine: Vec<EvalCase> = read_jsonl(&g.join("sva_eval_machine.jsonl")).unwrap();
    assert!(machine.iter().all(|c| test.iter().any(|m| c.buggy_sv_code.contains(&format!("module {m} ")))));
}

#[test]
fn golden_report_matches_hand_aggregation() {
    let g = golden().join("eval");
    let results: Vec<CaseResult> = read_jsonl(&g.join("results.jsonl")).unwrap();
    let report: PassAtKReport = serde_json::from_str(&std::fs::read_to_string(g.join("report.json")).unwrap()).unwrap();
    for k in [1, 5] {
        let mut per_case: Vec<f64> = results.iter().map(|r| pass_at_k(r.n, r.c, k).unwrap()).collect();
        per_case.sort_by(f64::total_cmp);
        let mean = per_case.iter().sum::<f64>() / per_case.len() as f64;
        let got = report.overall[&format!("pass@{k}")].as_f64().unwrap();
        assert!((got - mean).abs() < 1e-12, "pass@{k}: {got} vs {mean}");
    }
    assert_eq!(report.histogram.len(), 21);
    assert_eq!(report.histogram.iter().sum::<usize>(), results.len());
    let types: Vec<&String> = report.by_bug_type.keys().collect();
    assert_eq!(types, ["Var", "Value", "Op", "Cond", "Non_cond", "Direct", "Indirect"]);
    assert_eq!(report.by_length_bin.len(), 5);
    assert_eq!(report.by_source.keys().collect::<Vec<_>>(), ["machine", "human"]);
    assert!(results.iter().all(|r| r.n == 20));
}

#[test]
fn golden_triples_follow_challenging_cases() {
    let g = golden().join("dpo");
    let cases: Vec<ChallengingCase> = read_jsonl(&g.join("challenging.jsonl")).unwrap();
    let triples: Vec<PreferenceTriple> = read_jsonl(&g.join("triples.jsonl")).unwrap();
    assert!(!cases.is_empty());
    assert_eq!(triples.len(), cases.iter().map(|c| c.negatives.len()).sum::<usize>());
    let train: Vec<CaseResult> = read_jsonl(&golden().join("eval_train").join("results.jsonl")).unwrap();
    let with_wrong = train.iter().filter(|r| r.c < r.n).count();
    assert_eq!(cases.len(), with_wrong);
}
