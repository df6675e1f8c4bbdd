mod common;

use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use assertforge::dataset::{parse_jsonl, read_jsonl};
use assertforge::eval::{JudgedResponse, ModelResponse, Verdict};
use assertforge::trainmath::PreferenceTriple;
use assertforge::{CaseResult, PassAtKReport, Relation, SyntacticKind};
use common::*;
use serde_json::Value;

fn s(x: impl AsRef<std::ffi::OsStr>) -> String {
    x.as_ref().to_string_lossy().into_owned()
}

fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, format!("#!/bin/sh\n{body}")).unwrap();
    std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
    p
}

fn records(path: &Path) -> Vec<Value> {
    read_jsonl(path).unwrap()
}

#[test]
fn filter_ten_files_two_bad() {
    let out = tempfile::tempdir().unwrap();
    let step = run_cli(&[s("filter"), s(fixtures().join("filter10")), s("--out"), s(out.path())]);
    assert_eq!(step.code, Some(0), "{}", step.stderr);
    let report = records(&out.path().join("filter_report.jsonl"));
    assert_eq!(report.len(), 10);
    assert_eq!(records(&out.path().join("manifest.jsonl")).len(), 8);
    let rejected: Vec<&str> =
        report.iter().filter(|e| e["status"] != "accepted").map(|e| e["id"].as_str().unwrap()).collect();
    assert_eq!(rejected, ["no_endmodule.v", "ports_only.v"]);
}

#[test]
fn filter_empty_and_missing_dirs() {
    let empty = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let step = run_cli(&[s("filter"), s(empty.path()), s("--out"), s(out.path())]);
    assert_eq!(step.code, Some(0));
    let text = std::fs::read_to_string(out.path().join("filter_report.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1, "only the metadata header");
    let step = run_cli(&[s("filter"), s(empty.path().join("absent")), s("--out"), s(out.path())]);
    assert_eq!(step.code, Some(2));
    assert!(step.stderr.contains("absent"));
}

#[test]
fn filter_rejects_duplicate_and_malformed_fixture_files() {
    let out = tempfile::tempdir().unwrap();
    let step = run_cli(&[s("filter"), s(fixtures().join("corpus")), s("--out"), s(out.path())]);
    assert_eq!(step.code, Some(0));
    let report = records(&out.path().join("filter_report.jsonl"));
    let status = |id: &str| report.iter().find(|e| e["id"] == id).unwrap()["status"].as_str().unwrap().to_string();
    assert_eq!(status("acc_b0_0_copy.v"), "duplicate");
    assert_eq!(status("no_endmodule.v"), "missing_module_boundary");
    assert_eq!(status("ports_only.v"), "no_functional_logic");
    assert_eq!(status("broken_paren.v"), "accepted");
}

/// Config with subprocess adapters.
fn command_config(dir: &Path, verifier_body: &str, llm_body: &str) -> PathBuf {
    let cc = script(dir, "cc.sh", "exit 0\n");
    let sby = script(dir, "sby.sh", verifier_body);
    let llm = script(dir, "llm.sh", llm_body);
    let cfg = dir.join("cfg.toml");
    std::fs::write(
        &cfg,
        format!(
            "corpus_dir = \"{}\"\nout_dir = \"out\"\nmutations_per_unit = 2\nassertions_per_unit = 1\nparallel = 2\n\
             [compiler]\ncmd = \"{} {{file}}\"\n[verifier]\ncmd = \"{} {{sby}}\"\n[llm]\ncmd = \"{} {{task}}\"\nmax_attempts = 1\n",
            fixtures().join("filter10").display(),
            cc.display(),
            sby.display(),
            llm.display()
        ),
    )
    .unwrap();
    cfg
}

const SVA_LLM: &str = "cat > /dev/null\necho 'assert property (@(posedge clk) disable iff (rst) !$isunknown(dout));'\n";

fn augment_with(verifier_body: &str) -> (tempfile::TempDir, Step) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = command_config(dir.path(), verifier_body, SVA_LLM);
    let out = dir.path().join("out");
    let f = run_cli(&[s("--config"), s(&cfg), s("filter"), s("--out"), s(&out)]);
    assert_eq!(f.code, Some(0), "{}", f.stderr);
    let step = run_cli(&[s("--config"), s(&cfg), s("augment"), s(out.join("manifest.jsonl")), s("--out"), s(&out)]);
    (dir, step)
}

#[test]
fn augment_all_proven_gives_empty_svabug() {
    let (dir, step) = augment_with("echo 'SBY summary: engine_0 returned PASS'\necho 'DONE (PASS, rc=0)'\n");
    assert_eq!(step.code, Some(0), "{}", step.stderr);
    let out = dir.path().join("out");
    assert!(records(&out.join("svabug.jsonl")).is_empty());
    assert!(records(&out.join("sva_eval_machine.jsonl")).is_empty());
    assert!(!records(&out.join("bug.jsonl")).is_empty());
    let summary: Value = serde_json::from_str(&step.stdout).unwrap();
    assert_eq!(summary["svabug"], 0);
}

#[test]
fn augment_verifier_tool_error_everywhere() {
    let (dir, step) = augment_with("exit 3\n");
    assert_eq!(step.code, Some(1));
    let out = dir.path().join("out");
    for f in ["pt.jsonl", "bug.jsonl", "svabug.jsonl"] {
        assert!(records(&out.join(f)).is_empty(), "{f}");
    }
    let errors = records(&out.join("errors.jsonl"));
    assert!(!errors.is_empty());
    assert!(errors.iter().all(|e| e["unit_id"].is_string() && e["stage"].is_string()));
}

fn bench_case(id: &str) -> Value {
    serde_json::json!({
        "id": id, "source": "machine", "spec": "Registered AND of a and b.",
        "buggy_sv_code": "module m(input clk, input a, input b, output reg y);\n  always @(posedge clk)\n    y <= a | b;\n  assert property (@(posedge clk) y == ($past(a) & $past(b)));\nendmodule\n",
        "log": "Assert failed in m\nstep 1\nFAIL",
        "golden_buggy_line": "y <= a | b;", "golden_corrected_line": "y <= a & b;",
        "bug_syntactic": "Op", "bug_relation": "Direct", "length_bin": 0,
    })
}

fn eval_with(reply: &str) -> PassAtKReport {
    let dir = tempfile::tempdir().unwrap();
    let cfg = command_config(dir.path(), "exit 3\n", &format!("cat > /dev/null\necho '{reply}'\n"));
    let bench = dir.path().join("bench.jsonl");
    let lines: Vec<String> = ["a", "b", "c"].iter().map(|id| bench_case(id).to_string()).collect();
    std::fs::write(&bench, lines.join("\n") + "\n").unwrap();
    let out = dir.path().join("eval");
    let step = run_cli(&[s("--config"), s(&cfg), s("eval"), s(&bench), s("--out"), s(&out), s("--csv")]);
    assert_eq!(step.code, Some(0), "{}", step.stderr);
    assert!(out.join("report.csv").exists());
    let results: Vec<CaseResult> = read_jsonl(&out.join("results.jsonl")).unwrap();
    assert!(results.iter().all(|r| r.n == 20 && r.responses.len() == 20));
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn eval_perfect_solver() {
    let r = eval_with(r#"{"buggy_line": "y <= a | b;", "fix": "y <= a & b;", "cot": "or should be and"}"#);
    assert_eq!(r.overall["pass@1"], 1.0);
    assert_eq!(r.overall["pass@5"], 1.0);
    assert_eq!(r.histogram[20], 3);
}

#[test]
fn eval_never_correct_solver() {
    let r = eval_with(r#"{"buggy_line": "y <= a | b;", "fix": "y <= a ^ b;", "cot": "guess"}"#);
    assert_eq!(r.overall["pass@1"], 0.0);
    assert_eq!(r.overall["pass@5"], 0.0);
    assert_eq!(r.histogram[0], 3);
}

#[test]
fn eval_line_only_flag_accepts_wrong_fix() {
    let dir = tempfile::tempdir().unwrap();
    let reply = r#"{"buggy_line": "y <= a | b;", "fix": "y <= a ^ b;", "cot": "guess"}"#;
    let cfg = command_config(dir.path(), "exit 3\n", &format!("cat > /dev/null\necho '{reply}'\n"));
    let bench = dir.path().join("bench.jsonl");
    std::fs::write(&bench, bench_case("a").to_string() + "\n").unwrap();
    let out = dir.path().join("eval");
    let step = run_cli(&[
        s("--config"),
        s(&cfg),
        s("eval"),
        s(&bench),
        s("--out"),
        s(&out),
        s("--line-only"),
        s("--n"),
        s("5"),
        s("--k"),
        s("1,2"),
    ]);
    assert_eq!(step.code, Some(0), "{}", step.stderr);
    let r: PassAtKReport = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(r.overall["pass@2"], 1.0);
    assert_eq!(r.histogram.len(), 6);
}

#[test]
fn eval_schema_error_and_bad_k() {
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("bench.jsonl");
    std::fs::write(&bench, "{\"id\": 1}\n").unwrap();
    let step = run_cli(&[s("eval"), s(&bench), s("--out"), s(dir.path())]);
    assert_eq!(step.code, Some(2));
    assert!(step.stderr.contains("line 1"), "{}", step.stderr);
    std::fs::write(&bench, bench_case("a").to_string()).unwrap();
    let step = run_cli(&[s("eval"), s(&bench), s("--k"), s("25")]);
    assert_eq!(step.code, Some(2));
}

#[test]
fn eval_llm_failure_is_a_per_item_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = command_config(dir.path(), "exit 3\n", "cat > /dev/null\nexit 1\n");
    let bench = dir.path().join("bench.jsonl");
    std::fs::write(&bench, bench_case("a").to_string() + "\n").unwrap();
    let out = dir.path().join("eval");
    let step = run_cli(&[s("--config"), s(&cfg), s("eval"), s(&bench), s("--out"), s(&out)]);
    assert_eq!(step.code, Some(1));
    let errors = records(&out.join("errors.jsonl"));
    assert_eq!(errors.len(), 1);
    assert_eq!(errors[0]["unit_id"], "a");
}

fn judged(text: &str, ok: bool) -> JudgedResponse {
    JudgedResponse {
        response: ModelResponse::parse(text),
        verdict: Some(if ok { Verdict::Correct } else { Verdict::Incorrect }),
    }
}

fn result(id: &str, wrong: &[&str], total: usize) -> CaseResult {
    let mut responses: Vec<JudgedResponse> = (0..total - wrong.len()).map(|_| judged("right", true)).collect();
    responses.extend(wrong.iter().map(|w| judged(w, false)));
    CaseResult {
        case_id: id.into(),
        source: assertforge::eval::CaseSource::Machine,
        bug_syntactic: SyntacticKind::Op,
        bug_relation: Relation::Direct,
        length_bin: 0,
        n: total,
        c: total - wrong.len(),
        x: format!("question {id}"),
        p: "right".into(),
        responses,
    }
}

fn dpo_prep(results: &[CaseResult]) -> (Step, Vec<PreferenceTriple>) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.jsonl");
    let text: String = results.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    std::fs::write(&path, text).unwrap();
    let out = dir.path().join("dpo");
    let step = run_cli(&[s("dpo-prep"), s(&path), s("--out"), s(&out)]);
    let triples = read_jsonl(&out.join("triples.jsonl")).unwrap_or_default();
    (step, triples)
}

#[test]
fn dpo_prep_examples() {
    let (step, t) = dpo_prep(&[result("a", &[], 20), result("b", &[], 20)]);
    assert_eq!(step.code, Some(0));
    assert!(t.is_empty());

    let (step, t) = dpo_prep(&[result("a", &["wrong"], 20)]);
    assert_eq!(step.code, Some(0));
    assert_eq!(t, [PreferenceTriple { x: "question a".into(), p: "right".into(), n: "wrong".into() }]);

    // Distinct negatives after normalization: a has 2, b has 3, c none.
    let mixed = [result("a", &["w1", "w1 ", "w2"], 20), result("b", &["x", "y", "z", "x"], 20), result("c", &[], 20)];
    let (step, t) = dpo_prep(&mixed);
    assert_eq!(step.code, Some(0));
    assert_eq!(t.len(), 5);
}

#[test]
fn dpo_prep_wrong_response_count() {
    let (step, t) = dpo_prep(&[result("a", &["w"], 19), result("b", &["v"], 20)]);
    assert_eq!(step.code, Some(1));
    assert_eq!(t.len(), 1, "valid samples are still processed");
}

#[test]
fn losses_subcommand() {
    let step = run_cli(&[s("losses"), s("--draws"), s("10")]);
    assert_eq!(step.code, Some(0), "{}", step.stderr);
    let v: Value = serde_json::from_str(&step.stdout).unwrap();
    assert!((v["dpo_worked_example"].as_f64().unwrap() - 0.60459).abs() < 1e-4);
    for k in ["pt", "sft", "dpo"] {
        assert!(v["gradient_check"]["max_relative_error"][k].as_f64().unwrap() <= 1e-5);
    }
}

#[test]
fn losses_on_triples_at_reference_is_ln2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    std::fs::write(&path, "{\"x\":\"q\",\"p\":\"a\",\"n\":\"b\"}\n").unwrap();
    let step = run_cli(&[s("losses"), s("--draws"), s("1"), s("--triples"), s(&path)]);
    assert_eq!(step.code, Some(0));
    let v: Value = serde_json::from_str(&step.stdout).unwrap();
    assert!((v["triples"]["dpo_loss_at_reference"].as_f64().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "split_fraction = 1.5\n").unwrap();
    let step = run_cli(&[s("--config"), s(&cfg), s("losses"), s("--draws"), s("1")]);
    assert_eq!(step.code, Some(2));
    std::fs::write(&cfg, "unknown_key = 1\n").unwrap();
    assert_eq!(run_cli(&[s("--config"), s(&cfg), s("losses")]).code, Some(2));
}

#[test]
fn outputs_carry_metadata_header() {
    let out = tempfile::tempdir().unwrap();
    run_cli(&[s("filter"), s(fixtures().join("filter10")), s("--out"), s(out.path())]);
    let text = std::fs::read_to_string(out.path().join("manifest.jsonl")).unwrap();
    let head: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for k in ["tool_version", "seed", "config_digest"] {
        assert!(head["_meta"].get(k).is_some(), "{k}");
    }
    assert_eq!(parse_jsonl::<Value>(&text).unwrap().len(), 8);
}
