use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use assertforge::config::JudgeMode;
use assertforge::corpus::{filter_units, load_dir, STATUS_ACCEPTED};
use assertforge::dataset::{read_jsonl, write_jsonl, Meta};
use assertforge::eval::{aggregate, evaluate_cases, report_csv, CollectOptions, JudgeOptions, Verdict};
use assertforge::pipeline::{augment, AugmentOptions, ItemFailure};
use assertforge::toolchain::Toolchain;
use assertforge::trainmath::{
    build_triples, dpo_loss, dpo_loss_from_probs, dpo_loss_grad, finite_difference, pt_loss, pt_loss_grad,
    relative_error, select_challenging, sft_loss, sft_loss_grad, tokenize_triple, JudgedSample, Reduction, TokenTriple,
    ToySoftmax, DEFAULT_BETA,
};
use assertforge::{CaseResult, EvalCase, PipelineConfig};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Parser)]
#[command(name = "assertforge", version, about = "Assertion-failure debugging dataset toolchain")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured parallelism.
    #[arg(long, global = true)]
    parallel: Option<usize>,
    /// Keep scratch directories.
    #[arg(long, global = true)]
    keep_temp: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Screen a corpus and write the report and accepted-unit manifest.
    Filter(FilterArgs),
    /// Build the pt, bug and svabug datasets from a manifest.
    Augment(AugmentArgs),
    /// Sample, judge and score a benchmark.
    Eval(EvalArgs),
    /// Select challenging cases and write preference triples.
    DpoPrep(DpoPrepArgs),
    /// Evaluate the training objectives on the toy provider and check gradients.
    Losses(LossesArgs),
}

#[derive(Args)]
struct FilterArgs {
    /// Corpus directory (defaults to `corpus_dir`).
    corpus_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    /// Manifest written by `filter` (defaults to `<out_dir>/manifest.jsonl`).
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Benchmark JSONL files of cases.
    #[arg(required = true)]
    bench: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated k values.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long)]
    mode: Option<JudgeMode>,
    /// Judge on the buggy line only.
    #[arg(long)]
    line_only: bool,
    /// Also write report.csv.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct DpoPrepArgs {
    /// results.jsonl written by `eval` on the training cases.
    results: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Judged responses required per sample (defaults to `eval.n`).
    #[arg(long)]
    responses: Option<usize>,
}

#[derive(Args)]
struct LossesArgs {
    /// Random parameter draws for the gradient check.
    #[arg(long, default_value_t = 100)]
    draws: usize,
    /// Preference triples to score with a toy policy and reference.
    #[arg(long)]
    triples: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    path: String,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = cli.parallel {
        cfg.parallel = p;
        cfg.eval.parallel = p;
    }
    cfg.keep_temp |= cli.keep_temp;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Write the error list and map it to an exit code.
fn finish(dir: &Path, errors: &[ItemFailure], meta: &Meta) -> Result<ExitCode> {
    write_jsonl(&dir.join("errors.jsonl"), errors, Some(meta))?;
    if errors.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} item error(s), see {}", errors.len(), dir.join("errors.jsonl").display());
        Ok(ExitCode::from(1))
    }
}

fn cmd_filter(cfg: &PipelineConfig, args: &FilterArgs) -> Result<ExitCode> {
    let corpus = args.corpus_dir.clone().unwrap_or_else(|| cfg.corpus_dir.clone());
    let out = args.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let units = load_dir(&corpus).with_context(|| format!("reading corpus {}", corpus.display()))?;
    let (report, kept) = filter_units(units);
    ensure_dir(&out)?;
    let meta = Meta::new(cfg.seed, &cfg.digest);
    write_jsonl(&out.join("filter_report.jsonl"), &report, Some(&meta))?;
    let manifest: Vec<ManifestEntry> = report
        .iter()
        .filter(|e| e.status == STATUS_ACCEPTED)
        .map(|e| ManifestEntry { id: e.id.clone(), path: e.path.clone() })
        .collect();
    write_jsonl(&out.join("manifest.jsonl"), &manifest, Some(&meta))?;
    println!("{}", json!({"files": report.len(), "accepted": kept.len(), "rejected": report.len() - kept.len()}));
    Ok(ExitCode::SUCCESS)
}

fn cmd_augment(cfg: &PipelineConfig, args: &AugmentArgs) -> Result<ExitCode> {
    let out = args.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let manifest_path = args.manifest.clone().unwrap_or_else(|| cfg.out_dir.join("manifest.jsonl"));
    let manifest: Vec<ManifestEntry> = read_jsonl(&manifest_path)?;
    let wanted: std::collections::HashSet<&str> = manifest.iter().map(|e| e.id.as_str()).collect();
    let units: Vec<_> = load_dir(&cfg.corpus_dir)
        .with_context(|| format!("reading corpus {}", cfg.corpus_dir.display()))?
        .into_iter()
        .filter(|u| wanted.contains(u.id.as_str()))
        .collect();
    if units.len() != manifest.len() {
        bail!("manifest lists {} units but {} were found in {}", manifest.len(), units.len(), cfg.corpus_dir.display());
    }

    let tc = Toolchain::from_config(cfg);
    let result = augment(&units, &tc, &AugmentOptions::from_config(cfg))?;
    ensure_dir(&out)?;
    let meta = Meta::new(cfg.seed, &cfg.digest);
    write_jsonl(&out.join("pt.jsonl"), &result.records.pt, Some(&meta))?;
    write_jsonl(&out.join("bug.jsonl"), &result.records.bug, Some(&meta))?;
    write_jsonl(&out.join("svabug.jsonl"), &result.records.svabug, Some(&meta))?;
    write_jsonl(&out.join("sva_eval_machine.jsonl"), &result.eval_cases, Some(&meta))?;
    write_jsonl(&out.join("train_cases.jsonl"), &result.train_cases, Some(&meta))?;
    write_jsonl(&out.join("mutations.jsonl"), &result.mutations, Some(&meta))?;
    write_json(&out.join("split_plan.json"), &result.split)?;
    write_json(&out.join("summary.json"), &result.summary)?;
    println!("{}", serde_json::to_string_pretty(&result.summary)?);
    finish(&out, &result.errors, &meta)
}

fn cmd_eval(cfg: &PipelineConfig, args: &EvalArgs) -> Result<ExitCode> {
    let mut e = cfg.eval.clone();
    if let Some(n) = args.n {
        e.n = n;
    }
    if let Some(k) = &args.k {
        e.ks = k.clone();
    }
    if let Some(m) = args.mode {
        e.mode = m;
    }
    e.line_only |= args.line_only;
    if e.ks.is_empty() || e.ks.contains(&0) || e.ks.iter().any(|&k| k > e.n) {
        bail!("every k must lie in 1..={}", e.n);
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.out_dir.join("eval"));
    let mut cases: Vec<EvalCase> = Vec::new();
    for path in &args.bench {
        cases.extend(read_jsonl::<EvalCase>(path)?);
    }
    let mut ids = std::collections::HashSet::new();
    if let Some(dup) = cases.iter().find(|c| !ids.insert(c.id.as_str())) {
        bail!("duplicate case id {}", dup.id);
    }

    let tc = Toolchain::from_config(cfg);
    let collect = CollectOptions {
        n_target: e.n,
        max_rounds: e.max_rounds,
        temperature: cfg.llm.temperature,
        max_attempts: cfg.llm.max_attempts,
        retry_templates: e.retry_templates.clone(),
    };
    let judged =
        evaluate_cases(&cases, &tc, &collect, JudgeOptions { mode: e.mode, line_only: e.line_only }, e.parallel);
    let mut results = Vec::new();
    let mut errors = Vec::new();
    for (case, r) in cases.iter().zip(judged) {
        match r {
            Ok(r) => results.push(r),
            Err(err) => {
                errors.push(ItemFailure { unit_id: case.id.clone(), stage: "eval".into(), detail: err.to_string() })
            }
        }
    }
    ensure_dir(&out)?;
    let meta = Meta::new(cfg.seed, &cfg.digest);
    write_jsonl(&out.join("results.jsonl"), &results, Some(&meta))?;
    if results.is_empty() && !errors.is_empty() {
        return finish(&out, &errors, &meta);
    }
    let report = aggregate(&results, &e.ks)?;
    write_json(&out.join("report.json"), &report)?;
    if args.csv {
        std::fs::write(out.join("report.csv"), report_csv(&report))?;
    }
    println!("{}", serde_json::to_string_pretty(&json!({"cases": report.cases, "overall": report.overall}))?);
    finish(&out, &errors, &meta)
}

fn cmd_dpo_prep(cfg: &PipelineConfig, args: &DpoPrepArgs) -> Result<ExitCode> {
    let expected = args.responses.unwrap_or(cfg.eval.n);
    let out = args.out.clone().unwrap_or_else(|| cfg.out_dir.join("dpo"));
    let results: Vec<CaseResult> = read_jsonl(&args.results)?;
    let mut samples = Vec::new();
    let mut errors = Vec::new();
    for r in &results {
        let responses: Vec<(String, bool)> = r
            .responses
            .iter()
            .filter_map(|j| j.verdict.map(|v| (j.response.raw_text.clone(), v == Verdict::Correct)))
            .collect();
        let sample = JudgedSample { x: r.x.clone(), p: r.p.clone(), responses };
        match select_challenging(std::slice::from_ref(&sample), expected) {
            Ok(_) => samples.push(sample),
            Err(e) => {
                errors.push(ItemFailure { unit_id: r.case_id.clone(), stage: "dpo-prep".into(), detail: e.to_string() })
            }
        }
    }
    let challenging = select_challenging(&samples, expected)?;
    let triples = build_triples(&challenging);
    ensure_dir(&out)?;
    let meta = Meta::new(cfg.seed, &cfg.digest);
    write_jsonl(&out.join("challenging.jsonl"), &challenging, Some(&meta))?;
    write_jsonl(&out.join("triples.jsonl"), &triples, Some(&meta))?;
    println!("{}", json!({"samples": results.len(), "challenging": challenging.len(), "triples": triples.len()}));
    finish(&out, &errors, &meta)
}

fn cmd_losses(cfg: &PipelineConfig, args: &LossesArgs) -> Result<ExitCode> {
    let example = dpo_loss_from_probs(&[(0.8, 0.5, 0.1, 0.4)], DEFAULT_BETA)?;
    let h = 1e-5;
    let mut worst = [0.0f64; 3];
    for d in 0..args.draws {
        let seed = cfg.seed.wrapping_add(d as u64);
        let policy = ToySoftmax::random(8, seed, 2.0)?;
        let reference = ToySoftmax::random(8, seed ^ 0xA5A5, 2.0)?;
        let seqs = vec![vec![1, 2, 3, 4], vec![7, 0, 5]];
        let pairs = vec![(vec![6, 6], vec![1, 3]), (vec![2], vec![0, 7, 7])];
        let triples = vec![TokenTriple { x: vec![3], p: vec![1, 2], n: vec![5, 4, 0] }];
        let checks = [
            relative_error(
                &pt_loss_grad(&policy, &seqs, Reduction::Sum),
                &finite_difference(&policy, h, |m| pt_loss(m, &seqs, Reduction::Sum).unwrap_or(f64::NAN)),
            ),
            relative_error(
                &sft_loss_grad(&policy, &pairs, Reduction::Sum),
                &finite_difference(&policy, h, |m| sft_loss(m, &pairs, Reduction::Sum).unwrap_or(f64::NAN)),
            ),
            relative_error(
                &dpo_loss_grad(&policy, &reference, &triples, args.beta)?,
                &finite_difference(&policy, h, |m| dpo_loss(m, &reference, &triples, args.beta).unwrap_or(f64::NAN)),
            ),
        ];
        for (w, c) in worst.iter_mut().zip(checks) {
            *w = w.max(c);
        }
    }
    let mut doc = json!({
        "dpo_worked_example": example,
        "gradient_check": {"draws": args.draws, "max_relative_error": {"pt": worst[0], "sft": worst[1], "dpo": worst[2]}},
    });
    if let Some(path) = &args.triples {
        let triples: Vec<assertforge::trainmath::PreferenceTriple> = read_jsonl(path)?;
        let tokens: Vec<TokenTriple> = triples.iter().map(tokenize_triple).collect();
        let reference = ToySoftmax::random(16, cfg.seed, 1.0)?;
        let loss = dpo_loss(&reference, &reference, &tokens, args.beta)?;
        doc["triples"] = json!({"count": tokens.len(), "dpo_loss_at_reference": loss});
    }
    println!("{}", serde_json::to_string_pretty(&doc)?);
    let ok = worst.iter().all(|&w| w <= 1e-5);
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Filter(a) => cmd_filter(&cfg, a),
        Command::Augment(a) => cmd_augment(&cfg, a),
        Command::Eval(a) => cmd_eval(&cfg, a),
        Command::DpoPrep(a) => cmd_dpo_prep(&cfg, a),
        Command::Losses(a) => cmd_losses(&cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
