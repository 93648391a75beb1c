//! Subcommand implementations. Each writes its files into the output
//! directory and returns the text printed on stdout.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use flame_core::context::{build_context, retrieve_reference, AuxiliaryContext, ContextToggles};
use flame_core::corpus::{flatten, ground_truth_lines, load_submission, CorpusError, Language};
use flame_core::eval::{evaluate, EvalRecord, TopKTable};
use flame_core::judge::{Judge, JudgeReport};
use flame_core::par::parallel_map;
use flame_core::pipeline::{localize, render_annotated, LocalizationReport};
use flame_core::repair::{run_experiment, RepairCase, RepairOptions, RepairReport, Setting};
use flame_core::sbfl::{collect_coverage, rank_from_coverage, SbflError};
use flame_core::vote::{run_vote, SuspiciousnessRanking};
use serde::Serialize;
use serde_json::json;

use crate::args::{Cli, Command, Method, Target};
use crate::backends::{Backends, ModelProvider};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{load_dataset, ProblemData};

/// Parses nothing; resolves config and backends for `cli` and runs it.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = cli.resolve_config()?;
    let backends = Backends::from_config(&cfg)?;
    execute(&cli.command, &cfg, &backends, &cli.out)
}

pub fn execute(cmd: &Command, cfg: &RunConfig, models: &dyn ModelProvider, out: &Path) -> Result<String, CliError> {
    match cmd {
        Command::Localize(t) => cmd_localize(t, cfg, models, out),
        Command::Eval { manifest, method, .. } => cmd_eval(manifest, *method, cfg, models, out),
        Command::Judge(t) => cmd_judge(t, cfg, out),
        Command::Retrieve(t) => cmd_retrieve(t, models, out),
        Command::Repair { manifest, settings } => {
            let settings: Vec<Setting> = settings.iter().map(|&s| s.into()).collect();
            cmd_repair(manifest, &settings, cfg, models, out)
        }
    }
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    write_text(out, name, &text)
}

fn write_text(out: &Path, name: &str, text: &str) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    fs::write(out.join(name), text)?;
    Ok(())
}

fn scratch() -> Result<tempfile::TempDir, CliError> {
    tempfile::Builder::new()
        .prefix("flame-")
        .tempdir()
        .map_err(|e| CliError::Environment(format!("scratch directory: {e}")))
}

fn load_target(t: &Target) -> Result<(ProblemData, flame_core::corpus::Submission), CliError> {
    let mut data = ProblemData::load(&t.problem)?;
    let language: Language = t.language.unwrap_or(data.language);
    if language != data.language {
        data.language = language;
        data.history = flame_core::corpus::load_history(&t.problem, language)?;
    }
    if !t.submission.is_dir() {
        return Err(CliError::Dataset(format!("submission directory {} not found", t.submission.display())));
    }
    let sub = load_submission(&t.submission, language)?;
    Ok((data, sub))
}

pub fn cmd_localize(t: &Target, cfg: &RunConfig, models: &dyn ModelProvider, out: &Path) -> Result<String, CliError> {
    let (data, sub) = load_target(t)?;
    let backends = models.chats(&cfg.models)?;
    let judge = Judge::new(cfg.judge.clone());
    let work = scratch()?;
    let pool = data.pool();
    let loc = localize(
        &data.problem,
        &sub,
        &pool,
        &backends,
        models.embedder(),
        &judge,
        work.path(),
        &cfg.localize_settings(),
    )?;
    let report = LocalizationReport::new(&data.problem, &loc, &cfg.models, cfg.rounds);
    write_json(out, "report.json", &report)?;
    write_text(out, "annotated.txt", &render_annotated(&loc.program, &loc.ranking, &cfg.marker))?;

    let mut s = String::new();
    for r in &report.ranking {
        let _ = writeln!(s, "{:>3}  {}:{}  {:.4}  {}", r.rank, r.path, r.local_line, r.score, r.explanation.as_deref().unwrap_or(""));
    }
    if report.ranking.is_empty() {
        s.push_str("no suspicious lines\n");
    }
    Ok(s)
}

pub fn cmd_judge(t: &Target, cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let (data, sub) = load_target(t)?;
    let work = scratch()?;
    let report = Judge::new(cfg.judge.clone()).judge_all(&sub, &data.problem, work.path())?;
    write_json(out, "judge.json", &report)?;
    Ok(match &report {
        JudgeReport::CompileFailure { diagnostics } => format!("CE\n{diagnostics}"),
        JudgeReport::Tested { outcomes } => outcomes.iter().map(|o| format!("{} {}\n", o.test_id, o.verdict)).collect(),
    })
}

pub fn cmd_retrieve(t: &Target, models: &dyn ModelProvider, out: &Path) -> Result<String, CliError> {
    let (data, sub) = load_target(t)?;
    let pool = data.pool();
    let found = retrieve_reference(&flatten(&sub), &pool, models.embedder())?;
    let value = match found {
        Some(r) => json!({"reference": {
            "name": data.history[r.index].0,
            "index": r.index,
            "similarity": r.similarity,
        }}),
        None => json!({"reference": null}),
    };
    write_json(out, "retrieve.json", &value)?;
    Ok(match found {
        Some(r) => format!("history/{} (similarity {:.4})\n", data.history[r.index].0, r.similarity),
        None => "no reference\n".to_string(),
    })
}

#[derive(Debug, Serialize)]
struct RecordSummary {
    program_id: String,
    lines: usize,
    truth: Vec<usize>,
    first_hit: Option<usize>,
    top: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct Excluded {
    program_id: String,
    reason: String,
}

#[derive(Debug, Serialize)]
struct EvalOutput<'a> {
    method: &'static str,
    table: &'a TopKTable,
    excluded: Vec<Excluded>,
    records: Vec<RecordSummary>,
}

/// Identity order with no scores, for programs a method cannot rank.
fn unranked(n: usize) -> SuspiciousnessRanking {
    run_vote(&[], n, Default::default(), &[]).expect("empty vote")
}

pub fn cmd_eval(
    manifest: &Path,
    method: Method,
    cfg: &RunConfig,
    models: &dyn ModelProvider,
    out: &Path,
) -> Result<String, CliError> {
    let ds = load_dataset(manifest)?;
    let mut excluded = Vec::new();
    let mut usable = Vec::new();
    for p in &ds.pairs {
        match ground_truth_lines(&p.pair.faulty, &p.pair.fixed) {
            Ok(gt) if gt.is_empty() => {
                log::warn!("{}: faulty and fixed programs do not differ; excluded", p.id);
                excluded.push(Excluded {
                    program_id: p.id.clone(),
                    reason: "empty diff".into(),
                });
            }
            Ok(gt) => usable.push((p, gt)),
            Err(e @ CorpusError::FileSetMismatch(_)) => {
                log::warn!("{}: {e}; excluded", p.id);
                excluded.push(Excluded {
                    program_id: p.id.clone(),
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e.into()),
        }
    }
    if usable.is_empty() {
        return Err(CliError::Dataset("no pair in the manifest has ground truth".into()));
    }

    let backends = match method {
        Method::Flame => models.chats(&cfg.models)?,
        Method::Ochiai => Vec::new(),
    };
    let judge = Judge::new(cfg.judge.clone());
    let settings = cfg.localize_settings();
    let work = scratch()?;
    let rankings = parallel_map(&usable, cfg.parallelism, |i, (p, _)| -> Result<SuspiciousnessRanking, CliError> {
        let data = ds.problem(p);
        let dir = work.path().join(format!("{i:05}"));
        match method {
            Method::Flame => {
                let pool = if settings.toggles.use_reference { data.pool() } else { Vec::new() };
                let loc = localize(
                    &data.problem,
                    &p.pair.faulty,
                    &pool,
                    &backends,
                    models.embedder(),
                    &judge,
                    &dir,
                    &settings,
                )?;
                Ok(loc.ranking)
            }
            Method::Ochiai => match collect_coverage(&p.pair.faulty, &data.problem, &dir, &cfg.coverage) {
                Ok(m) => Ok(rank_from_coverage(&m)?),
                Err(SbflError::CompileFailed(_)) => {
                    log::warn!("{}: does not compile; no coverage ranking", p.id);
                    Ok(unranked(flatten(&p.pair.faulty).len()))
                }
                Err(e) => Err(e.into()),
            },
        }
    });

    let mut records = Vec::new();
    for ((p, gt), ranking) in usable.iter().zip(rankings) {
        let fp = flatten(&p.pair.faulty);
        records.push(EvalRecord {
            program_id: p.id.clone(),
            truth: gt.global_lines(&fp),
            ranking: ranking?,
        });
    }
    let table = evaluate(&records, &cfg.ks).map_err(|e| CliError::Dataset(e.to_string()))?;
    let label = match method {
        Method::Flame => "flame",
        Method::Ochiai => "ochiai",
    };
    let max_k = cfg.ks.iter().copied().max().unwrap_or(10);
    let summaries = records
        .iter()
        .map(|r| RecordSummary {
            program_id: r.program_id.clone(),
            lines: r.ranking.n,
            truth: r.truth.iter().copied().collect(),
            first_hit: r.first_hit(),
            top: r.ranking.order.iter().take(max_k).copied().collect(),
        })
        .collect();
    write_json(out, "topk.json", &table)?;
    write_json(
        out,
        "eval.json",
        &EvalOutput {
            method: label,
            table: &table,
            excluded,
            records: summaries,
        },
    )?;
    let text = table.to_text(label);
    write_text(out, "eval.txt", &text)?;
    Ok(text)
}

pub fn cmd_repair(
    manifest: &Path,
    settings: &[Setting],
    cfg: &RunConfig,
    models: &dyn ModelProvider,
    out: &Path,
) -> Result<String, CliError> {
    if settings.is_empty() {
        return Err(CliError::Config("no repair settings selected".into()));
    }
    let ds = load_dataset(manifest)?;
    let repairer = models.chat(&cfg.repair.model)?;
    let assisted = settings.contains(&Setting::Assisted);
    let annotators = if assisted { models.chats(&cfg.models)? } else { Vec::new() };
    let judge = Judge::new(cfg.judge.clone());
    let loc_settings = cfg.localize_settings();
    let work = scratch()?;

    let prepared = parallel_map(&ds.pairs, cfg.parallelism, |i, p| -> Result<RepairCase, CliError> {
        let data = ds.problem(p);
        let dir = work.path().join(format!("loc-{i:05}"));
        let (context, ranking) = if assisted {
            let pool = if loc_settings.toggles.use_reference { data.pool() } else { Vec::new() };
            let loc = localize(
                &data.problem,
                &p.pair.faulty,
                &pool,
                &annotators,
                models.embedder(),
                &judge,
                &dir,
                &loc_settings,
            )?;
            (loc.context, Some(loc.ranking))
        } else {
            (plain_context(data, p, &judge, &dir, cfg)?, None)
        };
        Ok(RepairCase {
            program_id: p.id.clone(),
            problem: data.problem.clone(),
            faulty: p.pair.faulty.clone(),
            context,
            ranking,
        })
    });
    let cases = prepared.into_iter().collect::<Result<Vec<_>, _>>()?;
    let opts = RepairOptions {
        top_lines: cfg.repair.top_lines,
        params: cfg.params(),
        parallelism: cfg.parallelism,
    };
    let report = run_experiment(&cases, repairer.as_ref(), settings, &judge, &opts, &work.path().join("repair"));
    write_json(out, "repair.json", &report)?;
    let text = repair_table(&report);
    write_text(out, "repair.txt", &text)?;
    Ok(text)
}

fn plain_context(
    data: &ProblemData,
    p: &crate::manifest::LoadedPair,
    judge: &Judge,
    dir: &Path,
    cfg: &RunConfig,
) -> Result<AuxiliaryContext, CliError> {
    let report = if cfg.toggles.use_test {
        Some(judge.judge_all(&p.pair.faulty, &data.problem, dir)?)
    } else {
        None
    };
    let toggles = ContextToggles {
        use_reference: false,
        ..cfg.toggles
    };
    Ok(build_context(&data.problem, report.as_ref(), None, toggles, cfg.truncate_bytes))
}

fn repair_table(report: &RepairReport) -> String {
    let mut s = format!("{:<10}{:>10}{:>8}{:>11}\n", "Setting", "Programs", "#Fixed", "#Improved");
    for (setting, sum) in &report.summary {
        let _ = writeln!(s, "{:<10}{:>10}{:>8}{:>11}", setting.to_string(), sum.programs, sum.fixed, sum.improved);
    }
    let failed: BTreeSet<&str> = report
        .outcomes
        .iter()
        .filter(|o| o.error.is_some())
        .map(|o| o.program_id.as_str())
        .collect();
    if !failed.is_empty() {
        let _ = writeln!(s, "errors recorded for: {}", failed.into_iter().collect::<Vec<_>>().join(", "));
    }
    s
}
