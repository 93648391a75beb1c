//! End-to-end localization of one rejected submission, and the report
//! files written for it.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{annotate_once, AnnotateOptions, Annotation};
use crate::context::{build_context, retrieve_reference, AuxiliaryContext, ContextError, ContextToggles, FailingTestInfo};
use crate::corpus::{flatten, FlatProgram, Problem, Submission};
use crate::judge::{Judge, JudgeError, JudgeReport};
use crate::llm::{ChatModel, Embedder, LlmError};
use crate::par::parallel_map;
use crate::vote::{run_vote, SuspiciousnessRanking, VoteError, VoteMode};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Vote(#[from] VoteError),
    #[error("no backends configured")]
    NoBackends,
    #[error("rounds must be at least 1")]
    NoRounds,
}

#[derive(Debug, Clone)]
pub struct LocalizeSettings {
    pub rounds: u32,
    pub annotate: AnnotateOptions,
    pub toggles: ContextToggles,
    pub truncate_bytes: usize,
    pub vote_mode: VoteMode,
    pub parallelism: usize,
}

impl Default for LocalizeSettings {
    fn default() -> Self {
        LocalizeSettings {
            rounds: 2,
            annotate: AnnotateOptions::default(),
            toggles: ContextToggles::default(),
            truncate_bytes: crate::context::DEFAULT_TRUNCATE_BYTES,
            vote_mode: VoteMode::Weighted,
            parallelism: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Localization {
    pub program: FlatProgram,
    pub report: Option<JudgeReport>,
    pub context: AuxiliaryContext,
    /// Index into the reference pool.
    pub reference: Option<usize>,
    pub annotations: Vec<Annotation>,
    pub ranking: SuspiciousnessRanking,
}

/// Judges the program (when its outcome is needed), gathers context, runs
/// every model for every round and votes. Annotations are ordered by model,
/// then round; `backends` order is the explanation tie-break order.
#[allow(clippy::too_many_arguments)]
pub fn localize(
    problem: &Problem,
    faulty: &Submission,
    pool: &[Submission],
    backends: &[Arc<dyn ChatModel>],
    embedder: &dyn Embedder,
    judge: &Judge,
    workdir: &Path,
    settings: &LocalizeSettings,
) -> Result<Localization, PipelineError> {
    if backends.is_empty() {
        return Err(PipelineError::NoBackends);
    }
    if settings.rounds == 0 {
        return Err(PipelineError::NoRounds);
    }
    let program = flatten(faulty);

    let report = if settings.toggles.use_test {
        let r = judge.judge_all(faulty, problem, workdir)?;
        if r.accepted() {
            log::warn!("{}: submission passes every test; no failing test in context", problem.id);
        }
        Some(r)
    } else {
        None
    };

    let retrieved = if settings.toggles.use_reference {
        retrieve_reference(&program, pool, embedder)?
    } else {
        None
    };
    let context = build_context(
        problem,
        report.as_ref(),
        retrieved.map(|r| r.submission),
        settings.toggles,
        settings.truncate_bytes,
    );

    let jobs: Vec<(usize, u32)> = (0..backends.len())
        .flat_map(|m| (1..=settings.rounds).map(move |r| (m, r)))
        .collect();
    let annotations = parallel_map(&jobs, settings.parallelism, |_, &(m, round)| {
        annotate_once(backends[m].as_ref(), &context, &program, &settings.annotate, round)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let model_order: Vec<String> = backends.iter().map(|b| b.name().to_string()).collect();
    let ranking = run_vote(&annotations, program.len(), settings.vote_mode, &model_order)?;
    Ok(Localization {
        program,
        report,
        context,
        reference: retrieved.map(|r| r.index),
        annotations,
        ranking,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedLine {
    pub rank: usize,
    pub line: usize,
    pub path: String,
    pub local_line: usize,
    pub score: f64,
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSummary {
    pub model: String,
    pub round: u32,
    pub flagged: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub problem: String,
    pub files: Vec<String>,
    pub lines: usize,
    pub models: Vec<String>,
    pub rounds: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failing_test: Option<FailingTestInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<usize>,
    pub annotations: Vec<AnnotationSummary>,
    /// Lines with a positive score, best first.
    pub ranking: Vec<RankedLine>,
}

impl LocalizationReport {
    pub fn new(problem: &Problem, loc: &Localization, models: &[String], rounds: u32) -> Self {
        let r = &loc.ranking;
        let ranking = r
            .suspicious_lines()
            .enumerate()
            .map(|(i, g)| {
                let (path, local_line) = loc.program.unflatten_line(g).expect("scored lines are source lines");
                let e = r.explanations.get(&g);
                RankedLine {
                    rank: i + 1,
                    line: g,
                    path: path.to_string(),
                    local_line,
                    score: r.score(g),
                    code: loc.program.line(g).unwrap_or_default().to_string(),
                    explanation: e.map(|e| e.text.clone()),
                    model: e.map(|e| e.model.clone()),
                    round: e.map(|e| e.round),
                }
            })
            .collect();
        LocalizationReport {
            problem: problem.id.clone(),
            files: loc.program.paths().to_vec(),
            lines: loc.program.len(),
            models: models.to_vec(),
            rounds,
            failing_test: loc.context.failing_test.clone(),
            reference: loc.reference,
            annotations: loc
                .annotations
                .iter()
                .map(|a| AnnotationSummary {
                    model: a.model.clone(),
                    round: a.round,
                    flagged: a.flagged.iter().copied().collect(),
                    warnings: a.warnings.clone(),
                })
                .collect(),
            ranking,
        }
    }
}

/// The flattened program with `marker` and the selected explanation
/// appended to each line that scored above zero.
pub fn render_annotated(program: &FlatProgram, ranking: &SuspiciousnessRanking, marker: &str) -> String {
    let mut out = String::new();
    for (i, line) in program.lines().iter().enumerate() {
        let g = i + 1;
        if ranking.score(g) > 0.0 {
            match ranking.explanations.get(&g) {
                Some(e) => {
                    let _ = writeln!(out, "{line} {marker} {}", e.text);
                }
                None => {
                    let _ = writeln!(out, "{line} {marker}");
                }
            }
        } else {
            let _ = writeln!(out, "{line}");
        }
    }
    out
}
