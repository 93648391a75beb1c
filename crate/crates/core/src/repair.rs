//! Single-shot LLM repair with and without localization hints, scored by
//! how many tests the repaired program passes.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{render_failing_test_section, render_statement_section, render_template, split_blocks};
use crate::context::AuxiliaryContext;
use crate::corpus::{flatten, parse_header_line, FlatProgram, Problem, Submission};
use crate::judge::{Judge, JudgeReport};
use crate::llm::{ChatModel, CompletionParams};
use crate::par::parallel_map;
use crate::vote::SuspiciousnessRanking;

const SYSTEM_TEMPLATE: &str = include_str!("../assets/prompts/v1/repair_system.txt");
const USER_TEMPLATE: &str = include_str!("../assets/prompts/v1/repair_user.txt");
const FORMAT_SINGLE: &str = include_str!("../assets/prompts/v1/repair_format_single.txt");
const FORMAT_MULTI: &str = include_str!("../assets/prompts/v1/repair_format_multi.txt");

pub const DEFAULT_TOP_LINES: usize = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RepairError {
    #[error("unparseable repair: {0}")]
    Unparseable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Plain,
    Assisted,
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Setting::Plain => "plain",
            Setting::Assisted => "assisted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairOutcome {
    pub program_id: String,
    pub setting: Setting,
    pub before_pass: usize,
    pub after_pass: usize,
    pub total_tests: usize,
    pub compiled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn is_fixed(o: &RepairOutcome) -> bool {
    o.compiled && o.after_pass == o.total_tests
}

pub fn is_improved(o: &RepairOutcome) -> bool {
    o.compiled && o.after_pass > o.before_pass
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairState {
    Fixed,
    Improved,
    Failed,
}

impl RepairState {
    pub const ALL: [RepairState; 3] = [RepairState::Fixed, RepairState::Improved, RepairState::Failed];

    pub fn of(o: &RepairOutcome) -> Self {
        if is_fixed(o) {
            RepairState::Fixed
        } else if is_improved(o) {
            RepairState::Improved
        } else {
            RepairState::Failed
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairPrompt {
    pub system: String,
    pub user: String,
}

/// Repair request. With `fl`, the first `top_lines` positively scored lines
/// are listed with their explanations.
pub fn build_repair_prompt(
    ctx: &AuxiliaryContext,
    program: &FlatProgram,
    fl: Option<&SuspiciousnessRanking>,
    top_lines: usize,
) -> RepairPrompt {
    let multi = program.paths().len() > 1;
    let program_text = program.lines().join("\n");
    let localization = fl
        .map(|r| render_localization_section(r, program, top_lines))
        .unwrap_or_default();
    let values = HashMap::from([
        ("statement", ctx.statement.as_deref().map(render_statement_section).unwrap_or_default()),
        (
            "failing_test",
            ctx.failing_test
                .as_ref()
                .map(render_failing_test_section)
                .unwrap_or_default(),
        ),
        ("localization", localization),
        ("program", program_text),
        (
            "format_instruction",
            if multi { FORMAT_MULTI } else { FORMAT_SINGLE }.trim_end().to_string(),
        ),
    ]);
    RepairPrompt {
        system: SYSTEM_TEMPLATE.trim_end().to_string(),
        user: render_template(USER_TEMPLATE, &values),
    }
}

pub fn render_localization_section(r: &SuspiciousnessRanking, program: &FlatProgram, top_lines: usize) -> String {
    let lines: Vec<usize> = r.suspicious_lines().take(top_lines).collect();
    if lines.is_empty() {
        return String::new();
    }
    let mut s = String::from("## Suspicious Lines\n\nA fault localization tool ranked these lines as most likely to be faulty:\n\n");
    for (i, g) in lines.iter().enumerate() {
        let (path, local) = program.unflatten_line(*g).unwrap_or(("?", *g));
        let code = program.line(*g).unwrap_or_default().trim();
        let _ = writeln!(s, "{}. {path}:{local}: `{code}`", i + 1);
        if let Some(e) = r.explanations.get(g) {
            let _ = writeln!(s, "   Reason: {}", e.text.trim());
        }
    }
    s.push('\n');
    s
}

/// Reads the repaired program out of a model response. Single-file
/// programs take the last fenced block. Multi-file programs take header
/// sections, from inside a fenced block or each followed by one; files the
/// response leaves out keep their content.
pub fn extract_program(response: &str, original: &Submission) -> Result<Submission, RepairError> {
    let blocks = split_blocks(response);
    if blocks.is_empty() {
        return Err(RepairError::Unparseable("no fenced code block".into()));
    }
    let replacements: BTreeMap<String, String> = if original.files.len() == 1 {
        let last = blocks.last().expect("non-empty");
        BTreeMap::from([(original.files[0].path.clone(), join_block(last))])
    } else {
        let sections = sections_in_blocks(&blocks);
        if sections.is_empty() {
            sections_before_blocks(response)
        } else {
            sections
        }
    };
    let known: Vec<&String> = replacements.keys().filter(|p| original.file(p).is_some()).collect();
    if known.is_empty() {
        return Err(RepairError::Unparseable("no file section matches the program".into()));
    }
    let files = original.files.iter().map(|f| {
        let content = replacements.get(&f.path).unwrap_or(&f.content);
        (f.path.clone(), content.clone())
    });
    Submission::new(files, original.language).map_err(|e| RepairError::Unparseable(e.to_string()))
}

fn join_block(lines: &[&str]) -> String {
    let mut s = lines.join("\n");
    s.push('\n');
    s
}

fn sections_in_blocks(blocks: &[Vec<&str>]) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for block in blocks {
        let mut current: Option<(String, Vec<&str>)> = None;
        for line in block {
            if let Some(path) = parse_header_line(line) {
                if let Some((p, body)) = current.take() {
                    out.insert(p, join_block(&body));
                }
                current = Some((path.to_string(), Vec::new()));
            } else if let Some((_, body)) = current.as_mut() {
                body.push(line);
            }
        }
        if let Some((p, body)) = current {
            out.insert(p, join_block(&body));
        }
    }
    out
}

fn sections_before_blocks(response: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut pending: Option<String> = None;
    let mut body: Option<Vec<&str>> = None;
    for line in response.lines() {
        if line.trim_start().starts_with("```") {
            match body.take() {
                Some(b) => {
                    if let Some(p) = pending.take() {
                        out.insert(p, join_block(&b));
                    }
                }
                None => body = Some(Vec::new()),
            }
            continue;
        }
        match body.as_mut() {
            Some(b) => b.push(line),
            None => {
                if let Some(p) = parse_header_line(line.trim()) {
                    pending = Some(p.to_string());
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct RepairCase {
    pub program_id: String,
    pub problem: Problem,
    pub faulty: Submission,
    pub context: AuxiliaryContext,
    pub ranking: Option<SuspiciousnessRanking>,
}

#[derive(Debug, Clone)]
pub struct RepairOptions {
    pub top_lines: usize,
    pub params: CompletionParams,
    pub parallelism: usize,
}

impl Default for RepairOptions {
    fn default() -> Self {
        RepairOptions {
            top_lines: DEFAULT_TOP_LINES,
            params: CompletionParams::default(),
            parallelism: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SettingSummary {
    pub programs: usize,
    pub fixed: usize,
    pub improved: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowEdge {
    pub plain: RepairState,
    pub assisted: RepairState,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairReport {
    pub outcomes: Vec<RepairOutcome>,
    pub summary: BTreeMap<Setting, SettingSummary>,
    /// Per-program state under plain repair against assisted repair; empty
    /// unless both settings ran.
    pub flow: Vec<FlowEdge>,
}

pub fn summarize(outcomes: &[RepairOutcome]) -> BTreeMap<Setting, SettingSummary> {
    let mut out: BTreeMap<Setting, SettingSummary> = BTreeMap::new();
    for o in outcomes {
        let s = out.entry(o.setting).or_default();
        s.programs += 1;
        s.fixed += usize::from(is_fixed(o));
        s.improved += usize::from(is_improved(o));
    }
    out
}

pub fn flow(outcomes: &[RepairOutcome]) -> Vec<FlowEdge> {
    let mut plain = BTreeMap::new();
    let mut assisted = BTreeMap::new();
    for o in outcomes {
        let target = match o.setting {
            Setting::Plain => &mut plain,
            Setting::Assisted => &mut assisted,
        };
        target.insert(o.program_id.as_str(), RepairState::of(o));
    }
    if plain.is_empty() || assisted.is_empty() {
        return Vec::new();
    }
    let mut counts: BTreeMap<(RepairState, RepairState), usize> = BTreeMap::new();
    for (id, p) in &plain {
        if let Some(a) = assisted.get(id) {
            *counts.entry((*p, *a)).or_default() += 1;
        }
    }
    let mut edges = Vec::new();
    for p in RepairState::ALL {
        for a in RepairState::ALL {
            edges.push(FlowEdge {
                plain: p,
                assisted: a,
                count: counts.get(&(p, a)).copied().unwrap_or(0),
            });
        }
    }
    edges
}

fn judge_counts(judge: &Judge, sub: &Submission, prob: &Problem, workdir: &Path) -> Result<(bool, usize), String> {
    let report = judge.judge_all(sub, prob, workdir).map_err(|e| e.to_string())?;
    Ok(match report {
        JudgeReport::CompileFailure { .. } => (false, 0),
        tested => (true, tested.passed()),
    })
}

fn repair_one(
    case: &RepairCase,
    setting: Setting,
    before_pass: usize,
    backend: &dyn ChatModel,
    judge: &Judge,
    opts: &RepairOptions,
    workdir: &Path,
) -> RepairOutcome {
    let mut outcome = RepairOutcome {
        program_id: case.program_id.clone(),
        setting,
        before_pass,
        after_pass: 0,
        total_tests: case.problem.tests.len(),
        compiled: false,
        error: None,
    };
    let fl = match setting {
        Setting::Plain => None,
        Setting::Assisted => case.ranking.as_ref(),
    };
    let prompt = build_repair_prompt(&case.context, &flatten(&case.faulty), fl, opts.top_lines);
    let result = backend
        .complete(&prompt.system, &prompt.user, &opts.params)
        .map_err(|e| e.to_string())
        .and_then(|resp| extract_program(&resp, &case.faulty).map_err(|e| e.to_string()))
        .and_then(|fixed| judge_counts(judge, &fixed, &case.problem, workdir));
    match result {
        Ok((compiled, passed)) => {
            outcome.compiled = compiled;
            outcome.after_pass = passed;
        }
        Err(e) => {
            log::warn!("{} ({setting}): {e}", case.program_id);
            outcome.error = Some(e);
        }
    }
    outcome
}

/// Judges each faulty program once, then for each setting asks `backend`
/// for a repair and judges it. Failures are recorded on the outcome and do
/// not stop the run. Outcomes are ordered by case, then by `settings`.
pub fn run_experiment(
    cases: &[RepairCase],
    backend: &dyn ChatModel,
    settings: &[Setting],
    judge: &Judge,
    opts: &RepairOptions,
    workroot: &Path,
) -> RepairReport {
    let per_case = parallel_map(cases, opts.parallelism, |i, case| {
        let base = workroot.join(format!("{i:05}"));
        let before_pass = match judge_counts(judge, &case.faulty, &case.problem, &base.join("before")) {
            Ok((_, p)) => p,
            Err(e) => {
                log::warn!("{}: judging the faulty program failed: {e}", case.program_id);
                0
            }
        };
        settings
            .iter()
            .map(|&s| repair_one(case, s, before_pass, backend, judge, opts, &base.join(s.to_string())))
            .collect::<Vec<_>>()
    });
    let outcomes: Vec<RepairOutcome> = per_case.into_iter().flatten().collect();
    RepairReport {
        summary: summarize(&outcomes),
        flow: flow(&outcomes),
        outcomes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Language;
    use crate::vote::Explanation;

    fn outcome(before: usize, after: usize, total: usize, compiled: bool) -> RepairOutcome {
        RepairOutcome {
            program_id: "p".into(),
            setting: Setting::Plain,
            before_pass: before,
            after_pass: after,
            total_tests: total,
            compiled,
            error: None,
        }
    }

    #[test]
    fn predicate_examples() {
        assert!(is_fixed(&outcome(2, 10, 10, true)));
        let o = outcome(3, 5, 10, true);
        assert!(is_improved(&o) && !is_fixed(&o));
        assert!(!is_improved(&outcome(4, 4, 10, true)));
        assert!(!is_fixed(&outcome(4, 10, 10, false)));
    }

    fn ranking(n: usize, k: usize) -> SuspiciousnessRanking {
        let scores: BTreeMap<usize, f64> = (1..=k).map(|l| (l + 1, 1.0 / l as f64)).collect();
        let mut order: Vec<usize> = (2..=k + 1).collect();
        order.extend((1..=n).filter(|l| !scores.contains_key(l)));
        let explanations = scores
            .keys()
            .map(|&l| {
                (
                    l,
                    Explanation {
                        text: format!("why {l}"),
                        model: "m".into(),
                        round: 1,
                    },
                )
            })
            .collect();
        SuspiciousnessRanking {
            n,
            scores,
            order,
            explanations,
        }
    }

    fn program(lines: usize) -> FlatProgram {
        let text: String = (1..=lines).map(|i| format!("int v{i} = {i};\n")).collect();
        flatten(&Submission::single("main.c", &text, Language::C).unwrap())
    }

    #[test]
    fn prompt_lists_at_most_top_lines() {
        let fp = program(12);
        let ctx = AuxiliaryContext::default();
        let plain = build_repair_prompt(&ctx, &fp, None, 5);
        assert!(!plain.user.contains("Suspicious Lines"));
        assert!(plain.user.contains("int v12 = 12;"));
        assert!(!plain.user.contains("==== FILE"));

        let two = build_repair_prompt(&ctx, &fp, Some(&ranking(13, 2)), 5);
        assert_eq!(two.user.matches("   Reason: why").count(), 2);
        let eight = build_repair_prompt(&ctx, &fp, Some(&ranking(13, 8)), 5);
        assert_eq!(eight.user.matches("   Reason: why").count(), 5);
        assert!(eight.user.contains("1. main.c:2: `int v2 = 2;`"));
    }

    fn multi() -> Submission {
        Submission::new(
            [("a.cpp".into(), "int a;\n".into()), ("b.h".into(), "int b;\n".into())],
            Language::Cpp,
        )
        .unwrap()
    }

    #[test]
    fn extract_single_file() {
        let orig = Submission::single("main.c", "int x;\n", Language::C).unwrap();
        let r = "Here:\n```c\nint y;\n```\nand finally\n```c\nint z;\n```\n";
        let s = extract_program(r, &orig).unwrap();
        assert_eq!(s.files[0].content, "int z;\n");
        assert!(extract_program("just prose", &orig).is_err());
    }

    #[test]
    fn extract_multi_file() {
        let orig = multi();
        let r = "```\n==== FILE: a.cpp ====\nint a2;\n```\n";
        let s = extract_program(r, &orig).unwrap();
        assert_eq!(s.file("a.cpp").unwrap().content, "int a2;\n");
        assert_eq!(s.file("b.h").unwrap().content, "int b;\n");

        let r = "==== FILE: b.h ====\n```cpp\nint b2;\n```\n";
        let s = extract_program(r, &orig).unwrap();
        assert_eq!(s.file("a.cpp").unwrap().content, "int a;\n");
        assert_eq!(s.file("b.h").unwrap().content, "int b2;\n");

        assert!(extract_program("```\nint q;\n```\n", &orig).is_err());
    }

    #[test]
    fn summary_and_flow() {
        let mk = |id: &str, s: Setting, after: usize| RepairOutcome {
            program_id: id.into(),
            setting: s,
            before_pass: 1,
            after_pass: after,
            total_tests: 4,
            compiled: true,
            error: None,
        };
        let outs = vec![
            mk("a", Setting::Plain, 1),
            mk("a", Setting::Assisted, 4),
            mk("b", Setting::Plain, 2),
            mk("b", Setting::Assisted, 4),
        ];
        let sum = summarize(&outs);
        assert_eq!(sum[&Setting::Plain], SettingSummary { programs: 2, fixed: 0, improved: 1 });
        assert_eq!(sum[&Setting::Assisted], SettingSummary { programs: 2, fixed: 2, improved: 2 });
        let f = flow(&outs);
        assert_eq!(f.len(), 9);
        assert_eq!(f.iter().map(|e| e.count).sum::<usize>(), 2);
        let get = |p, a| f.iter().find(|e| e.plain == p && e.assisted == a).unwrap().count;
        assert_eq!(get(RepairState::Failed, RepairState::Fixed), 1);
        assert_eq!(get(RepairState::Improved, RepairState::Fixed), 1);
    }
}
