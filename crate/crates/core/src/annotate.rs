//! Annotation protocol: prompt construction, marker parsing and fuzzy
//! re-alignment of annotated lines to the original program.
//!
//! The model returns the whole program with `// @@ <explanation>` appended to
//! faulty lines. Models reformat code (blank lines, indentation, extra
//! comments), so marker positions are not trusted directly. Each marked line
//! is matched against the original by cosine similarity of hashed
//! bag-of-token vectors, probing outward from the same line number.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::context::{AuxiliaryContext, FailingTestInfo, FailureSource};
use crate::corpus::FlatProgram;
use crate::judge::Verdict;
use crate::llm::{ChatModel, CompletionParams, LlmError};
use crate::vector::{tokenize, SparseVector};

pub const DEFAULT_MARKER: &str = "// @@";
pub const LINE_VECTOR_DIM: usize = 1 << 18;
pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.9;
pub const DEFAULT_COLLAPSE_THRESHOLD: usize = 600;
pub const PROMPT_VERSION: &str = "v1";

const SYSTEM_TEMPLATE: &str = include_str!("../assets/prompts/v1/annotate_system.txt");
const USER_TEMPLATE: &str = include_str!("../assets/prompts/v1/annotate_user.txt");
const FORMAT_MARKER: &str = include_str!("../assets/prompts/v1/format_marker.txt");
const FORMAT_COLLAPSE: &str = include_str!("../assets/prompts/v1/format_collapse.txt");
const FORMAT_LINE_NUMBERS: &str = include_str!("../assets/prompts/v1/format_line_numbers.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationMode {
    #[default]
    #[serde(alias = "MARKER")]
    Marker,
    #[serde(alias = "LINE_NUMBERS")]
    LineNumbers,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub mode: AnnotationMode,
}

/// One model-round's flagged lines (global line numbers of the original
/// program) and their explanations.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Annotation {
    pub model: String,
    pub round: u32,
    pub flagged: BTreeSet<usize>,
    pub explanations: BTreeMap<usize, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Annotation {
    pub fn empty(model: &str, round: u32) -> Self {
        Annotation {
            model: model.to_string(),
            round,
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.flagged.is_empty()
    }

    pub fn flag(&mut self, line: usize, explanation: Option<String>) {
        self.flagged.insert(line);
        if let Some(e) = explanation {
            self.explanations.insert(line, e);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotateOptions {
    pub mode: AnnotationMode,
    pub marker: String,
    pub similarity_threshold: f64,
    pub collapse_threshold_lines: usize,
    pub params: CompletionParams,
}

impl Default for AnnotateOptions {
    fn default() -> Self {
        AnnotateOptions {
            mode: AnnotationMode::Marker,
            marker: DEFAULT_MARKER.to_string(),
            similarity_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            collapse_threshold_lines: DEFAULT_COLLAPSE_THRESHOLD,
            params: CompletionParams::default(),
        }
    }
}

impl AnnotateOptions {
    /// Marker built from a comment prefix, e.g. `#` gives `# @@`.
    pub fn marker_for_comment(prefix: &str) -> String {
        format!("{prefix} @@")
    }
}

/// Replaces `{name}` placeholders in one pass; substituted text is never
/// rescanned.
pub fn render_template(template: &str, values: &HashMap<&str, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if values.contains_key(&after[..close]) => {
                out.push_str(&values[&after[..close]]);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

pub(crate) fn fenced(text: &str) -> String {
    let mut s = String::from("```\n");
    s.push_str(text);
    if !text.ends_with('\n') {
        s.push('\n');
    }
    s.push_str("```\n");
    s
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::AC => "AC (Accepted)",
        Verdict::WA => "WA (Wrong Answer)",
        Verdict::RE => "RE (Runtime Error)",
        Verdict::TLE => "TLE (Time Limit Exceeded)",
        Verdict::MLE => "MLE (Memory Limit Exceeded)",
        Verdict::CE => "CE (Compile Error)",
    }
}

pub fn render_statement_section(statement: &str) -> String {
    format!("## Problem Statement\n\n{}\n\n", statement.trim_end())
}

pub fn render_failing_test_section(info: &FailingTestInfo) -> String {
    match info.source {
        FailureSource::Compiler => format!(
            "## Compiler Diagnostics\n\nThe program failed to compile:\n\n{}\n",
            fenced(info.diagnostics.as_deref().unwrap_or_default())
        ),
        FailureSource::Test => {
            let mut s = String::from("## Failing Test\n\n");
            if let Some(v) = info.verdict {
                s.push_str(&format!("Verdict: {}\n\n", verdict_name(v)));
            }
            if let Some(input) = &info.input {
                s.push_str(&format!("Input:\n{}\n", fenced(input)));
            }
            if let Some(exp) = &info.expected_output {
                s.push_str(&format!("Expected output:\n{}\n", fenced(exp)));
            }
            if let Some(act) = &info.actual_output {
                s.push_str(&format!("Actual output:\n{}\n", fenced(act)));
            }
            s
        }
    }
}

pub fn render_reference_section(reference: &FlatProgram) -> String {
    format!(
        "## Reference Program\n\nAn accepted submission to the same problem, for comparison:\n\n{}\n",
        fenced(&reference.text())
    )
}

fn numbered(program: &FlatProgram) -> String {
    program
        .lines()
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{}: {}", i + 1, l))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Assembles the annotation request. Sections appear in the order
/// statement, failing test, reference, program, output format; absent
/// context fields produce no section.
pub fn build_prompt(
    ctx: &AuxiliaryContext,
    program: &FlatProgram,
    mode: AnnotationMode,
    collapse_allowed: bool,
) -> PromptBundle {
    let program_text = match mode {
        AnnotationMode::Marker => program.lines().join("\n"),
        AnnotationMode::LineNumbers => numbered(program),
    };
    let format_instruction = match mode {
        AnnotationMode::Marker if collapse_allowed => {
            format!("{}\n\n{}", FORMAT_MARKER.trim(), FORMAT_COLLAPSE.trim())
        }
        AnnotationMode::Marker => FORMAT_MARKER.trim_end().to_string(),
        AnnotationMode::LineNumbers => FORMAT_LINE_NUMBERS.trim_end().to_string(),
    };
    let values = HashMap::from([
        (
            "statement",
            ctx.statement
                .as_deref()
                .map(render_statement_section)
                .unwrap_or_default(),
        ),
        (
            "failing_test",
            ctx.failing_test
                .as_ref()
                .map(render_failing_test_section)
                .unwrap_or_default(),
        ),
        (
            "reference",
            ctx.reference
                .as_ref()
                .map(render_reference_section)
                .unwrap_or_default(),
        ),
        ("program", program_text),
        ("format_instruction", format_instruction),
    ]);
    PromptBundle {
        system: SYSTEM_TEMPLATE.trim_end().to_string(),
        user: render_template(USER_TEMPLATE, &values),
        mode,
    }
}

/// The line with any marker and trailing explanation removed.
pub fn strip_annotation<'a>(line: &'a str, marker: &str) -> &'a str {
    match line.find(marker) {
        Some(i) => &line[..i],
        None => line,
    }
}

pub fn is_collapse_token(line: &str, marker: &str) -> bool {
    matches!(strip_annotation(line, marker).trim(), "..." | "…")
}

pub fn line_vector(line: &str, marker: &str) -> SparseVector {
    let code = strip_annotation(line, marker).to_lowercase();
    SparseVector::from_tokens(&tokenize(&code), LINE_VECTOR_DIM)
}

fn similarity_of(a: &SparseVector, b: &SparseVector, a_blank: bool, b_blank: bool) -> f64 {
    if a.is_zero() && b.is_zero() {
        return if a_blank && b_blank { 1.0 } else { 0.0 };
    }
    a.cosine(b).clamp(0.0, 1.0)
}

/// Cosine of the two lines' vectors clamped to [0, 1]. Two token-free lines
/// score 1 only if both are blank.
pub fn line_similarity(a: &str, b: &str, marker: &str) -> f64 {
    similarity_of(
        &line_vector(a, marker),
        &line_vector(b, marker),
        strip_annotation(a, marker).trim().is_empty(),
        strip_annotation(b, marker).trim().is_empty(),
    )
}

struct PreparedLine {
    vector: SparseVector,
    blank: bool,
}

impl PreparedLine {
    fn new(line: &str, marker: &str) -> Self {
        PreparedLine {
            vector: line_vector(line, marker),
            blank: strip_annotation(line, marker).trim().is_empty(),
        }
    }
}

/// Maps each marker-bearing annotated line (1-based index) to an original
/// global line.
///
/// Candidates are probed at offsets 0, +1, -1, +2, -2, ... from the same
/// index across the whole program. The first candidate whose similarity
/// exceeds `threshold` and which is neither a file header, a collapse token
/// nor already claimed is taken. Unmatched markers are left out.
pub fn align(
    annotated_lines: &[String],
    original: &FlatProgram,
    threshold: f64,
    marker: &str,
) -> BTreeMap<usize, usize> {
    let n = original.len();
    let candidates: Vec<Option<PreparedLine>> = (1..=n)
        .map(|g| {
            let text = original.line(g).expect("in range");
            (!original.is_header(g) && !is_collapse_token(text, marker))
                .then(|| PreparedLine::new(text, marker))
        })
        .collect();

    let radius = n.max(annotated_lines.len());
    let mut claimed = vec![false; n + 1];
    let mut mapping = BTreeMap::new();

    for (idx0, line) in annotated_lines.iter().enumerate() {
        if !line.contains(marker) || is_collapse_token(line, marker) {
            continue;
        }
        let i = idx0 + 1;
        let probe = PreparedLine::new(line, marker);
        let accept = |g: usize| -> bool {
            if g == 0 || g > n || claimed[g] {
                return false;
            }
            candidates[g - 1].as_ref().is_some_and(|c| {
                similarity_of(&probe.vector, &c.vector, probe.blank, c.blank) > threshold
            })
        };
        let found = (0..=radius).find_map(|d| {
            if accept(i + d) {
                return Some(i + d);
            }
            if d > 0 && d < i && accept(i - d) {
                return Some(i - d);
            }
            None
        });
        if let Some(g) = found {
            claimed[g] = true;
            mapping.insert(i, g);
        }
    }
    mapping
}

/// Content of the largest fenced code block (the first one on ties), or the
/// whole text when there is none.
pub fn unwrap_code(response: &str) -> String {
    let blocks = split_blocks(response);
    let Some(best) = blocks.iter().map(Vec::len).max() else {
        return response.to_string();
    };
    blocks
        .into_iter()
        .find(|b| b.len() == best)
        .unwrap_or_default()
        .join("\n")
}

pub(crate) fn split_blocks(response: &str) -> Vec<Vec<&str>> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in response.lines() {
        if line.trim_start().starts_with("```") {
            match current.take() {
                Some(block) => blocks.push(block),
                None => current = Some(Vec::new()),
            }
            continue;
        }
        if let Some(block) = current.as_mut() {
            block.push(line);
        }
    }
    if let Some(block) = current {
        blocks.push(block);
    }
    blocks
}

/// Reads a marker-mode response into an [`Annotation`] over `original`.
pub fn parse_annotations(
    response: &str,
    original: &FlatProgram,
    model: &str,
    round: u32,
    threshold: f64,
    marker: &str,
) -> Annotation {
    let mut ann = Annotation::empty(model, round);
    let code = unwrap_code(response);
    if code.trim().is_empty() {
        ann.warnings.push("response contains no code".to_string());
        return ann;
    }
    let lines: Vec<String> = code.lines().map(str::to_string).collect();
    let mapping = align(&lines, original, threshold, marker);
    for (idx0, line) in lines.iter().enumerate() {
        let Some(pos) = line.find(marker) else {
            continue;
        };
        let i = idx0 + 1;
        match mapping.get(&i) {
            Some(&g) => {
                let explanation = line[pos + marker.len()..].trim().to_string();
                ann.flag(g, Some(explanation));
            }
            None => {
                let msg = format!("marker on annotated line {i} matches no original line");
                log::warn!("[{model} round {round}] {msg}");
                ann.warnings.push(msg);
            }
        }
    }
    ann
}

fn integer_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+").expect("valid regex"))
}

/// Reads a line-number response: every integer in range that is not a file
/// header line is flagged, without explanation.
pub fn parse_line_numbers(response: &str, original: &FlatProgram, model: &str, round: u32) -> Annotation {
    let mut ann = Annotation::empty(model, round);
    for m in integer_pattern().find_iter(response) {
        let Ok(g) = m.as_str().parse::<usize>() else {
            continue;
        };
        if (1..=original.len()).contains(&g) && !original.is_header(g) {
            ann.flag(g, None);
        }
    }
    ann
}

/// One annotation round: build the prompt, ask the model, parse the answer.
pub fn annotate_once(
    backend: &dyn ChatModel,
    ctx: &AuxiliaryContext,
    program: &FlatProgram,
    opts: &AnnotateOptions,
    round: u32,
) -> Result<Annotation, LlmError> {
    let collapse_allowed = program.len() > opts.collapse_threshold_lines;
    let prompt = build_prompt(ctx, program, opts.mode, collapse_allowed);
    let response = backend.complete(&prompt.system, &prompt.user, &opts.params)?;
    Ok(match opts.mode {
        AnnotationMode::Marker => parse_annotations(
            &response,
            program,
            backend.name(),
            round,
            opts.similarity_threshold,
            &opts.marker,
        ),
        AnnotationMode::LineNumbers => parse_line_numbers(&response, program, backend.name(), round),
    })
}
