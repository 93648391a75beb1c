//! Problems, submissions and the flattened single-document view of a
//! submission.
//!
//! A problem directory looks like:
//!
//! ```text
//! statement.md          # Description / Input / Output / Samples sections
//! limits.json           # {"time_limit_ms": 1000, "memory_limit_mb": 256}
//! meta.json             # {"language": "c" | "cpp" | "java"}
//! tests/<id>.in
//! tests/<id>.out
//! pairs/<student>/faulty/...
//! pairs/<student>/fixed/...
//! history/<n>/...       # accepted submissions, used as the reference pool
//! ```

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{self, DiffOp};

/// Separator line emitted before each file of a multi-file submission.
pub const FILE_HEADER_PREFIX: &str = "==== FILE: ";
pub const FILE_HEADER_SUFFIX: &str = " ====";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing statement file: {0}")]
    MissingStatement(PathBuf),
    #[error("no tests in {0}")]
    NoTests(PathBuf),
    #[error("test {id} has no matching {missing} file")]
    UnpairedTest { id: String, missing: &'static str },
    #[error("invalid limit: {0}")]
    InvalidLimit(String),
    #[error("malformed {file}: {reason}")]
    Malformed { file: PathBuf, reason: String },
    #[error("no {language} source files in {dir}")]
    EmptySubmission { dir: PathBuf, language: Language },
    #[error("invalid submission path {0:?}")]
    InvalidPath(String),
    #[error("duplicate submission path {0:?}")]
    DuplicatePath(String),
    #[error("file creation/deletion pair: {0}")]
    FileSetMismatch(String),
    #[error("line {line} is out of range 1..={len}")]
    LineOutOfRange { line: usize, len: usize },
    #[error("line {0} is a file header line")]
    HeaderLine(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    C,
    Cpp,
    Java,
}

impl Language {
    pub fn source_extensions(self) -> &'static [&'static str] {
        match self {
            Language::C => &["c", "h"],
            Language::Cpp => &["cpp", "cc", "cxx", "c++", "hpp", "hh", "hxx", "h"],
            Language::Java => &["java"],
        }
    }

    /// Extensions handed to the compiler as translation units.
    pub fn unit_extensions(self) -> &'static [&'static str] {
        match self {
            Language::C => &["c"],
            Language::Cpp => &["cpp", "cc", "cxx", "c++"],
            Language::Java => &["java"],
        }
    }

    pub fn is_source(self, path: &str) -> bool {
        has_extension(path, self.source_extensions())
    }

    pub fn is_unit(self, path: &str) -> bool {
        has_extension(path, self.unit_extensions())
    }
}

fn has_extension(path: &str, exts: &[&str]) -> bool {
    Path::new(path)
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Language::C => "c",
            Language::Cpp => "cpp",
            Language::Java => "java",
        })
    }
}

impl std::str::FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "c" => Ok(Language::C),
            "cpp" | "c++" | "cxx" => Ok(Language::Cpp),
            "java" => Ok(Language::Java),
            other => Err(format!("unknown language {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub input: String,
    pub expected_output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Test {
    pub id: String,
    pub input: String,
    pub expected_output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub time_limit_ms: u64,
    pub memory_limit_mb: u64,
}

impl Limits {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.time_limit_ms == 0 {
            return Err(CorpusError::InvalidLimit("time_limit_ms must be > 0".into()));
        }
        if self.memory_limit_mb == 0 {
            return Err(CorpusError::InvalidLimit("memory_limit_mb must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub description: String,
    pub input_spec: String,
    pub output_spec: String,
    pub samples: Vec<Sample>,
    pub tests: Vec<Test>,
    pub time_limit_ms: u64,
    pub memory_limit_mb: u64,
}

impl Problem {
    pub fn limits(&self) -> Limits {
        Limits {
            time_limit_ms: self.time_limit_ms,
            memory_limit_mb: self.memory_limit_mb,
        }
    }

    /// Renders the statement back to the markdown shape it was loaded from.
    pub fn statement_text(&self) -> String {
        let mut out = String::new();
        push_section(&mut out, "Description", &self.description);
        push_section(&mut out, "Input", &self.input_spec);
        push_section(&mut out, "Output", &self.output_spec);
        if !self.samples.is_empty() {
            out.push_str("## Samples\n\n");
            for (i, s) in self.samples.iter().enumerate() {
                out.push_str(&format!("Sample {} input:\n```\n", i + 1));
                push_block(&mut out, &s.input);
                out.push_str("```\n");
                out.push_str(&format!("Sample {} output:\n```\n", i + 1));
                push_block(&mut out, &s.expected_output);
                out.push_str("```\n");
                if let Some(note) = &s.note {
                    out.push_str(&format!("Note: {}\n", note.trim()));
                }
                out.push('\n');
            }
        }
        out.trim_end().to_string()
    }
}

fn push_section(out: &mut String, title: &str, body: &str) {
    let body = body.trim();
    if body.is_empty() {
        return;
    }
    out.push_str(&format!("## {title}\n\n{body}\n\n"));
}

fn push_block(out: &mut String, text: &str) {
    out.push_str(text);
    if !text.ends_with('\n') {
        out.push('\n');
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub files: Vec<SourceFile>,
    pub language: Language,
}

impl Submission {
    /// Builds a submission from in-memory files, normalizing line endings
    /// and sorting by path.
    pub fn new(
        files: impl IntoIterator<Item = (String, String)>,
        language: Language,
    ) -> Result<Self, CorpusError> {
        let mut files: Vec<SourceFile> = files
            .into_iter()
            .map(|(path, content)| SourceFile {
                path: path.replace('\\', "/"),
                content: normalize_newlines(&content),
            })
            .collect();
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let sub = Submission { files, language };
        sub.validate()?;
        Ok(sub)
    }

    pub fn single(path: &str, content: &str, language: Language) -> Result<Self, CorpusError> {
        Self::new([(path.to_string(), content.to_string())], language)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.files.is_empty() {
            return Err(CorpusError::EmptySubmission {
                dir: PathBuf::new(),
                language: self.language,
            });
        }
        let mut seen = HashSet::new();
        for f in &self.files {
            validate_relative(&f.path)?;
            if !seen.insert(f.path.as_str()) {
                return Err(CorpusError::DuplicatePath(f.path.clone()));
            }
        }
        Ok(())
    }

    pub fn file(&self, path: &str) -> Option<&SourceFile> {
        self.files.iter().find(|f| f.path == path)
    }

    pub fn paths(&self) -> BTreeSet<&str> {
        self.files.iter().map(|f| f.path.as_str()).collect()
    }
}

fn validate_relative(path: &str) -> Result<(), CorpusError> {
    if path.is_empty() || path.starts_with('/') {
        return Err(CorpusError::InvalidPath(path.to_string()));
    }
    for comp in Path::new(path).components() {
        match comp {
            Component::Normal(_) => {}
            _ => return Err(CorpusError::InvalidPath(path.to_string())),
        }
    }
    Ok(())
}

pub fn normalize_newlines(s: &str) -> String {
    s.replace("\r\n", "\n").replace('\r', "\n")
}

/// Splits file content into lines; a trailing newline does not start a new
/// line and the empty string has no lines.
pub fn split_lines(content: &str) -> Vec<&str> {
    if content.is_empty() {
        return Vec::new();
    }
    let body = content.strip_suffix('\n').unwrap_or(content);
    body.split('\n').collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LineOrigin {
    Header { path: String },
    Source { file: usize, local_line: usize },
}

/// A submission as one numbered document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatProgram {
    lines: Vec<String>,
    origins: Vec<LineOrigin>,
    paths: Vec<String>,
    index: HashMap<(usize, usize), usize>,
}

impl FlatProgram {
    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    /// 1-based.
    pub fn line(&self, global_line: usize) -> Option<&str> {
        global_line
            .checked_sub(1)
            .and_then(|i| self.lines.get(i))
            .map(String::as_str)
    }

    pub fn origin(&self, global_line: usize) -> Option<&LineOrigin> {
        global_line.checked_sub(1).and_then(|i| self.origins.get(i))
    }

    pub fn is_header(&self, global_line: usize) -> bool {
        matches!(self.origin(global_line), Some(LineOrigin::Header { .. }))
    }

    pub fn header_lines(&self) -> BTreeSet<usize> {
        (1..=self.len()).filter(|&g| self.is_header(g)).collect()
    }

    pub fn paths(&self) -> &[String] {
        &self.paths
    }

    pub fn unflatten_line(&self, global_line: usize) -> Result<(&str, usize), CorpusError> {
        match self.origin(global_line) {
            None => Err(CorpusError::LineOutOfRange {
                line: global_line,
                len: self.len(),
            }),
            Some(LineOrigin::Header { .. }) => Err(CorpusError::HeaderLine(global_line)),
            Some(LineOrigin::Source { file, local_line }) => {
                Ok((self.paths[*file].as_str(), *local_line))
            }
        }
    }

    pub fn global_line(&self, path: &str, local_line: usize) -> Option<usize> {
        let file = self.paths.iter().position(|p| p == path)?;
        self.index.get(&(file, local_line)).copied()
    }

    /// The document as text, one line per flattened line.
    pub fn text(&self) -> String {
        let mut out = self.lines.join("\n");
        if !out.is_empty() {
            out.push('\n');
        }
        out
    }
}

pub fn header_line(path: &str) -> String {
    format!("{FILE_HEADER_PREFIX}{path}{FILE_HEADER_SUFFIX}")
}

/// Parses a `==== FILE: <path> ====` line.
pub fn parse_header_line(line: &str) -> Option<&str> {
    line.trim()
        .strip_prefix(FILE_HEADER_PREFIX)?
        .strip_suffix(FILE_HEADER_SUFFIX)
        .map(str::trim)
        .filter(|p| !p.is_empty())
}

pub fn flatten(sub: &Submission) -> FlatProgram {
    let mut files: Vec<&SourceFile> = sub.files.iter().collect();
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let multi = files.len() > 1;

    let mut lines = Vec::new();
    let mut origins = Vec::new();
    let mut index = HashMap::new();
    let paths: Vec<String> = files.iter().map(|f| f.path.clone()).collect();

    for (fi, f) in files.iter().enumerate() {
        if multi {
            lines.push(header_line(&f.path));
            origins.push(LineOrigin::Header {
                path: f.path.clone(),
            });
        }
        for (li, text) in split_lines(&f.content).into_iter().enumerate() {
            lines.push(text.to_string());
            origins.push(LineOrigin::Source {
                file: fi,
                local_line: li + 1,
            });
            index.insert((fi, li + 1), lines.len());
        }
    }

    FlatProgram {
        lines,
        origins,
        paths,
        index,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub faulty_lines: BTreeSet<(String, usize)>,
}

impl GroundTruth {
    pub fn is_empty(&self) -> bool {
        self.faulty_lines.is_empty()
    }

    /// Faulty lines expressed as global lines of `fp`.
    pub fn global_lines(&self, fp: &FlatProgram) -> BTreeSet<usize> {
        self.faulty_lines
            .iter()
            .filter_map(|(p, l)| fp.global_line(p, *l))
            .collect()
    }
}

/// Faulty-side lines touched by the line diff between a rejected submission
/// and its accepted fix.
///
/// Lines are compared with trailing whitespace removed. Hunks that only
/// insert code are attributed to the faulty line right after the insertion
/// point, or to the last line when the insertion is at end of file.
pub fn ground_truth_lines(
    faulty: &Submission,
    fixed: &Submission,
) -> Result<GroundTruth, CorpusError> {
    let fp = faulty.paths();
    let xp = fixed.paths();
    if fp != xp {
        let only_faulty: Vec<_> = fp.difference(&xp).collect();
        let only_fixed: Vec<_> = xp.difference(&fp).collect();
        return Err(CorpusError::FileSetMismatch(format!(
            "only in faulty: {only_faulty:?}, only in fixed: {only_fixed:?}"
        )));
    }

    let mut truth = GroundTruth::default();
    for f in &faulty.files {
        let g = fixed.file(&f.path).expect("path sets are equal");
        for line in faulty_file_lines(&f.content, &g.content) {
            truth.faulty_lines.insert((f.path.clone(), line));
        }
    }
    Ok(truth)
}

fn faulty_file_lines(faulty: &str, fixed: &str) -> BTreeSet<usize> {
    let a: Vec<&str> = split_lines(faulty).into_iter().map(str::trim_end).collect();
    let b: Vec<&str> = split_lines(fixed).into_iter().map(str::trim_end).collect();
    let ops = diff::lcs_diff(&a, &b);

    let mut out = BTreeSet::new();
    // Position in `a` (0-based) of the next faulty line to be consumed.
    let mut pos = 0usize;
    let mut i = 0;
    while i < ops.len() {
        if ops[i] == DiffOp::Equal {
            pos += 1;
            i += 1;
            continue;
        }
        let mut deleted = Vec::new();
        while i < ops.len() && ops[i] != DiffOp::Equal {
            if ops[i] == DiffOp::Delete {
                deleted.push(pos + 1);
                pos += 1;
            }
            i += 1;
        }
        if deleted.is_empty() {
            if pos < a.len() {
                out.insert(pos + 1);
            } else if !a.is_empty() {
                out.insert(a.len());
            }
        } else {
            out.extend(deleted);
        }
    }
    out
}

/// Orders test ids numerically when both parse as integers, otherwise
/// lexicographically; numeric ids come first.
pub fn compare_test_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

pub fn load_problem(dir: &Path) -> Result<Problem, CorpusError> {
    let statement_path = dir.join("statement.md");
    if !statement_path.is_file() {
        return Err(CorpusError::MissingStatement(statement_path));
    }
    let statement = read_text(&statement_path)?;
    let parsed = parse_statement(&statement);

    let limits_path = dir.join("limits.json");
    let limits: Limits = serde_json::from_str(&read_text(&limits_path)?).map_err(|e| {
        CorpusError::Malformed {
            file: limits_path.clone(),
            reason: e.to_string(),
        }
    })?;
    limits.validate()?;

    let tests = load_tests(&dir.join("tests"))?;
    let id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("problem")
        .to_string();

    Ok(Problem {
        id,
        description: parsed.description,
        input_spec: parsed.input_spec,
        output_spec: parsed.output_spec,
        samples: parsed.samples,
        tests,
        time_limit_ms: limits.time_limit_ms,
        memory_limit_mb: limits.memory_limit_mb,
    })
}

#[derive(Debug, Deserialize)]
struct Meta {
    language: String,
}

/// Reads `meta.json` from a problem directory.
pub fn load_language(problem_dir: &Path) -> Result<Language, CorpusError> {
    let path = problem_dir.join("meta.json");
    let meta: Meta =
        serde_json::from_str(&read_text(&path)?).map_err(|e| CorpusError::Malformed {
            file: path.clone(),
            reason: e.to_string(),
        })?;
    meta.language.parse().map_err(|reason| CorpusError::Malformed {
        file: path,
        reason,
    })
}

fn load_tests(dir: &Path) -> Result<Vec<Test>, CorpusError> {
    if !dir.is_dir() {
        return Err(CorpusError::NoTests(dir.to_path_buf()));
    }
    let mut inputs = Vec::new();
    let mut outputs = HashSet::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        match path.extension().and_then(|e| e.to_str()) {
            Some("in") => inputs.push(stem.to_string()),
            Some("out") => {
                outputs.insert(stem.to_string());
            }
            _ => {}
        }
    }
    if inputs.is_empty() {
        return Err(CorpusError::NoTests(dir.to_path_buf()));
    }
    inputs.sort_by(|a, b| compare_test_ids(a, b));
    let mut tests = Vec::with_capacity(inputs.len());
    for id in inputs {
        if !outputs.contains(&id) {
            return Err(CorpusError::UnpairedTest { id, missing: ".out" });
        }
        tests.push(Test {
            input: read_text(&dir.join(format!("{id}.in")))?,
            expected_output: read_text(&dir.join(format!("{id}.out")))?,
            id,
        });
    }
    Ok(tests)
}

/// Loads every source file of `language` below `dir`, sorted by relative
/// path.
pub fn load_submission(dir: &Path, language: Language) -> Result<Submission, CorpusError> {
    let mut files = Vec::new();
    collect_files(dir, dir, language, &mut files)?;
    if files.is_empty() {
        return Err(CorpusError::EmptySubmission {
            dir: dir.to_path_buf(),
            language,
        });
    }
    Submission::new(files, language)
}

/// Accepted submissions under `history/<name>/`, ordered like test ids and
/// paired with their directory names. A missing `history/` gives an empty
/// pool.
pub fn load_history(problem_dir: &Path, language: Language) -> Result<Vec<(String, Submission)>, CorpusError> {
    let dir = problem_dir.join("history");
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut names: Vec<String> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort_by(|a, b| compare_test_ids(a, b));
    names
        .into_iter()
        .map(|n| {
            let sub = load_submission(&dir.join(&n), language)?;
            Ok((n, sub))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub student: String,
    pub faulty: Submission,
    pub fixed: Submission,
}

/// Loads `pairs/<student>/faulty` and `pairs/<student>/fixed`.
pub fn load_pair(problem_dir: &Path, student: &str, language: Language) -> Result<Pair, CorpusError> {
    let base = problem_dir.join("pairs").join(student);
    Ok(Pair {
        student: student.to_string(),
        faulty: load_submission(&base.join("faulty"), language)?,
        fixed: load_submission(&base.join("fixed"), language)?,
    })
}

fn collect_files(
    root: &Path,
    dir: &Path,
    language: Language,
    out: &mut Vec<(String, String)>,
) -> Result<(), CorpusError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io_err(dir))?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_files(root, &path, language, out)?;
            continue;
        }
        let rel = path
            .strip_prefix(root)
            .expect("walked below root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        if language.is_source(&rel) {
            out.push((rel, read_text(&path)?));
        }
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String, CorpusError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(normalize_newlines(&String::from_utf8_lossy(&bytes)))
}

#[derive(Debug, Default)]
struct ParsedStatement {
    description: String,
    input_spec: String,
    output_spec: String,
    samples: Vec<Sample>,
}

/// Splits `statement.md` on its top-level `# ` headings. Inside `# Samples`,
/// `## Input`, `## Output` and `## Note` subsections are read in sequence;
/// each `## Input` opens a new sample. A fenced block inside a subsection is
/// taken verbatim, otherwise the trimmed text is used.
fn parse_statement(text: &str) -> ParsedStatement {
    let mut sections: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        if let Some(title) = line.strip_prefix("# ") {
            sections.push((title.trim().to_ascii_lowercase(), String::new()));
        } else if let Some((_, body)) = sections.last_mut() {
            body.push_str(line);
            body.push('\n');
        }
    }
    let mut out = ParsedStatement::default();
    for (title, body) in sections {
        match title.as_str() {
            "description" => out.description = body.trim().to_string(),
            "input" => out.input_spec = body.trim().to_string(),
            "output" => out.output_spec = body.trim().to_string(),
            "samples" => out.samples = parse_samples(&body),
            _ => {}
        }
    }
    out
}

fn parse_samples(body: &str) -> Vec<Sample> {
    let mut subsections: Vec<(String, String)> = Vec::new();
    for line in body.lines() {
        if let Some(title) = line.strip_prefix("## ") {
            subsections.push((title.trim().to_ascii_lowercase(), String::new()));
        } else if let Some((_, b)) = subsections.last_mut() {
            b.push_str(line);
            b.push('\n');
        }
    }
    let mut samples: Vec<Sample> = Vec::new();
    for (title, body) in subsections {
        let content = fenced_or_trimmed(&body);
        match title.as_str() {
            "input" => samples.push(Sample {
                input: content,
                expected_output: String::new(),
                note: None,
            }),
            "output" => {
                if let Some(s) = samples.last_mut() {
                    s.expected_output = content;
                }
            }
            "note" => {
                if let Some(s) = samples.last_mut() {
                    s.note = Some(content.trim().to_string());
                }
            }
            _ => {}
        }
    }
    samples
}

fn fenced_or_trimmed(body: &str) -> String {
    let mut inside = false;
    let mut block = String::new();
    for line in body.lines() {
        if line.trim_start().starts_with("```") {
            if inside {
                return block;
            }
            inside = true;
            continue;
        }
        if inside {
            block.push_str(line);
            block.push('\n');
        }
    }
    if inside {
        return block;
    }
    body.trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_files() -> Submission {
        Submission::new(
            [
                ("b.c".to_string(), "b1\nb2\n".to_string()),
                ("a.c".to_string(), "a1\na2\n".to_string()),
            ],
            Language::C,
        )
        .unwrap()
    }

    #[test]
    fn single_file_flattens_to_identity() {
        let sub = Submission::single("main.c", "x\ny\nz\n", Language::C).unwrap();
        let fp = flatten(&sub);
        assert_eq!(fp.len(), 3);
        assert!(fp.header_lines().is_empty());
        for g in 1..=3 {
            assert_eq!(fp.unflatten_line(g).unwrap(), ("main.c", g));
        }
        assert_eq!(fp.unflatten_line(5).unwrap_err().to_string(), "line 5 is out of range 1..=3");
    }

    #[test]
    fn two_files_get_headers_in_path_order() {
        let fp = flatten(&two_files());
        assert_eq!(
            fp.lines(),
            &[
                "==== FILE: a.c ====",
                "a1",
                "a2",
                "==== FILE: b.c ====",
                "b1",
                "b2"
            ]
        );
        assert_eq!(fp.unflatten_line(2).unwrap(), ("a.c", 1));
        assert_eq!(fp.unflatten_line(5).unwrap(), ("b.c", 1));
        assert!(matches!(fp.unflatten_line(1), Err(CorpusError::HeaderLine(1))));
        assert!(matches!(fp.unflatten_line(4), Err(CorpusError::HeaderLine(4))));
        assert_eq!(fp.header_lines(), BTreeSet::from([1, 4]));
    }

    #[test]
    fn empty_file_header_is_followed_by_next_header() {
        let sub = Submission::new(
            [
                ("a.c".to_string(), String::new()),
                ("b.c".to_string(), "x\n".to_string()),
            ],
            Language::C,
        )
        .unwrap();
        let fp = flatten(&sub);
        assert_eq!(fp.lines(), &["==== FILE: a.c ====", "==== FILE: b.c ====", "x"]);
        assert_eq!(fp.unflatten_line(3).unwrap(), ("b.c", 1));
    }

    #[test]
    fn header_round_trip() {
        assert_eq!(parse_header_line(&header_line("src/x.cpp")), Some("src/x.cpp"));
        assert_eq!(parse_header_line("int main() {"), None);
    }

    #[test]
    fn submission_rejects_bad_paths() {
        for bad in ["/abs.c", "../up.c", "a/../../b.c", ""] {
            assert!(
                Submission::single(bad, "x", Language::C).is_err(),
                "{bad:?} should be rejected"
            );
        }
        let dup = Submission::new(
            [("a.c".into(), "".into()), ("a.c".into(), "".into())],
            Language::C,
        );
        assert!(matches!(dup, Err(CorpusError::DuplicatePath(_))));
    }

    #[test]
    fn crlf_is_normalized() {
        let sub = Submission::single("m.c", "a\r\nb\r\n", Language::C).unwrap();
        assert_eq!(sub.files[0].content, "a\nb\n");
    }

    fn gt(faulty: &str, fixed: &str) -> Vec<usize> {
        let a = Submission::single("f.c", faulty, Language::C).unwrap();
        let b = Submission::single("f.c", fixed, Language::C).unwrap();
        ground_truth_lines(&a, &b)
            .unwrap()
            .faulty_lines
            .into_iter()
            .map(|(_, l)| l)
            .collect()
    }

    #[test]
    fn ground_truth_modified_line() {
        assert_eq!(gt("a\nb\nc", "a\nB\nc"), vec![2]);
    }

    #[test]
    fn ground_truth_deleted_line() {
        assert_eq!(gt("a\nx\nb", "a\nb"), vec![2]);
    }

    #[test]
    fn ground_truth_insertion_marks_following_line() {
        assert_eq!(gt("a\nc", "a\nb\nc"), vec![2]);
    }

    #[test]
    fn ground_truth_insertion_at_end_marks_last_line() {
        assert_eq!(gt("a\nb", "a\nb\nc"), vec![2]);
        assert_eq!(gt("a\nb\n", "a\nb\nc\nd\n"), vec![2]);
    }

    #[test]
    fn ground_truth_ignores_trailing_whitespace() {
        assert!(gt("a  \nb\t\n", "a\nb\n").is_empty());
    }

    #[test]
    fn ground_truth_rejects_file_set_change() {
        let a = Submission::single("a.c", "x", Language::C).unwrap();
        let b = Submission::single("b.c", "x", Language::C).unwrap();
        let err = ground_truth_lines(&a, &b).unwrap_err();
        assert!(err.to_string().contains("file creation/deletion pair"));
    }

    #[test]
    fn test_id_order_is_numeric_aware() {
        let mut ids = vec!["10", "2", "b", "1", "a"];
        ids.sort_by(|a, b| compare_test_ids(a, b));
        assert_eq!(ids, vec!["1", "2", "10", "a", "b"]);
    }

    #[test]
    fn statement_sections_and_samples() {
        let text = "# Description\nSum two numbers.\n\n# Input\nTwo ints.\n# Output\nTheir sum.\n# Samples\n## Input\n```\n1 2\n```\n## Output\n```\n3\n```\n## Note\n1+2=3\n## Input\n5 5\n## Output\n10\n";
        let p = parse_statement(text);
        assert_eq!(p.description, "Sum two numbers.");
        assert_eq!(p.input_spec, "Two ints.");
        assert_eq!(p.output_spec, "Their sum.");
        assert_eq!(p.samples.len(), 2);
        assert_eq!(p.samples[0].input, "1 2\n");
        assert_eq!(p.samples[0].expected_output, "3\n");
        assert_eq!(p.samples[0].note.as_deref(), Some("1+2=3"));
        assert_eq!(p.samples[1].input, "5 5");
        assert_eq!(p.samples[1].note, None);
    }
}
