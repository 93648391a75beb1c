//! Fixture paths and the scripted models used to (re)generate the canned
//! responses under `fixtures/mocks`.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use flame_cli::args::{Command, Method, SettingArg, Target};
use flame_cli::backends::ModelProvider;
use flame_cli::commands::execute;
use flame_cli::config::RunConfig;
use flame_cli::CliError;
use flame_core::llm::{mock_digest, ChatModel, CompletionParams, Embedder, LlmError, LocalEmbedder};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn problem_dir() -> PathBuf {
    fixtures().join("maxval")
}

pub fn config_path() -> PathBuf {
    fixtures().join("flame.toml")
}

pub fn manifest_path() -> PathBuf {
    fixtures().join("manifest.json")
}

pub fn golden(rel: &str) -> PathBuf {
    fixtures().join("golden").join(rel)
}

pub fn faulty(student: &str) -> PathBuf {
    problem_dir().join("pairs").join(student).join("faulty")
}

pub fn target(student: &str) -> Target {
    Target {
        problem: problem_dir(),
        submission: faulty(student),
        language: None,
    }
}

pub fn localize_cmd() -> Command {
    Command::Localize(target("s1"))
}

pub fn eval_cmd(method: Method) -> Command {
    Command::Eval {
        manifest: manifest_path(),
        method,
        ks: None,
    }
}

pub fn repair_cmd() -> Command {
    Command::Repair {
        manifest: manifest_path(),
        settings: vec![SettingArg::Plain, SettingArg::Assisted],
    }
}

const ANNOTATE_SYSTEM: &str = "You are an experienced teaching assistant";
const REPAIR_SYSTEM: &str = "You are an experienced programmer";

fn program_in(user: &str) -> &str {
    let start = user.find("## Faulty Program").expect("program section");
    let rest = &user[start..];
    let open = rest.find("```\n").expect("opening fence") + 4;
    let body = &rest[open..];
    let close = body.find("\n```").expect("closing fence");
    &body[..close]
}

fn student_of(program: &str) -> &'static str {
    if program.contains("i < n - 1") {
        "s2"
    } else if program.contains("if (x > best)") {
        "s1"
    } else {
        "s3"
    }
}

/// Lines each model flags per student, with the explanation it gives.
fn flags(model: &str, student: &str) -> Vec<(usize, &'static str)> {
    match (student, model) {
        ("s1", "alpha") => vec![(14, "best starts at 0, so an all-negative input prints 0 instead of the maximum")],
        ("s1", "beta") => vec![
            (10, "initial value 0 is larger than every negative input"),
            (14, "the first element must always replace the initial value"),
        ],
        ("s1", "gamma") => vec![(10, "initialize best with the first element or INT_MIN")],
        ("s2", "alpha") => vec![(11, "the loop stops one element early, so the last value is never read")],
        ("s2", "beta") => vec![(11, "off-by-one: use i < n")],
        ("s2", "gamma") => vec![(16, "prints a stale maximum when the largest value comes last")],
        ("s3", "alpha") => vec![(6, "n == 0 is not handled; print `empty` before computing the maximum")],
        ("s3", "beta") => vec![(5, "the value of n is never checked"), (6, "missing the n == 0 case")],
        ("s3", "gamma") => vec![(6, "an empty list prints 0 instead of `empty`")],
        _ => Vec::new(),
    }
}

fn annotated_response(model: &str, program: &str) -> String {
    let student = student_of(program);
    let marks: BTreeMap<usize, &str> = flags(model, student).into_iter().collect();
    let mut lines = Vec::new();
    for (i, line) in program.lines().enumerate() {
        let g = i + 1;
        // One reformatted answer so alignment is exercised: a blank line and
        // a comment are inserted and indentation is halved.
        let perturb = model == "alpha" && student == "s2";
        if perturb && g == 3 {
            lines.push(String::new());
        }
        if perturb && g == 10 {
            lines.push("  // running maximum".to_string());
        }
        let mut text = if perturb { line.replace("    ", "  ") } else { line.to_string() };
        if let Some(e) = marks.get(&g) {
            text.push_str(" // @@ ");
            text.push_str(e);
        }
        lines.push(text);
    }
    format!("Here is the annotated program.\n\n```c\n{}\n```\n", lines.join("\n"))
}

fn fixed_program() -> String {
    fs::read_to_string(problem_dir().join("history/1/main.c")).unwrap()
}

fn repair_response(program: &str, assisted: bool) -> String {
    let fenced = |code: &str| format!("```c\n{}\n```\n", code.trim_end());
    match (student_of(program), assisted) {
        (_, true) | ("s1", false) => format!("Repaired program:\n\n{}", fenced(&fixed_program())),
        ("s2", false) => format!("The program looks correct to me.\n\n{}", fenced(program)),
        _ => "The loop should handle the empty case separately.".to_string(),
    }
}

/// Answers annotation and repair prompts for the toy problem and records
/// every exchange under its mock digest.
pub struct ScriptedModel {
    name: String,
    log: Arc<Mutex<BTreeMap<String, String>>>,
}

impl ChatModel for ScriptedModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, system: &str, user: &str, _params: &CompletionParams) -> Result<String, LlmError> {
        let program = program_in(user);
        let response = if system.starts_with(ANNOTATE_SYSTEM) {
            annotated_response(&self.name, program)
        } else if system.starts_with(REPAIR_SYSTEM) {
            repair_response(program, user.contains("## Suspicious Lines"))
        } else {
            panic!("unexpected system prompt: {system}");
        };
        self.log
            .lock()
            .unwrap()
            .insert(mock_digest(&self.name, system, user), response.clone());
        Ok(response)
    }
}

pub struct ScriptedProvider {
    pub log: Arc<Mutex<BTreeMap<String, String>>>,
    embedder: LocalEmbedder,
}

impl ScriptedProvider {
    pub fn new(cfg: &RunConfig) -> Self {
        ScriptedProvider {
            log: Arc::default(),
            embedder: LocalEmbedder::new(cfg.embedding.dim).unwrap(),
        }
    }
}

impl ModelProvider for ScriptedProvider {
    fn chat(&self, name: &str) -> Result<Arc<dyn ChatModel>, CliError> {
        Ok(Arc::new(ScriptedModel {
            name: name.to_string(),
            log: self.log.clone(),
        }))
    }

    fn embedder(&self) -> &dyn Embedder {
        &self.embedder
    }
}

/// Regenerates the canned responses and every golden output.
pub fn bless() {
    let mut cfg = RunConfig::load(&config_path()).unwrap();
    let mocks = cfg.mock_dir.take().unwrap();
    let provider = ScriptedProvider::new(&cfg);
    let runs = [
        ("localize", localize_cmd()),
        ("eval", eval_cmd(Method::Flame)),
        ("ochiai", eval_cmd(Method::Ochiai)),
        ("repair", repair_cmd()),
    ];
    for (dir, cmd) in runs {
        let out = golden(dir);
        let _ = fs::remove_dir_all(&out);
        let stdout = execute(&cmd, &cfg, &provider, &out).unwrap();
        fs::write(out.join("stdout.txt"), stdout).unwrap();
    }
    let _ = fs::remove_dir_all(&mocks);
    fs::create_dir_all(&mocks).unwrap();
    for (digest, response) in provider.log.lock().unwrap().iter() {
        fs::write(mocks.join(format!("{digest}.txt")), response).unwrap();
    }
}

/// Every file under `expected`, compared byte for byte with `actual`.
pub fn assert_same_tree(expected: &Path, actual: &Path) {
    let mut names: Vec<_> = fs::read_dir(expected).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty(), "no golden files in {}", expected.display());
    for name in names {
        let want = fs::read_to_string(expected.join(&name)).unwrap();
        let got = fs::read_to_string(actual.join(&name))
            .unwrap_or_else(|e| panic!("{}: {e}", actual.join(&name).display()));
        assert_eq!(got, want, "{} differs from its golden copy", name.to_string_lossy());
    }
}
