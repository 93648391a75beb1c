//! Compile a submission and run it against a problem's tests.
//!
//! Isolation is process-level only: each run gets its own process, a
//! wall-clock deadline and an address-space cap. Peak memory comes from the
//! kernel's resident-set accounting for the reaped child; if the address
//! space cap makes an allocation fail first, the program usually crashes and
//! the outcome is RE rather than MLE.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Language, Limits, Problem, Submission, Test};

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("toolchain unavailable for {language}: `{command}` ({source})")]
    ToolchainMissing {
        language: Language,
        command: String,
        #[source]
        source: io::Error,
    },
    #[error("failed to start {program}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: io::Error,
    },
    #[error("workdir {path}: {source}")]
    Workdir {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("empty command configured for {0}")]
    EmptyCommand(Language),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    AC,
    WA,
    RE,
    TLE,
    MLE,
    CE,
}

impl Verdict {
    pub fn is_accepted(self) -> bool {
        self == Verdict::AC
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

/// How to build and launch programs of one language. Source paths are
/// appended to `compile`; both commands run inside the workdir.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageCommands {
    pub compile: Vec<String>,
    pub run: Vec<String>,
    /// Apply the address-space cap to runs. The JVM reserves far more
    /// virtual memory than it touches, so this is off for Java.
    #[serde(default = "default_true")]
    pub limit_address_space: bool,
}

fn default_true() -> bool {
    true
}

fn argv(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Toolchain {
    pub c: LanguageCommands,
    pub cpp: LanguageCommands,
    pub java: LanguageCommands,
}

impl Default for Toolchain {
    fn default() -> Self {
        Toolchain {
            c: LanguageCommands {
                compile: argv(&["cc", "-O2", "-o", "main"]),
                run: argv(&["./main"]),
                limit_address_space: true,
            },
            cpp: LanguageCommands {
                compile: argv(&["c++", "-O2", "-std=c++17", "-o", "main"]),
                run: argv(&["./main"]),
                limit_address_space: true,
            },
            java: LanguageCommands {
                compile: argv(&["javac", "-encoding", "UTF-8", "-d", "classes"]),
                run: argv(&["java", "-cp", "classes", "Main"]),
                limit_address_space: false,
            },
        }
    }
}

impl Toolchain {
    pub fn commands(&self, language: Language) -> &LanguageCommands {
        match language {
            Language::C => &self.c,
            Language::Cpp => &self.cpp,
            Language::Java => &self.java,
        }
    }
}

/// Something runnable produced by a successful compile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub workdir: PathBuf,
    pub command: Vec<String>,
    pub limit_address_space: bool,
}

impl Artifact {
    /// Path of the launched program, resolved against the workdir when
    /// relative.
    pub fn program_path(&self) -> PathBuf {
        let p = Path::new(&self.command[0]);
        if self.command[0].contains('/') && p.is_relative() {
            self.workdir.join(p)
        } else {
            p.to_path_buf()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileResult {
    pub success: bool,
    pub diagnostics: String,
    pub artifact: Option<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub test_id: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actual_output: Option<String>,
    pub wall_time_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_memory_mb: Option<u64>,
    /// Exit status or signal for RE outcomes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JudgeReport {
    CompileFailure { diagnostics: String },
    Tested { outcomes: Vec<TestOutcome> },
}

impl JudgeReport {
    pub fn outcomes(&self) -> &[TestOutcome] {
        match self {
            JudgeReport::CompileFailure { .. } => &[],
            JudgeReport::Tested { outcomes } => outcomes,
        }
    }

    pub fn compiled(&self) -> bool {
        matches!(self, JudgeReport::Tested { .. })
    }

    pub fn passed(&self) -> usize {
        self.outcomes()
            .iter()
            .filter(|o| o.verdict.is_accepted())
            .count()
    }

    pub fn accepted(&self) -> bool {
        match self {
            JudgeReport::CompileFailure { .. } => false,
            JudgeReport::Tested { outcomes } => outcomes.iter().all(|o| o.verdict.is_accepted()),
        }
    }
}

/// Online-judge output comparison: trailing whitespace on each line and
/// trailing blank lines are ignored.
pub fn compare_output(actual: &str, expected: &str) -> bool {
    fn canon(s: &str) -> Vec<&str> {
        let mut lines: Vec<&str> = s.lines().map(str::trim_end).collect();
        while lines.last().is_some_and(|l| l.is_empty()) {
            lines.pop();
        }
        lines
    }
    canon(actual) == canon(expected)
}

#[derive(Debug, Clone, Default)]
pub struct Judge {
    pub toolchain: Toolchain,
}

impl Judge {
    pub fn new(toolchain: Toolchain) -> Self {
        Judge { toolchain }
    }

    pub fn compile(&self, sub: &Submission, workdir: &Path) -> Result<CompileResult, JudgeError> {
        let cmds = self.toolchain.commands(sub.language);
        if cmds.compile.is_empty() || cmds.run.is_empty() {
            return Err(JudgeError::EmptyCommand(sub.language));
        }
        let units = write_sources(sub, workdir)?;

        let mut cmd = Command::new(&cmds.compile[0]);
        cmd.args(&cmds.compile[1..])
            .args(&units)
            .current_dir(workdir)
            .stdin(Stdio::null());
        let output = cmd.output().map_err(|source| JudgeError::ToolchainMissing {
            language: sub.language,
            command: cmds.compile[0].clone(),
            source,
        })?;

        let mut diagnostics = String::from_utf8_lossy(&output.stderr).into_owned();
        diagnostics.push_str(&String::from_utf8_lossy(&output.stdout));
        if !output.status.success() {
            if diagnostics.trim().is_empty() {
                diagnostics = format!("compiler exited with {}", output.status);
            }
            return Ok(CompileResult {
                success: false,
                diagnostics,
                artifact: None,
            });
        }
        Ok(CompileResult {
            success: true,
            diagnostics,
            artifact: Some(Artifact {
                workdir: workdir.to_path_buf(),
                command: cmds.run.clone(),
                limit_address_space: cmds.limit_address_space,
            }),
        })
    }

    pub fn judge_all(
        &self,
        sub: &Submission,
        prob: &Problem,
        workdir: &Path,
    ) -> Result<JudgeReport, JudgeError> {
        let compiled = self.compile(sub, workdir)?;
        let Some(artifact) = compiled.artifact else {
            return Ok(JudgeReport::CompileFailure {
                diagnostics: compiled.diagnostics,
            });
        };
        let outcomes = prob
            .tests
            .iter()
            .map(|t| run_test(&artifact, t, prob.limits()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(JudgeReport::Tested { outcomes })
    }
}

/// Writes the submission below `workdir/src` and returns the translation
/// units relative to `workdir`.
pub(crate) fn write_sources(sub: &Submission, workdir: &Path) -> Result<Vec<String>, JudgeError> {
    let wd_err = |source| JudgeError::Workdir {
        path: workdir.to_path_buf(),
        source,
    };
    let src = workdir.join("src");
    fs::create_dir_all(&src).map_err(wd_err)?;
    let mut units = Vec::new();
    for f in &sub.files {
        let dest = src.join(&f.path);
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent).map_err(wd_err)?;
        }
        fs::write(&dest, &f.content).map_err(wd_err)?;
        if sub.language.is_unit(&f.path) {
            units.push(format!("src/{}", f.path));
        }
    }
    Ok(units)
}

const POLL_INTERVAL: Duration = Duration::from_millis(2);
const OUTPUT_CAP: usize = 64 << 20;

/// Runs one test. Verdict precedence: TLE, then MLE, then RE (non-zero exit
/// or signal), then output comparison.
pub fn run_test(artifact: &Artifact, test: &Test, limits: Limits) -> Result<TestOutcome, JudgeError> {
    let mut cmd = Command::new(artifact.program_path());
    cmd.args(&artifact.command[1..])
        .current_dir(&artifact.workdir)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null());
    #[cfg(unix)]
    if artifact.limit_address_space {
        sys::limit_address_space(&mut cmd, limits.memory_limit_mb);
    }

    let started = Instant::now();
    let mut child = cmd.spawn().map_err(|source| JudgeError::Spawn {
        program: artifact.command[0].clone(),
        source,
    })?;

    let mut stdin = child.stdin.take().expect("piped stdin");
    let input = test.input.clone().into_bytes();
    let feeder = thread::spawn(move || {
        // The program may exit without reading its input.
        let _ = stdin.write_all(&input);
    });
    let mut stdout = child.stdout.take().expect("piped stdout");
    let reader = thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match stdout.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    if kept.len() < OUTPUT_CAP {
                        kept.extend_from_slice(&buf[..n]);
                    }
                }
            }
        }
        kept
    });

    let deadline = Duration::from_millis(limits.time_limit_ms);
    let exit = sys::wait_with_deadline(&mut child, started, deadline);
    let wall_time_ms = started.elapsed().as_millis() as u64;
    let _ = feeder.join();
    let output = reader.join().unwrap_or_default();

    let peak_memory_mb = exit.peak_rss_kb.map(|kb| kb.div_ceil(1024));
    let (verdict, detail) = if exit.timed_out {
        (Verdict::TLE, None)
    } else if peak_memory_mb.is_some_and(|mb| mb > limits.memory_limit_mb) {
        (Verdict::MLE, None)
    } else if let Some(sig) = exit.signal {
        (Verdict::RE, Some(format!("killed by signal {sig}")))
    } else if exit.code != Some(0) {
        let code = exit.code.map_or("unknown".to_string(), |c| c.to_string());
        (Verdict::RE, Some(format!("exit code {code}")))
    } else {
        let actual = String::from_utf8_lossy(&output);
        if compare_output(&actual, &test.expected_output) {
            (Verdict::AC, None)
        } else {
            (Verdict::WA, None)
        }
    };

    let actual_output = matches!(verdict, Verdict::AC | Verdict::WA)
        .then(|| String::from_utf8_lossy(&output).into_owned());
    Ok(TestOutcome {
        test_id: test.id.clone(),
        verdict,
        actual_output,
        wall_time_ms,
        peak_memory_mb,
        detail,
    })
}

struct ExitInfo {
    timed_out: bool,
    code: Option<i32>,
    signal: Option<i32>,
    peak_rss_kb: Option<u64>,
}

#[cfg(unix)]
mod sys {
    use super::*;
    use std::os::unix::process::CommandExt;
    use std::process::Child;

    /// Address-space cap: twice the memory limit plus room for the runtime,
    /// so that moderate overshoot is still observable as MLE.
    pub(super) fn limit_address_space(cmd: &mut Command, memory_limit_mb: u64) {
        let bytes = (memory_limit_mb.saturating_mul(2) + 64).saturating_mul(1 << 20);
        // SAFETY: setrlimit is async-signal-safe and touches no shared state.
        unsafe {
            cmd.pre_exec(move || {
                let lim = libc::rlimit {
                    rlim_cur: bytes as libc::rlim_t,
                    rlim_max: bytes as libc::rlim_t,
                };
                if libc::setrlimit(libc::RLIMIT_AS, &lim) != 0 {
                    return Err(io::Error::last_os_error());
                }
                let no_core = libc::rlimit {
                    rlim_cur: 0,
                    rlim_max: 0,
                };
                libc::setrlimit(libc::RLIMIT_CORE, &no_core);
                Ok(())
            });
        }
    }

    /// Reaps the child with `wait4` so its own peak RSS is available. The
    /// child is killed once the deadline passes.
    pub(super) fn wait_with_deadline(child: &mut Child, started: Instant, deadline: Duration) -> ExitInfo {
        let pid = child.id() as libc::pid_t;
        let mut timed_out = false;
        loop {
            let mut status: libc::c_int = 0;
            // SAFETY: rusage is plain old data; wait4 fills it.
            let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
            let flags = if timed_out { 0 } else { libc::WNOHANG };
            // SAFETY: pid belongs to our unreaped child.
            let r = unsafe { libc::wait4(pid, &mut status, flags, &mut usage) };
            if r == pid {
                let (code, signal) = if libc::WIFEXITED(status) {
                    (Some(libc::WEXITSTATUS(status)), None)
                } else if libc::WIFSIGNALED(status) {
                    (None, Some(libc::WTERMSIG(status)))
                } else {
                    (None, None)
                };
                return ExitInfo {
                    timed_out,
                    code,
                    signal,
                    peak_rss_kb: Some(usage.ru_maxrss.max(0) as u64),
                };
            }
            if r < 0 {
                let err = io::Error::last_os_error();
                if err.kind() == io::ErrorKind::Interrupted {
                    continue;
                }
                return ExitInfo {
                    timed_out,
                    code: None,
                    signal: None,
                    peak_rss_kb: None,
                };
            }
            if !timed_out && started.elapsed() > deadline {
                let _ = child.kill();
                timed_out = true;
                continue;
            }
            thread::sleep(POLL_INTERVAL);
        }
    }
}

#[cfg(not(unix))]
mod sys {
    use super::*;
    use std::process::Child;

    pub(super) fn wait_with_deadline(child: &mut Child, started: Instant, deadline: Duration) -> ExitInfo {
        loop {
            match child.try_wait() {
                Ok(Some(status)) => {
                    return ExitInfo {
                        timed_out: false,
                        code: status.code(),
                        signal: None,
                        peak_rss_kb: None,
                    }
                }
                Ok(None) if started.elapsed() > deadline => {
                    let _ = child.kill();
                    let status = child.wait().ok();
                    return ExitInfo {
                        timed_out: true,
                        code: status.and_then(|s| s.code()),
                        signal: None,
                        peak_rss_kb: None,
                    };
                }
                Ok(None) => thread::sleep(POLL_INTERVAL),
                Err(_) => {
                    return ExitInfo {
                        timed_out: false,
                        code: None,
                        signal: None,
                        peak_rss_kb: None,
                    }
                }
            }
        }
    }
}
