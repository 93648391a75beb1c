//! Spectrum-based fault localization baseline.
//!
//! ```text
//! ochiai = ef / sqrt((ef + nf) * (ef + ep))
//! ```
//!
//! `ef`/`ep`: failing/passing tests that execute the line, `nf`/`np`:
//! failing/passing tests that do not. Coverage comes from the host
//! compiler's `--coverage` instrumentation and `gcov`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{flatten, Language, Problem, Submission};
use crate::judge::{run_test, write_sources, Artifact, JudgeError, Verdict};
use crate::vote::{rank, SuspiciousnessRanking};

#[derive(Debug, Error)]
pub enum SbflError {
    #[error("coverage matrix has no tests")]
    NoTests,
    #[error("test {test}: covered line {line} outside 1..={n}")]
    LineOutOfRange { test: String, line: usize, n: usize },
    #[error("coverage instrumentation unavailable: {0}")]
    Environment(String),
    #[error("program does not compile; coverage impossible:\n{0}")]
    CompileFailed(String),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error("workdir: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpectrumCounts {
    pub ef: u32,
    pub ep: u32,
    pub nf: u32,
    pub np: u32,
}

pub trait SuspiciousnessFormula {
    fn score(&self, c: &SpectrumCounts) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Ochiai;

impl SuspiciousnessFormula for Ochiai {
    fn score(&self, c: &SpectrumCounts) -> f64 {
        ochiai(c)
    }
}

/// Zero when the line is never executed by a failing test or the
/// denominator vanishes.
pub fn ochiai(c: &SpectrumCounts) -> f64 {
    if c.ef == 0 {
        return 0.0;
    }
    let denom = (f64::from(c.ef + c.nf) * f64::from(c.ef + c.ep)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        f64::from(c.ef) / denom
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub test_id: String,
    pub passed: bool,
    pub covered: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageMatrix {
    pub n: usize,
    pub tests: Vec<CoverageRow>,
}

impl CoverageMatrix {
    pub fn validate(&self) -> Result<(), SbflError> {
        if self.tests.is_empty() {
            return Err(SbflError::NoTests);
        }
        for row in &self.tests {
            if let Some(&line) = row.covered.iter().find(|&&l| l == 0 || l > self.n) {
                return Err(SbflError::LineOutOfRange {
                    test: row.test_id.clone(),
                    line,
                    n: self.n,
                });
            }
        }
        Ok(())
    }

    pub fn counts(&self, line: usize) -> SpectrumCounts {
        let mut c = SpectrumCounts::default();
        for row in &self.tests {
            match (row.passed, row.covered.contains(&line)) {
                (false, true) => c.ef += 1,
                (false, false) => c.nf += 1,
                (true, true) => c.ep += 1,
                (true, false) => c.np += 1,
            }
        }
        c
    }
}

pub fn rank_from_coverage(m: &CoverageMatrix) -> Result<SuspiciousnessRanking, SbflError> {
    rank_with(m, &Ochiai)
}

/// Scores every line with `formula`; lines no test executes score 0 and
/// stay in the order.
pub fn rank_with(m: &CoverageMatrix, formula: &dyn SuspiciousnessFormula) -> Result<SuspiciousnessRanking, SbflError> {
    m.validate()?;
    let scores: BTreeMap<usize, f64> = (1..=m.n)
        .map(|l| (l, formula.score(&m.counts(l))))
        .filter(|(_, s)| *s > 0.0)
        .collect();
    let order = rank(&scores, m.n).expect("lines in range");
    Ok(SuspiciousnessRanking {
        n: m.n,
        scores,
        order,
        explanations: BTreeMap::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverageToolchain {
    pub c_compiler: String,
    pub cpp_compiler: String,
    pub c_flags: Vec<String>,
    pub cpp_flags: Vec<String>,
    pub gcov: String,
}

impl Default for CoverageToolchain {
    fn default() -> Self {
        CoverageToolchain {
            c_compiler: "cc".into(),
            cpp_compiler: "c++".into(),
            c_flags: vec![],
            cpp_flags: vec!["-std=c++17".into()],
            gcov: "gcov".into(),
        }
    }
}

fn run_tool(cmd: &mut Command, what: &str) -> Result<std::process::Output, SbflError> {
    cmd.stdin(Stdio::null())
        .output()
        .map_err(|e| SbflError::Environment(format!("{what}: {e}")))
}

/// Builds an instrumented binary, runs every test and records which global
/// lines of the flattened submission each test executed. Tests that crash
/// keep whatever coverage was flushed before the crash.
pub fn collect_coverage(
    sub: &Submission,
    prob: &Problem,
    workdir: &Path,
    tools: &CoverageToolchain,
) -> Result<CoverageMatrix, SbflError> {
    let (compiler, flags) = match sub.language {
        Language::C => (&tools.c_compiler, &tools.c_flags),
        Language::Cpp => (&tools.cpp_compiler, &tools.cpp_flags),
        Language::Java => {
            return Err(SbflError::Environment(
                "no line-coverage instrumentation configured for java".into(),
            ))
        }
    };
    let units = write_sources(sub, workdir)?;
    let obj = workdir.join("obj");
    fs::create_dir_all(&obj)?;

    let mut objects = Vec::new();
    for (i, unit) in units.iter().enumerate() {
        let o = format!("obj/{i}.o");
        let out = run_tool(
            Command::new(compiler)
                .args(flags)
                .args(["--coverage", "-O0", "-c", unit, "-o", &o])
                .current_dir(workdir),
            compiler,
        )?;
        if !out.status.success() {
            return Err(SbflError::CompileFailed(String::from_utf8_lossy(&out.stderr).into_owned()));
        }
        objects.push(o);
    }
    let out = run_tool(
        Command::new(compiler)
            .arg("--coverage")
            .args(&objects)
            .args(["-o", "main"])
            .current_dir(workdir),
        compiler,
    )?;
    if !out.status.success() {
        return Err(SbflError::CompileFailed(String::from_utf8_lossy(&out.stderr).into_owned()));
    }
    let artifact = Artifact {
        workdir: workdir.to_path_buf(),
        command: vec!["./main".into()],
        limit_address_space: true,
    };

    let fp = flatten(sub);
    let mut rows = Vec::with_capacity(prob.tests.len());
    for test in &prob.tests {
        clear_gcda(&obj)?;
        let outcome = run_test(&artifact, test, prob.limits())?;
        let mut covered = BTreeSet::new();
        for (i, unit) in units.iter().enumerate() {
            let out = run_tool(
                Command::new(&tools.gcov)
                    .args(["-t", "-o", &format!("obj/{i}.o"), unit])
                    .current_dir(workdir)
                    .stderr(Stdio::null()),
                &tools.gcov,
            )?;
            for (path, line) in parse_gcov_text(&String::from_utf8_lossy(&out.stdout)) {
                let Some(rel) = path.strip_prefix("src/") else {
                    continue;
                };
                if let Some(g) = fp.global_line(rel, line) {
                    covered.insert(g);
                }
            }
        }
        rows.push(CoverageRow {
            test_id: test.id.clone(),
            passed: outcome.verdict == Verdict::AC,
            covered,
        });
    }
    Ok(CoverageMatrix {
        n: fp.len(),
        tests: rows,
    })
}

fn clear_gcda(obj: &Path) -> io::Result<()> {
    for entry in fs::read_dir(obj)? {
        let p = entry?.path();
        if p.extension().and_then(|e| e.to_str()) == Some("gcda") {
            fs::remove_file(p)?;
        }
    }
    Ok(())
}

/// Executed `(source path, line)` pairs from `gcov -t` output. Counts may
/// carry a `*` suffix; `-`, `#####` and `=====` mean not executed.
pub fn parse_gcov_text(text: &str) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    let mut source: Option<String> = None;
    for line in text.lines() {
        let mut parts = line.splitn(3, ':');
        let (Some(count), Some(lineno), Some(rest)) = (parts.next(), parts.next(), parts.next()) else {
            continue;
        };
        let Ok(lineno) = lineno.trim().parse::<usize>() else {
            continue;
        };
        if lineno == 0 {
            if let Some(s) = rest.strip_prefix("Source:") {
                source = Some(s.trim().to_string());
            }
            continue;
        }
        let Some(src) = &source else { continue };
        let count = count.trim().trim_end_matches('*');
        if count.parse::<u64>().is_ok_and(|c| c > 0) {
            out.push((src.clone(), lineno));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(ef: u32, ep: u32, nf: u32, np: u32) -> SpectrumCounts {
        SpectrumCounts { ef, ep, nf, np }
    }

    #[test]
    fn ochiai_examples() {
        assert_eq!(ochiai(&c(1, 0, 0, 5)), 1.0);
        assert_eq!(ochiai(&c(0, 3, 2, 1)), 0.0);
        assert_eq!(ochiai(&c(1, 1, 1, 0)), 0.5);
    }

    #[test]
    fn ochiai_monotonicity() {
        for ep in 0..5 {
            for nf in 0..5 {
                for ef in 0..5 {
                    assert!(ochiai(&c(ef, ep, nf, 0)) <= ochiai(&c(ef + 1, ep, nf, 0)) + 1e-15);
                    assert!(ochiai(&c(ef, ep + 1, nf, 0)) <= ochiai(&c(ef, ep, nf, 0)) + 1e-15);
                    let s = ochiai(&c(ef, ep, nf, 0));
                    assert!((0.0..=1.0).contains(&s));
                }
            }
        }
    }

    fn row(id: &str, passed: bool, lines: &[usize]) -> CoverageRow {
        CoverageRow {
            test_id: id.into(),
            passed,
            covered: lines.iter().copied().collect(),
        }
    }

    #[test]
    fn small_matrix_ranking() {
        let m = CoverageMatrix {
            n: 3,
            tests: vec![row("1", false, &[2]), row("2", true, &[1, 2])],
        };
        let r = rank_from_coverage(&m).unwrap();
        assert_eq!(r.order, vec![2, 1, 3]);
        assert!((r.score(2) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(r.score(1), 0.0);
        assert!(r.explanations.is_empty());
    }

    #[test]
    fn all_passing_or_no_coverage_gives_identity() {
        let m = CoverageMatrix {
            n: 4,
            tests: vec![row("1", true, &[1, 3]), row("2", true, &[4])],
        };
        assert_eq!(rank_from_coverage(&m).unwrap().order, vec![1, 2, 3, 4]);
        let m = CoverageMatrix {
            n: 3,
            tests: vec![row("1", false, &[])],
        };
        assert_eq!(rank_from_coverage(&m).unwrap().order, vec![1, 2, 3]);
    }

    #[test]
    fn matrix_validation() {
        let empty = CoverageMatrix { n: 3, tests: vec![] };
        assert!(matches!(rank_from_coverage(&empty), Err(SbflError::NoTests)));
        let bad = CoverageMatrix {
            n: 3,
            tests: vec![row("1", false, &[4])],
        };
        assert!(matches!(rank_from_coverage(&bad), Err(SbflError::LineOutOfRange { .. })));
    }

    #[test]
    fn counts_are_consistent() {
        let m = CoverageMatrix {
            n: 2,
            tests: vec![row("1", false, &[1]), row("2", false, &[]), row("3", true, &[1, 2])],
        };
        let k = m.counts(1);
        assert_eq!(k, c(1, 1, 1, 0));
        assert_eq!(k.ef + k.nf, 2);
        assert_eq!(k.ep + k.np, 1);
    }

    #[test]
    fn gcov_text_parsing() {
        let text = "        -:    0:Source:src/main.c\n        -:    1:#include <stdio.h>\n       1*:    3:int main(){\n        4:    4: x++;\n    #####:    5: else y;\n    =====:    6: z;\n        -:    0:Source:src/util.h\n        2:    1:int f(){\n";
        assert_eq!(
            parse_gcov_text(text),
            vec![
                ("src/main.c".to_string(), 3),
                ("src/main.c".to_string(), 4),
                ("src/util.h".to_string(), 1)
            ]
        );
    }
}
