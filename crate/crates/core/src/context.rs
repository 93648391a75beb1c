//! Assignment-specific auxiliary information handed to the annotator:
//! the problem statement, one failing test (or compiler diagnostics) and an
//! optional reference program retrieved from accepted history.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{compare_test_ids, flatten, FlatProgram, Problem, Submission, Test};
use crate::judge::{JudgeReport, TestOutcome, Verdict};
use crate::llm::{cosine, Embedder, LlmError};

pub const TRUNCATION_MARKER: &str = "…[truncated]";
pub const DEFAULT_TRUNCATE_BYTES: usize = 4096;

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("submission not rejected")]
    NotRejected,
    #[error("outcome refers to unknown test {0:?}")]
    UnknownTest(String),
    #[error(transparent)]
    Embedding(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureSource {
    Test,
    Compiler,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailingTestInfo {
    pub source: FailureSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actual_output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<String>,
}

impl FailingTestInfo {
    pub fn compiler(diagnostics: &str) -> Self {
        FailingTestInfo {
            source: FailureSource::Compiler,
            test_id: None,
            input: None,
            expected_output: None,
            actual_output: None,
            verdict: None,
            diagnostics: Some(diagnostics.to_string()),
        }
    }

    fn truncated(mut self, cap: usize) -> Self {
        for field in [
            &mut self.input,
            &mut self.expected_output,
            &mut self.actual_output,
            &mut self.diagnostics,
        ] {
            if let Some(text) = field.take() {
                *field = Some(truncate_field(&text, cap));
            }
        }
        self
    }
}

/// Selection priority among failing verdicts; lower is preferred.
fn priority(v: Verdict) -> Option<u8> {
    match v {
        Verdict::WA => Some(0),
        Verdict::RE => Some(1),
        Verdict::TLE => Some(2),
        Verdict::MLE => Some(3),
        Verdict::AC | Verdict::CE => None,
    }
}

/// Picks the one failing test shown to the model: compiler diagnostics when
/// the build failed, otherwise the lowest-id test with the most preferred
/// verdict in the order WA, RE, TLE, MLE.
pub fn select_failing_test(
    report: &JudgeReport,
    tests: &[Test],
) -> Result<FailingTestInfo, ContextError> {
    let outcomes = match report {
        JudgeReport::CompileFailure { diagnostics } => {
            return Ok(FailingTestInfo::compiler(diagnostics))
        }
        JudgeReport::Tested { outcomes } => outcomes,
    };
    let chosen: &TestOutcome = outcomes
        .iter()
        .filter_map(|o| priority(o.verdict).map(|p| (p, o)))
        .min_by(|(pa, a), (pb, b)| pa.cmp(pb).then_with(|| compare_test_ids(&a.test_id, &b.test_id)))
        .map(|(_, o)| o)
        .ok_or(ContextError::NotRejected)?;
    let test = tests
        .iter()
        .find(|t| t.id == chosen.test_id)
        .ok_or_else(|| ContextError::UnknownTest(chosen.test_id.clone()))?;
    Ok(FailingTestInfo {
        source: FailureSource::Test,
        test_id: Some(test.id.clone()),
        input: Some(test.input.clone()),
        expected_output: Some(test.expected_output.clone()),
        actual_output: (chosen.verdict == Verdict::WA)
            .then(|| chosen.actual_output.clone().unwrap_or_default()),
        verdict: Some(chosen.verdict),
        diagnostics: None,
    })
}

/// Cuts `text` to at most `cap` bytes on a char boundary and appends the
/// elision marker.
pub fn truncate_field(text: &str, cap: usize) -> String {
    if text.len() <= cap {
        return text.to_string();
    }
    let mut end = cap;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}{TRUNCATION_MARKER}", &text[..end])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Retrieved<'a> {
    pub index: usize,
    pub submission: &'a Submission,
    pub similarity: f64,
}

/// Most similar pool entry to the faulty program by embedding cosine; ties
/// go to the earlier entry.
pub fn retrieve_reference<'a>(
    faulty: &FlatProgram,
    pool: &'a [Submission],
    embedder: &dyn Embedder,
) -> Result<Option<Retrieved<'a>>, ContextError> {
    if pool.is_empty() {
        return Ok(None);
    }
    let query = embedder.embed(&faulty.text())?;
    let mut best: Option<Retrieved<'a>> = None;
    for (index, candidate) in pool.iter().enumerate() {
        let v = embedder.embed(&flatten(candidate).text())?;
        let similarity = cosine(&query, &v)?;
        if best.is_none_or(|b| similarity > b.similarity) {
            best = Some(Retrieved {
                index,
                submission: candidate,
                similarity,
            });
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextToggles {
    pub use_statement: bool,
    pub use_test: bool,
    pub use_reference: bool,
}

impl Default for ContextToggles {
    fn default() -> Self {
        ContextToggles {
            use_statement: true,
            use_test: true,
            use_reference: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuxiliaryContext {
    pub statement: Option<String>,
    pub failing_test: Option<FailingTestInfo>,
    pub reference: Option<FlatProgram>,
}

/// Populates each field when its toggle is on and its source exists.
pub fn build_context(
    prob: &Problem,
    report: Option<&JudgeReport>,
    reference: Option<&Submission>,
    toggles: ContextToggles,
    truncate_bytes: usize,
) -> AuxiliaryContext {
    let statement = toggles
        .use_statement
        .then(|| prob.statement_text())
        .filter(|s| !s.is_empty());
    let failing_test = if toggles.use_test {
        report
            .and_then(|r| select_failing_test(r, &prob.tests).ok())
            .map(|f| f.truncated(truncate_bytes))
    } else {
        None
    };
    let reference = if toggles.use_reference {
        reference.map(flatten)
    } else {
        None
    };
    AuxiliaryContext {
        statement,
        failing_test,
        reference,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Language;
    use crate::llm::LocalEmbedder;

    fn outcome(id: &str, verdict: Verdict) -> TestOutcome {
        TestOutcome {
            test_id: id.into(),
            verdict,
            actual_output: matches!(verdict, Verdict::AC | Verdict::WA).then(|| format!("out{id}")),
            wall_time_ms: 1,
            peak_memory_mb: None,
            detail: None,
        }
    }

    fn tests(n: usize) -> Vec<Test> {
        (1..=n)
            .map(|i| Test {
                id: i.to_string(),
                input: format!("in{i}"),
                expected_output: format!("exp{i}"),
            })
            .collect()
    }

    fn report(vs: &[Verdict]) -> JudgeReport {
        JudgeReport::Tested {
            outcomes: vs
                .iter()
                .enumerate()
                .map(|(i, v)| outcome(&(i + 1).to_string(), *v))
                .collect(),
        }
    }

    #[test]
    fn wa_is_preferred() {
        let info = select_failing_test(&report(&[Verdict::AC, Verdict::RE, Verdict::WA]), &tests(3)).unwrap();
        assert_eq!(info.source, FailureSource::Test);
        assert_eq!(info.test_id.as_deref(), Some("3"));
        assert_eq!(info.verdict, Some(Verdict::WA));
        assert_eq!(info.actual_output.as_deref(), Some("out3"));
        assert_eq!(info.input.as_deref(), Some("in3"));
        assert_eq!(info.expected_output.as_deref(), Some("exp3"));
    }

    #[test]
    fn tle_beats_mle_and_no_actual_output() {
        let info = select_failing_test(&report(&[Verdict::TLE, Verdict::MLE]), &tests(2)).unwrap();
        assert_eq!(info.verdict, Some(Verdict::TLE));
        assert_eq!(info.test_id.as_deref(), Some("1"));
        assert_eq!(info.actual_output, None);
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let info = select_failing_test(&report(&[Verdict::AC, Verdict::RE, Verdict::RE]), &tests(3)).unwrap();
        assert_eq!(info.test_id.as_deref(), Some("2"));
    }

    #[test]
    fn compile_failure_carries_diagnostics() {
        let r = JudgeReport::CompileFailure {
            diagnostics: "main.c:3 error: expected ';'".into(),
        };
        let info = select_failing_test(&r, &tests(1)).unwrap();
        assert_eq!(info.source, FailureSource::Compiler);
        assert_eq!(info.diagnostics.as_deref(), Some("main.c:3 error: expected ';'"));
        assert_eq!(info.test_id, None);
        assert_eq!(info.verdict, None);
    }

    #[test]
    fn all_accepted_is_an_error() {
        let err = select_failing_test(&report(&[Verdict::AC, Verdict::AC]), &tests(2)).unwrap_err();
        assert_eq!(err.to_string(), "submission not rejected");
    }

    #[test]
    fn truncation_respects_cap_and_char_boundaries() {
        let big = "x".repeat(1 << 20);
        let t = truncate_field(&big, 4096);
        assert!(t.ends_with(TRUNCATION_MARKER));
        assert!(t.len() <= 4096 + TRUNCATION_MARKER.len());
        let multi = "é".repeat(10);
        let t = truncate_field(&multi, 5);
        assert_eq!(t, format!("éé{TRUNCATION_MARKER}"));
        assert_eq!(truncate_field("short", 10), "short");
    }

    fn sub(text: &str) -> Submission {
        Submission::single("main.c", text, Language::C).unwrap()
    }

    #[test]
    fn retrieval_prefers_identical_copy() {
        let faulty = sub("int main() { int total = 0; return total; }\n");
        let pool = vec![
            sub("void helper(char *buf) { puts(buf); }\n"),
            faulty.clone(),
        ];
        let emb = LocalEmbedder::default();
        let got = retrieve_reference(&flatten(&faulty), &pool, &emb).unwrap().unwrap();
        assert_eq!(got.index, 1);
        assert!((got.similarity - 1.0).abs() < 1e-12);
        assert!(retrieve_reference(&flatten(&faulty), &[], &emb).unwrap().is_none());
    }

    #[test]
    fn retrieval_ties_keep_pool_order() {
        let faulty = sub("alpha beta\n");
        let pool = vec![sub("beta alpha\n"), sub("alpha beta\n")];
        let got = retrieve_reference(&flatten(&faulty), &pool, &LocalEmbedder::default())
            .unwrap()
            .unwrap();
        assert_eq!(got.index, 0);
    }

    fn problem() -> Problem {
        Problem {
            id: "p".into(),
            description: "Add numbers.".into(),
            input_spec: "Two ints.".into(),
            output_spec: "Sum.".into(),
            samples: vec![],
            tests: tests(2),
            time_limit_ms: 1000,
            memory_limit_mb: 64,
        }
    }

    #[test]
    fn toggles_control_fields() {
        let p = problem();
        let r = report(&[Verdict::AC, Verdict::WA]);
        let reference = sub("int main(){}\n");
        let all = build_context(&p, Some(&r), Some(&reference), ContextToggles::default(), 4096);
        assert!(all.statement.is_some() && all.failing_test.is_some() && all.reference.is_some());

        let no_test = build_context(
            &p,
            Some(&r),
            Some(&reference),
            ContextToggles {
                use_test: false,
                ..Default::default()
            },
            4096,
        );
        assert!(no_test.failing_test.is_none());
        assert!(no_test.statement.is_some() && no_test.reference.is_some());

        let no_ref_source = build_context(&p, Some(&r), None, ContextToggles::default(), 4096);
        assert!(no_ref_source.reference.is_none());
    }

    #[test]
    fn context_truncates_large_test_input() {
        let mut p = problem();
        p.tests[1].input = "9".repeat(1 << 20);
        let r = report(&[Verdict::AC, Verdict::WA]);
        let ctx = build_context(&p, Some(&r), None, ContextToggles::default(), 4096);
        let input = ctx.failing_test.unwrap().input.unwrap();
        assert!(input.ends_with(TRUNCATION_MARKER));
        assert!(input.len() <= 4096 + TRUNCATION_MARKER.len());
    }
}
