use std::io;

use flame_core::context::ContextError;
use flame_core::corpus::CorpusError;
use flame_core::judge::JudgeError;
use flame_core::llm::LlmError;
use flame_core::pipeline::PipelineError;
use flame_core::sbfl::SbflError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("environment error: {0}")]
    Environment(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("output error: {0}")]
    Output(#[from] io::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Dataset(_) => 2,
            CliError::Environment(_) => 3,
            CliError::Backend(_) => 4,
            CliError::Output(_) | CliError::Internal(_) => 1,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Dataset(e.to_string())
    }
}

impl From<JudgeError> for CliError {
    fn from(e: JudgeError) -> Self {
        CliError::Environment(e.to_string())
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::MockDir { .. } => CliError::Config(e.to_string()),
            LlmError::InvalidDimension(_) | LlmError::InvalidTemperature(_) => CliError::Config(e.to_string()),
            other => CliError::Backend(other.to_string()),
        }
    }
}

impl From<ContextError> for CliError {
    fn from(e: ContextError) -> Self {
        match e {
            ContextError::Embedding(l) => l.into(),
            other => CliError::Dataset(other.to_string()),
        }
    }
}

impl From<SbflError> for CliError {
    fn from(e: SbflError) -> Self {
        match e {
            SbflError::Environment(_) | SbflError::Judge(_) | SbflError::Io(_) => CliError::Environment(e.to_string()),
            other => CliError::Dataset(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Judge(j) => j.into(),
            PipelineError::Context(c) => c.into(),
            PipelineError::Backend(l) => l.into(),
            PipelineError::NoBackends | PipelineError::NoRounds => CliError::Config(e.to_string()),
            PipelineError::Vote(v) => CliError::Internal(v.to_string()),
        }
    }
}
