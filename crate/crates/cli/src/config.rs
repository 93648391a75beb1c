//! Run configuration: TOML or JSON file, then command-line overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use flame_core::annotate::{AnnotateOptions, AnnotationMode, DEFAULT_MARKER};
use flame_core::context::{ContextToggles, DEFAULT_TRUNCATE_BYTES};
use flame_core::judge::Toolchain;
use flame_core::llm::{CompletionParams, DEFAULT_LOCAL_DIM};
use flame_core::pipeline::LocalizeSettings;
use flame_core::repair::DEFAULT_TOP_LINES;
use flame_core::sbfl::CoverageToolchain;
use flame_core::vote::VoteMode;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub models: Vec<String>,
    pub rounds: u32,
    pub temperature: f64,
    pub max_output_tokens: Option<u32>,
    pub similarity_threshold: f64,
    pub collapse_threshold_lines: usize,
    pub parallelism: usize,
    pub truncate_bytes: usize,
    pub toggles: ContextToggles,
    pub vote_mode: VoteMode,
    pub annotation_mode: AnnotationMode,
    pub marker: String,
    pub ks: Vec<usize>,
    /// Canned responses; when set every backend is a mock.
    pub mock_dir: Option<PathBuf>,
    pub backends: BTreeMap<String, BackendConfig>,
    pub embedding: EmbeddingConfig,
    pub repair: RepairConfig,
    pub judge: Toolchain,
    pub coverage: CoverageToolchain,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            models: vec!["model-1".into(), "model-2".into(), "model-3".into()],
            rounds: 2,
            temperature: 0.1,
            max_output_tokens: None,
            similarity_threshold: 0.9,
            collapse_threshold_lines: 600,
            parallelism: 4,
            truncate_bytes: DEFAULT_TRUNCATE_BYTES,
            toggles: ContextToggles::default(),
            vote_mode: VoteMode::Weighted,
            annotation_mode: AnnotationMode::Marker,
            marker: DEFAULT_MARKER.into(),
            ks: vec![1, 3, 5, 10],
            mock_dir: None,
            backends: BTreeMap::new(),
            embedding: EmbeddingConfig::default(),
            repair: RepairConfig::default(),
            judge: Toolchain::default(),
            coverage: CoverageToolchain::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub base_url: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    #[default]
    Local,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub kind: EmbeddingKind,
    pub dim: usize,
    pub model: String,
    pub base_url: Option<String>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            kind: EmbeddingKind::Local,
            dim: DEFAULT_LOCAL_DIM,
            model: "text-embedding-3-small".into(),
            base_url: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepairConfig {
    pub model: String,
    pub top_lines: usize,
}

impl Default for RepairConfig {
    fn default() -> Self {
        RepairConfig {
            model: "repair-model".into(),
            top_lines: DEFAULT_TOP_LINES,
        }
    }
}

impl RunConfig {
    /// Reads `.json` files as JSON and anything else as TOML, falling back
    /// to JSON when TOML parsing fails on a document that looks like JSON.
    /// A relative `mock_dir` is resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        let mut cfg: RunConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            match toml::from_str(&text) {
                Ok(c) => c,
                Err(e) if text.trim_start().starts_with('{') => serde_json::from_str(&text)
                    .map_err(|je| CliError::Config(format!("{}: {e}; as JSON: {je}", path.display())))?,
                Err(e) => return Err(CliError::Config(format!("{}: {e}", path.display()))),
            }
        };
        if let Some(dir) = &cfg.mock_dir {
            if dir.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.mock_dir = Some(base.join(dir));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.rounds < 1 {
            return bad("rounds must be at least 1".into());
        }
        if self.models.is_empty() {
            return bad("models must not be empty".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = self.models.iter().find(|m| !seen.insert(m.as_str())) {
            return bad(format!("model {dup:?} listed twice"));
        }
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold <= 1.0) {
            return bad(format!("similarity_threshold {} outside (0, 1]", self.similarity_threshold));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return bad("ks must be a non-empty list of positive integers".into());
        }
        if self.marker.trim().is_empty() {
            return bad("marker must not be empty".into());
        }
        if self.embedding.kind == EmbeddingKind::Local && !self.embedding.dim.is_power_of_two() {
            return bad(format!("embedding.dim {} is not a power of two", self.embedding.dim));
        }
        Ok(())
    }

    pub fn params(&self) -> CompletionParams {
        CompletionParams {
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
        }
    }

    pub fn localize_settings(&self) -> LocalizeSettings {
        LocalizeSettings {
            rounds: self.rounds,
            annotate: AnnotateOptions {
                mode: self.annotation_mode,
                marker: self.marker.clone(),
                similarity_threshold: self.similarity_threshold,
                collapse_threshold_lines: self.collapse_threshold_lines,
                params: self.params(),
            },
            toggles: self.toggles,
            truncate_bytes: self.truncate_bytes,
            vote_mode: self.vote_mode,
            parallelism: self.parallelism,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn defaults_are_valid() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.models.len(), 3);
        assert_eq!(c.rounds, 2);
        assert_eq!(c.temperature, 0.1);
    }

    #[test]
    fn toml_and_json_are_interchangeable() {
        let dir = tempfile::tempdir().unwrap();
        let t = write(
            dir.path(),
            "c.toml",
            "models = [\"a\"]\nrounds = 3\nvote_mode = \"unweighted\"\nannotation_mode = \"LINE_NUMBERS\"\nmock_dir = \"mocks\"\n[toggles]\nuse_reference = false\n",
        );
        let j = write(
            dir.path(),
            "c.json",
            r#"{"models":["a"],"rounds":3,"vote_mode":"UNWEIGHTED","annotation_mode":"line_numbers","mock_dir":"mocks","toggles":{"use_reference":false}}"#,
        );
        let a = RunConfig::load(&t).unwrap();
        let b = RunConfig::load(&j).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.vote_mode, VoteMode::Unweighted);
        assert_eq!(a.annotation_mode, AnnotationMode::LineNumbers);
        assert!(a.toggles.use_statement && !a.toggles.use_reference);
        assert_eq!(a.mock_dir.as_deref(), Some(dir.path().join("mocks").as_path()));
    }

    #[test]
    fn json_in_a_toml_named_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.conf", r#"{"rounds": 1}"#);
        assert_eq!(RunConfig::load(&p).unwrap().rounds, 1);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut c = RunConfig {
            rounds: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.rounds = 1;
        c.models.clear();
        assert!(c.validate().is_err());
        c.models = vec!["a".into()];
        c.similarity_threshold = 0.0;
        assert!(c.validate().is_err());
        c.similarity_threshold = 1.0;
        c.validate().unwrap();
        c.similarity_threshold = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.toml", "roundz = 2\n");
        assert!(matches!(RunConfig::load(&p), Err(CliError::Config(_))));
    }
}
