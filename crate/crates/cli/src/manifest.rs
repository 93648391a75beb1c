//! Dataset manifests: `{"pairs": [{"id"?, "problem", "student"}]}` with
//! problem directories relative to the manifest file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use flame_core::corpus::{load_history, load_language, load_pair, load_problem, Language, Pair, Problem, Submission};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    #[serde(default)]
    pub id: Option<String>,
    pub problem: PathBuf,
    pub student: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub pairs: Vec<ManifestEntry>,
}

pub struct ProblemData {
    pub problem: Problem,
    pub language: Language,
    pub history: Vec<(String, Submission)>,
}

impl ProblemData {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        if !dir.is_dir() {
            return Err(CliError::Dataset(format!("problem directory {} not found", dir.display())));
        }
        let language = load_language(dir)?;
        Ok(ProblemData {
            problem: load_problem(dir)?,
            history: load_history(dir, language)?,
            language,
        })
    }

    pub fn pool(&self) -> Vec<Submission> {
        self.history.iter().map(|(_, s)| s.clone()).collect()
    }
}

pub struct LoadedPair {
    pub id: String,
    pub problem_key: PathBuf,
    pub pair: Pair,
}

/// Problems (shared between pairs) and pairs in manifest order.
pub struct Dataset {
    pub problems: BTreeMap<PathBuf, ProblemData>,
    pub pairs: Vec<LoadedPair>,
}

impl Dataset {
    pub fn problem(&self, p: &LoadedPair) -> &ProblemData {
        &self.problems[&p.problem_key]
    }
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, CliError> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| CliError::Dataset(format!("manifest {}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Dataset(format!("manifest {}: {e}", manifest_path.display())))?;
    if manifest.pairs.is_empty() {
        return Err(CliError::Dataset(format!("manifest {} lists no pairs", manifest_path.display())));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut problems = BTreeMap::new();
    let mut pairs = Vec::new();
    for entry in manifest.pairs {
        let dir = base.join(&entry.problem);
        if !problems.contains_key(&dir) {
            problems.insert(dir.clone(), ProblemData::load(&dir)?);
        }
        let language = problems[&dir].language;
        let pair = load_pair(&dir, &entry.student, language)?;
        let id = entry.id.unwrap_or_else(|| {
            let name = entry.problem.file_name().map(|n| n.to_string_lossy().into_owned());
            format!("{}/{}", name.unwrap_or_default(), entry.student)
        });
        pairs.push(LoadedPair {
            id,
            problem_key: dir,
            pair,
        });
    }
    Ok(Dataset { problems, pairs })
}
