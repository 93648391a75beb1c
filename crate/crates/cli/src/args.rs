use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flame_core::annotate::AnnotationMode;
use flame_core::corpus::Language;
use flame_core::repair::Setting;
use flame_core::vote::VoteMode;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "flame", version, about = "Line-level fault localization for programming assignments")]
pub struct Cli {
    /// Run configuration (TOML or JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Directory of canned responses; every chat backend becomes a mock.
    #[arg(long, global = true, value_name = "PATH")]
    pub mock_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags that override configuration file values.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// Comma-separated backend names, in tie-break order.
    #[arg(long, global = true, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    #[arg(long, global = true)]
    pub rounds: Option<u32>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    #[arg(long, global = true)]
    pub similarity_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub vote_mode: Option<VoteModeArg>,
    #[arg(long, global = true, value_enum)]
    pub annotation_mode: Option<AnnotationModeArg>,
    /// Leave the problem statement out of the prompt.
    #[arg(long, global = true)]
    pub no_statement: bool,
    /// Leave the failing test out of the prompt.
    #[arg(long, global = true)]
    pub no_test: bool,
    /// Skip reference retrieval.
    #[arg(long, global = true)]
    pub no_reference: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VoteModeArg {
    Weighted,
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnnotationModeArg {
    Marker,
    LineNumbers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Flame,
    Ochiai,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SettingArg {
    Plain,
    Assisted,
}

impl From<SettingArg> for Setting {
    fn from(s: SettingArg) -> Self {
        match s {
            SettingArg::Plain => Setting::Plain,
            SettingArg::Assisted => Setting::Assisted,
        }
    }
}

#[derive(Debug, Args)]
pub struct Target {
    /// Problem directory.
    #[arg(long, value_name = "DIR")]
    pub problem: PathBuf,
    /// Submission source tree.
    #[arg(long, value_name = "DIR")]
    pub submission: PathBuf,
    /// Overrides the problem's meta.json.
    #[arg(long)]
    pub language: Option<Language>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rank the suspicious lines of one rejected submission.
    Localize(Target),
    /// Top-k accuracy over a manifest of faulty/fixed pairs.
    Eval {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "flame")]
        method: Method,
        /// Comma-separated k values.
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
    },
    /// Compile and run a submission against every test.
    Judge(Target),
    /// Find the most similar accepted submission in the problem's history.
    Retrieve(Target),
    /// Repair every faulty program in a manifest, with and without hints.
    Repair {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "plain,assisted")]
        settings: Vec<SettingArg>,
    },
}

impl Cli {
    /// Configuration file (or defaults) with flags applied, validated.
    pub fn resolve_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let o = &self.overrides;
        if let Some(m) = &o.models {
            cfg.models = m.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        }
        if let Some(r) = o.rounds {
            cfg.rounds = r;
        }
        if let Some(t) = o.temperature {
            cfg.temperature = t;
        }
        if let Some(t) = o.similarity_threshold {
            cfg.similarity_threshold = t;
        }
        if let Some(p) = o.parallelism {
            cfg.parallelism = p;
        }
        if let Some(v) = o.vote_mode {
            cfg.vote_mode = match v {
                VoteModeArg::Weighted => VoteMode::Weighted,
                VoteModeArg::Unweighted => VoteMode::Unweighted,
            };
        }
        if let Some(a) = o.annotation_mode {
            cfg.annotation_mode = match a {
                AnnotationModeArg::Marker => AnnotationMode::Marker,
                AnnotationModeArg::LineNumbers => AnnotationMode::LineNumbers,
            };
        }
        cfg.toggles.use_statement &= !o.no_statement;
        cfg.toggles.use_test &= !o.no_test;
        cfg.toggles.use_reference &= !o.no_reference;
        if let Some(d) = &self.mock_dir {
            cfg.mock_dir = Some(d.clone());
        }
        if let Command::Eval { ks: Some(ks), .. } = &self.command {
            cfg.ks = ks.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
