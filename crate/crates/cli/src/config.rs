//! TOML configuration. Flags given on the command line override it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use strata::annotator::ExtractorRegistry;
use strata::schemaboot::InduceConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryDefaults {
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Single source of randomness for clustering and the optimizer.
    pub seed: u64,
    /// Worker threads; 0 means one per logical core.
    pub jobs: usize,
    pub paths: Paths,
    pub schemaboot: InduceConfig,
    pub annotator: ExtractorRegistry,
    pub query: QueryDefaults,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 42,
            jobs: 0,
            paths: Paths::default(),
            schemaboot: InduceConfig::default(),
            annotator: ExtractorRegistry::default(),
            query: QueryDefaults::default(),
        }
    }
}

impl Config {
    /// Parse a config file. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: Config =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.corpus, &mut cfg.paths.store, &mut cfg.paths.gold, &mut cfg.paths.out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Induction settings with the global seed applied.
    pub fn induce_config(&self) -> InduceConfig {
        let mut c = self.schemaboot.clone();
        c.ga.rng_seed = self.seed;
        c
    }

    pub fn jobs(&self) -> usize {
        if self.jobs == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.jobs
        }
    }
}
