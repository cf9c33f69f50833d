//! Declarative run configuration: a TOML file merged under command-line flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::Deserialize;

use reident_core::synth::SynthConfig;
use reident_core::{FieldSet, MatchConfig};

/// Marks errors caused by how the tool was invoked rather than by the data (exit 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// Aligned text for people.
    #[default]
    Table,
    /// JSON with sorted keys.
    Machine,
}

/// Contents of a `--config` / `REIDENT_CONFIG` file. Relative paths are taken relative
/// to the file's directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub hospital: Option<PathBuf>,
    pub external: Option<PathBuf>,
    pub public_records: Option<PathBuf>,
    pub incident_map: Option<PathBuf>,
    pub hospital_dictionary: Option<PathBuf>,
    pub hospital_groups: Option<PathBuf>,
    pub sensitive: Option<PathBuf>,
    pub population: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub droppable: Option<FieldSet>,
    pub max_drop: Option<u8>,
    pub slack_days: Option<u32>,
    pub format: Option<Format>,
    pub threads: Option<usize>,
    pub qi: Option<String>,
    pub synth: Option<SynthConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| usage(format!("invalid config file {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.hospital,
            &mut cfg.external,
            &mut cfg.public_records,
            &mut cfg.incident_map,
            &mut cfg.hospital_dictionary,
            &mut cfg.hospital_groups,
            &mut cfg.sensitive,
            &mut cfg.population,
            &mut cfg.out,
        ] {
            if let Some(rel) = p.as_ref().filter(|p| p.is_relative()) {
                *p = Some(base.join(rel));
            }
        }
        Ok(cfg)
    }
}

/// Flag value if given, else the config-file value.
pub fn pick<T>(flag: Option<T>, file: &Option<T>) -> Option<T>
where
    T: Clone,
{
    flag.or_else(|| file.clone())
}

/// Like [`pick`] for an input path, which must then exist.
pub fn input_path(flag: Option<PathBuf>, file: &Option<PathBuf>, what: &str) -> Result<Option<PathBuf>> {
    match pick(flag, file) {
        Some(p) if !p.is_file() => Err(usage(format!("{what} file {} does not exist", p.display()))),
        other => Ok(other),
    }
}

pub fn required_input(flag: Option<PathBuf>, file: &Option<PathBuf>, what: &str, option: &str) -> Result<PathBuf> {
    input_path(flag, file, what)?.ok_or_else(|| {
        usage(format!(
            "no {what} file given; pass {option} or set it in the config file"
        ))
    })
}

pub fn matching(
    droppable: Option<FieldSet>,
    max_drop: Option<u8>,
    slack_days: Option<u32>,
    file: &FileConfig,
) -> Result<MatchConfig> {
    let defaults = MatchConfig::default();
    let cfg = MatchConfig {
        droppable: pick(droppable, &file.droppable).unwrap_or(defaults.droppable),
        max_drop: pick(max_drop, &file.max_drop).unwrap_or(defaults.max_drop),
        slack_days: pick(slack_days, &file.slack_days).unwrap_or(defaults.slack_days),
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

pub fn read(path: &Path) -> Result<fs::File> {
    fs::File::open(path).with_context(|| format!("opening {}", path.display()))
}
