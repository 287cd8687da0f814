//! Run configuration: one TOML file per run, optionally including others.
//!
//! `include = ["base.toml"]` pulls in other files (paths relative to the
//! including file). Included tables are merged key by key in order, and the
//! including file overrides them. Every file must also be valid on its own,
//! which is how errors get a file, line and key path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::downstream::{FinetuneConfig, ProbeConfig};
use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::model::ModelConfig;
use crate::preprocess::PreprocessConfig;
use crate::sqi::SqiConfig;
use crate::train::PretrainConfig;

/// Numeric precision of training loops. Only double precision is built.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Files merged underneath this one.
    #[serde(skip_serializing)]
    pub include: Vec<String>,
    /// Seeds every stage.
    pub seed: u64,
    /// Worker threads for every stage; 1 keeps runs reproducible bit for bit.
    pub threads: usize,
    pub precision: Precision,
    pub preprocess: PreprocessConfig,
    pub sqi: SqiConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub probe: ProbeConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            include: Vec::new(),
            seed: 0,
            threads: 1,
            precision: Precision::F64,
            preprocess: PreprocessConfig::default(),
            sqi: SqiConfig::default(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            probe: ProbeConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

const MAX_INCLUDE_DEPTH: usize = 16;

impl RunConfig {
    /// Loads a config file with its includes, then propagates the global
    /// seed and thread count and validates every section.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let mut stack = Vec::new();
        let table = load_table(path.as_ref(), &mut stack)?;
        let mut cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| {
            Error::Config(format!("{}: {}", path.as_ref().display(), e.message()))
        })?;
        cfg.include.clear();
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Parses a single TOML document without includes.
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let mut cfg = parse_standalone(text, Path::new("<string>"))?;
        if !cfg.include.is_empty() {
            return Err(Error::Config(
                "include is only supported when loading from a file".into(),
            ));
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Copies the global seed and threads into the sections and validates.
    pub fn resolve(&mut self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        self.pretrain.seed = self.seed;
        self.pretrain.threads = self.threads;
        self.finetune.seed = self.seed;
        self.finetune.threads = self.threads;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.sqi.validate()?;
        self.model.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.experiment.validate()?;
        if self.model.input_len != crate::SEGMENT_LEN {
            return Err(Error::Config(format!(
                "model.input_len must be {} (samples per segment channel), got {}",
                crate::SEGMENT_LEN,
                self.model.input_len
            )));
        }
        Ok(())
    }

    /// The resolved configuration as TOML.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn parse_standalone(text: &str, path: &Path) -> Result<RunConfig> {
    toml::from_str::<RunConfig>(text).map_err(|e| describe(text, path, &e))
}

/// Formats a TOML error as `file:line: key `a.b`: message`.
fn describe(text: &str, path: &Path, e: &toml::de::Error) -> Error {
    let Some(span) = e.span() else {
        return Error::Config(format!("{}: {}", path.display(), e.message()));
    };
    let line = text[..span.start.min(text.len())].matches('\n').count();
    let key = key_path(text, line);
    let key = if key.is_empty() {
        String::new()
    } else {
        format!(" key `{key}`:")
    };
    Error::Config(format!(
        "{}:{}:{key} {}",
        path.display(),
        line + 1,
        e.message()
    ))
}

/// Dotted key path of the entry on 0-based `line`: the innermost table
/// header above it joined with the key assigned on that line.
fn key_path(text: &str, line: usize) -> String {
    let lines: Vec<&str> = text.lines().collect();
    let header_of = |l: &str| {
        let t = l.trim();
        t.starts_with('[').then(|| {
            t.trim_start_matches('[')
                .split(']')
                .next()
                .unwrap_or("")
                .trim()
                .to_string()
        })
    };
    let here = lines.get(line).copied().unwrap_or("");
    if let Some(h) = header_of(here) {
        return h;
    }
    let section = lines[..line.min(lines.len())]
        .iter()
        .rev()
        .find_map(|l| header_of(l));
    let key = here.split('=').next().unwrap_or("").trim();
    let key = if here.contains('=') { key } else { "" };
    match (section, key) {
        (Some(s), "") => s,
        (Some(s), k) => format!("{s}.{k}"),
        (None, k) => k.to_string(),
    }
}

fn load_table(path: &Path, stack: &mut Vec<PathBuf>) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let canonical = path.canonicalize().map_err(|e| Error::io(path, e))?;
    if stack.contains(&canonical) {
        return Err(Error::Config(format!("{}: include cycle", path.display())));
    }
    if stack.len() >= MAX_INCLUDE_DEPTH {
        return Err(Error::Config(format!(
            "{}: includes nested too deeply",
            path.display()
        )));
    }
    let standalone = parse_standalone(&text, path)?;
    let mut own: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| describe(&text, path, &e))?;
    own.remove("include");

    stack.push(canonical);
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut merged = toml::Table::new();
    for inc in &standalone.include {
        let included = load_table(&dir.join(inc), stack)?;
        merge(&mut merged, included);
    }
    stack.pop();
    merge(&mut merged, own);
    Ok(merged)
}

/// Deep merge: tables merge recursively, anything else is replaced.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn empty_document_is_the_default() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        let mut expect = RunConfig::default();
        expect.resolve().unwrap();
        assert_eq!(cfg, expect);
    }

    #[test]
    fn includes_merge_and_override() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        write(
            dir.path(),
            "sub/base.toml",
            "seed = 3\n[pretrain]\nlr = 0.5\nepochs = 2\n",
        );
        let top = write(
            dir.path(),
            "top.toml",
            "include = [\"sub/base.toml\"]\n[pretrain]\nepochs = 7\n",
        );
        let cfg = RunConfig::load(&top).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.pretrain.lr, 0.5);
        assert_eq!(cfg.pretrain.epochs, 7);
        assert_eq!(cfg.pretrain.seed, 3);
        assert_eq!(cfg.finetune.seed, 3);
        assert_eq!(cfg.pretrain.tau_s, 0.1);
    }

    #[test]
    fn unknown_key_reports_file_line_and_key_path() {
        let dir = tempfile::tempdir().unwrap();
        let base = write(
            dir.path(),
            "base.toml",
            "seed = 1\n\n[pretrain]\nlr = 0.1\nlearning_rate = 2\n",
        );
        let top = write(dir.path(), "top.toml", "include = [\"base.toml\"]\n");
        let msg = RunConfig::load(&top).unwrap_err().to_string();
        assert!(msg.contains("base.toml:5:"), "{msg}");
        assert!(msg.contains("pretrain.learning_rate"), "{msg}");
        let _ = base;

        let bad_type = RunConfig::from_toml_str("[model]\nlayers = \"two\"\n")
            .unwrap_err()
            .to_string();
        assert!(
            bad_type.contains(":2:") && bad_type.contains("model.layers"),
            "{bad_type}"
        );
        let bad_section = RunConfig::from_toml_str("[modle]\nlayers = 2\n")
            .unwrap_err()
            .to_string();
        assert!(bad_section.contains("modle"), "{bad_section}");
    }

    #[test]
    fn section_seeds_are_not_settable() {
        assert!(RunConfig::from_toml_str("[pretrain]\nseed = 4\n").is_err());
        assert!(RunConfig::from_toml_str("[finetune]\nthreads = 4\n").is_err());
    }

    #[test]
    fn missing_file_and_cycles() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.toml");
        let msg = RunConfig::load(&missing).unwrap_err().to_string();
        assert!(msg.contains("nope.toml"), "{msg}");
        let a = write(dir.path(), "a.toml", "include = [\"b.toml\"]\n");
        write(dir.path(), "b.toml", "include = [\"a.toml\"]\n");
        assert!(RunConfig::load(&a)
            .unwrap_err()
            .to_string()
            .contains("cycle"));
    }

    #[test]
    fn semantic_errors_are_config_errors() {
        assert!(matches!(
            RunConfig::from_toml_str("[pretrain]\ntau_s = 0.0\n"),
            Err(Error::Config(_))
        ));
        assert!(RunConfig::from_toml_str("precision = \"f32\"\n").is_err());
        assert!(RunConfig::from_toml_str("threads = 0\n").is_err());
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let cfg = RunConfig::from_toml_str("seed = 9\n[model]\nwindow = 4\n").unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }
}
