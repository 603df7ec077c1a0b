use std::path::{Path, PathBuf};

use respcast::graph::Ablation;
use respcast::hgt::HgtConfig;
use respcast::llm::ClientConfig;
use respcast::persona::PersonaOptions;
use respcast::synth::SynthConfig;
use respcast::train::TrainConfig;
use respcast::zeroshot::ZeroShotOptions;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub personas: PathBuf,
    pub graph: PathBuf,
    pub embeddings: PathBuf,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub report: PathBuf,
    pub predictions: PathBuf,
    pub persona_cache: PathBuf,
    pub llm_cache: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        let run = Path::new("run");
        Self {
            data_dir: "data".into(),
            personas: run.join("personas.jsonl"),
            graph: run.join("graph.json"),
            embeddings: run.join("embeddings.bin"),
            checkpoint: run.join("model.ckpt"),
            history: run.join("history.csv"),
            report: run.join("report.json"),
            predictions: run.join("predictions.jsonl"),
            persona_cache: run.join("persona_cache.jsonl"),
            llm_cache: run.join("llm_cache.jsonl"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    /// Hashed bag of words.
    #[default]
    Hash,
    /// Seeded random vectors.
    Random,
    /// Vectors looked up in `embed.import`.
    File,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSection {
    pub provider: ProviderKind,
    pub import: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub influencers: Option<usize>,
}

/// Everything a pipeline stage may need. Loaded from TOML, then patched by
/// `--section.key=value` flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides `train.seed` and `synth.seed`; also seeds embeddings and
    /// model initialization (which otherwise use `train.seed`).
    pub seed: Option<u64>,
    pub paths: Paths,
    pub train: TrainConfig,
    pub hgt: HgtConfig,
    pub synth: SynthConfig,
    pub client: ClientConfig,
    pub ablation: Ablation,
    pub graph: GraphSection,
    pub embed: EmbedSection,
    pub persona: PersonaOptions,
    pub zeroshot: ZeroShotOptions,
}

impl RunConfig {
    /// Reads `file` (if any), applies overrides in order and validates.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?
            }
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            set_key(&mut table, key, parse_value(value))?;
        }
        let mut config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        if let Some(seed) = config.seed {
            config.train.seed = seed;
            config.synth.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn master_seed(&self) -> u64 {
        self.seed.unwrap_or(self.train.seed)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.hgt.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.synth.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.embed.provider == ProviderKind::File && self.embed.import.is_none() {
            return Err(CliError::Config("embed.provider = \"file\" needs embed.import".into()));
        }
        if self.zeroshot.k == 0 {
            return Err(CliError::Config("zeroshot.k must be positive".into()));
        }
        Ok(())
    }
}

/// Interprets an override value as a TOML literal, falling back to a bare
/// string (so `--paths.graph=out/g.json` needs no quoting).
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_key(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("malformed override key `{key}`")));
    }
    let (last, sections) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for s in sections {
        let entry = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{s}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Splits `--section.key=value` flags out of `args`; the rest go to the
/// argument parser.
pub fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        match a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            Some((k, v)) if k.contains('.') => overrides.push((k.to_string(), v.to_string())),
            _ => rest.push(a),
        }
    }
    (rest, overrides)
}

/// Fails unless every input path exists.
pub fn require(paths: &[&Path]) -> Result<(), CliError> {
    for p in paths {
        if !p.exists() {
            return Err(CliError::Config(format!("missing input {}", p.display())));
        }
    }
    Ok(())
}
