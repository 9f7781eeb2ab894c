// Layered run configuration: compiled defaults, then a config file, then
// TGAVC_* environment variables, then command-line overrides — later
// layers win. Every layer may only touch keys that exist in the schema;
// an unknown key is rejected with its full path named. The merged result
// is written beside each subcommand's outputs as `resolved_config.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use tgavc_core::corpus::ToyCorpusConfig;
use tgavc_core::dsp::DspConfig;
use tgavc_core::error::{Error, Result};
use tgavc_core::eval::ProbeConfig;
use tgavc_core::models::ModelConfig;
use tgavc_core::training::TrainConfig;

/// Environment-variable prefix: `TGAVC_<SECTION>_<FIELD>`, for example
/// `TGAVC_TRAIN_MAX_STEPS=500`.
pub const ENV_PREFIX: &str = "TGAVC_";

/// Knobs of the synthetic verification corpus (the signal front-end is
/// the `dsp` section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub num_speakers: usize,
    pub utts_per_speaker: usize,
    pub seed: u64,
    pub min_syllables: usize,
    pub max_syllables: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            num_speakers: 4,
            utts_per_speaker: 30,
            seed: 7,
            min_syllables: 2,
            max_syllables: 4,
        }
    }
}

impl CorpusSection {
    pub fn to_toy_config(&self, dsp: &DspConfig) -> ToyCorpusConfig {
        ToyCorpusConfig {
            num_speakers: self.num_speakers,
            utts_per_speaker: self.utts_per_speaker,
            seed: self.seed,
            min_syllables: self.min_syllables,
            max_syllables: self.max_syllables,
            dsp: dsp.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_speakers == 0 || self.utts_per_speaker == 0 {
            return Err(Error::validation("corpus needs at least 1 speaker and 1 utterance"));
        }
        if self.min_syllables == 0 || self.min_syllables > self.max_syllables {
            return Err(Error::validation(
                "corpus syllable range must satisfy 1 <= min_syllables <= max_syllables",
            ));
        }
        Ok(())
    }
}

/// Everything a run can be told, as one document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dsp: DspConfig,
    pub probe: ProbeConfig,
    pub corpus: CorpusSection,
}

impl CliConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.probe.validate()?;
        self.corpus.validate()?;
        if self.dsp.n_mels < 2 || self.dsp.n_fft == 0 || self.dsp.hop == 0 {
            return Err(Error::validation("dsp needs n_mels >= 2, n_fft >= 1, hop >= 1"));
        }
        if !(self.dsp.fmin >= 0.0 && self.dsp.fmin < self.dsp.fmax) {
            return Err(Error::validation("dsp needs 0 <= fmin < fmax"));
        }
        Ok(())
    }
}

/// Parses a raw override value: valid JSON scalars keep their type,
/// anything else is a string (so `--set train.regime=tgavc` works
/// unquoted).
fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn shown(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Accumulates the config layers over the default tree and remembers
/// where each override came from, so startup can log the provenance.
pub struct ConfigBuilder {
    tree: Value,
    provenance: Vec<String>,
}

impl Default for ConfigBuilder {
    fn default() -> Self {
        ConfigBuilder::new()
    }
}

impl ConfigBuilder {
    pub fn new() -> ConfigBuilder {
        let tree = serde_json::to_value(CliConfig::default())
            .expect("default config serializes to a JSON object");
        ConfigBuilder { tree, provenance: Vec::new() }
    }

    /// Applies a TOML or JSON config file (by extension; TOML otherwise).
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().and_then(|e| e.to_str()) == Some("json");
        let overlay: Value = if is_json {
            serde_json::from_str(&text)
                .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text)
                .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?
        };
        let source = format!("file {}", path.display());
        self.merge("", &overlay, &source)
    }

    /// Applies every `TGAVC_*` variable from the process environment.
    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_env_from(std::env::vars())
    }

    pub fn apply_env_from(
        &mut self,
        vars: impl Iterator<Item = (String, String)>,
    ) -> Result<()> {
        let mut pairs: Vec<(String, String)> =
            vars.filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        pairs.sort();
        for (key, raw) in pairs {
            let rest = &key[ENV_PREFIX.len()..];
            let Some((section, field)) = rest.split_once('_') else {
                return Err(Error::validation(format!(
                    "environment variable {key} must look like {ENV_PREFIX}SECTION_FIELD"
                )));
            };
            let path =
                format!("{}.{}", section.to_ascii_lowercase(), field.to_ascii_lowercase());
            self.set_path(&path, parse_scalar(&raw), &format!("env {key}"))?;
        }
        Ok(())
    }

    /// Applies one `key.path=value` override from the command line.
    pub fn apply_set(&mut self, spec: &str) -> Result<()> {
        let Some((path, raw)) = spec.split_once('=') else {
            return Err(Error::validation(format!(
                "--set expects KEY.PATH=VALUE, got '{spec}'"
            )));
        };
        self.set_path(path.trim(), parse_scalar(raw.trim()), "flag --set")
    }

    /// Applies a dedicated flag (for example `--seed`) to a known key.
    pub fn apply_flag(&mut self, path: &str, value: Value, flag: &str) -> Result<()> {
        self.set_path(path, value, &format!("flag {flag}"))
    }

    fn merge(&mut self, prefix: &str, overlay: &Value, source: &str) -> Result<()> {
        let Value::Object(map) = overlay else {
            return Err(Error::validation(format!(
                "config {} must be a table, not a scalar",
                if prefix.is_empty() { "document" } else { prefix }
            )));
        };
        for (key, value) in map {
            let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
            let base_is_object = self
                .lookup(&path)
                .ok_or_else(|| Error::validation(format!("unknown config key '{path}'")))?
                .is_object();
            if base_is_object {
                self.merge(&path, value, source)?;
            } else {
                self.set_path(&path, value.clone(), source)?;
            }
        }
        Ok(())
    }

    fn lookup(&self, path: &str) -> Option<&Value> {
        let mut node = &self.tree;
        for seg in path.split('.') {
            node = node.as_object()?.get(seg)?;
        }
        Some(node)
    }

    fn set_path(&mut self, path: &str, value: Value, source: &str) -> Result<()> {
        let segments: Vec<&str> = path.split('.').collect();
        let mut node = &mut self.tree;
        for (i, seg) in segments.iter().enumerate() {
            let obj = node.as_object_mut().ok_or_else(|| {
                Error::validation(format!(
                    "config key '{}' is a value, not a table",
                    segments[..i].join(".")
                ))
            })?;
            node = obj
                .get_mut(*seg)
                .ok_or_else(|| Error::validation(format!("unknown config key '{path}'")))?;
        }
        if node.is_object() {
            return Err(Error::validation(format!(
                "config key '{path}' is a table; set one of its fields instead"
            )));
        }
        self.provenance.push(format!("{path} = {} ({source})", shown(&value)));
        *node = value;
        Ok(())
    }

    /// Final typed parse plus semantic validation. Returns the config and
    /// the provenance log of every override applied, in order.
    pub fn finish(self) -> Result<(CliConfig, Vec<String>)> {
        let cfg: CliConfig = serde_json::from_value(self.tree)
            .map_err(|e| Error::validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok((cfg, self.provenance))
    }
}

/// Renders the machine-readable key schema: every settable key with its
/// default value and JSON type, plus the layering rules. The repository
/// ships this as `config.schema.json`; a test keeps it in sync (and
/// regenerates it under UPDATE_SCHEMA=1).
#[cfg(test)]
pub fn schema_document() -> String {
    let defaults = serde_json::to_value(CliConfig::default())
        .expect("default config serializes to a JSON object");
    let mut keys = serde_json::Map::new();
    let sections = defaults.as_object().expect("config root is a table");
    for (section, fields) in sections {
        for (field, value) in fields.as_object().expect("config sections are tables") {
            let ty = match value {
                Value::Bool(_) => "boolean",
                Value::Number(n) if n.is_u64() || n.is_i64() => "integer",
                Value::Number(_) => "number",
                Value::String(_) => "string",
                _ => "object",
            };
            keys.insert(
                format!("{section}.{field}"),
                serde_json::json!({ "type": ty, "default": value }),
            );
        }
    }
    let doc = serde_json::json!({
        "env_prefix": ENV_PREFIX,
        "precedence": [
            "compiled defaults",
            "config file (--config run.toml or run.json)",
            format!("environment variables ({ENV_PREFIX}SECTION_FIELD)"),
            "command-line overrides (--set section.field=value and subcommand flags)",
        ],
        "notes": [
            "unknown keys are rejected at every layer with their full path",
            "values parse as JSON scalars; anything unparseable stays a string",
            "each subcommand writes the merged result to resolved_config.json beside its outputs",
        ],
        "keys": keys,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("schema serializes");
    text.push('\n');
    text
}

/// Writes the resolved configuration (plus the subcommand and its input
/// paths) into `dir/resolved_config.json` so any run can be reproduced
/// from its own output directory.
pub fn write_snapshot(
    dir: &Path,
    subcommand: &str,
    cfg: &CliConfig,
    inputs: Value,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let doc = serde_json::json!({
        "subcommand": subcommand,
        "inputs": inputs,
        "config": cfg,
    });
    let path = dir.join("resolved_config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc)?)
        .map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_pass_validation() {
        let (cfg, provenance) = ConfigBuilder::new().finish().unwrap();
        assert_eq!(cfg, CliConfig::default());
        assert!(provenance.is_empty());
    }

    #[test]
    fn file_then_env_then_flags_with_later_layers_winning() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        std::fs::write(
            &file,
            "[train]\nmax_steps = 50\nlr_a = 3e-4\n\n[model]\nd_model = 48\ncontent_lstm = 24\n",
        )
        .unwrap();
        let mut b = ConfigBuilder::new();
        b.apply_file(&file).unwrap();
        b.apply_env_from(
            vec![
                ("TGAVC_TRAIN_MAX_STEPS".to_string(), "75".to_string()),
                ("HOME".to_string(), "/ignored".to_string()),
            ]
            .into_iter(),
        )
        .unwrap();
        b.apply_set("train.max_steps=100").unwrap();
        let (cfg, provenance) = b.finish().unwrap();
        assert_eq!(cfg.train.max_steps, 100, "flag beats env beats file");
        assert_eq!(cfg.train.lr_a, 3e-4, "file value survives untouched layers");
        assert_eq!(cfg.model.d_model, 48);
        let joined = provenance.join("\n");
        assert!(joined.contains("file"), "{joined}");
        assert!(joined.contains("env TGAVC_TRAIN_MAX_STEPS"), "{joined}");
        assert!(joined.contains("flag --set"), "{joined}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("bad.toml");
        std::fs::write(&file, "[train]\nlearning_rate = 0.1\n").unwrap();
        let mut b = ConfigBuilder::new();
        let err = b.apply_file(&file).err().unwrap();
        assert!(err.is_validation());
        assert!(err.to_string().contains("train.learning_rate"), "{err}");

        let mut b = ConfigBuilder::new();
        let err = b.apply_set("nothing.here=1").err().unwrap();
        assert!(err.to_string().contains("unknown config key"), "{err}");

        let mut b = ConfigBuilder::new();
        let err = b
            .apply_env_from(vec![("TGAVC_TRAIN_BOGUS".to_string(), "1".to_string())].into_iter())
            .err()
            .unwrap();
        assert!(err.to_string().contains("train.bogus"), "{err}");
    }

    #[test]
    fn json_config_files_work_too() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.json");
        std::fs::write(&file, r#"{"dsp": {"n_mels": 40}}"#).unwrap();
        let mut b = ConfigBuilder::new();
        b.apply_file(&file).unwrap();
        let (cfg, _) = b.finish().unwrap();
        assert_eq!(cfg.dsp.n_mels, 40);
    }

    #[test]
    fn scalar_parsing_keeps_types() {
        assert_eq!(parse_scalar("7"), Value::from(7));
        assert_eq!(parse_scalar("2.5"), Value::from(2.5));
        assert_eq!(parse_scalar("true"), Value::from(true));
        assert_eq!(parse_scalar("tgavc"), Value::from("tgavc"));
    }

    #[test]
    fn type_errors_surface_as_validation() {
        let mut b = ConfigBuilder::new();
        b.apply_set("train.max_steps=notanumber").unwrap();
        let err = b.finish().err().unwrap();
        assert!(err.is_validation(), "{err}");
    }

    #[test]
    fn setting_a_whole_section_as_a_scalar_is_rejected() {
        let mut b = ConfigBuilder::new();
        let err = b.apply_set("train=5").err().unwrap();
        assert!(err.to_string().contains("is a table"), "{err}");
    }

    #[test]
    fn semantic_validation_runs_on_the_merged_result() {
        let mut b = ConfigBuilder::new();
        b.apply_set("train.batch_size=0").unwrap();
        assert!(b.finish().err().unwrap().is_validation());
        let mut b = ConfigBuilder::new();
        b.apply_set("corpus.min_syllables=9").unwrap();
        assert!(b.finish().err().unwrap().is_validation());
    }

    #[test]
    fn snapshot_written_beside_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CliConfig::default();
        let path = write_snapshot(
            &dir.path().join("run"),
            "train",
            &cfg,
            serde_json::json!({"corpus": "c"}),
        )
        .unwrap();
        let doc: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(doc["subcommand"], "train");
        assert_eq!(doc["inputs"]["corpus"], "c");
        let back: CliConfig = serde_json::from_value(doc["config"].clone()).unwrap();
        assert_eq!(back, cfg);
    }

    /// The shipped schema file must describe exactly the keys the binary
    /// accepts. Regenerate with UPDATE_SCHEMA=1 when fields change.
    #[test]
    fn shipped_schema_file_matches_the_accepted_keys() {
        let expected = schema_document();
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config.schema.json");
        if std::env::var("UPDATE_SCHEMA").is_ok() {
            std::fs::write(&path, &expected).unwrap();
        }
        let actual = std::fs::read_to_string(&path)
            .expect("config.schema.json exists at the repository root");
        assert_eq!(
            actual, expected,
            "config.schema.json is stale; regenerate with \
             UPDATE_SCHEMA=1 cargo test -p tgavc-cli shipped_schema"
        );
    }
}
