// SPDX-License-Identifier: Apache-2.0

//! Runtime configuration: TOML file, `--section.key=value` overrides, strict
//! unknown-key detection and cross-field validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::backends::BackendsConfig;
use crate::vad::VadConfig;

/// Environment variable naming the config file when `--config` is absent.
pub const CONFIG_ENV: &str = "OL_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("malformed override `{0}`; expected section.key=value")]
    Override(String),
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// Per-session feature geometry: `T` frames per clip, `N` tokens per frame,
/// `P` memory tokens per frame after down-sampling, `C` channels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureProfile {
    pub frames_per_clip: usize,
    pub tokens_per_frame: usize,
    pub memory_tokens_per_frame: usize,
    pub channels: usize,
    pub sample_rate: u32,
}

impl Default for FeatureProfile {
    fn default() -> Self {
        Self {
            frames_per_clip: 16,
            tokens_per_frame: 16,
            memory_tokens_per_frame: 4,
            channels: 64,
            sample_rate: crate::ingest::SAMPLE_RATE_HZ,
        }
    }
}

impl FeatureProfile {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.frames_per_clip == 0 {
            errs.push("profile.frames_per_clip must be positive".into());
        }
        if self.tokens_per_frame == 0 {
            errs.push("profile.tokens_per_frame must be positive".into());
        }
        if self.memory_tokens_per_frame == 0 {
            errs.push("profile.memory_tokens_per_frame must be positive".into());
        } else if self.tokens_per_frame % self.memory_tokens_per_frame != 0 {
            errs.push(format!(
                "profile.memory_tokens_per_frame ({}) must divide profile.tokens_per_frame ({})",
                self.memory_tokens_per_frame, self.tokens_per_frame
            ));
        } else if self.memory_tokens_per_frame > self.tokens_per_frame {
            errs.push("profile.memory_tokens_per_frame must not exceed profile.tokens_per_frame".into());
        }
        if self.channels < 2 {
            errs.push(format!("profile.channels must be at least 2, got {}", self.channels));
        }
        if self.sample_rate != crate::ingest::SAMPLE_RATE_HZ {
            errs.push(format!(
                "profile.sample_rate must be {} Hz, got {}",
                crate::ingest::SAMPLE_RATE_HZ,
                self.sample_rate
            ));
        }
        errs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub audio_queue: usize,
    pub frame_queue: usize,
    pub asr_queue: usize,
    pub llm_queue: usize,
    pub tts_queue: usize,
    pub frame_rate_fps: f64,
    pub stall_threshold_ms: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            audio_queue: 512,
            frame_queue: 8,
            asr_queue: 4,
            llm_queue: 4,
            tts_queue: 16,
            frame_rate_fps: 1.0,
            stall_threshold_ms: 5000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    pub top_k: usize,
    /// Short-term memories fed to each integration pass.
    pub window: usize,
    pub max_snapshots: usize,
    pub frame_refs_per_clip: usize,
    /// Weight of the recency term added to cosine scores; 0 is pure cosine.
    pub recency_bonus: f64,
    pub retain_clip_features: bool,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            top_k: 2,
            window: 32,
            max_snapshots: 8,
            frame_refs_per_clip: 4,
            recency_bonus: 0.0,
            retain_clip_features: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReasoningConfig {
    pub fillers: Vec<String>,
    pub min_content_tokens: usize,
    /// Forward each closed sentence to TTS; otherwise wait for the whole answer.
    pub sentence_streaming: bool,
    pub cancel_llm_on_barge_in: bool,
}

impl Default for ReasoningConfig {
    fn default() -> Self {
        Self {
            fillers: crate::reasoning::DEFAULT_FILLERS.iter().map(|s| s.to_string()).collect(),
            min_content_tokens: 2,
            sentence_streaming: true,
            cancel_llm_on_barge_in: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub bind: String,
    pub ws_path: String,
    pub outbound_buffer_chunks: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8765".into(),
            ws_path: "/ws/ol".into(),
            outbound_buffer_chunks: 256,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub profile: FeatureProfile,
    pub ingest: IngestConfig,
    pub vad: VadConfig,
    pub memory: MemoryConfig,
    pub reasoning: ReasoningConfig,
    pub gateway: GatewayConfig,
    pub backends: BackendsConfig,
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = self.profile.validate();
        errs.extend(self.vad.validate());
        for (name, v) in [
            ("ingest.audio_queue", self.ingest.audio_queue),
            ("ingest.frame_queue", self.ingest.frame_queue),
            ("ingest.asr_queue", self.ingest.asr_queue),
            ("ingest.llm_queue", self.ingest.llm_queue),
            ("ingest.tts_queue", self.ingest.tts_queue),
            ("memory.top_k", self.memory.top_k),
            ("memory.window", self.memory.window),
            ("memory.max_snapshots", self.memory.max_snapshots),
            ("gateway.outbound_buffer_chunks", self.gateway.outbound_buffer_chunks),
        ] {
            if v == 0 {
                errs.push(format!("{name} must be positive"));
            }
        }
        if !(self.ingest.frame_rate_fps > 0.0 && self.ingest.frame_rate_fps <= 1000.0) {
            errs.push(format!(
                "ingest.frame_rate_fps must be in (0, 1000], got {}",
                self.ingest.frame_rate_fps
            ));
        }
        if !(self.memory.recency_bonus >= 0.0 && self.memory.recency_bonus.is_finite()) {
            errs.push("memory.recency_bonus must be a finite non-negative number".into());
        }
        if !self.gateway.ws_path.starts_with('/') {
            errs.push(format!("gateway.ws_path must start with '/', got {:?}", self.gateway.ws_path));
        }
        errs.extend(self.backends.validate());
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    /// The effective configuration as TOML.
    pub fn dump(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Parses TOML text and applies overrides (`section.key=value`).
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let unknown = unknown_keys(&table);
        if !unknown.is_empty() {
            return Err(ConfigError::UnknownKeys(unknown));
        }
        let cfg: Config = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Loads the config file (explicit path, else `$OL_CONFIG`, else defaults)
/// and layers CLI overrides on top.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<Config, ConfigError> {
    let env_path = std::env::var_os(CONFIG_ENV).map(std::path::PathBuf::from);
    let path = path.map(Path::to_path_buf).or(env_path);
    let text = match &path {
        Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
            path: p.display().to_string(),
            source,
        })?,
        None => String::new(),
    };
    Config::from_toml_str(&text, overrides)
}

/// Applies one `section.key=value` override. The value is parsed as a TOML
/// value and falls back to a bare string.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(spec.to_string()));
    }
    let value = parse_value(raw.trim());
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn unknown_keys(user: &Table) -> Vec<String> {
    let reference: Table = Config::default().dump().parse().expect("default config parses");
    let mut out = Vec::new();
    collect_unknown(user, &reference, "", &mut out);
    out
}

fn collect_unknown(user: &Table, reference: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in user {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match (reference.get(k), v) {
            (None, _) => out.push(path),
            (Some(Value::Table(r)), Value::Table(u)) => collect_unknown(u, r, &path, out),
            _ => {}
        }
    }
}

/// Rewrites `--section.key=value` / `--section.key value` CLI arguments into
/// override strings, returning the remaining arguments untouched.
pub fn split_override_args(args: impl IntoIterator<Item = String>) -> (Vec<String>, Vec<String>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter().peekable();
    while let Some(a) = it.next() {
        let Some(body) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let name = body.split('=').next().unwrap_or_default();
        if !name.contains('.') {
            rest.push(a);
            continue;
        }
        if body.contains('=') {
            overrides.push(body.to_string());
        } else if let Some(v) = it.next() {
            overrides.push(format!("{body}={v}"));
        } else {
            overrides.push(body.to_string());
        }
    }
    (rest, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = Config::from_toml_str("", &[]).unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.ingest.audio_queue, 512);
        assert_eq!(cfg.ingest.frame_queue, 8);
        assert_eq!(cfg.ingest.asr_queue, 4);
        assert_eq!(cfg.ingest.llm_queue, 4);
        assert_eq!(cfg.ingest.tts_queue, 16);
        assert_eq!(cfg.memory.top_k, 2);
        assert_eq!(cfg.memory.window, 32);
        assert_eq!(cfg.memory.max_snapshots, 8);
        assert_eq!(cfg.vad.max_segment_ms, 30_000);
        assert_eq!(cfg.gateway.outbound_buffer_chunks, 256);
    }

    #[test]
    fn divisibility_error_names_both_fields() {
        let err = Config::from_toml_str(
            "[profile]\nmemory_tokens_per_frame = 3\ntokens_per_frame = 16\n",
            &[],
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("profile.memory_tokens_per_frame"), "{err}");
        assert!(err.contains("profile.tokens_per_frame"), "{err}");
    }

    #[test]
    fn flag_overrides_file() {
        let cfg = Config::from_toml_str("[memory]\ntop_k = 2\n", &["memory.top_k=5".into()]).unwrap();
        assert_eq!(cfg.memory.top_k, 5);
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        match Config::from_toml_str("bogus = 1\n[vad]\nthreshold = 3\n[memory]\ntop_k = 1\n", &[]) {
            Err(ConfigError::UnknownKeys(k)) => assert_eq!(k, ["bogus", "vad.threshold"]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            Config::from_toml_str("", &["nope.key=1".into()]),
            Err(ConfigError::UnknownKeys(_))
        ));
    }

    #[test]
    fn dump_is_a_fixed_point() {
        let once = Config::from_toml_str("[vad]\nhangover_ms = 320\n", &["memory.recency_bonus=1.5".into()])
            .unwrap()
            .dump();
        let twice = Config::from_toml_str(&once, &[]).unwrap().dump();
        assert_eq!(once, twice);
    }

    #[test]
    fn override_args_are_split_out() {
        let (rest, ov) = split_override_args(
            ["trace.jsonl", "--mode", "virtual", "--memory.top_k=3", "--vad.hangover_ms", "320"]
                .map(String::from),
        );
        assert_eq!(rest, ["trace.jsonl", "--mode", "virtual"]);
        assert_eq!(ov, ["memory.top_k=3", "vad.hangover_ms=320"]);
    }

    #[test]
    fn string_overrides_fall_back_to_bare_strings() {
        let cfg = Config::from_toml_str("", &["gateway.bind=0.0.0.0:9000".into()]).unwrap();
        assert_eq!(cfg.gateway.bind, "0.0.0.0:9000");
    }
}
