//! Pipeline configuration: TOML file with environment-variable
//! interpolation, per-role backend sections, and a semantic checksum that
//! guards checkpoint resumption.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use redraft_core::backend::http::HttpBackend;
use redraft_core::backend::scripted::RuleBackend;
use redraft_core::backend::{
    BackendConfig, DynBackend, RetryPolicy, RoleTag, SamplingOverride, SamplingParams, SplitBackend,
};
use redraft_core::corpus::{
    CurationParams, DEFAULT_DEDUP_THRESHOLD, DEFAULT_MAX_QUERY_TOKENS, DEFAULT_MIN_TOKENS,
};
use redraft_core::reward::{RewardConfig, DEFAULT_ALPHA};
use redraft_core::rubric::ScoreTargets;
use redraft_core::synthesis::{SynthesisConfig, DEFAULT_MAX_TURNS, DEFAULT_SEPARATOR};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub backend: BackendsSection,
    pub corpus: CorpusSection,
    pub synthesis: SynthesisSection,
    pub reward: RewardSection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsSection {
    pub writer: BackendSection,
    pub judge: BackendSection,
}

impl Default for BackendsSection {
    fn default() -> Self {
        Self {
            writer: BackendSection::default(),
            judge: BackendSection {
                model: "judge-model".into(),
                ..BackendSection::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Http,
    /// Content-keyed script file; deterministic offline runs.
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    #[serde(rename = "type")]
    pub kind: BackendKind,
    pub endpoint: String,
    pub api_key_env: String,
    pub model: String,
    pub max_in_flight: usize,
    /// Role default when absent: 0.6 for the writer, 0 for the judge.
    pub temperature: Option<f64>,
    /// Role default when absent: 32768 for the writer, 8192 for the judge.
    pub max_tokens: Option<u32>,
    /// Rule script for `type = "scripted"`, relative to the config file.
    pub script: Option<PathBuf>,
    pub retry: RetrySection,
    pub timeout_ms: u64,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            kind: BackendKind::Http,
            endpoint: "http://127.0.0.1:8000/v1".into(),
            api_key_env: String::new(),
            model: "writer-model".into(),
            max_in_flight: 8,
            temperature: None,
            max_tokens: None,
            script: None,
            retry: RetrySection::default(),
            timeout_ms: 120_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrySection {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetrySection {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base_ms: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub min_tokens: usize,
    pub dedup_threshold: f64,
    pub max_tokens: usize,
    pub top_k: Option<usize>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            min_tokens: DEFAULT_MIN_TOKENS,
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
            max_tokens: DEFAULT_MAX_QUERY_TOKENS,
            top_k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSection {
    pub max_turns: u32,
    pub target_keypoints: f64,
    pub target_quality: f64,
    pub separator: String,
    pub judge_reasks: u32,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        Self {
            max_turns: DEFAULT_MAX_TURNS,
            target_keypoints: ScoreTargets::default().key_points,
            target_quality: ScoreTargets::default().quality,
            separator: DEFAULT_SEPARATOR.into(),
            judge_reasks: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub alpha: f64,
    pub seed: u64,
    pub pointwise: bool,
}

impl Default for RewardSection {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            seed: 0,
            pointwise: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub input: PathBuf,
    /// Directory receiving every stage's outputs.
    pub output: PathBuf,
    pub checkpoint_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            input: "input.jsonl".into(),
            output: "out".into(),
            checkpoint_dir: "out/checkpoints".into(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, section) in [
            ("writer", &self.backend.writer),
            ("judge", &self.backend.judge),
        ] {
            if section.max_in_flight == 0 {
                bail!("backend.{name}.max_in_flight must be at least 1");
            }
            if section.retry.max_attempts == 0 {
                bail!("backend.{name}.retry.max_attempts must be at least 1");
            }
            if let Some(t) = section.temperature {
                if t < 0.0 {
                    bail!("backend.{name}.temperature must be non-negative");
                }
            }
            if section.kind == BackendKind::Scripted && section.script.is_none() {
                bail!("backend.{name} is scripted but names no script file");
            }
        }
        if self.corpus.min_tokens == 0 {
            bail!("corpus.min_tokens must be at least 1");
        }
        if !(self.corpus.dedup_threshold > 0.0 && self.corpus.dedup_threshold <= 1.0) {
            bail!("corpus.dedup_threshold must lie in (0, 1]");
        }
        if self.corpus.max_tokens == 0 {
            bail!("corpus.max_tokens must be at least 1");
        }
        if self.corpus.top_k == Some(0) {
            bail!("corpus.top_k must be at least 1 when set");
        }
        if self.synthesis.max_turns == 0 {
            bail!("synthesis.max_turns must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.synthesis.target_keypoints) {
            bail!("synthesis.target_keypoints must lie in [0, 1]");
        }
        if !(0.0..=10.0).contains(&self.synthesis.target_quality) {
            bail!("synthesis.target_quality must lie in [0, 10]");
        }
        if !(self.reward.alpha > 0.0 && self.reward.alpha < 1.0) {
            bail!("reward.alpha must lie in (0, 1)");
        }
        Ok(())
    }

    /// Checksum over everything that affects results. Pure execution knobs
    /// (in-flight windows, retry budgets, timeouts) and the paths section
    /// are excluded so a resumed or re-parallelized run matches.
    pub fn semantic_checksum(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(root) = value.as_object_mut() {
            root.remove("paths");
            if let Some(backend) = root.get_mut("backend").and_then(|b| b.as_object_mut()) {
                for role in ["writer", "judge"] {
                    if let Some(section) = backend.get_mut(role).and_then(|s| s.as_object_mut()) {
                        section.remove("max_in_flight");
                        section.remove("retry");
                        section.remove("timeout_ms");
                    }
                }
            }
        }
        let canonical = serde_json::to_string(&value).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn curation_params(&self) -> CurationParams {
        CurationParams {
            min_tokens: self.corpus.min_tokens,
            dedup_threshold: self.corpus.dedup_threshold,
            max_tokens: self.corpus.max_tokens,
        }
    }

    pub fn synthesis_config(&self) -> SynthesisConfig {
        SynthesisConfig {
            max_turns: self.synthesis.max_turns,
            targets: ScoreTargets {
                key_points: self.synthesis.target_keypoints,
                quality: self.synthesis.target_quality,
            },
            separator: self.synthesis.separator.clone(),
            judge_reasks: self.synthesis.judge_reasks,
        }
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            alpha: self.reward.alpha,
            seed: self.reward.seed,
            pointwise: self.reward.pointwise,
        }
    }
}

/// A parsed config anchored at its file location: relative paths resolve
/// against the config file's directory, so a run directory is
/// self-contained.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_owned()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn input_path(&self) -> PathBuf {
        self.resolve(&self.config.paths.input)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.output)
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.checkpoint_dir)
    }

    /// Instantiate the writer/judge pair described by the backend sections.
    pub fn build_backend(&self) -> Result<DynBackend> {
        let writer = self.build_role(&self.config.backend.writer, RoleTag::Writer)?;
        let judge = self.build_role(&self.config.backend.judge, RoleTag::Judge)?;
        let split: DynBackend = Arc::new(SplitBackend { writer, judge });
        Ok(Arc::new(SamplingOverride::new(
            split,
            sampling_for(&self.config.backend.writer, RoleTag::Writer),
            sampling_for(&self.config.backend.judge, RoleTag::Judge),
        )))
    }

    fn build_role(&self, section: &BackendSection, role: RoleTag) -> Result<DynBackend> {
        match section.kind {
            BackendKind::Http => {
                let config = BackendConfig {
                    endpoint: section.endpoint.clone(),
                    api_key_env: section.api_key_env.clone(),
                    model_name: section.model.clone(),
                    max_in_flight: section.max_in_flight,
                    retry: RetryPolicy {
                        max_attempts: section.retry.max_attempts,
                        backoff_base: Duration::from_millis(section.retry.backoff_base_ms),
                    },
                    timeout: Duration::from_millis(section.timeout_ms),
                };
                Ok(Arc::new(HttpBackend::new(config)))
            }
            BackendKind::Scripted => {
                let script = section.script.as_ref().with_context(|| {
                    format!("{} backend is scripted but names no script", role.as_str())
                })?;
                let path = self.resolve(script);
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading script {}", path.display()))?;
                let backend = RuleBackend::from_json(&text)
                    .with_context(|| format!("parsing script {}", path.display()))?;
                Ok(Arc::new(backend))
            }
        }
    }
}

fn sampling_for(section: &BackendSection, role: RoleTag) -> SamplingParams {
    let defaults = match role {
        RoleTag::Writer => SamplingParams::writer_default(),
        RoleTag::Judge => SamplingParams::judge_default(),
    };
    SamplingParams {
        temperature: section.temperature.unwrap_or(defaults.temperature),
        max_tokens: section.max_tokens.unwrap_or(defaults.max_tokens),
    }
}

/// Read, interpolate, parse, and validate a config file.
pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let interpolated = interpolate_env(&raw)?;
    let config: PipelineConfig = toml::from_str(&interpolated)
        .with_context(|| format!("parsing config {}", path.display()))?;
    config.validate()?;
    let base_dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_owned)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(LoadedConfig { config, base_dir })
}

// ${VAR} interpolation for secrets; unset variables are hard errors.
fn interpolate_env(raw: &str) -> Result<String> {
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find('}') else {
            bail!("unterminated ${{...}} in config");
        };
        let name = &after[..end];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            bail!("invalid environment variable name {name:?} in config");
        }
        let value = std::env::var(name)
            .with_context(|| format!("config references unset environment variable {name}"))?;
        out.push_str(&value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}
