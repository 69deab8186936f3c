use std::fs;
use std::path::{Path, PathBuf};

use sbde::era::{AttributePolicy, Grouping};
use sbde::freqprep::{ClaheParams, DEFAULT_TAU};
use sbde::morphmod::ModConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const CONFIG_ENV: &str = "SBDE_CONFIG";

/// Backend per stage: a builtin name or `http:<url>` / `http(s)://…`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendsConfig {
    pub segment: String,
    pub inpaint: String,
    pub classify: String,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        Self { segment: "threshold".into(), inpaint: "harmonic".into(), classify: "heuristic".into() }
    }
}

pub const SEGMENT_BUILTINS: [&str; 2] = ["oracle", "threshold"];
pub const INPAINT_BUILTINS: [&str; 2] = ["harmonic", "identity"];
pub const CLASSIFY_BUILTINS: [&str; 1] = ["heuristic"];

/// URL of a remote backend spec, `None` for builtins.
pub fn remote_url(spec: &str) -> Option<String> {
    if spec.starts_with("http://") || spec.starts_with("https://") {
        Some(spec.to_string())
    } else {
        spec.strip_prefix("http:").map(str::to_string)
    }
}

pub fn check_backend(stage: &str, spec: &str, builtins: &[&str]) -> Result<(), CliError> {
    match remote_url(spec) {
        Some(url) if url.is_empty() => Err(CliError::Config(format!("{stage} backend: empty URL"))),
        Some(_) => Ok(()),
        None if builtins.contains(&spec) => Ok(()),
        None => Err(CliError::Config(format!(
            "{stage} backend {spec:?} is not one of {} or http:<url>",
            builtins.join(", ")
        ))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub backends: BackendsConfig,
    #[serde(rename = "mod")]
    pub mod_cfg: ModConfig,
    pub clahe: ClaheParams,
    pub tau: f64,
    pub policy: AttributePolicy,
    pub parallel: usize,
    pub output_root: PathBuf,
    pub min_side: u32,
    pub n_prompts: usize,
    pub grouping: Grouping,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            backends: BackendsConfig::default(),
            mod_cfg: ModConfig::default(),
            clahe: ClaheParams::default(),
            tau: DEFAULT_TAU,
            policy: AttributePolicy::Ratio(0.69),
            parallel: 1,
            output_root: PathBuf::from("sbde-out"),
            min_side: sbde::era::DEFAULT_MIN_SIDE,
            n_prompts: sbde::segpipe::DEFAULT_PROMPTS,
            grouping: Grouping::AllPerImage,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.parallel == 0 {
            return Err(CliError::Config("parallel must be at least 1".into()));
        }
        if !self.tau.is_finite() {
            return Err(CliError::Config(format!("tau must be finite, got {}", self.tau)));
        }
        if self.n_prompts == 0 {
            return Err(CliError::Config("n_prompts must be at least 1".into()));
        }
        self.mod_cfg.validate().map_err(|e| CliError::Config(format!("mod: {e}")))?;
        self.clahe.validate().map_err(|e| CliError::Config(format!("clahe: {e}")))?;
        if let AttributePolicy::Ratio(p) = self.policy {
            if !(0.0..=1.0).contains(&p) {
                return Err(CliError::Config(format!("policy ratio {p} outside [0, 1]")));
            }
        }
        check_backend("segment", &self.backends.segment, &SEGMENT_BUILTINS)?;
        check_backend("inpaint", &self.backends.inpaint, &INPAINT_BUILTINS)?;
        check_backend("classify", &self.backends.classify, &CLASSIFY_BUILTINS)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    if !value.is_object() {
        return Err(CliError::Config("config must be a JSON object".into()));
    }
    let cfg: RunConfig = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Read a strict JSON config; missing keys take defaults.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// `--config`, then `$SBDE_CONFIG`, then defaults.
pub fn resolve_config(flag: Option<&Path>) -> Result<RunConfig, CliError> {
    match flag {
        Some(p) => load_config(p),
        None => match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => load_config(Path::new(&p)),
            _ => Ok(RunConfig::default()),
        },
    }
}
