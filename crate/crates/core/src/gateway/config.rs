//! Service configuration: one TOML file plus environment overrides.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::identity::ApprovalThreshold;

/// On-disk form; `ServiceConfig` is the resolved version.
#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    listen: Option<String>,
    webhook_url: Option<String>,
    /// "majority" or a fixed integer count.
    approval_threshold: Option<toml::Value>,
    model_path: Option<PathBuf>,
    identity_store: Option<PathBuf>,
    chain_store: Option<PathBuf>,
    notification_log: Option<PathBuf>,
    violation_block_threshold: Option<u32>,
    auto_approve: Option<bool>,
    record_retrievals: Option<bool>,
    registry_seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen: String,
    pub webhook_url: Option<String>,
    pub approval_threshold: ApprovalThreshold,
    pub model_path: Option<PathBuf>,
    pub identity_store: Option<PathBuf>,
    pub chain_store: Option<PathBuf>,
    pub notification_log: Option<PathBuf>,
    pub violation_block_threshold: u32,
    /// Collect approvals from every registered miner automatically.
    /// When off, ingest uses approvals submitted via POST /approvals.
    pub auto_approve: bool,
    /// Record authorized history reads as retrieval-grant blocks.
    pub record_retrievals: bool,
    pub registry_seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> ServiceConfig {
        ServiceConfig {
            listen: "127.0.0.1:8080".to_string(),
            webhook_url: None,
            approval_threshold: ApprovalThreshold::Majority,
            model_path: None,
            identity_store: None,
            chain_store: None,
            notification_log: None,
            violation_block_threshold: 3,
            auto_approve: true,
            record_retrievals: false,
            registry_seed: 42,
        }
    }
}

fn parse_threshold(value: &toml::Value) -> Result<ApprovalThreshold, String> {
    match value {
        toml::Value::String(s) if s == "majority" => Ok(ApprovalThreshold::Majority),
        toml::Value::Integer(n) if *n >= 1 => Ok(ApprovalThreshold::Fixed(*n as usize)),
        other => Err(format!(
            "approval_threshold must be \"majority\" or a positive integer, got {other}"
        )),
    }
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str) -> Result<ServiceConfig, String> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        let mut config = ServiceConfig::default();
        if let Some(v) = raw.listen {
            config.listen = v;
        }
        config.webhook_url = raw.webhook_url.filter(|u| !u.is_empty());
        if let Some(v) = &raw.approval_threshold {
            config.approval_threshold = parse_threshold(v)?;
        }
        config.model_path = raw.model_path;
        config.identity_store = raw.identity_store;
        config.chain_store = raw.chain_store;
        config.notification_log = raw.notification_log;
        if let Some(v) = raw.violation_block_threshold {
            config.violation_block_threshold = v.max(1);
        }
        if let Some(v) = raw.auto_approve {
            config.auto_approve = v;
        }
        if let Some(v) = raw.record_retrievals {
            config.record_retrievals = v;
        }
        if let Some(v) = raw.registry_seed {
            config.registry_seed = v;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<ServiceConfig, String> {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        let mut config = ServiceConfig::from_toml_str(&text)?;
        config.apply_env_overrides();
        Ok(config)
    }

    /// `GLUCOGUARD_*` environment variables win over the file.
    pub fn apply_env_overrides(&mut self) {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());
        if let Some(v) = var("GLUCOGUARD_LISTEN") {
            self.listen = v;
        }
        if let Some(v) = var("GLUCOGUARD_WEBHOOK_URL") {
            self.webhook_url = Some(v);
        }
        if let Some(v) = var("GLUCOGUARD_MODEL_PATH") {
            self.model_path = Some(PathBuf::from(v));
        }
        if let Some(v) = var("GLUCOGUARD_APPROVAL_THRESHOLD") {
            if v == "majority" {
                self.approval_threshold = ApprovalThreshold::Majority;
            } else if let Ok(n) = v.parse::<usize>() {
                self.approval_threshold = ApprovalThreshold::Fixed(n.max(1));
            }
        }
        if let Some(v) = var("GLUCOGUARD_VIOLATION_BLOCK_THRESHOLD") {
            if let Ok(n) = v.parse::<u32>() {
                self.violation_block_threshold = n.max(1);
            }
        }
    }
}
