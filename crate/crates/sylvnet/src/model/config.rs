//! Declarative model configuration: one `key = value` pair per line,
//! `#` comments. Documented keys:
//!
//! ```text
//! model              base | lowrank
//! hidden_dim         embedding width r
//! cge_levels         graph-channel depth (alias: cge_layers)
//! encoder_layers     1 = linear encoder, 2 = one hidden layer
//! channels           comma list of cge, attention, prior, cross (alias: branches)
//! encoder_activation relu | sigmoid | tanh | linear
//! channel_activation base-model channel nonlinearity (alias branch_activation)
//! fusion_activation  base-model fusion nonlinearity
//! output_map         affine (learnable scale/shift) | fixed
//! binarize_prior     true | false (base model, multi-class priors)
//! num_classes        rating class count K (low-rank prior branch)
//! ```

use super::base::{BaseConfig, ChannelFlags};
use super::lowrank::{BranchFlags, LowRankConfig};
use super::ModelError;
use crate::diff::ActivationKind;
use std::collections::BTreeMap;
use std::path::Path;

/// Which instantiation to build, with its full configuration.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    Base(BaseConfig),
    LowRank(LowRankConfig),
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Base(_) => "base",
            ModelSpec::LowRank(_) => "lowrank",
        }
    }

    /// Graph-only ablation variant (attention channels/branches disabled).
    pub fn graph_only(&self) -> Self {
        match self {
            ModelSpec::Base(cfg) => {
                ModelSpec::Base(BaseConfig { channels: cfg.channels.graph_only(), ..cfg.clone() })
            }
            ModelSpec::LowRank(cfg) => ModelSpec::LowRank(LowRankConfig {
                branches: cfg.branches.graph_only(),
                ..cfg.clone()
            }),
        }
    }

    /// Attention-only ablation variant (graph channel/branch disabled).
    pub fn attention_only(&self) -> Self {
        match self {
            ModelSpec::Base(cfg) => ModelSpec::Base(BaseConfig {
                channels: cfg.channels.attention_only(),
                ..cfg.clone()
            }),
            ModelSpec::LowRank(cfg) => ModelSpec::LowRank(LowRankConfig {
                branches: cfg.branches.attention_only(),
                ..cfg.clone()
            }),
        }
    }
}

fn parse_flags(value: &str) -> Result<(bool, bool, bool, bool), ModelError> {
    let (mut cge, mut attention, mut prior, mut cross) = (false, false, false, false);
    for part in value.split(',') {
        match part.trim().to_ascii_lowercase().as_str() {
            "cge" | "graph" => cge = true,
            "attention" | "within-attention" => attention = true,
            "prior" => prior = true,
            "cross" | "cross-attention" | "cross_attention" => cross = true,
            "" => {}
            other => {
                return Err(ModelError::Config(format!("unknown channel '{other}'")));
            }
        }
    }
    Ok((cge, attention, prior, cross))
}

fn parse_activation(value: &str) -> Result<ActivationKind, ModelError> {
    ActivationKind::parse(value)
        .ok_or_else(|| ModelError::Config(format!("unknown activation '{value}'")))
}

fn parse_bool(value: &str) -> Result<bool, ModelError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(ModelError::Config(format!("expected boolean, got '{other}'"))),
    }
}

/// Parses a config file into a [`ModelSpec`], starting from each model's
/// defaults.
pub fn parse_config_file(path: &Path) -> Result<ModelSpec, ModelError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ModelError::Config(format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub(crate) fn parse_config_str(text: &str) -> Result<ModelSpec, ModelError> {
    let mut pairs: BTreeMap<String, String> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            ModelError::Config(format!("line {}: expected 'key = value'", lineno + 1))
        })?;
        pairs.insert(key.trim().to_ascii_lowercase(), value.trim().to_string());
    }
    let model = pairs
        .remove("model")
        .ok_or_else(|| ModelError::Config("missing required key 'model'".into()))?;

    let get_usize = |pairs: &BTreeMap<String, String>, key: &str| -> Result<Option<usize>, ModelError> {
        pairs
            .get(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|e| ModelError::Config(format!("{key}: {e}")))
            })
            .transpose()
    };

    let spec = match model.to_ascii_lowercase().as_str() {
        "base" => {
            let mut cfg = BaseConfig::default();
            if let Some(v) = get_usize(&pairs, "hidden_dim")? {
                cfg.hidden_dim = v;
            }
            if let Some(v) = get_usize(&pairs, "cge_levels")?.or(get_usize(&pairs, "cge_layers")?) {
                cfg.cge_levels = v;
            }
            if let Some(v) = get_usize(&pairs, "encoder_layers")? {
                cfg.encoder_layers = v;
            }
            if let Some(v) = pairs.get("channels").or(pairs.get("branches")) {
                let (cge, attention, prior, cross) = parse_flags(v)?;
                cfg.channels = ChannelFlags { cge, attention, prior, cross_attention: cross };
            }
            if let Some(v) = pairs.get("encoder_activation") {
                cfg.encoder_activation = parse_activation(v)?;
            }
            if let Some(v) = pairs.get("channel_activation").or(pairs.get("branch_activation")) {
                cfg.channel_activation = parse_activation(v)?;
            }
            if let Some(v) = pairs.get("fusion_activation") {
                cfg.fusion_activation = parse_activation(v)?;
            }
            if let Some(v) = pairs.get("binarize_prior") {
                cfg.binarize_prior = parse_bool(v)?;
            }
            ModelSpec::Base(cfg)
        }
        "lowrank" | "low-rank" => {
            let mut cfg = LowRankConfig::default();
            if let Some(v) = get_usize(&pairs, "hidden_dim")? {
                cfg.hidden_dim = v;
            }
            if let Some(v) = get_usize(&pairs, "cge_layers")?.or(get_usize(&pairs, "cge_levels")?) {
                cfg.cge_layers = v;
            }
            if let Some(v) = get_usize(&pairs, "encoder_layers")? {
                cfg.encoder_layers = v;
            }
            if let Some(v) = get_usize(&pairs, "num_classes")? {
                cfg.num_classes = v;
            }
            if let Some(v) = pairs.get("channels").or(pairs.get("branches")) {
                let (cge, attention, prior, cross) = parse_flags(v)?;
                cfg.branches = BranchFlags { cge, attention, prior, cross_attention: cross };
            }
            if let Some(v) = pairs.get("encoder_activation") {
                cfg.encoder_activation = parse_activation(v)?;
            }
            if let Some(v) = pairs.get("branch_activation").or(pairs.get("channel_activation")) {
                cfg.branch_activation = parse_activation(v)?;
            }
            ModelSpec::LowRank(cfg)
        }
        other => {
            return Err(ModelError::Config(format!(
                "unknown model '{other}', expected base or lowrank"
            )));
        }
    };
    if let Some(v) = pairs.get("output_map") {
        match v.to_ascii_lowercase().as_str() {
            "affine" => {}
            other => {
                return Err(ModelError::Config(format!(
                    "unsupported output_map '{other}' (only 'affine' is implemented)"
                )));
            }
        }
    }
    Ok(spec)
}
