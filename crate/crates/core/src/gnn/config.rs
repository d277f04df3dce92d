//! Model configuration.

use crate::error::{MhcError, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Gcn,
    Sage,
    Gat,
    Gin,
}

impl std::str::FromStr for Backbone {
    type Err = MhcError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(Backbone::Gcn),
            "sage" => Ok(Backbone::Sage),
            "gat" => Ok(Backbone::Gat),
            "gin" => Ok(Backbone::Gin),
            other => Err(MhcError::Config(format!("unknown backbone '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum McMode {
    #[default]
    Full,
    DynamicOnly,
    StaticOnly,
    NoSinkhorn,
    Baseline,
}

impl McMode {
    pub fn all_ablation() -> [McMode; 4] {
        [McMode::Full, McMode::DynamicOnly, McMode::StaticOnly, McMode::NoSinkhorn]
    }

    pub fn name(&self) -> &'static str {
        match self {
            McMode::Full => "full",
            McMode::DynamicOnly => "dynamic_only",
            McMode::StaticOnly => "static_only",
            McMode::NoSinkhorn => "no_sinkhorn",
            McMode::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for McMode {
    type Err = MhcError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(McMode::Full),
            "dynamic_only" => Ok(McMode::DynamicOnly),
            "static_only" => Ok(McMode::StaticOnly),
            "no_sinkhorn" => Ok(McMode::NoSinkhorn),
            "baseline" => Ok(McMode::Baseline),
            other => Err(MhcError::Config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkhornCfg {
    pub iterations: usize,
    pub temperature: f64,
}

impl Default for SinkhornCfg {
    fn default() -> Self {
        SinkhornCfg { iterations: 10, temperature: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub layers: usize,
    pub streams: usize,
    pub hidden: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_heads")]
    pub gat_heads: usize,
    #[serde(default)]
    pub sinkhorn: SinkhornCfg,
    #[serde(default)]
    pub mode: McMode,
    #[serde(default)]
    pub sinkhorn_stopgrad: bool,
    #[serde(default = "default_true")]
    pub self_loops: bool,
}

fn default_dropout() -> f64 {
    0.5
}
fn default_heads() -> usize {
    8
}
fn default_true() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: Backbone::Gcn,
            layers: 8,
            streams: 4,
            hidden: 128,
            dropout: default_dropout(),
            gat_heads: default_heads(),
            sinkhorn: SinkhornCfg::default(),
            mode: McMode::Full,
            sinkhorn_stopgrad: false,
            self_loops: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.streams == 0 || self.hidden == 0 {
            return Err(MhcError::Config("streams and hidden must be positive".into()));
        }
        // baseline mode bypasses the mapping construction and is single-stream
        if self.mode == McMode::Baseline && self.streams != 1 {
            return Err(MhcError::Config(format!(
                "baseline mode requires streams = 1, got {}",
                self.streams
            )));
        }
        if self.backbone == Backbone::Gat {
            if self.gat_heads == 0 || self.hidden % self.gat_heads != 0 {
                return Err(MhcError::Config(format!(
                    "hidden ({}) must be divisible by gat_heads ({})",
                    self.hidden, self.gat_heads
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(MhcError::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.sinkhorn.iterations == 0 || self.sinkhorn.temperature <= 0.0 {
            return Err(MhcError::Config("sinkhorn needs iterations >= 1 and temperature > 0".into()));
        }
        Ok(())
    }

    /// Short tag used in file names and result tables.
    pub fn tag(&self) -> String {
        match self.mode {
            McMode::Baseline => format!("{}-baseline-l{}", backbone_name(self.backbone), self.layers),
            m => format!("{}-{}-n{}-l{}", backbone_name(self.backbone), m.name(), self.streams, self.layers),
        }
    }
}

pub fn backbone_name(b: Backbone) -> &'static str {
    match b {
        Backbone::Gcn => "gcn",
        Backbone::Sage => "sage",
        Backbone::Gat => "gat",
        Backbone::Gin => "gin",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_requires_single_stream() {
        let cfg = ModelConfig { mode: McMode::Baseline, streams: 4, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
        let ok = ModelConfig { mode: McMode::Baseline, streams: 1, ..ModelConfig::default() };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn gat_head_divisibility() {
        let cfg = ModelConfig { backbone: Backbone::Gat, hidden: 30, gat_heads: 8, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn json_round_trip_rejects_unknown_keys() {
        let cfg = ModelConfig::default();
        let js = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&js).unwrap();
        assert_eq!(cfg, back);
        let bad = js.replace("\"layers\"", "\"laters\"");
        assert!(serde_json::from_str::<ModelConfig>(&bad).is_err());
    }
}
