use serde::{Deserialize, Serialize};

use crate::blocks::{BlockKind, ResidualKind};
use crate::error::{Error, Result};
use crate::norm::NormKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    DeepSets,
    DeepSetsPp,
    SetTransformer,
    SetTransformerPp,
    /// Deliberately order-sensitive Deep Sets variant whose pooling weights
    /// element `j` by `j + 1`. Used as a negative control for invariance checks.
    PositionalProbe,
}

impl Family {
    pub fn is_transformer(self) -> bool {
        matches!(self, Family::SetTransformer | Family::SetTransformerPp)
    }

    /// Accepts `deepsets`, `deep-sets-pp`, `set_transformer` and similar spellings.
    pub fn parse(s: &str) -> Option<Family> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Some(match key.as_str() {
            "deepsets" | "ds" => Family::DeepSets,
            "deepsetspp" | "dspp" => Family::DeepSetsPp,
            "settransformer" | "st" => Family::SetTransformer,
            "settransformerpp" | "stpp" => Family::SetTransformerPp,
            "positionalprobe" => Family::PositionalProbe,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Sum,
    Max,
    Pma,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskHead {
    #[default]
    Regression,
    Classification,
}

fn default_heads() -> usize {
    4
}

fn default_inducing() -> usize {
    16
}

fn default_output() -> usize {
    1
}

fn default_wq_scale() -> f64 {
    1.0
}

/// Declarative description of a network.
///
/// Optional fields fall back to family defaults; [`ModelConfig::resolved`]
/// fills them in so a resolved config fully determines the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    pub input_dim: usize,
    pub encoder_depth: usize,
    pub hidden: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_inducing")]
    pub inducing: usize,
    #[serde(default)]
    pub aggregation: Option<Aggregation>,
    #[serde(default)]
    pub norm: Option<NormKind>,
    #[serde(default)]
    pub residual: Option<ResidualKind>,
    /// Residual block used by the Deep Sets++ encoder.
    #[serde(default)]
    pub block: Option<BlockKind>,
    #[serde(default)]
    pub decoder_widths: Vec<usize>,
    #[serde(default = "default_output")]
    pub output_dim: usize,
    #[serde(default)]
    pub head: TaskHead,
    #[serde(default)]
    pub seed: u64,
    /// Multiplier applied at init to every query projection.
    #[serde(default = "default_wq_scale")]
    pub wq_scale: f64,
}

impl ModelConfig {
    pub fn new(family: Family, input_dim: usize, encoder_depth: usize, hidden: usize) -> Self {
        ModelConfig {
            family,
            input_dim,
            encoder_depth,
            hidden,
            heads: default_heads(),
            inducing: default_inducing(),
            aggregation: None,
            norm: None,
            residual: None,
            block: None,
            decoder_widths: Vec::new(),
            output_dim: 1,
            head: TaskHead::Regression,
            seed: 0,
            wq_scale: 1.0,
        }
    }

    pub fn with_decoder(mut self, widths: &[usize]) -> Self {
        self.decoder_widths = widths.to_vec();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_attention(mut self, heads: usize, inducing: usize) -> Self {
        self.heads = heads;
        self.inducing = inducing;
        self
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: ModelConfig = serde_json::from_str(s)?;
        c.resolved()
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation.unwrap_or(if self.family.is_transformer() { Aggregation::Pma } else { Aggregation::Sum })
    }

    pub fn norm(&self) -> NormKind {
        self.norm.unwrap_or(match self.family {
            Family::DeepSetsPp | Family::SetTransformerPp => NormKind::SetNorm,
            _ => NormKind::None,
        })
    }

    pub fn residual(&self) -> ResidualKind {
        self.residual.unwrap_or(match self.family {
            Family::DeepSetsPp | Family::SetTransformerPp => ResidualKind::Erc,
            _ => ResidualKind::None,
        })
    }

    pub fn block(&self) -> BlockKind {
        self.block.unwrap_or(match self.family {
            Family::DeepSets | Family::PositionalProbe => BlockKind::DsFeedforward,
            Family::DeepSetsPp => BlockKind::DsResidualClean,
            Family::SetTransformer => BlockKind::Isab,
            Family::SetTransformerPp => BlockKind::IsabPP,
        })
    }

    /// Validate and fill every optional field with its effective value.
    pub fn resolved(&self) -> Result<Self> {
        self.validate()?;
        let mut c = self.clone();
        c.aggregation = Some(self.aggregation());
        c.norm = Some(self.norm());
        c.residual = Some(self.residual());
        c.block = Some(self.block());
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |field: &str, v: usize| {
            if v == 0 {
                Err(Error::config(field, "must be positive"))
            } else {
                Ok(())
            }
        };
        pos("input_dim", self.input_dim)?;
        pos("encoder_depth", self.encoder_depth)?;
        pos("hidden", self.hidden)?;
        pos("output_dim", self.output_dim)?;
        if self.decoder_widths.contains(&0) {
            return Err(Error::config("decoder_widths", "widths must be positive"));
        }
        if !(self.wq_scale.is_finite() && self.wq_scale > 0.0) {
            return Err(Error::config("wq_scale", format!("must be positive and finite, got {}", self.wq_scale)));
        }
        let agg = self.aggregation();
        match (self.family.is_transformer(), agg) {
            (true, Aggregation::Pma) | (false, Aggregation::Sum | Aggregation::Max) => {}
            _ => {
                return Err(Error::config(
                    "aggregation",
                    format!("{agg:?} is not available for {:?}", self.family),
                ))
            }
        }
        if self.family == Family::PositionalProbe && agg != Aggregation::Sum {
            return Err(Error::config("aggregation", "the positional probe pools by weighted sum"));
        }
        let block = self.block();
        let allowed = match self.family {
            Family::DeepSets | Family::PositionalProbe => block == BlockKind::DsFeedforward,
            Family::DeepSetsPp => matches!(
                block,
                BlockKind::DsResidualClean | BlockKind::DsResidualNonClean | BlockKind::FreqAdd
            ),
            Family::SetTransformer => block == BlockKind::Isab,
            Family::SetTransformerPp => block == BlockKind::IsabPP,
        };
        if !allowed {
            return Err(Error::config("block", format!("{block:?} does not belong to {:?}", self.family)));
        }
        if self.family.is_transformer() {
            pos("heads", self.heads)?;
            pos("inducing", self.inducing)?;
            if !self.hidden.is_multiple_of(self.heads) {
                return Err(Error::config("heads", format!("{} heads do not divide hidden {}", self.heads, self.hidden)));
            }
        }
        if self.family == Family::SetTransformer && self.residual() != ResidualKind::None {
            return Err(Error::config("residual", "the original set transformer has a fixed projected skip"));
        }
        if matches!(self.family, Family::DeepSets | Family::PositionalProbe) && self.residual() != ResidualKind::None {
            return Err(Error::config("residual", "plain deep sets layers have no residual path"));
        }
        if self.head == TaskHead::Classification && self.output_dim < 2 {
            return Err(Error::config("output_dim", "classification needs at least two classes"));
        }
        Ok(())
    }
}
