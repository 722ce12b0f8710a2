use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One residual block of the temporal encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BlockSpec {
    /// Two k=3 convolutions with an identity shortcut.
    Normal,
    /// Like `Normal` plus a 1×1 projection shortcut; stride 2 halves time.
    Reduce { stride: usize },
}

/// How temporal (Z) and spatial (Z̄) clip features are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Fusion {
    /// Temporal encoder only.
    A,
    /// Graph attention on mid-level temporal features, added back before
    /// the remaining temporal stages.
    B,
    /// Graph attention on the final Z; classify from Z̄ alone.
    C,
    /// Classify from mean(Z̄ + Z).
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Decoder {
    /// Fully connected head over the pooled clip feature, 1 to 3 layers.
    Fc { depth: usize },
    /// Per-clip linear layer producing frame posteriors; class 0 is blank.
    Ctc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub channels: usize,
    pub stages: Vec<BlockSpec>,
    pub gat_layers: usize,
    pub heads: usize,
    pub fusion: Fusion,
    pub head_hidden: usize,
    pub decoder: Decoder,
    /// Output units; includes the blank in CTC mode.
    pub num_classes: usize,
    pub dropout: f64,
    /// Strategy B only: number of temporal blocks run before the graph
    /// attention branch.
    pub mid_blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk(20)
    }
}

impl ModelConfig {
    /// Desk-scale defaults: c = 64, 8 heads, one attention layer, fusion D,
    /// 2-layer FC head.
    pub fn desk(num_classes: usize) -> Self {
        let stages = (0..3)
            .flat_map(|_| [BlockSpec::Normal, BlockSpec::Reduce { stride: 2 }])
            .collect();
        Self {
            channels: 64,
            stages,
            gat_layers: 1,
            heads: 8,
            fusion: Fusion::D,
            head_hidden: 128,
            decoder: Decoder::Fc { depth: 2 },
            num_classes,
            dropout: 0.2,
            mid_blocks: 4,
        }
    }

    /// Attention layers actually built; strategy A has none.
    pub fn effective_gat_layers(&self) -> usize {
        if self.fusion == Fusion::A {
            0
        } else {
            self.gat_layers
        }
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    /// Product of all strides: input rows per output clip.
    pub fn downsampling(&self) -> usize {
        self.stages
            .iter()
            .map(|b| match b {
                BlockSpec::Normal => 1,
                BlockSpec::Reduce { stride } => *stride,
            })
            .product()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.channels == 0 {
            return bad("channels must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        for b in &self.stages {
            if let BlockSpec::Reduce { stride } = b {
                if !(1..=2).contains(stride) {
                    return bad(format!("reduce stride must be 1 or 2, got {stride}"));
                }
            }
        }
        if self.fusion != Fusion::A {
            if self.gat_layers == 0 {
                return bad(format!(
                    "fusion {:?} needs at least one attention layer",
                    self.fusion
                ));
            }
            if self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
                return bad(format!(
                    "channels ({}) must be divisible by heads ({})",
                    self.channels, self.heads
                ));
            }
        }
        if self.fusion == Fusion::B && self.mid_blocks > self.stages.len() {
            return bad(format!(
                "mid_blocks {} exceeds {} temporal blocks",
                self.mid_blocks,
                self.stages.len()
            ));
        }
        match self.decoder {
            Decoder::Fc { depth } if !(1..=3).contains(&depth) => {
                bad(format!("decoder depth must be 1..=3, got {depth}"))
            }
            Decoder::Fc { depth } if depth > 1 && self.head_hidden == 0 => {
                bad("head_hidden must be positive".into())
            }
            Decoder::Ctc if matches!(self.fusion, Fusion::B | Fusion::C) => {
                bad("CTC decoding is defined for fusion A and D only".into())
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_defaults() {
        let c = ModelConfig::desk(20);
        c.validate().unwrap();
        assert_eq!(c.downsampling(), 8);
        assert_eq!(c.head_dim(), 8);
    }

    #[test]
    fn rejects_bad_configs() {
        let base = ModelConfig::desk(20);
        let cases = [
            ModelConfig {
                heads: 7,
                ..base.clone()
            },
            ModelConfig {
                gat_layers: 0,
                ..base.clone()
            },
            ModelConfig {
                decoder: Decoder::Fc { depth: 4 },
                ..base.clone()
            },
            ModelConfig {
                num_classes: 1,
                ..base.clone()
            },
            ModelConfig {
                dropout: 1.0,
                ..base.clone()
            },
            ModelConfig {
                fusion: Fusion::C,
                decoder: Decoder::Ctc,
                ..base.clone()
            },
        ];
        for c in cases {
            assert!(
                matches!(c.validate(), Err(Error::InvalidConfig(_))),
                "{c:?}"
            );
        }
        let a = ModelConfig {
            fusion: Fusion::A,
            gat_layers: 3,
            heads: 7,
            ..base
        };
        a.validate().unwrap();
        assert_eq!(a.effective_gat_layers(), 0);
    }

    #[test]
    fn json_round_trip_rejects_unknown_keys() {
        let c = ModelConfig::desk(5);
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ModelConfig>(&s).unwrap(), c);
        assert!(serde_json::from_str::<ModelConfig>(r#"{"chanels": 3}"#).is_err());
        let partial: ModelConfig = serde_json::from_str(r#"{"channels": 16, "heads": 4}"#).unwrap();
        assert_eq!(partial.channels, 16);
        assert_eq!(partial.fusion, Fusion::D);
    }
}
