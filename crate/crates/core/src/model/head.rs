use super::{Decoder, Fusion, Layout, ModelConfig, Pass};
use crate::error::{Error, Result};
use crate::tensor::Value;

pub(super) fn layout(cfg: &ModelConfig, l: &mut Layout) {
    match cfg.decoder {
        Decoder::Fc { depth } => {
            let mut inp = cfg.channels;
            for k in 0..depth {
                let out = if k + 1 == depth {
                    cfg.num_classes
                } else {
                    cfg.head_hidden
                };
                l.linear(&format!("head.fc{k}"), out, inp, true);
                if k + 1 < depth {
                    l.prelu(&format!("head.act{k}"), out);
                }
                inp = out;
            }
        }
        Decoder::Ctc => l.linear("head.ctc", cfg.num_classes, cfg.channels, true),
    }
}

impl Pass<'_> {
    fn linear(&self, prefix: &str, x: &Value) -> Result<Value> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        Ok(x.linear(&w, Some(&b))?)
    }

    /// Combines Z and Z̄ per the configured strategy and returns logits:
    /// `[1 × classes]` for the FC decoder, `[l × V]` for CTC.
    pub fn fuse_and_classify(&mut self, z: &Value, zbar: Option<&Value>) -> Result<Value> {
        let cfg = self.config();
        let fused = match (cfg.fusion, zbar) {
            (Fusion::A | Fusion::B, _) => z.clone(),
            (Fusion::C, Some(zbar)) => zbar.clone(),
            (Fusion::D, Some(zbar)) => zbar.add(z)?,
            (f, None) => {
                return Err(Error::InvalidConfig(format!(
                    "fusion {f:?} needs spatial features"
                )))
            }
        };
        match cfg.decoder {
            Decoder::Fc { depth } => {
                let mut h = fused.mean_rows()?;
                for k in 0..depth {
                    h = self.dropout(&h)?;
                    h = self.linear(&format!("head.fc{k}"), &h)?;
                    if k + 1 < depth {
                        h = self.prelu(&format!("head.act{k}"), &h)?;
                    }
                }
                Ok(h)
            }
            Decoder::Ctc => {
                let h = self.dropout(&fused)?;
                self.linear("head.ctc", &h)
            }
        }
    }
}
