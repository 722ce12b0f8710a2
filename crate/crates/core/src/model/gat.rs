use super::{Layout, ModelConfig, Pass, ATTENTION_NEGATIVE_SLOPE};
use crate::error::Result;
use crate::tensor::Value;

pub(super) fn layout(cfg: &ModelConfig, l: &mut Layout) {
    let (c, d) = (cfg.channels, cfg.head_dim());
    for layer in 0..cfg.effective_gat_layers() {
        for h in 0..cfg.heads {
            let p = format!("gat.layer{layer}.head{h}");
            l.param(format!("{p}.weight"), &[d, c], super::Init::FanIn(c));
            l.param(format!("{p}.att_src"), &[d, 1], super::Init::FanIn(2 * d));
            l.param(format!("{p}.att_dst"), &[d, 1], super::Init::FanIn(2 * d));
        }
        l.prelu(&format!("gat.layer{layer}.act"), c);
    }
}

impl Pass<'_> {
    fn attention_head(&mut self, prefix: &str, z: &Value) -> Result<Value> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let h = z.linear(&w, None)?;
        let src = h.matmul(&self.param(&format!("{prefix}.att_src"))?)?;
        let dst = h.matmul(&self.param(&format!("{prefix}.att_dst"))?)?;
        let alpha = src
            .outer_add(&dst)?
            .leaky_relu(ATTENTION_NEGATIVE_SLOPE)?
            .softmax()?;
        self.attention.push(alpha.clone());
        Ok(alpha.matmul(&h)?)
    }

    /// Spatial clip features Z̄ `[l × c]`: multi-head attention over the fully
    /// connected graph of clips, heads concatenated, then PReLU.
    pub fn stroke_gat_encode(&mut self, z: &Value) -> Result<Value> {
        let cfg = self.config();
        let mut h = z.clone();
        for layer in 0..cfg.effective_gat_layers() {
            let heads = (0..cfg.heads)
                .map(|k| self.attention_head(&format!("gat.layer{layer}.head{k}"), &h))
                .collect::<Result<Vec<_>>>()?;
            h = self.prelu(
                &format!("gat.layer{layer}.act"),
                &Value::concat_cols(&heads)?,
            )?;
        }
        Ok(h)
    }
}
