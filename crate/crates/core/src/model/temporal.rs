use std::ops::Range;

use super::{BlockSpec, Layout, ModelConfig, Pass};
use crate::error::Result;
use crate::tensor::Value;
use crate::trajectory::FEATURE_DIM;

pub(super) fn layout(cfg: &ModelConfig, l: &mut Layout) {
    let c = cfg.channels;
    l.conv("temporal.stem.conv", c, FEATURE_DIM, 3);
    l.norm("temporal.stem.bn", c);
    l.prelu("temporal.stem.act", c);
    for (i, block) in cfg.stages.iter().enumerate() {
        let p = format!("temporal.block{i}");
        l.conv(&format!("{p}.conv1"), c, c, 3);
        l.norm(&format!("{p}.bn1"), c);
        l.prelu(&format!("{p}.act1"), c);
        l.conv(&format!("{p}.conv2"), c, c, 3);
        l.norm(&format!("{p}.bn2"), c);
        if let BlockSpec::Reduce { .. } = block {
            l.conv(&format!("{p}.proj"), c, c, 1);
            l.norm(&format!("{p}.proj_bn"), c);
        }
        l.prelu(&format!("{p}.act_out"), c);
    }
}

/// Per-sample sequences flowing through the encoder together.
pub type Batch = Vec<Value>;

impl Pass<'_> {
    fn conv_bn(
        &mut self,
        prefix: &str,
        xs: &[Value],
        stride: usize,
        padding: usize,
        bn: &str,
    ) -> Result<Batch> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let ys = xs
            .iter()
            .map(|x| Ok(x.conv1d(&w, stride, padding)?))
            .collect::<Result<Batch>>()?;
        self.batch_norm(bn, &ys)
    }

    fn prelu_all(&self, prefix: &str, xs: &[Value]) -> Result<Batch> {
        xs.iter().map(|x| self.prelu(prefix, x)).collect()
    }

    fn block(&mut self, i: usize, spec: BlockSpec, xs: &[Value]) -> Result<Batch> {
        let p = format!("temporal.block{i}");
        let stride = match spec {
            BlockSpec::Normal => 1,
            BlockSpec::Reduce { stride } => stride,
        };
        let h = self.conv_bn(&format!("{p}.conv1"), xs, stride, 1, &format!("{p}.bn1"))?;
        let h = self.prelu_all(&format!("{p}.act1"), &h)?;
        let h = h
            .iter()
            .map(|v| self.dropout(v))
            .collect::<Result<Batch>>()?;
        let h = self.conv_bn(&format!("{p}.conv2"), &h, 1, 1, &format!("{p}.bn2"))?;
        let shortcut = match spec {
            BlockSpec::Normal => xs.to_vec(),
            BlockSpec::Reduce { stride } => {
                self.conv_bn(&format!("{p}.proj"), xs, stride, 0, &format!("{p}.proj_bn"))?
            }
        };
        let sum = h
            .iter()
            .zip(&shortcut)
            .map(|(a, b)| Ok(a.add(b)?))
            .collect::<Result<Batch>>()?;
        self.prelu_all(&format!("{p}.act_out"), &sum)
    }

    /// Runs temporal blocks `range` over a batch; `stem` prepends the input
    /// stem.
    pub fn temporal_blocks_batch(
        &mut self,
        xs: &[Value],
        range: Range<usize>,
        stem: bool,
    ) -> Result<Batch> {
        let mut h = if stem {
            let h = self.conv_bn("temporal.stem.conv", xs, 1, 1, "temporal.stem.bn")?;
            self.prelu_all("temporal.stem.act", &h)?
        } else {
            xs.to_vec()
        };
        let stages = self.config().stages.clone();
        for i in range {
            h = self.block(i, stages[i], &h)?;
        }
        Ok(h)
    }

    /// Temporal clip features Z `[l × c]` from padded feature rows `[T × 8]`.
    pub fn temporal_encode(&mut self, x: &Value) -> Result<Value> {
        let n = self.config().stages.len();
        Ok(self
            .temporal_blocks_batch(std::slice::from_ref(x), 0..n, true)?
            .remove(0))
    }
}
