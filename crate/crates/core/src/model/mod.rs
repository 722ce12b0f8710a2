//! Spatio-temporal sequence model: a residual 1-D convolutional temporal
//! encoder, a graph-attention spatial encoder over clip features, fusion and
//! a classification (or CTC) head.
//!
//! A [`Model`] owns plain parameters and batch-norm running statistics and is
//! `Sync`; each forward computation happens in its own [`Pass`], which binds
//! the parameters into a fresh autodiff graph.

mod config;
mod gat;
mod head;
mod temporal;

pub use config::{BlockSpec, Decoder, Fusion, ModelConfig};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ctc::{ctc_loss, LabelSequence};
use crate::error::{Error, Result};
use crate::tensor::{
    BatchStats, BoundParams, Gradients, Graph, Mode, ParameterSet, RunningStats, Tensor, Value,
    BN_EPS, BN_MOMENTUM,
};
use crate::trajectory::{FeatureSequence, FEATURE_DIM};

/// Negative slope of the LeakyReLU applied to attention logits.
pub const ATTENTION_NEGATIVE_SLOPE: f64 = 0.2;
pub const PRELU_INIT: f64 = 0.25;

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    /// Uniform in ±sqrt(1 / fan_in).
    FanIn(usize),
    Const(f64),
}

pub(crate) struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Collects the parameter and batch-norm layout of a configuration.
#[derive(Default)]
pub(crate) struct Layout {
    pub params: Vec<ParamSpec>,
    pub norms: Vec<(String, usize)>,
}

impl Layout {
    pub fn param(&mut self, path: String, shape: &[usize], init: Init) {
        self.params.push(ParamSpec {
            path,
            shape: shape.to_vec(),
            init,
        });
    }

    pub fn conv(&mut self, prefix: &str, cout: usize, cin: usize, k: usize) {
        self.param(
            format!("{prefix}.weight"),
            &[cout, cin, k],
            Init::FanIn(cin * k),
        );
    }

    pub fn norm(&mut self, prefix: &str, c: usize) {
        self.param(format!("{prefix}.gamma"), &[c], Init::Const(1.0));
        self.param(format!("{prefix}.beta"), &[c], Init::Const(0.0));
        self.norms.push((prefix.to_string(), c));
    }

    pub fn prelu(&mut self, prefix: &str, c: usize) {
        self.param(format!("{prefix}.slope"), &[c], Init::Const(PRELU_INIT));
    }

    pub fn linear(&mut self, prefix: &str, out: usize, inp: usize, bias: bool) {
        self.param(format!("{prefix}.weight"), &[out, inp], Init::FanIn(inp));
        if bias {
            self.param(format!("{prefix}.bias"), &[out], Init::Const(0.0));
        }
    }

    fn build(cfg: &ModelConfig) -> Self {
        let mut layout = Layout::default();
        temporal::layout(cfg, &mut layout);
        gat::layout(cfg, &mut layout);
        head::layout(cfg, &mut layout);
        layout
    }
}

/// Class probabilities for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
}

impl Prediction {
    /// Up to `k` `(class, probability)` pairs, most probable first; equal
    /// probabilities keep class order.
    pub fn top_k(&self, k: usize) -> Vec<(usize, f64)> {
        let mut idx: Vec<usize> = (0..self.probabilities.len()).collect();
        idx.sort_by(|&a, &b| {
            self.probabilities[b]
                .partial_cmp(&self.probabilities[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx.into_iter()
            .take(k)
            .map(|i| (i, self.probabilities[i]))
            .collect()
    }

    pub fn argmax(&self) -> usize {
        self.top_k(1)[0].0
    }
}

/// Supervision for one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    Sequence(LabelSequence),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParameterSet,
    running: BTreeMap<String, RunningStats>,
}

impl Model {
    /// Fresh model: conv/linear weights uniform in ±sqrt(1/fan_in), biases
    /// and betas 0, gammas 1, PReLU slopes 0.25.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::build(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        for spec in &layout.params {
            let n: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::FanIn(fan_in) => {
                    let bound = (1.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                }
                Init::Const(v) => vec![v; n],
            };
            params.insert(spec.path.clone(), Tensor::new(&spec.shape, data)?);
        }
        let running = layout
            .norms
            .iter()
            .map(|(path, c)| (path.clone(), RunningStats::new(*c)))
            .collect();
        Ok(Self {
            config,
            params,
            running,
        })
    }

    /// Reassembles a model, checking that names and shapes match the layout
    /// implied by `config`.
    pub fn from_parts(
        config: ModelConfig,
        params: ParameterSet,
        running: BTreeMap<String, RunningStats>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = Layout::build(&config);
        if layout.params.len() != params.len() {
            return Err(Error::ConfigMismatch(format!(
                "config implies {} parameters, got {}",
                layout.params.len(),
                params.len()
            )));
        }
        for spec in &layout.params {
            let p = params
                .get(&spec.path)
                .map_err(|_| Error::ConfigMismatch(format!("missing parameter `{}`", spec.path)))?;
            if p.shape() != spec.shape.as_slice() {
                return Err(Error::ConfigMismatch(format!(
                    "parameter `{}` has shape {:?}, config implies {:?}",
                    spec.path,
                    p.shape(),
                    spec.shape
                )));
            }
        }
        if layout.norms.len() != running.len()
            || layout
                .norms
                .iter()
                .any(|(path, c)| running.get(path).map(RunningStats::channels) != Some(*c))
        {
            return Err(Error::ConfigMismatch(
                "batch-norm statistics do not match config".into(),
            ));
        }
        Ok(Self {
            config,
            params,
            running,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn running_stats(&self) -> &BTreeMap<String, RunningStats> {
        &self.running
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }

    /// Opens a forward pass. `seed` drives dropout masks in train mode.
    pub fn pass(&self, mode: Mode, seed: u64) -> Pass<'_> {
        self.pass_with_params(&self.params, mode, seed)
    }

    /// A pass that reads `params` (same layout) instead of the model's own.
    pub fn pass_with_params(&self, params: &ParameterSet, mode: Mode, seed: u64) -> Pass<'_> {
        let graph = Graph::new();
        let bound = params.bind(&graph);
        self.pass_bound(&graph, bound, mode, seed)
    }

    /// A pass on an existing graph with parameters already bound to it, as
    /// handed out by [`crate::tensor::grad_check`].
    pub fn pass_bound(
        &self,
        graph: &Graph,
        params: BoundParams,
        mode: Mode,
        seed: u64,
    ) -> Pass<'_> {
        Pass {
            model: self,
            graph: graph.clone(),
            params,
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bn_updates: Vec::new(),
            attention: Vec::new(),
        }
    }

    /// Eval-mode class probabilities (FC decoder).
    pub fn predict(&self, features: &FeatureSequence) -> Result<Prediction> {
        let mut pass = self.pass(Mode::Eval, 0);
        let logits = pass.forward(features)?.logits;
        Ok(Prediction {
            probabilities: logits.softmax()?.data(),
        })
    }

    /// Eval-mode per-clip log-posteriors `[l × V]` (CTC decoder).
    pub fn frame_log_posteriors(&self, features: &FeatureSequence) -> Result<Tensor> {
        let mut pass = self.pass(Mode::Eval, 0);
        Ok(pass.forward(features)?.logits.log_softmax()?.tensor())
    }

    /// Folds train-mode batch statistics into the running averages, in order.
    pub fn apply_bn_updates(&mut self, updates: &[(String, BatchStats)]) {
        for (path, stats) in updates {
            if let Some(rs) = self.running.get_mut(path) {
                rs.update(stats, BN_MOMENTUM);
            }
        }
    }

    /// Rounds every parameter and statistic to `f32` precision, matching what a
    /// checkpoint stores.
    pub fn quantize_f32(&mut self) {
        for (_, t) in self.params.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        for rs in self.running.values_mut() {
            rs.mean
                .iter_mut()
                .chain(rs.var.iter_mut())
                .for_each(|v| *v = *v as f32 as f64);
        }
    }

    /// Sets every parameter whose path starts with `prefix` to zero.
    pub fn zero_params(&mut self, prefix: &str) {
        for (path, t) in self.params.iter_mut() {
            if path.starts_with(prefix) {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
}

/// Output of [`Pass::forward`].
pub struct ForwardOutput {
    /// `[1 × classes]` for the FC decoder, `[l × V]` for CTC.
    pub logits: Value,
    /// Final temporal clip features Z.
    pub temporal: Value,
    /// Spatial clip features Z̄ of the final encoder, when one runs on Z.
    pub spatial: Option<Value>,
}

/// One forward (and optionally backward) computation over a [`Model`].
pub struct Pass<'m> {
    model: &'m Model,
    graph: Graph,
    params: BoundParams,
    mode: Mode,
    rng: ChaCha8Rng,
    bn_updates: Vec<(String, BatchStats)>,
    attention: Vec<Value>,
}

impl<'m> Pass<'m> {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn config(&self) -> &'m ModelConfig {
        &self.model.config
    }

    pub(crate) fn param(&self, path: &str) -> Result<Value> {
        Ok(self.params.get(path)?.clone())
    }

    /// Feature rows as a graph constant, padded by repeating the last row up
    /// to the encoder's downsampling factor.
    pub fn input(&self, features: &FeatureSequence) -> Result<Value> {
        if features.is_empty() {
            return Err(Error::EmptyInput("feature sequence has no rows".into()));
        }
        let min_rows = self.config().downsampling().max(1);
        let mut x = features.to_tensor();
        if features.len() < min_rows {
            let mut data = x.into_data();
            let last = data[data.len() - FEATURE_DIM..].to_vec();
            while data.len() < min_rows * FEATURE_DIM {
                data.extend_from_slice(&last);
            }
            x = Tensor::new(&[min_rows, FEATURE_DIM], data)?;
        }
        Ok(self.graph.constant(x))
    }

    pub(crate) fn dropout(&mut self, x: &Value) -> Result<Value> {
        let p = self.model.config.dropout;
        Ok(x.dropout(p, self.mode, &mut self.rng)?)
    }

    /// Batch normalization with statistics pooled over the rows of every
    /// sample in the batch.
    pub(crate) fn batch_norm(&mut self, prefix: &str, xs: &[Value]) -> Result<Vec<Value>> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let running =
            self.model.running.get(prefix).ok_or_else(|| {
                Error::InvalidConfig(format!("no running statistics for `{prefix}`"))
            })?;
        let joined = match xs {
            [x] => x.clone(),
            _ => Value::concat_rows(xs)?,
        };
        let (y, stats) = joined.batch_norm1d_stats(&gamma, &beta, running, self.mode, BN_EPS)?;
        if let Some(stats) = stats {
            self.bn_updates.push((prefix.to_string(), stats));
        }
        if xs.len() == 1 {
            return Ok(vec![y]);
        }
        let mut start = 0;
        xs.iter()
            .map(|x| {
                let rows = x.shape()[0];
                let part = y.slice_rows(start, rows)?;
                start += rows;
                Ok(part)
            })
            .collect()
    }

    pub(crate) fn prelu(&self, prefix: &str, x: &Value) -> Result<Value> {
        Ok(x.prelu(&self.param(&format!("{prefix}.slope"))?)?)
    }

    /// The full model: temporal encoding computed once and shared by the
    /// spatial encoder and the fusion head.
    pub fn forward(&mut self, features: &FeatureSequence) -> Result<ForwardOutput> {
        Ok(self.forward_batch(&[features])?.remove(0))
    }

    /// Forward over several samples in one graph. Samples only interact
    /// through batch-norm statistics in train mode.
    pub fn forward_batch(&mut self, batch: &[&FeatureSequence]) -> Result<Vec<ForwardOutput>> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        let xs = batch
            .iter()
            .map(|f| self.input(f))
            .collect::<Result<Vec<_>>>()?;
        let cfg = self.config();
        let n = cfg.stages.len();
        match cfg.fusion {
            Fusion::A => {
                let zs = self.temporal_blocks_batch(&xs, 0..n, true)?;
                zs.into_iter()
                    .map(|z| {
                        Ok(ForwardOutput {
                            logits: self.fuse_and_classify(&z, None)?,
                            temporal: z,
                            spatial: None,
                        })
                    })
                    .collect()
            }
            Fusion::B => {
                let mids = self.temporal_blocks_batch(&xs, 0..cfg.mid_blocks, true)?;
                let merged = mids
                    .iter()
                    .map(|m| Ok(m.add(&self.stroke_gat_encode(m)?)?))
                    .collect::<Result<Vec<_>>>()?;
                let zs = self.temporal_blocks_batch(&merged, cfg.mid_blocks..n, false)?;
                zs.into_iter()
                    .map(|z| {
                        Ok(ForwardOutput {
                            logits: self.fuse_and_classify(&z, None)?,
                            temporal: z,
                            spatial: None,
                        })
                    })
                    .collect()
            }
            Fusion::C | Fusion::D => {
                let zs = self.temporal_blocks_batch(&xs, 0..n, true)?;
                zs.into_iter()
                    .map(|z| {
                        let zbar = self.stroke_gat_encode(&z)?;
                        Ok(ForwardOutput {
                            logits: self.fuse_and_classify(&z, Some(&zbar))?,
                            temporal: z,
                            spatial: Some(zbar),
                        })
                    })
                    .collect()
            }
        }
    }

    /// Cross-entropy for a class target, CTC loss for a sequence target.
    pub fn loss(&self, logits: &Value, target: &Target) -> Result<Value> {
        match (target, self.config().decoder) {
            (Target::Class(k), Decoder::Fc { .. }) => {
                if *k >= self.config().num_classes {
                    return Err(Error::InvalidConfig(format!("class {k} out of range")));
                }
                Ok(logits.cross_entropy(*k)?)
            }
            (Target::Sequence(seq), Decoder::Ctc) => Ok(ctc_loss(&logits.log_softmax()?, seq)?),
            _ => Err(Error::InvalidConfig(
                "target kind does not match the decoder".into(),
            )),
        }
    }

    /// Parameter gradients after `backward` on a value of this pass.
    pub fn gradients(&self) -> Gradients {
        self.params.gradients()
    }

    /// Attention matrices `[l × l]` recorded so far, one per layer and head.
    pub fn attention(&self) -> &[Value] {
        &self.attention
    }

    /// Train-mode batch statistics gathered by this pass, in layer order.
    pub fn into_bn_updates(self) -> Vec<(String, BatchStats)> {
        self.bn_updates
    }
}
