//! Model building blocks recorded onto a [`Graph`].
//!
//! A layer owns only its shape configuration and a name prefix; weights live
//! in a [`ParamStore`] under `{prefix}.…` so whole models checkpoint as one
//! flat name → tensor map.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, Init, NodeId, Padding, ParamStore, Scalar};

/// Gated multimodal unit.
///
/// Per time step: `h_k = tanh(W_hk x_k)`, `z_k = σ(W_zk [x_1..x_K])`,
/// output `Σ_k h_k ⊙ z_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmu {
    pub prefix: String,
    pub input_dims: Vec<usize>,
    pub d_model: usize,
}

impl Gmu {
    pub fn new(prefix: impl Into<String>, input_dims: Vec<usize>, d_model: usize) -> Self {
        Gmu {
            prefix: prefix.into(),
            input_dims,
            d_model,
        }
    }

    pub fn wh(&self, k: usize) -> String {
        format!("{}.wh{k}", self.prefix)
    }

    pub fn wz(&self, k: usize) -> String {
        format!("{}.wz{k}", self.prefix)
    }

    fn concat_dim(&self) -> usize {
        self.input_dims.iter().sum()
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: Init, rng: &mut ChaCha8Rng) {
        let total = self.concat_dim();
        for (k, &d) in self.input_dims.iter().enumerate() {
            store.insert(self.wh(k), init.tensor(&[self.d_model, d, 1], d, rng));
            store.insert(self.wz(k), init.tensor(&[self.d_model, total, 1], total, rng));
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        inputs: &[NodeId],
    ) -> Result<NodeId> {
        if inputs.len() != self.input_dims.len() || inputs.is_empty() {
            return Err(Error::Shape(format!(
                "GMU configured for {} modalities, got {}",
                self.input_dims.len(),
                inputs.len()
            )));
        }
        let joint = if inputs.len() == 1 {
            inputs[0]
        } else {
            g.concat_rows(inputs)?
        };
        let mut out = None;
        for (k, &x) in inputs.iter().enumerate() {
            let wh = g.param(store, &self.wh(k))?;
            let wz = g.param(store, &self.wz(k))?;
            let h = g.conv1d(x, wh, None, 1, Padding::AcausalSame)?;
            let h = g.tanh(h);
            let z = g.conv1d(joint, wz, None, 1, Padding::AcausalSame)?;
            let z = g.sigmoid(z);
            let o = g.mul(h, z)?;
            out = Some(match out {
                None => o,
                Some(acc) => g.add(acc, o)?,
            });
        }
        Ok(out.expect("at least one modality"))
    }
}

/// Dilated residual layer: `d̂ = ReLU(W1 ∗ d + b1)`, `d' = d + W2 ∗ d̂ + b2`
/// with `W1` dilated and `W2` a 1×1 convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub prefix: String,
    pub channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl ResidualBlock {
    pub fn w1(&self) -> String {
        format!("{}.w1", self.prefix)
    }
    pub fn b1(&self) -> String {
        format!("{}.b1", self.prefix)
    }
    pub fn w2(&self) -> String {
        format!("{}.w2", self.prefix)
    }
    pub fn b2(&self) -> String {
        format!("{}.b2", self.prefix)
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: Init, rng: &mut ChaCha8Rng) {
        let c = self.channels;
        let fan1 = c * self.kernel;
        store.insert(self.w1(), init.tensor(&[c, c, self.kernel], fan1, rng));
        store.insert(self.b1(), init.tensor(&[c], fan1, rng));
        store.insert(self.w2(), init.tensor(&[c, c, 1], c, rng));
        store.insert(self.b2(), init.tensor(&[c], c, rng));
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        d_prev: NodeId,
    ) -> Result<NodeId> {
        let rows = g.value(d_prev).shape().first().copied().unwrap_or(0);
        if rows != self.channels {
            return Err(Error::Shape(format!(
                "residual block {} expects {} channels, got {rows}",
                self.prefix, self.channels
            )));
        }
        let w1 = g.param(store, &self.w1())?;
        let b1 = g.param(store, &self.b1())?;
        let w2 = g.param(store, &self.w2())?;
        let b2 = g.param(store, &self.b2())?;
        let pre = g.conv1d(d_prev, w1, Some(b1), self.dilation, self.padding)?;
        let hidden = g.relu(pre);
        let proj = g.conv1d(hidden, w2, Some(b2), 1, Padding::AcausalSame)?;
        g.add(d_prev, proj)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub input_dim: usize,
    pub channels: usize,
    pub layers: usize,
    pub kernel: usize,
    pub n_classes: usize,
    pub padding: Padding,
}

impl StageConfig {
    /// Input positions that can influence one output position.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * ((1usize << self.layers) - 1)
    }
}

/// Single-stage TCN: 1×1 input projection, `L` dilated residual layers with
/// dilation `2^(l-1)`, and a 1×1 projection to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub prefix: String,
    pub cfg: StageConfig,
}

impl Stage {
    pub fn new(prefix: impl Into<String>, cfg: StageConfig) -> Self {
        Stage {
            prefix: prefix.into(),
            cfg,
        }
    }

    pub fn blocks(&self) -> Vec<ResidualBlock> {
        (1..=self.cfg.layers)
            .map(|l| ResidualBlock {
                prefix: format!("{}.layer{l}", self.prefix),
                channels: self.cfg.channels,
                kernel: self.cfg.kernel,
                dilation: 1 << (l - 1),
                padding: self.cfg.padding,
            })
            .collect()
    }

    pub fn input_w(&self) -> String {
        format!("{}.in.w", self.prefix)
    }
    pub fn input_b(&self) -> String {
        format!("{}.in.b", self.prefix)
    }
    pub fn output_w(&self) -> String {
        format!("{}.out.w", self.prefix)
    }
    pub fn output_b(&self) -> String {
        format!("{}.out.b", self.prefix)
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: Init, rng: &mut ChaCha8Rng) {
        let c = &self.cfg;
        store.insert(self.input_w(), init.tensor(&[c.channels, c.input_dim, 1], c.input_dim, rng));
        store.insert(self.input_b(), init.tensor(&[c.channels], c.input_dim, rng));
        for b in self.blocks() {
            b.init(store, init, rng);
        }
        store.insert(self.output_w(), init.tensor(&[c.n_classes, c.channels, 1], c.channels, rng));
        store.insert(self.output_b(), init.tensor(&[c.n_classes], c.channels, rng));
    }

    /// Raw class logits (classes × T).
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        input: NodeId,
    ) -> Result<NodeId> {
        if self.cfg.layers == 0 {
            return Err(Error::InvalidArgument("stage needs at least one layer".into()));
        }
        let w = g.param(store, &self.input_w())?;
        let b = g.param(store, &self.input_b())?;
        let mut d = g.conv1d(input, w, Some(b), 1, Padding::AcausalSame)?;
        for block in self.blocks() {
            d = block.forward(g, store, d)?;
        }
        let w = g.param(store, &self.output_w())?;
        let b = g.param(store, &self.output_b())?;
        g.conv1d(d, w, Some(b), 1, Padding::AcausalSame)
    }
}

/// Stacked stages; stage `s > 1` refines the softmax of stage `s - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MsTcn {
    pub stages: Vec<Stage>,
}

impl MsTcn {
    /// `n_stages` stages sharing `cfg`, the first reading `cfg.input_dim`
    /// features and later ones reading class probabilities.
    pub fn new(prefix: &str, cfg: StageConfig, n_stages: usize) -> Self {
        let stages = (1..=n_stages)
            .map(|s| {
                let mut c = cfg;
                if s > 1 {
                    c.input_dim = cfg.n_classes;
                }
                Stage::new(format!("{prefix}.stage{s}"), c)
            })
            .collect();
        MsTcn { stages }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: Init, rng: &mut ChaCha8Rng) {
        for s in &self.stages {
            s.init(store, init, rng);
        }
    }

    /// Logits of every stage, first to last.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        input: NodeId,
    ) -> Result<Vec<NodeId>> {
        if self.stages.is_empty() {
            return Err(Error::InvalidArgument("MS-TCN needs at least one stage".into()));
        }
        let mut out = Vec::with_capacity(self.stages.len());
        let mut x = input;
        for (i, stage) in self.stages.iter().enumerate() {
            if i > 0 {
                x = g.softmax_cols(*out.last().expect("previous stage"));
            }
            out.push(stage.forward(g, store, x)?);
        }
        Ok(out)
    }
}
