//! Speech and image phase models, their training loop and the merged
//! inference that switches from one to the other.
//!
//! Both models end in a multi-stage TCN whose input carries an embedding of
//! the previous second's label (the autoregressive feed). Index
//! `n_classes` of the embedding table is the start token.

mod merge;
mod train;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::N_CLASSES;
use crate::error::{Error, Result};
use crate::features::{ChannelId, OperationRecord, LOG_DIM};
use crate::nn::checkpoint::{load_checkpoint, save_checkpoint};
use crate::nn::{Gmu, Graph, Init, MsTcn, NodeId, Padding, ParamStore, ResidualBlock, Scalar, StageConfig, Tensor};

pub use merge::{merged_infer, switch_time, MergedOutput, SwitchConfig};
pub use train::{history_csv, train, EpochRecord, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TcnSpec {
    pub stages: usize,
    pub layers: usize,
    pub channels: usize,
    pub kernel: usize,
}

impl TcnSpec {
    pub fn speech() -> Self {
        TcnSpec {
            stages: 2,
            layers: 7,
            channels: 64,
            kernel: 3,
        }
    }

    pub fn image() -> Self {
        TcnSpec {
            layers: 4,
            ..Self::speech()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.layers == 0 || self.channels == 0 || self.kernel % 2 == 0 {
            return Err(Error::InvalidArgument(format!("invalid TCN spec {self:?}")));
        }
        Ok(())
    }
}

impl Default for TcnSpec {
    fn default() -> Self {
        Self::speech()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechSpec {
    pub channels: Vec<ChannelId>,
    /// Feature width of each entry of `channels`.
    pub input_dims: Vec<usize>,
    pub refine_blocks: usize,
    pub d_model: usize,
    pub d_ar: usize,
    pub tcn: TcnSpec,
}

impl SpeechSpec {
    /// All three speech channels with the published widths.
    pub fn new(channels: Vec<ChannelId>, input_dims: Vec<usize>) -> Self {
        SpeechSpec {
            channels,
            input_dims,
            refine_blocks: 2,
            d_model: 256,
            d_ar: 32,
            tcn: TcnSpec::speech(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSpec {
    pub xray_dim: usize,
    pub use_xray: bool,
    pub use_log: bool,
    pub d_model: usize,
    pub d_ar: usize,
    pub tcn: TcnSpec,
}

impl ImageSpec {
    pub fn new(xray_dim: usize) -> Self {
        ImageSpec {
            xray_dim,
            use_xray: true,
            use_log: true,
            d_model: 256,
            d_ar: 32,
            tcn: TcnSpec::image(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.use_xray as usize * self.xray_dim + self.use_log as usize * LOG_DIM
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Speech(SpeechSpec),
    Image(ImageSpec),
}

impl ModelSpec {
    pub fn prefix(&self) -> &'static str {
        match self {
            ModelSpec::Speech(_) => "speech",
            ModelSpec::Image(_) => "image",
        }
    }

    fn d_ar(&self) -> usize {
        match self {
            ModelSpec::Speech(s) => s.d_ar,
            ModelSpec::Image(s) => s.d_ar,
        }
    }

    fn d_model(&self) -> usize {
        match self {
            ModelSpec::Speech(s) => s.d_model,
            ModelSpec::Image(s) => s.d_model,
        }
    }

    fn tcn_spec(&self) -> TcnSpec {
        match self {
            ModelSpec::Speech(s) => s.tcn,
            ModelSpec::Image(s) => s.tcn,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tcn_spec().validate()?;
        if self.d_model() == 0 {
            return Err(Error::InvalidArgument("d_model must be positive".into()));
        }
        match self {
            ModelSpec::Speech(s) => {
                if s.channels.is_empty() || s.channels.len() != s.input_dims.len() {
                    return Err(Error::InvalidArgument(
                        "speech model needs one input width per channel".into(),
                    ));
                }
                if let Some(c) = s.channels.iter().find(|c| !ChannelId::SPEECH.contains(c)) {
                    return Err(Error::InvalidArgument(format!("{c} is not a speech channel")));
                }
                if s.input_dims.contains(&0) {
                    return Err(Error::InvalidArgument("input widths must be positive".into()));
                }
            }
            ModelSpec::Image(s) => {
                if s.input_dim() == 0 {
                    return Err(Error::InvalidArgument("image model has no inputs".into()));
                }
            }
        }
        Ok(())
    }

    pub fn tcn(&self) -> MsTcn {
        let t = self.tcn_spec();
        MsTcn::new(
            &format!("{}.tcn", self.prefix()),
            StageConfig {
                input_dim: self.d_model() + self.d_ar(),
                channels: t.channels,
                layers: t.layers,
                kernel: t.kernel,
                n_classes: N_CLASSES,
                padding: Padding::AcausalSame,
            },
            t.stages,
        )
    }

    fn refine_blocks(&self, k: usize) -> Vec<ResidualBlock> {
        let ModelSpec::Speech(s) = self else {
            return Vec::new();
        };
        (0..s.refine_blocks)
            .map(|b| ResidualBlock {
                prefix: format!("speech.refine.{}.{b}", s.channels[k]),
                channels: s.input_dims[k],
                kernel: 1,
                dilation: 1,
                padding: Padding::AcausalSame,
            })
            .collect()
    }

    fn gmu(&self) -> Option<Gmu> {
        match self {
            ModelSpec::Speech(s) => Some(Gmu::new("speech.gmu", vec![s.d_model; s.channels.len()], s.d_model)),
            ModelSpec::Image(_) => None,
        }
    }

    fn ar_table(&self) -> String {
        format!("{}.ar.table", self.prefix())
    }

    /// Initial parameters, deterministic in `seed`.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        match self {
            ModelSpec::Speech(s) => {
                for k in 0..s.channels.len() {
                    for b in self.refine_blocks(k) {
                        b.init(&mut store, Init::FanIn, &mut rng);
                    }
                }
                self.gmu().expect("speech").init(&mut store, Init::FanIn, &mut rng);
            }
            ModelSpec::Image(s) => {
                let d = s.input_dim();
                store.insert("image.input.w", Init::FanIn.tensor(&[s.d_model, d, 1], d, &mut rng));
                store.insert("image.input.b", Init::FanIn.tensor(&[s.d_model], d, &mut rng));
            }
        }
        if self.d_ar() > 0 {
            store.insert(self.ar_table(), Init::FanIn.tensor(&[self.d_ar(), N_CLASSES + 1], 1, &mut rng));
        }
        self.tcn().init(&mut store, Init::FanIn, &mut rng);
        Ok(store)
    }

    /// Model inputs of a whole operation, each `D × T`.
    pub fn inputs(&self, op: &OperationRecord) -> Result<Vec<Tensor<f32>>> {
        match self {
            ModelSpec::Speech(s) => s
                .channels
                .iter()
                .zip(&s.input_dims)
                .map(|(&ch, &d)| {
                    let seq = op.speech_channel(ch)?;
                    if seq.dim() != d {
                        return Err(Error::Shape(format!(
                            "{}: {ch} has {} dims, model expects {d}",
                            op.operation_id,
                            seq.dim()
                        )));
                    }
                    Ok(seq.to_tensor())
                })
                .collect(),
            ModelSpec::Image(s) => {
                if op.xray_dim != s.xray_dim || op.image.dim() != s.xray_dim + LOG_DIM {
                    return Err(Error::Shape(format!(
                        "{}: image input is {}+{} dims, model expects {}+{LOG_DIM}",
                        op.operation_id,
                        op.xray_dim,
                        op.image.dim() - op.xray_dim.min(op.image.dim()),
                        s.xray_dim
                    )));
                }
                let full = op.image.to_tensor();
                let lo = if s.use_xray { 0 } else { s.xray_dim };
                let hi = if s.use_log { op.image.dim() } else { s.xray_dim };
                let t = op.seconds();
                let rows = Tensor::from_fn2(hi - lo, t, |r, c| full.at2(lo + r, c));
                Ok(vec![rows])
            }
        }
    }

    /// Records one segment's forward pass; returns per-stage logits.
    /// `feed[t]` is the label fed at second `t` (already shifted).
    pub fn record<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        inputs: &[NodeId],
        feed: &[usize],
    ) -> Result<Vec<NodeId>> {
        let t = g.value(*inputs.first().ok_or(Error::Empty("model inputs"))?).cols();
        if feed.len() != t {
            return Err(Error::Shape(format!("feed covers {} s, inputs {t} s", feed.len())));
        }
        let fused = match self {
            ModelSpec::Speech(s) => {
                if inputs.len() != s.channels.len() {
                    return Err(Error::Shape(format!(
                        "speech model has {} channels, got {} inputs",
                        s.channels.len(),
                        inputs.len()
                    )));
                }
                let mut pooled = Vec::with_capacity(inputs.len());
                for (k, &x) in inputs.iter().enumerate() {
                    let mut h = x;
                    for b in self.refine_blocks(k) {
                        h = b.forward(g, store, h)?;
                    }
                    pooled.push(g.pool_rows(h, s.d_model)?);
                }
                self.gmu().expect("speech").forward(g, store, &pooled)?
            }
            ModelSpec::Image(_) => {
                let [x] = inputs else {
                    return Err(Error::Shape(format!("image model takes 1 input, got {}", inputs.len())));
                };
                let w = g.param(store, "image.input.w")?;
                let b = g.param(store, "image.input.b")?;
                g.conv1d(*x, w, Some(b), 1, Padding::AcausalSame)?
            }
        };
        let x = if self.d_ar() > 0 {
            let table = g.param(store, &self.ar_table())?;
            let ar = g.embed(table, feed)?;
            g.concat_rows(&[fused, ar])?
        } else {
            fused
        };
        self.tcn().forward(g, store, x)
    }
}

/// `[prev, labels[0], …, labels[T-2]]`.
pub fn shift_feed(prev: usize, labels: &[usize]) -> Vec<usize> {
    let mut feed = Vec::with_capacity(labels.len());
    if !labels.is_empty() {
        feed.push(prev);
        feed.extend_from_slice(&labels[..labels.len() - 1]);
    }
    feed
}

pub const START_TOKEN: usize = N_CLASSES;

/// Sidecar metadata stored next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    spec: ModelSpec,
    segment_s: usize,
    ar_refine_passes: usize,
}

/// A model specification with trained parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseModel {
    pub spec: ModelSpec,
    pub params: ParamStore<f32>,
    pub segment_s: usize,
    /// Extra autoregressive passes per segment at inference.
    pub ar_refine_passes: usize,
}

impl PhaseModel {
    pub fn new(spec: ModelSpec, seed: u64, segment_s: usize) -> Result<Self> {
        if segment_s == 0 {
            return Err(Error::InvalidArgument("segment_s must be at least 1".into()));
        }
        let params = spec.init_params(seed)?;
        Ok(PhaseModel {
            spec,
            params,
            segment_s,
            ar_refine_passes: 2,
        })
    }

    fn segments(&self, t: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..t).step_by(self.segment_s).map(move |s| (s, (s + self.segment_s).min(t)))
    }

    /// Per-stage logits (`9 × T`) over the whole operation, segment by
    /// segment. `prev_labels[t]` is fed at second `t + 1`; without it every
    /// second receives the start token.
    pub fn forward(&self, op: &OperationRecord, prev_labels: Option<&[usize]>) -> Result<Vec<Tensor<f32>>> {
        let t = op.seconds();
        let feed = match prev_labels {
            Some(l) if l.len() != t => {
                return Err(Error::Shape(format!("feed labels cover {} s, operation {t} s", l.len())))
            }
            Some(l) => shift_feed(START_TOKEN, l),
            None => vec![START_TOKEN; t],
        };
        let inputs = self.spec.inputs(op)?;
        let mut stages: Vec<Vec<Tensor<f32>>> = Vec::new();
        for (s, e) in self.segments(t) {
            let logits = self.segment_logits(&inputs, s, e, &feed[s..e])?;
            if stages.is_empty() {
                stages = vec![Vec::new(); logits.len()];
            }
            for (acc, l) in stages.iter_mut().zip(logits) {
                acc.push(l);
            }
        }
        stages.iter().map(|parts| concat_cols(parts)).collect()
    }

    fn segment_logits(&self, inputs: &[Tensor<f32>], s: usize, e: usize, feed: &[usize]) -> Result<Vec<Tensor<f32>>> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|x| g.input(x.slice_cols(s, e))).collect();
        let outs = self.spec.record(&mut g, &self.params, &ids, feed)?;
        Ok(outs.into_iter().map(|id| g.value(id).clone()).collect())
    }

    /// Labels by autoregressive inference: each segment starts from the
    /// previous segment's last label repeated, then refeeds its own shifted
    /// argmax until it stops changing or the pass budget is spent.
    /// `allowed` restricts the argmax to a class subset.
    pub fn infer(&self, op: &OperationRecord, allowed: Option<&[usize]>) -> Result<Vec<usize>> {
        let inputs = self.spec.inputs(op)?;
        self.infer_inputs(&inputs, op.seconds(), allowed)
    }

    pub(crate) fn infer_inputs(&self, inputs: &[Tensor<f32>], t: usize, allowed: Option<&[usize]>) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(t);
        let mut prev = START_TOKEN;
        for (s, e) in self.segments(t) {
            let labels = self.infer_segment(inputs, s, e, prev, allowed)?;
            prev = *labels.last().expect("non-empty segment");
            out.extend(labels);
        }
        Ok(out)
    }

    pub(crate) fn infer_segment(
        &self,
        inputs: &[Tensor<f32>],
        s: usize,
        e: usize,
        prev: usize,
        allowed: Option<&[usize]>,
    ) -> Result<Vec<usize>> {
        let mut feed = vec![prev; e - s];
        let mut labels = Vec::new();
        for _ in 0..=self.ar_refine_passes {
            let logits = self.segment_logits(inputs, s, e, &feed)?;
            labels = masked_argmax(logits.last().expect("at least one stage"), allowed);
            let next = shift_feed(prev, &labels);
            if next == feed || self.spec.d_ar() == 0 {
                break;
            }
            feed = next;
        }
        Ok(labels)
    }

    fn sidecar_path(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".json");
        PathBuf::from(p)
    }

    /// Writes the checkpoint and a `<path>.json` sidecar with the spec.
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.params)?;
        let side = Sidecar {
            spec: self.spec.clone(),
            segment_s: self.segment_s,
            ar_refine_passes: self.ar_refine_passes,
        };
        let sp = Self::sidecar_path(path);
        let text = serde_json::to_string_pretty(&side).expect("sidecar serializes");
        std::fs::write(&sp, text + "\n").map_err(|e| Error::io(format!("writing {}", sp.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let params = load_checkpoint(path)?;
        let sp = Self::sidecar_path(path);
        let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(format!("reading {}", sp.display()), e))?;
        let side: Sidecar = serde_json::from_str(&text).map_err(|e| Error::parse(&sp, e))?;
        side.spec.validate()?;
        let expected: ParamStore<f32> = side.spec.init_params(0)?;
        for (name, t) in expected.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "{}: parameter {name} is {:?}, spec needs {:?}",
                    path.display(),
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if !params.iter().all(|(n, _)| n.starts_with(side.spec.prefix())) {
            return Err(Error::UnrecognizedFormat(format!(
                "{}: parameters outside the `{}.` namespace",
                path.display(),
                side.spec.prefix()
            )));
        }
        Ok(PhaseModel {
            spec: side.spec,
            params,
            segment_s: side.segment_s.max(1),
            ar_refine_passes: side.ar_refine_passes,
        })
    }
}

fn concat_cols(parts: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let rows = parts.first().map_or(N_CLASSES, Tensor::rows);
    let t: usize = parts.iter().map(Tensor::cols).sum();
    let mut data = vec![0.0f32; rows * t];
    let mut off = 0;
    for p in parts {
        let c = p.cols();
        for r in 0..rows {
            data[r * t + off..r * t + off + c].copy_from_slice(&p.data()[r * c..(r + 1) * c]);
        }
        off += c;
    }
    Tensor::new(&[rows, t], data)
}

/// Column-wise argmax restricted to `allowed` (ties to the lowest class).
pub fn masked_argmax(logits: &Tensor<f32>, allowed: Option<&[usize]>) -> Vec<usize> {
    let Some(allowed) = allowed else {
        return logits.argmax_cols();
    };
    (0..logits.cols())
        .map(|c| {
            let mut best = None::<(usize, f32)>;
            for r in 0..logits.rows() {
                if !allowed.contains(&r) {
                    continue;
                }
                let v = logits.at2(r, c);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((r, v));
                }
            }
            best.map_or(0, |(r, _)| r)
        })
        .collect()
}
