//! Command implementations behind the `phaseflow` binary.
//!
//! Every command reads a [`RunConfig`] and works inside two directories:
//! the raw dataset (`paths.data_dir`) and a work directory holding the
//! aligned dataset, split, checkpoints, predictions and metrics.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use phaseflow::data::{
    align_operation, load_operation, read_labels_csv, stratified_split, synth_generate, write_dataset,
    write_labels_csv, AlignOptions, DatasetManifest, DatasetSplit, PhaseTimeline, SynthConfig, MANIFEST_FILE,
};
use phaseflow::eval::{
    aggregate_runs, frame_accuracy, macro_f1, metrics_csv, ribbon_svg, summarize_runs, MetricOptions,
    OperationScore, RibbonPair, RunAggregate,
};
use phaseflow::features::{ChannelId, OperationRecord};
use phaseflow::model::{
    history_csv, merged_infer, train, ImageSpec, ModelSpec, PhaseModel, SpeechSpec, SwitchConfig, TcnSpec,
    TrainConfig,
};
use phaseflow::{Error, ErrorKind, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub work_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_dir: PathBuf::from("data"),
            work_dir: PathBuf::from("work"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSizes {
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes { n_val: 5, n_test: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeechHyper {
    pub channels: Vec<ChannelId>,
    pub refine_blocks: usize,
    pub d_model: usize,
    pub d_ar: usize,
    pub tcn: TcnSpec,
}

impl Default for SpeechHyper {
    fn default() -> Self {
        let s = SpeechSpec::new(ChannelId::SPEECH.to_vec(), Vec::new());
        SpeechHyper {
            channels: s.channels,
            refine_blocks: s.refine_blocks,
            d_model: s.d_model,
            d_ar: s.d_ar,
            tcn: s.tcn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageHyper {
    pub use_xray: bool,
    pub use_log: bool,
    pub d_model: usize,
    pub d_ar: usize,
    pub tcn: TcnSpec,
}

impl Default for ImageHyper {
    fn default() -> Self {
        let s = ImageSpec::new(0);
        ImageHyper {
            use_xray: s.use_xray,
            use_log: s.use_log,
            d_model: s.d_model,
            d_ar: s.d_ar,
            tcn: s.tcn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Root seed; overrides the seeds inside `synth` and `train`.
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub align: AlignOptions,
    pub split: SplitSizes,
    pub speech: SpeechHyper,
    pub image: ImageHyper,
    pub train: TrainConfig,
    pub switch: SwitchConfig,
    pub metrics: MetricOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            paths: Paths::default(),
            synth: SynthConfig::default(),
            align: AlignOptions::default(),
            split: SplitSizes::default(),
            speech: SpeechHyper::default(),
            image: ImageHyper::default(),
            train: TrainConfig::default(),
            switch: SwitchConfig::default(),
            metrics: MetricOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    /// Pushes the root seed into every seeded component.
    pub fn resolved(mut self) -> Self {
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
        self
    }

    pub fn aligned_dir(&self) -> PathBuf {
        self.paths.work_dir.join("aligned")
    }

    pub fn split_path(&self) -> PathBuf {
        self.paths.work_dir.join("split.json")
    }

    pub fn checkpoint_path(&self, kind: ModelKind) -> PathBuf {
        self.paths.work_dir.join(format!("{}.ckpt", kind.as_str()))
    }

    pub fn predictions_dir(&self) -> PathBuf {
        self.paths.work_dir.join("predictions")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Speech,
    Image,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Speech => "speech",
            ModelKind::Image => "image",
        }
    }
}

/// Which split partition a command operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Subset {
    Train,
    Val,
    #[default]
    Test,
    All,
}

impl std::str::FromStr for Subset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Subset::Train),
            "val" => Ok(Subset::Val),
            "test" => Ok(Subset::Test),
            "all" => Ok(Subset::All),
            _ => Err(Error::InvalidArgument(format!("unknown subset `{s}`"))),
        }
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Input => 2,
        ErrorKind::Consistency => 3,
    }
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(format!("creating {}", p.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes") + "\n"
}

/// The aligned manifest if alignment has run, the raw one otherwise.
fn labelled_manifest(cfg: &RunConfig) -> Result<(PathBuf, DatasetManifest)> {
    let aligned = cfg.aligned_dir();
    let base = if aligned.join(MANIFEST_FILE).exists() {
        aligned
    } else {
        cfg.paths.data_dir.clone()
    };
    let m = DatasetManifest::load(&base.join(MANIFEST_FILE))?;
    Ok((base, m))
}

fn aligned_manifest(cfg: &RunConfig) -> Result<(PathBuf, DatasetManifest)> {
    let base = cfg.aligned_dir();
    let m = DatasetManifest::load(&base.join(MANIFEST_FILE))?;
    if !m.aligned {
        return Err(Error::InvalidArgument(format!("{} is not aligned", base.display())));
    }
    Ok((base, m))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFile {
    pub seed: u64,
    #[serde(flatten)]
    pub split: DatasetSplit,
}

impl SplitFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn ids(&self, subset: Subset) -> Vec<String> {
        match subset {
            Subset::Train => self.split.train.clone(),
            Subset::Val => self.split.val.clone(),
            Subset::Test => self.split.test.clone(),
            Subset::All => {
                let mut all: Vec<String> = [&self.split.train, &self.split.val, &self.split.test]
                    .into_iter()
                    .flatten()
                    .cloned()
                    .collect();
                all.sort();
                all
            }
        }
    }
}

fn load_ops(base: &Path, m: &DatasetManifest, ids: &[String]) -> Result<Vec<OperationRecord>> {
    ids.par_iter().map(|id| load_operation(base, m.get(id)?)).collect()
}

/// Aligned operations of one split subset.
pub fn load_subset(cfg: &RunConfig, subset: Subset) -> Result<Vec<OperationRecord>> {
    let (base, m) = aligned_manifest(cfg)?;
    let ids = SplitFile::load(&cfg.split_path())?.ids(subset);
    load_ops(&base, &m, &ids)
}

/// Generates the synthetic corpus into `paths.data_dir`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<DatasetManifest> {
    let ops = synth_generate(&cfg.synth)?;
    let m = write_dataset(&cfg.paths.data_dir, &ops, cfg.seed)?;
    let seconds: usize = ops.iter().map(|o| o.timeline.len()).sum();
    println!(
        "wrote {} operations ({seconds} s) to {}",
        m.operations.len(),
        cfg.paths.data_dir.display()
    );
    Ok(m)
}

/// Aligns every operation of the raw dataset into `<work>/aligned`.
pub fn cmd_align(cfg: &RunConfig) -> Result<DatasetManifest> {
    let src = &cfg.paths.data_dir;
    let raw = DatasetManifest::load(&src.join(MANIFEST_FILE))?;
    let dst = cfg.aligned_dir();
    mkdir(&dst)?;
    let entries = raw
        .operations
        .par_iter()
        .map(|e| align_operation(src, e, &dst, &cfg.align, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    for e in &entries {
        let a = e.alignment.as_ref().expect("aligned entries carry alignment info");
        println!(
            "{} lag_s={:.4} log_offset_s={:.3} events={}",
            e.operation_id,
            a.lag_s + 0.0,
            a.log_offset_s + 0.0,
            a.audio_events_s.len()
        );
    }
    let m = DatasetManifest {
        seed: cfg.seed,
        aligned: true,
        label_names: raw.label_names,
        operations: entries,
    };
    m.save(&dst.join(MANIFEST_FILE))?;
    Ok(m)
}

pub fn cmd_split(cfg: &RunConfig) -> Result<SplitFile> {
    let (base, m) = labelled_manifest(cfg)?;
    let timelines = m
        .operations
        .iter()
        .map(|e| Ok((e.operation_id.clone(), read_labels_csv(&base.join(&e.labels))?)))
        .collect::<Result<Vec<(String, PhaseTimeline)>>>()?;
    let split = stratified_split(&timelines, cfg.split.n_val, cfg.split.n_test)?;
    println!(
        "train {} / val {} / test {}",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    let file = SplitFile { seed: cfg.seed, split };
    mkdir(&cfg.paths.work_dir)?;
    write_text(&cfg.split_path(), &to_json(&file))?;
    Ok(file)
}

/// Model specification for `kind`, with input widths read off `sample`.
pub fn model_spec(cfg: &RunConfig, kind: ModelKind, sample: &OperationRecord) -> Result<ModelSpec> {
    Ok(match kind {
        ModelKind::Speech => {
            let h = &cfg.speech;
            let dims = h
                .channels
                .iter()
                .map(|&c| Ok(sample.speech_channel(c)?.dim()))
                .collect::<Result<Vec<_>>>()?;
            ModelSpec::Speech(SpeechSpec {
                channels: h.channels.clone(),
                input_dims: dims,
                refine_blocks: h.refine_blocks,
                d_model: h.d_model,
                d_ar: h.d_ar,
                tcn: h.tcn,
            })
        }
        ModelKind::Image => {
            let h = &cfg.image;
            ModelSpec::Image(ImageSpec {
                xray_dim: sample.xray_dim,
                use_xray: h.use_xray,
                use_log: h.use_log,
                d_model: h.d_model,
                d_ar: h.d_ar,
                tcn: h.tcn,
            })
        }
    })
}

fn init_seed(seed: u64, kind: ModelKind) -> u64 {
    match kind {
        ModelKind::Speech => seed,
        ModelKind::Image => seed.wrapping_add(1),
    }
}

/// Trains one model on the split's training operations.
pub fn train_model(
    cfg: &RunConfig,
    kind: ModelKind,
    train_ops: &[OperationRecord],
    val_ops: &[OperationRecord],
) -> Result<(PhaseModel, String)> {
    let sample = train_ops.first().ok_or(Error::TooFewOperations { needed: 1, got: 0 })?;
    let spec = model_spec(cfg, kind, sample)?;
    let model = PhaseModel::new(spec, init_seed(cfg.seed, kind), cfg.train.segment_s)?;
    let out = train(model, train_ops, val_ops, &cfg.train)?;
    Ok((out.model, history_csv(&out.history, cfg.seed)))
}

pub fn cmd_train(cfg: &RunConfig, kind: ModelKind) -> Result<PathBuf> {
    let (base, m) = aligned_manifest(cfg)?;
    let split = SplitFile::load(&cfg.split_path())?;
    let train_ops = load_ops(&base, &m, &split.ids(Subset::Train))?;
    let val_ops = load_ops(&base, &m, &split.ids(Subset::Val))?;
    let (model, history) = train_model(cfg, kind, &train_ops, &val_ops)?;
    let path = cfg.checkpoint_path(kind);
    model.save(&path)?;
    write_text(
        &cfg.paths.work_dir.join(format!("{}_history.csv", kind.as_str())),
        &history,
    )?;
    println!("wrote {}", path.display());
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub operation_id: String,
    pub labels: Vec<usize>,
    pub switch_s: Option<usize>,
}

/// Merged predictions for `ops`, in input order.
pub fn predict(
    ops: &[OperationRecord],
    speech: &PhaseModel,
    image: &PhaseModel,
    sw: &SwitchConfig,
) -> Result<Vec<Prediction>> {
    ops.par_iter()
        .map(|op| {
            let out = merged_infer(op, speech, image, sw)?;
            Ok(Prediction {
                operation_id: op.operation_id.clone(),
                labels: out.labels,
                switch_s: out.switch_s,
            })
        })
        .collect()
}

/// Predictions of a single model over whole operations.
pub fn predict_standalone(ops: &[OperationRecord], model: &PhaseModel) -> Result<Vec<Prediction>> {
    ops.par_iter()
        .map(|op| {
            Ok(Prediction {
                operation_id: op.operation_id.clone(),
                labels: model.infer(op, None)?,
                switch_s: None,
            })
        })
        .collect()
}

/// Merged predictions, or those of `standalone` alone when given.
pub fn cmd_infer(cfg: &RunConfig, subset: Subset, standalone: Option<ModelKind>) -> Result<Vec<Prediction>> {
    let load = |k| PhaseModel::load(&cfg.checkpoint_path(k));
    let models = match standalone {
        None => (load(ModelKind::Speech)?, Some(load(ModelKind::Image)?)),
        Some(k) => (load(k)?, None),
    };
    let (base, m) = aligned_manifest(cfg)?;
    let ids = SplitFile::load(&cfg.split_path())?.ids(subset);
    let ops = load_ops(&base, &m, &ids)?;
    let preds = match &models {
        (speech, Some(image)) => predict(&ops, speech, image, &cfg.switch)?,
        (single, None) => predict_standalone(&ops, single)?,
    };
    let dir = cfg.predictions_dir();
    mkdir(&dir)?;
    let comment = format!("seed={}", cfg.seed);
    let mut switches = format!("# {comment}\noperation_id,switch_s\n");
    for p in &preds {
        write_labels_csv(&dir.join(format!("{}.csv", p.operation_id)), &p.labels, Some(&comment))?;
        switches.push_str(&format!(
            "{},{}\n",
            p.operation_id,
            p.switch_s.map_or_else(String::new, |s| s.to_string())
        ));
    }
    write_text(&dir.join("switch.csv"), &switches)?;
    println!("wrote {} predictions to {}", preds.len(), dir.display());
    Ok(preds)
}

/// Scores predictions against ground truth, per operation.
pub fn score(pairs: &[(String, Vec<usize>, Vec<usize>)], opts: MetricOptions) -> Result<Vec<OperationScore>> {
    pairs
        .iter()
        .map(|(id, pred, gt)| {
            Ok(OperationScore {
                operation_id: id.clone(),
                accuracy: frame_accuracy(pred, gt, opts)?,
                f1: macro_f1(pred, gt, opts)?,
            })
        })
        .collect()
}

/// `(id, prediction, ground truth)` for every prediction file in `dir`.
fn prediction_pairs(cfg: &RunConfig, dir: &Path) -> Result<Vec<(String, Vec<usize>, Vec<usize>)>> {
    let (base, m) = labelled_manifest(cfg)?;
    let mut ids: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(format!("reading {}", dir.display()), e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            let stem = p.file_stem()?.to_str()?.to_string();
            (p.extension()? == "csv" && stem != "switch").then_some(stem)
        })
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Empty("no prediction files"));
    }
    ids.into_iter()
        .map(|id| {
            let pred = read_labels_csv(&dir.join(format!("{id}.csv")))?.into_labels();
            let gt = read_labels_csv(&base.join(&m.get(&id)?.labels))?.into_labels();
            Ok((id, pred, gt))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub seed: u64,
    pub runs: usize,
    pub accuracy: RunAggregate,
    pub f1: RunAggregate,
    /// `"mean ± std"` renderings of the two aggregates.
    pub accuracy_display: String,
    pub f1_display: String,
}

/// Evaluates `<work>/predictions`, or `<work>/run1..runN/predictions` when
/// `runs` is given, writing metrics CSV(s) and a JSON summary.
pub fn cmd_eval(cfg: &RunConfig, runs: Option<usize>) -> Result<MetricsSummary> {
    let dirs: Vec<PathBuf> = match runs {
        None => vec![cfg.paths.work_dir.clone()],
        Some(0) => return Err(Error::InvalidArgument("--runs must be at least 1".into())),
        Some(n) => (1..=n).map(|i| cfg.paths.work_dir.join(format!("run{i}"))).collect(),
    };
    let mut all = Vec::with_capacity(dirs.len());
    for d in &dirs {
        let pairs = prediction_pairs(cfg, &d.join("predictions"))?;
        let scores = score(&pairs, cfg.metrics)?;
        write_text(&d.join("metrics.csv"), &metrics_csv(&scores, cfg.seed))?;
        all.push(scores);
    }
    let (accuracy, f1) = if all.len() == 1 {
        let s = &all[0];
        (
            aggregate_runs(&s.iter().map(|x| x.accuracy).collect::<Vec<_>>())?,
            aggregate_runs(&s.iter().map(|x| x.f1).collect::<Vec<_>>())?,
        )
    } else {
        let m = summarize_runs(&all)?;
        (m["accuracy"], m["f1"])
    };
    let summary = MetricsSummary {
        seed: cfg.seed,
        runs: all.len(),
        accuracy,
        f1,
        accuracy_display: accuracy.to_string(),
        f1_display: f1.to_string(),
    };
    write_text(&cfg.paths.work_dir.join("metrics.json"), &to_json(&summary))?;
    println!("accuracy {accuracy}  macro F1 {f1}");
    Ok(summary)
}

/// Ribbon plot of every prediction against ground truth.
pub fn cmd_plot(cfg: &RunConfig) -> Result<PathBuf> {
    let pairs = prediction_pairs(cfg, &cfg.predictions_dir())?;
    let (_, m) = labelled_manifest(cfg)?;
    let ribbons: Vec<RibbonPair> = pairs
        .iter()
        .map(|(id, pred, gt)| RibbonPair {
            pred,
            gt,
            title: id,
        })
        .collect();
    let svg = ribbon_svg(&ribbons, &m.label_names)?;
    let path = cfg.paths.work_dir.join("ribbons.svg");
    write_text(&path, &svg)?;
    println!("wrote {}", path.display());
    Ok(path)
}

/// Sizes the global rayon pool from `PHASEFLOW_THREADS` if set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("PHASEFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("PHASEFLOW_THREADS={v} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    info!("using {n} worker threads");
    Ok(())
}
