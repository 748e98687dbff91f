use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{default_label_names, read_labels_csv, write_labels_csv, SynthOperation, N_CLASSES};
use crate::align::{
    align_by_lag, log_to_per_second, read_log_csv, rebase_offset, shift_features, shift_log, write_log_csv,
    ChannelSet, RebaseMode,
};
use crate::error::{Error, Result};
use crate::features::{
    assemble_from_sequences, load_feature_file, write_feature_file, ChannelEntry, ChannelId, EmbeddingManifest, FeatureSequence,
    OperationRecord,
};
use crate::signal::{cross_correlate_lag, read_wav, write_wav, EventConfig};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioEntry {
    pub physician: PathBuf,
    pub assistant: PathBuf,
    pub ambient: PathBuf,
    /// Recording time at which the excerpts start.
    pub offset_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentInfo {
    pub lag_s: f64,
    pub log_offset_s: f64,
    pub audio_events_s: Vec<f64>,
}

/// One operation's files, relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationEntry {
    pub operation_id: String,
    /// Embedding manifest with physician, assistant and xray_image (plus
    /// ambient once aligned).
    pub features: PathBuf,
    /// Ambient features on the ambient recorder's clock (raw datasets only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambient: Option<PathBuf>,
    pub labels: PathBuf,
    pub log: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<AudioEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<AlignmentInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub aligned: bool,
    pub label_names: Vec<String>,
    pub operations: Vec<OperationEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        if m.label_names.len() != N_CLASSES {
            return Err(Error::parse(
                path,
                format!("expected {N_CLASSES} label names, found {}", m.label_names.len()),
            ));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn get(&self, id: &str) -> Result<&OperationEntry> {
        self.operations
            .iter()
            .find(|o| o.operation_id == id)
            .ok_or_else(|| Error::InvalidArgument(format!("operation {id} not in manifest")))
    }
}

pub fn load_embedding_manifest(path: &Path) -> Result<EmbeddingManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
}

pub fn save_embedding_manifest(path: &Path, m: &EmbeddingManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(m).expect("manifest serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(format!("creating {}", p.display()), e))
}

/// Writes FTR1 files for `channels` into `dir` and an embedding manifest
/// named `features.json`; returns the manifest path relative to `base`.
pub(crate) fn write_channels(
    base: &Path,
    rel_dir: &Path,
    operation_id: &str,
    channels: &[&FeatureSequence],
) -> Result<PathBuf> {
    let mut entries = BTreeMap::new();
    for seq in channels {
        let file = format!("{}.ftr", seq.channel());
        write_feature_file(&base.join(rel_dir).join(&file), seq)?;
        entries.insert(
            seq.channel(),
            ChannelEntry {
                path: PathBuf::from(&file),
                dim: seq.dim(),
                seconds: seq.len(),
            },
        );
    }
    let m = EmbeddingManifest {
        operation_id: operation_id.to_string(),
        channels: entries,
    };
    let rel = rel_dir.join("features.json");
    save_embedding_manifest(&base.join(&rel), &m)?;
    Ok(rel)
}

/// Writes a raw (unaligned) dataset for synthetic operations.
pub fn write_dataset(dir: &Path, ops: &[SynthOperation], seed: u64) -> Result<DatasetManifest> {
    mkdir(dir)?;
    let comment = format!("seed={seed}");
    let mut entries = Vec::with_capacity(ops.len());
    for op in ops {
        let rel = PathBuf::from(&op.operation_id);
        mkdir(&dir.join(&rel))?;
        let raw = &op.raw;
        let features = write_channels(dir, &rel, &op.operation_id, &[&raw.physician, &raw.assistant, &raw.xray])?;
        let ambient = rel.join("ambient.ftr");
        write_feature_file(&dir.join(&ambient), &raw.ambient)?;
        let labels = rel.join("labels.csv");
        write_labels_csv(&dir.join(&labels), op.timeline.labels(), Some(&comment))?;
        let log = rel.join("xray_log.csv");
        write_log_csv(&dir.join(&log), &raw.log, Some(&comment))?;
        let audio = match &raw.audio {
            Some([p, a, m]) => {
                let names = ["physician.wav", "assistant.wav", "ambient.wav"].map(|n| rel.join(n));
                for (sig, name) in [p, a, m].iter().zip(&names) {
                    write_wav(&dir.join(name), sig)?;
                }
                let [physician, assistant, ambient] = names;
                Some(AudioEntry {
                    physician,
                    assistant,
                    ambient,
                    offset_s: raw.audio_offset_s,
                })
            }
            None => None,
        };
        entries.push(OperationEntry {
            operation_id: op.operation_id.clone(),
            features,
            ambient: Some(ambient),
            labels,
            log,
            audio,
            alignment: None,
        });
    }
    let manifest = DatasetManifest {
        seed,
        aligned: false,
        label_names: default_label_names(),
        operations: entries,
    };
    manifest.save(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Loads an aligned operation with its labels.
pub fn load_operation(base: &Path, entry: &OperationEntry) -> Result<OperationRecord> {
    let fm = load_embedding_manifest(&base.join(&entry.features))?;
    let fdir = base.join(&entry.features).parent().map(Path::to_path_buf).unwrap_or_default();
    let seconds = fm.seconds()?;
    let load = |ch| fm.load_channel(&fdir, ch);
    let log = read_log_csv(&base.join(&entry.log))?;
    let flags = log_to_per_second(&log, seconds);
    let mut record = assemble_from_sequences(
        &entry.operation_id,
        load(ChannelId::Physician)?,
        load(ChannelId::Assistant)?,
        load(ChannelId::Ambient)?,
        load(ChannelId::XrayImage)?,
        &flags,
    )?;
    let labels = read_labels_csv(&base.join(&entry.labels))?;
    if labels.len() != seconds {
        return Err(Error::Misaligned {
            operation: entry.operation_id.clone(),
            detail: format!("labels cover {} s, features {} s", labels.len(), seconds),
        });
    }
    record.labels = Some(labels.into_labels());
    Ok(record)
}

/// Settings for aligning a raw dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignOptions {
    pub max_lag_s: f64,
    pub rebase: RebaseMode,
    pub events: EventConfig,
}

impl Default for AlignOptions {
    fn default() -> Self {
        AlignOptions {
            max_lag_s: 20.0,
            rebase: RebaseMode::FirstPair,
            events: EventConfig::default(),
        }
    }
}

/// Aligns one operation of the dataset at `src` and writes it under `dst`.
///
/// The ambient lag comes from cross-correlating the ambient excerpt with
/// the physician excerpt; ambient features are moved onto the label clock
/// and the excerpts are rewritten aligned. Beeps detected on the physician
/// excerpt rebase the log onto the recording clock.
pub fn align_operation(
    src: &Path,
    entry: &OperationEntry,
    dst: &Path,
    opts: &AlignOptions,
    seed: u64,
) -> Result<OperationEntry> {
    let id = &entry.operation_id;
    let audio = entry
        .audio
        .as_ref()
        .ok_or_else(|| Error::MissingChannel(format!("audio excerpts of {id}")))?;
    let [physician, assistant, ambient_wav] =
        [&audio.physician, &audio.assistant, &audio.ambient].map(|p| read_wav(&src.join(p)));
    let (physician, assistant, ambient_wav) = (physician?, assistant?, ambient_wav?);
    let lag_s = cross_correlate_lag(&ambient_wav, &physician, opts.max_lag_s)?;

    let fm = load_embedding_manifest(&src.join(&entry.features))?;
    let fdir = src.join(&entry.features).parent().map(Path::to_path_buf).unwrap_or_default();
    let load = |ch| fm.load_channel(&fdir, ch);
    let (phys_f, asst_f, xray_f) = (
        load(ChannelId::Physician)?,
        load(ChannelId::Assistant)?,
        load(ChannelId::XrayImage)?,
    );
    let seconds = xray_f.len();
    let raw_ambient = match &entry.ambient {
        Some(p) => load_feature_file(&src.join(p), ChannelId::Ambient)?,
        None => load(ChannelId::Ambient)?,
    };
    let shift = lag_s.abs().round() as usize;
    let ambient_f = if lag_s >= 0.0 {
        shift_features(&raw_ambient, shift, seconds)
    } else {
        // personal microphones started late: drop the ambient lead-in
        let rest = raw_ambient.slice(shift.min(raw_ambient.len()), raw_ambient.len());
        shift_features(&rest, 0, seconds)
    };

    let excerpts = align_by_lag(
        &ChannelSet {
            physician: physician.clone(),
            assistant,
            ambient: ambient_wav,
            image_present: Vec::new(),
        },
        lag_s,
    )?;
    let events: Vec<f64> = opts
        .events
        .detect(&physician)?
        .into_iter()
        .map(|t| t + audio.offset_s)
        .collect();
    let log = read_log_csv(&src.join(&entry.log))?;
    let log_offset_s = rebase_offset(&log, &events, opts.rebase)?;
    let rebased = shift_log(&log, log_offset_s);

    let rel = PathBuf::from(id);
    mkdir(&dst.join(&rel))?;
    let comment = format!("seed={seed}");
    let features = write_channels(dst, &rel, id, &[&phys_f, &asst_f, &ambient_f, &xray_f])?;
    let labels = rel.join("labels.csv");
    let timeline = read_labels_csv(&src.join(&entry.labels))?;
    write_labels_csv(&dst.join(&labels), timeline.labels(), Some(&comment))?;
    let log_rel = rel.join("xray_log.csv");
    write_log_csv(&dst.join(&log_rel), &rebased, Some(&comment))?;
    let names = ["physician.wav", "assistant.wav", "ambient.wav"].map(|n| rel.join(n));
    for (sig, name) in [&excerpts.physician, &excerpts.assistant, &excerpts.ambient].iter().zip(&names) {
        write_wav(&dst.join(name), sig)?;
    }
    let [physician, assistant, ambient] = names;
    Ok(OperationEntry {
        operation_id: id.clone(),
        features,
        ambient: None,
        labels,
        log: log_rel,
        audio: Some(AudioEntry {
            physician,
            assistant,
            ambient,
            offset_s: audio.offset_s,
        }),
        alignment: Some(AlignmentInfo {
            lag_s,
            log_offset_s,
            audio_events_s: events,
        }),
    })
}
