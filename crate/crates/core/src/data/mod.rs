//! Phase timelines, the entropy-stratified split and the synthetic corpus.

mod dataset;
mod synth;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{
    align_operation, load_embedding_manifest, load_operation, save_embedding_manifest, write_dataset, AlignOptions,
    AlignmentInfo, AudioEntry, DatasetManifest, OperationEntry, MANIFEST_FILE,
};
pub use synth::{synth_generate, ChannelGroups, RawOperation, SynthAudioConfig, SynthConfig, SynthDims, SynthOperation};

pub const N_CLASSES: usize = 9;
pub const N_PHASES: usize = 8;
pub const TRANSITION: usize = 0;
pub const PUNCTURE: usize = 2;

pub fn default_label_names() -> Vec<String> {
    [
        "Transition",
        "Preparation",
        "Puncture",
        "Guide Wire Positioning",
        "Pouch Preparation",
        "Catheter Positioning",
        "Catheter Adjustment",
        "Catheter Control",
        "Closing",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Per-second phase labels; class 0 is the transition filler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseTimeline {
    labels: Vec<usize>,
}

impl PhaseTimeline {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if let Some(&l) = labels.iter().find(|&&l| l >= N_CLASSES) {
            return Err(Error::LabelOutOfRange {
                label: l,
                n_classes: N_CLASSES,
            });
        }
        Ok(PhaseTimeline { labels })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<usize> {
        self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Seconds spent in each of the 9 classes.
    pub fn class_durations(&self) -> [usize; N_CLASSES] {
        let mut d = [0; N_CLASSES];
        for &l in &self.labels {
            d[l] += 1;
        }
        d
    }
}

/// Reads `second,phase_id` rows; seconds must run 0, 1, 2, ...
pub fn read_labels_csv(path: &Path) -> Result<PhaseTimeline> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::parse(path, e))?;
    let headers = rdr.headers().map_err(|e| Error::parse(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["second", "phase_id"] {
        return Err(Error::parse(path, format!("unexpected header {headers:?}")));
    }
    let mut labels = Vec::new();
    for (i, row) in rdr.deserialize::<(usize, usize)>().enumerate() {
        let (sec, id) = row.map_err(|e| Error::parse(path, e))?;
        if sec != i {
            return Err(Error::parse(path, format!("expected second {i}, found {sec}")));
        }
        labels.push(id);
    }
    PhaseTimeline::new(labels)
}

pub fn write_labels_csv(path: &Path, labels: &[usize], header_comment: Option<&str>) -> Result<()> {
    let mut out = String::with_capacity(labels.len() * 8 + 32);
    if let Some(c) = header_comment {
        out.push_str(&format!("# {c}\n"));
    }
    out.push_str("second,phase_id\n");
    for (t, l) in labels.iter().enumerate() {
        out.push_str(&format!("{t},{l}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Share of each surgical phase's corpus-wide duration that falls in each
/// operation (`n_ops × 8`, transition excluded). Columns sum to 1.
pub fn phase_percentages(ops: &[PhaseTimeline]) -> Result<Vec<[f64; N_PHASES]>> {
    if ops.is_empty() {
        return Err(Error::Empty("operation list"));
    }
    let durations: Vec<[usize; N_CLASSES]> = ops.iter().map(PhaseTimeline::class_durations).collect();
    let mut totals = [0usize; N_PHASES];
    for d in &durations {
        for p in 0..N_PHASES {
            totals[p] += d[p + 1];
        }
    }
    if let Some(p) = totals.iter().position(|&t| t == 0) {
        return Err(Error::PhaseNeverObserved(p + 1));
    }
    Ok(durations
        .iter()
        .map(|d| std::array::from_fn(|p| d[p + 1] as f64 / totals[p] as f64))
        .collect())
}

/// Natural-log Shannon entropy of `v / sum(v)`, with `0 ln 0 = 0`.
pub fn operation_entropy(v: &[f64]) -> Result<f64> {
    if v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument("entropy needs finite non-negative entries".into()));
    }
    let s: f64 = v.iter().sum();
    if s <= 0.0 {
        return Err(Error::InvalidArgument("entropy of an all-zero vector".into()));
    }
    Ok(-v
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| {
            let p = x / s;
            p * p.ln()
        })
        .sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Entropy of each operation's phase-percentage vector, keyed by id.
///
/// Operations are processed in id order so that the floating-point column
/// totals, and hence the entropies, do not depend on input order.
pub fn operation_entropies(ops: &[(String, PhaseTimeline)]) -> Result<Vec<(String, f64)>> {
    let mut sorted: Vec<&(String, PhaseTimeline)> = ops.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    if let Some(w) = sorted.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidArgument(format!("duplicate operation id {}", w[0].0)));
    }
    let timelines: Vec<PhaseTimeline> = sorted.iter().map(|(_, t)| t.clone()).collect();
    let pct = phase_percentages(&timelines)?;
    sorted
        .iter()
        .zip(&pct)
        .map(|((id, _), v)| Ok((id.clone(), operation_entropy(v)?)))
        .collect()
}

/// Sorts by `(entropy, id)` ascending: the first `n_val` go to validation,
/// the next `n_test` to test and the rest to training.
pub fn stratified_split(ops: &[(String, PhaseTimeline)], n_val: usize, n_test: usize) -> Result<DatasetSplit> {
    let needed = n_val + n_test + 1;
    if ops.len() < needed {
        return Err(Error::TooFewOperations {
            needed,
            got: ops.len(),
        });
    }
    let mut ranked = operation_entropies(ops)?;
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let ids: Vec<String> = ranked.into_iter().map(|(id, _)| id).collect();
    Ok(DatasetSplit {
        val: ids[..n_val].to_vec(),
        test: ids[n_val..n_val + n_test].to_vec(),
        train: ids[n_val + n_test..].to_vec(),
    })
}
