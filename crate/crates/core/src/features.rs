//! Per-second feature sequences: FTR1 files, X-ray log encoding, stub
//! embeddings and assembly of one operation's model inputs.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::align::LogFlags;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Width of each repeated flag block in the encoded log vector.
pub const LOG_REPEAT: usize = 64;
pub const LOG_DIM: usize = 3 * LOG_REPEAT;
pub const MFCC_DIM: usize = 40;

const FTR_MAGIC: &[u8; 4] = b"FTR1";
const FTR_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelId {
    Physician,
    Assistant,
    Ambient,
    XrayImage,
    XrayLog,
}

impl ChannelId {
    pub const SPEECH: [ChannelId; 3] = [ChannelId::Physician, ChannelId::Assistant, ChannelId::Ambient];

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelId::Physician => "physician",
            ChannelId::Assistant => "assistant",
            ChannelId::Ambient => "ambient",
            ChannelId::XrayImage => "xray_image",
            ChannelId::XrayLog => "xray_log",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "physician" => ChannelId::Physician,
            "assistant" => ChannelId::Assistant,
            "ambient" => ChannelId::Ambient,
            "xray_image" => ChannelId::XrayImage,
            "xray_log" => ChannelId::XrayLog,
            _ => return Err(Error::InvalidArgument(format!("unknown channel `{s}`"))),
        })
    }
}

/// `T × D` row-major (time-major) feature matrix of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    channel: ChannelId,
    t: usize,
    d: usize,
    values: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(channel: ChannelId, t: usize, d: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != t * d {
            return Err(Error::Shape(format!(
                "{channel}: {} values for {t}×{d}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::CorruptFeatures(format!(
                "{channel}: non-finite value at row {}, col {}",
                i / d.max(1),
                i % d.max(1)
            )));
        }
        Ok(FeatureSequence { channel, t, d, values })
    }

    pub fn channel(&self) -> ChannelId {
        self.channel
    }

    pub fn with_channel(mut self, channel: ChannelId) -> Self {
        self.channel = channel;
        self
    }

    /// Number of seconds.
    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.d..(t + 1) * self.d]
    }

    /// Rows `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> FeatureSequence {
        FeatureSequence {
            channel: self.channel,
            t: end - start,
            d: self.d,
            values: self.values[start * self.d..end * self.d].to_vec(),
        }
    }

    /// Feature-major `D × T` tensor, the layout the models consume.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_fn2(self.d, self.t, |r, c| self.values[c * self.d + r])
    }

    /// Column-wise concatenation `[self | other]`.
    pub fn concat_dims(&self, other: &FeatureSequence, channel: ChannelId) -> Result<FeatureSequence> {
        if self.t != other.t {
            return Err(Error::Shape(format!(
                "cannot concatenate {} ({} s) with {} ({} s)",
                self.channel, self.t, other.channel, other.t
            )));
        }
        let mut values = Vec::with_capacity(self.t * (self.d + other.d));
        for t in 0..self.t {
            values.extend_from_slice(self.row(t));
            values.extend_from_slice(other.row(t));
        }
        Ok(FeatureSequence {
            channel,
            t: self.t,
            d: self.d + other.d,
            values,
        })
    }
}

/// `[fluoro; 64] ++ [dsa; 64] ++ [moving; 64]`.
pub fn encode_xray_log(flags: LogFlags) -> Result<Vec<f32>> {
    let bits = [flags.fluoro, flags.dsa, flags.moving];
    if bits.iter().any(|&b| b > 1) {
        return Err(Error::InvalidArgument(format!("non-binary log flags {bits:?}")));
    }
    Ok(bits
        .iter()
        .flat_map(|&b| std::iter::repeat(b as f32).take(LOG_REPEAT))
        .collect())
}

pub fn encode_log_sequence(flags: &[LogFlags]) -> Result<FeatureSequence> {
    let mut values = Vec::with_capacity(flags.len() * LOG_DIM);
    for &f in flags {
        values.extend(encode_xray_log(f)?);
    }
    FeatureSequence::new(ChannelId::XrayLog, flags.len(), LOG_DIM, values)
}

pub fn write_feature_file_to<W: Write>(w: &mut W, seq: &FeatureSequence) -> std::io::Result<()> {
    w.write_all(FTR_MAGIC)?;
    w.write_all(&FTR_VERSION.to_le_bytes())?;
    w.write_all(&(seq.t as u32).to_le_bytes())?;
    w.write_all(&(seq.d as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(seq.values.len() * 4);
    for v in &seq.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn write_feature_file(path: &Path, seq: &FeatureSequence) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = std::io::BufWriter::new(f);
    write_feature_file_to(&mut w, seq)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_feature_bytes(bytes: &[u8], channel: ChannelId, what: &str) -> Result<FeatureSequence> {
    if bytes.len() < 16 || &bytes[..4] != FTR_MAGIC {
        return Err(Error::UnrecognizedFormat(format!("{what}: missing FTR1 magic")));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != FTR_VERSION {
        return Err(Error::UnrecognizedFormat(format!("{what}: FTR1 version {version}")));
    }
    let (t, d) = (word(8) as usize, word(12) as usize);
    let expected = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::UnrecognizedFormat(format!("{what}: header {t}×{d} overflows")))?;
    let payload = &bytes[16..];
    if payload.len() != expected {
        return Err(Error::Truncated(format!(
            "{what}: header says {t}×{d} ({expected} bytes), payload has {}",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    FeatureSequence::new(channel, t, d, values).map_err(|e| match e {
        Error::CorruptFeatures(m) => Error::CorruptFeatures(format!("{what}: {m}")),
        other => other,
    })
}

pub fn load_feature_file(path: &Path, channel: ChannelId) -> Result<FeatureSequence> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    read_feature_bytes(&bytes, channel, &path.display().to_string())
}

/// Deterministic standard-normal `T × D` matrix; row `t` depends only on
/// `(seed, channel, t)`.
pub fn stub_embed(seed: u64, channel: ChannelId, d: usize, t: usize) -> Result<FeatureSequence> {
    if d == 0 || t == 0 {
        return Err(Error::InvalidArgument("stub embedding needs D >= 1 and T >= 1".into()));
    }
    let mut values = Vec::with_capacity(t * d);
    for sec in 0..t {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&channel.index().to_le_bytes());
        key[16..24].copy_from_slice(&(sec as u64).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        values.extend((0..d).map(|_| {
            let v: f32 = StandardNormal.sample(&mut rng);
            v
        }));
    }
    FeatureSequence::new(channel, t, d, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEntry {
    pub path: PathBuf,
    pub dim: usize,
    pub seconds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub operation_id: String,
    pub channels: BTreeMap<ChannelId, ChannelEntry>,
}

impl EmbeddingManifest {
    /// Loads one declared channel (paths resolve against `base`) and checks
    /// it against its declared shape.
    pub fn load_channel(&self, base: &Path, channel: ChannelId) -> Result<FeatureSequence> {
        let entry = self
            .channels
            .get(&channel)
            .ok_or_else(|| Error::MissingChannel(format!("{} in {}", channel, self.operation_id)))?;
        let seq = load_feature_file(&base.join(&entry.path), channel)?;
        if seq.len() != entry.seconds || seq.dim() != entry.dim {
            return Err(Error::Misaligned {
                operation: self.operation_id.clone(),
                detail: format!(
                    "{channel} declares {}×{} but file holds {}×{}",
                    entry.seconds,
                    entry.dim,
                    seq.len(),
                    seq.dim()
                ),
            });
        }
        Ok(seq)
    }

    pub fn seconds(&self) -> Result<usize> {
        let mut it = self.channels.iter();
        let Some((_, first)) = it.next() else {
            return Err(Error::Empty("manifest channels"));
        };
        for (ch, e) in it {
            if e.seconds != first.seconds {
                return Err(Error::Misaligned {
                    operation: self.operation_id.clone(),
                    detail: format!("{ch} declares {} s, others {} s", e.seconds, first.seconds),
                });
            }
        }
        Ok(first.seconds)
    }
}

/// All model inputs of one operation at one row per second.
#[derive(Debug, Clone, PartialEq)]
pub struct OperationRecord {
    pub operation_id: String,
    /// Speech channels keyed by id (physician, assistant, ambient).
    pub speech: BTreeMap<ChannelId, FeatureSequence>,
    /// Image features followed by the encoded log, `T × (D_x + 192)`.
    pub image: FeatureSequence,
    pub xray_dim: usize,
    /// Ground-truth phase per second, when known.
    pub labels: Option<Vec<usize>>,
}

impl OperationRecord {
    pub fn seconds(&self) -> usize {
        self.image.len()
    }

    pub fn speech_channel(&self, ch: ChannelId) -> Result<&FeatureSequence> {
        self.speech
            .get(&ch)
            .ok_or_else(|| Error::MissingChannel(format!("{ch} in {}", self.operation_id)))
    }

    /// X-ray image features without the log columns.
    pub fn xray_features(&self) -> FeatureSequence {
        let d = self.xray_dim;
        let total = self.image.dim();
        let mut values = Vec::with_capacity(self.seconds() * d);
        for t in 0..self.seconds() {
            values.extend_from_slice(&self.image.row(t)[..d]);
        }
        debug_assert!(total >= d);
        FeatureSequence::new(ChannelId::XrayImage, self.seconds(), d, values).expect("sub-matrix of valid features")
    }

    /// Seconds `[start, end)` of every channel.
    pub fn slice(&self, start: usize, end: usize) -> OperationRecord {
        OperationRecord {
            operation_id: self.operation_id.clone(),
            speech: self.speech.iter().map(|(k, v)| (*k, v.slice(start, end))).collect(),
            image: self.image.slice(start, end),
            xray_dim: self.xray_dim,
            labels: self.labels.as_ref().map(|l| l[start..end].to_vec()),
        }
    }
}

/// Builds an [`OperationRecord`] from already loaded sequences.
pub fn assemble_from_sequences(
    operation_id: &str,
    physician: FeatureSequence,
    assistant: FeatureSequence,
    ambient: FeatureSequence,
    xray: FeatureSequence,
    log: &[LogFlags],
) -> Result<OperationRecord> {
    let t = xray.len();
    let lengths = [
        ("physician", physician.len()),
        ("assistant", assistant.len()),
        ("ambient", ambient.len()),
        ("xray_log", log.len()),
    ];
    if let Some((name, n)) = lengths.iter().find(|(_, n)| *n != t) {
        return Err(Error::Misaligned {
            operation: operation_id.to_string(),
            detail: format!("{name} has {n} s, xray_image has {t} s"),
        });
    }
    if ambient.dim() != MFCC_DIM {
        log::warn!(
            "{operation_id}: ambient features have {} dims (expected {MFCC_DIM})",
            ambient.dim()
        );
    }
    let xray_dim = xray.dim();
    let image = xray.concat_dims(&encode_log_sequence(log)?, ChannelId::XrayImage)?;
    let speech = [
        (ChannelId::Physician, physician.with_channel(ChannelId::Physician)),
        (ChannelId::Assistant, assistant.with_channel(ChannelId::Assistant)),
        (ChannelId::Ambient, ambient.with_channel(ChannelId::Ambient)),
    ]
    .into_iter()
    .collect();
    Ok(OperationRecord {
        operation_id: operation_id.to_string(),
        speech,
        image,
        xray_dim,
        labels: None,
    })
}

/// Loads the physician, assistant and image embeddings named in `manifest`
/// and combines them with the per-second log flags and ambient MFCCs.
pub fn assemble_operation(
    manifest: &EmbeddingManifest,
    base: &Path,
    log: &[LogFlags],
    mfcc_ambient: &FeatureSequence,
) -> Result<OperationRecord> {
    assemble_from_sequences(
        &manifest.operation_id,
        manifest.load_channel(base, ChannelId::Physician)?,
        manifest.load_channel(base, ChannelId::Assistant)?,
        mfcc_ambient.clone(),
        manifest.load_channel(base, ChannelId::XrayImage)?,
        log,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(f: u8, d: u8, m: u8) -> LogFlags {
        LogFlags {
            fluoro: f,
            dsa: d,
            moving: m,
        }
    }

    #[test]
    fn log_encoding_blocks() {
        assert_eq!(encode_xray_log(flags(0, 0, 0)).unwrap(), vec![0.0; 192]);
        let v = encode_xray_log(flags(1, 0, 0)).unwrap();
        assert!(v[..64].iter().all(|&x| x == 1.0) && v[64..].iter().all(|&x| x == 0.0));
        let v = encode_xray_log(flags(1, 1, 0)).unwrap();
        assert!(v[..128].iter().all(|&x| x == 1.0) && v[128..].iter().all(|&x| x == 0.0));
        assert!(encode_xray_log(flags(2, 0, 0)).is_err());
    }

    #[test]
    fn ftr1_layout_and_round_trip() {
        let seq = FeatureSequence::new(ChannelId::Physician, 3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let mut bytes = Vec::new();
        write_feature_file_to(&mut bytes, &seq).unwrap();
        assert_eq!(&bytes[..4], b"FTR1");
        assert_eq!(&bytes[4..16], &[1, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 24);
        let back = read_feature_bytes(&bytes, ChannelId::Physician, "mem").unwrap();
        assert_eq!(back.row(1), &[3.0, 4.0]);
        assert_eq!(back, seq);
    }

    #[test]
    fn ftr1_errors() {
        let seq = FeatureSequence::new(ChannelId::Ambient, 2, 2, vec![1.; 4]).unwrap();
        let mut bytes = Vec::new();
        write_feature_file_to(&mut bytes, &seq).unwrap();
        assert!(matches!(
            read_feature_bytes(&bytes[..bytes.len() - 1], ChannelId::Ambient, "x"),
            Err(Error::Truncated(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_feature_bytes(&bad, ChannelId::Ambient, "x"), Err(Error::UnrecognizedFormat(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(read_feature_bytes(&bad, ChannelId::Ambient, "x"), Err(Error::UnrecognizedFormat(_))));
        let mut nan = bytes.clone();
        nan[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(read_feature_bytes(&nan, ChannelId::Ambient, "x"), Err(Error::CorruptFeatures(_))));
    }

    #[test]
    fn empty_ftr1_is_valid() {
        let seq = FeatureSequence::new(ChannelId::Ambient, 0, 5, vec![]).unwrap();
        let mut bytes = Vec::new();
        write_feature_file_to(&mut bytes, &seq).unwrap();
        let back = read_feature_bytes(&bytes, ChannelId::Ambient, "x").unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 5);
    }

    #[test]
    fn stub_is_keyed_by_seed_channel_and_second() {
        let a = stub_embed(7, ChannelId::Physician, 8, 5).unwrap();
        assert_eq!(a, stub_embed(7, ChannelId::Physician, 8, 5).unwrap());
        let b = stub_embed(7, ChannelId::Assistant, 8, 5).unwrap();
        assert_ne!(a.values(), b.values());
        // a longer sequence shares its prefix rows
        let c = stub_embed(7, ChannelId::Physician, 8, 9).unwrap();
        assert_eq!(c.slice(0, 5).values(), a.values());
    }

    #[test]
    fn tensor_is_feature_major() {
        let seq = FeatureSequence::new(ChannelId::Physician, 2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let t = seq.to_tensor();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[1., 4., 2., 5., 3., 6.]);
    }
}
