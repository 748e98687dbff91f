//! Channel timeline reconciliation: lag compensation, image gap marking and
//! X-ray log rebasing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::signal::AudioSignal;

/// Per-second X-ray machine state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LogFlags {
    pub fluoro: u8,
    pub dsa: u8,
    pub moving: u8,
}

/// One row of an X-ray log file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XrayLogRecord {
    pub t_s: f64,
    pub fluoro: u8,
    pub dsa: u8,
    pub moving: u8,
    pub beep: u8,
}

impl XrayLogRecord {
    pub fn flags(&self) -> LogFlags {
        LogFlags {
            fluoro: self.fluoro,
            dsa: self.dsa,
            moving: self.moving,
        }
    }
}

/// The three audio channels plus per-second image presence.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub physician: AudioSignal,
    pub assistant: AudioSignal,
    pub ambient: AudioSignal,
    /// `false` where the image stream has no frame (rendered black).
    pub image_present: Vec<bool>,
}

impl ChannelSet {
    pub fn durations_s(&self) -> [f64; 3] {
        [
            self.physician.duration_s(),
            self.assistant.duration_s(),
            self.ambient.duration_s(),
        ]
    }

    pub fn absent_leading_seconds(&self) -> usize {
        self.image_present.iter().take_while(|p| !**p).count()
    }
}

/// Compensates a recording offset between the ambient microphone and the
/// personal microphones.
///
/// `lag_s > 0` means the ambient recording started late, so it is
/// zero-prefixed; `lag_s < 0` means the personal microphones (and the image
/// stream recorded with them) started late, so they are prefixed and the
/// image gains absent leading seconds. Everything is then trimmed to the
/// shortest channel, rounded down to whole seconds.
///
/// `lag_s` is what [`crate::signal::cross_correlate_lag`] returns for
/// `(ambient, physician)`.
pub fn align_by_lag(channels: &ChannelSet, lag_s: f64) -> Result<ChannelSet> {
    let rates = [
        channels.physician.sample_rate(),
        channels.assistant.sample_rate(),
        channels.ambient.sample_rate(),
    ];
    if rates.iter().any(|&r| r != rates[0]) {
        let bad = *rates.iter().find(|&&r| r != rates[0]).expect("mismatch exists");
        return Err(Error::SampleRateMismatch(rates[0], bad));
    }
    let shortest = channels.durations_s().into_iter().fold(f64::INFINITY, f64::min);
    if !lag_s.is_finite() || lag_s.abs() >= shortest {
        return Err(Error::NonOverlapping {
            lag_s,
            duration_s: shortest,
        });
    }
    let sr = rates[0] as usize;
    let pad = (lag_s.abs() * sr as f64).round() as usize;
    let (mut physician, mut assistant, mut ambient) = (
        channels.physician.clone(),
        channels.assistant.clone(),
        channels.ambient.clone(),
    );
    let mut image = channels.image_present.clone();
    if lag_s > 0.0 {
        ambient = ambient.zero_prefixed(pad);
    } else if lag_s < 0.0 {
        physician = physician.zero_prefixed(pad);
        assistant = assistant.zero_prefixed(pad);
        let absent = lag_s.abs().ceil() as usize;
        let mut shifted = vec![false; absent];
        shifted.extend(image);
        image = shifted;
    }
    let seconds = [physician.len(), assistant.len(), ambient.len()]
        .into_iter()
        .min()
        .expect("three channels")
        / sr;
    image.resize(seconds, false);
    let n = seconds * sr;
    Ok(ChannelSet {
        physician: physician.truncated(n),
        assistant: assistant.truncated(n),
        ambient: ambient.truncated(n),
        image_present: image,
    })
}

/// Per-second counterpart of [`align_by_lag`] for precomputed features:
/// prefixes `pad` zero rows, then trims or zero-extends to `seconds` rows.
pub fn shift_features(seq: &FeatureSequence, pad: usize, seconds: usize) -> FeatureSequence {
    let d = seq.dim();
    let mut values = vec![0.0f32; pad.min(seconds) * d];
    let keep = seconds.saturating_sub(pad).min(seq.len());
    values.extend_from_slice(&seq.values()[..keep * d]);
    values.resize(seconds * d, 0.0);
    FeatureSequence::new(seq.channel(), seconds, d, values).expect("finite rows of a valid sequence")
}

/// How log beeps are matched to detected audio events.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RebaseMode {
    /// First beep against first event.
    #[default]
    FirstPair,
    /// Median offset of the i-th beep against the i-th event.
    MedianPairs,
}

/// Offset to add to log timestamps so that beeps line up with audio events.
pub fn rebase_offset(log: &[XrayLogRecord], audio_events: &[f64], mode: RebaseMode) -> Result<f64> {
    let beeps: Vec<f64> = log.iter().filter(|r| r.beep == 1).map(|r| r.t_s).collect();
    if beeps.is_empty() {
        return Err(Error::CannotRebase("log has no beep record"));
    }
    if audio_events.is_empty() {
        return Err(Error::CannotRebase("no audio event detected"));
    }
    Ok(match mode {
        RebaseMode::FirstPair => audio_events[0] - beeps[0],
        RebaseMode::MedianPairs => {
            let mut d: Vec<f64> = audio_events.iter().zip(&beeps).map(|(e, b)| e - b).collect();
            d.sort_by(f64::total_cmp);
            let m = d.len() / 2;
            if d.len() % 2 == 1 {
                d[m]
            } else {
                (d[m - 1] + d[m]) / 2.0
            }
        }
    })
}

pub fn rebase_log_timestamps(
    log: &[XrayLogRecord],
    audio_events: &[f64],
    mode: RebaseMode,
) -> Result<Vec<XrayLogRecord>> {
    let offset = rebase_offset(log, audio_events, mode)?;
    Ok(shift_log(log, offset))
}

pub fn shift_log(log: &[XrayLogRecord], offset: f64) -> Vec<XrayLogRecord> {
    log.iter()
        .map(|r| XrayLogRecord {
            t_s: r.t_s + offset,
            ..*r
        })
        .collect()
}

/// Zero-order hold of log states onto seconds `0..seconds`.
pub fn log_to_per_second(log: &[XrayLogRecord], seconds: usize) -> Vec<LogFlags> {
    let mut out = Vec::with_capacity(seconds);
    let mut next = 0;
    let mut state = LogFlags::default();
    for t in 0..seconds {
        while next < log.len() && log[next].t_s <= t as f64 {
            state = log[next].flags();
            next += 1;
        }
        out.push(state);
    }
    out
}

fn validate_log(log: &[XrayLogRecord], path: &Path) -> Result<()> {
    for (i, r) in log.iter().enumerate() {
        if !r.t_s.is_finite() {
            return Err(Error::parse(path, format!("row {}: non-finite t_s", i + 1)));
        }
        if [r.fluoro, r.dsa, r.moving, r.beep].iter().any(|&f| f > 1) {
            return Err(Error::parse(path, format!("row {}: flags must be 0 or 1", i + 1)));
        }
        if i > 0 && r.t_s < log[i - 1].t_s {
            return Err(Error::parse(path, format!("row {}: t_s decreases", i + 1)));
        }
    }
    Ok(())
}

/// Reads a `t_s,fluoro,dsa,moving,beep` CSV; `#` lines are comments.
pub fn read_log_csv(path: &Path) -> Result<Vec<XrayLogRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::parse(path, e))?;
    let headers = rdr.headers().map_err(|e| Error::parse(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t_s", "fluoro", "dsa", "moving", "beep"] {
        return Err(Error::parse(path, format!("unexpected header {headers:?}")));
    }
    let log = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<XrayLogRecord>, _>>()
        .map_err(|e| Error::parse(path, e))?;
    validate_log(&log, path)?;
    Ok(log)
}

pub fn write_log_csv(path: &Path, log: &[XrayLogRecord], header_comment: Option<&str>) -> Result<()> {
    let mut out = String::new();
    if let Some(c) = header_comment {
        out.push_str(&format!("# {c}\n"));
    }
    out.push_str("t_s,fluoro,dsa,moving,beep\n");
    for r in log {
        out.push_str(&format!("{},{},{},{},{}\n", r.t_s, r.fluoro, r.dsa, r.moving, r.beep));
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
