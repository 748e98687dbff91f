//! Synthetic operations with known ground truth.
//!
//! Each channel draws class-conditional Gaussian features, but several
//! phases share one mean within a channel, so no single channel separates
//! every class while all channels together do. The X-ray log follows the
//! phase semantics (fluoroscopy bursts, DSA, table movement) on a shifted
//! clock, and short audio excerpts carry the activation beeps and a lagged
//! ambient recording for the alignment pipeline.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{PhaseTimeline, N_CLASSES, N_PHASES, TRANSITION};
use crate::align::{LogFlags, XrayLogRecord};
use crate::error::{Error, Result};
use crate::features::{assemble_from_sequences, ChannelId, FeatureSequence, OperationRecord};
use crate::signal::AudioSignal;

/// Classes that share a feature mean, per channel. Unlisted classes get
/// their own mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelGroups {
    pub physician: Vec<Vec<usize>>,
    pub assistant: Vec<Vec<usize>>,
    pub ambient: Vec<Vec<usize>>,
    pub xray: Vec<Vec<usize>>,
}

impl Default for ChannelGroups {
    fn default() -> Self {
        ChannelGroups {
            physician: vec![vec![3, 4], vec![5, 6, 7]],
            assistant: vec![vec![1, 2], vec![4, 5], vec![6, 7, 8]],
            ambient: vec![vec![0, 1], vec![2, 3], vec![5, 6], vec![7, 8]],
            xray: vec![vec![0, 1], vec![3, 4], vec![7, 8]],
        }
    }
}

impl ChannelGroups {
    fn of(&self, ch: ChannelId) -> &[Vec<usize>] {
        match ch {
            ChannelId::Physician => &self.physician,
            ChannelId::Assistant => &self.assistant,
            ChannelId::Ambient => &self.ambient,
            _ => &self.xray,
        }
    }

    /// Mean index of `class` in channel `ch`.
    fn mean_index(&self, ch: ChannelId, class: usize) -> usize {
        let groups = self.of(ch);
        groups
            .iter()
            .position(|g| g.contains(&class))
            .unwrap_or(groups.len() + class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthDims {
    pub physician: usize,
    pub assistant: usize,
    pub ambient: usize,
    pub xray: usize,
}

impl Default for SynthDims {
    fn default() -> Self {
        SynthDims {
            physician: 64,
            assistant: 64,
            ambient: 40,
            xray: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthAudioConfig {
    pub enabled: bool,
    pub sample_rate: u32,
    /// Length of each WAV excerpt.
    pub excerpt_s: f64,
    /// How long before the first X-ray activation the excerpt starts.
    pub lead_s: (f64, f64),
    /// Late start of the ambient recording.
    pub ambient_lag_s: (f64, f64),
    pub snr_db: f64,
    /// Standard deviation of the shared room sound; each personal
    /// microphone adds its own noise at a third of this level.
    pub room_noise_std: f64,
    pub beep_hz: f64,
    pub beep_peak: f64,
    pub beep_rise_s: f64,
    pub beep_len_s: f64,
}

impl Default for SynthAudioConfig {
    fn default() -> Self {
        SynthAudioConfig {
            enabled: true,
            sample_rate: 4000,
            excerpt_s: 40.0,
            lead_s: (5.0, 15.0),
            ambient_lag_s: (0.5, 8.0),
            snr_db: 10.0,
            room_noise_std: 0.03,
            beep_hz: 542.0,
            beep_peak: 0.4,
            beep_rise_s: 1.0,
            beep_len_s: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_operations: usize,
    pub seed: u64,
    /// Inclusive duration range of phases 1..=8, in seconds.
    pub phase_duration_s: Vec<(usize, usize)>,
    /// Inclusive range of the transition gaps between phases.
    pub transition_s: (usize, usize),
    pub noise_scale: f64,
    /// Standard deviation of the per-class mean vectors.
    pub mean_separation: f64,
    pub dims: SynthDims,
    pub groups: ChannelGroups,
    pub fluoro_burst_s: (usize, usize),
    pub fluoro_gap_s: (usize, usize),
    pub dsa_burst_s: (usize, usize),
    pub dsa_gap_s: (usize, usize),
    /// Seconds of table movement at the start of guide-wire positioning and
    /// at the end of catheter control.
    pub moving_s: usize,
    /// Range of the log clock's offset from the recording clock.
    pub log_offset_s: (f64, f64),
    /// Extra seconds the ambient recorder keeps running.
    pub ambient_tail_s: (usize, usize),
    pub audio: SynthAudioConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_operations: 28,
            seed: 0,
            phase_duration_s: vec![(30, 300); N_PHASES],
            transition_s: (3, 8),
            noise_scale: 0.3,
            mean_separation: 1.0,
            dims: SynthDims::default(),
            groups: ChannelGroups::default(),
            fluoro_burst_s: (2, 5),
            fluoro_gap_s: (3, 8),
            dsa_burst_s: (3, 6),
            dsa_gap_s: (4, 10),
            moving_s: 3,
            log_offset_s: (-900.0, 900.0),
            ambient_tail_s: (0, 5),
            audio: SynthAudioConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_operations == 0 {
            return bad("n_operations must be at least 1".into());
        }
        if self.phase_duration_s.len() != N_PHASES {
            return bad(format!("need {N_PHASES} phase duration ranges"));
        }
        for (i, &(lo, hi)) in self.phase_duration_s.iter().enumerate() {
            if lo == 0 || lo > hi {
                return bad(format!("phase {} duration range ({lo}, {hi}) is invalid", i + 1));
            }
        }
        let ranges = [
            ("transition_s", self.transition_s),
            ("fluoro_burst_s", self.fluoro_burst_s),
            ("dsa_burst_s", self.dsa_burst_s),
            ("fluoro_gap_s", self.fluoro_gap_s),
            ("dsa_gap_s", self.dsa_gap_s),
            ("ambient_tail_s", self.ambient_tail_s),
        ];
        for (name, (lo, hi)) in ranges {
            if lo > hi {
                return bad(format!("{name} range ({lo}, {hi}) is invalid"));
            }
        }
        if self.fluoro_burst_s.0 == 0 || self.dsa_burst_s.0 == 0 {
            return bad("bursts must last at least one second".into());
        }
        if !(self.noise_scale >= 0.0) || !(self.mean_separation > 0.0) {
            return bad("noise_scale must be >= 0 and mean_separation > 0".into());
        }
        let d = &self.dims;
        if [d.physician, d.assistant, d.ambient, d.xray].contains(&0) {
            return bad("feature dims must be positive".into());
        }
        if self.log_offset_s.0 > self.log_offset_s.1 {
            return bad("log_offset_s range is invalid".into());
        }
        let a = &self.audio;
        if a.enabled {
            if a.sample_rate < 2 * a.beep_hz.ceil() as u32 + 2 {
                return bad("audio sample rate cannot represent the beep".into());
            }
            if !(a.lead_s.0 >= 0.0 && a.lead_s.0 <= a.lead_s.1)
                || !(a.ambient_lag_s.0 >= 0.0 && a.ambient_lag_s.0 <= a.ambient_lag_s.1)
            {
                return bad("audio lead/lag ranges are invalid".into());
            }
            if a.excerpt_s <= a.lead_s.1 + a.ambient_lag_s.1 + a.beep_len_s {
                return bad("audio excerpt too short for the configured lead and lag".into());
            }
            if !(a.beep_rise_s > 0.0 && a.beep_len_s >= a.beep_rise_s && a.beep_peak > 0.0 && a.beep_peak < 1.0) {
                return bad("beep shape is invalid".into());
            }
        }
        Ok(())
    }
}

/// Everything a recording setup would hand over before alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct RawOperation {
    pub physician: FeatureSequence,
    pub assistant: FeatureSequence,
    /// Ambient features on the ambient recorder's own clock.
    pub ambient: FeatureSequence,
    pub xray: FeatureSequence,
    /// Log on the X-ray machine's clock.
    pub log: Vec<XrayLogRecord>,
    /// Physician, assistant and ambient excerpts.
    pub audio: Option<[AudioSignal; 3]>,
    /// Recording time at which the excerpts start.
    pub audio_offset_s: f64,
    /// Late start of the ambient recorder.
    pub ambient_lag_s: f64,
    /// Log clock minus recording clock.
    pub log_offset_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOperation {
    pub operation_id: String,
    pub timeline: PhaseTimeline,
    /// Perfectly aligned inputs with labels.
    pub record: OperationRecord,
    pub raw: RawOperation,
    /// Recording times of X-ray activations (beeps).
    pub activations: Vec<usize>,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

fn uniform_f(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Per-channel class means, shared by every operation of a corpus.
struct Means {
    by_channel: Vec<(ChannelId, Vec<Vec<f32>>)>,
}

impl Means {
    fn new(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, cfg.mean_separation).expect("positive separation");
        let channels = [
            (ChannelId::Physician, cfg.dims.physician),
            (ChannelId::Assistant, cfg.dims.assistant),
            (ChannelId::Ambient, cfg.dims.ambient),
            (ChannelId::XrayImage, cfg.dims.xray),
        ];
        let by_channel = channels
            .iter()
            .map(|&(ch, d)| {
                let n = cfg.groups.of(ch).len() + N_CLASSES;
                let means = (0..n)
                    .map(|_| (0..d).map(|_| normal.sample(&mut rng) as f32).collect())
                    .collect();
                (ch, means)
            })
            .collect();
        Means { by_channel }
    }

    fn sample(&self, cfg: &SynthConfig, ch: ChannelId, labels: &[usize], rng: &mut ChaCha8Rng) -> FeatureSequence {
        let means = &self.by_channel.iter().find(|(c, _)| *c == ch).expect("known channel").1;
        let d = means[0].len();
        let mut values = Vec::with_capacity(labels.len() * d);
        for &y in labels {
            let mu = &means[cfg.groups.mean_index(ch, y)];
            values.extend(mu.iter().map(|&m| {
                let z: f64 = StandardNormal.sample(rng);
                m + (cfg.noise_scale * z) as f32
            }));
        }
        FeatureSequence::new(ch, labels.len(), d, values).expect("finite synthetic features")
    }
}

/// Phase order with transitions in between; returns labels and the
/// `[start, end)` second range of each phase.
fn sample_timeline(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut labels = Vec::new();
    let mut spans = Vec::with_capacity(N_PHASES);
    for p in 1..=N_PHASES {
        if p > 1 {
            let gap = uniform(rng, cfg.transition_s);
            labels.extend(std::iter::repeat(TRANSITION).take(gap));
        }
        let d = uniform(rng, cfg.phase_duration_s[p - 1]);
        spans.push((labels.len(), labels.len() + d));
        labels.extend(std::iter::repeat(p).take(d));
    }
    (labels, spans)
}

fn bursts(
    rng: &mut ChaCha8Rng,
    (start, end): (usize, usize),
    len: (usize, usize),
    gap: (usize, usize),
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut t = start;
    while t < end {
        let b = uniform(rng, len);
        out.push((t, (t + b).min(end)));
        t += b + uniform(rng, gap);
    }
    out
}

/// Per-second machine state and activation times on the recording clock.
fn sample_log_states(
    cfg: &SynthConfig,
    spans: &[(usize, usize)],
    seconds: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<LogFlags>, Vec<usize>) {
    let mut flags = vec![LogFlags::default(); seconds];
    for phase in [3, 5, 6] {
        for (s, e) in bursts(rng, spans[phase - 1], cfg.fluoro_burst_s, cfg.fluoro_gap_s) {
            flags[s..e].iter_mut().for_each(|f| f.fluoro = 1);
        }
    }
    for (s, e) in bursts(rng, spans[6], cfg.dsa_burst_s, cfg.dsa_gap_s) {
        flags[s..e].iter_mut().for_each(|f| f.dsa = 1);
    }
    let (g0, g1) = spans[2];
    let (c0, c1) = spans[6];
    flags[g0..(g0 + cfg.moving_s).min(g1)].iter_mut().for_each(|f| f.moving = 1);
    flags[c1.saturating_sub(cfg.moving_s).max(c0)..c1]
        .iter_mut()
        .for_each(|f| f.moving = 1);

    let active = |f: &LogFlags| f.fluoro == 1 || f.dsa == 1;
    let activations = (0..seconds)
        .filter(|&t| active(&flags[t]) && (t == 0 || !active(&flags[t - 1])))
        .collect();
    (flags, activations)
}

/// State-change records on the log clock.
fn log_records(flags: &[LogFlags], activations: &[usize], offset: f64) -> Vec<XrayLogRecord> {
    let mut out = vec![XrayLogRecord {
        t_s: offset,
        fluoro: 0,
        dsa: 0,
        moving: 0,
        beep: 0,
    }];
    let mut prev = LogFlags::default();
    for (t, f) in flags.iter().enumerate() {
        if *f != prev {
            out.push(XrayLogRecord {
                t_s: t as f64 + offset,
                fluoro: f.fluoro,
                dsa: f.dsa,
                moving: f.moving,
                beep: activations.binary_search(&t).is_ok() as u8,
            });
            prev = *f;
        }
    }
    out
}

/// Physician, assistant and ambient excerpts around the first activation.
fn sample_audio(
    a: &SynthAudioConfig,
    activations: &[usize],
    excerpt_start: f64,
    lag_samples: usize,
    rng: &mut ChaCha8Rng,
) -> [AudioSignal; 3] {
    let sr = a.sample_rate as usize;
    let n = (a.excerpt_s * sr as f64).round() as usize;
    let t0 = excerpt_start;
    // shared room sound on the recording clock, covering both windows
    let room: Vec<f64> = (0..n + lag_samples)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            a.room_noise_std * z
        })
        .collect();
    let k = (1000.0f64).ln() / a.beep_rise_s;
    let beep = |t: f64| -> f64 {
        activations
            .iter()
            .map(|&s| t - s as f64)
            .filter(|tau| (0.0..a.beep_len_s).contains(tau))
            .map(|tau| {
                let env = a.beep_peak * ((tau - a.beep_rise_s).min(0.0) * k).exp();
                env * (2.0 * PI * a.beep_hz * tau).sin()
            })
            .sum()
    };
    let clip = |v: f64| v.clamp(-1.0, 1.0);
    let mut personal = |gain: f64| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let own: f64 = StandardNormal.sample(rng);
                clip(room[i] + a.room_noise_std / 3.0 * own + gain * beep(t0 + i as f64 / sr as f64))
            })
            .collect()
    };
    let physician = personal(1.0);
    let assistant = personal(0.5);
    let clean: Vec<f64> = (0..n)
        .map(|j| {
            let i = j + lag_samples;
            0.8 * room[i] + 0.3 * beep(t0 + i as f64 / sr as f64)
        })
        .collect();
    let power = clean.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let noise_std = (power / 10f64.powf(a.snr_db / 10.0)).sqrt();
    let ambient = clean
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(rng);
            clip(v + noise_std * z)
        })
        .collect();
    [physician, assistant, ambient].map(|x| AudioSignal::new(x, a.sample_rate).expect("clipped finite audio"))
}

fn generate_one(cfg: &SynthConfig, means: &Means, index: usize, id: String) -> Result<SynthOperation> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let (labels, spans) = sample_timeline(cfg, &mut rng);
    let seconds = labels.len();
    let (flags, activations) = sample_log_states(cfg, &spans, seconds, &mut rng);

    let physician = means.sample(cfg, ChannelId::Physician, &labels, &mut rng);
    let assistant = means.sample(cfg, ChannelId::Assistant, &labels, &mut rng);
    let ambient = means.sample(cfg, ChannelId::Ambient, &labels, &mut rng);
    let xray = means.sample(cfg, ChannelId::XrayImage, &labels, &mut rng);

    let log_offset = uniform_f(&mut rng, cfg.log_offset_s);
    let log = log_records(&flags, &activations, log_offset);

    // lag in whole samples, kept away from half-second rounding ties
    let sr = cfg.audio.sample_rate as f64;
    let mut lag = uniform_f(&mut rng, cfg.audio.ambient_lag_s);
    if (lag.fract() - 0.5).abs() < 0.05 {
        lag += 0.1;
    }
    let lag_samples = (lag * sr).round() as usize;
    let lag = lag_samples as f64 / sr;
    let shift = (lag.round() as usize).min(seconds.saturating_sub(1));

    let tail = uniform(&mut rng, cfg.ambient_tail_s);
    let tail_labels = vec![labels[seconds - 1]; tail];
    let tail_rows = means.sample(cfg, ChannelId::Ambient, &tail_labels, &mut rng);
    let mut raw_ambient = ambient.slice(shift, seconds).values().to_vec();
    raw_ambient.extend_from_slice(tail_rows.values());
    let raw_ambient =
        FeatureSequence::new(ChannelId::Ambient, seconds - shift + tail, ambient.dim(), raw_ambient)?;

    let first = *activations.first().expect("guide wire phase always fluoroscopes");
    let lead = uniform_f(&mut rng, cfg.audio.lead_s);
    let audio_offset = (first as f64 - lead).max(0.0);
    let audio = cfg
        .audio
        .enabled
        .then(|| sample_audio(&cfg.audio, &activations, audio_offset, lag_samples, &mut rng));

    let mut record = assemble_from_sequences(
        &id,
        physician.clone(),
        assistant.clone(),
        ambient,
        xray.clone(),
        &flags,
    )?;
    record.labels = Some(labels.clone());
    Ok(SynthOperation {
        operation_id: id,
        timeline: PhaseTimeline::new(labels)?,
        record,
        raw: RawOperation {
            physician,
            assistant,
            ambient: raw_ambient,
            xray,
            log,
            audio,
            audio_offset_s: audio_offset,
            ambient_lag_s: lag,
            log_offset_s: log_offset,
        },
        activations,
    })
}

/// Deterministic corpus of `cfg.n_operations` operations.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<SynthOperation>> {
    cfg.validate()?;
    let means = Means::new(cfg);
    let width = cfg.n_operations.to_string().len().max(2);
    (0..cfg.n_operations)
        .map(|i| generate_one(cfg, &means, i, format!("op{:0width$}", i + 1)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_operations: 3,
            phase_duration_s: vec![(20, 40); N_PHASES],
            audio: SynthAudioConfig {
                enabled: false,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_in_range() {
        let cfg = small();
        let a = synth_generate(&cfg).unwrap();
        assert_eq!(a, synth_generate(&cfg).unwrap());
        for op in &a {
            let d = op.timeline.class_durations();
            for p in 1..=N_PHASES {
                assert!((20..=40).contains(&d[p]));
            }
            assert_eq!(op.record.seconds(), op.timeline.len());
        }
        assert_ne!(a[0].timeline, a[1].timeline);
    }

    #[test]
    fn log_follows_phase_semantics() {
        for op in synth_generate(&small()).unwrap() {
            let labels = op.timeline.labels();
            let flags = crate::align::log_to_per_second(
                &crate::align::shift_log(&op.raw.log, -op.raw.log_offset_s),
                labels.len(),
            );
            for (t, f) in flags.iter().enumerate() {
                if f.fluoro == 1 {
                    assert!([3, 5, 6].contains(&labels[t]));
                }
                if f.dsa == 1 {
                    assert_eq!(labels[t], 7);
                }
            }
            let beeps = op.raw.log.iter().filter(|r| r.beep == 1).count();
            assert_eq!(beeps, op.activations.len());
        }
    }

    #[test]
    fn raw_ambient_is_the_lagged_tail() {
        let cfg = SynthConfig {
            audio: SynthAudioConfig {
                enabled: true,
                excerpt_s: 30.0,
                ..Default::default()
            },
            ..small()
        };
        for op in synth_generate(&cfg).unwrap() {
            let shift = op.raw.ambient_lag_s.round() as usize;
            let truth = op.record.speech_channel(ChannelId::Ambient).unwrap();
            assert_eq!(op.raw.ambient.row(0), truth.row(shift));
            let audio = op.raw.audio.as_ref().unwrap();
            assert!(audio.iter().all(|s| s.len() == 30 * 4000));
        }
    }

    #[test]
    fn invalid_configs() {
        let mut c = small();
        c.phase_duration_s.pop();
        assert!(synth_generate(&c).is_err());
        let c = SynthConfig {
            n_operations: 0,
            ..small()
        };
        assert!(synth_generate(&c).is_err());
    }
}
