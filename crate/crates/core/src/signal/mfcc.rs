use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{AudioSignal, FrameFft, Window};
use crate::error::{Error, Result};
use crate::features::{ChannelId, FeatureSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    pub n_coeffs: usize,
    pub frame_len_s: f64,
    pub frame_hop_s: f64,
    pub n_mel_filters: usize,
    pub fmin_hz: f64,
    /// `None` means Nyquist.
    pub fmax_hz: Option<f64>,
    pub log_floor: f64,
    pub window: Window,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            n_coeffs: 40,
            frame_len_s: 0.025,
            frame_hop_s: 0.010,
            n_mel_filters: 64,
            fmin_hz: 0.0,
            fmax_hz: None,
            log_floor: 1e-10,
            window: Window::Hamming,
        }
    }
}

/// Sample-domain geometry resolved against a sample rate.
struct Plan {
    frame_len: usize,
    hop: usize,
    fft_size: usize,
    fmin: f64,
    fmax: f64,
}

impl MfccConfig {
    fn plan(&self, sample_rate: u32) -> Result<Plan> {
        let sr = sample_rate as f64;
        let fmax = self.fmax_hz.unwrap_or(sr / 2.0);
        if self.n_coeffs == 0 || self.n_coeffs > self.n_mel_filters {
            return Err(Error::InvalidArgument(format!(
                "n_coeffs {} must be in 1..={}",
                self.n_coeffs, self.n_mel_filters
            )));
        }
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < fmax && fmax <= sr / 2.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= fmin ({}) < fmax ({fmax}) <= {}",
                self.fmin_hz,
                sr / 2.0
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::InvalidArgument("log_floor must be positive".into()));
        }
        let frame_len = (self.frame_len_s * sr).round() as usize;
        let hop = (self.frame_hop_s * sr).round() as usize;
        if frame_len < 2 || frame_len > sample_rate as usize || hop == 0 {
            return Err(Error::InvalidArgument(format!(
                "frame {} s / hop {} s do not fit a one-second pooling window at {sample_rate} Hz",
                self.frame_len_s, self.frame_hop_s
            )));
        }
        Ok(Plan {
            frame_len,
            hop,
            fft_size: frame_len.next_power_of_two(),
            fmin: self.fmin_hz,
            fmax,
        })
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `n_filters + 2` edge frequencies evenly spaced on the mel scale.
fn mel_edges(n_filters: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    (0..n_filters + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_filters + 1) as f64))
        .collect()
}

/// Center frequency of each triangular mel filter.
pub fn mel_filter_centers(cfg: &MfccConfig, sample_rate: u32) -> Result<Vec<f64>> {
    let plan = cfg.plan(sample_rate)?;
    let edges = mel_edges(cfg.n_mel_filters, plan.fmin, plan.fmax);
    Ok(edges[1..=cfg.n_mel_filters].to_vec())
}

/// filters × bins triangular weights (peak 1) over FFT bin centers.
fn filterbank(n_filters: usize, plan: &Plan, sr: f64) -> Vec<Vec<f64>> {
    let edges = mel_edges(n_filters, plan.fmin, plan.fmax);
    let bins = plan.fft_size / 2 + 1;
    (0..n_filters)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sr / plan.fft_size as f64;
                    if f <= l || f >= r {
                        0.0
                    } else if f <= c {
                        (f - l) / (c - l)
                    } else {
                        (r - f) / (r - c)
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II basis, `n_out × n_in`.
fn dct_matrix(n_out: usize, n_in: usize) -> Vec<Vec<f64>> {
    let n = n_in as f64;
    (0..n_out)
        .map(|k| {
            let s = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            (0..n_in)
                .map(|i| s * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos())
                .collect()
        })
        .collect()
}

/// Frame starts grouped by whole second. Each second restarts the hop grid
/// and only holds frames lying entirely inside it, so a second's row depends
/// on that second's samples alone.
fn frames_by_second(n_seconds: usize, sr: usize, plan: &Plan) -> Vec<Vec<usize>> {
    let per_second = (sr - plan.frame_len) / plan.hop + 1;
    (0..n_seconds)
        .map(|s| (0..per_second).map(|j| s * sr + j * plan.hop).collect())
        .collect()
}

struct MelFrontEnd {
    engine: FrameFft,
    bank: Vec<Vec<f64>>,
    log_floor: f64,
    frame_len: usize,
}

impl MelFrontEnd {
    fn new(cfg: &MfccConfig, plan: &Plan, sr: f64) -> Self {
        MelFrontEnd {
            engine: FrameFft::new(plan.frame_len, plan.fft_size, cfg.window),
            bank: filterbank(cfg.n_mel_filters, plan, sr),
            log_floor: cfg.log_floor,
            frame_len: plan.frame_len,
        }
    }

    fn log_energies(&mut self, samples: &[f64], start: usize) -> Vec<f64> {
        let power: Vec<f64> = self
            .engine
            .spectrum(&samples[start..start + self.frame_len])
            .iter()
            .map(|c| c.norm_sqr())
            .collect();
        self.bank
            .iter()
            .map(|w| {
                let e: f64 = w.iter().zip(&power).map(|(a, b)| a * b).sum();
                e.max(self.log_floor).ln()
            })
            .collect()
    }
}

/// Pre-DCT log mel energies of every frame used by [`mfcc`], in time order.
pub fn mel_log_energies(signal: &AudioSignal, cfg: &MfccConfig) -> Result<Vec<Vec<f64>>> {
    let plan = cfg.plan(signal.sample_rate())?;
    let sr = signal.sample_rate() as usize;
    let n_seconds = signal.len() / sr;
    let mut fe = MelFrontEnd::new(cfg, &plan, sr as f64);
    Ok(frames_by_second(n_seconds, sr, &plan)
        .into_iter()
        .flatten()
        .map(|start| fe.log_energies(signal.samples(), start))
        .collect())
}

/// Per-second MFCCs (`floor(duration)` rows × `n_coeffs`).
pub fn mfcc(signal: &AudioSignal, cfg: &MfccConfig) -> Result<FeatureSequence> {
    let plan = cfg.plan(signal.sample_rate())?;
    let sr = signal.sample_rate() as usize;
    let n_seconds = signal.len() / sr;
    if n_seconds == 0 {
        return Err(Error::OperationTooShort {
            seconds: signal.duration_s(),
        });
    }
    let mut fe = MelFrontEnd::new(cfg, &plan, sr as f64);
    let dct = dct_matrix(cfg.n_coeffs, cfg.n_mel_filters);
    let mut values = Vec::with_capacity(n_seconds * cfg.n_coeffs);
    for starts in frames_by_second(n_seconds, sr, &plan) {
        let mut acc = vec![0.0; cfg.n_coeffs];
        for &start in &starts {
            let le = fe.log_energies(signal.samples(), start);
            for (a, basis) in acc.iter_mut().zip(&dct) {
                *a += basis.iter().zip(&le).map(|(b, e)| b * e).sum::<f64>();
            }
        }
        let n = starts.len() as f64;
        values.extend(acc.iter().map(|a| (a / n) as f32));
    }
    FeatureSequence::new(ChannelId::Ambient, n_seconds, cfg.n_coeffs, values)
}
