//! DSP front end: STFT, MFCC, cross-correlation lag estimation and
//! narrow-band growth-event detection.
//!
//! All functions are pure; nothing here keeps global state.

mod events;
mod mfcc;
mod wav;
mod xcorr;

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use events::{band_energy_track, detect_growth_events, BandTrack, EventConfig};
pub use mfcc::{mel_filter_centers, mel_log_energies, mfcc, MfccConfig};
pub use wav::{read_wav, write_wav};
pub use xcorr::{cross_correlate_lag, cross_correlation_direct, cross_correlation_fft, lag_argmax};

/// Mono audio with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sample {i} is {} (must be finite and within [-1, 1])",
                samples[i]
            )));
        }
        Ok(AudioSignal {
            samples,
            sample_rate,
        })
    }

    pub fn silence(seconds: f64, sample_rate: u32) -> Self {
        let n = (seconds * sample_rate as f64).round() as usize;
        AudioSignal {
            samples: vec![0.0; n],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// `n` zeros followed by the signal.
    pub fn zero_prefixed(&self, n: usize) -> Self {
        let mut samples = vec![0.0; n];
        samples.extend_from_slice(&self.samples);
        AudioSignal {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    pub fn truncated(&self, n: usize) -> Self {
        AudioSignal {
            samples: self.samples[..n.min(self.samples.len())].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Hann,
    Hamming,
    Rect,
}

impl Window {
    /// Periodic window coefficients of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        let nf = n as f64;
        (0..n)
            .map(|i| {
                let x = 2.0 * PI * i as f64 / nf;
                match self {
                    Window::Hann => 0.5 - 0.5 * x.cos(),
                    Window::Hamming => 0.54 - 0.46 * x.cos(),
                    Window::Rect => 1.0,
                }
            })
            .collect()
    }
}

/// One-sided magnitude spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// frames × (fft_size/2 + 1)
    pub magnitudes: Vec<Vec<f64>>,
    pub frame_hop_s: f64,
    pub freq_resolution_hz: f64,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn bins(&self) -> usize {
        self.magnitudes.first().map_or(0, Vec::len)
    }
}

/// Windowed frame → one-sided complex spectrum (bins `0..=fft_size/2`).
/// Frames shorter than `fft_size` are zero-padded.
pub(crate) struct FrameFft {
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    window: Vec<f64>,
    fft_size: usize,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl FrameFft {
    pub fn new(frame_len: usize, fft_size: usize, window: Window) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        FrameFft {
            fft,
            window: window.coefficients(frame_len),
            fft_size,
            buf: vec![Complex::default(); fft_size],
            scratch,
        }
    }

    pub fn spectrum(&mut self, frame: &[f64]) -> &[Complex<f64>] {
        debug_assert_eq!(frame.len(), self.window.len());
        for (i, b) in self.buf.iter_mut().enumerate() {
            *b = match frame.get(i) {
                Some(&x) => Complex::new(x * self.window[i], 0.0),
                None => Complex::default(),
            };
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        &self.buf[..self.fft_size / 2 + 1]
    }
}

pub fn stft(signal: &AudioSignal, fft_size: usize, hop: usize, window: Window) -> Result<Spectrogram> {
    if !fft_size.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("fft_size {fft_size} is not a power of two")));
    }
    if hop == 0 {
        return Err(Error::InvalidArgument("hop must be at least 1".into()));
    }
    if signal.len() < fft_size {
        return Err(Error::InsufficientSamples {
            needed: fft_size,
            got: signal.len(),
        });
    }
    let frames = (signal.len() - fft_size) / hop + 1;
    let mut engine = FrameFft::new(fft_size, fft_size, window);
    let magnitudes = (0..frames)
        .map(|f| {
            let start = f * hop;
            engine
                .spectrum(&signal.samples()[start..start + fft_size])
                .iter()
                .map(|c| c.norm())
                .collect()
        })
        .collect();
    let sr = signal.sample_rate() as f64;
    Ok(Spectrogram {
        magnitudes,
        frame_hop_s: hop as f64 / sr,
        freq_resolution_hz: sr / fft_size as f64,
    })
}
