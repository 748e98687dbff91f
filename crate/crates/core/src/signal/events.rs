use serde::{Deserialize, Serialize};

use super::{AudioSignal, FrameFft, Window};
use crate::error::{Error, Result};

/// Summed band magnitude per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BandTrack {
    pub amplitudes: Vec<f64>,
    /// Frames are stamped at their first sample, `i * hop_s`.
    pub hop_s: f64,
}

impl BandTrack {
    pub fn from_amplitudes(amplitudes: Vec<f64>, hop_s: f64) -> Self {
        BandTrack { amplitudes, hop_s }
    }

    pub fn time_of(&self, frame: usize) -> f64 {
        frame as f64 * self.hop_s
    }
}

/// Band tracking and growth-run thresholds for beep detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventConfig {
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    pub frame_len_s: f64,
    pub hop_s: f64,
    pub min_consecutive: usize,
    pub growth_ratio: f64,
}

impl Default for EventConfig {
    fn default() -> Self {
        EventConfig {
            f_lo_hz: 539.0,
            f_hi_hz: 545.0,
            frame_len_s: 0.25,
            hop_s: 0.05,
            min_consecutive: 8,
            growth_ratio: 1.1,
        }
    }
}

impl EventConfig {
    pub fn detect(&self, signal: &AudioSignal) -> Result<Vec<f64>> {
        let track = band_energy_track(signal, self.f_lo_hz, self.f_hi_hz, self.frame_len_s, self.hop_s)?;
        detect_growth_events(&track, self.min_consecutive, self.growth_ratio)
    }
}

pub fn band_energy_track(
    signal: &AudioSignal,
    f_lo: f64,
    f_hi: f64,
    frame_len_s: f64,
    hop_s: f64,
) -> Result<BandTrack> {
    let sr = signal.sample_rate() as f64;
    if !(f_lo > 0.0 && f_lo < f_hi && f_hi <= sr / 2.0) {
        return Err(Error::InvalidArgument(format!(
            "band [{f_lo}, {f_hi}] must satisfy 0 < lo < hi <= {}",
            sr / 2.0
        )));
    }
    let frame_len = (frame_len_s * sr).round() as usize;
    let hop = (hop_s * sr).round() as usize;
    if frame_len == 0 || hop == 0 {
        return Err(Error::InvalidArgument("frame length and hop must span at least one sample".into()));
    }
    let fft_size = frame_len.next_power_of_two();
    let res = sr / fft_size as f64;
    let lo_bin = (f_lo / res).ceil() as usize;
    let hi_bin = (f_hi / res).floor() as usize;
    if lo_bin > hi_bin {
        return Err(Error::BandTooNarrow { f_lo, f_hi, fft_size });
    }
    if signal.len() < frame_len {
        return Err(Error::InsufficientSamples {
            needed: frame_len,
            got: signal.len(),
        });
    }
    let frames = (signal.len() - frame_len) / hop + 1;
    let mut engine = FrameFft::new(frame_len, fft_size, Window::Hann);
    let amplitudes = (0..frames)
        .map(|f| {
            let start = f * hop;
            let spec = engine.spectrum(&signal.samples()[start..start + frame_len]);
            spec[lo_bin..=hi_bin].iter().map(|c| c.norm()).sum()
        })
        .collect();
    Ok(BandTrack {
        amplitudes,
        hop_s: hop as f64 / sr,
    })
}

/// Start times of sustained growth. A step `i → i+1` grows when
/// `x[i+1] > x[i]` and `x[i+1] >= ratio * x[i]`; a run of at least
/// `min_consecutive` growing steps is an event, and events whose frame spans
/// are fewer than `min_consecutive` frames apart are merged.
pub fn detect_growth_events(track: &BandTrack, min_consecutive: usize, growth_ratio: f64) -> Result<Vec<f64>> {
    if min_consecutive < 2 {
        return Err(Error::InvalidArgument("min_consecutive must be at least 2".into()));
    }
    if !(growth_ratio > 1.0) {
        return Err(Error::InvalidArgument(format!("growth_ratio {growth_ratio} must exceed 1")));
    }
    let x = &track.amplitudes;
    // (first frame, last frame) of each qualifying run
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i + 1 < x.len() {
        let grows = |i: usize| x[i + 1] > x[i] && x[i + 1] >= growth_ratio * x[i];
        if !grows(i) {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < x.len() && grows(i) {
            i += 1;
        }
        if i - start >= min_consecutive {
            match runs.last_mut() {
                Some(last) if start - last.1 < min_consecutive => last.1 = i,
                _ => runs.push((start, i)),
            }
        }
    }
    Ok(runs.into_iter().map(|(s, _)| track.time_of(s)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn events(x: &[f64], k: usize, r: f64) -> Vec<f64> {
        detect_growth_events(&BandTrack::from_amplitudes(x.to_vec(), 1.0), k, r).unwrap()
    }

    #[test]
    fn doubling_run_is_one_event_at_frame_zero() {
        assert_eq!(events(&[1.0, 2.0, 4.0, 8.0, 1.0, 1.0], 3, 1.5), vec![0.0]);
    }

    #[test]
    fn flat_falling_and_empty_tracks_are_quiet() {
        assert!(events(&[0.7; 20], 2, 1.1).is_empty());
        assert!(events(&[0.0; 20], 2, 1.1).is_empty());
        let down: Vec<f64> = (0..20).map(|i| 20.0 - i as f64).collect();
        assert!(events(&down, 2, 1.1).is_empty());
        assert!(events(&[], 2, 1.1).is_empty());
    }

    #[test]
    fn short_runs_do_not_fire_and_close_runs_merge() {
        assert!(events(&[1.0, 2.0, 4.0, 1.0], 3, 1.5).is_empty());
        // two 3-step runs one frame apart merge
        let x = [1.0, 2.0, 4.0, 8.0, 4.0, 8.0, 16.0, 32.0];
        assert_eq!(events(&x, 3, 1.5), vec![0.0]);
        // far apart they stay separate
        let mut y = vec![1.0, 2.0, 4.0, 8.0];
        y.extend([1.0; 6]);
        y.extend([2.0, 4.0, 8.0, 16.0]);
        assert_eq!(events(&y, 3, 1.5), vec![0.0, 9.0]);
    }

    #[test]
    fn bad_thresholds() {
        let t = BandTrack::from_amplitudes(vec![1.0], 1.0);
        assert!(detect_growth_events(&t, 1, 1.5).is_err());
        assert!(detect_growth_events(&t, 3, 1.0).is_err());
    }

    #[test]
    fn band_narrower_than_a_bin() {
        let s = AudioSignal::silence(1.0, 8000);
        assert!(matches!(
            band_energy_track(&s, 540.0, 541.0, 0.01, 0.01),
            Err(Error::BandTooNarrow { .. })
        ));
    }
}
