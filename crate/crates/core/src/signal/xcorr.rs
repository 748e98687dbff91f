//! Lag estimation between two recordings of the same scene.
//!
//! The correlation of two distinct signals is a cross-correlation, even
//! though the alignment literature often calls it an ACF.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::AudioSignal;
use crate::error::{Error, Result};

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `r[τ + L] = Σ_n a[n] b[n+τ] / (‖a‖ ‖b‖)` for `τ ∈ [-L, L]`, by direct
/// summation. Quadratic; meant as a reference.
pub fn cross_correlation_direct(a: &[f64], b: &[f64], max_lag: usize) -> Vec<f64> {
    let scale = norm(a) * norm(b);
    let l = max_lag as i64;
    (-l..=l)
        .map(|tau| {
            let mut acc = 0.0;
            for (n, &an) in a.iter().enumerate() {
                let j = n as i64 + tau;
                if j >= 0 && (j as usize) < b.len() {
                    acc += an * b[j as usize];
                }
            }
            acc / scale
        })
        .collect()
}

/// Smallest `2^i 3^j 5^k >= n`.
fn smooth_size(n: usize) -> usize {
    let mut best = n.next_power_of_two();
    let mut p5 = 1;
    while p5 < best {
        let mut p35 = p5;
        while p35 < best {
            let mut m = p35;
            while m < n {
                m *= 2;
            }
            best = best.min(m);
            p35 *= 3;
        }
        p5 *= 5;
    }
    best
}

/// Same values as [`cross_correlation_direct`] via zero-padded FFTs.
pub fn cross_correlation_fft(a: &[f64], b: &[f64], max_lag: usize) -> Vec<f64> {
    let scale = norm(a) * norm(b);
    // circular wrap-around stays clear of lags within ±max_lag
    let n = smooth_size(a.len().max(b.len()) + max_lag.min(a.len().max(b.len())) + 1);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let lift = |x: &[f64]| {
        let mut v = vec![Complex::default(); n];
        for (d, &s) in v.iter_mut().zip(x) {
            d.re = s;
        }
        v
    };
    let mut fa = lift(a);
    let mut fb = lift(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x = x.conj() * y;
    }
    inv.process(&mut fa);
    let denom = scale * n as f64;
    let l = max_lag as i64;
    (-l..=l)
        .map(|tau| {
            // lags outside the overlap are exactly zero
            if tau <= -(a.len() as i64) || tau >= b.len() as i64 {
                0.0
            } else {
                fa[tau.rem_euclid(n as i64) as usize].re / denom
            }
        })
        .collect()
}

/// Argmax over `r[τ + L]`; ties go to the smallest `|τ|`, then negative.
pub fn lag_argmax(r: &[f64]) -> i64 {
    assert!(r.len() % 2 == 1, "correlation must be indexed -L..=L");
    let l = (r.len() / 2) as i64;
    let at = |tau: i64| r[(tau + l) as usize];
    let mut best = 0i64;
    for d in 1..=l {
        for tau in [-d, d] {
            if at(tau) > at(best) {
                best = tau;
            }
        }
    }
    best
}

/// Lag in seconds at which `b` best matches `a`; positive when `b`'s content
/// occurs later than `a`'s.
pub fn cross_correlate_lag(a: &AudioSignal, b: &AudioSignal, max_lag_s: f64) -> Result<f64> {
    if a.sample_rate() != b.sample_rate() {
        return Err(Error::SampleRateMismatch(a.sample_rate(), b.sample_rate()));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("audio signal"));
    }
    if !(max_lag_s >= 0.0) {
        return Err(Error::InvalidArgument(format!("max_lag_s {max_lag_s} must be >= 0")));
    }
    if a.samples().iter().all(|&x| x == 0.0) || b.samples().iter().all(|&x| x == 0.0) {
        return Err(Error::DegenerateSignal("all-zero input to cross-correlation"));
    }
    let sr = a.sample_rate() as f64;
    // lags beyond the overlap only contribute zeros
    let reach = a.len().max(b.len());
    let max_lag = ((max_lag_s * sr).floor() as usize).min(reach);
    let r = cross_correlation_fft(a.samples(), b.samples(), max_lag);
    Ok(lag_argmax(&r) as f64 / sr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(1), 1);
        assert_eq!(smooth_size(7), 8);
        assert_eq!(smooth_size(11), 12);
        assert_eq!(smooth_size(2_400_001), 2_430_000);
        for n in 1..2000 {
            let m = smooth_size(n);
            let mut r = m;
            for p in [2, 3, 5] {
                while r % p == 0 {
                    r /= p;
                }
            }
            assert!(m >= n && r == 1);
        }
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    #[test]
    fn fft_matches_direct_values() {
        for (la, lb) in [(300, 220), (220, 300), (97, 97), (1, 40)] {
            let a = noise(la, 1);
            let b = noise(lb, 2);
            for lag in [0, 1, 17, 96, 219, 299, 350] {
                let d = cross_correlation_direct(&a, &b, lag);
                let f = cross_correlation_fft(&a, &b, lag);
                assert_eq!(d.len(), f.len());
                for (x, y) in d.iter().zip(&f) {
                    assert!((x - y).abs() < 1e-12, "{la}x{lb} lag {lag}");
                }
            }
        }
    }

    #[test]
    fn ties_prefer_small_then_negative() {
        assert_eq!(lag_argmax(&[1.0, 1.0, 1.0]), 0);
        assert_eq!(lag_argmax(&[2.0, 1.0, 2.0]), -1);
        assert_eq!(lag_argmax(&[0.0, 1.0, 0.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn degenerate_and_mismatched_inputs() {
        let z = AudioSignal::silence(0.1, 8000);
        let x = AudioSignal::new(noise(800, 3), 8000).unwrap();
        let y = AudioSignal::new(noise(800, 3), 16000).unwrap();
        assert!(matches!(cross_correlate_lag(&z, &x, 1.0), Err(Error::DegenerateSignal(_))));
        assert!(matches!(cross_correlate_lag(&x, &y, 1.0), Err(Error::SampleRateMismatch(..))));
        assert!(cross_correlate_lag(&x, &x, -1.0).is_err());
    }
}
