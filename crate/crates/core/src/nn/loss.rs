//! Label-distribution-aware margin loss.
//!
//! Each frame's true-class logit is lowered by a class margin
//! `Δ_j = C / n_j^(1/4)` before a scaled softmax cross-entropy:
//!
//! ```text
//! loss_t = -log( e^{s(z_y - Δ_y)} / (e^{s(z_y - Δ_y)} + Σ_{j≠y} e^{s z_j}) )
//! ```
//!
//! Rare classes get larger margins. With `C = 0, s = 1` this is exactly
//! mean softmax cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdamConfig {
    /// Training-set frame count per class.
    pub class_counts: Vec<u64>,
    /// Margin scale `C`.
    pub margin_scale: f64,
    /// Logit scale `s`.
    pub logit_scale: f64,
}

impl LdamConfig {
    pub const DEFAULT_MAX_MARGIN: f64 = 0.5;
    pub const DEFAULT_LOGIT_SCALE: f64 = 30.0;

    /// `C` chosen so the rarest observed class gets margin `max_margin`.
    pub fn normalized(class_counts: Vec<u64>, max_margin: f64, logit_scale: f64) -> Self {
        let min_root = class_counts
            .iter()
            .filter(|&&n| n > 0)
            .map(|&n| (n as f64).powf(0.25))
            .fold(f64::INFINITY, f64::min);
        let margin_scale = if min_root.is_finite() {
            max_margin * min_root
        } else {
            0.0
        };
        LdamConfig {
            class_counts,
            margin_scale,
            logit_scale,
        }
    }

    /// Plain cross-entropy over `n_classes`.
    pub fn cross_entropy(n_classes: usize) -> Self {
        LdamConfig {
            class_counts: vec![1; n_classes],
            margin_scale: 0.0,
            logit_scale: 1.0,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_counts.len()
    }

    /// Per-class margins; classes never seen in training get margin 0.
    pub fn margins(&self) -> Vec<f64> {
        self.class_counts
            .iter()
            .map(|&n| {
                if n == 0 {
                    0.0
                } else {
                    self.margin_scale / (n as f64).powf(0.25)
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_counts.is_empty() {
            return Err(Error::InvalidArgument("LDAM needs at least one class".into()));
        }
        if !(self.margin_scale >= 0.0) || !(self.logit_scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "LDAM needs C >= 0 and s > 0, got C={} s={}",
                self.margin_scale, self.logit_scale
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_labels(labels: &[usize], cfg: &LdamConfig) -> Result<()> {
    let n = cfg.n_classes();
    for &y in labels {
        if y >= n {
            return Err(Error::LabelOutOfRange {
                label: y,
                n_classes: n,
            });
        }
        if cfg.class_counts[y] == 0 {
            return Err(Error::InvalidArgument(format!(
                "label {y} has zero training count"
            )));
        }
    }
    Ok(())
}

/// Mean LDAM loss over frames and its gradient w.r.t. the logits.
pub(crate) fn ldam_forward_backward<T: Scalar>(
    logits: &[T],
    n_classes: usize,
    labels: &[usize],
    margins: &[f64],
    scale: f64,
) -> (T, Vec<T>) {
    let frames = labels.len();
    let mut grad = vec![T::zero(); logits.len()];
    if frames == 0 {
        return (T::zero(), grad);
    }
    let s = T::from_f64_lossy(scale);
    let inv_frames = T::one() / T::from_usize(frames).unwrap();
    let mut u = vec![T::zero(); n_classes];
    let mut total = T::zero();
    for (t, &y) in labels.iter().enumerate() {
        for (j, uj) in u.iter_mut().enumerate() {
            let mut z = logits[j * frames + t];
            if j == y {
                z -= T::from_f64_lossy(margins[y]);
            }
            *uj = s * z;
        }
        let m = u.iter().copied().fold(T::neg_infinity(), T::max);
        let mut zsum = T::zero();
        for uj in u.iter_mut() {
            *uj = (*uj - m).exp();
            zsum += *uj;
        }
        let log_z = zsum.ln();
        // -log p_y = log Σ e^{u_j - m} - (u_y - m)
        let uy = (s * (logits[y * frames + t] - T::from_f64_lossy(margins[y]))) - m;
        total += log_z - uy;
        for (j, &e) in u.iter().enumerate() {
            let p = e / zsum;
            let ind = if j == y { T::one() } else { T::zero() };
            grad[j * frames + t] = s * (p - ind) * inv_frames;
        }
    }
    (total * inv_frames, grad)
}

/// LDAM loss of `logits` (classes × frames) against `labels`, plus the
/// gradient with respect to the logits.
pub fn ldam_loss<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
    cfg: &LdamConfig,
) -> Result<(T, Tensor<T>)> {
    cfg.validate()?;
    if logits.rank() != 2 || logits.rows() != cfg.n_classes() || logits.cols() != labels.len() {
        return Err(Error::Shape(format!(
            "logits {:?} vs {} classes × {} labels",
            logits.shape(),
            cfg.n_classes(),
            labels.len()
        )));
    }
    check_labels(labels, cfg)?;
    let (loss, grad) = ldam_forward_backward(
        logits.data(),
        cfg.n_classes(),
        labels,
        &cfg.margins(),
        cfg.logit_scale,
    );
    Ok((loss, Tensor::new(logits.shape(), grad)?))
}
