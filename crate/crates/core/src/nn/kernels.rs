//! Raw forward/backward kernels shared by the tape and the free-function API.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::scalar::{gemm_acc, View};
use crate::nn::{Scalar, Tensor};

/// Zero-padding scheme of a dilated convolution along time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// `(k-1)/2 * dilation` zeros on both sides; output sees past and future.
    AcausalSame,
    /// `(k-1) * dilation` zeros on the left only.
    Causal,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub t: usize,
    pub dilation: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        bias: Option<&[usize]>,
        dilation: usize,
        padding: Padding,
    ) -> Result<Self> {
        if input.len() != 2 || weight.len() != 3 {
            return Err(Error::Shape(format!(
                "conv1d expects input C_in×T and weight C_out×C_in×k, got {input:?} and {weight:?}"
            )));
        }
        let (c_in, t) = (input[0], input[1]);
        let (c_out, w_in, k) = (weight[0], weight[1], weight[2]);
        if w_in != c_in {
            return Err(Error::Shape(format!(
                "conv1d weight expects {w_in} input channels, input has {c_in}"
            )));
        }
        if let Some(b) = bias {
            if b != [c_out] {
                return Err(Error::Shape(format!(
                    "conv1d bias shape {b:?}, expected [{c_out}]"
                )));
            }
        }
        if dilation == 0 || k == 0 {
            return Err(Error::InvalidArgument(
                "conv1d needs dilation >= 1 and kernel >= 1".into(),
            ));
        }
        let pad_left = match padding {
            Padding::AcausalSame => {
                if k % 2 == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "acausal same padding needs an odd kernel, got {k}"
                    )));
                }
                (k - 1) / 2 * dilation
            }
            Padding::Causal => (k - 1) * dilation,
        };
        Ok(ConvGeom {
            c_in,
            c_out,
            k,
            t,
            dilation,
            pad_left,
        })
    }

    /// For tap `j`: input offset `s` and the output column range whose
    /// source column `t + s` lies inside `[0, T)`.
    fn tap(&self, j: usize) -> (isize, usize, usize) {
        let s = (j * self.dilation) as isize - self.pad_left as isize;
        let t = self.t as isize;
        let lo = (-s).max(0).min(t) as usize;
        let hi = (t - s).clamp(0, t) as usize;
        (s, lo, hi.max(lo))
    }
}

pub(crate) fn conv1d_forward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    b: Option<&[T]>,
) -> Vec<T> {
    let mut y = vec![T::zero(); g.c_out * g.t];
    if let Some(b) = b {
        for (o, &bo) in b.iter().enumerate() {
            y[o * g.t..(o + 1) * g.t].fill(bo);
        }
    }
    for j in 0..g.k {
        let (s, lo, hi) = g.tap(j);
        let n = hi - lo;
        if n == 0 {
            continue;
        }
        let wv = View {
            offset: j,
            rows: g.c_out,
            cols: g.c_in,
            rs: g.c_in * g.k,
            cs: g.k,
        };
        let xv = View {
            offset: (lo as isize + s) as usize,
            rows: g.c_in,
            cols: n,
            rs: g.t,
            cs: 1,
        };
        let yv = View {
            offset: lo,
            rows: g.c_out,
            cols: n,
            rs: g.t,
            cs: 1,
        };
        gemm_acc(w, wv, x, xv, &mut y, yv);
    }
    y
}

/// Accumulates input, weight and bias gradients of a convolution.
pub(crate) fn conv1d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    if let Some(db) = db {
        for o in 0..g.c_out {
            let s: T = dy[o * g.t..(o + 1) * g.t].iter().copied().sum();
            db[o] += s;
        }
    }
    let mut dx = dx;
    let mut dw = dw;
    for j in 0..g.k {
        let (s, lo, hi) = g.tap(j);
        let n = hi - lo;
        if n == 0 {
            continue;
        }
        let wv = View {
            offset: j,
            rows: g.c_out,
            cols: g.c_in,
            rs: g.c_in * g.k,
            cs: g.k,
        };
        let xv = View {
            offset: (lo as isize + s) as usize,
            rows: g.c_in,
            cols: n,
            rs: g.t,
            cs: 1,
        };
        let dyv = View {
            offset: lo,
            rows: g.c_out,
            cols: n,
            rs: g.t,
            cs: 1,
        };
        if let Some(dx) = dx.as_deref_mut() {
            gemm_acc(w, wv.t(), dy, dyv, dx, xv);
        }
        if let Some(dw) = dw.as_deref_mut() {
            gemm_acc(dy, dyv, x, xv.t(), dw, wv);
        }
    }
}

/// Bin edges of adaptive average pooling from `n_in` to `n_out` cells.
pub(crate) fn pool_bins(n_in: usize, n_out: usize) -> Vec<(usize, usize)> {
    (0..n_out)
        .map(|i| {
            let start = i * n_in / n_out;
            let end = ((i + 1) * n_in).div_ceil(n_out);
            (start, end.max(start + 1).min(n_in))
        })
        .collect()
}

/// Adaptive average pooling over rows of a rows × cols matrix.
pub(crate) fn pool_rows_forward<T: Scalar>(x: &[T], rows: usize, cols: usize, out: usize) -> Vec<T> {
    let mut y = vec![T::zero(); out * cols];
    for (i, &(a, b)) in pool_bins(rows, out).iter().enumerate() {
        let inv = T::one() / T::from_usize(b - a).unwrap();
        let dst = &mut y[i * cols..(i + 1) * cols];
        for r in a..b {
            for (d, &v) in dst.iter_mut().zip(&x[r * cols..(r + 1) * cols]) {
                *d += v;
            }
        }
        dst.iter_mut().for_each(|d| *d *= inv);
    }
    y
}

pub(crate) fn pool_rows_backward<T: Scalar>(dy: &[T], rows: usize, cols: usize, out: usize, dx: &mut [T]) {
    for (i, &(a, b)) in pool_bins(rows, out).iter().enumerate() {
        let inv = T::one() / T::from_usize(b - a).unwrap();
        let src = &dy[i * cols..(i + 1) * cols];
        for r in a..b {
            for (d, &g) in dx[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                *d += g * inv;
            }
        }
    }
}

/// Softmax over rows, independently for each column.
pub(crate) fn softmax_cols<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut y = vec![T::zero(); rows * cols];
    for c in 0..cols {
        let mut m = T::neg_infinity();
        for r in 0..rows {
            m = m.max(x[r * cols + c]);
        }
        let mut z = T::zero();
        for r in 0..rows {
            let e = (x[r * cols + c] - m).exp();
            y[r * cols + c] = e;
            z += e;
        }
        for r in 0..rows {
            y[r * cols + c] = y[r * cols + c] / z;
        }
    }
    y
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Plain dilated convolution, checked; used by the free-function API.
pub fn conv1d_dilated<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    dilation: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(
        input.shape(),
        weight.shape(),
        bias.map(|b| b.shape()),
        dilation,
        padding,
    )?;
    let y = conv1d_forward(&g, input.data(), weight.data(), bias.map(|b| b.data()));
    Tensor::new(&[g.c_out, g.t], y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_bins_cover_input() {
        assert_eq!(pool_bins(4, 2), vec![(0, 2), (2, 4)]);
        assert_eq!(pool_bins(5, 3), vec![(0, 2), (1, 4), (3, 5)]);
        // upsampling repeats cells
        assert_eq!(pool_bins(2, 4), vec![(0, 1), (0, 1), (1, 2), (1, 2)]);
    }

    #[test]
    fn causal_tap_ranges() {
        let g = ConvGeom::new(&[1, 5], &[1, 1, 3], None, 2, Padding::Causal).unwrap();
        assert_eq!(g.pad_left, 4);
        assert_eq!(g.tap(0), (-4, 4, 5));
        assert_eq!(g.tap(2), (0, 0, 5));
    }

    #[test]
    fn even_kernel_rejected_for_same_padding() {
        assert!(ConvGeom::new(&[1, 5], &[1, 1, 2], None, 1, Padding::AcausalSame).is_err());
        assert!(ConvGeom::new(&[1, 5], &[1, 1, 2], None, 1, Padding::Causal).is_ok());
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }
}
