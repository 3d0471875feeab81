//! Per-destination reductions over edge-indexed rows.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

/// Validated assignment of `E` rows to `n` segments (typically the
/// destination node of every edge).
#[derive(Clone, Debug, PartialEq)]
pub struct Segments {
    index: Vec<usize>,
    n: usize,
    counts: Vec<usize>,
}

impl Segments {
    pub fn new(index: Vec<usize>, n: usize) -> Result<Self> {
        let mut counts = vec![0usize; n];
        for (position, &i) in index.iter().enumerate() {
            if i >= n {
                return Err(Error::Index {
                    op: "segment",
                    position,
                    index: i,
                    bound: n,
                });
            }
            counts[i] += 1;
        }
        Ok(Segments { index, n, counts })
    }

    #[inline]
    pub fn index(&self) -> &[usize] {
        &self.index
    }

    #[inline]
    pub fn num_segments(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.index.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

pub(crate) fn reduce_forward<T: Scalar>(
    kind: ReduceKind,
    values: &Tensor<T>,
    seg: &Segments,
) -> Tensor<T> {
    let d = values.cols();
    let mut out = Tensor::zeros(&[seg.n, d]);
    for (e, &dst) in seg.index.iter().enumerate() {
        let src = values.row(e);
        for (o, &v) in out.row_mut(dst).iter_mut().zip(src) {
            *o += v;
        }
    }
    if kind == ReduceKind::Mean {
        for (i, &c) in seg.counts.iter().enumerate() {
            if c > 1 {
                let inv = T::one() / T::lit(c as f64);
                for v in out.row_mut(i) {
                    *v *= inv;
                }
            }
        }
    }
    out
}

pub(crate) fn reduce_backward<T: Scalar>(
    kind: ReduceKind,
    grad: &Tensor<T>,
    seg: &Segments,
) -> Tensor<T> {
    let d = grad.cols();
    let mut out = Tensor::zeros(&[seg.index.len(), d]);
    for (e, &dst) in seg.index.iter().enumerate() {
        let g = grad.row(dst);
        let row = out.row_mut(e);
        match kind {
            ReduceKind::Sum => row.copy_from_slice(g),
            ReduceKind::Mean => {
                let inv = T::one() / T::lit(seg.counts[dst] as f64);
                for (o, &v) in row.iter_mut().zip(g) {
                    *o = v * inv;
                }
            }
        }
    }
    out
}

/// Softmax over the rows of each segment, independently per column.
pub(crate) fn softmax_forward<T: Scalar>(scores: &Tensor<T>, seg: &Segments) -> Tensor<T> {
    let h = scores.cols();
    let s = scores.data();
    let mut max = vec![T::neg_infinity(); seg.n * h];
    for (e, &dst) in seg.index.iter().enumerate() {
        for (m, &v) in max[dst * h..(dst + 1) * h].iter_mut().zip(&s[e * h..(e + 1) * h]) {
            *m = m.max(v);
        }
    }
    let mut out = vec![T::zero(); s.len()];
    let mut denom = vec![T::zero(); seg.n * h];
    for (e, &dst) in seg.index.iter().enumerate() {
        let (o, m, z) = (&mut out[e * h..(e + 1) * h], &max[dst * h..(dst + 1) * h], &mut denom[dst * h..(dst + 1) * h]);
        for c in 0..h {
            let v = (s[e * h + c] - m[c]).exp();
            o[c] = v;
            z[c] += v;
        }
    }
    for (e, &dst) in seg.index.iter().enumerate() {
        for (o, &z) in out[e * h..(e + 1) * h].iter_mut().zip(&denom[dst * h..(dst + 1) * h]) {
            *o = *o / z;
        }
    }
    Tensor::matrix(seg.index.len(), h, out).expect("shape matches data")
}

pub(crate) fn softmax_backward<T: Scalar>(
    weights: &Tensor<T>,
    grad: &Tensor<T>,
    seg: &Segments,
) -> Tensor<T> {
    let h = weights.cols();
    let (w, g) = (weights.data(), grad.data());
    let mut dot = vec![T::zero(); seg.n * h];
    for (e, &dst) in seg.index.iter().enumerate() {
        for c in 0..h {
            dot[dst * h + c] += g[e * h + c] * w[e * h + c];
        }
    }
    let out = seg
        .index
        .iter()
        .enumerate()
        .flat_map(|(e, &dst)| (0..h).map(move |c| (e * h + c, dst * h + c)))
        .map(|(i, j)| w[i] * (g[i] - dot[j]))
        .collect();
    Tensor::matrix(seg.index.len(), h, out).expect("shape matches data")
}
