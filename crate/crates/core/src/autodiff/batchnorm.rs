use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Whether a forward pass is for training or evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Train,
    Eval,
}

/// Running statistics of one batch-norm site. The learnable scale and shift
/// live in the model's parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(dim: usize) -> Self {
        BatchNormState {
            running_mean: vec![T::zero(); dim],
            running_var: vec![T::one(); dim],
            eps: T::lit(BN_EPS),
            momentum: T::lit(BN_MOMENTUM),
        }
    }

    pub fn dim(&self) -> usize {
        self.running_mean.len()
    }
}

impl<T: Scalar> Tape<T> {
    /// Column-wise batch normalization of an `n × d` tensor with affine
    /// `gamma`/`beta` of shape `[d]`.
    ///
    /// Training normalizes by the batch's biased variance and folds the
    /// unbiased variance into the running estimate; evaluation uses the
    /// running estimates only.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState<T>,
        phase: Phase,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        if xv.rank() != 2 || d != state.dim() {
            return Err(Error::dim("batch_norm", xv.shape(), &[state.dim()]));
        }
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::dim("batch_norm", &[d], self.shape(gamma)));
        }
        let xv = self.value(x);
        let mut mean = vec![T::zero(); d];
        let mut var = vec![T::zero(); d];
        let train = phase == Phase::Train;
        if train {
            if n < 2 {
                return Err(Error::Degenerate(format!(
                    "batch norm needs at least 2 rows in training, got {n}"
                )));
            }
            let nf = T::lit(n as f64);
            for i in 0..n {
                for (m, &v) in mean.iter_mut().zip(xv.row(i)) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= nf;
            }
            for i in 0..n {
                for ((s, &v), &m) in var.iter_mut().zip(xv.row(i)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            for s in &mut var {
                *s /= nf;
            }
        } else {
            mean.copy_from_slice(&state.running_mean);
            var.copy_from_slice(&state.running_var);
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + state.eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(&[n, d]);
        for i in 0..n {
            for j in 0..d {
                xhat.set(i, j, (xv.get(i, j) - mean[j]) * inv_std[j]);
            }
        }
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = xhat.clone();
        for i in 0..n {
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = *o * gv[j] + bv[j];
            }
        }
        if train {
            let m = state.momentum;
            let unbias = T::lit(n as f64) / T::lit((n - 1) as f64);
            for j in 0..d {
                state.running_mean[j] = (T::one() - m) * state.running_mean[j] + m * mean[j];
                state.running_var[j] =
                    (T::one() - m) * state.running_var[j] + m * var[j] * unbias;
            }
        }
        Ok(self.push_batch_norm(x, gamma, beta, out, xhat, inv_std, train))
    }
}
