//! Adam and the reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam with bias correction. Moments are stored per parameter, in store
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect::<Vec<_>>();
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn first_moment(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Tensor<T>] {
        &self.v
    }

    /// One update from the gradients currently held in `store`.
    pub fn update(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (T::lit(self.beta1), T::lit(self.beta2), T::lit(self.eps));
        let (one, lr_t, c1, c2) = (T::one(), T::lit(lr), T::lit(c1), T::lit(c2));
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if p.grad.shape() != m.shape() {
                return Err(Error::dim("adam", p.grad.shape(), m.shape()));
            }
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for (((w, &g), mi), vi) in values.iter_mut().zip(grads).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w = *w - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Divides the learning rate by `factor` after `patience` consecutive epochs
/// without a validation-loss decrease of at least `threshold`, and asks to
/// stop once the rate falls below `lr_min`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub lr_min: f64,
    pub threshold: f64,
    pub best: f64,
    pub bad_epochs: usize,
    /// Number of reductions so far; `lr = lr_init / factor^reductions`.
    pub reductions: u32,
}

pub const IMPROVEMENT_THRESHOLD: f64 = 1e-6;

impl Plateau {
    pub fn new(lr: f64, factor: f64, patience: usize, lr_min: f64) -> Self {
        Plateau {
            lr,
            factor,
            patience,
            lr_min,
            threshold: IMPROVEMENT_THRESHOLD,
            best: f64::INFINITY,
            bad_epochs: 0,
            reductions: 0,
        }
    }

    /// Feeds one epoch's validation loss; returns the rate for the next
    /// epoch and whether to stop.
    pub fn update(&mut self, val_loss: f64) -> Result<(f64, bool)> {
        if !val_loss.is_finite() {
            return Err(Error::Contract(format!("validation loss is not finite: {val_loss}")));
        }
        if val_loss < self.best - self.threshold {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr /= self.factor;
                self.reductions += 1;
                self.bad_epochs = 0;
            }
        }
        Ok((self.lr, self.lr < self.lr_min))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(values.to_vec()));
        s
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let mut s = store(&[1.0, -2.0]);
        let mut adam = Adam::new(&s, 0.9, 0.999, 1e-8);
        adam.update(&mut s, 0.1).unwrap();
        assert_eq!(s.iter().next().unwrap().value.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut s = store(&[1.0, 1.0, 1.0]);
        s.iter_mut().next().unwrap().grad = Tensor::vector(vec![3.0, -0.5, 100.0]);
        let mut adam = Adam::new(&s, 0.9, 0.999, 1e-8);
        adam.update(&mut s, 0.01).unwrap();
        let w = s.iter().next().unwrap().value.data().to_vec();
        for (wi, expect) in w.iter().zip([0.99, 1.01, 0.99]) {
            assert!((wi - expect).abs() < 1e-8, "{wi}");
        }
    }

    #[test]
    fn moments_decay_without_gradient() {
        let mut s = store(&[0.0]);
        s.iter_mut().next().unwrap().grad = Tensor::vector(vec![1.0]);
        let mut adam = Adam::new(&s, 0.9, 0.999, 1e-8);
        adam.update(&mut s, 0.01).unwrap();
        s.zero_grad();
        adam.update(&mut s, 0.01).unwrap();
        assert!((adam.first_moment()[0].data()[0] - 0.09).abs() < 1e-15);
        assert!((adam.second_moment()[0].data()[0] - 0.000999).abs() < 1e-15);
    }

    #[test]
    fn plateau_halves_at_epoch_eleven() {
        let mut p = Plateau::new(1e-3, 2.0, 10, 1e-6);
        for epoch in 1..=10 {
            assert_eq!(p.update(0.5).unwrap(), (1e-3, false), "epoch {epoch}");
        }
        assert_eq!(p.update(0.5).unwrap(), (5e-4, false));
    }

    #[test]
    fn plateau_stops_below_minimum() {
        let mut p = Plateau::new(1.5e-6, 2.0, 1, 1e-6);
        p.update(1.0).unwrap();
        let (lr, stop) = p.update(1.0).unwrap();
        assert_eq!(lr, 7.5e-7);
        assert!(stop);
    }

    #[test]
    fn tiny_improvements_do_not_count() {
        let mut p = Plateau::new(1.0, 2.0, 1, 1e-6);
        p.update(1.0).unwrap();
        assert_eq!(p.update(1.0 - 5e-7).unwrap().0, 0.5);
        assert!(p.update(f64::NAN).is_err());
    }
}
