//! Stochastic scaling of features and gradients, and the dropout baseline.
//!
//! During training each regularization site multiplies row `i` of its input
//! by a factor `λᶠᵢ`, and on the way back multiplies row `i` of the incoming
//! gradient by an independently drawn `λᵇᵢ`. The backward rule replaces the
//! ordinary derivative of the forward scaling.
//!
//! Factors come from a shifted symmetric Beta draw `λ̄ ~ Beta(α, α) + 0.5`
//! folded onto `[0.5, 2]` as `λ = λ̄` for `λ̄ ≤ 1` and `λ = 1 / (2 − λ̄)`
//! otherwise, which makes `ln λ` symmetric about zero.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autodiff::{Phase, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// Concentration of the Beta distribution; `+∞` turns every factor into 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alpha(f64);

impl Alpha {
    pub const INFINITY: Alpha = Alpha(f64::INFINITY);

    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 {
            Ok(Alpha(alpha))
        } else {
            Err(Error::Config(format!(
                "alpha must be positive or infinite, got {alpha}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("Infinity")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

// JSON has no infinity literal, so the infinite value travels as a string.
impl Serialize for Alpha {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("Infinity")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Alpha {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        let v = match Raw::deserialize(d)? {
            Raw::Num(v) => v,
            Raw::Str(s) => match s.to_ascii_lowercase().as_str() {
                "infinity" | "inf" | "+inf" => f64::INFINITY,
                other => other.parse().map_err(serde::de::Error::custom)?,
            },
        };
        Alpha::new(v).map_err(serde::de::Error::custom)
    }
}

/// Which directions are scaled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsfgMode {
    #[default]
    Full,
    ForwardOnly,
    BackwardOnly,
    Off,
}

impl SsfgMode {
    pub fn scales_forward(self) -> bool {
        matches!(self, SsfgMode::Full | SsfgMode::ForwardOnly)
    }

    pub fn scales_backward(self) -> bool {
        matches!(self, SsfgMode::Full | SsfgMode::BackwardOnly)
    }
}

fn default_test_scale() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsfgConfig {
    pub alpha: Alpha,
    pub mode: SsfgMode,
    /// Constant applied at every site during evaluation.
    #[serde(default = "default_test_scale")]
    pub test_scale: f64,
}

impl Default for SsfgConfig {
    fn default() -> Self {
        SsfgConfig::off()
    }
}

impl SsfgConfig {
    pub fn new(alpha: f64, mode: SsfgMode) -> Result<Self> {
        Ok(SsfgConfig {
            alpha: Alpha::new(alpha)?,
            mode,
            test_scale: 1.0,
        })
    }

    pub fn off() -> Self {
        SsfgConfig {
            alpha: Alpha::INFINITY,
            mode: SsfgMode::Off,
            test_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Alpha::new(self.alpha.0)?;
        if !(self.test_scale > 0.0 && self.test_scale.is_finite()) {
            return Err(Error::Config(format!(
                "test_scale must be positive and finite, got {}",
                self.test_scale
            )));
        }
        Ok(())
    }
}

/// One scaling factor per row of the tensor being scaled.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorSample {
    pub factors: Vec<f64>,
}

/// Folds a draw `λ̄ ∈ [0.5, 1.5]` onto `[0.5, 2]`.
#[inline]
pub fn fold_factor(shifted: f64) -> f64 {
    if shifted <= 1.0 {
        shifted
    } else {
        1.0 / (2.0 - shifted)
    }
}

/// Gamma(shape, 1) by Marsaglia–Tsang; requires `shape >= 1`.
fn gamma_marsaglia_tsang(shape: f64, rng: &mut RngStream) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = rng.normal();
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = rng.uniform();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Natural log of a Gamma(shape, 1) variate. Shapes below 1 use the boost
/// `G(a) = G(a + 1) · U^(1/a)` in log space so tiny variates do not
/// underflow.
fn ln_gamma_variate(shape: f64, rng: &mut RngStream) -> f64 {
    if shape < 1.0 {
        let boosted = gamma_marsaglia_tsang(shape + 1.0, rng).ln();
        boosted + rng.uniform_open0().ln() / shape
    } else {
        gamma_marsaglia_tsang(shape, rng).ln()
    }
}

/// One draw from the symmetric Beta(α, α) as `G₁ / (G₁ + G₂)`.
pub fn beta_sample(alpha: f64, rng: &mut RngStream) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!(
            "beta concentration must be positive and finite, got {alpha}"
        )));
    }
    Ok(beta_unchecked(alpha, rng))
}

fn beta_unchecked(alpha: f64, rng: &mut RngStream) -> f64 {
    if alpha >= 1.0 {
        let g1 = gamma_marsaglia_tsang(alpha, rng);
        let g2 = gamma_marsaglia_tsang(alpha, rng);
        g1 / (g1 + g2)
    } else {
        let l1 = ln_gamma_variate(alpha, rng);
        let l2 = ln_gamma_variate(alpha, rng);
        1.0 / (1.0 + (l2 - l1).exp())
    }
}

fn draw_factors(alpha: Alpha, count: usize, rng: &mut RngStream) -> Vec<f64> {
    if alpha.is_infinite() {
        return vec![1.0; count];
    }
    (0..count)
        .map(|_| fold_factor(beta_unchecked(alpha.0, rng) + 0.5))
        .collect()
}

/// Draws `count` independent factors. An infinite `alpha` yields exact ones
/// without touching the generator.
pub fn sample_lambda(alpha: f64, count: usize, rng: &mut RngStream) -> Result<FactorSample> {
    let alpha = Alpha::new(alpha)?;
    Ok(FactorSample {
        factors: draw_factors(alpha, count, rng),
    })
}

/// Product of `layers` independent factors: the total scaling a feature
/// accumulates across a stack of regularized layers.
pub fn cumulated_factor(layers: usize, alpha: f64, rng: &mut RngStream) -> Result<f64> {
    let alpha = Alpha::new(alpha)?;
    Ok((0..layers)
        .map(|_| draw_factors(alpha, 1, rng)[0])
        .product())
}

/// Factors drawn at one site, for instrumentation.
#[derive(Clone, Debug, Default)]
pub struct SiteLog {
    pub forward: Vec<Vec<f64>>,
    pub backward: Vec<Vec<f64>>,
}

/// State of one regularization site: its configuration and the two random
/// streams it owns.
pub struct SsfgSite {
    cfg: SsfgConfig,
    forward: RngStream,
    backward: Rc<RefCell<RngStream>>,
    log: Option<Rc<RefCell<SiteLog>>>,
}

impl SsfgSite {
    /// Derives this site's streams from `rng` under `name`.
    pub fn new(cfg: SsfgConfig, rng: &RngStream, name: &str) -> Self {
        SsfgSite {
            cfg,
            forward: rng.derive(name, 0),
            backward: Rc::new(RefCell::new(rng.derive(name, 1))),
            log: None,
        }
    }

    pub fn config(&self) -> &SsfgConfig {
        &self.cfg
    }

    pub fn set_test_scale(&mut self, scale: f64) {
        self.cfg.test_scale = scale;
    }

    /// Starts recording every factor vector this site draws.
    pub fn record(&mut self) -> Rc<RefCell<SiteLog>> {
        let log = Rc::new(RefCell::new(SiteLog::default()));
        self.log = Some(Rc::clone(&log));
        log
    }
}

/// Applies stochastic scaling to `x` (rows are nodes or edges).
///
/// Training: the output is `λᶠ ⊙ x` and the gradient handed to `x` is
/// `λᵇ ⊙ g` with `λᵇ` drawn freshly when the backward sweep reaches the node.
/// A direction disabled by the mode uses all-ones factors. Evaluation scales
/// by the configured test scale and draws nothing. `SsfgMode::Off` is the
/// identity in both phases.
pub fn ssfg_apply<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    site: &mut SsfgSite,
    phase: Phase,
) -> Result<Var> {
    let cfg = site.cfg;
    if cfg.mode == SsfgMode::Off {
        return Ok(x);
    }
    if phase == Phase::Eval {
        if cfg.test_scale == 1.0 {
            return Ok(x);
        }
        return Ok(tape.scale(x, T::lit(cfg.test_scale)));
    }
    let rows = tape.value(x).rows();
    let forward = if cfg.mode.scales_forward() {
        draw_factors(cfg.alpha, rows, &mut site.forward)
    } else {
        vec![1.0; rows]
    };
    if let Some(log) = &site.log {
        log.borrow_mut().forward.push(forward.clone());
    }
    let forward: Vec<T> = forward.into_iter().map(T::lit).collect();
    let value = tape.value(x).scale_rows(&forward);

    let scale_backward = cfg.mode.scales_backward();
    let alpha = cfg.alpha;
    let stream = Rc::clone(&site.backward);
    let log = site.log.clone();
    let hook = Box::new(move |g: &Tensor<T>| {
        if !scale_backward {
            return g.clone();
        }
        let factors = draw_factors(alpha, g.rows(), &mut stream.borrow_mut());
        if let Some(log) = &log {
            log.borrow_mut().backward.push(factors.clone());
        }
        let factors: Vec<T> = factors.into_iter().map(T::lit).collect();
        g.scale_rows(&factors)
    });
    tape.custom(x, value, hook)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutConfig {
    pub p: f64,
}

impl DropoutConfig {
    pub fn new(p: f64) -> Result<Self> {
        let cfg = DropoutConfig { p };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if (0.0..1.0).contains(&self.p) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "dropout probability must lie in [0, 1), got {}",
                self.p
            )))
        }
    }
}

/// Inverted dropout: zero each element with probability `p` and scale the
/// survivors by `1 / (1 − p)`; identity in evaluation and when `p = 0`.
pub fn dropout_apply<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    cfg: DropoutConfig,
    phase: Phase,
    rng: &mut RngStream,
) -> Result<Var> {
    cfg.validate()?;
    if phase == Phase::Eval || cfg.p == 0.0 {
        return Ok(x);
    }
    let keep = T::lit(1.0 / (1.0 - cfg.p));
    let shape = tape.value(x).shape().to_vec();
    let data = (0..tape.value(x).numel())
        .map(|_| if rng.bernoulli(cfg.p) { T::zero() } else { keep })
        .collect();
    let mask = Tensor::new(shape, data)?;
    let value = tape.value(x).zip_map(&mask, |a, m| a * m);
    let hook = Box::new(move |g: &Tensor<T>| g.zip_map(&mask, |a, m| a * m));
    tape.custom(x, value, hook)
}
