//! Scalar monotone controller surrogate.
//!
//! One hidden tanh layer with nonpositive output weights:
//!
//! ```text
//!     phi(v) = sum_h  w_h * tanh((v - shift) / scale + b_h),    w_h <= 0
//! ```
//!
//! The architecture carries its guarantees structurally, no verification of
//! a trained instance needed:
//!
//! * nonincreasing in v, because every term is;
//! * range inside [-W, W] where W = sum |w_h|, since |tanh| < 1;
//! * slope bounded: |phi'(v)| <= sum |w_h| / scale, from the chain rule and
//!   tanh' <= 1.
//!
//! `max_slope` is the certified Lipschitz constant the stability layer
//! consumes. `(shift, scale)` standardize the raw voltage before the hidden
//! layer so training sees O(1) inputs; the slope bound accounts for it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonotoneNn {
    /// Hidden-to-output weights, every entry <= 0, sum of magnitudes <= cap.
    weights: Vec<f64>,
    /// Hidden biases, same length as `weights`.
    biases: Vec<f64>,
    /// Output magnitude budget W.
    cap: f64,
    /// Input standardization: the hidden layer sees (v - shift) / scale.
    shift: f64,
    scale: f64,
}

impl MonotoneNn {
    /// Rejects positive weights, mismatched lengths and nonfinite values.
    /// When rounding in the magnitude sum lands a hair above `cap`, weights
    /// are rescaled down so the budget holds exactly.
    pub fn new(
        weights: Vec<f64>,
        biases: Vec<f64>,
        cap: f64,
        shift: f64,
        scale: f64,
    ) -> Result<Self> {
        if weights.len() != biases.len() {
            return Err(Error::Dimension(format!(
                "{} weights vs {} biases",
                weights.len(),
                biases.len()
            )));
        }
        if !(cap >= 0.0) || !cap.is_finite() {
            return Err(Error::InvalidInput(format!("output cap must be finite and >= 0, got {cap}")));
        }
        if !(scale > 0.0) || !scale.is_finite() || !shift.is_finite() {
            return Err(Error::InvalidInput(format!(
                "bad standardization: shift {shift}, scale {scale}"
            )));
        }
        for (h, (&w, &b)) in weights.iter().zip(&biases).enumerate() {
            if !w.is_finite() || !b.is_finite() {
                return Err(Error::InvalidInput(format!("unit {h}: nonfinite parameter")));
            }
            if w > 0.0 {
                return Err(Error::InvalidInput(format!(
                    "unit {h}: weight {w} is positive, monotonicity needs w <= 0"
                )));
            }
        }
        let mut weights = weights;
        // The sum of magnitudes must not exceed the cap even after rounding;
        // one multiplicative shrink per check, repeated until the sum holds.
        loop {
            let total: f64 = weights.iter().map(|w| w.abs()).sum();
            if total <= cap {
                break;
            }
            let shrink = (cap / total) * (1.0 - 1e-15);
            for w in &mut weights {
                *w *= shrink;
            }
        }
        Ok(Self { weights, biases, cap, shift, scale })
    }

    /// A network that outputs 0 everywhere; the W = 0 degenerate case.
    pub fn zero(shift: f64, scale: f64) -> Self {
        Self { weights: Vec::new(), biases: Vec::new(), cap: 0.0, shift, scale }
    }

    pub fn hidden_units(&self) -> usize {
        self.weights.len()
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// phi(v). The sum is clamped to [-W, W] so the published range bound
    /// survives floating-point accumulation.
    pub fn evaluate(&self, v: f64) -> f64 {
        let x = (v - self.shift) / self.scale;
        let mut acc = 0.0;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            acc += w * (x + b).tanh();
        }
        acc.clamp(-self.cap, self.cap)
    }

    /// phi'(v), analytic.
    pub fn derivative(&self, v: f64) -> f64 {
        let x = (v - self.shift) / self.scale;
        let mut acc = 0.0;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let t = (x + b).tanh();
            acc += w * (1.0 - t * t);
        }
        acc / self.scale
    }

    /// Certified bound on |phi'| over all of R: sum |w_h| / scale.
    pub fn max_slope(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum::<f64>() / self.scale
    }

    /// Limit of phi as v -> -infinity (the deepest-sag response),
    /// sum |w_h|; the supremum of the range.
    pub fn saturation_output(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }
}

/// On-disk form of a trained controller. `bus` records which DER the curve
/// was fit for; `training` is absent for hand-built curves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub bus: usize,
    pub hidden_units: usize,
    pub cap: f64,
    pub shift: f64,
    pub scale: f64,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingInfo>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub final_mse: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_mse: Option<f64>,
}

impl ModelFile {
    pub fn from_nn(nn: &MonotoneNn, bus: usize, training: Option<TrainingInfo>) -> Self {
        Self {
            bus,
            hidden_units: nn.hidden_units(),
            cap: nn.cap(),
            shift: nn.shift(),
            scale: nn.scale(),
            weights: nn.weights().to_vec(),
            biases: nn.biases().to_vec(),
            training,
        }
    }

    pub fn into_nn(&self) -> Result<MonotoneNn> {
        if self.hidden_units != self.weights.len() {
            return Err(Error::InvalidInput(format!(
                "model declares {} hidden units but carries {} weights",
                self.hidden_units,
                self.weights.len()
            )));
        }
        MonotoneNn::new(
            self.weights.clone(),
            self.biases.clone(),
            self.cap,
            self.shift,
            self.scale,
        )
    }
}
