//! Fitting a monotone controller curve to (voltage, setpoint) pairs.
//!
//! The constraint set (w_h <= 0, sum |w_h| <= W) is kept exactly throughout
//! training, not patched afterwards:
//!
//! * weights are optimized as w_h = -exp(theta_h), so the sign constraint
//!   is structural;
//! * after every step, if sum exp(theta_h) > W, all theta_h are shifted by
//!   ln(W / sum), a uniform multiplicative shrink of the magnitudes back
//!   onto the budget.
//!
//! Full-batch Adam; datasets here are a few thousand pairs at most, so
//! stochastic batching would only add variance. Everything is seeded, two
//! runs with the same inputs produce bit-identical networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::MonotoneNn;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Output magnitude budget W (the DER's reactive limit).
    pub cap: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { hidden: 200, epochs: 1000, learning_rate: 0.01, cap: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean squared error on the training split after the last epoch.
    pub final_mse: f64,
    /// Held-out error; absent when the dataset is too small to split.
    pub validation_mse: Option<f64>,
    pub epochs_run: usize,
}

/// Fit phi to `samples` of (voltage, target setpoint). A tenth of the data
/// (floor, shuffled by the seed) is held out for validation when there is
/// enough of it.
pub fn train(samples: &[(f64, f64)], config: &TrainConfig) -> Result<(MonotoneNn, TrainReport)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no training pairs".into()));
    }
    if config.hidden == 0 {
        return Err(Error::InvalidInput("need at least one hidden unit".into()));
    }
    if !(config.cap >= 0.0) || !config.cap.is_finite() {
        return Err(Error::InvalidInput(format!("bad output cap {}", config.cap)));
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::InvalidInput(format!("bad learning rate {}", config.learning_rate)));
    }
    for (k, &(v, y)) in samples.iter().enumerate() {
        if !v.is_finite() || !y.is_finite() {
            return Err(Error::InvalidInput(format!("sample {k} is nonfinite: ({v}, {y})")));
        }
    }

    let n = samples.len();
    let mean = samples.iter().map(|s| s.0).sum::<f64>() / n as f64;
    let var = samples.iter().map(|s| (s.0 - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    let shift = mean;
    let scale = if std < 1e-12 { 1.0 } else { std };

    // A zero budget admits exactly one function.
    if config.cap == 0.0 {
        let nn = MonotoneNn::zero(shift, scale);
        let mse = samples.iter().map(|&(_, y)| y * y).sum::<f64>() / n as f64;
        return Ok((nn, TrainReport { final_mse: mse, validation_mse: None, epochs_run: 0 }));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Shuffled split, validation takes the floor-tenth.
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_val = n / 10;
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_set: Vec<(f64, f64)> = train_idx.iter().map(|&i| samples[i]).collect();
    let val_set: Vec<(f64, f64)> = val_idx.iter().map(|&i| samples[i]).collect();

    let h = config.hidden;
    let w = config.cap;
    // Start with half the budget spread evenly; biases cover the active
    // region of tanh.
    let mut theta = vec![(w / (2.0 * h as f64)).ln(); h];
    let mut bias: Vec<f64> = (0..h).map(|_| rng.random_range(-3.0..3.0)).collect();

    let x_train: Vec<f64> = train_set.iter().map(|s| (s.0 - shift) / scale).collect();
    let y_train: Vec<f64> = train_set.iter().map(|s| s.1).collect();
    let k = x_train.len() as f64;

    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let mut m_theta = vec![0.0; h];
    let mut v_theta = vec![0.0; h];
    let mut m_bias = vec![0.0; h];
    let mut v_bias = vec![0.0; h];

    let mut tanh_buf = vec![0.0; x_train.len() * h];
    let mut final_mse = 0.0;

    for epoch in 1..=config.epochs {
        let weights: Vec<f64> = theta.iter().map(|t| -t.exp()).collect();

        // Forward pass, keeping the activations for the backward pass.
        let mut errors = vec![0.0; x_train.len()];
        let mut sse = 0.0;
        for (s, &x) in x_train.iter().enumerate() {
            let mut out = 0.0;
            for j in 0..h {
                let t = (x + bias[j]).tanh();
                tanh_buf[s * h + j] = t;
                out += weights[j] * t;
            }
            let e = out - y_train[s];
            errors[s] = e;
            sse += e * e;
        }
        final_mse = sse / k;

        let mut grad_theta = vec![0.0; h];
        let mut grad_bias = vec![0.0; h];
        for (s, &e) in errors.iter().enumerate() {
            let coeff = 2.0 * e / k;
            for j in 0..h {
                let t = tanh_buf[s * h + j];
                // d/dw of the loss, then the chain rule through w = -e^theta
                // contributes a factor of w itself.
                grad_theta[j] += coeff * t * weights[j];
                grad_bias[j] += coeff * weights[j] * (1.0 - t * t);
            }
        }

        let bc1 = 1.0 - BETA1.powi(epoch as i32);
        let bc2 = 1.0 - BETA2.powi(epoch as i32);
        for j in 0..h {
            m_theta[j] = BETA1 * m_theta[j] + (1.0 - BETA1) * grad_theta[j];
            v_theta[j] = BETA2 * v_theta[j] + (1.0 - BETA2) * grad_theta[j] * grad_theta[j];
            theta[j] -= config.learning_rate * (m_theta[j] / bc1) / ((v_theta[j] / bc2).sqrt() + EPS);

            m_bias[j] = BETA1 * m_bias[j] + (1.0 - BETA1) * grad_bias[j];
            v_bias[j] = BETA2 * v_bias[j] + (1.0 - BETA2) * grad_bias[j] * grad_bias[j];
            bias[j] -= config.learning_rate * (m_bias[j] / bc1) / ((v_bias[j] / bc2).sqrt() + EPS);
        }

        // Project back onto the magnitude budget: a uniform shift in theta
        // is a uniform rescale of the weights.
        let total: f64 = theta.iter().map(|t| t.exp()).sum();
        if total > w {
            let delta = (w / total).ln();
            for t in &mut theta {
                *t += delta;
            }
        }
    }

    let weights: Vec<f64> = theta.iter().map(|t| -t.exp()).collect();
    let nn = MonotoneNn::new(weights, bias, w, shift, scale)?;

    let validation_mse = if val_set.is_empty() {
        None
    } else {
        let sse: f64 = val_set.iter().map(|&(v, y)| (nn.evaluate(v) - y).powi(2)).sum();
        Some(sse / val_set.len() as f64)
    };

    Ok((nn, TrainReport { final_mse, validation_mse, epochs_run: config.epochs }))
}

/// One curve-fitting job per DER, fanned out across threads. Results come
/// back in job order and match sequential [`train`] calls bit for bit.
pub fn train_batch(
    jobs: &[(&[(f64, f64)], TrainConfig)],
) -> Result<Vec<(MonotoneNn, TrainReport)>> {
    crate::par::map_collect(jobs, |(samples, config)| train(samples, config))
        .into_iter()
        .collect()
}
