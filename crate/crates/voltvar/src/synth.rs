//! Random instance generators for sweep-style tests.
//!
//! Everything takes an explicit RNG so a test can drive one seeded stream
//! through feeders, injections and curves and stay reproducible. Ranges are
//! chosen to look like small distribution feeders in per-unit: impedances a
//! few hundredths, loads a few hundredths to a tenth, curve scales a few
//! per cent of nominal voltage.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Scenario;
use crate::error::Result;
use crate::network::{Bus, Der, FeederNetwork, Line};
use crate::nn::MonotoneNn;

/// Uniformly random radial feeder: each new bus hangs off a uniformly
/// chosen earlier bus, so every tree shape on `n` buses is reachable.
pub fn random_radial_feeder(
    n_interior: usize,
    n_der: usize,
    rng: &mut ChaCha8Rng,
) -> Result<FeederNetwork> {
    assert!(n_interior >= 1 && n_der >= 1 && n_der <= n_interior);
    let buses = (0..=n_interior)
        .map(|index| Bus { index, v_min: 0.95, v_max: 1.05 })
        .collect();
    let lines = (1..=n_interior)
        .map(|to| Line {
            from: rng.random_range(0..to),
            to,
            r: rng.random_range(0.004..0.02),
            x: rng.random_range(0.004..0.02),
            shunt_b: 0.0,
        })
        .collect();

    // Sample distinct DER buses by shuffling 1..=n.
    let mut candidates: Vec<usize> = (1..=n_interior).collect();
    for i in (1..candidates.len()).rev() {
        let j = rng.random_range(0..=i);
        candidates.swap(i, j);
    }
    let mut ders: Vec<Der> = candidates[..n_der]
        .iter()
        .map(|&bus| {
            let q_max = rng.random_range(0.05..0.4);
            Der { bus, q_min: -q_max, q_max }
        })
        .collect();
    ders.sort_by_key(|d| d.bus);

    let network = FeederNetwork { buses, lines, ders };
    network.validate()?;
    Ok(network)
}

/// Random loading: real consumption up to `level` per bus, reactive load at
/// up to 40% of that on the load buses.
pub fn random_injections(network: &FeederNetwork, level: f64, rng: &mut ChaCha8Rng) -> Scenario {
    let n = network.n_interior();
    let p = DVector::from_fn(n, |_, _| -rng.random_range(0.0..level));
    let n_load = network.load_buses().len();
    let q_l = DVector::from_fn(n_load, |_, _| -rng.random_range(0.0..0.4 * level));
    Scenario { p, q_l }
}

/// Random curve from the certified class: `h` hidden units, magnitudes
/// filling a random fraction of `cap`, centers and widths in the usual
/// voltage range.
pub fn random_monotone_nn(h: usize, cap: f64, rng: &mut ChaCha8Rng) -> Result<MonotoneNn> {
    assert!(h >= 1);
    let raw: Vec<f64> = (0..h).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let fill = rng.random_range(0.3..1.0) * cap;
    let weights: Vec<f64> = raw.iter().map(|w| -w / total * fill).collect();
    let biases: Vec<f64> = (0..h).map(|_| rng.random_range(-3.0..3.0)).collect();
    let shift = rng.random_range(0.95..1.05);
    let scale = rng.random_range(0.01..0.1);
    MonotoneNn::new(weights, biases, cap, shift, scale)
}
