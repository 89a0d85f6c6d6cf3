//! Minute-resolution load profiles.
//!
//! A profile block stores real and reactive injections for every interior
//! bus on a uniform time grid. Loads are negative injections throughout.
//! Reactive columns at DER buses must be zero: reactive power there belongs
//! to the controller, mixing in a background component would silently
//! corrupt the dispatch comparison.
//!
//! `scale_to_duration` implements the usual planning normalization: sort
//! the total-load trace descending and scale so the value exceeded for a
//! given fraction of the day equals a nominal level. Peaks then overshoot
//! the nominal, which is what makes the evening hours bind.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Scenario;
use crate::error::{Error, Result};
use crate::network::FeederNetwork;

#[derive(Debug, Clone)]
pub struct TimeSeriesProfiles {
    /// Timestamps in minutes, uniformly spaced.
    pub minutes: Vec<f64>,
    /// Real injections, T x N (row = minute, column = interior bus).
    pub p: DMatrix<f64>,
    /// Reactive injections, T x N; zero at DER buses.
    pub q: DMatrix<f64>,
}

impl TimeSeriesProfiles {
    pub fn new(minutes: Vec<f64>, p: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        let t = minutes.len();
        if t == 0 {
            return Err(Error::EmptyDataset("profile has no rows".into()));
        }
        if p.nrows() != t || q.nrows() != t || p.ncols() != q.ncols() {
            return Err(Error::Dimension(format!(
                "{} timestamps, p is {}x{}, q is {}x{}",
                t,
                p.nrows(),
                p.ncols(),
                q.nrows(),
                q.ncols()
            )));
        }
        if t >= 2 {
            let dt = minutes[1] - minutes[0];
            if !(dt > 0.0) {
                return Err(Error::InvalidInput("timestamps must increase".into()));
            }
            for k in 2..t {
                if ((minutes[k] - minutes[k - 1]) - dt).abs() > 1e-9 {
                    return Err(Error::InvalidInput(format!(
                        "non-uniform step at row {k}: {} vs {}",
                        minutes[k] - minutes[k - 1],
                        dt
                    )));
                }
            }
        }
        Ok(Self { minutes, p, q })
    }

    pub fn len(&self) -> usize {
        self.minutes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutes.is_empty()
    }

    pub fn n_bus(&self) -> usize {
        self.p.ncols()
    }

    pub fn dt(&self) -> f64 {
        if self.minutes.len() >= 2 { self.minutes[1] - self.minutes[0] } else { 1.0 }
    }

    /// Rows with `t0 <= minute < t1`.
    pub fn window(&self, t0: f64, t1: f64) -> Result<Self> {
        let rows: Vec<usize> = (0..self.len())
            .filter(|&k| self.minutes[k] >= t0 && self.minutes[k] < t1)
            .collect();
        if rows.is_empty() {
            return Err(Error::InvalidInput(format!("window [{t0}, {t1}) selects no rows")));
        }
        Self::new(
            rows.iter().map(|&k| self.minutes[k]).collect(),
            self.p.select_rows(&rows),
            self.q.select_rows(&rows),
        )
    }

    /// Exogenous operating point at row `t`: full real vector plus the
    /// reactive entries of the load buses. Rejects profiles that put
    /// reactive load on a DER bus.
    pub fn scenario_at(&self, t: usize, network: &FeederNetwork) -> Result<Scenario> {
        if t >= self.len() {
            return Err(Error::InvalidInput(format!("row {t} out of {}", self.len())));
        }
        if self.n_bus() != network.n_interior() {
            return Err(Error::Dimension(format!(
                "profile covers {} buses, network has {}",
                self.n_bus(),
                network.n_interior()
            )));
        }
        for &bus in &network.der_buses() {
            let q = self.q[(t, bus - 1)];
            if q.abs() > 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "reactive load {q} on DER bus {bus}; controller owns that injection"
                )));
            }
        }
        let p = DVector::from_fn(self.n_bus(), |b, _| self.p[(t, b)]);
        let q_l = DVector::from_iterator(
            network.load_buses().len(),
            network.load_buses().iter().map(|&bus| self.q[(t, bus - 1)]),
        );
        Ok(Scenario { p, q_l })
    }

    /// Total consumed real power per row (positive numbers).
    pub fn total_load(&self) -> Vec<f64> {
        (0..self.len()).map(|t| -self.p.row(t).sum()).collect()
    }

    /// Load level exceeded for `fraction` of the rows, from the descending
    /// duration curve of the total load.
    pub fn duration_value(&self, fraction: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidInput(format!("fraction {fraction} outside [0, 1]")));
        }
        let mut d = self.total_load();
        d.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let idx = ((fraction * d.len() as f64).ceil() as usize).max(1) - 1;
        Ok(d[idx.min(d.len() - 1)])
    }

    pub fn scale_uniform(&mut self, factor: f64) {
        self.p *= factor;
        self.q *= factor;
    }

    /// Scale so that the duration curve of total load passes through
    /// `nominal` at `fraction`. Returns the resulting peak-to-nominal
    /// ratio.
    pub fn scale_to_duration(&mut self, nominal: f64, fraction: f64) -> Result<f64> {
        if !(nominal > 0.0) {
            return Err(Error::InvalidInput(format!("nominal load must be positive, got {nominal}")));
        }
        let at = self.duration_value(fraction)?;
        if !(at > 0.0) {
            return Err(Error::InvalidInput(
                "duration point is not positive; cannot normalize".into(),
            ));
        }
        self.scale_uniform(nominal / at);
        let peak = self.total_load().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(peak / nominal)
    }
}

/// One synthetic day at one-minute resolution: overnight valley, small
/// morning shoulder, dominant evening peak, light per-minute jitter.
/// `peak_p[b]` is bus b+1's peak real consumption (positive); reactive
/// load tracks real at a 0.4 ratio on load buses and stays zero on DER
/// buses. Deterministic in `seed`.
pub fn synthetic_day(
    network: &FeederNetwork,
    peak_p: &[f64],
    seed: u64,
) -> Result<TimeSeriesProfiles> {
    let n = network.n_interior();
    if peak_p.len() != n {
        return Err(Error::Dimension(format!(
            "{} peak levels for {} interior buses",
            peak_p.len(),
            n
        )));
    }
    if peak_p.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::InvalidInput("peak loads must be nonnegative".into()));
    }
    let der_buses = network.der_buses();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let t_len = 1440;
    let minutes: Vec<f64> = (0..t_len).map(|t| t as f64).collect();
    let mut p = DMatrix::zeros(t_len, n);
    let mut q = DMatrix::zeros(t_len, n);

    let shape = |minute: f64| -> f64 {
        let h = minute / 60.0;
        let base = 0.42 + 0.16 * (std::f64::consts::TAU * (h - 9.0) / 24.0).sin();
        let evening = 0.42 * (-((h - 19.5) / 2.1).powi(2)).exp();
        let morning = 0.10 * (-((h - 7.8) / 1.6).powi(2)).exp();
        base + evening + morning
    };

    for t in 0..t_len {
        let s = shape(minutes[t]);
        for b in 0..n {
            let jitter = 1.0 + rng.random_range(-0.03..=0.03);
            let load = peak_p[b] * s * jitter;
            p[(t, b)] = -load;
            if !der_buses.contains(&(b + 1)) {
                q[(t, b)] = -0.4 * load;
            }
        }
    }
    TimeSeriesProfiles::new(minutes, p, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_relative_eq;

    fn tiny(minutes: Vec<f64>) -> Result<TimeSeriesProfiles> {
        let t = minutes.len();
        TimeSeriesProfiles::new(minutes, DMatrix::zeros(t, 2), DMatrix::zeros(t, 2))
    }

    #[test]
    fn non_uniform_grid_is_rejected() {
        assert!(tiny(vec![0.0, 1.0, 2.0, 3.0]).is_ok());
        assert!(tiny(vec![0.0, 1.0, 2.5]).is_err());
        assert!(tiny(vec![1.0, 1.0]).is_err());
        assert!(tiny(vec![]).is_err());
    }

    #[test]
    fn window_selects_half_open_interval() {
        let t = 10;
        let p = DMatrix::from_fn(t, 2, |r, c| -(r as f64 + c as f64));
        let prof =
            TimeSeriesProfiles::new((0..t).map(|k| k as f64).collect(), p, DMatrix::zeros(t, 2))
                .unwrap();
        let w = prof.window(3.0, 7.0).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(w.minutes, vec![3.0, 4.0, 5.0, 6.0]);
        assert_eq!(w.p[(0, 0)], -3.0);
        assert!(prof.window(100.0, 200.0).is_err());
    }

    #[test]
    fn scenario_extraction_skips_der_buses() {
        let net = fixtures::six_bus();
        let t = 3;
        let p = DMatrix::from_fn(t, 6, |r, c| -((r * 6 + c) as f64) * 0.01);
        let mut q = DMatrix::from_fn(t, 6, |r, c| -((r * 6 + c) as f64) * 0.001);
        // DERs sit on buses 2 and 5.
        for r in 0..t {
            q[(r, 1)] = 0.0;
            q[(r, 4)] = 0.0;
        }
        let prof =
            TimeSeriesProfiles::new((0..t).map(|k| k as f64).collect(), p, q).unwrap();
        let s = prof.scenario_at(1, &net).unwrap();
        assert_eq!(s.p.len(), 6);
        assert_eq!(s.q_l.len(), 4);
        // Load buses ascending: 1, 3, 4, 6.
        assert_relative_eq!(s.q_l[0], -(6.0) * 0.001, epsilon = 1e-15);
        assert_relative_eq!(s.q_l[1], -(8.0) * 0.001, epsilon = 1e-15);
        assert_relative_eq!(s.q_l[2], -(9.0) * 0.001, epsilon = 1e-15);
        assert_relative_eq!(s.q_l[3], -(11.0) * 0.001, epsilon = 1e-15);
    }

    #[test]
    fn reactive_load_on_a_der_bus_is_refused() {
        let net = fixtures::six_bus();
        let q = DMatrix::from_element(1, 6, -0.01);
        let prof =
            TimeSeriesProfiles::new(vec![0.0], DMatrix::zeros(1, 6), q).unwrap();
        assert!(prof.scenario_at(0, &net).is_err());
    }

    #[test]
    fn synthetic_day_shape_and_determinism() {
        let net = fixtures::six_bus();
        let peaks = vec![0.05, 0.08, 0.06, 0.07, 0.02, 0.04];
        let a = synthetic_day(&net, &peaks, 7).unwrap();
        let b = synthetic_day(&net, &peaks, 7).unwrap();
        assert_eq!(a.len(), 1440);
        assert_eq!(a.p, b.p);
        assert_eq!(a.q, b.q);

        // Loads everywhere, reactive zero exactly on DER buses.
        assert!(a.p.iter().all(|&x| x <= 0.0));
        assert!(a.q.iter().all(|&x| x <= 0.0));
        for t in 0..a.len() {
            assert_eq!(a.q[(t, 1)], 0.0);
            assert_eq!(a.q[(t, 4)], 0.0);
        }

        // Evening peak dominates the overnight valley.
        let total = a.total_load();
        let evening = total[19 * 60 + 30];
        let night = total[3 * 60];
        assert!(evening > 2.0 * night, "evening {evening} vs night {night}");

        let c = synthetic_day(&net, &peaks, 8).unwrap();
        assert!(a.p != c.p);
    }

    #[test]
    fn duration_scaling_hits_the_nominal() {
        let net = fixtures::six_bus();
        let peaks = vec![0.05, 0.08, 0.06, 0.07, 0.02, 0.04];
        let mut prof = synthetic_day(&net, &peaks, 3).unwrap();
        let ratio = prof.scale_to_duration(0.2, 0.97).unwrap();
        assert_relative_eq!(prof.duration_value(0.97).unwrap(), 0.2, epsilon = 1e-12);
        let peak = prof.total_load().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(ratio, peak / 0.2, epsilon = 1e-12);
        assert!(ratio > 1.0);
    }
}
