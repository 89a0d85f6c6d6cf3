//! Feeder description: buses, branches and the DER fleet.
//!
//! Bus 0 is always the substation; its voltage is pinned to 1 p.u. and it
//! carries no limits of its own. Interior buses `1..=N` split into the
//! controllable set (buses hosting a DER) and plain load buses. All electrical
//! quantities are per-unit on a common base.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bus {
    pub index: usize,
    pub v_min: f64,
    pub v_max: f64,
}

/// Series branch with an optional total charging susceptance (pi model,
/// half placed at each end bus).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub shunt_b: f64,
}

/// Inverter-interfaced resource at `bus` with reactive capability
/// `q_min <= 0 <= q_max`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Der {
    pub bus: usize,
    pub q_min: f64,
    pub q_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeederNetwork {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub ders: Vec<Der>,
}

impl FeederNetwork {
    /// Number of interior buses (substation excluded).
    pub fn n_interior(&self) -> usize {
        self.buses.len() - 1
    }

    /// DER bus ids in ascending order. This ordering is part of the on-disk
    /// model contract: every C-dimensional vector in the crate follows it.
    pub fn der_buses(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self.ders.iter().map(|d| d.bus).collect();
        b.sort_unstable();
        b
    }

    /// Non-DER interior bus ids, ascending.
    pub fn load_buses(&self) -> Vec<usize> {
        let ders = self.der_buses();
        (1..=self.n_interior()).filter(|b| !ders.contains(b)).collect()
    }

    /// DER records sorted by bus id, matching `der_buses`.
    pub fn ders_sorted(&self) -> Vec<Der> {
        let mut d = self.ders.clone();
        d.sort_unstable_by_key(|d| d.bus);
        d
    }

    /// Per-DER capability box as (q_min, q_max) vectors in DER order.
    pub fn der_box(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.ders_sorted();
        (d.iter().map(|d| d.q_min).collect(), d.iter().map(|d| d.q_max).collect())
    }

    /// Voltage band for interior buses, natural bus order (index 0 = bus 1).
    pub fn voltage_band(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![0.0; self.n_interior()];
        let mut hi = vec![0.0; self.n_interior()];
        for b in &self.buses {
            if b.index >= 1 {
                lo[b.index - 1] = b.v_min;
                hi[b.index - 1] = b.v_max;
            }
        }
        (lo, hi)
    }

    /// Structural validation. Electrical validity (invertibility of the
    /// reduced admittance) is checked later, at model construction.
    pub fn validate(&self) -> Result<()> {
        if self.buses.len() < 2 {
            return Err(Error::InvalidInput("need a substation and at least one interior bus".into()));
        }
        let n = self.n_interior();
        let mut seen = vec![false; n + 1];
        for b in &self.buses {
            if b.index > n {
                return Err(Error::InvalidInput(format!(
                    "bus indices must cover 0..={n} with no gaps; found index {}",
                    b.index
                )));
            }
            if seen[b.index] {
                return Err(Error::InvalidInput(format!("duplicate bus index {}", b.index)));
            }
            seen[b.index] = true;
            if !(b.v_min < b.v_max) {
                return Err(Error::InvalidInput(format!(
                    "bus {}: require v_min < v_max, got [{}, {}]",
                    b.index, b.v_min, b.v_max
                )));
            }
        }

        for l in &self.lines {
            if l.from > n || l.to > n {
                return Err(Error::InvalidInput(format!(
                    "line {}-{} references a bus outside 0..={n}",
                    l.from, l.to
                )));
            }
            if l.from == l.to {
                return Err(Error::InvalidInput(format!("line {}-{} is a self-loop", l.from, l.to)));
            }
            // Radial distribution assumption: genuinely resistive-inductive
            // branches. A zero-impedance branch would make the Laplacian
            // construction meaningless.
            if !(l.r > 0.0) || !(l.x > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "line {}-{}: series impedance must have r > 0 and x > 0, got {} + j{}",
                    l.from, l.to, l.r, l.x
                )));
            }
            if !l.r.is_finite() || !l.x.is_finite() || !l.shunt_b.is_finite() {
                return Err(Error::InvalidInput(format!("line {}-{}: non-finite parameter", l.from, l.to)));
            }
        }

        // Reachability from the substation over the line graph.
        let mut adj = vec![Vec::new(); n + 1];
        for l in &self.lines {
            adj[l.from].push(l.to);
            adj[l.to].push(l.from);
        }
        let mut reached = vec![false; n + 1];
        let mut stack = vec![0usize];
        reached[0] = true;
        while let Some(b) = stack.pop() {
            for &nb in &adj[b] {
                if !reached[nb] {
                    reached[nb] = true;
                    stack.push(nb);
                }
            }
        }
        if let Some(bus) = reached.iter().position(|r| !r) {
            return Err(Error::Disconnected { bus });
        }

        let mut der_seen = vec![false; n + 1];
        for d in &self.ders {
            if d.bus == 0 || d.bus > n {
                return Err(Error::InvalidInput(format!(
                    "DER bus {} is not an interior bus",
                    d.bus
                )));
            }
            if der_seen[d.bus] {
                return Err(Error::InvalidInput(format!("two DERs on bus {}", d.bus)));
            }
            der_seen[d.bus] = true;
            if !(d.q_min <= 0.0 && 0.0 <= d.q_max) {
                return Err(Error::InvalidInput(format!(
                    "DER at bus {}: capability box [{}, {}] must contain 0",
                    d.bus, d.q_min, d.q_max
                )));
            }
        }
        Ok(())
    }
}
