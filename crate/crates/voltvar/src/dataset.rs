//! Scenario sweeps and training-set extraction.
//!
//! A scenario is one exogenous operating point: real injections for every
//! interior bus plus reactive injections for the load buses. Sweeping the
//! dispatch problem over many scenarios and recording, per DER, the pair
//! (local voltage at the optimum, optimal set point) produces the cloud the
//! monotone curves are fit to.
//!
//! Scenarios that the dispatch rejects (band unreachable, solver gave up)
//! are excluded from every DER's dataset and logged with the reason; a
//! sweep where nothing survives is an error, not an empty file.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linear::LinearModel;
use crate::network::FeederNetwork;
use crate::opf::{assemble_opf, solve_opf, OpfStatus, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Real injections, one per interior bus.
    pub p: DVector<f64>,
    /// Reactive injections, one per load (non-DER) bus, ascending bus order.
    pub q_l: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct ScenarioSet {
    pub scenarios: Vec<Scenario>,
    pub seed: u64,
    pub perturbation: f64,
}

/// Expand `base` operating points into `k` scenarios by cycling through the
/// rows and scaling every entry independently by (1 + u), u uniform on
/// [-perturbation, perturbation]. Zero perturbation reproduces the rows
/// exactly.
pub fn generate_scenarios(
    base: &[Scenario],
    k: usize,
    perturbation: f64,
    seed: u64,
) -> Result<ScenarioSet> {
    if base.is_empty() {
        return Err(Error::EmptyDataset("no base operating points".into()));
    }
    if !(0.0..1.0).contains(&perturbation) {
        return Err(Error::InvalidInput(format!(
            "perturbation must lie in [0, 1), got {perturbation}"
        )));
    }
    let dims = (base[0].p.len(), base[0].q_l.len());
    for (i, row) in base.iter().enumerate() {
        if (row.p.len(), row.q_l.len()) != dims {
            return Err(Error::Dimension(format!("base row {i} shape differs from row 0")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenarios = Vec::with_capacity(k);
    for i in 0..k {
        let row = &base[i % base.len()];
        let p = row.p.map(|x| x * (1.0 + rng.random_range(-perturbation..=perturbation)));
        let q_l = row.q_l.map(|x| x * (1.0 + rng.random_range(-perturbation..=perturbation)));
        scenarios.push(Scenario { p, q_l });
    }
    Ok(ScenarioSet { scenarios, seed, perturbation })
}

/// One DER's training cloud. `pairs[k]` belongs to the scenario whose id is
/// `included[k]` in the surrounding [`SweepOutcome`].
#[derive(Debug, Clone)]
pub struct DerDataset {
    /// 1-based bus id of the DER.
    pub bus: usize,
    /// (local voltage at the optimum, optimal set point).
    pub pairs: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct ExcludedScenario {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// One dataset per DER, ascending bus order.
    pub datasets: Vec<DerDataset>,
    /// Scenario indices that produced a labeled point, ascending.
    pub included: Vec<usize>,
    pub excluded: Vec<ExcludedScenario>,
}

/// Solve the dispatch for every scenario and collect per-DER labeled pairs.
/// Scenario solves are independent and fan out across threads.
pub fn build_datasets(
    set: &ScenarioSet,
    model: &LinearModel,
    network: &FeederNetwork,
) -> Result<SweepOutcome> {
    let ders = network.ders_sorted();
    if ders.is_empty() {
        return Err(Error::InvalidInput("network has no DERs to fit curves for".into()));
    }
    if set.scenarios.is_empty() {
        return Err(Error::EmptyDataset("scenario set is empty".into()));
    }

    // Per scenario: Ok(Ok(sample)) labeled, Ok(Err(reason)) excluded,
    // Err(_) a hard fault that aborts the sweep.
    type Sample = (Vec<f64>, Vec<f64>);
    let outcomes: Vec<Result<std::result::Result<Sample, String>>> =
        par::map_collect(&set.scenarios, |scenario| {
            let problem = assemble_opf(model, &scenario.p, &scenario.q_l, network)?;
            let sol = solve_opf(&problem, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
            match sol.status {
                OpfStatus::Optimal => {
                    let v_local: Vec<f64> =
                        model.der_idx.iter().map(|&i| sol.v_star[i]).collect();
                    let q_opt: Vec<f64> = sol.q_star.iter().copied().collect();
                    Ok(Ok((v_local, q_opt)))
                }
                OpfStatus::Infeasible { bus, violation } => Ok(Err(format!(
                    "band unreachable, worst at bus {bus} by {violation:.3e}"
                ))),
                OpfStatus::MaxIter => Ok(Err(format!(
                    "no certificate after {} iterations",
                    sol.iterations
                ))),
            }
        });

    let mut datasets: Vec<DerDataset> =
        ders.iter().map(|d| DerDataset { bus: d.bus, pairs: Vec::new() }).collect();
    let mut included = Vec::new();
    let mut excluded = Vec::new();
    for (index, outcome) in outcomes.into_iter().enumerate() {
        match outcome? {
            Ok((v_local, q_opt)) => {
                for (j, ds) in datasets.iter_mut().enumerate() {
                    ds.pairs.push((v_local[j], q_opt[j]));
                }
                included.push(index);
            }
            Err(reason) => excluded.push(ExcludedScenario { index, reason }),
        }
    }

    if included.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "all {} scenarios were excluded; first reason: {}",
            set.scenarios.len(),
            excluded.first().map(|e| e.reason.as_str()).unwrap_or("none")
        )));
    }
    Ok(SweepOutcome { datasets, included, excluded })
}
