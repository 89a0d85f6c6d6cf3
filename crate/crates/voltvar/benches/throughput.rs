//! Throughput of the three fan-out surfaces: scenario labeling, per-DER
//! curve fitting, and fixed-load simulation sweeps.
//!
//! Each group pits the library path ("parallel", rayon under the default
//! `parallel` feature) against a plain sequential loop over the same public
//! API ("sequential"). Built with `--no-default-features` the library path
//! degrades to the sequential fallback and the two sides should coincide,
//! which makes that build a useful sanity baseline.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use voltvar::admittance::build_admittance;
use voltvar::control::ControlConfig;
use voltvar::dataset::{build_datasets, generate_scenarios, ScenarioSet};
use voltvar::fixtures;
use voltvar::linear::{build_linear_model, LinearModel};
use voltvar::network::FeederNetwork;
use voltvar::nn::MonotoneNn;
use voltvar::opf::{assemble_opf, solve_opf, OpfStatus, DEFAULT_MAX_ITER, DEFAULT_TOL};
use voltvar::sim::{run_fixed_load, run_fixed_load_batch, FeedbackModel, SimOptions};
use voltvar::stability::assess_stability;
use voltvar::synth::random_monotone_nn;
use voltvar::train::{train, train_batch, TrainConfig};

struct Bed {
    network: FeederNetwork,
    model: LinearModel,
    set: ScenarioSet,
}

fn bed(n_scenarios: usize) -> Bed {
    let network = fixtures::feeder37();
    let adm = build_admittance(&network).unwrap();
    let model = build_linear_model(&adm, &network).unwrap();
    let day = fixtures::day_profiles().unwrap();
    let bases: Vec<_> = (0..day.len())
        .step_by(30)
        .map(|t| day.scenario_at(t, &network).unwrap())
        .collect();
    let set = generate_scenarios(&bases, n_scenarios, 0.05, 7).unwrap();
    Bed { network, model, set }
}

fn scenario_sweep(c: &mut Criterion) {
    let bed = bed(48);
    let mut group = c.benchmark_group("scenario_sweep");
    group.sample_size(10).warm_up_time(Duration::from_secs(1));

    group.bench_function("parallel", |b| {
        b.iter(|| black_box(build_datasets(&bed.set, &bed.model, &bed.network).unwrap()))
    });

    group.bench_function("sequential", |b| {
        b.iter(|| {
            let ders = bed.network.ders_sorted();
            let mut pairs: Vec<Vec<(f64, f64)>> = vec![Vec::new(); ders.len()];
            for scenario in &bed.set.scenarios {
                let prob =
                    assemble_opf(&bed.model, &scenario.p, &scenario.q_l, &bed.network).unwrap();
                let sol = solve_opf(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
                if sol.status != OpfStatus::Optimal {
                    continue;
                }
                for (j, &i) in bed.model.der_idx.iter().enumerate() {
                    pairs[j].push((sol.v_star[i], sol.q_star[j]));
                }
            }
            black_box(pairs)
        })
    });
    group.finish();
}

fn curve_fitting(c: &mut Criterion) {
    let bed = bed(150);
    let outcome = build_datasets(&bed.set, &bed.model, &bed.network).unwrap();
    let ders = bed.network.ders_sorted();
    let jobs: Vec<(&[(f64, f64)], TrainConfig)> = outcome
        .datasets
        .iter()
        .zip(&ders)
        .enumerate()
        .map(|(j, (dataset, der))| {
            let config = TrainConfig {
                hidden: 24,
                epochs: 400,
                learning_rate: 0.02,
                cap: der.q_max,
                seed: 6000 + j as u64,
            };
            (dataset.pairs.as_slice(), config)
        })
        .collect();

    let mut group = c.benchmark_group("curve_fitting");
    group.sample_size(10).warm_up_time(Duration::from_secs(1));

    group.bench_function("parallel", |b| b.iter(|| black_box(train_batch(&jobs).unwrap())));

    group.bench_function("sequential", |b| {
        b.iter(|| {
            let fits: Vec<_> = jobs
                .iter()
                .map(|(samples, config)| train(samples, config).unwrap())
                .collect();
            black_box(fits)
        })
    });
    group.finish();
}

fn operating_point_sweep(c: &mut Criterion) {
    let bed = bed(32);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let curves: Vec<MonotoneNn> = bed
        .network
        .ders_sorted()
        .iter()
        .map(|d| random_monotone_nn(12, d.q_max, &mut rng).unwrap())
        .collect();
    let report = assess_stability(&curves, &bed.model, None).unwrap();
    let options = SimOptions {
        control: ControlConfig::incremental(0.9 * report.epsilon_max),
        feedback: FeedbackModel::Linear,
        q0: None,
        record_iterations: false,
    };

    let mut group = c.benchmark_group("operating_point_sweep");
    group.sample_size(10).warm_up_time(Duration::from_secs(1));

    group.bench_function("parallel", |b| {
        b.iter(|| {
            black_box(
                run_fixed_load_batch(
                    &bed.model,
                    &bed.network,
                    &curves,
                    &bed.set.scenarios,
                    &options,
                )
                .unwrap(),
            )
        })
    });

    group.bench_function("sequential", |b| {
        b.iter(|| {
            let traces: Vec<_> = bed
                .set
                .scenarios
                .iter()
                .map(|s| run_fixed_load(&bed.model, &bed.network, &curves, s, &options).unwrap())
                .collect();
            black_box(traces)
        })
    });
    group.finish();
}

criterion_group!(benches, scenario_sweep, curve_fitting, operating_point_sweep);
criterion_main!(benches);
