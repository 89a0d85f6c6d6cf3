use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use voltvar::admittance::build_admittance;
use voltvar::control::ControlConfig;
use voltvar::dataset::{build_datasets, generate_scenarios, DerDataset, Scenario};
use voltvar::fixtures;
use voltvar::io;
use voltvar::linear::{build_linear_model, LinearModel};
use voltvar::network::FeederNetwork;
use voltvar::nn::{ModelFile, MonotoneNn, TrainingInfo};
use voltvar::opf::{assemble_opf, solve_opf, OpfStatus, DEFAULT_MAX_ITER};
use voltvar::sim::{
    extract_metrics, run_fixed_load, run_time_varying, FeedbackModel, SimOptions, SimTrace,
};
use voltvar::stability::assess_stability;
use voltvar::train::{train_batch, TrainConfig};

use crate::manifest::RunManifest;
use crate::{
    BuildDatasetArgs, FeedbackArg, FixtureArg, FixtureArgs, ModeArg, OpfArgs, SimulateArgs,
    StabilityArgs, TrainArgs,
};

fn load_setup(network: &Path) -> Result<(FeederNetwork, LinearModel)> {
    let net = io::load_network(network)?;
    let adm = build_admittance(&net)?;
    let model = build_linear_model(&adm, &net)?;
    Ok((net, model))
}

fn scan_prefixed(dir: &Path, prefix: &str, ext: &str) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let entries =
        fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if name.starts_with(prefix) && name.ends_with(ext) {
            found.push(path);
        }
    }
    found.sort();
    if found.is_empty() {
        bail!("no {prefix}*{ext} files in {}", dir.display());
    }
    Ok(found)
}

/// Load curve files and line them up with the network's DERs, ascending bus
/// order. Any mismatch between the two sets is a hard error.
fn load_curves(
    dir: &Path,
    network: &FeederNetwork,
) -> Result<(Vec<MonotoneNn>, Vec<PathBuf>)> {
    let paths = scan_prefixed(dir, "curve_bus", ".json")?;
    let mut entries: Vec<(ModelFile, PathBuf)> = Vec::new();
    for path in paths {
        entries.push((io::load_model(&path)?, path));
    }
    entries.sort_by_key(|(file, _)| file.bus);
    for pair in entries.windows(2) {
        if pair[0].0.bus == pair[1].0.bus {
            bail!(
                "two curves claim bus {}: {} and {}",
                pair[0].0.bus,
                pair[0].1.display(),
                pair[1].1.display()
            );
        }
    }
    let curve_buses: Vec<usize> = entries.iter().map(|(f, _)| f.bus).collect();
    let der_buses = network.der_buses();
    if curve_buses != der_buses {
        bail!("curves cover buses {curve_buses:?}, network has DERs at {der_buses:?}");
    }
    let mut curves = Vec::with_capacity(entries.len());
    let mut used = Vec::with_capacity(entries.len());
    for (file, path) in entries {
        curves.push(file.into_nn()?);
        used.push(path);
    }
    Ok((curves, used))
}

fn profile_row(profiles: &voltvar::profiles::TimeSeriesProfiles, minute: Option<f64>) -> Result<usize> {
    match minute {
        None => Ok(0),
        Some(m) => profiles
            .minutes
            .iter()
            .position(|&x| (x - m).abs() <= 1e-9)
            .ok_or_else(|| anyhow!("no profile row at minute {m}")),
    }
}

pub fn build_dataset(args: BuildDatasetArgs) -> Result<i32> {
    fs::create_dir_all(&args.out)?;
    let (net, model) = load_setup(&args.network)?;
    let profiles = io::load_profiles(&args.profiles)?;

    let thin = args.thin.max(1);
    let bases: Vec<Scenario> = (0..profiles.len())
        .step_by(thin)
        .map(|t| profiles.scenario_at(t, &net))
        .collect::<voltvar::Result<_>>()?;
    let set = generate_scenarios(&bases, args.scenarios, args.perturbation, args.seed)?;
    let outcome = match build_datasets(&set, &model, &net) {
        Ok(outcome) => outcome,
        Err(voltvar::Error::EmptyDataset(msg)) => {
            eprintln!("{} of {} scenarios could not be labeled: {msg}", args.scenarios, args.scenarios);
            eprintln!("nothing to train on");
            return Ok(3);
        }
        Err(err) => return Err(err.into()),
    };

    let mut manifest = RunManifest::new("build-dataset");
    manifest
        .param("scenarios", args.scenarios)
        .param("perturbation", args.perturbation)
        .param("thin", thin)
        .seed(args.seed);
    manifest.input(&args.network)?.input(&args.profiles)?;

    for dataset in &outcome.datasets {
        let name = format!("dataset_bus{}.csv", dataset.bus);
        io::save_dataset(args.out.join(&name), dataset, &outcome.included)?;
        manifest.output(name);
    }
    manifest
        .stat("labeled", outcome.included.len())
        .stat("infeasible", outcome.excluded.len());
    manifest.write(&args.out)?;

    if !outcome.excluded.is_empty() {
        eprintln!(
            "{} of {} scenarios could not be labeled:",
            outcome.excluded.len(),
            args.scenarios
        );
        for ex in outcome.excluded.iter().take(5) {
            eprintln!("  scenario {}: {}", ex.index, ex.reason);
        }
        if outcome.excluded.len() > 5 {
            eprintln!("  (and {} more)", outcome.excluded.len() - 5);
        }
    }
    println!(
        "labeled {} of {} scenarios into {}",
        outcome.included.len(),
        args.scenarios,
        args.out.display()
    );
    Ok(0)
}

pub fn train(args: TrainArgs) -> Result<i32> {
    fs::create_dir_all(&args.out)?;
    let net = io::load_network(&args.network)?;

    let dataset_paths = scan_prefixed(&args.datasets, "dataset_bus", ".csv")?;
    let mut datasets: Vec<DerDataset> = Vec::new();
    for path in &dataset_paths {
        datasets.extend(io::load_datasets(path)?);
    }
    datasets.sort_by_key(|d| d.bus);
    for pair in datasets.windows(2) {
        if pair[0].bus == pair[1].bus {
            bail!("bus {} appears in more than one dataset file", pair[0].bus);
        }
    }
    let ders = net.ders_sorted();
    let dataset_buses: Vec<usize> = datasets.iter().map(|d| d.bus).collect();
    let der_buses: Vec<usize> = ders.iter().map(|d| d.bus).collect();
    if dataset_buses != der_buses {
        bail!("datasets cover buses {dataset_buses:?}, network has DERs at {der_buses:?}");
    }

    let jobs: Vec<(&[(f64, f64)], TrainConfig)> = datasets
        .iter()
        .zip(&ders)
        .enumerate()
        .map(|(j, (dataset, der))| {
            let config = TrainConfig {
                hidden: args.hidden,
                epochs: args.epochs,
                learning_rate: args.learning_rate,
                cap: der.q_max,
                seed: args.seed + j as u64,
            };
            (dataset.pairs.as_slice(), config)
        })
        .collect();
    let fits = train_batch(&jobs)?;

    let mut manifest = RunManifest::new("train");
    manifest
        .param("hidden", args.hidden)
        .param("epochs", args.epochs)
        .param("learning-rate", args.learning_rate)
        .seed(args.seed);
    manifest.input(&args.network)?;
    for path in &dataset_paths {
        manifest.input(path)?;
    }

    let mut report_rows = Vec::new();
    for ((dataset, (_, config)), (nn, report)) in datasets.iter().zip(&jobs).zip(&fits) {
        let info = TrainingInfo {
            seed: config.seed,
            epochs: report.epochs_run,
            learning_rate: config.learning_rate,
            final_mse: report.final_mse,
            validation_mse: report.validation_mse,
        };
        let file = ModelFile::from_nn(nn, dataset.bus, Some(info));
        let name = format!("curve_bus{}.json", dataset.bus);
        io::save_model(args.out.join(&name), &file)?;
        manifest.output(name);
        report_rows.push(json!({
            "bus": dataset.bus,
            "samples": dataset.pairs.len(),
            "seed": config.seed,
            "epochs": report.epochs_run,
            "final_mse": report.final_mse,
            "validation_mse": report.validation_mse,
        }));
        match report.validation_mse {
            Some(val) => println!(
                "bus {}: final mse {:.3e}, validation mse {val:.3e}",
                dataset.bus, report.final_mse
            ),
            None => println!("bus {}: final mse {:.3e}", dataset.bus, report.final_mse),
        }
    }
    fs::write(
        args.out.join("training_report.json"),
        serde_json::to_string_pretty(&serde_json::Value::Array(report_rows))? + "\n",
    )?;
    manifest.output("training_report.json");
    manifest.stat("curves", fits.len());
    manifest.write(&args.out)?;
    println!("wrote {} curves to {}", fits.len(), args.out.display());
    Ok(0)
}

pub fn stability(args: StabilityArgs) -> Result<i32> {
    let (net, model) = load_setup(&args.network)?;
    let (curves, curve_paths) = load_curves(&args.models, &net)?;
    let report = assess_stability(&curves, &model, args.epsilon)?;
    println!("{}", serde_json::to_string_pretty(&report)?);

    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        io::save_stability(out.join("stability.json"), &report)?;
        let mut manifest = RunManifest::new("stability");
        if let Some(eps) = args.epsilon {
            manifest.param("epsilon", eps);
        }
        manifest.input(&args.network)?;
        for path in &curve_paths {
            manifest.input(path)?;
        }
        manifest.output("stability.json");
        manifest.write(out)?;
    }

    if let (Some(eps), Some(false)) = (args.epsilon, report.epsilon_ok) {
        eprintln!(
            "step size {eps} is not covered by the certificate: the loop is only \
             provably contracting below {}",
            report.epsilon_max
        );
        return Ok(4);
    }
    Ok(0)
}

fn control_for(mode: ModeArg, args: &SimulateArgs, max_iter: usize) -> ControlConfig {
    let mut control = match mode {
        ModeArg::Incremental | ModeArg::Paired => ControlConfig::incremental(args.epsilon),
        ModeArg::NonIncremental => ControlConfig::non_incremental(),
        ModeArg::Uncontrolled => ControlConfig::uncontrolled(),
    };
    control.tol = args.tol;
    control.max_iter = max_iter.max(1);
    control
}

fn band_violations(v: &nalgebra::DVector<f64>, trace: &SimTrace) -> usize {
    (0..v.len()).filter(|&b| v[b] < trace.v_min[b] || v[b] > trace.v_max[b]).count()
}

fn write_comparison(path: &Path, controlled: &SimTrace, uncontrolled: &SimTrace) -> Result<()> {
    let mut text = String::from(
        "minute,min_v_uncontrolled,min_v_controlled,loss_uncontrolled,loss_controlled,\
         violations_uncontrolled,violations_controlled\n",
    );
    for (c, u) in controlled.steps.iter().zip(&uncontrolled.steps) {
        text += &format!(
            "{},{},{},{},{},{},{}\n",
            c.minute,
            u.last.v.min(),
            c.last.v.min(),
            u.last.loss,
            c.last.loss,
            band_violations(&u.last.v, uncontrolled),
            band_violations(&c.last.v, controlled),
        );
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> Result<i32> {
    fs::create_dir_all(&args.out)?;
    let (net, model) = load_setup(&args.network)?;
    let full = io::load_profiles(&args.profiles)?;
    let profiles = match (args.window_start, args.window_end) {
        (None, None) => full,
        (start, end) => {
            let t0 = start.unwrap_or(full.minutes[0]);
            let t1 = end.unwrap_or(full.minutes[full.len() - 1] + full.dt());
            full.window(t0, t1)?
        }
    };

    let needs_curves = !matches!(args.mode, ModeArg::Uncontrolled);
    let (curves, curve_paths) = if needs_curves {
        let dir = args
            .models
            .as_ref()
            .ok_or_else(|| anyhow!("--models is required except in uncontrolled mode"))?;
        load_curves(dir, &net)?
    } else {
        (Vec::new(), Vec::new())
    };
    let feedback = match args.feedback {
        FeedbackArg::Linear => FeedbackModel::Linear,
        FeedbackArg::Zbus => FeedbackModel::ZBus,
    };

    let mut manifest = RunManifest::new("simulate");
    manifest
        .param("mode", mode_name(args.mode))
        .param("epsilon", args.epsilon)
        .param("feedback", match args.feedback {
            FeedbackArg::Linear => "linear",
            FeedbackArg::Zbus => "zbus",
        })
        .param("tol", args.tol)
        .param("fixed-load", args.fixed_load)
        .param("record-iterations", args.record_iterations);
    if let Some(s) = args.window_start {
        manifest.param("window-start", s);
    }
    if let Some(e) = args.window_end {
        manifest.param("window-end", e);
    }
    manifest.input(&args.network)?.input(&args.profiles)?;
    for path in &curve_paths {
        manifest.input(path)?;
    }

    if args.fixed_load {
        if matches!(args.mode, ModeArg::Paired) {
            bail!("--fixed-load does not support paired mode; run the two modes separately");
        }
        manifest.param("iters", args.iters);
        let row = profile_row(&profiles, args.minute)?;
        let scenario = profiles.scenario_at(row, &net)?;
        let options = SimOptions {
            control: control_for(args.mode, &args, args.iters),
            feedback,
            q0: None,
            record_iterations: true,
        };
        let mut trace = run_fixed_load(&model, &net, &curves, &scenario, &options)?;
        trace.steps[0].minute = profiles.minutes[row];
        io::save_trace(args.out.join("trace.csv"), &trace)?;
        io::save_metrics(args.out.join("metrics.json"), &extract_metrics(&trace))?;
        manifest.output("trace.csv").output("metrics.json");
        let step = &trace.steps[0];
        manifest.stat("converged_at", json!(step.converged_at));
        manifest.write(&args.out)?;
        return match step.converged_at {
            Some(k) => {
                println!("settled after {k} iterations; artifacts in {}", args.out.display());
                Ok(0)
            }
            None if matches!(args.mode, ModeArg::Uncontrolled) => {
                println!("held the operating point; artifacts in {}", args.out.display());
                Ok(0)
            }
            None => {
                // Not certified within the budget. A contracting loop is fine
                // (the trace is the product); report divergence only when the
                // update steps stopped shrinking.
                let its = &step.iterations;
                let first = (&its[1].q_c - &its[0].q_c).norm();
                let last = (&its[its.len() - 1].q_c - &its[its.len() - 2].q_c).norm();
                if its.len() > 2 && last < first {
                    println!(
                        "still contracting after {} iterations (update {last:.3e}, down from \
                         {first:.3e}); artifacts in {}",
                        args.iters,
                        args.out.display()
                    );
                    Ok(0)
                } else {
                    eprintln!(
                        "set points are not settling: update {last:.3e} after {} iterations \
                         (started at {first:.3e})",
                        args.iters
                    );
                    Ok(3)
                }
            }
        };
    }

    manifest.param("iters-per-step", args.iters_per_step);
    if matches!(args.mode, ModeArg::Paired) {
        let controlled_options = SimOptions {
            control: control_for(ModeArg::Paired, &args, args.iters_per_step),
            feedback,
            q0: None,
            record_iterations: args.record_iterations,
        };
        let controlled = run_time_varying(
            &model,
            &net,
            &curves,
            &profiles,
            args.iters_per_step,
            &controlled_options,
        )?;
        let uncontrolled_options = SimOptions {
            control: control_for(ModeArg::Uncontrolled, &args, 0),
            feedback,
            q0: None,
            record_iterations: args.record_iterations,
        };
        let uncontrolled =
            run_time_varying(&model, &net, &[], &profiles, 0, &uncontrolled_options)?;

        io::save_trace(args.out.join("trace_controlled.csv"), &controlled)?;
        io::save_trace(args.out.join("trace_uncontrolled.csv"), &uncontrolled)?;
        io::save_metrics(
            args.out.join("metrics_controlled.json"),
            &extract_metrics(&controlled),
        )?;
        io::save_metrics(
            args.out.join("metrics_uncontrolled.json"),
            &extract_metrics(&uncontrolled),
        )?;
        write_comparison(&args.out.join("comparison.csv"), &controlled, &uncontrolled)?;
        manifest
            .output("trace_controlled.csv")
            .output("trace_uncontrolled.csv")
            .output("metrics_controlled.json")
            .output("metrics_uncontrolled.json")
            .output("comparison.csv");

        let mut violating = 0usize;
        let mut lifted = 0usize;
        for (c, u) in controlled.steps.iter().zip(&uncontrolled.steps) {
            if band_violations(&u.last.v, &uncontrolled) > 0 {
                violating += 1;
                if c.last.v.min() >= u.last.v.min() {
                    lifted += 1;
                }
            }
        }
        manifest.stat("violating_rows", violating).stat("lifted_rows", lifted);
        manifest.write(&args.out)?;
        println!(
            "{violating} of {} rows violate the band without control; the controlled floor \
             is at least as high on {lifted} of them; artifacts in {}",
            profiles.len(),
            args.out.display()
        );
        return Ok(0);
    }

    let iters = if matches!(args.mode, ModeArg::Uncontrolled) { 0 } else { args.iters_per_step };
    let options = SimOptions {
        control: control_for(args.mode, &args, args.iters_per_step),
        feedback,
        q0: None,
        record_iterations: args.record_iterations,
    };
    let trace = run_time_varying(&model, &net, &curves, &profiles, iters, &options)?;
    io::save_trace(args.out.join("trace.csv"), &trace)?;
    let metrics = extract_metrics(&trace);
    io::save_metrics(args.out.join("metrics.json"), &metrics)?;
    manifest.output("trace.csv").output("metrics.json");
    manifest.write(&args.out)?;
    let floor = metrics.min_v.iter().copied().fold(f64::INFINITY, f64::min);
    println!(
        "replayed {} rows (lowest voltage {floor}, {} band-violating steps); artifacts in {}",
        profiles.len(),
        metrics.violation_steps,
        args.out.display()
    );
    Ok(0)
}

fn mode_name(mode: ModeArg) -> &'static str {
    match mode {
        ModeArg::Incremental => "incremental",
        ModeArg::NonIncremental => "non-incremental",
        ModeArg::Uncontrolled => "uncontrolled",
        ModeArg::Paired => "paired",
    }
}

pub fn opf(args: OpfArgs) -> Result<i32> {
    let (net, model) = load_setup(&args.network)?;
    let profiles = io::load_profiles(&args.profiles)?;
    let row = profile_row(&profiles, args.minute)?;
    let scenario = profiles.scenario_at(row, &net)?;
    let prob = assemble_opf(&model, &scenario.p, &scenario.q_l, &net)?;
    let sol = solve_opf(&prob, args.tol, DEFAULT_MAX_ITER)?;

    match sol.status {
        OpfStatus::Optimal => {
            println!("status: optimal after {} iterations", sol.iterations);
            println!("q_star:");
            for (j, &bus) in net.der_buses().iter().enumerate() {
                println!("  bus {bus}: {}", sol.q_star[j]);
            }
            println!("v_star:");
            for i in 0..sol.v_star.len() {
                println!("  bus {}: {}", i + 1, sol.v_star[i]);
            }
            println!("loss: {}", sol.loss_star);
            println!(
                "kkt: stationarity {:e} primal {:e} complementarity {:e}",
                sol.kkt.stationarity, sol.kkt.primal, sol.kkt.complementarity
            );
            if let Some(out) = &args.out {
                fs::create_dir_all(out)?;
                let solution = json!({
                    "status": "optimal",
                    "iterations": sol.iterations,
                    "der_buses": net.der_buses(),
                    "q_star": sol.q_star.iter().copied().collect::<Vec<f64>>(),
                    "v_star": sol.v_star.iter().copied().collect::<Vec<f64>>(),
                    "loss": sol.loss_star,
                    "kkt": {
                        "stationarity": sol.kkt.stationarity,
                        "primal": sol.kkt.primal,
                        "complementarity": sol.kkt.complementarity,
                    },
                });
                fs::write(
                    out.join("opf.json"),
                    serde_json::to_string_pretty(&solution)? + "\n",
                )?;
                let mut manifest = RunManifest::new("opf");
                manifest.param("tol", args.tol);
                if let Some(m) = args.minute {
                    manifest.param("minute", m);
                }
                manifest.input(&args.network)?.input(&args.profiles)?;
                manifest.output("opf.json");
                manifest.write(out)?;
            }
            Ok(0)
        }
        OpfStatus::Infeasible { bus, violation } => {
            eprintln!(
                "dispatch infeasible: voltage band unreachable, worst at bus {bus} by {violation}"
            );
            Ok(3)
        }
        OpfStatus::MaxIter => {
            eprintln!("no optimality certificate within {} iterations", sol.iterations);
            Ok(3)
        }
    }
}

pub fn fixture(args: FixtureArgs) -> Result<i32> {
    fs::create_dir_all(&args.out)?;
    let mut manifest = RunManifest::new("fixture");
    match args.name {
        FixtureArg::Feeder37 => {
            io::save_network(args.out.join("network.json"), &fixtures::feeder37())?;
            io::save_profiles(args.out.join("day.csv"), &fixtures::day_profiles()?)?;
            manifest.param("name", "feeder37").output("network.json").output("day.csv");
        }
        FixtureArg::SixBus => {
            io::save_network(args.out.join("network.json"), &fixtures::six_bus())?;
            manifest.param("name", "six-bus").output("network.json");
        }
        FixtureArg::TwoBus => {
            io::save_network(args.out.join("network.json"), &fixtures::two_bus())?;
            manifest.param("name", "two-bus").output("network.json");
        }
    }
    manifest.write(&args.out)?;
    println!("wrote fixture files to {}", args.out.display());
    Ok(0)
}
