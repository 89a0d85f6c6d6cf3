//! File formats. JSON for structured artifacts (networks, curves, reports),
//! CSV for tabular ones (datasets, profiles, traces).
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces every value bit for bit. Errors carry the
//! path, and line numbers where the underlying parser provides them.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::dataset::{DerDataset, SweepOutcome};
use crate::error::{Error, Result};
use crate::network::FeederNetwork;
use crate::nn::ModelFile;
use crate::profiles::TimeSeriesProfiles;
use crate::sim::{SimMetrics, SimTrace};
use crate::stability::StabilityReport;

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.into(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        path: path.into(),
        line: 0,
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Load and validate a feeder description.
pub fn load_network(path: impl AsRef<Path>) -> Result<FeederNetwork> {
    let network: FeederNetwork = read_json(path.as_ref())?;
    network.validate()?;
    Ok(network)
}

pub fn save_network(path: impl AsRef<Path>, network: &FeederNetwork) -> Result<()> {
    write_json(path.as_ref(), network)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    read_json(path.as_ref())
}

pub fn save_model(path: impl AsRef<Path>, model: &ModelFile) -> Result<()> {
    write_json(path.as_ref(), model)
}

pub fn load_metrics(path: impl AsRef<Path>) -> Result<SimMetrics> {
    read_json(path.as_ref())
}

pub fn save_metrics(path: impl AsRef<Path>, metrics: &SimMetrics) -> Result<()> {
    write_json(path.as_ref(), metrics)
}

pub fn load_stability(path: impl AsRef<Path>) -> Result<StabilityReport> {
    read_json(path.as_ref())
}

pub fn save_stability(path: impl AsRef<Path>, report: &StabilityReport) -> Result<()> {
    write_json(path.as_ref(), report)
}

/// Labeled sweep output: one row per (surviving scenario, DER).
/// Columns: scenario id, DER bus, local voltage, optimal set point.
pub fn save_datasets(path: impl AsRef<Path>, outcome: &SweepOutcome) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| csv_error(path, e))?;
    w.write_record(["scenario", "bus", "v", "q"]).map_err(|e| csv_error(path, e))?;
    for (k, &scenario) in outcome.included.iter().enumerate() {
        for ds in &outcome.datasets {
            let (v, q) = ds.pairs[k];
            w.write_record([
                scenario.to_string(),
                ds.bus.to_string(),
                format!("{v}"),
                format!("{q}"),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One DER's slice of a sweep, same columns as [`save_datasets`].
/// `scenario_ids[k]` labels `dataset.pairs[k]`.
pub fn save_dataset(
    path: impl AsRef<Path>,
    dataset: &DerDataset,
    scenario_ids: &[usize],
) -> Result<()> {
    let path = path.as_ref();
    if scenario_ids.len() != dataset.pairs.len() {
        return Err(Error::Dimension(format!(
            "{} scenario ids for {} pairs",
            scenario_ids.len(),
            dataset.pairs.len()
        )));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["scenario", "bus", "v", "q"]).map_err(|e| csv_error(path, e))?;
    for (&scenario, &(v, q)) in scenario_ids.iter().zip(&dataset.pairs) {
        w.write_record([
            scenario.to_string(),
            dataset.bus.to_string(),
            format!("{v}"),
            format!("{q}"),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a labeled sweep back, grouped per DER in ascending bus order.
pub fn load_datasets(path: impl AsRef<Path>) -> Result<Vec<DerDataset>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut grouped: std::collections::BTreeMap<usize, Vec<(f64, f64)>> =
        std::collections::BTreeMap::new();
    for record in r.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 4 {
            return Err(Error::Parse {
                path: path.into(),
                line,
                message: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let bus: usize = parse_field(path, line, &record[1], "bus")?;
        let v: f64 = parse_field(path, line, &record[2], "v")?;
        let q: f64 = parse_field(path, line, &record[3], "q")?;
        grouped.entry(bus).or_default().push((v, q));
    }
    if grouped.is_empty() {
        return Err(Error::EmptyDataset(format!("{} holds no rows", path.display())));
    }
    Ok(grouped.into_iter().map(|(bus, pairs)| DerDataset { bus, pairs }).collect())
}

/// Profile block as CSV: minute, bus, p, q; rows minute-major then bus.
pub fn save_profiles(path: impl AsRef<Path>, profiles: &TimeSeriesProfiles) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["minute", "bus", "p", "q"]).map_err(|e| csv_error(path, e))?;
    for t in 0..profiles.len() {
        for b in 0..profiles.n_bus() {
            w.write_record([
                format!("{}", profiles.minutes[t]),
                (b + 1).to_string(),
                format!("{}", profiles.p[(t, b)]),
                format!("{}", profiles.q[(t, b)]),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_profiles(path: impl AsRef<Path>) -> Result<TimeSeriesProfiles> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<(f64, usize, f64, f64)> = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 4 {
            return Err(Error::Parse {
                path: path.into(),
                line,
                message: format!("expected 4 fields, found {}", record.len()),
            });
        }
        rows.push((
            parse_field(path, line, &record[0], "minute")?,
            parse_field(path, line, &record[1], "bus")?,
            parse_field(path, line, &record[2], "p")?,
            parse_field(path, line, &record[3], "q")?,
        ));
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset(format!("{} holds no rows", path.display())));
    }

    let n = rows.iter().map(|r| r.1).max().unwrap();
    if rows.iter().any(|r| r.1 == 0) {
        return Err(Error::InvalidInput("bus ids in profiles are 1-based".into()));
    }
    if rows.len() % n != 0 {
        return Err(Error::InvalidInput(format!(
            "{} rows do not tile {} buses",
            rows.len(),
            n
        )));
    }
    let t_len = rows.len() / n;
    let mut minutes = Vec::with_capacity(t_len);
    let mut p = DMatrix::zeros(t_len, n);
    let mut q = DMatrix::zeros(t_len, n);
    for (i, row) in rows.iter().enumerate() {
        let (t, b) = (i / n, row.1 - 1);
        if i % n == 0 {
            minutes.push(row.0);
        } else if row.0 != minutes[t] {
            return Err(Error::InvalidInput(format!(
                "row {i}: minute {} breaks the minute-major layout",
                row.0
            )));
        }
        if b != i % n {
            return Err(Error::InvalidInput(format!(
                "row {i}: bus {} out of order, expected {}",
                row.1,
                i % n + 1
            )));
        }
        p[(t, b)] = row.2;
        q[(t, b)] = row.3;
    }
    TimeSeriesProfiles::new(minutes, p, q)
}

/// Simulation trace as CSV. Columns: minute, iteration, one set-point
/// column per DER bus, min/max interior voltage, loss. Steps that recorded
/// every iteration emit one row per iteration (numbered from 0 at the
/// step's initial state); others emit the final state only.
pub fn save_trace(path: impl AsRef<Path>, trace: &SimTrace) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["minute".to_string(), "iteration".to_string()];
    header.extend(trace.der_buses.iter().map(|b| format!("q_bus{b}")));
    header.extend(["min_v".to_string(), "max_v".to_string(), "loss".to_string()]);
    w.write_record(&header).map_err(|e| csv_error(path, e))?;

    let mut row = |minute: f64, iteration: usize, rec: &crate::sim::IterRecord| {
        let mut fields = vec![format!("{minute}"), iteration.to_string()];
        fields.extend(rec.q_c.iter().map(|q| format!("{q}")));
        fields.push(format!("{}", rec.v.min()));
        fields.push(format!("{}", rec.v.max()));
        fields.push(format!("{}", rec.loss));
        w.write_record(&fields).map_err(|e| csv_error(path, e))
    };
    for step in &trace.steps {
        if step.iterations.is_empty() {
            row(step.minute, step.iterations_run, &step.last)?;
        } else {
            for (k, rec) in step.iterations.iter().enumerate() {
                row(step.minute, k, rec)?;
            }
        }
    }
    // Closure holds the writer mutably; reborrow to flush.
    drop(row);
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    raw: &str,
    name: &str,
) -> Result<T> {
    raw.trim().parse().map_err(|_| Error::Parse {
        path: path.into(),
        line,
        message: format!("bad {name} value {raw:?}"),
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Parse {
            path: path.into(),
            line: match &other {
                csv::ErrorKind::Utf8 { pos, .. } | csv::ErrorKind::UnequalLengths { pos, .. } => {
                    pos.as_ref().map(|p| p.line() as usize).unwrap_or(0)
                }
                _ => 0,
            },
            message: format!("{other:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::profiles::synthetic_day;
    use nalgebra::DVector;

    #[test]
    fn network_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let net = fixtures::six_bus();
        save_network(&path, &net).unwrap();
        let back = load_network(&path).unwrap();
        assert_eq!(
            serde_json::to_string(&net).unwrap(),
            serde_json::to_string(&back).unwrap()
        );

        let missing = load_network(dir.path().join("absent.json")).unwrap_err();
        assert!(matches!(missing, Error::Io { .. }), "{missing}");

        let garbled = dir.path().join("bad.json");
        std::fs::write(&garbled, "{\n  \"buses\": [\n").unwrap();
        let err = load_network(&garbled).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert!(line >= 2, "line {line}"),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn invalid_network_content_is_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let mut net = fixtures::six_bus();
        net.lines[0].r = -1.0;
        write_json(&path, &net).unwrap();
        assert!(load_network(&path).is_err());
    }

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        let outcome = SweepOutcome {
            datasets: vec![
                DerDataset { bus: 2, pairs: vec![(0.987654321012345, -0.1), (1.0 / 3.0, 0.25)] },
                DerDataset { bus: 5, pairs: vec![(0.99, 0.17), (1.01, -2.0 / 7.0)] },
            ],
            included: vec![0, 3],
            excluded: vec![],
        };
        save_datasets(&path, &outcome).unwrap();
        let back = load_datasets(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].bus, 2);
        assert_eq!(back[1].bus, 5);
        for (orig, loaded) in outcome.datasets.iter().zip(&back) {
            for (a, b) in orig.pairs.iter().zip(&loaded.pairs) {
                assert_eq!(a.0.to_bits(), b.0.to_bits());
                assert_eq!(a.1.to_bits(), b.1.to_bits());
            }
        }
    }

    #[test]
    fn single_der_files_read_back_with_the_same_loader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs_bus5.csv");
        let ds = DerDataset { bus: 5, pairs: vec![(0.99, 0.17), (1.01, -2.0 / 7.0)] };
        save_dataset(&path, &ds, &[0, 3]).unwrap();
        let back = load_datasets(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].bus, 5);
        assert_eq!(back[0].pairs, ds.pairs);
        assert!(save_dataset(dir.path().join("bad.csv"), &ds, &[0]).is_err());
    }

    #[test]
    fn profiles_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("day.csv");
        let net = fixtures::six_bus();
        let prof = synthetic_day(&net, &[0.05, 0.08, 0.06, 0.07, 0.02, 0.04], 3)
            .unwrap()
            .window(1000.0, 1010.0)
            .unwrap();
        save_profiles(&path, &prof).unwrap();
        let back = load_profiles(&path).unwrap();
        assert_eq!(back.minutes, prof.minutes);
        assert_eq!(back.p, prof.p);
        assert_eq!(back.q, prof.q);
    }

    #[test]
    fn malformed_profile_rows_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("day.csv");
        std::fs::write(&path, "minute,bus,p,q\n0,1,-0.1,abc\n").unwrap();
        let err = load_profiles(&path).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains('q'));
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn trace_rows_cover_recorded_iterations() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let rec = |q: f64| crate::sim::IterRecord {
            q_c: DVector::from_vec(vec![q, -q]),
            v: DVector::from_vec(vec![0.98, 1.01, 0.99]),
            loss: 0.001,
        };
        let trace = SimTrace {
            mode: crate::control::ControlMode::Incremental,
            epsilon: 0.2,
            feedback: crate::sim::FeedbackModel::Linear,
            v_min: DVector::from_element(3, 0.95),
            v_max: DVector::from_element(3, 1.05),
            der_buses: vec![2, 5],
            steps: vec![
                crate::sim::StepRecord {
                    minute: 0.0,
                    iterations: vec![rec(0.0), rec(0.05), rec(0.08)],
                    last: rec(0.08),
                    iterations_run: 2,
                    converged_at: None,
                    violation_samples: 0,
                    min_v_seen: 0.98,
                },
                crate::sim::StepRecord {
                    minute: 1.0,
                    iterations: vec![],
                    last: rec(0.09),
                    iterations_run: 4,
                    converged_at: Some(4),
                    violation_samples: 0,
                    min_v_seen: 0.98,
                },
            ],
        };
        save_trace(&path, &trace).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 3 + 1);
        assert_eq!(lines[0], "minute,iteration,q_bus2,q_bus5,min_v,max_v,loss");
        assert!(lines[4].starts_with("1,4,"));
    }

    #[test]
    fn metrics_and_stability_reports_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let metrics = SimMetrics {
            minutes: vec![0.0, 1.0],
            min_v: vec![0.97, 0.96],
            max_v: vec![1.01, 1.02],
            max_deviation: vec![0.03, 0.04],
            loss: vec![0.001, 0.002],
            converged_at: vec![Some(10), None],
            violation_steps: 1,
            violation_samples: 3,
        };
        let mpath = dir.path().join("metrics.json");
        save_metrics(&mpath, &metrics).unwrap();
        let back = load_metrics(&mpath).unwrap();
        assert_eq!(back.min_v, metrics.min_v);
        assert_eq!(back.converged_at, metrics.converged_at);
    }
}
