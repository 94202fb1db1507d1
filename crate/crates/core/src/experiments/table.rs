//! CSV layout shared by all experiments.
//!
//! Columns are `config_hash, experiment, kind, replica, seed, count`, then
//! `param.<name>` and `metric.<name>` in name order. `kind` is `replica`,
//! `mean` or `stderr`; aggregate rows leave `replica` and `seed` empty and
//! carry the number of replicas in `count`. Floats use the shortest decimal
//! form that parses back to the same value.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Aggregate, Record, RunResult};
use crate::error::{Error, Result};

pub fn write_csv(result: &RunResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| wrap(path, e))?;
    let (pnames, mnames) = match result.records.first() {
        Some(r) => (
            r.params.keys().cloned().collect::<Vec<_>>(),
            r.metrics.keys().cloned().collect::<Vec<_>>(),
        ),
        None => (vec![], vec![]),
    };
    let mut header: Vec<String> = ["config_hash", "experiment", "kind", "replica", "seed", "count"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(pnames.iter().map(|n| format!("param.{n}")));
    header.extend(mnames.iter().map(|n| format!("metric.{n}")));
    w.write_record(&header)?;

    let fixed = |kind: &str, replica: String, seed: String, count: u64| {
        vec![
            result.config_hash.clone(),
            result.experiment.as_str().to_string(),
            kind.to_string(),
            replica,
            seed,
            count.to_string(),
        ]
    };
    let values = |p: &BTreeMap<String, f64>, m: &BTreeMap<String, f64>| {
        pnames
            .iter()
            .map(|n| p[n].to_string())
            .chain(mnames.iter().map(|n| m[n].to_string()))
            .collect::<Vec<_>>()
    };
    for r in &result.records {
        let mut row = fixed("replica", r.replica.to_string(), r.seed.to_string(), 1);
        row.extend(values(&r.params, &r.metrics));
        w.write_record(&row)?;
    }
    for a in &result.aggregates {
        for (kind, m) in [("mean", &a.mean), ("stderr", &a.stderr)] {
            let mut row = fixed(kind, String::new(), String::new(), a.replicas);
            row.extend(values(&a.params, m));
            w.write_record(&row)?;
        }
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(())
}

/// Replica records and aggregates stored in a CSV written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<(Vec<Record>, Vec<Aggregate>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| wrap(path, e))?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("{}: missing column {name}", path.display())))
    };
    let (kind, replica, seed, count) = (col("kind")?, col("replica")?, col("seed")?, col("count")?);
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Format(format!("{}: not a number: {s:?}", path.display())))
    };
    let int = |s: &str| -> Result<u64> {
        s.parse::<u64>()
            .map_err(|_| Error::Format(format!("{}: not an integer: {s:?}", path.display())))
    };

    let mut records = Vec::new();
    let mut aggregates: Vec<Aggregate> = Vec::new();
    for row in r.records() {
        let row = row?;
        let mut params = BTreeMap::new();
        let mut metrics = BTreeMap::new();
        for (h, v) in header.iter().zip(row.iter()) {
            if let Some(n) = h.strip_prefix("param.") {
                params.insert(n.to_string(), num(v)?);
            } else if let Some(n) = h.strip_prefix("metric.") {
                metrics.insert(n.to_string(), num(v)?);
            }
        }
        match &row[kind] {
            "replica" => records.push(Record {
                params,
                replica: int(&row[replica])?,
                seed: int(&row[seed])?,
                metrics,
            }),
            "mean" => aggregates.push(Aggregate {
                params,
                replicas: int(&row[count])?,
                mean: metrics,
                stderr: BTreeMap::new(),
            }),
            "stderr" => match aggregates.last_mut() {
                Some(a) if a.params == params && a.stderr.is_empty() => a.stderr = metrics,
                _ => {
                    return Err(Error::Format(format!(
                        "{}: stderr row without its mean row",
                        path.display()
                    )))
                }
            },
            other => return Err(Error::Format(format!("{}: unknown row kind {other:?}", path.display()))),
        }
    }
    Ok((records, aggregates))
}

fn wrap(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path.display().to_string(), io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}
