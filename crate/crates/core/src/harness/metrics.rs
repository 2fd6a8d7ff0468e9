use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::BiasVarianceRecord;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    /// A training progress row.
    Train,
    /// A bias/variance measurement at a frozen point.
    Probe,
}

/// One line of `metrics.jsonl`. Every row carries every field; fields that do
/// not apply are `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub kind: RowKind,
    pub iteration: usize,
    pub seed: u64,
    pub estimator: String,
    /// Prediction loss on a fresh evaluation batch (prediction task).
    pub loss: Option<f64>,
    /// Mean return of episodes finished since the previous row (control task).
    pub mean_return: Option<f64>,
    pub episodes: Option<usize>,
    /// Constrained meta-parameter values by name.
    pub meta: BTreeMap<String, f64>,
    pub wall_clock: Option<f64>,
    pub record: Option<BiasVarianceRecord>,
}

const ROW_FIELDS: [&str; 10] =
    ["kind", "iteration", "seed", "estimator", "loss", "mean_return", "episodes", "meta", "wall_clock", "record"];
const RECORD_FIELDS: [&str; 9] = [
    "iteration",
    "estimator",
    "n",
    "per_component_std",
    "std_norm",
    "std_norm_rel_1step",
    "bias_norm",
    "oracle_n",
    "shots",
];

fn schema_err(msg: impl Into<String>) -> Error {
    Error::config(format!("metrics row: {}", msg.into()))
}

fn exact_fields(obj: &serde_json::Map<String, Value>, fields: &[&str], what: &str) -> Result<()> {
    for f in fields {
        if !obj.contains_key(*f) {
            return Err(schema_err(format!("{what} is missing `{f}`")));
        }
    }
    if let Some(extra) = obj.keys().find(|k| !fields.contains(&k.as_str())) {
        return Err(schema_err(format!("{what} has unexpected field `{extra}`")));
    }
    Ok(())
}

fn nullable(v: &Value, ok: impl Fn(&Value) -> bool) -> bool {
    v.is_null() || ok(v)
}

/// Checks one parsed JSON row against the documented schema.
pub fn validate_row(row: &Value) -> Result<()> {
    let obj = row.as_object().ok_or_else(|| schema_err("not an object"))?;
    exact_fields(obj, &ROW_FIELDS, "row")?;
    let kind = obj["kind"].as_str().ok_or_else(|| schema_err("`kind` must be a string"))?;
    if kind != "train" && kind != "probe" {
        return Err(schema_err(format!("unknown kind `{kind}`")));
    }
    let checks: [(&str, bool); 8] = [
        ("iteration", obj["iteration"].is_u64()),
        ("seed", obj["seed"].is_u64()),
        ("estimator", obj["estimator"].is_string()),
        ("loss", nullable(&obj["loss"], Value::is_number)),
        ("mean_return", nullable(&obj["mean_return"], Value::is_number)),
        ("episodes", nullable(&obj["episodes"], Value::is_u64)),
        ("meta", obj["meta"].as_object().is_some_and(|m| m.values().all(Value::is_number))),
        ("wall_clock", nullable(&obj["wall_clock"], Value::is_number)),
    ];
    if let Some((name, _)) = checks.iter().find(|(_, ok)| !ok) {
        return Err(schema_err(format!("field `{name}` has the wrong type")));
    }
    match (&obj["record"], kind) {
        (Value::Null, "train") => Ok(()),
        (Value::Object(rec), "probe") => {
            exact_fields(rec, &RECORD_FIELDS, "record")?;
            let std_ok = rec["per_component_std"]
                .as_array()
                .is_some_and(|a| a.iter().all(|x| x.as_f64().is_some_and(|v| v >= 0.0)));
            let ok = rec["n"].is_u64()
                && rec["shots"].is_u64()
                && rec["iteration"].is_u64()
                && rec["estimator"].is_string()
                && std_ok
                && rec["std_norm"].as_f64().is_some_and(|v| v >= 0.0)
                && nullable(&rec["std_norm_rel_1step"], Value::is_number)
                && nullable(&rec["bias_norm"], |v| v.as_f64().is_some_and(|b| b >= 0.0))
                && nullable(&rec["oracle_n"], Value::is_u64);
            if ok {
                Ok(())
            } else {
                Err(schema_err("record has a field of the wrong type or sign"))
            }
        }
        _ => Err(schema_err("train rows carry no record and probe rows need one")),
    }
}

pub fn write_jsonl(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut f, r).map_err(|e| Error::Io(e.into()))?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Reads and validates a metrics log.
pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsRow>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value =
            serde_json::from_str(&line).map_err(|e| Error::config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        validate_row(&v).map_err(|e| Error::config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        rows.push(serde_json::from_value(v).map_err(|e| Error::config(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(rows)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Writes `plots/returns.csv`, `plots/meta_params.csv` and
/// `plots/bias_variance.csv` under `dir`.
pub fn export_plot_data(rows: &[MetricsRow], dir: &Path) -> Result<()> {
    let plots = dir.join("plots");
    fs::create_dir_all(&plots)?;
    let train: Vec<&MetricsRow> = rows.iter().filter(|r| r.kind == RowKind::Train).collect();

    let mut w = csv::Writer::from_path(plots.join("returns.csv")).map_err(csv_err)?;
    w.write_record(["iteration", "seed", "estimator", "loss", "mean_return", "episodes"]).map_err(csv_err)?;
    for r in &train {
        w.write_record([
            r.iteration.to_string(),
            r.seed.to_string(),
            r.estimator.clone(),
            opt(r.loss),
            opt(r.mean_return),
            opt(r.episodes),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let names: Vec<String> = train.first().map(|r| r.meta.keys().cloned().collect()).unwrap_or_default();
    let mut w = csv::Writer::from_path(plots.join("meta_params.csv")).map_err(csv_err)?;
    let mut header = vec!["iteration".to_string(), "seed".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for r in &train {
        let mut rec = vec![r.iteration.to_string(), r.seed.to_string()];
        for n in &names {
            rec.push(opt(r.meta.get(n)));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;

    let records: Vec<&BiasVarianceRecord> = rows.iter().filter_map(|r| r.record.as_ref()).collect();
    let dim = records.first().map_or(0, |r| r.per_component_std.len());
    let mut w = csv::Writer::from_path(plots.join("bias_variance.csv")).map_err(csv_err)?;
    let mut header: Vec<String> =
        ["iteration", "estimator", "n", "oracle_n", "shots", "std_norm", "std_norm_rel_1step", "bias_norm"]
            .map(String::from)
            .to_vec();
    header.extend((0..dim).map(|k| format!("std_{k}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut rec = vec![
            r.iteration.to_string(),
            r.estimator.clone(),
            r.n.to_string(),
            opt(r.oracle_n),
            r.shots.to_string(),
            r.std_norm.to_string(),
            r.std_norm_rel_1step.to_string(),
            opt(r.bias_norm),
        ];
        rec.extend(r.per_component_std.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
