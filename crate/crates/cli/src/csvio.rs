//! CSV files written and read by the runner.
//!
//! Every file starts with one comment line of `key=value` metadata, e.g.
//! `# pqda format_version=1 config_hash=9f2c... train_end=16000`, followed by
//! an ordinary header row.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use prequential::diagnostics::MetricsReport;
use prequential::lorenz96::TimeSeries;

use crate::container::{write_atomic, FORMAT_VERSION};
use crate::error::{CliError, Result};

/// Metadata carried in a file's leading comment line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Meta(pub BTreeMap<String, String>);

impl Meta {
    pub fn new(config_hash: &str) -> Self {
        let mut m = BTreeMap::new();
        m.insert("format_version".to_string(), FORMAT_VERSION.to_string());
        m.insert("config_hash".to_string(), config_hash.to_string());
        Meta(m)
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn line(&self) -> String {
        let mut s = String::from("# pqda");
        for (k, v) in &self.0 {
            write!(s, " {k}={v}").expect("string write");
        }
        s
    }

    fn parse(line: &str) -> Option<Self> {
        let rest = line.strip_prefix("# pqda")?;
        let map = rest
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Some(Meta(map))
    }

    fn require<T: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<T> {
        self.get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::format(path, format!("metadata field {key} missing or malformed")))
    }
}

/// A parsed CSV: metadata, header and numeric rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub meta: Meta,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str, path: &Path) -> Result<Vec<f64>> {
        let i = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::format(path, format!("missing column {name}")))?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }
}

fn render(path: &Path, meta: &Meta, header: &[&str], rows: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut buf = meta.line().into_bytes();
    buf.push(b'\n');
    let mut w = csv::Writer::from_writer(buf);
    let werr = |e: csv::Error| CliError::format(path, format!("csv encoding: {e}"));
    w.write_record(header).map_err(werr)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string())).map_err(werr)?;
    }
    w.into_inner().map_err(|e| CliError::format(path, format!("csv encoding: {e}")))
}

pub fn write_table(path: &Path, meta: &Meta, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    write_atomic(path, &render(path, meta, header, rows)?)
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    let meta = Meta::parse(first.trim_end()).ok_or_else(|| CliError::format(path, "missing '# pqda' metadata line"))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(rest.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| CliError::format(path, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::format(path, e.to_string()))?;
        let row = rec
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CliError::format(path, format!("data row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    Ok(Table { meta, header, rows })
}

/// Writes `time,y1..yK` with the split point and sampling interval in the
/// metadata line.
pub fn write_series(path: &Path, series: &TimeSeries, config_hash: &str) -> Result<()> {
    let meta = Meta::new(config_hash)
        .with("delta_t", series.delta_t)
        .with("start_time", series.start_time)
        .with("train_end", series.train_end);
    let names: Vec<String> = std::iter::once("time".to_string())
        .chain((1..=series.dim()).map(|i| format!("y{i}")))
        .collect();
    let header: Vec<&str> = names.iter().map(String::as_str).collect();
    let rows: Vec<Vec<f64>> = (0..series.len())
        .map(|t| std::iter::once(series.time(t)).chain(series.obs(t).iter().copied()).collect())
        .collect();
    write_table(path, &meta, &header, &rows)
}

pub fn read_series(path: &Path) -> Result<(TimeSeries, Meta)> {
    let table = read_table(path)?;
    let k = table.header.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("time".to_string())
        .chain((1..=k).map(|i| format!("y{i}")))
        .collect();
    if k == 0 || table.header != expected {
        return Err(CliError::format(path, format!("header must be time,y1..yK, found {}", table.header.join(","))));
    }
    let delta_t: f64 = table.meta.require("delta_t", path)?;
    let train_end: usize = table.meta.require("train_end", path)?;
    let start_time: f64 = table.meta.require("start_time", path)?;
    let obs: Vec<f64> = table.rows.iter().flat_map(|r| r[1..].iter().copied()).collect();
    let mut series =
        TimeSeries::new(obs, k, delta_t, train_end).map_err(|e| CliError::format(path, e.to_string()))?;
    series.start_time = start_time;
    Ok((series, table.meta))
}

pub const METRICS_HEADER: [&str; 4] = ["episode_index", "calibration_error", "nrmse", "r2"];

pub fn metrics_row(r: &MetricsReport) -> Vec<f64> {
    vec![r.episode_index as f64, r.calibration_error, r.nrmse, r.r2]
}

pub fn write_metrics(path: &Path, meta: &Meta, rows: &[Vec<f64>]) -> Result<()> {
    write_table(path, meta, &METRICS_HEADER, rows)
}
