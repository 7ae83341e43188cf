//! CSV output and comparison of two result files.
//!
//! Columns: `scenario, axis, value, subscribers, bucket_multiplier, seed,
//! subscriber`, then for each policy label `L` the metric columns
//! `L_<metric>` in the order of [`METRICS`]. `subscriber` is the subscriber
//! index or `all` for the aggregate row. Missing values are empty cells.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use anyhow::{bail, Context, Result};
use ctbf_core::Summary;

use crate::sweep::SweepResult;

pub const KEY_COLUMNS: [&str; 7] = [
    "scenario",
    "axis",
    "value",
    "subscribers",
    "bucket_multiplier",
    "seed",
    "subscriber",
];

type Metric = fn(&Summary) -> Option<f64>;

pub const METRICS: [(&str, Metric); 13] = [
    ("http_delay_mean_s", |s| s.http_delay.mean),
    ("http_delay_std_s", |s| s.http_delay.std_dev),
    ("http_pages", |s| Some(s.http_delay.count as f64)),
    ("ftp_throughput_mean_bps", |s| s.ftp_throughput.mean),
    ("ftp_throughput_std_bps", |s| s.ftp_throughput.std_dev),
    ("ftp_sessions", |s| Some(s.ftp_throughput.count as f64)),
    ("frames_total", |s| Some(s.frames_total as f64)),
    ("frames_on_time", |s| Some(s.frames_on_time as f64)),
    ("decodable_frame_rate", |s| s.decodable_frame_rate()),
    ("tokens_generated_bytes", |s| Some(s.tokens.generated)),
    ("tokens_discarded_bytes", |s| Some(s.tokens.discarded)),
    ("sharing_efficiency", |s| Some(s.sharing_efficiency())),
    ("delivered_bytes", |s| Some(s.delivered_bytes as f64)),
];

pub fn header(labels: &[String]) -> Vec<String> {
    let mut h: Vec<String> = KEY_COLUMNS.iter().map(|c| c.to_string()).collect();
    for label in labels {
        h.extend(METRICS.iter().map(|(m, _)| format!("{label}_{m}")));
    }
    h
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_csv<W: Write>(result: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(&result.labels))?;
    for p in &result.points {
        for s in &p.seeds {
            let n = p.point.subscribers as usize;
            for sub in (0..n).map(Some).chain([None]) {
                let mut row = vec![
                    result.name.clone(),
                    result.axis.to_string(),
                    p.point.value.to_string(),
                    p.point.subscribers.to_string(),
                    p.point.bucket_multiplier.to_string(),
                    s.seed.to_string(),
                    sub.map_or_else(|| "all".to_string(), |i| i.to_string()),
                ];
                for r in &s.per_policy {
                    let summary = sub.map_or(&r.aggregate, |i| &r.per_subscriber[i]);
                    row.extend(METRICS.iter().map(|(_, f)| cell(f(summary))));
                }
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ratio {
    pub value: String,
    pub metric: String,
    pub baseline: f64,
    pub candidate: f64,
    /// candidate / baseline; `None` when the baseline is zero.
    pub ratio: Option<f64>,
}

struct Table {
    metrics: Vec<String>,
    // (value, seed) -> metric -> number, aggregate rows only
    rows: BTreeMap<(String, String), BTreeMap<String, f64>>,
    values: Vec<String>,
}

fn read_table<R: Read>(input: R, name: &str) -> Result<Table> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().with_context(|| format!("{name}: no header"))?.clone();
    for key in KEY_COLUMNS {
        if !headers.iter().any(|h| h == key) {
            bail!("{name}: missing column `{key}`");
        }
    }
    let col = |c: &str| headers.iter().position(|h| h == c).unwrap();
    let (value_col, seed_col, sub_col) = (col("value"), col("seed"), col("subscriber"));
    let metrics: Vec<String> = headers
        .iter()
        .filter(|h| !KEY_COLUMNS.contains(h))
        .map(str::to_string)
        .collect();
    let mut rows = BTreeMap::new();
    let mut values = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.with_context(|| format!("{name}: row {}", i + 2))?;
        if &record[sub_col] != "all" {
            continue;
        }
        let value = record[value_col].to_string();
        if !values.contains(&value) {
            values.push(value.clone());
        }
        let mut m = BTreeMap::new();
        for (h, field) in headers.iter().zip(record.iter()) {
            if KEY_COLUMNS.contains(&h) || field.is_empty() {
                continue;
            }
            let x: f64 = field
                .parse()
                .with_context(|| format!("{name}: row {}, column `{h}`", i + 2))?;
            m.insert(h.to_string(), x);
        }
        rows.insert((value, record[seed_col].to_string()), m);
    }
    Ok(Table { metrics, rows, values })
}

/// Per sweep value and metric column common to both files, the ratio of
/// the candidate's to the baseline's mean over the seeds present in both.
pub fn compare<A: Read, B: Read>(baseline: A, candidate: B) -> Result<Vec<Ratio>> {
    let a = read_table(baseline, "baseline")?;
    let b = read_table(candidate, "candidate")?;
    let mut out = Vec::new();
    for value in &a.values {
        for metric in a.metrics.iter().filter(|m| b.metrics.contains(m)) {
            let (mut sa, mut sb, mut n) = (0.0, 0.0, 0usize);
            for ((v, seed), ma) in &a.rows {
                if v != value {
                    continue;
                }
                let mb = b.rows.get(&(v.clone(), seed.clone()));
                if let (Some(x), Some(y)) = (ma.get(metric), mb.and_then(|m| m.get(metric))) {
                    sa += x;
                    sb += y;
                    n += 1;
                }
            }
            if n == 0 {
                continue;
            }
            let (baseline, candidate) = (sa / n as f64, sb / n as f64);
            out.push(Ratio {
                value: value.clone(),
                metric: metric.clone(),
                baseline,
                candidate,
                ratio: (baseline != 0.0).then(|| candidate / baseline),
            });
        }
    }
    Ok(out)
}

pub fn write_ratios<W: Write>(ratios: &[Ratio], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["value", "metric", "baseline", "candidate", "ratio"])?;
    for r in ratios {
        w.write_record([
            r.value.clone(),
            r.metric.clone(),
            r.baseline.to_string(),
            r.candidate.to_string(),
            cell(r.ratio),
        ])?;
    }
    w.flush()?;
    Ok(())
}
