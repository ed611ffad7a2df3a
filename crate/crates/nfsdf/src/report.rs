//! Line-delimited optimisation reports and metric tables.

use std::path::Path;

use nfsdf_core::optimizer::IterationRecord;
use serde::{Deserialize, Serialize};

use crate::{io, Error, Result};

/// One optimiser iteration. Non-finite losses (failed trial steps) are
/// written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub iteration: usize,
    pub surface: Option<f64>,
    pub mask: Option<f64>,
    pub depth: Option<f64>,
    pub prior: Option<f64>,
    pub total: Option<f64>,
    pub step_norm: f64,
    pub damping: f64,
    pub accepted: bool,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl From<&IterationRecord> for ReportLine {
    fn from(r: &IterationRecord) -> Self {
        let l = &r.losses;
        Self {
            iteration: r.iteration,
            surface: finite(l.surface),
            mask: finite(l.mask),
            depth: finite(l.depth),
            prior: finite(l.prior),
            total: finite(l.total),
            step_norm: r.step_norm,
            damping: r.damping,
            accepted: r.accepted,
        }
    }
}

pub fn encode_report(lines: &[ReportLine]) -> String {
    let mut s = String::new();
    for l in lines {
        s.push_str(&serde_json::to_string(l).expect("report lines serialize"));
        s.push('\n');
    }
    s
}

pub fn decode_report(text: &str) -> std::result::Result<Vec<ReportLine>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

pub fn write_report(path: &Path, history: &[IterationRecord]) -> Result<()> {
    let lines: Vec<ReportLine> = history.iter().map(ReportLine::from).collect();
    io::write(path, encode_report(&lines).as_bytes())
}

pub fn read_report(path: &Path) -> Result<Vec<ReportLine>> {
    decode_report(&io::read_string(path)?).map_err(|m| Error::format(path, m))
}

/// Accepted steps never raise the total loss.
pub fn accepted_monotone(lines: &[ReportLine]) -> bool {
    let acc: Vec<f64> = lines
        .iter()
        .filter(|l| l.accepted)
        .map(|l| l.total.unwrap_or(f64::INFINITY))
        .collect();
    acc.windows(2).all(|w| w[1] <= w[0])
}

/// A row of a metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub trial: String,
    pub method: String,
    pub median: f64,
    pub mean: f64,
    pub std: f64,
}

pub const CSV_COLUMNS: [&str; 5] = ["trial", "method", "median", "mean", "std"];

/// The header is written even for an empty table.
pub fn encode_csv(rows: &[MetricRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)
        .map_err(|e| Error::Data(format!("csv: {e}")))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Data(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Data(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn decode_csv(text: &str) -> std::result::Result<Vec<MetricRow>, String> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| e.to_string())?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_COLUMNS {
        return Err(format!("unexpected columns {headers:?}"));
    }
    r.deserialize().map(|row| row.map_err(|e| e.to_string())).collect()
}

pub fn write_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    io::write(path, encode_csv(rows)?.as_bytes())
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricRow>> {
    decode_csv(&io::read_string(path)?).map_err(|m| Error::format(path, m))
}

/// Median, mean and population standard deviation of one method's values.
pub fn aggregate(trial: &str, method: &str, values: &[f64]) -> Option<MetricRow> {
    let (median, mean, std) = nfsdf_core::metrics::summary_stats(values)?;
    Some(MetricRow {
        trial: trial.into(),
        method: method.into(),
        median,
        mean,
        std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nfsdf_core::optimizer::TermLosses;

    #[test]
    fn three_row_fixture() {
        // median 2, mean 7/3, population std sqrt(((1-7/3)^2+(2-7/3)^2+(4-7/3)^2)/3)
        let row = aggregate("complete", "gn-flow", &[4.0, 1.0, 2.0]).unwrap();
        assert_eq!(row.median, 2.0);
        assert!((row.mean - 7.0 / 3.0).abs() < 1e-15);
        assert!((row.std - (14.0f64 / 9.0).sqrt()).abs() < 1e-15);
        assert!(aggregate("t", "m", &[]).is_none());
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            MetricRow {
                trial: "complete".into(),
                method: "gn-flow".into(),
                median: 1.25,
                mean: 0.1 + 0.2,
                std: 1e-17,
            },
            MetricRow {
                trial: "mask-only".into(),
                method: "gn-bypass".into(),
                median: 0.0,
                mean: 1.0,
                std: 123456.789,
            },
        ];
        let text = encode_csv(&rows).unwrap();
        assert!(text.starts_with("trial,method,median,mean,std\n"));
        let back = decode_csv(&text).unwrap();
        assert_eq!(back, rows);
        assert_eq!(encode_csv(&back).unwrap(), text);
        assert!(decode_csv("a,b\n1,2\n").is_err());
        let empty = encode_csv(&[]).unwrap();
        assert_eq!(empty, "trial,method,median,mean,std\n");
        assert!(decode_csv(&empty).unwrap().is_empty());
    }

    #[test]
    fn report_round_trip_and_monotonicity() {
        let rec = |it, total, accepted| IterationRecord {
            iteration: it,
            losses: TermLosses {
                total,
                ..Default::default()
            },
            step_norm: 0.5,
            damping: 1e-4,
            accepted,
        };
        let hist = [
            rec(0, 3.0, true),
            rec(1, f64::INFINITY, false),
            rec(1, 2.0, true),
            rec(2, 2.0, true),
        ];
        let lines: Vec<ReportLine> = hist.iter().map(ReportLine::from).collect();
        assert_eq!(lines[1].total, None);
        let text = encode_report(&lines);
        assert_eq!(text.lines().count(), 4);
        let back = decode_report(&text).unwrap();
        assert_eq!(back, lines);
        assert_eq!(encode_report(&back), text);
        assert!(accepted_monotone(&back));
        let mut bad = back.clone();
        bad[3].total = Some(2.5);
        assert!(!accepted_monotone(&bad));
    }
}
