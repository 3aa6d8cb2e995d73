//! Report serialization: JSON and a Table-1 style text table.

use std::fmt::Write as _;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::metrics::{MetricsReport, VideoResult};
use crate::error::{Error, Result};

/// Rounds half to even at two decimals and formats; `None` renders as `n/a`.
pub fn fmt2(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{:.2}", round2(v)),
        None => "n/a".to_string(),
    }
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round_ties_even() / 100.0
}

#[derive(Serialize, Deserialize)]
struct ReportJson {
    acc: Option<f64>,
    pos: Option<f64>,
    neg: Option<f64>,
    shd_mean: Option<f64>,
    n_videos: usize,
    n_relations: usize,
    n_pos: usize,
    n_neg: usize,
    correct_pos: usize,
    correct_neg: usize,
    n_shd_videos: usize,
    per_video: Vec<VideoResult>,
}

impl Serialize for MetricsReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ReportJson {
            acc: self.acc().map(round2),
            pos: self.pos().map(round2),
            neg: self.neg().map(round2),
            shd_mean: self.shd_mean().map(round2),
            n_videos: self.n_videos(),
            n_relations: self.n_relations(),
            n_pos: self.n_pos,
            n_neg: self.n_neg,
            correct_pos: self.correct_pos,
            correct_neg: self.correct_neg,
            n_shd_videos: self.n_shd_videos(),
            per_video: self.per_video.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MetricsReport {
    /// Rebuilds the report from its counts; rounded percentages are informative only.
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = ReportJson::deserialize(d)?;
        Ok(MetricsReport {
            n_pos: j.n_pos,
            n_neg: j.n_neg,
            correct_pos: j.correct_pos,
            correct_neg: j.correct_neg,
            per_video: j.per_video,
        })
    }
}

/// Accuracy on a stress set where every relation is non-causal, with the
/// signed change against the main test accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressResult {
    pub accuracy: Option<f64>,
    pub main_accuracy: Option<f64>,
    pub change: Option<f64>,
}

impl StressResult {
    pub fn new(stress: &MetricsReport, main: &MetricsReport) -> Result<Self> {
        if stress.n_pos > 0 {
            return Err(Error::Schema(format!("stress corpus contains {} causal relations; it must contain none", stress.n_pos)));
        }
        let accuracy = stress.acc();
        let main_accuracy = main.acc();
        let change = accuracy.zip(main_accuracy).map(|(s, m)| s - m);
        Ok(Self { accuracy, main_accuracy, change })
    }
}

/// One labelled row of the results table.
#[derive(Debug, Clone)]
pub struct TableRow<'a> {
    pub name: &'a str,
    pub report: &'a MetricsReport,
    pub stress: Option<&'a StressResult>,
}

/// Renders rows in the column order SHD, Neg, Pos, Acc (and Change when any
/// row carries a stress result).
pub fn render_table(rows: &[TableRow<'_>]) -> Result<String> {
    if rows.iter().any(|r| r.report.per_video.is_empty()) {
        return Err(Error::Schema("no videos evaluated".into()));
    }
    let with_change = rows.iter().any(|r| r.stress.is_some());
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    write!(out, "{:<width$} {:>8} {:>8} {:>8} {:>8}", "Model", "SHD", "Neg", "Pos", "Acc").unwrap();
    if with_change {
        write!(out, " {:>8}", "Change").unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(
            out,
            "{:<width$} {:>8} {:>8} {:>8} {:>8}",
            r.name,
            fmt2(r.report.shd_mean()),
            fmt2(r.report.neg()),
            fmt2(r.report.pos()),
            fmt2(r.report.acc())
        )
        .unwrap();
        if with_change {
            let change = r.stress.and_then(|s| s.change);
            let text = match change {
                Some(c) if round2(c) > 0.0 => format!("+{}", fmt2(Some(c))),
                other => fmt2(other),
            };
            write!(out, " {:>8}", text).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn report_to_json(report: &MetricsReport) -> Result<String> {
    if report.per_video.is_empty() {
        return Err(Error::Schema("no videos evaluated".into()));
    }
    Ok(serde_json::to_string_pretty(report).expect("report serialization is infallible"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_even_rounding_at_two_decimals() {
        assert_eq!(fmt2(Some(71.284999)), "71.28");
        assert_eq!(fmt2(Some(42.39)), "42.39");
        assert_eq!(fmt2(Some(0.125)), "0.12");
        assert_eq!(fmt2(Some(0.375)), "0.38");
        assert_eq!(fmt2(None), "n/a");
    }

    #[test]
    fn empty_report_is_rejected() {
        assert_eq!(report_to_json(&MetricsReport::default()).unwrap_err().to_string(), "schema error: no videos evaluated");
    }
}
