//! Report files: JSON lines per run, CSV summaries and two-column sweep data.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use czlab_core::verify::{Bound, CheckReport};

use crate::runner::RunOutcome;

/// One row of a summary: all reports of a run sharing a check and part.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub run: String,
    pub check_id: String,
    pub part: String,
    pub reports: usize,
    pub passed: usize,
    pub measured_min: f64,
    pub measured_max: f64,
    /// Largest `measured / bound`, empty for empirical checks.
    pub ratio_max: Option<f64>,
    pub bound: String,
}

pub fn summarize(outcome: &RunOutcome) -> Vec<SummaryRow> {
    let mut rows: BTreeMap<(String, String), SummaryRow> = BTreeMap::new();
    // Keep first-appearance order of checks rather than alphabetical.
    let mut order: Vec<(String, String)> = Vec::new();
    for r in &outcome.reports {
        let key = (r.check_id.clone(), r.part.clone());
        let row = rows.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            SummaryRow {
                run: outcome.run.clone(),
                check_id: r.check_id.clone(),
                part: r.part.clone(),
                reports: 0,
                passed: 0,
                measured_min: f64::INFINITY,
                measured_max: f64::NEG_INFINITY,
                ratio_max: None,
                bound: match r.bound {
                    Bound::Value(_) => "value".into(),
                    Bound::Empirical => "empirical".into(),
                },
            }
        });
        row.reports += 1;
        row.passed += r.pass as usize;
        row.measured_min = row.measured_min.min(r.measured);
        row.measured_max = row.measured_max.max(r.measured);
        if let Some(x) = r.ratio {
            row.ratio_max = Some(row.ratio_max.map_or(x, |m| m.max(x)));
        }
    }
    order.into_iter().map(|k| rows.remove(&k).expect("row exists")).collect()
}

fn write_summary(path: &Path, rows: &[SummaryRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// File name of the sweep data of a report.
pub fn sweep_file_name(r: &CheckReport) -> String {
    let mut name = sanitize(&r.check_id);
    if !r.part.is_empty() {
        name.push('_');
        name.push_str(&sanitize(&r.part));
    }
    format!("{name}_{}_{}.csv", sanitize(&r.instance.family), r.instance.seed)
}

fn write_sweep(path: &Path, r: &CheckReport) -> anyhow::Result<()> {
    let sweep = r.sweep.as_ref().expect("report has a sweep");
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([sweep.parameter.as_str(), "ratio"])?;
    for (x, y) in &sweep.samples {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<dir>/<run>/reports.jsonl`, `<dir>/<run>/summary.csv`,
/// `<dir>/<run>/sweeps/*.csv` and the combined `<dir>/summary.csv`.
pub fn write_outputs(dir: &Path, outcomes: &[RunOutcome]) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    let mut all = Vec::new();
    for o in outcomes {
        let run_dir = dir.join(sanitize(&o.run));
        fs::create_dir_all(&run_dir)?;
        let mut w = BufWriter::new(fs::File::create(run_dir.join("reports.jsonl"))?);
        for r in &o.reports {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        let rows = summarize(o);
        write_summary(&run_dir.join("summary.csv"), &rows)?;
        let sweeps: Vec<&CheckReport> = o.reports.iter().filter(|r| r.sweep.is_some()).collect();
        if !sweeps.is_empty() {
            fs::create_dir_all(run_dir.join("sweeps"))?;
            for r in sweeps {
                write_sweep(&run_dir.join("sweeps").join(sweep_file_name(r)), r)?;
            }
        }
        all.extend(rows);
    }
    write_summary(&dir.join("summary.csv"), &all)
}

pub fn read_reports(path: &Path) -> anyhow::Result<Vec<CheckReport>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use czlab_core::grid::DyadicDomain;
    use czlab_core::verify::{DecaySweep, Instance};

    fn outcome() -> RunOutcome {
        let inst = Instance::new("spike", &DyadicDomain::periodic(1, 6).unwrap(), 2, 3);
        let sweep = DecaySweep::fit("s", (1..=4).map(|s| (s as f64, 0.5f64.powi(s))).collect()).unwrap();
        RunOutcome {
            run: "demo".into(),
            reports: vec![
                CheckReport::bounded("diagonal_estimates", "bad_l1", &inst, 1.0, 2.0, 1e-9),
                CheckReport::bounded("diagonal_estimates", "bad_l1", &inst, 1.5, 2.0, 1e-9),
                CheckReport::slope("pseudo_localization", "", &inst, sweep, -0.4),
            ],
        }
    }

    #[test]
    fn summary_aggregates_by_check_and_part() {
        let rows = summarize(&outcome());
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].reports, rows[0].passed), (2, 2));
        assert_eq!(rows[0].ratio_max, Some(0.75));
        assert_eq!(rows[1].bound, "empirical");
    }

    #[test]
    fn files_are_written_and_reports_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let o = outcome();
        write_outputs(dir.path(), std::slice::from_ref(&o)).unwrap();
        let back = read_reports(&dir.path().join("demo/reports.jsonl")).unwrap();
        assert_eq!(back, o.reports);
        let sweep = fs::read_to_string(dir.path().join("demo/sweeps/pseudo_localization_spike_3.csv")).unwrap();
        assert_eq!(sweep.lines().next(), Some("s,ratio"));
        assert_eq!(sweep.lines().count(), 5);
        assert!(dir.path().join("summary.csv").exists());
    }
}
