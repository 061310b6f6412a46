//! Error statistics, BHS grading, the AAMI criterion and Bland-Altman tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bp_model::Target;
use crate::error::{Error, Result};
use crate::stats::{mean, sample_sd};
use crate::trainer::PredictionRow;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub me: f64,
    pub mae: f64,
    pub sde: f64,
}

/// Mean, mean absolute and sample standard deviation of errors
/// (estimate − reference).
pub fn error_stats(errors: &[f64]) -> Result<ErrorStats> {
    if errors.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "error statistics need at least 2 values, got {}",
            errors.len()
        )));
    }
    let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    Ok(ErrorStats {
        me: mean(errors),
        mae: mean(&abs),
        sde: sample_sd(errors),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BhsGrade {
    A,
    B,
    C,
    D,
}

impl fmt::Display for BhsGrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Cumulative-percentage cutoffs at 5, 10 and 15 mmHg for grades A to C.
pub const BHS_CUTOFFS: [(BhsGrade, [f64; 3]); 3] = [
    (BhsGrade::A, [60.0, 85.0, 95.0]),
    (BhsGrade::B, [50.0, 75.0, 90.0]),
    (BhsGrade::C, [40.0, 65.0, 85.0]),
];

/// Grade for percentages within 5, 10 and 15 mmHg (cutoffs inclusive).
pub fn grade_from_percentages(pct: [f64; 3]) -> BhsGrade {
    BHS_CUTOFFS
        .iter()
        .find(|(_, cut)| pct.iter().zip(cut).all(|(p, c)| p >= c))
        .map_or(BhsGrade::D, |(g, _)| *g)
}

/// Percentages of |error| ≤ 5, 10 and 15 mmHg.
pub fn within_percentages(errors: &[f64]) -> Result<[f64; 3]> {
    if errors.is_empty() {
        return Err(Error::InsufficientData("no errors to grade".into()));
    }
    let n = errors.len() as f64;
    let pct = |t: f64| 100.0 * errors.iter().filter(|e| e.abs() <= t).count() as f64 / n;
    Ok([pct(5.0), pct(10.0), pct(15.0)])
}

pub fn bhs_grade(errors: &[f64]) -> Result<([f64; 3], BhsGrade)> {
    let pct = within_percentages(errors)?;
    Ok((pct, grade_from_percentages(pct)))
}

/// Passes iff |ME| ≤ 5 mmHg and SDE ≤ 8 mmHg.
pub fn aami_check(me: f64, sde: f64) -> bool {
    me.abs() <= 5.0 && sde <= 8.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    /// `(mean of pair, estimate − reference)` per pair.
    pub points: Vec<(f64, f64)>,
    pub bias: f64,
    pub lower_limit: f64,
    pub upper_limit: f64,
}

impl BlandAltman {
    /// CSV `mean_mmHg,diff_mmHg` followed by `#`-prefixed footer lines for
    /// the bias and limits of agreement.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "mean_mmHg,diff_mmHg")?;
        for (x, y) in &self.points {
            writeln!(w, "{x:?},{y:?}")?;
        }
        writeln!(w, "# bias,{:?}", self.bias)?;
        writeln!(w, "# lower_limit,{:?}", self.lower_limit)?;
        writeln!(w, "# upper_limit,{:?}", self.upper_limit)?;
        Ok(())
    }
}

/// Bland-Altman points with bias ± 1.96 SD limits (SD with n−1, zero for a
/// single pair).
pub fn bland_altman(estimates: &[f64], references: &[f64]) -> Result<BlandAltman> {
    if estimates.len() != references.len() {
        return Err(Error::Shape(format!(
            "{} estimates for {} references",
            estimates.len(),
            references.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::InsufficientData("no pairs".into()));
    }
    let points: Vec<(f64, f64)> = estimates
        .iter()
        .zip(references)
        .map(|(e, r)| ((e + r) / 2.0, e - r))
        .collect();
    let diffs: Vec<f64> = points.iter().map(|p| p.1).collect();
    let bias = mean(&diffs);
    let sd = if diffs.len() > 1 { sample_sd(&diffs) } else { 0.0 };
    Ok(BlandAltman {
        points,
        bias,
        lower_limit: bias - 1.96 * sd,
        upper_limit: bias + 1.96 * sd,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub target: Target,
    pub me: f64,
    pub mae: f64,
    pub sde: f64,
    pub pct_within_5: f64,
    pub pct_within_10: f64,
    pub pct_within_15: f64,
    pub bhs_grade: BhsGrade,
    pub aami_pass: bool,
    pub n: usize,
    pub runs_averaged: usize,
}

pub const REPORT_HEADER: &str =
    "target,me,mae,sde,pct_within_5,pct_within_10,pct_within_15,bhs_grade,aami_pass,n,runs_averaged";

pub fn write_reports_csv<W: Write>(mut w: W, reports: &[EvaluationReport]) -> Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for r in reports {
        writeln!(
            w,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{},{},{},{}",
            r.target,
            r.me,
            r.mae,
            r.sde,
            r.pct_within_5,
            r.pct_within_10,
            r.pct_within_15,
            r.bhs_grade,
            r.aami_pass,
            r.n,
            r.runs_averaged
        )?;
    }
    Ok(())
}

pub fn write_reports_json<W: Write>(mut w: W, reports: &[EvaluationReport]) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, reports).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

pub fn read_reports_json(s: &str) -> Result<Vec<EvaluationReport>> {
    serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))
}

fn rows_by_run(rows: &[PredictionRow], target: Target) -> BTreeMap<usize, Vec<&PredictionRow>> {
    let mut runs: BTreeMap<usize, Vec<&PredictionRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.target == target) {
        runs.entry(r.run).or_default().push(r);
    }
    runs
}

/// Per-target reports: statistics and within-threshold percentages are
/// computed for each run, then averaged over runs. The grade and AAMI
/// verdict follow from the averaged values.
pub fn aggregate_runs(rows: &[PredictionRow], n_runs: usize) -> Result<Vec<EvaluationReport>> {
    if n_runs == 0 {
        return Err(Error::InvalidConfig("n_runs must be positive".into()));
    }
    let targets: BTreeSet<Target> = rows.iter().map(|r| r.target).collect();
    if targets.is_empty() {
        return Err(Error::IncompleteTable("no prediction rows".into()));
    }
    let mut reports = Vec::new();
    for target in targets {
        let runs = rows_by_run(rows, target);
        let mut reference_set: Option<BTreeSet<(&str, &str)>> = None;
        let mut per_run = Vec::with_capacity(n_runs);
        for run in 0..n_runs {
            let Some(rs) = runs.get(&run) else {
                return Err(Error::IncompleteTable(format!("{target} run {run} missing")));
            };
            let ids: BTreeSet<(&str, &str)> = rs
                .iter()
                .map(|r| (r.subject_id.as_str(), r.record_id.as_str()))
                .collect();
            match &reference_set {
                None => reference_set = Some(ids),
                Some(first) if *first != ids => {
                    return Err(Error::IncompleteTable(format!(
                        "{target} run {run} covers different records"
                    )))
                }
                Some(_) => {}
            }
            let errors: Vec<f64> = rs.iter().map(|r| r.prediction_mmhg - r.reference_mmhg).collect();
            per_run.push((error_stats(&errors)?, within_percentages(&errors)?));
        }
        if let Some(extra) = runs.keys().find(|&&r| r >= n_runs) {
            return Err(Error::IncompleteTable(format!(
                "{target} has run {extra} beyond the expected {n_runs}"
            )));
        }
        let avg = |f: &dyn Fn(&(ErrorStats, [f64; 3])) -> f64| {
            per_run.iter().map(f).sum::<f64>() / n_runs as f64
        };
        let me = avg(&|r| r.0.me);
        let sde = avg(&|r| r.0.sde);
        let pct = [avg(&|r| r.1[0]), avg(&|r| r.1[1]), avg(&|r| r.1[2])];
        reports.push(EvaluationReport {
            target,
            me,
            mae: avg(&|r| r.0.mae),
            sde,
            pct_within_5: pct[0],
            pct_within_10: pct[1],
            pct_within_15: pct[2],
            bhs_grade: grade_from_percentages(pct),
            aami_pass: aami_check(me, sde),
            n: reference_set.map_or(0, |s| s.len()),
            runs_averaged: n_runs,
        });
    }
    Ok(reports)
}

/// Bland-Altman analysis for one target with one point per record, using
/// the record's prediction averaged over runs.
pub fn bland_altman_from_rows(rows: &[PredictionRow], target: Target) -> Result<BlandAltman> {
    let mut per_record: BTreeMap<(&str, &str), (Vec<f64>, f64)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.target == target) {
        per_record
            .entry((&r.subject_id, &r.record_id))
            .or_insert_with(|| (Vec::new(), r.reference_mmhg))
            .0
            .push(r.prediction_mmhg);
    }
    let (est, refs): (Vec<f64>, Vec<f64>) = per_record.values().map(|(p, y)| (mean(p), *y)).unzip();
    bland_altman(&est, &refs)
}

/// Plain-text summary of reports.
pub fn summary(reports: &[EvaluationReport]) -> String {
    let mut s = String::new();
    for r in reports {
        s.push_str(&format!(
            "{}: ME {:.2} mmHg, MAE {:.2} mmHg, SDE {:.2} mmHg (n = {}, runs = {})\n",
            r.target, r.me, r.mae, r.sde, r.n, r.runs_averaged
        ));
        s.push_str(&format!(
            "  within 5/10/15 mmHg: {:.2}% / {:.2}% / {:.2}%  BHS grade {}\n",
            r.pct_within_5, r.pct_within_10, r.pct_within_15, r.bhs_grade
        ));
        s.push_str(&format!(
            "  AAMI (|ME| <= 5, SDE <= 8): {}\n",
            if r.aami_pass { "pass" } else { "fail" }
        ));
    }
    s
}
