//! Plot-ready summaries of scored cohorts.
//!
//! * score distributions per cohort, as KDEs on a shared grid;
//! * per-hour cohort means with normal-approximation 95% intervals;
//! * single-patient per-feature trajectories;
//! * rank separation (AUC) between control and treatment patient means.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::density::{kde_on_grid, silverman_bandwidth, Grid, SampleVector, GRID_PADDING_BANDWIDTHS};
use crate::error::{Error, Result};
use crate::io::{ScoreRow, ScoreTable};
use crate::observations::CohortLabel;

pub const COMPREHENSIVE: &str = "comprehensive";
const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityPoint {
    pub cohort: CohortLabel,
    pub series: String,
    pub x: f64,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HourlySummary {
    pub cohort: CohortLabel,
    pub series: String,
    pub hour: usize,
    pub n: usize,
    pub mean: f64,
    /// `None` when fewer than two patients contribute.
    pub ci: Option<(f64, f64)>,
}

fn series_names(table: &ScoreTable) -> Vec<String> {
    std::iter::once(COMPREHENSIVE.to_string())
        .chain(table.features.iter().cloned())
        .collect()
}

fn series_value(row: &ScoreRow, series: usize) -> Option<f64> {
    if series == 0 {
        Some(row.comprehensive)
    } else {
        row.per_feature.get(series - 1).copied().flatten()
    }
}

fn group_by_cohort<'a>(
    table: &'a ScoreTable,
    labels: &BTreeMap<String, CohortLabel>,
) -> BTreeMap<CohortLabel, Vec<&'a ScoreRow>> {
    let mut groups: BTreeMap<CohortLabel, Vec<&ScoreRow>> = BTreeMap::new();
    for row in &table.rows {
        let label = labels.get(&row.patient_id).copied().unwrap_or_default();
        groups.entry(label).or_default().push(row);
    }
    groups
}

/// KDE of every score series per cohort. Cohorts share one grid per series.
pub fn score_densities(
    table: &ScoreTable,
    labels: &BTreeMap<String, CohortLabel>,
    grid_points: usize,
) -> Result<Vec<DensityPoint>> {
    let groups = group_by_cohort(table, labels);
    let mut out = Vec::new();
    for (s, series) in series_names(table).iter().enumerate() {
        let samples: Vec<(CohortLabel, SampleVector)> = groups
            .iter()
            .filter_map(|(label, rows)| {
                let values: Vec<f64> = rows.iter().filter_map(|r| series_value(r, s)).collect();
                SampleVector::new(values).ok().map(|v| (*label, v))
            })
            .collect();
        if samples.is_empty() {
            continue;
        }
        let bandwidths: Vec<_> = samples.iter().map(|(_, v)| silverman_bandwidth(v)).collect();
        let lo = samples
            .iter()
            .zip(&bandwidths)
            .map(|((_, v), h)| v.min() - GRID_PADDING_BANDWIDTHS * h.value())
            .fold(f64::INFINITY, f64::min);
        let hi = samples
            .iter()
            .zip(&bandwidths)
            .map(|((_, v), h)| v.max() + GRID_PADDING_BANDWIDTHS * h.value())
            .fold(f64::NEG_INFINITY, f64::max);
        let grid = Grid::new(lo, hi, grid_points)?;
        for ((label, values), h) in samples.iter().zip(&bandwidths) {
            let kde = kde_on_grid(values, *h, &grid)?;
            out.extend(grid.points().zip(kde.density.values()).map(|(x, d)| DensityPoint {
                cohort: *label,
                series: series.clone(),
                x,
                density: *d,
            }));
        }
    }
    Ok(out)
}

/// Per-hour cohort mean of every series with `mean ± 1.96 s / sqrt(n)`.
pub fn hourly_summary(table: &ScoreTable, labels: &BTreeMap<String, CohortLabel>) -> Vec<HourlySummary> {
    let mut out = Vec::new();
    for (label, rows) in group_by_cohort(table, labels) {
        for (s, series) in series_names(table).iter().enumerate() {
            let mut by_hour: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for r in &rows {
                if let Some(v) = series_value(r, s) {
                    by_hour.entry(r.hour).or_default().push(v);
                }
            }
            for (hour, values) in by_hour {
                let n = values.len();
                let mean = values.iter().sum::<f64>() / n as f64;
                let ci = (n >= 2).then(|| {
                    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                    let half = Z_95 * (var / n as f64).sqrt();
                    (mean - half, mean + half)
                });
                out.push(HourlySummary {
                    cohort: label,
                    series: series.clone(),
                    hour,
                    n,
                    mean,
                    ci,
                });
            }
        }
    }
    out
}

/// Mean comprehensive score per patient over hours `>= from_hour`.
pub fn patient_means(table: &ScoreTable, from_hour: usize) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in table.rows.iter().filter(|r| r.hour >= from_hour) {
        let e = acc.entry(r.patient_id.clone()).or_default();
        e.0 += r.comprehensive;
        e.1 += 1;
    }
    acc.into_iter().map(|(p, (sum, n))| (p, sum / n as f64)).collect()
}

/// Probability that a random positive outranks a random negative; ties count half.
pub fn auc(positives: &[f64], negatives: &[f64]) -> Option<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for p in positives {
        for n in negatives {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (positives.len() * negatives.len()) as f64)
}

/// Writes the report CSVs into `dir`; returns the written file names.
pub fn write_report(
    table: &ScoreTable,
    labels: &BTreeMap<String, CohortLabel>,
    trajectory_patients: &[String],
    dir: &Path,
) -> Result<Vec<String>> {
    if table.rows.is_empty() {
        return Err(Error::InvalidInput("score table is empty".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut open = |name: &str| -> Result<BufWriter<File>> {
        written.push(name.to_string());
        Ok(BufWriter::new(File::create(dir.join(name))?))
    };

    let mut w = open("score_density.csv")?;
    writeln!(w, "cohort,series,x,density")?;
    for p in score_densities(table, labels, crate::density::DEFAULT_GRID_POINTS)? {
        writeln!(w, "{},{},{},{}", p.cohort, p.series, p.x, p.density)?;
    }
    w.flush()?;

    let mut w = open("hourly_summary.csv")?;
    writeln!(w, "cohort,series,hour,n,mean,ci_low,ci_high")?;
    for s in hourly_summary(table, labels) {
        let (lo, hi) = s
            .ci
            .map(|(lo, hi)| (lo.to_string(), hi.to_string()))
            .unwrap_or_default();
        writeln!(w, "{},{},{},{},{},{},{}", s.cohort, s.series, s.hour, s.n, s.mean, lo, hi)?;
    }
    w.flush()?;

    let mut w = open("trajectories.csv")?;
    writeln!(w, "patient_id,hour,comprehensive,{}", table.features.join(","))?;
    let mut rows: Vec<&ScoreRow> = table
        .rows
        .iter()
        .filter(|r| trajectory_patients.is_empty() || trajectory_patients.contains(&r.patient_id))
        .collect();
    rows.sort_by(|a, b| a.patient_id.cmp(&b.patient_id).then(a.hour.cmp(&b.hour)));
    for r in rows {
        let cells: Vec<String> = r
            .per_feature
            .iter()
            .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
            .collect();
        writeln!(w, "{},{},{},{}", r.patient_id, r.hour, r.comprehensive, cells.join(","))?;
    }
    w.flush()?;

    let means = patient_means(table, 0);
    let cohort_means = |label: CohortLabel| -> Vec<f64> {
        means
            .iter()
            .filter(|(p, _)| labels.get(*p).copied().unwrap_or_default() == label)
            .map(|(_, m)| *m)
            .collect()
    };
    if let Some(a) = auc(&cohort_means(CohortLabel::Treatment), &cohort_means(CohortLabel::Control)) {
        let mut w = open("separation.csv")?;
        writeln!(w, "metric,value")?;
        writeln!(w, "auc_patient_mean_comprehensive,{a}")?;
        w.flush()?;
    }
    Ok(written)
}
