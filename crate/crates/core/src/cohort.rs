//! Hourly bucketing, missingness handling and reference construction.
//!
//! Preparation runs in three stages:
//!
//! 1. features missing from more than a fixed fraction of all hourly buckets
//!    are dropped dataset-wide ([`drop_sparse_features`]);
//! 2. each patient's sufficiently observed columns are filled with that
//!    patient's own mean ([`patient_mean_impute`]);
//! 3. features that stay sparse within either cohort are dropped, and the
//!    remaining gaps are filled with the patient's cohort mean
//!    ([`cohort_mean_impute`]).
//!
//! The dense output of stage 3 only feeds [`build_reference`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::{SystemTime, UNIX_EPOCH};

use log::{debug, info};
use rayon::prelude::*;

use crate::density::{build_grid, kde_on_grid, silverman_bandwidth, SampleVector};
use crate::error::{Error, Result};
use crate::observations::{CohortLabel, ObservationTable};
use crate::reference::{BuildMetadata, FeatureReference, PipelineConfig, ReferenceModel, SCHEMA_VERSION};
use crate::registry::FeatureRegistry;

/// One patient's observations laid out as `horizon` hourly rows by feature.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlyMatrix {
    patient_id: String,
    features: Vec<String>,
    cells: Vec<Vec<Option<f64>>>,
}

impl HourlyMatrix {
    pub fn new(patient_id: impl Into<String>, features: Vec<String>, cells: Vec<Vec<Option<f64>>>) -> Result<Self> {
        if cells.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "horizon must be at least 2 hours, got {}",
                cells.len()
            )));
        }
        if let Some(row) = cells.iter().find(|r| r.len() != features.len()) {
            return Err(Error::InvalidInput(format!(
                "row has {} cells for {} features",
                row.len(),
                features.len()
            )));
        }
        if cells.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite cell value".into()));
        }
        Ok(Self {
            patient_id: patient_id.into(),
            features,
            cells,
        })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn horizon(&self) -> usize {
        self.cells.len()
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn get(&self, hour: usize, feature: usize) -> Option<f64> {
        self.cells[hour][feature]
    }

    pub fn row(&self, hour: usize) -> &[Option<f64>] {
        &self.cells[hour]
    }

    pub fn column(&self, feature: usize) -> impl Iterator<Item = Option<f64>> + '_ {
        self.cells.iter().map(move |row| row[feature])
    }

    pub fn present_count(&self, feature: usize) -> usize {
        self.column(feature).filter(Option::is_some).count()
    }

    pub fn missing_cells(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.is_none()).count()
    }

    pub fn is_dense(&self) -> bool {
        self.missing_cells() == 0
    }

    /// Row `hour` as a feature-id keyed map, the shape the detector consumes.
    pub fn hour_values(&self, hour: usize) -> BTreeMap<String, Option<f64>> {
        self.features
            .iter()
            .cloned()
            .zip(self.cells[hour].iter().copied())
            .collect()
    }

    fn without_columns(&self, drop: &HashSet<&str>) -> Self {
        let keep: Vec<usize> = (0..self.features.len())
            .filter(|&j| !drop.contains(self.features[j].as_str()))
            .collect();
        Self {
            patient_id: self.patient_id.clone(),
            features: keep.iter().map(|&j| self.features[j].clone()).collect(),
            cells: self
                .cells
                .iter()
                .map(|row| keep.iter().map(|&j| row[j]).collect())
                .collect(),
        }
    }
}

/// A feature removed by a missingness rule.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedFeature {
    pub feature_id: String,
    pub missing_fraction: f64,
    pub threshold: f64,
    /// Which rule removed it, e.g. `dataset` or `cohort:treatment`.
    pub stage: String,
}

/// Buckets a patient's rows by whole hour; the latest observation in an hour wins.
pub fn bucket_hourly(
    obs: &ObservationTable,
    patient_id: &str,
    features: &[String],
    horizon: usize,
) -> Result<HourlyMatrix> {
    if !obs.labels().contains_key(patient_id) {
        return Err(Error::NotFound(format!("patient `{patient_id}`")));
    }
    let column: HashMap<&str, usize> = features.iter().enumerate().map(|(j, f)| (f.as_str(), j)).collect();
    let mut cells = vec![vec![None; features.len()]; horizon];
    let mut stamps = vec![vec![f64::NEG_INFINITY; features.len()]; horizon];
    for row in obs.rows().iter().filter(|r| r.patient_id == patient_id) {
        let Some(&j) = column.get(row.feature_id.as_str()) else {
            continue;
        };
        let bucket = row.hour.floor();
        if bucket >= horizon as f64 {
            continue;
        }
        let i = bucket as usize;
        // later rows win ties in time
        if row.hour >= stamps[i][j] {
            stamps[i][j] = row.hour;
            cells[i][j] = Some(row.value);
        }
    }
    HourlyMatrix::new(patient_id, features.to_vec(), cells)
}

/// Drops features whose missing fraction over all patients' hourly buckets
/// exceeds `threshold`. Features never observed count as fully missing.
pub fn drop_sparse_features(
    obs: &ObservationTable,
    features: &[String],
    horizon: usize,
    threshold: f64,
) -> (ObservationTable, Vec<DroppedFeature>) {
    let n_patients = obs.labels().len();
    if n_patients == 0 || horizon == 0 {
        return (obs.clone(), Vec::new());
    }
    let mut filled: HashSet<(&str, &str, usize)> = HashSet::new();
    for r in obs.rows() {
        if r.hour < horizon as f64 {
            filled.insert((r.patient_id.as_str(), r.feature_id.as_str(), r.hour.floor() as usize));
        }
    }
    let mut present: HashMap<&str, usize> = HashMap::new();
    for (_, f, _) in &filled {
        *present.entry(f).or_default() += 1;
    }
    let total = (n_patients * horizon) as f64;
    let dropped: Vec<DroppedFeature> = features
        .iter()
        .filter_map(|f| {
            let missing = 1.0 - present.get(f.as_str()).copied().unwrap_or(0) as f64 / total;
            (missing > threshold).then(|| DroppedFeature {
                feature_id: f.clone(),
                missing_fraction: missing,
                threshold,
                stage: "dataset".into(),
            })
        })
        .collect();
    let drop_ids: HashSet<&str> = dropped.iter().map(|d| d.feature_id.as_str()).collect();
    let table = obs.filter_rows(|r| !drop_ids.contains(r.feature_id.as_str()));
    (table, dropped)
}

/// Fills missing cells with the patient's own column mean, for columns with
/// at least `min_present` of their hours observed. Sparser columns are left
/// for cohort-level handling.
pub fn patient_mean_impute(matrix: &HourlyMatrix, min_present: f64) -> HourlyMatrix {
    let mut out = matrix.clone();
    let horizon = matrix.horizon() as f64;
    for j in 0..matrix.features.len() {
        let present: Vec<f64> = matrix.column(j).flatten().collect();
        if present.is_empty() || present.len() == matrix.horizon() {
            continue;
        }
        if (present.len() as f64) / horizon < min_present {
            continue;
        }
        let mean = present.iter().sum::<f64>() / present.len() as f64;
        for row in out.cells.iter_mut() {
            row[j].get_or_insert(mean);
        }
    }
    out
}

/// Cohort-level stage: drops features missing more than `sparse_threshold`
/// within either labelled cohort, then fills every remaining gap with the
/// mean of the patient's own cohort.
pub fn cohort_mean_impute(
    matrices: &[HourlyMatrix],
    labels: &BTreeMap<String, CohortLabel>,
    sparse_threshold: f64,
) -> Result<(Vec<HourlyMatrix>, Vec<DroppedFeature>)> {
    let Some(first) = matrices.first() else {
        return Ok((Vec::new(), Vec::new()));
    };
    let features = first.features.clone();
    let mut cohort_of = Vec::with_capacity(matrices.len());
    for m in matrices {
        if m.features != features {
            return Err(Error::InvalidInput(format!(
                "patient `{}` has a different feature set",
                m.patient_id
            )));
        }
        match labels.get(&m.patient_id).copied().unwrap_or_default() {
            CohortLabel::Unlabeled => {
                return Err(Error::InvalidInput(format!(
                    "patient `{}` has no cohort label",
                    m.patient_id
                )))
            }
            label => cohort_of.push(label),
        }
    }

    let cohorts = [CohortLabel::Control, CohortLabel::Treatment];
    // (present count, cell count, sum) per cohort and feature
    let mut stats = vec![vec![(0usize, 0usize, 0.0f64); features.len()]; cohorts.len()];
    for (m, label) in matrices.iter().zip(&cohort_of) {
        let c = cohorts.iter().position(|l| l == label).expect("labelled");
        for (j, stat) in stats[c].iter_mut().enumerate() {
            for v in m.column(j) {
                stat.1 += 1;
                if let Some(v) = v {
                    stat.0 += 1;
                    stat.2 += v;
                }
            }
        }
    }

    let mut dropped: Vec<DroppedFeature> = Vec::new();
    for (j, f) in features.iter().enumerate() {
        for (c, label) in cohorts.iter().enumerate() {
            let (present, cells, _) = stats[c][j];
            if cells == 0 {
                continue;
            }
            let missing = 1.0 - present as f64 / cells as f64;
            if missing > sparse_threshold && !dropped.iter().any(|d| &d.feature_id == f) {
                dropped.push(DroppedFeature {
                    feature_id: f.clone(),
                    missing_fraction: missing,
                    threshold: sparse_threshold,
                    stage: format!("cohort:{label}"),
                });
            }
        }
    }
    let drop_ids: HashSet<&str> = dropped.iter().map(|d| d.feature_id.as_str()).collect();

    let mut out = Vec::with_capacity(matrices.len());
    for (m, label) in matrices.iter().zip(&cohort_of) {
        let c = cohorts.iter().position(|l| l == label).expect("labelled");
        let mut filled = m.clone();
        for j in 0..features.len() {
            if drop_ids.contains(features[j].as_str()) || m.present_count(j) == m.horizon() {
                continue;
            }
            let (present, _, sum) = stats[c][j];
            if present == 0 {
                return Err(Error::ImputationImpossible {
                    feature: features[j].clone(),
                    cohort: label.to_string(),
                });
            }
            let mean = sum / present as f64;
            for row in filled.cells.iter_mut() {
                row[j].get_or_insert(mean);
            }
        }
        out.push(filled.without_columns(&drop_ids));
    }
    Ok((out, dropped))
}

/// Options for [`build_reference`] beyond the matrices themselves.
#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    pub config: PipelineConfig,
    /// Patients left out of the pooled samples.
    pub excluded_patients: Vec<String>,
    pub source_rows: usize,
}

/// Pools every control patient's hourly values per feature and estimates one
/// density per feature.
pub fn build_reference(control_matrices: &[HourlyMatrix], options: &BuildOptions) -> Result<ReferenceModel> {
    let matrices: Vec<&HourlyMatrix> = control_matrices
        .iter()
        .filter(|m| !options.excluded_patients.contains(&m.patient_id))
        .collect();
    let Some(first) = matrices.first() else {
        return Err(Error::InvalidInput("no control patients to build a reference from".into()));
    };
    let features = first.features.clone();
    if features.is_empty() {
        return Err(Error::InvalidInput("control matrices have no features".into()));
    }
    for m in &matrices {
        if m.features != features {
            return Err(Error::InvalidInput(format!(
                "patient `{}` has a different feature set",
                m.patient_id
            )));
        }
        if !m.is_dense() {
            return Err(Error::InvalidInput(format!(
                "patient `{}` still has {} missing cells",
                m.patient_id,
                m.missing_cells()
            )));
        }
    }

    let grid_points = options.config.grid_points;
    let references = features
        .par_iter()
        .enumerate()
        .map(|(j, feature_id)| {
            let mut pooled: Vec<f64> = matrices.iter().flat_map(|m| m.column(j).flatten()).collect();
            // sorted so the estimate does not depend on patient order
            pooled.sort_by(f64::total_cmp);
            let samples = SampleVector::new(pooled)?;
            let bandwidth = silverman_bandwidth(&samples);
            let grid = build_grid(&samples, bandwidth, grid_points)?;
            let kde = kde_on_grid(&samples, bandwidth, &grid)?;
            debug!(
                "reference {feature_id}: n={} h={:.6} grid=[{:.4}, {:.4}]",
                samples.len(),
                bandwidth.value(),
                grid.lo(),
                grid.hi()
            );
            Ok(FeatureReference {
                feature_id: feature_id.clone(),
                density: kde.density,
                bandwidth,
                n_samples: samples.len(),
                sample_mean: samples.mean(),
                sample_sd: samples.std_dev(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let created_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or_default();
    ReferenceModel::new(
        references,
        BuildMetadata {
            schema_version: SCHEMA_VERSION,
            features,
            thresholds: options.config,
            created_unix,
            source_rows: options.source_rows,
            control_patients: matrices.len(),
            excluded_patients: options.excluded_patients.clone(),
        },
    )
}

/// What [`prepare_reference`] removed along the way.
#[derive(Debug, Clone, Default)]
pub struct PreparationReport {
    pub dropped: Vec<DroppedFeature>,
    pub control_patients: usize,
    pub treatment_patients: usize,
    pub unlabeled_patients: usize,
}

/// Runs the full preparation chain on a labelled table and builds the
/// reference model from its control cohort.
pub fn prepare_reference(
    obs: &ObservationTable,
    registry: &FeatureRegistry,
    config: &PipelineConfig,
    excluded_patients: &[String],
) -> Result<(ReferenceModel, PreparationReport)> {
    obs.validate(registry)?;
    let table = obs.without_patients(excluded_patients);
    let mut report = PreparationReport {
        control_patients: table.patients_with_label(CohortLabel::Control).len(),
        treatment_patients: table.patients_with_label(CohortLabel::Treatment).len(),
        unlabeled_patients: table.patients_with_label(CohortLabel::Unlabeled).len(),
        ..Default::default()
    };
    if report.control_patients == 0 {
        return Err(Error::InvalidInput("input has no control-labelled patients".into()));
    }

    let all_features: Vec<String> = registry.ids().map(str::to_string).collect();
    let (table, dropped) = drop_sparse_features(&table, &all_features, config.horizon, config.dataset_missing_threshold);
    report.dropped.extend(dropped);
    let kept: Vec<String> = all_features
        .into_iter()
        .filter(|f| !report.dropped.iter().any(|d| &d.feature_id == f))
        .collect();
    if kept.is_empty() {
        return Err(Error::InvalidInput("every feature was dropped as too sparse".into()));
    }

    let labelled: Vec<&str> = table
        .labels()
        .iter()
        .filter(|(_, l)| **l != CohortLabel::Unlabeled)
        .map(|(p, _)| p.as_str())
        .collect();
    let matrices = labelled
        .iter()
        .map(|p| {
            bucket_hourly(&table, p, &kept, config.horizon).map(|m| patient_mean_impute(&m, config.patient_min_present))
        })
        .collect::<Result<Vec<_>>>()?;
    let (dense, dropped) = cohort_mean_impute(&matrices, table.labels(), config.cohort_sparse_threshold)?;
    report.dropped.extend(dropped);

    let controls: Vec<HourlyMatrix> = dense
        .into_iter()
        .filter(|m| table.label(&m.patient_id) == CohortLabel::Control)
        .collect();
    let model = build_reference(
        &controls,
        &BuildOptions {
            config: *config,
            excluded_patients: excluded_patients.to_vec(),
            source_rows: obs.len(),
        },
    )?;
    info!(
        "built reference over {} features from {} control patients",
        model.len(),
        model.metadata().control_patients
    );
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observations::Observation;

    fn push(t: &mut ObservationTable, p: &str, hour: f64, f: &str, v: f64) {
        t.push(Observation {
            patient_id: p.into(),
            hour,
            feature_id: f.into(),
            value: v,
        })
        .unwrap();
    }

    fn ids(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn matrix(p: &str, cols: &[&[Option<f64>]]) -> HourlyMatrix {
        let horizon = cols[0].len();
        let cells = (0..horizon).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
        let features = (0..cols.len()).map(|j| format!("f{j}")).collect();
        HourlyMatrix::new(p, features, cells).unwrap()
    }

    #[test]
    fn bucketing_keeps_latest_and_truncates_horizon() {
        let mut t = ObservationTable::new();
        push(&mut t, "p1", 3.9, "f", 12.0);
        push(&mut t, "p1", 3.2, "f", 10.0);
        push(&mut t, "p1", 50.0, "f", 99.0);
        push(&mut t, "p2", 3.5, "f", 1.0);
        let m = bucket_hourly(&t, "p1", &ids(&["f", "g"]), 48).unwrap();
        assert_eq!(m.horizon(), 48);
        assert_eq!(m.get(3, 0), Some(12.0));
        assert_eq!(m.present_count(0), 1);
        assert_eq!(m.present_count(1), 0);
        assert_eq!(
            bucket_hourly(&t, "nobody", &ids(&["f"]), 48),
            Err(Error::NotFound("patient `nobody`".into()))
        );
    }

    #[test]
    fn same_hour_tie_goes_to_later_row() {
        let mut t = ObservationTable::new();
        push(&mut t, "p1", 2.0, "f", 1.0);
        push(&mut t, "p1", 2.0, "f", 2.0);
        let m = bucket_hourly(&t, "p1", &ids(&["f"]), 4).unwrap();
        assert_eq!(m.get(2, 0), Some(2.0));
    }

    fn coverage_table(present_hours: usize) -> ObservationTable {
        let mut t = ObservationTable::new();
        for h in 0..10 {
            push(&mut t, "p1", h as f64, "dense", 1.0);
            if h < present_hours {
                push(&mut t, "p1", h as f64 + 0.5, "sparse", 1.0);
            }
        }
        t
    }

    #[test]
    fn sparse_feature_threshold() {
        let features = ids(&["dense", "sparse"]);
        let (_, dropped) = drop_sparse_features(&coverage_table(8), &features, 10, 0.25);
        assert!(dropped.is_empty());

        let (table, dropped) = drop_sparse_features(&coverage_table(7), &features, 10, 0.25);
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].feature_id, "sparse");
        assert!((dropped[0].missing_fraction - 0.3).abs() < 1e-12);
        assert!(table.rows().iter().all(|r| r.feature_id == "dense"));

        let (_, dropped) = drop_sparse_features(&coverage_table(0), &features, 10, 1.0);
        assert!(dropped.is_empty());
    }

    #[test]
    fn patient_imputation_rules() {
        let half = [Some(10.0), None, Some(20.0), None];
        let sparse: Vec<Option<f64>> = (0..10).map(|i| (i == 0).then_some(5.0)).collect();
        let m = matrix("p", &[&half]);
        let out = patient_mean_impute(&m, 0.25);
        assert_eq!(out.column(0).collect::<Vec<_>>(), [Some(10.0), Some(15.0), Some(20.0), Some(15.0)]);
        assert_eq!(patient_mean_impute(&out, 0.25), out);

        let m = matrix("p", &[&sparse]);
        assert_eq!(patient_mean_impute(&m, 0.25), m);

        let dense = matrix("p", &[&[Some(1.0), Some(2.0)]]);
        assert_eq!(patient_mean_impute(&dense, 0.25), dense);
    }

    fn labels(pairs: &[(&str, CohortLabel)]) -> BTreeMap<String, CohortLabel> {
        pairs.iter().map(|(p, l)| (p.to_string(), *l)).collect()
    }

    #[test]
    fn cohort_imputation_drops_and_fills() {
        // f1 is 80% missing for the treatment patient only
        let c1 = matrix("c1", &[&[Some(1.0), None, Some(3.0), Some(4.0), Some(2.0)], &[Some(5.0); 5]]);
        let c2 = matrix("c2", &[&[Some(3.0); 5], &[Some(7.0); 5]]);
        let t1 = matrix("t1", &[&[Some(9.0); 5], &[Some(1.0), None, None, None, None]]);
        let labels = labels(&[
            ("c1", CohortLabel::Control),
            ("c2", CohortLabel::Control),
            ("t1", CohortLabel::Treatment),
        ]);
        let (out, dropped) = cohort_mean_impute(&[c1, c2, t1], &labels, 0.75).unwrap();
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].feature_id, "f1");
        assert_eq!(dropped[0].stage, "cohort:treatment");
        assert!(out.iter().all(|m| m.features() == ["f0"] && m.is_dense()));
        // control mean of f0 = (1 + 3 + 4 + 2 + 3 * 5) / 9
        assert!((out[0].get(1, 0).unwrap() - 25.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn cohort_imputation_is_a_no_op_on_dense_input() {
        let c = matrix("c", &[&[Some(1.0), Some(2.0)]]);
        let t = matrix("t", &[&[Some(3.0), Some(4.0)]]);
        let labels = labels(&[("c", CohortLabel::Control), ("t", CohortLabel::Treatment)]);
        let (out, dropped) = cohort_mean_impute(&[c.clone(), t.clone()], &labels, 0.75).unwrap();
        assert!(dropped.is_empty());
        assert_eq!(out, vec![c, t]);
    }

    #[test]
    fn cohort_imputation_errors() {
        let c = matrix("c", &[&[Some(1.0), None]]);
        let unlabeled = labels(&[]);
        assert!(matches!(
            cohort_mean_impute(std::slice::from_ref(&c), &unlabeled, 0.75),
            Err(Error::InvalidInput(_))
        ));
        let empty = matrix("c", &[&[None, None]]);
        let l = labels(&[("c", CohortLabel::Control)]);
        assert_eq!(
            cohort_mean_impute(&[empty], &l, 1.0),
            Err(Error::ImputationImpossible {
                feature: "f0".into(),
                cohort: "control".into()
            })
        );
    }

    #[test]
    fn reference_pools_all_hours() {
        let col: Vec<Option<f64>> = (0..48).map(|i| Some(i as f64)).collect();
        let m = matrix("c", &[&col]);
        let model = build_reference(&[m], &BuildOptions::default()).unwrap();
        let f = model.feature("f0").unwrap();
        assert_eq!(f.n_samples, 48);
        assert_eq!(f.grid().n_points(), 512);
        assert!((f.density.integral() - 1.0).abs() < 1e-9);
        assert!((f.sample_mean - 23.5).abs() < 1e-12);
    }

    #[test]
    fn reference_rejects_bad_cohorts() {
        assert!(build_reference(&[], &BuildOptions::default()).is_err());
        let sparse = matrix("c", &[&[Some(1.0), None]]);
        assert!(build_reference(&[sparse], &BuildOptions::default()).is_err());
        let m = matrix("c", &[&[Some(1.0), Some(2.0)]]);
        let opts = BuildOptions {
            excluded_patients: vec!["c".into()],
            ..Default::default()
        };
        assert!(build_reference(&[m], &opts).is_err());
    }
}
