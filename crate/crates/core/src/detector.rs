//! Online two-hour sliding-window scoring of one patient against a reference.
//!
//! Each pushed hour shifts a per-feature window holding the two most recent
//! hourly values. From the second hour on, every feature with at least one
//! value in its window is turned into a KDE on that feature's reference grid
//! and scored by Jensen-Shannon divergence against the reference density.
//! The hour's comprehensive score is the mean over the scored features.

use std::sync::Arc;

use crate::cohort::HourlyMatrix;
use crate::density::{kde_on_grid, silverman_bandwidth, SampleVector};
use crate::divergence::{comprehensive_score, jsd, FeatureScoreMap};
use crate::error::{Error, Result};
use crate::reference::ReferenceModel;

/// Divergence scores for one completed hour of one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub patient_id: String,
    pub hour_index: usize,
    pub per_feature: FeatureScoreMap,
    pub comprehensive: f64,
    pub features_used: usize,
    pub features_skipped: Vec<String>,
}

/// Result of pushing an hour once the window holds two hours.
#[derive(Debug, Clone, PartialEq)]
pub enum HourOutcome {
    Scored(ScoreRecord),
    /// Every feature's window was empty; nothing to average.
    NoFeaturesAvailable {
        patient_id: String,
        hour_index: usize,
        features_skipped: Vec<String>,
    },
}

impl HourOutcome {
    pub fn record(&self) -> Option<&ScoreRecord> {
        match self {
            HourOutcome::Scored(r) => Some(r),
            HourOutcome::NoFeaturesAvailable { .. } => None,
        }
    }

    pub fn into_record(self) -> Option<ScoreRecord> {
        match self {
            HourOutcome::Scored(r) => Some(r),
            HourOutcome::NoFeaturesAvailable { .. } => None,
        }
    }
}

/// Scoring state for a single patient. Drive it sequentially, one hour at a time.
#[derive(Debug, Clone)]
pub struct ScorerState {
    reference: Arc<ReferenceModel>,
    patient_id: String,
    /// `[previous hour, current hour]` per reference feature.
    window: Vec<[Option<f64>; 2]>,
    last_hour_index: i64,
    clip_count: usize,
}

impl ScorerState {
    pub fn new(reference: Arc<ReferenceModel>, patient_id: impl Into<String>) -> Self {
        let window = vec![[None, None]; reference.len()];
        Self {
            reference,
            patient_id: patient_id.into(),
            window,
            last_hour_index: -1,
            clip_count: 0,
        }
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    /// Last pushed hour, `-1` before the first push.
    pub fn last_hour_index(&self) -> i64 {
        self.last_hour_index
    }

    pub fn buffered_hours(&self) -> usize {
        (self.last_hour_index + 1).min(2) as usize
    }

    /// Window values clipped to a reference grid edge so far.
    pub fn clip_count(&self) -> usize {
        self.clip_count
    }

    pub fn window_slots(&self) -> usize {
        self.window.len()
    }

    pub fn reference(&self) -> &ReferenceModel {
        &self.reference
    }

    /// Pushes the values observed in `hour_index`, which must directly follow
    /// the previous push. Features absent from `values` count as missing.
    /// Returns `None` for the first hour.
    pub fn push_hour<I, S>(&mut self, hour_index: usize, values: I) -> Result<Option<HourOutcome>>
    where
        I: IntoIterator<Item = (S, Option<f64>)>,
        S: AsRef<str>,
    {
        let expected = self.last_hour_index + 1;
        if hour_index as i64 != expected {
            return Err(Error::OutOfOrder {
                expected,
                got: hour_index as i64,
            });
        }
        let mut incoming = vec![None; self.window.len()];
        for (feature, value) in values {
            let feature = feature.as_ref();
            let j = self
                .reference
                .position(feature)
                .ok_or_else(|| Error::UnknownFeature(feature.to_string()))?;
            if let Some(v) = value {
                if !v.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "non-finite value {v} for `{feature}` at hour {hour_index}"
                    )));
                }
            }
            incoming[j] = value;
        }

        for (slot, value) in self.window.iter_mut().zip(incoming) {
            *slot = [slot[1], value];
        }
        self.last_hour_index = expected;
        if hour_index == 0 {
            return Ok(None);
        }
        self.score_window(hour_index).map(Some)
    }

    fn score_window(&mut self, hour_index: usize) -> Result<HourOutcome> {
        let mut per_feature = FeatureScoreMap::new();
        let mut skipped = Vec::new();
        for (slot, reference) in self.window.iter().zip(self.reference.features()) {
            let present: Vec<f64> = slot.iter().flatten().copied().collect();
            if present.is_empty() {
                skipped.push(reference.feature_id.clone());
                continue;
            }
            // clip before choosing the bandwidth so far values stay narrow at the edge
            let grid = reference.grid();
            self.clip_count += present.iter().filter(|v| !grid.contains(**v)).count();
            let samples = SampleVector::new(present.into_iter().map(|v| grid.clamp(v)).collect())?;
            let h = silverman_bandwidth(&samples);
            let kde = kde_on_grid(&samples, h, grid)?;
            per_feature.insert(reference.feature_id.clone(), jsd(&reference.density, &kde.density)?);
        }

        if per_feature.is_empty() {
            return Ok(HourOutcome::NoFeaturesAvailable {
                patient_id: self.patient_id.clone(),
                hour_index,
                features_skipped: skipped,
            });
        }
        let comprehensive = comprehensive_score(&per_feature)?;
        Ok(HourOutcome::Scored(ScoreRecord {
            patient_id: self.patient_id.clone(),
            hour_index,
            features_used: per_feature.features_used(),
            per_feature,
            comprehensive,
            features_skipped: skipped,
        }))
    }
}

/// Scores every hour of a bucketed patient; equivalent to pushing each row in
/// turn. Hours with no scoreable feature are left out.
pub fn score_patient(reference: &Arc<ReferenceModel>, matrix: &HourlyMatrix) -> Result<Vec<ScoreRecord>> {
    if matrix.horizon() < 2 {
        return Err(Error::InvalidInput("horizon must be at least 2 hours".into()));
    }
    let mut state = ScorerState::new(Arc::clone(reference), matrix.patient_id());
    let mut records = Vec::with_capacity(matrix.horizon() - 1);
    for hour in 0..matrix.horizon() {
        let values = matrix.features().iter().zip(matrix.row(hour).iter().copied());
        if let Some(record) = state.push_hour(hour, values)?.and_then(HourOutcome::into_record) {
            records.push(record);
        }
    }
    Ok(records)
}
