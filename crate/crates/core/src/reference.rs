//! The persisted per-feature reference densities of the control cohort.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::density::{Bandwidth, DensityOnGrid, Grid};
use crate::error::{Error, Result};

/// Version written into every persisted model; loading requires equality.
pub const SCHEMA_VERSION: u32 = 1;

/// Thresholds of the preparation pipeline, recorded with each model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Hours per patient block.
    pub horizon: usize,
    /// Dataset-wide missing fraction above which a feature is dropped.
    pub dataset_missing_threshold: f64,
    /// Minimum present fraction for patient-level mean imputation.
    pub patient_min_present: f64,
    /// Within-cohort missing fraction above which a feature is dropped.
    pub cohort_sparse_threshold: f64,
    pub grid_points: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            horizon: 48,
            dataset_missing_threshold: 0.25,
            patient_min_present: 0.25,
            cohort_sparse_threshold: 0.75,
            grid_points: crate::density::DEFAULT_GRID_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildMetadata {
    pub schema_version: u32,
    pub features: Vec<String>,
    pub thresholds: PipelineConfig,
    /// Seconds since the Unix epoch.
    pub created_unix: u64,
    pub source_rows: usize,
    pub control_patients: usize,
    #[serde(default)]
    pub excluded_patients: Vec<String>,
}

/// Reference density of one feature plus the statistics it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureReference {
    pub feature_id: String,
    pub density: DensityOnGrid,
    pub bandwidth: Bandwidth,
    pub n_samples: usize,
    pub sample_mean: f64,
    pub sample_sd: f64,
}

impl FeatureReference {
    pub fn grid(&self) -> &Grid {
        self.density.grid()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModel {
    features: Vec<FeatureReference>,
    metadata: BuildMetadata,
    index: HashMap<String, usize>,
}

impl ReferenceModel {
    pub fn new(features: Vec<FeatureReference>, mut metadata: BuildMetadata) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidInput("reference model has no features".into()));
        }
        let mut index = HashMap::with_capacity(features.len());
        for (i, f) in features.iter().enumerate() {
            f.grid().validate()?;
            if index.insert(f.feature_id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate reference feature `{}`",
                    f.feature_id
                )));
            }
        }
        metadata.features = features.iter().map(|f| f.feature_id.clone()).collect();
        Ok(Self {
            features,
            metadata,
            index,
        })
    }

    pub fn features(&self) -> &[FeatureReference] {
        &self.features
    }

    pub fn feature(&self, id: &str) -> Option<&FeatureReference> {
        self.index.get(id).map(|&i| &self.features[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn feature_ids(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.feature_id.as_str())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn metadata(&self) -> &BuildMetadata {
        &self.metadata
    }
}
