//! Long-format observation table: one row per (patient, hour, feature, value).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::FeatureRegistry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CohortLabel {
    Control,
    Treatment,
    #[default]
    Unlabeled,
}

impl CohortLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            CohortLabel::Control => "control",
            CohortLabel::Treatment => "treatment",
            CohortLabel::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for CohortLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CohortLabel {
    type Err = std::convert::Infallible;

    /// Anything other than `control` / `treatment` is unlabeled.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "control" => CohortLabel::Control,
            "treatment" => CohortLabel::Treatment,
            _ => CohortLabel::Unlabeled,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub patient_id: String,
    /// Hours since admission.
    pub hour: f64,
    pub feature_id: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationTable {
    rows: Vec<Observation>,
    labels: BTreeMap<String, CohortLabel>,
}

impl ObservationTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row after checking the value/hour invariants.
    pub fn push(&mut self, obs: Observation) -> Result<()> {
        if obs.patient_id.is_empty() {
            return Err(Error::InvalidInput("empty patient id".into()));
        }
        if !obs.value.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite value {}", obs.value)));
        }
        if !(obs.hour.is_finite() && obs.hour >= 0.0) {
            return Err(Error::InvalidInput(format!("invalid hour {}", obs.hour)));
        }
        self.labels.entry(obs.patient_id.clone()).or_default();
        self.rows.push(obs);
        Ok(())
    }

    /// Labels a patient; a conflicting second label is an error.
    pub fn set_label(&mut self, patient_id: &str, label: CohortLabel) -> Result<()> {
        let slot = self.labels.entry(patient_id.to_string()).or_default();
        match (*slot, label) {
            (_, CohortLabel::Unlabeled) => Ok(()),
            (CohortLabel::Unlabeled, l) => {
                *slot = l;
                Ok(())
            }
            (a, b) if a == b => Ok(()),
            (a, b) => Err(Error::InvalidInput(format!(
                "patient `{patient_id}` labelled both {a} and {b}"
            ))),
        }
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn label(&self, patient_id: &str) -> CohortLabel {
        self.labels.get(patient_id).copied().unwrap_or_default()
    }

    pub fn labels(&self) -> &BTreeMap<String, CohortLabel> {
        &self.labels
    }

    /// Patient ids in sorted order.
    pub fn patients(&self) -> impl Iterator<Item = &str> {
        self.labels.keys().map(String::as_str)
    }

    pub fn patients_with_label(&self, label: CohortLabel) -> Vec<&str> {
        self.labels
            .iter()
            .filter(|(_, l)| **l == label)
            .map(|(p, _)| p.as_str())
            .collect()
    }

    pub fn features(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.feature_id.as_str()).collect()
    }

    /// Every feature id must be known to `registry`.
    pub fn validate(&self, registry: &FeatureRegistry) -> Result<()> {
        match self.rows.iter().find(|r| !registry.contains(&r.feature_id)) {
            Some(r) => Err(Error::UnknownFeature(r.feature_id.clone())),
            None => Ok(()),
        }
    }

    /// Keeps rows matching `keep`; patient labels are preserved.
    pub fn filter_rows(&self, mut keep: impl FnMut(&Observation) -> bool) -> Self {
        Self {
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn without_patients(&self, excluded: &[String]) -> Self {
        Self {
            rows: self
                .rows
                .iter()
                .filter(|r| !excluded.contains(&r.patient_id))
                .cloned()
                .collect(),
            labels: self
                .labels
                .iter()
                .filter(|(p, _)| !excluded.contains(p))
                .map(|(p, l)| (p.clone(), *l))
                .collect(),
        }
    }
}
