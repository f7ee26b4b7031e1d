//! Feature registry: the ordered set of feature ids the pipeline accepts.

use std::collections::HashMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureInfo {
    pub id: String,
    pub display_name: String,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRegistry {
    features: Vec<FeatureInfo>,
    index: HashMap<String, usize>,
}

// (id, display name, unit); five vitals followed by 22 labs.
const DEFAULT_FEATURES: [(&str, &str, &str); 27] = [
    ("gcs_total", "Glasgow Coma Score total", "points"),
    ("spo2", "Oxygen saturation (SpO2)", "%"),
    ("heart_rate", "Heart rate", "beats/min"),
    ("resp_rate", "Respiratory rate", "breaths/min"),
    ("temperature", "Temperature", "degF"),
    ("alt", "Alanine aminotransferase", "U/L"),
    ("albumin", "Albumin", "g/dL"),
    ("alk_phos", "Alkaline phosphatase", "U/L"),
    ("anion_gap", "Anion gap", "mmol/L"),
    ("ast", "Aspartate aminotransferase", "U/L"),
    ("bicarbonate", "Bicarbonate", "mmol/L"),
    ("bilirubin", "Bilirubin", "mg/dL"),
    ("bun", "Blood urea nitrogen", "mg/dL"),
    ("calcium", "Calcium", "mg/dL"),
    ("chloride", "Chloride", "mmol/L"),
    ("creatinine", "Creatinine", "mg/dL"),
    ("glucose", "Glucose", "mg/dL"),
    ("hematocrit", "Hematocrit", "%"),
    ("hemoglobin", "Hemoglobin", "g/dL"),
    ("inr", "International normalized ratio", "ratio"),
    ("magnesium", "Magnesium", "mg/dL"),
    ("platelets", "Platelets", "10^3/uL"),
    ("potassium", "Potassium", "mmol/L"),
    ("protein", "Protein", "g/dL"),
    ("prothrombin_time", "Prothrombin time", "s"),
    ("sodium", "Sodium", "mmol/L"),
    ("wbc", "White blood cell count", "10^3/uL"),
];

impl FeatureRegistry {
    pub fn new(features: Vec<FeatureInfo>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidInput("feature registry is empty".into()));
        }
        let mut index = HashMap::with_capacity(features.len());
        for (i, f) in features.iter().enumerate() {
            if f.id.trim().is_empty() {
                return Err(Error::InvalidInput("feature id is empty".into()));
            }
            if index.insert(f.id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate feature id `{}`", f.id)));
            }
        }
        Ok(Self { features, index })
    }

    /// Builds a registry from bare ids, using the id as display name.
    pub fn from_ids<S: AsRef<str>>(ids: &[S]) -> Result<Self> {
        Self::new(
            ids.iter()
                .map(|id| FeatureInfo {
                    id: id.as_ref().to_string(),
                    display_name: id.as_ref().to_string(),
                    unit: String::new(),
                })
                .collect(),
        )
    }

    /// Reads `id,display_name,unit` rows (header required).
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut features = Vec::new();
        for (i, row) in rdr.deserialize::<FeatureInfo>().enumerate() {
            let info = row.map_err(|e| Error::Parse {
                line: i as u64 + 2,
                message: e.to_string(),
            })?;
            features.push(info);
        }
        Self::new(features)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&FeatureInfo> {
        self.position(id).map(|i| &self.features[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.id.as_str())
    }

    pub fn features(&self) -> &[FeatureInfo] {
        &self.features
    }
}

impl Default for FeatureRegistry {
    fn default() -> Self {
        Self::new(
            DEFAULT_FEATURES
                .iter()
                .map(|(id, name, unit)| FeatureInfo {
                    id: id.to_string(),
                    display_name: name.to_string(),
                    unit: unit.to_string(),
                })
                .collect(),
        )
        .expect("default registry is valid")
    }
}
