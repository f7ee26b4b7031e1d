//! Seeded synthetic control/treatment cohorts with a known step drift.
//!
//! Every present cell is drawn independently from a per-feature Gaussian.
//! Treatment patients follow the control generator until the onset hour; from
//! then on the shifted features move by `shift_sds` standard deviations.
//! Each patient draws from its own ChaCha stream, so output does not depend
//! on generation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observations::{CohortLabel, Observation, ObservationTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub id: String,
    pub mean: f64,
    pub sd: f64,
    #[serde(default)]
    pub missingness: f64,
    /// Treatment-cohort moments from the onset hour on, if they differ.
    #[serde(default)]
    pub treatment: Option<Moments>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub onset_hour: usize,
    pub shifted_features: Vec<String>,
    pub shift_sds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub features: Vec<FeatureSpec>,
    pub n_control: usize,
    pub n_treatment: usize,
    pub horizon: usize,
    pub drift: DriftSpec,
    pub seed: u64,
}

// Control-cohort moments; the first seven are the cohort statistics reported
// for the original ICU population, the rest are typical adult ICU values.
const DEFAULT_MOMENTS: [(&str, f64, f64); 27] = [
    ("temperature", 98.4, 0.9),
    ("heart_rate", 86.7, 16.2),
    ("resp_rate", 18.5, 3.0),
    ("wbc", 10.2, 3.5),
    ("creatinine", 0.9, 0.3),
    ("bilirubin", 0.8, 0.3),
    ("gcs_total", 14.6, 0.7),
    ("spo2", 96.5, 2.0),
    ("alt", 35.0, 20.0),
    ("albumin", 3.2, 0.6),
    ("alk_phos", 90.0, 35.0),
    ("anion_gap", 10.0, 3.0),
    ("ast", 40.0, 25.0),
    ("bicarbonate", 24.0, 3.5),
    ("bun", 20.0, 10.0),
    ("calcium", 8.6, 0.6),
    ("chloride", 104.0, 4.5),
    ("glucose", 130.0, 35.0),
    ("hematocrit", 31.0, 5.0),
    ("hemoglobin", 10.3, 1.8),
    ("inr", 1.2, 0.25),
    ("magnesium", 2.0, 0.25),
    ("platelets", 210.0, 80.0),
    ("potassium", 4.0, 0.45),
    ("protein", 6.2, 0.8),
    ("prothrombin_time", 14.0, 2.5),
    ("sodium", 139.0, 4.0),
];

// Treatment-cohort moments for the same seven reported features.
const TREATMENT_MOMENTS: [(&str, f64, f64); 7] = [
    ("temperature", 98.9, 1.1),
    ("heart_rate", 95.0, 15.7),
    ("resp_rate", 20.0, 3.7),
    ("wbc", 12.7, 6.9),
    ("creatinine", 0.9, 0.4),
    ("bilirubin", 0.9, 0.9),
    ("gcs_total", 13.7, 1.3),
];

pub const DEFAULT_SHIFTED: [&str; 6] = ["calcium", "hemoglobin", "wbc", "temperature", "sodium", "heart_rate"];

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            features: DEFAULT_MOMENTS
                .iter()
                .map(|(id, mean, sd)| FeatureSpec {
                    id: id.to_string(),
                    mean: *mean,
                    sd: *sd,
                    missingness: 0.0,
                    treatment: None,
                })
                .collect(),
            n_control: 200,
            n_treatment: 20,
            horizon: 48,
            drift: DriftSpec {
                onset_hour: 24,
                shifted_features: DEFAULT_SHIFTED.iter().map(|s| s.to_string()).collect(),
                shift_sds: 2.0,
            },
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Applies the reported treatment-cohort moments to the post-onset
    /// treatment generator of the matching features.
    pub fn with_reported_treatment_moments(mut self) -> Self {
        for f in &mut self.features {
            if let Some((_, mean, sd)) = TREATMENT_MOMENTS.iter().find(|(id, _, _)| *id == f.id) {
                f.treatment = Some(Moments { mean: *mean, sd: *sd });
            }
        }
        self
    }

    pub fn with_missingness(mut self, rate: f64) -> Self {
        self.features.iter_mut().for_each(|f| f.missingness = rate);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.features.is_empty() {
            return bad("synthetic config has no features".into());
        }
        if self.horizon < 2 {
            return bad(format!("horizon must be at least 2, got {}", self.horizon));
        }
        if self.drift.onset_hour >= self.horizon {
            return bad(format!(
                "onset hour {} outside horizon {}",
                self.drift.onset_hour, self.horizon
            ));
        }
        if !self.drift.shift_sds.is_finite() {
            return bad("shift_sds must be finite".into());
        }
        for f in &self.features {
            let moments = std::iter::once(Moments { mean: f.mean, sd: f.sd }).chain(f.treatment);
            for m in moments {
                if !(m.mean.is_finite() && m.sd.is_finite() && m.sd > 0.0) {
                    return bad(format!("feature `{}` needs a finite mean and positive sd", f.id));
                }
            }
            if !(0.0..1.0).contains(&f.missingness) {
                return bad(format!("feature `{}` missingness {} outside [0, 1)", f.id, f.missingness));
            }
        }
        for s in &self.drift.shifted_features {
            if !self.features.iter().any(|f| &f.id == s) {
                return bad(format!("shifted feature `{s}` is not configured"));
            }
        }
        Ok(())
    }

    fn post_onset_generator(&self, f: &FeatureSpec) -> Moments {
        let base = f.treatment.unwrap_or(Moments { mean: f.mean, sd: f.sd });
        if self.drift.shifted_features.contains(&f.id) {
            Moments {
                mean: base.mean + self.drift.shift_sds * base.sd,
                sd: base.sd,
            }
        } else {
            base
        }
    }
}

pub fn patient_id(label: CohortLabel, index: usize) -> String {
    match label {
        CohortLabel::Control => format!("ctrl_{index:04}"),
        CohortLabel::Treatment => format!("trt_{index:04}"),
        CohortLabel::Unlabeled => format!("pt_{index:04}"),
    }
}

fn generate_patient(config: &SynthConfig, label: CohortLabel, index: usize) -> Vec<Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cohort_bits: u64 = if label == CohortLabel::Treatment { 1 << 32 } else { 0 };
    rng.set_stream(cohort_bits | index as u64);

    let id = patient_id(label, index);
    let generators: Vec<(Normal<f64>, Normal<f64>)> = config
        .features
        .iter()
        .map(|f| {
            let pre = Normal::new(f.mean, f.sd).expect("validated sd");
            let post = if label == CohortLabel::Treatment {
                let m = config.post_onset_generator(f);
                Normal::new(m.mean, m.sd).expect("validated sd")
            } else {
                pre
            };
            (pre, post)
        })
        .collect();

    let mut rows = Vec::new();
    for hour in 0..config.horizon {
        let minute: u32 = rng.random_range(0..60);
        let stamp = hour as f64 + f64::from(minute) / 60.0;
        for (f, (pre, post)) in config.features.iter().zip(&generators) {
            let missing = rng.random::<f64>() < f.missingness;
            let dist = if hour >= config.drift.onset_hour { post } else { pre };
            let value = dist.sample(&mut rng);
            if !missing {
                rows.push(Observation {
                    patient_id: id.clone(),
                    hour: stamp,
                    feature_id: f.id.clone(),
                    value,
                });
            }
        }
    }
    rows
}

/// Generates the configured cohorts as a labelled observation table.
pub fn generate_cohort(config: &SynthConfig) -> Result<ObservationTable> {
    config.validate()?;
    let patients: Vec<(CohortLabel, usize)> = (0..config.n_control)
        .map(|i| (CohortLabel::Control, i))
        .chain((0..config.n_treatment).map(|i| (CohortLabel::Treatment, i)))
        .collect();
    let per_patient: Vec<Vec<Observation>> = patients
        .par_iter()
        .map(|&(label, i)| generate_patient(config, label, i))
        .collect();

    let mut table = ObservationTable::new();
    for (&(label, i), rows) in patients.iter().zip(per_patient) {
        table.set_label(&patient_id(label, i), label)?;
        for row in rows {
            table.push(row)?;
        }
    }
    Ok(table)
}
