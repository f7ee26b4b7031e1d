//! Sliding-window Jensen-Shannon divergence scoring of clinical time series.
//!
//! A reference model holds one kernel density estimate per feature, pooled
//! over a control cohort. A patient is scored hour by hour: the two most
//! recent hourly values of each feature form a small KDE on the reference
//! grid, its Jensen-Shannon divergence from the reference density is the
//! per-feature score, and the mean over available features is the
//! comprehensive score for that hour.
//!
//! ```
//! use std::sync::Arc;
//! use jsdwatch::cohort::{prepare_reference, bucket_hourly};
//! use jsdwatch::detector::score_patient;
//! use jsdwatch::reference::PipelineConfig;
//! use jsdwatch::registry::FeatureRegistry;
//! use jsdwatch::synth::{generate_cohort, SynthConfig};
//!
//! let cohort = generate_cohort(&SynthConfig { n_control: 20, n_treatment: 1, ..Default::default() }).unwrap();
//! let registry = FeatureRegistry::default();
//! let config = PipelineConfig::default();
//! let (model, _) = prepare_reference(&cohort, &registry, &config, &[]).unwrap();
//! let model = Arc::new(model);
//!
//! let features: Vec<String> = model.feature_ids().map(String::from).collect();
//! let patient = bucket_hourly(&cohort, "trt_0000", &features, config.horizon).unwrap();
//! let records = score_patient(&model, &patient).unwrap();
//! assert_eq!(records.len(), 47);
//! ```

pub mod cohort;
pub mod density;
pub mod detector;
pub mod divergence;
pub mod error;
pub mod io;
pub mod observations;
pub mod reference;
pub mod registry;
pub mod report;
pub mod synth;

pub use error::{Error, Result};
