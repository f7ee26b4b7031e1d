//! Kullback-Leibler and Jensen-Shannon divergence between densities that
//! share a grid, in bits.
//!
//! Integrals use the trapezoid rule over the shared grid. Zero-probability
//! terms contribute nothing and reference densities are clamped below at
//! [`DENSITY_FLOOR`], so no evaluation divides by zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::density::DensityOnGrid;
use crate::error::{Error, Result};

/// Lower clamp applied to the denominator density in KL terms.
pub const DENSITY_FLOOR: f64 = 1e-12;

const ZERO_TOLERANCE: f64 = 1e-9;

/// A Jensen-Shannon divergence in bits, within `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct DivergenceValue(f64);

impl DivergenceValue {
    pub fn new(bits: f64) -> Result<Self> {
        if bits.is_finite() && (0.0..=1.0 + ZERO_TOLERANCE).contains(&bits) {
            Ok(Self(bits))
        } else {
            Err(Error::InvalidInput(format!("divergence {bits} outside [0, 1]")))
        }
    }

    pub fn bits(self) -> f64 {
        self.0
    }
}

/// Per-feature divergences for one time step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureScoreMap {
    entries: BTreeMap<String, DivergenceValue>,
}

impl FeatureScoreMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, feature_id: impl Into<String>, value: DivergenceValue) {
        self.entries.insert(feature_id.into(), value);
    }

    pub fn get(&self, feature_id: &str) -> Option<DivergenceValue> {
        self.entries.get(feature_id).copied()
    }

    pub fn features_used(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, DivergenceValue)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl FromIterator<(String, DivergenceValue)> for FeatureScoreMap {
    fn from_iter<I: IntoIterator<Item = (String, DivergenceValue)>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}

fn check_grids(p: &DensityOnGrid, q: &DensityOnGrid) -> Result<()> {
    if p.grid() == q.grid() {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// `D_KL(p || q)` in bits.
pub fn kl_divergence(p: &DensityOnGrid, q: &DensityOnGrid) -> Result<f64> {
    check_grids(p, q)?;
    let grid = p.grid();
    let total: f64 = p
        .values()
        .iter()
        .zip(q.values())
        .enumerate()
        .filter(|(_, (pv, _))| **pv > 0.0)
        .map(|(i, (pv, qv))| grid.weight(i) * pv * (pv / qv.max(DENSITY_FLOOR)).log2())
        .sum();
    Ok(if (-ZERO_TOLERANCE..0.0).contains(&total) {
        0.0
    } else {
        total
    })
}

/// Equal-weight mixture `(p + q) / 2`.
pub fn mixture(p: &DensityOnGrid, q: &DensityOnGrid) -> Result<DensityOnGrid> {
    check_grids(p, q)?;
    let values = p
        .values()
        .iter()
        .zip(q.values())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    DensityOnGrid::from_values(*p.grid(), values)
}

/// Jensen-Shannon divergence in bits, computed against the internal mixture.
pub fn jsd(p: &DensityOnGrid, q: &DensityOnGrid) -> Result<DivergenceValue> {
    let r = mixture(p, q)?;
    let bits = 0.5 * kl_divergence(p, &r)? + 0.5 * kl_divergence(q, &r)?;
    // KL against a mixture can only dip below zero by rounding.
    DivergenceValue::new(bits.clamp(0.0, 1.0))
}

/// Mean of the per-feature divergences.
pub fn comprehensive_score(scores: &FeatureScoreMap) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::NoFeaturesAvailable);
    }
    let sum: f64 = scores.iter().map(|(_, v)| v.bits()).sum();
    Ok(sum / scores.features_used() as f64)
}
