//! Univariate Gaussian kernel density estimation on a fixed uniform grid.
//!
//! Bandwidths follow the robust Silverman rule
//! `0.9 * min(s, IQR / 1.34) * n^(-1/5)`, with quartiles taken by linear
//! interpolation between order statistics. Samples with no dispersion get a
//! narrow relative fallback bandwidth so every window stays scoreable.
//!
//! Densities are stored as point values on a [`Grid`] and always integrate to
//! one under the trapezoid rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of grid points for reference densities.
pub const DEFAULT_GRID_POINTS: usize = 512;

/// Smallest grid the estimator accepts.
pub const MIN_GRID_POINTS: usize = 16;

/// Grid padding on each side of the sample range, in bandwidths.
pub const GRID_PADDING_BANDWIDTHS: f64 = 4.0;

const SILVERMAN_FACTOR: f64 = 0.9;
const IQR_TO_SD: f64 = 1.34;
const FALLBACK_RELATIVE: f64 = 0.01;
const FALLBACK_FLOOR: f64 = 1e-6;
const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// A non-empty set of finite observations of one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleVector {
    values: Vec<f64>,
}

impl SampleVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("sample list is empty".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample value {bad}")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Sample standard deviation (denominator `n - 1`); zero for a single value.
    pub fn std_dev(&self) -> f64 {
        let n = self.values.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.mean();
        let ss: f64 = self.values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// KDE smoothing parameter, always strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Bandwidth(f64);

impl Bandwidth {
    pub fn new(h: f64) -> Result<Self> {
        if h.is_finite() && h > 0.0 {
            Ok(Self(h))
        } else {
            Err(Error::InvalidInput(format!("bandwidth must be positive and finite, got {h}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Bandwidth {
    type Error = Error;

    fn try_from(h: f64) -> Result<Self> {
        Bandwidth::new(h)
    }
}

impl From<Bandwidth> for f64 {
    fn from(h: Bandwidth) -> f64 {
        h.0
    }
}

/// Uniform evaluation grid `lo, lo + d, ..., hi` with `n_points` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lo: f64,
    hi: f64,
    n_points: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, n_points: usize) -> Result<Self> {
        let grid = Self { lo, hi, n_points };
        grid.validate()?;
        Ok(grid)
    }

    /// Re-checks the invariants; used for grids that arrive by deserialization.
    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo >= self.hi {
            return Err(Error::InvalidInput(format!(
                "degenerate grid bounds [{}, {}]",
                self.lo, self.hi
            )));
        }
        if self.n_points < MIN_GRID_POINTS {
            return Err(Error::InvalidInput(format!(
                "grid needs at least {MIN_GRID_POINTS} points, got {}",
                self.n_points
            )));
        }
        if self.spacing().is_nan() || self.spacing() <= 0.0 {
            return Err(Error::InvalidInput("grid spacing underflows".into()));
        }
        Ok(())
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n_points - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |i| self.point(i))
    }

    /// Trapezoid quadrature weight of node `i`.
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n_points {
            0.5 * self.spacing()
        } else {
            self.spacing()
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    /// Trapezoid integral of point values sampled on this grid.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n_points);
        values
            .iter()
            .enumerate()
            .map(|(i, v)| self.weight(i) * v)
            .sum()
    }
}

/// Probability density sampled on a grid; trapezoid integral is one.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOnGrid {
    grid: Grid,
    values: Vec<f64>,
}

impl DensityOnGrid {
    /// Builds a density from non-negative point values, renormalizing them.
    pub fn from_values(grid: Grid, mut values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.n_points() {
            return Err(Error::InvalidInput(format!(
                "expected {} density values, got {}",
                grid.n_points(),
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidInput(format!("invalid density value {bad}")));
        }
        let total = grid.integrate(&values);
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::InvalidInput("density has no mass on the grid".into()));
        }
        values.iter_mut().for_each(|v| *v /= total);
        Ok(Self { grid, values })
    }

    /// Builds a density from per-node probability masses (divided by each
    /// node's quadrature weight). Masses are renormalized to sum to one.
    pub fn from_masses(grid: Grid, masses: &[f64]) -> Result<Self> {
        grid.validate()?;
        if masses.len() != grid.n_points() {
            return Err(Error::InvalidInput(format!(
                "expected {} masses, got {}",
                grid.n_points(),
                masses.len()
            )));
        }
        let values = masses
            .iter()
            .enumerate()
            .map(|(i, m)| m / grid.weight(i))
            .collect();
        Self::from_values(grid, values)
    }

    /// Accepts stored values that must already be normalized.
    pub(crate) fn from_normalized(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let density = Self::from_values(grid, values.clone())?;
        let total = grid.integrate(&values);
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "stored density integrates to {total}, not 1"
            )));
        }
        // keep the stored values bit-for-bit
        Ok(Self { values, ..density })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    /// Grid point holding the largest density value.
    pub fn mode(&self) -> f64 {
        let (idx, _) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        self.grid.point(idx)
    }
}

/// Density estimate together with the number of samples clipped to the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeOutput {
    pub density: DensityOnGrid,
    pub clipped: usize,
}

/// Quantile with linear interpolation between order statistics of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn fallback_bandwidth(mean: f64) -> f64 {
    (FALLBACK_RELATIVE * mean.abs().max(1.0)).max(FALLBACK_FLOOR)
}

/// Robust Silverman rule of thumb with a relative fallback for samples that
/// have no spread.
pub fn silverman_bandwidth(samples: &SampleVector) -> Bandwidth {
    let n = samples.len();
    let spread = if n < 2 {
        0.0
    } else {
        let mut sorted = samples.values().to_vec();
        sorted.sort_by(f64::total_cmp);
        let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
        samples.std_dev().min(iqr / IQR_TO_SD)
    };
    let h = if spread > 0.0 {
        SILVERMAN_FACTOR * spread * (n as f64).powf(-0.2)
    } else {
        fallback_bandwidth(samples.mean())
    };
    // A spread that underflows after scaling still has to yield h > 0.
    Bandwidth(if h > 0.0 { h } else { FALLBACK_FLOOR })
}

/// Grid spanning the samples padded by four bandwidths on each side.
pub fn build_grid(samples: &SampleVector, h: Bandwidth, n_points: usize) -> Result<Grid> {
    let pad = GRID_PADDING_BANDWIDTHS * h.value();
    Grid::new(samples.min() - pad, samples.max() + pad, n_points)
}

/// Gaussian KDE evaluated on `grid`.
///
/// Samples outside the grid are clipped to the nearest endpoint and counted.
/// A kernel narrower than the grid spacing cannot be sampled faithfully, so
/// its unit mass is split linearly between the two neighbouring nodes instead.
pub fn kde_on_grid(samples: &SampleVector, h: Bandwidth, grid: &Grid) -> Result<KdeOutput> {
    grid.validate()?;
    let n_points = grid.n_points();
    let spacing = grid.spacing();
    let h = h.value();
    let n = samples.len() as f64;
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());

    let mut values = vec![0.0; n_points];
    let mut clipped = 0;
    for &raw in samples.values() {
        let x = if grid.contains(raw) {
            raw
        } else {
            clipped += 1;
            grid.clamp(raw)
        };
        if h < spacing {
            let pos = ((x - grid.lo()) / spacing).clamp(0.0, (n_points - 1) as f64);
            let left = (pos.floor() as usize).min(n_points - 2);
            let frac = pos - left as f64;
            values[left] += (1.0 - frac) / (n * grid.weight(left));
            values[left + 1] += frac / (n * grid.weight(left + 1));
        } else {
            for (i, v) in values.iter_mut().enumerate() {
                let z = (grid.point(i) - x) / h;
                *v += norm * (-0.5 * z * z).exp();
            }
        }
    }

    let density = DensityOnGrid::from_values(*grid, values)?;
    debug_assert!((density.integral() - 1.0).abs() <= NORMALIZATION_TOLERANCE);
    Ok(KdeOutput { density, clipped })
}
