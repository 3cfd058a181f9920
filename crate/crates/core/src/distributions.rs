//! Location-scale distributions parameterized by standard deviation.
//!
//! `sigma` is always the standard deviation. For the Laplace family the
//! scale is `b = sigma / sqrt(2)`, so the density at the mode is
//! `1 / (sqrt(2) * sigma)`.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{require_non_negative, Error, Result};

/// Laplace distribution. `sigma == 0` is allowed and denotes a point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceDist {
    pub mu: f64,
    pub sigma: f64,
}

impl LaplaceDist {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::Domain {
                what: "location",
                expected: "finite",
                value: mu,
            });
        }
        require_non_negative("standard deviation", sigma)?;
        Ok(Self { mu, sigma })
    }

    pub fn scale(&self) -> f64 {
        self.sigma / SQRT_2
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if self.sigma == 0.0 {
            return if x == self.mu { f64::INFINITY } else { 0.0 };
        }
        (-SQRT_2 * (x - self.mu).abs() / self.sigma).exp() / (SQRT_2 * self.sigma)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x == f64::INFINITY {
            return 1.0;
        }
        if x == f64::NEG_INFINITY {
            return 0.0;
        }
        if self.sigma == 0.0 {
            return if x >= self.mu { 1.0 } else { 0.0 };
        }
        let z = (x - self.mu) / self.scale();
        if z < 0.0 {
            0.5 * z.exp()
        } else {
            1.0 - 0.5 * (-z).exp()
        }
    }

    /// Probability mass on `[a, b]`.
    pub fn interval_prob(&self, a: f64, b: f64) -> Result<f64> {
        if a > b {
            return Err(Error::InvalidInterval { lo: a, hi: b });
        }
        if a == b {
            return Ok(0.0);
        }
        Ok(self.cdf(b) - self.cdf(a))
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // u in (-1/2, 1/2]; 1 - 2|u| in [0, 1)
        let u: f64 = 0.5 - rng.random::<f64>();
        let tail = 1.0 - 2.0 * u.abs();
        if tail <= 0.0 {
            return self.mu;
        }
        self.mu - self.scale() * u.signum() * tail.ln()
    }
}

/// Gaussian distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussDist {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussDist {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        crate::error::require_positive("standard deviation", sigma)?;
        Ok(Self { mu, sigma })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        (-0.5 * z * z).exp() / ((2.0 * PI).sqrt() * self.sigma)
    }

    /// Box-Muller draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        self.mu + self.sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}

/// Distribution family used when comparing a histogram to a reference shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Laplace,
    Gauss,
}

impl Family {
    /// Density of the standard (zero-mean, unit-std) member.
    pub fn standard_pdf(self, x: f64) -> f64 {
        match self {
            Family::Laplace => LaplaceDist { mu: 0.0, sigma: 1.0 }.pdf(x),
            Family::Gauss => GaussDist { mu: 0.0, sigma: 1.0 }.pdf(x),
        }
    }
}

/// Elementwise `(value - mu) / sigma`.
pub fn standardize(values: &[f64], mus: &[f64], sigmas: &[f64]) -> Result<Vec<f64>> {
    if values.len() != mus.len() {
        return Err(Error::LengthMismatch {
            left: values.len(),
            right: mus.len(),
        });
    }
    if values.len() != sigmas.len() {
        return Err(Error::LengthMismatch {
            left: values.len(),
            right: sigmas.len(),
        });
    }
    values
        .iter()
        .zip(mus)
        .zip(sigmas)
        .map(|((&v, &m), &s)| {
            crate::error::require_positive("standard deviation", s)?;
            Ok((v - m) / s)
        })
        .collect()
}

/// Normalized histogram on uniform bins. Samples outside the range are
/// dropped and the remaining mass renormalized to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualHistogram {
    pub edges: Vec<f64>,
    pub densities: Vec<f64>,
    /// In-range samples.
    pub count: usize,
    pub dropped: usize,
}

impl ResidualHistogram {
    pub const DEFAULT_BINS: usize = 100;
    pub const DEFAULT_RANGE: (f64, f64) = (-5.0, 5.0);

    pub fn from_samples(samples: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 {
            return Err(Error::EmptyInput("histogram bins"));
        }
        if !(lo < hi) {
            return Err(Error::InvalidInterval { lo, hi });
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        let mut dropped = 0;
        for &s in samples {
            if !(lo..=hi).contains(&s) {
                dropped += 1;
                continue;
            }
            let idx = (((s - lo) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        let count = samples.len() - dropped;
        if count == 0 {
            return Err(Error::EmptyInput("histogram samples in range"));
        }
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let densities = counts
            .iter()
            .map(|&c| c as f64 / (count as f64 * width))
            .collect();
        Ok(Self {
            edges,
            densities,
            count,
            dropped,
        })
    }

    pub fn with_defaults(samples: &[f64]) -> Result<Self> {
        let (lo, hi) = Self::DEFAULT_RANGE;
        Self::from_samples(samples, Self::DEFAULT_BINS, lo, hi)
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn bin_width(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }

    /// `sum(density * width)`; one for any histogram built by this type.
    pub fn total_mass(&self) -> f64 {
        self.densities
            .iter()
            .enumerate()
            .map(|(i, d)| d * self.bin_width(i))
            .sum()
    }
}

/// Mean absolute difference between bin densities and the standard member
/// of `family` evaluated at bin centers.
pub fn fit_error(h: &ResidualHistogram, family: Family) -> Result<f64> {
    if h.densities.is_empty() || h.count == 0 {
        return Err(Error::EmptyInput("histogram"));
    }
    let centers = h.centers();
    let total: f64 = h
        .densities
        .iter()
        .zip(&centers)
        .map(|(&d, &c)| (d - family.standard_pdf(c)).abs())
        .sum();
    Ok(total / h.densities.len() as f64)
}
