//! Probabilistic perspective projection.
//!
//! 2D and 3D object heights are Laplace beliefs; the projected depth
//! `D = f * H3d / H2d` is summarized by its first-order mean and standard
//! deviation, then corrected by an additive learned bias. The result is
//! represented as a Laplace depth belief `(mu_d, sigma_d)`.

use serde::{Deserialize, Serialize};

use crate::distributions::LaplaceDist;
use crate::error::{require_non_negative, require_positive, Error, Result};
use crate::exec::{substream, Execution};

/// Beliefs over the 2D (pixels) and 3D (meters) object heights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightBeliefs {
    pub h2d: LaplaceDist,
    pub h3d: LaplaceDist,
}

impl HeightBeliefs {
    pub fn new(h2d: LaplaceDist, h3d: LaplaceDist) -> Result<Self> {
        require_positive("2D height mean", h2d.mu)?;
        require_positive("3D height mean", h3d.mu)?;
        Ok(Self { h2d, h3d })
    }
}

/// Mean and standard deviation of a depth estimate (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthEstimate {
    pub mu: f64,
    pub sigma: f64,
}

/// Projected depth, bias stream and their combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthBelief {
    pub mu_p: f64,
    pub sigma_p: f64,
    pub mu_b: f64,
    pub sigma_b: f64,
    pub mu_d: f64,
    pub sigma_d: f64,
}

impl DepthBelief {
    pub fn as_laplace(&self) -> LaplaceDist {
        LaplaceDist {
            mu: self.mu_d,
            sigma: self.sigma_d,
        }
    }
}

/// First-order propagation of both height beliefs through `f * h3d / h2d`.
pub fn propagate(hb: &HeightBeliefs, f: f64) -> Result<DepthEstimate> {
    require_positive("focal length", f)?;
    let (h2d, h3d) = (hb.h2d, hb.h3d);
    require_positive("2D height mean", h2d.mu)?;
    require_positive("3D height mean", h3d.mu)?;
    let mu = f * h3d.mu / h2d.mu;
    let rel2 = h2d.sigma / h2d.mu;
    let rel3 = h3d.sigma / h3d.mu;
    Ok(DepthEstimate {
        mu,
        sigma: mu * rel2.hypot(rel3),
    })
}

/// Projection treating the 2D height as exact; only the 3D height
/// uncertainty reaches the depth.
pub fn legacy_geu(h2d: f64, h3d: &LaplaceDist, f: f64) -> Result<DepthEstimate> {
    require_positive("2D height", h2d)?;
    require_positive("focal length", f)?;
    Ok(DepthEstimate {
        mu: f * h3d.mu / h2d,
        sigma: f * h3d.sigma / h2d,
    })
}

/// Adds the learned bias stream to a projected depth.
pub fn combine_bias(projected: DepthEstimate, mu_b: f64, sigma_b: f64) -> Result<DepthBelief> {
    require_non_negative("projected depth std", projected.sigma)?;
    require_non_negative("bias std", sigma_b)?;
    Ok(DepthBelief {
        mu_p: projected.mu,
        sigma_p: projected.sigma,
        mu_b,
        sigma_b,
        mu_d: projected.mu + mu_b,
        sigma_d: projected.sigma.hypot(sigma_b),
    })
}

/// Empirical moments of simulated projected depths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McStats {
    pub mean: f64,
    pub std: f64,
    pub samples: usize,
    /// Draws discarded by the small-denominator guard.
    pub rejected: usize,
}

impl McStats {
    pub fn rejection_rate(&self) -> f64 {
        self.rejected as f64 / (self.samples + self.rejected) as f64
    }
}

/// Number of independent substreams a Monte-Carlo run is split into.
/// Fixed so results do not depend on the thread count.
pub const MC_SHARDS: usize = 64;
/// 2D height draws at or below this fraction of the mean are redrawn.
pub const MC_TAIL_GUARD: f64 = 0.1;

#[derive(Clone, Copy)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
    rejected: usize,
}

impl Moments {
    fn merge(self, o: Moments) -> Moments {
        if self.n == 0 {
            return Moments {
                rejected: self.rejected + o.rejected,
                ..o
            };
        }
        if o.n == 0 {
            return Moments {
                rejected: self.rejected + o.rejected,
                ..self
            };
        }
        let n = self.n + o.n;
        let delta = o.mean - self.mean;
        let mean = self.mean + delta * o.n as f64 / n as f64;
        let m2 = self.m2 + o.m2 + delta * delta * self.n as f64 * o.n as f64 / n as f64;
        Moments {
            n,
            mean,
            m2,
            rejected: self.rejected + o.rejected,
        }
    }
}

/// Monte-Carlo estimate of the projected-depth moments.
pub fn mc_oracle(
    hb: &HeightBeliefs,
    f: f64,
    n: usize,
    seed: u64,
    exec: Execution,
) -> Result<McStats> {
    require_positive("focal length", f)?;
    if n < 2 {
        return Err(Error::EmptyInput("Monte-Carlo sample count below 2"));
    }
    let floor = MC_TAIL_GUARD * hb.h2d.mu;
    let shards = exec.map_indexed(MC_SHARDS, |shard| {
        let count = n / MC_SHARDS + usize::from(shard < n % MC_SHARDS);
        let mut rng = substream(seed, shard as u64);
        let mut m = Moments {
            n: 0,
            mean: 0.0,
            m2: 0.0,
            rejected: 0,
        };
        while m.n < count {
            let h2 = hb.h2d.sample(&mut rng);
            let h3 = hb.h3d.sample(&mut rng);
            if h2 <= floor {
                m.rejected += 1;
                continue;
            }
            let d = f * h3 / h2;
            m.n += 1;
            let delta = d - m.mean;
            m.mean += delta / m.n as f64;
            m.m2 += delta * (d - m.mean);
        }
        m
    });
    let total = shards
        .into_iter()
        .reduce(Moments::merge)
        .expect("at least one shard");
    Ok(McStats {
        mean: total.mean,
        std: (total.m2 / (total.n - 1) as f64).sqrt(),
        samples: total.n,
        rejected: total.rejected,
    })
}
