//! Detection confidence from depth uncertainty.
//!
//! The IoU-guided score is the probability mass of the Laplace depth belief
//! inside `[mu_d - delta_d, mu_d + delta_d]`, where `delta_d` is the largest
//! depth shift that keeps the shifted box above an IoU threshold with the
//! original. Larger objects tolerate larger shifts and therefore score higher
//! at equal uncertainty.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, require_probability, Error, Result};
use crate::geometry::{iou, shift_depth, Box3D, IouKind};

/// A scored 3D detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub class: String,
    pub p_2d: f64,
    pub p_3d_given_2d: f64,
    pub p_3d: f64,
    /// Depth standard deviation in meters, when known.
    pub sigma_d: Option<f64>,
}

impl Detection {
    pub fn new(
        bbox: Box3D,
        class: impl Into<String>,
        p_2d: f64,
        p_3d_given_2d: f64,
        sigma_d: Option<f64>,
    ) -> Result<Self> {
        let p_3d = fuse_scores(p_2d, p_3d_given_2d)?;
        Ok(Self {
            bbox,
            class: class.into(),
            p_2d,
            p_3d_given_2d,
            p_3d,
            sigma_d,
        })
    }
}

/// Parameters of the `delta_d` search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IouncConfig {
    /// IoU threshold in `(0, 1)`.
    pub th: f64,
    pub iou_kind: IouKind,
    /// Bisection stops once the bracket is narrower than this (meters).
    pub tolerance: f64,
    /// First bracketing step (meters).
    pub initial_step: f64,
    /// Search cap as a multiple of the box BEV diagonal.
    pub cap_factor: f64,
}

impl Default for IouncConfig {
    fn default() -> Self {
        Self {
            th: 0.7,
            iou_kind: IouKind::ThreeD,
            tolerance: 1e-4,
            initial_step: 0.125,
            cap_factor: 10.0,
        }
    }
}

impl IouncConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.th > 0.0 && self.th < 1.0) {
            return Err(Error::Domain {
                what: "IoU threshold",
                expected: "in (0, 1)",
                value: self.th,
            });
        }
        require_positive("search tolerance", self.tolerance)?;
        require_positive("initial search step", self.initial_step)?;
        require_positive("search cap factor", self.cap_factor)?;
        Ok(())
    }
}

/// Largest depth shift `d' >= 0` with `IoU(shift(b, d'), b) >= th`.
///
/// IoU is non-increasing in `|d'|` for a pure depth translation, so the
/// boundary is bracketed by doubling and refined by bisection. The returned
/// value always satisfies the threshold; `value + tolerance` does not.
pub fn delta_d(b: &Box3D, cfg: &IouncConfig) -> Result<f64> {
    cfg.validate()?;
    let passes = |d: f64| -> Result<bool> { Ok(iou(cfg.iou_kind, &shift_depth(b, d), b)? >= cfg.th) };
    // also surfaces degenerate boxes before searching
    passes(0.0)?;
    let cap = cfg.cap_factor * b.diagonal();
    let mut lo = 0.0;
    let mut hi = cfg.initial_step.min(cap);
    while passes(hi)? {
        lo = hi;
        if hi >= cap {
            return Ok(cap);
        }
        hi = (2.0 * hi).min(cap);
    }
    while hi - lo > cfg.tolerance {
        let mid = 0.5 * (lo + hi);
        if passes(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// IoU-guided uncertainty confidence `1 - exp(-sqrt(2) * delta_d / sigma_d)`.
pub fn iounc(sigma_d: f64, delta_d: f64) -> Result<f64> {
    require_positive("depth std", sigma_d)?;
    if !(delta_d >= 0.0) {
        return Err(Error::Domain {
            what: "delta_d",
            expected: "non-negative",
            value: delta_d,
        });
    }
    Ok(-(-SQRT_2 * delta_d / sigma_d).exp_m1())
}

/// Legacy confidence `exp(-sigma_d)`.
pub fn vanilla_unc(sigma_d: f64) -> f64 {
    (-sigma_d.max(0.0)).exp()
}

pub fn fuse_scores(p_2d: f64, p_3d_given_2d: f64) -> Result<f64> {
    require_probability("2D confidence", p_2d)?;
    require_probability("conditional 3D confidence", p_3d_given_2d)?;
    Ok(p_2d * p_3d_given_2d)
}

/// How the depth-conditioned confidence of a detection is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    Iounc,
    VanillaUnc,
    /// `p_3d|2d = 1`: rank by 2D confidence alone.
    Constant,
}

impl ScoreMethod {
    pub const ALL: [ScoreMethod; 3] = [ScoreMethod::Iounc, ScoreMethod::VanillaUnc, ScoreMethod::Constant];

    pub fn name(self) -> &'static str {
        match self {
            ScoreMethod::Iounc => "iounc",
            ScoreMethod::VanillaUnc => "vanilla_unc",
            ScoreMethod::Constant => "constant",
        }
    }

    pub fn needs_sigma(self) -> bool {
        !matches!(self, ScoreMethod::Constant)
    }

    /// Conditional confidence for a box with depth std `sigma_d`.
    pub fn conditional(self, b: &Box3D, sigma_d: Option<f64>, cfg: &IouncConfig) -> Result<f64> {
        let sigma = || {
            sigma_d.ok_or_else(|| Error::Config(format!("method `{}` requires sigma_d", self.name())))
        };
        match self {
            ScoreMethod::Iounc => iounc(sigma()?, delta_d(b, cfg)?),
            ScoreMethod::VanillaUnc => Ok(vanilla_unc(sigma()?)),
            ScoreMethod::Constant => Ok(1.0),
        }
    }
}

impl std::str::FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iounc" => Ok(ScoreMethod::Iounc),
            "vanilla_unc" | "unc" | "vanilla" => Ok(ScoreMethod::VanillaUnc),
            "constant" => Ok(ScoreMethod::Constant),
            other => Err(Error::Config(format!("unknown score method `{other}`"))),
        }
    }
}

/// Class-aware greedy 3D NMS.
///
/// Detections are visited by descending `p_3d` (stable for ties); one is
/// dropped when its IoU with an already kept detection of the same class
/// exceeds `iou_threshold`. Kept detections are returned in visit order.
pub fn nms3d(dets: &[Detection], iou_threshold: f64, kind: IouKind) -> Result<Vec<Detection>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].p_3d.total_cmp(&dets[a].p_3d));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let mut suppressed = false;
        for &k in &kept {
            if dets[k].class == dets[i].class && iou(kind, &dets[k].bbox, &dets[i].bbox)? > iou_threshold {
                suppressed = true;
                break;
            }
        }
        if !suppressed {
            kept.push(i);
        }
    }
    Ok(kept.into_iter().map(|i| dets[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::LaplaceDist;
    use proptest::prelude::*;

    fn car(z: f64, yaw: f64) -> Box3D {
        // width 4.0 along depth at yaw 0 for the closed-form checks
        Box3D::new(0.0, 1.6, z, 1.5, 4.0, 1.6, yaw).unwrap()
    }

    #[test]
    fn delta_d_closed_form() {
        let b = car(30.0, 0.0);
        let d = delta_d(&b, &IouncConfig::default()).unwrap();
        assert!((d - 4.0 * 0.3 / 1.7).abs() < 1e-3, "{d}");
        let big = Box3D { w: 8.0, ..b };
        let d2 = delta_d(&big, &IouncConfig::default()).unwrap();
        assert!((d2 - 2.0 * d).abs() < 2e-3);
    }

    #[test]
    fn delta_d_bracket_contract() {
        let cfg = IouncConfig::default();
        for yaw in [0.0, 0.4, 1.1, 2.9] {
            let b = car(20.0, yaw);
            let d = delta_d(&b, &cfg).unwrap();
            let at = iou(cfg.iou_kind, &shift_depth(&b, d), &b).unwrap();
            let past = iou(cfg.iou_kind, &shift_depth(&b, d + cfg.tolerance), &b).unwrap();
            assert!(at >= cfg.th && at - cfg.th < 1e-3, "{at}");
            assert!(past < cfg.th);
        }
    }

    #[test]
    fn delta_d_threshold_limits() {
        let b = car(20.0, 0.3);
        let tight = IouncConfig { th: 0.999_999, ..Default::default() };
        assert!(delta_d(&b, &tight).unwrap() < 1e-3);
        let loose = IouncConfig { th: 0.1, ..Default::default() };
        let mid = IouncConfig::default();
        assert!(delta_d(&b, &loose).unwrap() > delta_d(&b, &mid).unwrap());
        assert!(delta_d(&b, &IouncConfig { th: 1.0, ..Default::default() }).is_err());
        let bev = IouncConfig { iou_kind: IouKind::Bev, ..Default::default() };
        let d = delta_d(&car(20.0, 0.0), &bev).unwrap();
        assert!((d - 4.0 * 0.3 / 1.7).abs() < 1e-3);
    }

    #[test]
    fn iounc_examples() {
        assert_eq!(iounc(1.0, 0.0).unwrap(), 0.0);
        assert!(iounc(1e-9, 0.5).unwrap() > 1.0 - 1e-12);
        assert!((iounc(1.0, 0.70588).unwrap() - 0.6315).abs() < 1e-4);
        assert!(iounc(0.0, 1.0).is_err());
        assert!(iounc(1.0, -0.1).is_err());
    }

    #[test]
    fn vanilla_unc_examples() {
        assert_eq!(vanilla_unc(0.0), 1.0);
        assert!((vanilla_unc(1.0) - 0.367879).abs() < 1e-6);
        assert!(vanilla_unc(2.0) < vanilla_unc(1.9));
    }

    #[test]
    fn fuse_examples() {
        assert_eq!(fuse_scores(1.0, 0.3).unwrap(), 0.3);
        assert!((fuse_scores(0.9, 0.5).unwrap() - 0.45).abs() < 1e-15);
        assert_eq!(fuse_scores(0.0, 0.3).unwrap(), 0.0);
        assert!(fuse_scores(1.2, 0.3).is_err());
        assert!(fuse_scores(0.5, -0.1).is_err());
    }

    fn det(x: f64, score: f64) -> Detection {
        let b = Box3D::new(x, 1.6, 20.0, 1.5, 1.6, 4.0, 0.0).unwrap();
        Detection::new(b, "Car", score, 1.0, None).unwrap()
    }

    #[test]
    fn nms_duplicates_and_disjoint() {
        let kept = nms3d(&[det(0.0, 0.8), det(0.0, 0.9)], 0.25, IouKind::Bev).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].p_3d, 0.9);
        let kept = nms3d(&[det(0.0, 0.8), det(10.0, 0.9)], 0.25, IouKind::Bev).unwrap();
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn nms_is_class_aware() {
        let mut other = det(0.0, 0.5);
        other.class = "Van".into();
        let kept = nms3d(&[det(0.0, 0.9), other], 0.25, IouKind::Bev).unwrap();
        assert_eq!(kept.len(), 2);
    }

    /// Brute-force greedy reference: repeatedly take the best remaining
    /// candidate and strike everything it overlaps.
    fn greedy_reference(dets: &[Detection], t: f64) -> Vec<usize> {
        let mut alive: Vec<usize> = (0..dets.len()).collect();
        let mut out = Vec::new();
        while !alive.is_empty() {
            let best = *alive
                .iter()
                .max_by(|&&a, &&b| dets[a].p_3d.total_cmp(&dets[b].p_3d).then(b.cmp(&a)))
                .unwrap();
            out.push(best);
            alive.retain(|&j| {
                j != best
                    && !(dets[j].class == dets[best].class
                        && crate::geometry::bev_iou(&dets[j].bbox, &dets[best].bbox).unwrap() > t)
            });
        }
        out
    }

    #[test]
    fn nms_chain() {
        // A-B and B-C overlap above t, A-C below: greedy keeps A and C
        let dets = vec![det(0.0, 0.9), det(1.2, 0.8), det(2.5, 0.7)];
        let t = 0.25;
        let ab = crate::geometry::bev_iou(&dets[0].bbox, &dets[1].bbox).unwrap();
        let ac = crate::geometry::bev_iou(&dets[0].bbox, &dets[2].bbox).unwrap();
        assert!(ab > t && ac < t);
        let kept = nms3d(&dets, t, IouKind::Bev).unwrap();
        let xs: Vec<f64> = kept.iter().map(|d| d.bbox.x).collect();
        assert_eq!(xs, vec![0.0, 2.5]);
        let reference: Vec<f64> = greedy_reference(&dets, t).iter().map(|&i| dets[i].bbox.x).collect();
        assert_eq!(xs, reference);
    }

    #[test]
    fn nms_stable_ties() {
        let kept = nms3d(&[det(0.0, 0.5), det(0.1, 0.5)], 0.25, IouKind::Bev).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].bbox.x, 0.0);
    }

    #[test]
    fn method_requires_sigma() {
        let b = car(10.0, 0.0);
        let cfg = IouncConfig::default();
        assert!(ScoreMethod::Iounc.conditional(&b, None, &cfg).is_err());
        assert!(ScoreMethod::VanillaUnc.conditional(&b, None, &cfg).is_err());
        assert_eq!(ScoreMethod::Constant.conditional(&b, None, &cfg).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn iounc_is_interval_mass(sigma in 0.01..30.0f64, dd in 0.0..10.0f64, mu in 1.0..80.0f64) {
            let p = iounc(sigma, dd).unwrap();
            let q = LaplaceDist::new(mu, sigma).unwrap().interval_prob(mu - dd, mu + dd).unwrap();
            prop_assert!((p - q).abs() < 1e-12);
        }

        #[test]
        fn iounc_monotone(sigma in 0.05..20.0f64, dd in 0.01..5.0f64, bump in 0.01..1.0f64) {
            // keep the exponent where the result is not rounded to one
            prop_assume!(SQRT_2 * (dd + bump) / sigma < 30.0);
            prop_assert!(iounc(sigma + bump, dd).unwrap() < iounc(sigma, dd).unwrap());
            prop_assert!(iounc(sigma, dd + bump).unwrap() > iounc(sigma, dd).unwrap());
        }

        #[test]
        fn nms_matches_reference(xs in proptest::collection::vec((0.0..6.0f64, 0.0..1.0f64), 1..7)) {
            let dets: Vec<Detection> = xs.iter().map(|&(x, s)| det(x, s)).collect();
            let kept = nms3d(&dets, 0.25, IouKind::Bev).unwrap();
            let reference: Vec<Detection> =
                greedy_reference(&dets, 0.25).iter().map(|&i| dets[i].clone()).collect();
            prop_assert_eq!(kept, reference);
        }
    }
}
