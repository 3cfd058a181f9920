//! Detection matching, interpolated average precision and depth-uncertainty
//! calibration.

use std::cmp::Ordering;
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::confidence::{iounc, Detection};
use crate::error::{Error, Result};
use crate::geometry::{iou, Box3D, IouKind};

/// Matching threshold used for a class when none is configured.
pub fn default_iou_threshold(class: &str) -> f64 {
    if class.eq_ignore_ascii_case("car") {
        0.7
    } else {
        0.5
    }
}

/// Detection indices sorted by descending `p_3d`, ties kept in input order.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].p_3d.partial_cmp(&dets[a].p_3d).unwrap_or(Ordering::Equal));
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Per detection: matched ground-truth index and the IoU of the match.
    pub detections: Vec<Option<(usize, f64)>>,
    /// Per ground truth: whether some detection claimed it.
    pub covered: Vec<bool>,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.detections.iter().filter(|m| m.is_some()).count()
    }
}

/// Greedy one-to-one matching in descending score order: each detection
/// takes the uncovered ground truth of highest IoU, if that IoU reaches
/// `threshold`. Inputs are assumed to belong to a single class.
pub fn match_detections(dets: &[Detection], gts: &[Box3D], threshold: f64, kind: IouKind) -> Result<MatchResult> {
    let mut result = MatchResult {
        detections: vec![None; dets.len()],
        covered: vec![false; gts.len()],
    };
    for i in score_order(dets) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if result.covered[g] {
                continue;
            }
            let v = iou(kind, &dets[i].bbox, gt)?;
            if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            result.covered[g] = true;
            result.detections[i] = Some((g, v));
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub score: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall after each detection of the score-sorted sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub num_gt: usize,
}

impl PrCurve {
    /// Builds the curve from `(score, is_true_positive)` pairs.
    pub fn from_scored(mut scored: Vec<(f64, bool)>, num_gt: usize) -> Self {
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
        let mut tp = 0usize;
        let points = scored
            .iter()
            .enumerate()
            .map(|(k, &(score, hit))| {
                tp += usize::from(hit);
                PrPoint {
                    score,
                    precision: tp as f64 / (k + 1) as f64,
                    recall: if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 },
                }
            })
            .collect();
        Self { points, num_gt }
    }

    /// Pools per-frame matches into one curve.
    pub fn from_frames(frames: &[(Vec<Detection>, Vec<Box3D>)], threshold: f64, kind: IouKind) -> Result<Self> {
        let mut scored = Vec::new();
        let mut num_gt = 0;
        for (dets, gts) in frames {
            let m = match_detections(dets, gts, threshold, kind)?;
            num_gt += gts.len();
            scored.extend(dets.iter().zip(&m.detections).map(|(d, hit)| (d.p_3d, hit.is_some())));
        }
        Ok(Self::from_scored(scored, num_gt))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApPoints {
    #[serde(rename = "11")]
    Eleven,
    #[serde(rename = "40")]
    Forty,
}

impl ApPoints {
    pub fn recalls(self) -> Vec<f64> {
        match self {
            Self::Eleven => (0..=10).map(|i| i as f64 / 10.0).collect(),
            Self::Forty => (1..=40).map(|i| i as f64 / 40.0).collect(),
        }
    }
}

/// Recall comparisons tolerate this much rounding in `tp / num_gt`.
const RECALL_EPS: f64 = 1e-12;

/// Mean interpolated precision over the recall points, in percent.
pub fn ap(curve: &PrCurve, points: ApPoints) -> f64 {
    let recalls = points.recalls();
    // suffix maximum of precision gives the interpolated envelope
    let mut envelope: Vec<(f64, f64)> = Vec::with_capacity(curve.points.len());
    let mut best = 0.0f64;
    for p in curve.points.iter().rev() {
        best = best.max(p.precision);
        envelope.push((p.recall, best));
    }
    envelope.reverse();
    let mut total = 0.0;
    let mut j = 0;
    for r in &recalls {
        while j < envelope.len() && envelope[j].0 < r - RECALL_EPS {
            j += 1;
        }
        if j < envelope.len() {
            total += envelope[j].1;
        }
    }
    100.0 * total / recalls.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    pub class: String,
    pub iou_threshold: f64,
    pub ap11: f64,
    pub ap40: f64,
    pub num_gt: usize,
    pub num_det: usize,
}

/// AP of one class over many frames. Ground truths of other classes and
/// detections of other classes are ignored.
pub fn evaluate_class(
    frames: &[(Vec<Detection>, Vec<(String, Box3D)>)],
    class: &str,
    threshold: f64,
    kind: IouKind,
) -> Result<ApSummary> {
    let filtered: Vec<(Vec<Detection>, Vec<Box3D>)> = frames
        .iter()
        .map(|(dets, gts)| {
            (
                dets.iter().filter(|d| d.class == class).cloned().collect(),
                gts.iter().filter(|(c, _)| c == class).map(|(_, b)| *b).collect(),
            )
        })
        .collect();
    let num_det = filtered.iter().map(|(d, _)| d.len()).sum();
    let curve = PrCurve::from_frames(&filtered, threshold, kind)?;
    Ok(ApSummary {
        class: class.to_string(),
        iou_threshold: threshold,
        ap11: ap(&curve, ApPoints::Eleven),
        ap40: ap(&curve, ApPoints::Forty),
        num_gt: curve.num_gt,
        num_det,
    })
}

/// What the calibration report needs to know about one object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthDiagnostic {
    pub mu_d: f64,
    pub sigma_d: f64,
    pub delta_d: f64,
    pub z_gt: f64,
}

/// Nominal coverage levels; the second is the mass of a Laplace within one
/// scale parameter of its mean.
pub const NOMINAL_LEVELS: [f64; 4] = [0.5, 0.632_120_558_828_557_7, 0.8, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub nominal: f64,
    pub empirical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub count: usize,
    pub coverage: Vec<CoverageRow>,
    /// Fraction of objects with `|z_gt - mu_d| <= delta_d`.
    pub delta_coverage: f64,
    /// Mean IoU-guided confidence; equals `delta_coverage` when calibrated.
    pub mean_iounc: f64,
    /// Spearman correlation of `sigma_d` with the absolute depth error.
    pub spearman: f64,
}

/// Half-width of the central Laplace interval holding mass `p`.
pub fn laplace_half_width(sigma: f64, p: f64) -> f64 {
    -sigma * (-p).ln_1p() / SQRT_2
}

pub fn calibration_report(diag: &[DepthDiagnostic]) -> Result<CalibrationReport> {
    if diag.is_empty() {
        return Err(Error::EmptyInput("calibration diagnostics"));
    }
    let n = diag.len() as f64;
    let coverage = NOMINAL_LEVELS
        .iter()
        .map(|&p| CoverageRow {
            nominal: p,
            empirical: diag
                .iter()
                .filter(|d| (d.z_gt - d.mu_d).abs() <= laplace_half_width(d.sigma_d, p))
                .count() as f64
                / n,
        })
        .collect();
    let delta_coverage = diag.iter().filter(|d| (d.z_gt - d.mu_d).abs() <= d.delta_d).count() as f64 / n;
    let mut mean_iounc = 0.0;
    for d in diag {
        mean_iounc += iounc(d.sigma_d, d.delta_d)?;
    }
    let sigmas: Vec<f64> = diag.iter().map(|d| d.sigma_d).collect();
    let errors: Vec<f64> = diag.iter().map(|d| (d.z_gt - d.mu_d).abs()).collect();
    Ok(CalibrationReport {
        count: diag.len(),
        coverage,
        delta_coverage,
        mean_iounc: mean_iounc / n,
        spearman: spearman(&sigmas, &errors)?,
    })
}

/// Ranks starting at 1, tied values sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; zero when either input has no rank variation.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("rank correlation input"));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        let (dx, dy) = (x - mean, y - mean);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok(sab / (saa * sbb).sqrt())
}

pub fn ap_csv(rows: &[ApSummary]) -> String {
    let mut s = String::from("class,iou_threshold,ap11,ap40\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.class, r.iou_threshold, r.ap11, r.ap40));
    }
    s
}

pub fn coverage_csv(report: &CalibrationReport) -> String {
    let mut s = String::from("nominal,empirical\n");
    for r in &report.coverage {
        s.push_str(&format!("{},{}\n", r.nominal, r.empirical));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gt_at(x: f64) -> Box3D {
        Box3D::new(x, 1.65, 20.0, 1.5, 1.6, 4.0, 0.0).unwrap()
    }

    fn det_at(x: f64, score: f64) -> Detection {
        Detection::new(gt_at(x), "Car", score, 1.0, None).unwrap()
    }

    #[test]
    fn default_thresholds() {
        assert_eq!(default_iou_threshold("Car"), 0.7);
        assert_eq!(default_iou_threshold("Pedestrian"), 0.5);
    }

    #[test]
    fn duplicates_all_match() {
        let gts = vec![gt_at(0.0), gt_at(10.0)];
        let dets = vec![det_at(0.0, 0.5), det_at(10.0, 0.9)];
        let m = match_detections(&dets, &gts, 0.7, IouKind::ThreeD).unwrap();
        assert_eq!(m.true_positives(), 2);
        assert!(m.covered.iter().all(|&c| c));
    }

    #[test]
    fn empty_detections() {
        let m = match_detections(&[], &[gt_at(0.0)], 0.7, IouKind::ThreeD).unwrap();
        assert_eq!(m.true_positives(), 0);
        assert_eq!(m.covered, vec![false]);
    }

    #[test]
    fn one_to_one() {
        let dets = vec![det_at(0.0, 0.4), det_at(0.0, 0.8)];
        let m = match_detections(&dets, &[gt_at(0.0)], 0.7, IouKind::ThreeD).unwrap();
        assert_eq!(m.detections[1].map(|(g, _)| g), Some(0));
        assert_eq!(m.detections[0], None);
    }

    #[test]
    fn ap_examples() {
        let perfect = PrCurve::from_scored(vec![(1.0, true)], 1);
        assert_eq!(ap(&perfect, ApPoints::Eleven), 100.0);
        assert_eq!(ap(&perfect, ApPoints::Forty), 100.0);
        let none = PrCurve::from_scored(vec![(0.9, false), (0.3, false)], 3);
        assert_eq!(ap(&none, ApPoints::Forty), 0.0);
        let worked = PrCurve::from_scored(vec![(0.9, true), (0.8, false), (0.7, true)], 2);
        let v = ap(&worked, ApPoints::Forty);
        assert!((v - 250.0 / 3.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn ranks_and_correlation() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[3.0, 1.0, 2.0]).unwrap(), 0.0);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(spearman(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn half_width_matches_mass() {
        for &p in &NOMINAL_LEVELS {
            let r = laplace_half_width(2.0, p);
            assert!((iounc(2.0, r).unwrap() - p).abs() < 1e-12);
        }
        assert!((laplace_half_width(SQRT_2, NOMINAL_LEVELS[1]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_rejects_empty() {
        assert!(calibration_report(&[]).is_err());
    }

    proptest! {
        #[test]
        fn ap_depends_only_on_ranking(hits in proptest::collection::vec((0.0..1.0f64, any::<bool>()), 1..60),
                                      extra in 0usize..5) {
            let num_gt = hits.iter().filter(|h| h.1).count() + extra;
            let a = PrCurve::from_scored(hits.clone(), num_gt);
            let b = PrCurve::from_scored(hits.iter().map(|&(s, h)| ((3.0 * s).exp() - 7.0, h)).collect(), num_gt);
            for pts in [ApPoints::Eleven, ApPoints::Forty] {
                let (x, y) = (ap(&a, pts), ap(&b, pts));
                prop_assert!((x - y).abs() < 1e-9);
                prop_assert!((0.0..=100.0).contains(&x));
            }
        }
    }
}
