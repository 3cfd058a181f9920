mod common;

use common::{aligned_iou3d, corners, raster_iou, Aligned};
use gupkit::confidence::{delta_d, IouncConfig};
use gupkit::geometry::{bev_iou, iou3d, Box3D, IouKind};
use proptest::prelude::*;

fn boxes_strategy() -> impl Strategy<Value = (Box3D, Box3D)> {
    let dims = (0.5..3.0f64, 0.5..5.0f64, -3.2..3.2f64);
    (dims.clone(), dims, -2.0..2.0f64, -2.0..2.0f64).prop_map(|((wa, la, ya), (wb, lb, yb), dx, dz)| {
        (
            Box3D::new(0.0, 1.0, 20.0, 1.5, wa, la, ya).unwrap(),
            Box3D::new(dx, 1.0, 20.0 + dz, 1.5, wb, lb, yb).unwrap(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clipping_matches_raster((a, b) in boxes_strategy()) {
        let pa = corners(a.x, a.z, a.w, a.l, a.yaw);
        let pb = corners(b.x, b.z, b.w, b.l, b.yaw);
        let oracle = raster_iou(&pa, &pb, 2e-3);
        let got = bev_iou(&a, &b).unwrap();
        prop_assert!((got - oracle).abs() < 2e-3, "clip {got} raster {oracle}");
    }

    #[test]
    fn aligned_3d_matches_closed_form(dx in -3.0..3.0f64, dy in -1.5..1.5f64, dz in -4.0..4.0f64,
                                      h in 0.5..2.0f64, w in 0.5..2.0f64, l in 1.0..5.0f64) {
        let a = Aligned { x: 0.0, y: 1.6, z: 30.0, h: 1.5, w: 1.6, l: 4.0 };
        let b = Aligned { x: dx, y: 1.6 + dy, z: 30.0 + dz, h, w, l };
        let ba = Box3D::new(a.x, a.y, a.z, a.h, a.w, a.l, 0.0).unwrap();
        let bb = Box3D::new(b.x, b.y, b.z, b.h, b.w, b.l, 0.0).unwrap();
        prop_assert!((iou3d(&ba, &bb).unwrap() - aligned_iou3d(&a, &b)).abs() < 1e-12);
    }
}

#[test]
fn delta_d_closed_form_for_aligned_boxes() {
    for &e in &[2.0, 4.0, 8.0, 16.0] {
        for &th in &[0.5, 0.7, 0.9] {
            let b = Box3D::new(0.0, 1.6, 40.0, 1.5, e, 3.0, 0.0).unwrap();
            for kind in [IouKind::ThreeD, IouKind::Bev] {
                let cfg = IouncConfig { th, iou_kind: kind, ..IouncConfig::default() };
                let dd = delta_d(&b, &cfg).unwrap();
                assert!((dd - e * (1.0 - th) / (1.0 + th)).abs() < 1e-3, "e {e} th {th}: {dd}");
            }
        }
    }
}

#[test]
fn raster_oracle_sanity() {
    let sq = corners(0.0, 0.0, 2.0, 2.0, 0.0);
    let shifted = corners(1.0, 0.0, 2.0, 2.0, 0.0);
    assert!((raster_iou(&sq, &shifted, 1e-3) - 1.0 / 3.0).abs() < 1e-3);
    let rotated = corners(0.0, 0.0, 2.0, 2.0, std::f64::consts::FRAC_PI_4);
    // square against itself rotated by 45 degrees: regular octagon overlap
    let octagon = 8.0 * (std::f64::consts::SQRT_2 - 1.0);
    let expected = octagon / (8.0 - octagon);
    assert!((raster_iou(&sq, &rotated, 1e-3) - expected).abs() < 1e-3);
}
