//! Camera model, perspective projection and oriented 3D box geometry.
//!
//! Boxes follow the KITTI camera convention: `x` right, `y` down, `z` forward
//! (depth). A box location is the center of its bottom face, so the box spans
//! `y - h ..= y` vertically, and `yaw` rotates about the vertical axis. The
//! bird's-eye-view (BEV) plane is `(x, z)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};

/// Vertices closer than this are merged after clipping (meters).
pub const VERTEX_EPS: f64 = 1e-9;
/// Intersection areas below this are treated as zero (square meters).
pub const AREA_EPS: f64 = 1e-12;

/// Pinhole intrinsics: focal length and principal point, all in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub f: f64,
    pub c_u: f64,
    pub c_v: f64,
}

impl CameraIntrinsics {
    pub fn new(f: f64, c_u: f64, c_v: f64) -> Result<Self> {
        require_positive("focal length", f)?;
        Ok(Self { f, c_u, c_v })
    }

    /// Pixel coordinates of a camera-frame point.
    pub fn project_point(&self, p: [f64; 3]) -> Result<[f64; 2]> {
        require_positive("point depth", p[2])?;
        Ok([
            self.f * p[0] / p[2] + self.c_u,
            self.f * p[1] / p[2] + self.c_v,
        ])
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            f: 700.0,
            c_u: 620.0,
            c_v: 190.0,
        }
    }
}

/// Depth from the pinhole relation `d = f * h3d / h2d`.
pub fn project_depth(f: f64, h3d: f64, h2d: f64) -> Result<f64> {
    require_positive("focal length", f)?;
    require_positive("3D height", h3d)?;
    require_positive("2D height", h2d)?;
    Ok(f * h3d / h2d)
}

/// Back-projects a pixel onto the `z = 1` plane.
pub fn backproject_ray(u: f64, v: f64, k: &CameraIntrinsics) -> [f64; 3] {
    [(u - k.c_u) / k.f, (v - k.c_v) / k.f, 1.0]
}

/// Camera-frame point at `depth` along the ray through pixel `(u, v)`.
pub fn decode_center(u: f64, v: f64, depth: f64, k: &CameraIntrinsics) -> Result<[f64; 3]> {
    require_positive("depth", depth)?;
    let [x, y, _] = backproject_ray(u, v, k);
    Ok([x * depth, y * depth, depth])
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Oriented 3D box. `(x, y, z)` is the bottom-face center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub h: f64,
    pub w: f64,
    pub l: f64,
    pub yaw: f64,
}

impl Box3D {
    pub fn new(x: f64, y: f64, z: f64, h: f64, w: f64, l: f64, yaw: f64) -> Result<Self> {
        require_positive("box height", h)?;
        require_positive("box width", w)?;
        require_positive("box length", l)?;
        for (what, v) in [("box x", x), ("box y", y), ("box z", z), ("box yaw", yaw)] {
            if !v.is_finite() {
                return Err(Error::Domain {
                    what,
                    expected: "finite",
                    value: v,
                });
            }
        }
        Ok(Self {
            x,
            y,
            z,
            h,
            w,
            l,
            yaw: normalize_angle(yaw),
        })
    }

    pub fn volume(&self) -> f64 {
        self.h * self.w * self.l
    }

    /// Center of the box volume (not the bottom face).
    pub fn center(&self) -> [f64; 3] {
        [self.x, self.y - 0.5 * self.h, self.z]
    }

    /// Length of the BEV diagonal.
    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.l)
    }

    /// Extent of the footprint projected onto the depth axis.
    pub fn depth_extent(&self) -> f64 {
        self.l * self.yaw.sin().abs() + self.w * self.yaw.cos().abs()
    }

    /// Counter-clockwise BEV footprint in `(x, z)`.
    pub fn footprint(&self) -> Polygon2D {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (0.5 * self.l, 0.5 * self.w);
        let pts = [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)]
            .iter()
            .map(|&(dx, dz)| [self.x + c * dx + s * dz, self.z - s * dx + c * dz])
            .collect();
        Polygon2D::from_convex(pts)
    }
}

/// The eight corners of a box. The first four lie on the bottom face
/// (`y = b.y`), the last four on the top face (`y = b.y - h`).
pub fn box_corners(b: &Box3D) -> [[f64; 3]; 8] {
    let (s, c) = b.yaw.sin_cos();
    let (hl, hw) = (0.5 * b.l, 0.5 * b.w);
    let local = [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)];
    let mut out = [[0.0; 3]; 8];
    for (i, &(dx, dz)) in local.iter().enumerate() {
        let x = b.x + c * dx + s * dz;
        let z = b.z - s * dx + c * dz;
        out[i] = [x, b.y, z];
        out[i + 4] = [x, b.y - b.h, z];
    }
    out
}

/// Same box moved `d_prime` meters along the depth axis.
pub fn shift_depth(b: &Box3D, d_prime: f64) -> Box3D {
    Box3D {
        z: b.z + d_prime,
        ..*b
    }
}

/// Convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon2D {
    vertices: Vec<[f64; 2]>,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn signed_area(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let (p, q) = (pts[i], pts[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
        * 0.5
}

fn dedup_vertices(pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(pts.len());
    for p in pts {
        if let Some(last) = out.last() {
            if (p[0] - last[0]).abs() <= VERTEX_EPS && (p[1] - last[1]).abs() <= VERTEX_EPS {
                continue;
            }
        }
        out.push(p);
    }
    while out.len() > 1 {
        let (first, last) = (out[0], out[out.len() - 1]);
        if (first[0] - last[0]).abs() <= VERTEX_EPS && (first[1] - last[1]).abs() <= VERTEX_EPS {
            out.pop();
        } else {
            break;
        }
    }
    out
}

impl Polygon2D {
    /// Builds a polygon from the vertices of a convex shape in either winding.
    pub fn from_convex(mut vertices: Vec<[f64; 2]>) -> Self {
        if signed_area(&vertices) < 0.0 {
            vertices.reverse();
        }
        Self { vertices }
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        if self.vertices.len() < 3 {
            return 0.0;
        }
        signed_area(&self.vertices).abs()
    }

    /// Sutherland-Hodgman clip of `self` against the convex polygon `clip`.
    pub fn clip(&self, clip: &Polygon2D) -> Polygon2D {
        let mut output = self.vertices.clone();
        let m = clip.vertices.len();
        for i in 0..m {
            if output.is_empty() {
                break;
            }
            let a = clip.vertices[i];
            let b = clip.vertices[(i + 1) % m];
            let input = std::mem::take(&mut output);
            let n = input.len();
            for j in 0..n {
                let p = input[j];
                let q = input[(j + 1) % n];
                let p_in = cross(a, b, p) >= -VERTEX_EPS;
                let q_in = cross(a, b, q) >= -VERTEX_EPS;
                if p_in {
                    output.push(p);
                }
                if p_in != q_in {
                    let e = [b[0] - a[0], b[1] - a[1]];
                    let d = [q[0] - p[0], q[1] - p[1]];
                    let denom = e[0] * d[1] - e[1] * d[0];
                    if denom.abs() > f64::EPSILON {
                        let t = (e[0] * (a[1] - p[1]) - e[1] * (a[0] - p[0])) / denom;
                        output.push([p[0] + t * d[0], p[1] + t * d[1]]);
                    }
                }
            }
        }
        Polygon2D {
            vertices: dedup_vertices(output),
        }
    }

    /// Area of the intersection with another convex polygon, zero below [`AREA_EPS`].
    pub fn intersection_area(&self, other: &Polygon2D) -> f64 {
        let area = self.clip(other).area();
        if area < AREA_EPS {
            0.0
        } else {
            area
        }
    }
}

/// Which overlap measure an IoU refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouKind {
    #[default]
    #[serde(rename = "3d")]
    ThreeD,
    Bev,
}

impl std::str::FromStr for IouKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "3d" => Ok(IouKind::ThreeD),
            "bev" => Ok(IouKind::Bev),
            other => Err(Error::Config(format!("unknown IoU kind `{other}`"))),
        }
    }
}

fn checked_footprint(b: &Box3D) -> Result<Polygon2D> {
    let fp = b.footprint();
    if fp.area() < AREA_EPS {
        return Err(Error::DegenerateBox(format!(
            "footprint area {} below {AREA_EPS}",
            fp.area()
        )));
    }
    Ok(fp)
}

/// Footprint intersection area of two boxes.
pub fn bev_intersection(a: &Box3D, b: &Box3D) -> Result<f64> {
    let (fa, fb) = (checked_footprint(a)?, checked_footprint(b)?);
    Ok(fa.intersection_area(&fb))
}

/// IoU of the BEV footprints.
pub fn bev_iou(a: &Box3D, b: &Box3D) -> Result<f64> {
    let (fa, fb) = (checked_footprint(a)?, checked_footprint(b)?);
    let inter = fa.intersection_area(&fb);
    let union = fa.area() + fb.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Volumetric IoU of two yaw-only boxes.
pub fn iou3d(a: &Box3D, b: &Box3D) -> Result<f64> {
    let (fa, fb) = (checked_footprint(a)?, checked_footprint(b)?);
    let (va, vb) = (fa.area() * a.h, fb.area() * b.h);
    if va < AREA_EPS || vb < AREA_EPS {
        return Err(Error::DegenerateBox("volume below tolerance".into()));
    }
    let overlap = (a.y.min(b.y) - (a.y - a.h).max(b.y - b.h)).max(0.0);
    if overlap == 0.0 {
        return Ok(0.0);
    }
    let inter = fa.intersection_area(&fb) * overlap;
    Ok((inter / (va + vb - inter)).clamp(0.0, 1.0))
}

pub fn iou(kind: IouKind, a: &Box3D, b: &Box3D) -> Result<f64> {
    match kind {
        IouKind::ThreeD => iou3d(a, b),
        IouKind::Bev => bev_iou(a, b),
    }
}
