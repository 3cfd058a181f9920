//! Independent oracles shared by the integration tests. Nothing here calls
//! into the geometry or evaluation code it is used to check.
#![allow(dead_code)]

use std::process::Command;

/// Footprint corners of a KITTI box at `(x, z)` with width `w`, length `l` and yaw.
pub fn corners(x: f64, z: f64, w: f64, l: f64, yaw: f64) -> [[f64; 2]; 4] {
    let (s, c) = yaw.sin_cos();
    let local = [(l / 2.0, w / 2.0), (-l / 2.0, w / 2.0), (-l / 2.0, -w / 2.0), (l / 2.0, -w / 2.0)];
    local.map(|(dx, dz)| [x + c * dx + s * dz, z - s * dx + c * dz])
}

/// Interval of `x` where the horizontal line at `y` crosses a convex polygon.
fn row_span(poly: &[[f64; 2]], y: f64) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        if (a[1] <= y && y <= b[1]) || (b[1] <= y && y <= a[1]) {
            if a[1] == b[1] {
                lo = lo.min(a[0].min(b[0]));
                hi = hi.max(a[0].max(b[0]));
            } else {
                let t = (y - a[1]) / (b[1] - a[1]);
                let x = a[0] + t * (b[0] - a[0]);
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Number of grid cell centers `(i + 0.5) * cell` inside `[lo, hi]`.
fn centers_in(lo: f64, hi: f64, cell: f64) -> i64 {
    let first = (lo / cell - 0.5).ceil() as i64;
    let last = (hi / cell - 0.5).floor() as i64;
    (last - first + 1).max(0)
}

/// Areas of two convex polygons and of their overlap, by counting the
/// centers of a square grid of side `cell` that fall inside them.
pub fn raster_areas(a: &[[f64; 2]], b: &[[f64; 2]], cell: f64) -> (f64, f64, f64) {
    let ys = a.iter().chain(b).map(|p| p[1]);
    let (ymin, ymax) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), y| (l.min(y), h.max(y)));
    let (mut na, mut nb, mut ni) = (0i64, 0i64, 0i64);
    let mut j = (ymin / cell - 0.5).floor() as i64;
    while (j as f64 + 0.5) * cell <= ymax {
        let y = (j as f64 + 0.5) * cell;
        let sa = row_span(a, y);
        let sb = row_span(b, y);
        if let Some((l, h)) = sa {
            na += centers_in(l, h, cell);
        }
        if let Some((l, h)) = sb {
            nb += centers_in(l, h, cell);
        }
        if let (Some((la, ha)), Some((lb, hb))) = (sa, sb) {
            ni += centers_in(la.max(lb), ha.min(hb), cell);
        }
        j += 1;
    }
    let c2 = cell * cell;
    (na as f64 * c2, nb as f64 * c2, ni as f64 * c2)
}

pub fn raster_iou(a: &[[f64; 2]], b: &[[f64; 2]], cell: f64) -> f64 {
    let (aa, ab, ai) = raster_areas(a, b, cell);
    ai / (aa + ab - ai)
}

/// Axis-aligned box given by bottom center, dimensions (yaw 0): x extent `l`,
/// z extent `w`, spanning `y - h..y`.
#[derive(Debug, Clone, Copy)]
pub struct Aligned {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub h: f64,
    pub w: f64,
    pub l: f64,
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

pub fn aligned_iou3d(a: &Aligned, b: &Aligned) -> f64 {
    let ox = overlap(a.x - a.l / 2.0, a.x + a.l / 2.0, b.x - b.l / 2.0, b.x + b.l / 2.0);
    let oz = overlap(a.z - a.w / 2.0, a.z + a.w / 2.0, b.z - b.w / 2.0, b.z + b.w / 2.0);
    let oy = overlap(a.y - a.h, a.y, b.y - b.h, b.y);
    let inter = ox * oy * oz;
    inter / (a.h * a.w * a.l + b.h * b.w * b.l - inter)
}

/// Matching protocol written out directly: visit detections from highest
/// score (ties by index) and give each the free ground truth of largest
/// IoU that reaches the threshold. `ious[d][g]` is precomputed.
pub fn reference_tp(scores: &[f64], ious: &[Vec<f64>], num_gt: usize, threshold: f64) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut taken = vec![false; num_gt];
    let mut tp = vec![false; scores.len()];
    for d in idx {
        let mut best: Option<usize> = None;
        for g in 0..num_gt {
            if !taken[g] && ious[d][g] >= threshold && best.is_none_or(|bg| ious[d][g] > ious[d][bg]) {
                best = Some(g);
            }
        }
        if let Some(g) = best {
            taken[g] = true;
            tp[d] = true;
        }
    }
    tp
}

/// AP from the literal definition: for each recall point, the best precision
/// over all score cut-offs reaching that recall.
pub fn brute_force_ap(scores: &[f64], tp: &[bool], num_gt: usize, recalls: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let prefixes: Vec<(f64, f64)> = (1..=idx.len())
        .map(|k| {
            let hits = idx[..k].iter().filter(|&&i| tp[i]).count() as f64;
            (hits / k as f64, if num_gt == 0 { 0.0 } else { hits / num_gt as f64 })
        })
        .collect();
    let total: f64 = recalls
        .iter()
        .map(|&r| {
            prefixes
                .iter()
                .filter(|(_, rec)| *rec >= r - 1e-12)
                .map(|(p, _)| *p)
                .fold(0.0, f64::max)
        })
        .sum();
    100.0 * total / recalls.len() as f64
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d);
        }
    }
    (lo + hi) / 2.0
}

pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

pub fn laplace_pdf(mu: f64, sigma: f64, x: f64) -> f64 {
    let b = sigma / std::f64::consts::SQRT_2;
    (-(x - mu).abs() / b).exp() / (2.0 * b)
}

pub fn gupkit() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gupkit"))
}

/// Runs the binary with an output directory and returns (status, stdout, stderr).
pub fn run_cli(out: &std::path::Path, args: &[&str]) -> (i32, String, String) {
    let o = gupkit()
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs");
    (
        o.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&o.stdout).into_owned(),
        String::from_utf8_lossy(&o.stderr).into_owned(),
    )
}

/// Contents of every file in `dir` except the manifest, sorted by name.
pub fn primary_outputs(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "manifest.json")
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files
}
