//! KITTI object label and calibration files.
//!
//! Label lines have 15 whitespace-separated fields, a 16th for the detection
//! score and an optional 17th carrying the depth standard deviation `sigma_d`
//! in meters. Geometry is written with 2 decimals and score/`sigma_d` with 4,
//! so lines already at that precision round-trip exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::confidence::Detection;
use crate::error::{Error, Result};
use crate::geometry::{Box3D, CameraIntrinsics};

pub const COLUMNS: [&str; 17] = [
    "type",
    "truncated",
    "occluded",
    "alpha",
    "bbox_left",
    "bbox_top",
    "bbox_right",
    "bbox_bottom",
    "height",
    "width",
    "length",
    "x",
    "y",
    "z",
    "rotation_y",
    "score",
    "sigma_d",
];

/// Class label of rows that mark regions to ignore.
pub const DONT_CARE: &str = "DontCare";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KittiLabel {
    pub class: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    /// Left, top, right, bottom in pixels.
    pub bbox: [f64; 4],
    /// Height, width, length in meters.
    pub dimensions: [f64; 3],
    /// Bottom-center location in camera coordinates.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
    pub sigma_d: Option<f64>,
}

impl KittiLabel {
    pub fn is_dont_care(&self) -> bool {
        self.class == DONT_CARE
    }

    pub fn to_box(&self) -> Result<Box3D> {
        let [h, w, l] = self.dimensions;
        let [x, y, z] = self.location;
        Box3D::new(x, y, z, h, w, l, self.rotation_y)
    }

    /// Label row for a detection; the 2D box and observation angle are
    /// unknown and written as zeros.
    pub fn from_detection(d: &Detection) -> Self {
        let b = &d.bbox;
        Self {
            class: d.class.clone(),
            truncated: 0.0,
            occluded: 0,
            alpha: 0.0,
            bbox: [0.0; 4],
            dimensions: [b.h, b.w, b.l],
            location: [b.x, b.y, b.z],
            rotation_y: b.yaw,
            score: Some(d.p_3d),
            sigma_d: d.sigma_d,
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = format!("{} {:.2} {} {:.2}", self.class, self.truncated, self.occluded, self.alpha);
        for v in self.bbox.iter().chain(&self.dimensions).chain(&self.location) {
            write!(s, " {v:.2}").expect("write to string");
        }
        write!(s, " {:.2}", self.rotation_y).expect("write to string");
        match (self.score, self.sigma_d) {
            (Some(p), Some(sd)) => write!(s, " {p:.4} {sd:.4}"),
            (Some(p), None) => write!(s, " {p:.4}"),
            (None, Some(sd)) => write!(s, " {:.4} {sd:.4}", 1.0),
            (None, None) => Ok(()),
        }
        .expect("write to string");
        s
    }
}

fn field<T: std::str::FromStr>(fields: &[&str], column: usize, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    fields[column].parse().map_err(|e: T::Err| Error::Parse {
        line,
        column,
        name: COLUMNS[column],
        message: format!("cannot parse `{}`: {e}", fields[column]),
    })
}

/// Parses one label line. `line_no` is only used in error messages.
pub fn parse_label(text: &str, line_no: usize) -> Result<KittiLabel> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() < 15 {
        let column = fields.len();
        return Err(Error::Parse {
            line: line_no,
            column,
            name: COLUMNS[column],
            message: format!("expected at least 15 fields, found {}", fields.len()),
        });
    }
    if fields.len() > 17 {
        return Err(Error::Parse {
            line: line_no,
            column: 17,
            name: "extra",
            message: format!("expected at most 17 fields, found {}", fields.len()),
        });
    }
    let f = |c| field::<f64>(&fields, c, line_no);
    let label = KittiLabel {
        class: fields[0].to_string(),
        truncated: f(1)?,
        occluded: field::<i32>(&fields, 2, line_no)?,
        alpha: f(3)?,
        bbox: [f(4)?, f(5)?, f(6)?, f(7)?],
        dimensions: [f(8)?, f(9)?, f(10)?],
        location: [f(11)?, f(12)?, f(13)?],
        rotation_y: f(14)?,
        score: if fields.len() > 15 { Some(f(15)?) } else { None },
        sigma_d: if fields.len() > 16 { Some(f(16)?) } else { None },
    };
    if !label.is_dont_care() {
        for (k, &d) in label.dimensions.iter().enumerate() {
            if !(d > 0.0) {
                return Err(Error::Parse {
                    line: line_no,
                    column: 8 + k,
                    name: COLUMNS[8 + k],
                    message: format!("dimension must be positive, got {d}"),
                });
            }
        }
    }
    Ok(label)
}

/// Parses a label file body, skipping blank lines. Line numbers start at 1.
pub fn parse_labels(text: &str) -> Result<Vec<KittiLabel>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_label(l, i + 1))
        .collect()
}

pub fn read_labels(path: &Path) -> Result<Vec<KittiLabel>> {
    parse_labels(&std::fs::read_to_string(path)?)
}

pub fn write_labels(labels: &[KittiLabel]) -> String {
    labels.iter().map(|l| l.to_line() + "\n").collect()
}

/// Row holding the left color camera projection matrix.
pub const CALIB_ROW: &str = "P2";

/// Extracts focal length and principal point from the `P2` row. Skew and
/// baseline entries are ignored.
pub fn parse_calib(text: &str) -> Result<CameraIntrinsics> {
    let row = text
        .lines()
        .find_map(|l| {
            let (key, rest) = l.split_once(':')?;
            (key.trim() == CALIB_ROW).then_some(rest)
        })
        .ok_or_else(|| Error::MissingCalibRow(CALIB_ROW.into()))?;
    let values: Vec<f64> = row
        .split_whitespace()
        .map(|v| {
            v.parse().map_err(|e| Error::MalformedCalib {
                row: CALIB_ROW.into(),
                message: format!("cannot parse `{v}`: {e}"),
            })
        })
        .collect::<Result<_>>()?;
    if values.len() != 12 {
        return Err(Error::MalformedCalib {
            row: CALIB_ROW.into(),
            message: format!("expected 12 values, found {}", values.len()),
        });
    }
    CameraIntrinsics::new(values[0], values[2], values[6])
}

pub fn read_calib(path: &Path) -> Result<CameraIntrinsics> {
    parse_calib(&std::fs::read_to_string(path)?)
}

/// A `P2` row for the given intrinsics with zero translation.
pub fn calib_text(k: &CameraIntrinsics) -> String {
    format!(
        "P2: {} 0 {} 0 0 {} {} 0 0 0 1 0\n",
        k.f, k.c_u, k.f, k.c_v
    )
}
