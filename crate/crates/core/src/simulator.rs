//! Synthetic scenes with known ground truth, and the full depth-belief
//! pipeline run over them.
//!
//! Each object's heights are observed with Laplace noise, propagated to a
//! depth belief, corrected by a simulated bias stream and turned into a
//! scored detection placed at the believed depth along the true viewing ray.

use serde::{Deserialize, Serialize};

use crate::confidence::{delta_d, iounc, vanilla_unc, Detection, IouncConfig, ScoreMethod};
use crate::distributions::{GaussDist, LaplaceDist};
use crate::evaluation::DepthDiagnostic;
use crate::error::{require_non_negative, require_positive, Error, Result};
use crate::exec::{substream, Execution};
use crate::geometry::{bev_intersection, decode_center, iou3d, Box3D, CameraIntrinsics, AREA_EPS};
use crate::propagation::{combine_bias, propagate, DepthBelief, HeightBeliefs};
use rand::Rng;

/// Believed depths are clamped to at least this many meters before a box is
/// built from them.
pub const MIN_DEPTH: f64 = 0.1;
/// Observed 3D heights are clamped to at least this many meters.
pub const MIN_HEIGHT: f64 = 0.01;

/// Quality score model for the 2D detector:
/// `sigmoid((h2d - center) / scale + N(0, noise))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct P2dModel {
    pub center_px: f64,
    pub scale_px: f64,
    pub noise: f64,
}

impl Default for P2dModel {
    fn default() -> Self {
        Self {
            center_px: 40.0,
            scale_px: 20.0,
            noise: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// 2D height noise std (pixels).
    pub h2d_sigma: f64,
    /// 3D height noise std (meters).
    pub h3d_sigma: f64,
    /// Mean of the predicted bias correction (meters).
    pub bias_mu: f64,
    /// Std of the bias-stream error (meters).
    pub bias_sigma: f64,
    /// When set, the 2D noise std is multiplied by `z / reference_depth`.
    pub heteroscedastic_ref: Option<f64>,
    /// Reported std = true std times this factor; 1 is well calibrated.
    pub report_scale: f64,
    /// Lower bound on every reported std.
    pub sigma_floor: f64,
    /// Observed 2D heights at or below this fraction of the truth are redrawn.
    pub tail_guard: f64,
    pub p2d: P2dModel,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            h2d_sigma: 3.959,
            h3d_sigma: 0.083,
            bias_mu: 0.0,
            bias_sigma: 0.5,
            heteroscedastic_ref: None,
            report_scale: 1.0,
            sigma_floor: 1e-4,
            tail_guard: 0.1,
            p2d: P2dModel::default(),
        }
    }
}

impl NoiseModel {
    /// No observation noise and no bias error.
    pub fn zero() -> Self {
        Self {
            h2d_sigma: 0.0,
            h3d_sigma: 0.0,
            bias_sigma: 0.0,
            ..Self::default()
        }
    }

    /// Only the 3D height is noisy, so the depth error is exactly Laplace.
    pub fn height3d_only() -> Self {
        Self {
            h2d_sigma: 0.0,
            bias_sigma: 0.0,
            ..Self::default()
        }
    }

    /// Default magnitudes with 2D noise growing linearly in depth.
    pub fn heteroscedastic() -> Self {
        Self {
            heteroscedastic_ref: Some(20.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        require_non_negative("2D height sigma", self.h2d_sigma)?;
        require_non_negative("3D height sigma", self.h3d_sigma)?;
        require_non_negative("bias sigma", self.bias_sigma)?;
        require_positive("report scale", self.report_scale)?;
        require_positive("sigma floor", self.sigma_floor)?;
        if let Some(r) = self.heteroscedastic_ref {
            require_positive("heteroscedastic reference depth", r)?;
        }
        if !(0.0..1.0).contains(&self.tail_guard) {
            return Err(Error::Domain {
                what: "tail guard",
                expected: "in [0, 1)",
                value: self.tail_guard,
            });
        }
        require_positive("p2d scale", self.p2d.scale_px)?;
        require_non_negative("p2d noise", self.p2d.noise)?;
        Ok(())
    }

    fn h2d_sigma_at(&self, z: f64) -> f64 {
        match self.heteroscedastic_ref {
            Some(r) => self.h2d_sigma * z / r,
            None => self.h2d_sigma,
        }
    }

    fn reported(&self, sigma: f64) -> f64 {
        (sigma * self.report_scale).max(self.sigma_floor)
    }
}

/// Mean dimensions of a class and the std of their per-object jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassPrior {
    pub name: String,
    /// Mean (h, w, l) in meters.
    pub dims: [f64; 3],
    /// Gaussian jitter std of (h, w, l).
    pub jitter: [f64; 3],
}

impl ClassPrior {
    pub fn car() -> Self {
        Self {
            name: "Car".into(),
            dims: [1.5, 1.6, 4.0],
            jitter: [0.1, 0.1, 0.3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum YawDist {
    Uniform,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Inclusive object count range.
    pub objects: [usize; 2],
    /// Depth range of object centers (meters).
    pub depth_range: [f64; 2],
    /// Lateral position is drawn as `U(-k, k) * z`.
    pub lateral_fraction: f64,
    /// Height of the camera above the ground plane (meters).
    pub camera_height: f64,
    pub classes: Vec<ClassPrior>,
    pub yaw: YawDist,
    pub camera: CameraIntrinsics,
    /// Placement attempts per object before giving up.
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            objects: [1, 8],
            depth_range: [5.0, 50.0],
            lateral_fraction: 0.4,
            camera_height: 1.65,
            classes: vec![ClassPrior::car()],
            yaw: YawDist::Uniform,
            camera: CameraIntrinsics::default(),
            max_attempts: 200,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.objects[0] > self.objects[1] {
            return Err(Error::Config(format!(
                "object count range {}..={} is empty",
                self.objects[0], self.objects[1]
            )));
        }
        require_positive("minimum depth", self.depth_range[0])?;
        if self.depth_range[0] > self.depth_range[1] {
            return Err(Error::InvalidInterval {
                lo: self.depth_range[0],
                hi: self.depth_range[1],
            });
        }
        require_non_negative("lateral fraction", self.lateral_fraction)?;
        if self.classes.is_empty() {
            return Err(Error::EmptyInput("class priors"));
        }
        for c in &self.classes {
            for &d in &c.dims {
                require_positive("class prior dimension", d)?;
            }
            for &j in &c.jitter {
                require_non_negative("class prior jitter", j)?;
            }
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub class: String,
    #[serde(rename = "box")]
    pub bbox: Box3D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub camera: CameraIntrinsics,
    pub objects: Vec<GtObject>,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Draws a scene whose objects have pairwise disjoint BEV footprints.
pub fn gen_scene<R: Rng + ?Sized>(cfg: &SceneConfig, rng: &mut R) -> Result<Scene> {
    cfg.validate()?;
    let target = rng.random_range(cfg.objects[0]..=cfg.objects[1]);
    let mut objects: Vec<GtObject> = Vec::with_capacity(target);
    while objects.len() < target {
        let mut placed = false;
        for _ in 0..cfg.max_attempts {
            let prior = &cfg.classes[rng.random_range(0..cfg.classes.len())];
            let mut dims = [0.0; 3];
            for k in 0..3 {
                let g = GaussDist { mu: prior.dims[k], sigma: prior.jitter[k] }.sample(rng);
                dims[k] = g.max(0.5 * prior.dims[k]);
            }
            let z = uniform(rng, cfg.depth_range[0], cfg.depth_range[1]);
            let x = uniform(rng, -cfg.lateral_fraction, cfg.lateral_fraction) * z;
            let yaw = match cfg.yaw {
                YawDist::Uniform => uniform(rng, -std::f64::consts::PI, std::f64::consts::PI),
                YawDist::Fixed(a) => a,
            };
            let bbox = Box3D::new(x, cfg.camera_height, z, dims[0], dims[1], dims[2], yaw)?;
            let mut free = true;
            for o in &objects {
                if bev_intersection(&o.bbox, &bbox)? > AREA_EPS {
                    free = false;
                    break;
                }
            }
            if free {
                objects.push(GtObject {
                    class: prior.name.clone(),
                    bbox,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::SceneBudget {
                achieved: objects.len(),
                requested: target,
            });
        }
    }
    Ok(Scene {
        camera: cfg.camera,
        objects,
    })
}

/// Noisy observations of one object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub h2d_true: f64,
    pub beliefs: HeightBeliefs,
    pub mu_b: f64,
    pub sigma_b: f64,
    pub p_2d: f64,
}

/// Observes the 2D and 3D heights and the bias of `gt` under `nm`.
pub fn simulate_estimates<R: Rng + ?Sized>(
    gt: &Box3D,
    cam: &CameraIntrinsics,
    nm: &NoiseModel,
    rng: &mut R,
) -> Result<Estimates> {
    require_positive("object depth", gt.z)?;
    let h2d_true = cam.f * gt.h / gt.z;
    let s2 = nm.h2d_sigma_at(gt.z);
    let noise2 = LaplaceDist { mu: 0.0, sigma: s2 };
    let floor = nm.tail_guard * h2d_true;
    let mut mu2 = h2d_true + noise2.sample(rng);
    while mu2 <= floor {
        mu2 = h2d_true + noise2.sample(rng);
    }
    let mu3 = (gt.h + LaplaceDist { mu: 0.0, sigma: nm.h3d_sigma }.sample(rng)).max(MIN_HEIGHT);
    let mu_b = nm.bias_mu + LaplaceDist { mu: 0.0, sigma: nm.bias_sigma }.sample(rng);
    let logit = (h2d_true - nm.p2d.center_px) / nm.p2d.scale_px
        + GaussDist { mu: 0.0, sigma: nm.p2d.noise }.sample(rng);
    let beliefs = HeightBeliefs::new(
        LaplaceDist { mu: mu2, sigma: nm.reported(s2) },
        LaplaceDist { mu: mu3, sigma: nm.reported(nm.h3d_sigma) },
    )?;
    Ok(Estimates {
        h2d_true,
        beliefs,
        mu_b,
        sigma_b: nm.reported(nm.bias_sigma),
        p_2d: 1.0 / (1.0 + (-logit).exp()),
    })
}

/// One object after the pipeline, with everything needed for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedObject {
    pub gt: GtObject,
    pub estimates: Estimates,
    pub depth: DepthBelief,
    pub detection: Detection,
    pub delta_d: f64,
    pub iounc: f64,
    pub vanilla: f64,
    pub iou_gt: f64,
}

impl SimulatedObject {
    pub fn depth_error(&self) -> f64 {
        self.gt.bbox.z - self.depth.mu_d
    }

    /// The detection re-scored with another conditional confidence.
    pub fn detection_with(&self, method: ScoreMethod) -> Result<Detection> {
        let p = match method {
            ScoreMethod::Iounc => self.iounc,
            ScoreMethod::VanillaUnc => self.vanilla,
            ScoreMethod::Constant => 1.0,
        };
        Detection::new(
            self.detection.bbox,
            self.detection.class.clone(),
            self.detection.p_2d,
            p,
            self.detection.sigma_d,
        )
    }
}

/// Simulates, propagates and scores every object of `scene`.
pub fn run_pipeline<R: Rng + ?Sized>(
    scene: &Scene,
    nm: &NoiseModel,
    cfg: &IouncConfig,
    rng: &mut R,
) -> Result<Vec<SimulatedObject>> {
    nm.validate()?;
    cfg.validate()?;
    let cam = &scene.camera;
    let mut out = Vec::with_capacity(scene.objects.len());
    for obj in &scene.objects {
        let gt = &obj.bbox;
        let est = simulate_estimates(gt, cam, nm, rng)?;
        let projected = propagate(&est.beliefs, cam.f)?;
        let depth = combine_bias(projected, est.mu_b, est.sigma_b)?;
        let h = est.beliefs.h3d.mu;
        let [u, v] = cam.project_point(gt.center())?;
        let [xc, yc, zc] = decode_center(u, v, depth.mu_d.max(MIN_DEPTH), cam)?;
        let bbox = Box3D::new(xc, yc + h / 2.0, zc, h, gt.w, gt.l, gt.yaw)?;
        let dd = delta_d(&bbox, cfg)?;
        let p_iounc = iounc(depth.sigma_d, dd)?;
        let detection = Detection::new(bbox, obj.class.clone(), est.p_2d, p_iounc, Some(depth.sigma_d))?;
        out.push(SimulatedObject {
            gt: obj.clone(),
            estimates: est,
            depth,
            iou_gt: iou3d(&bbox, gt)?,
            detection,
            delta_d: dd,
            iounc: p_iounc,
            vanilla: vanilla_unc(depth.sigma_d),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneResult {
    pub index: usize,
    pub scene: Scene,
    pub objects: Vec<SimulatedObject>,
}

impl SceneResult {
    /// Detections scored by `method` with the scene's labelled ground truth,
    /// in the form consumed by the evaluation.
    pub fn frame(&self, method: ScoreMethod) -> Result<(Vec<Detection>, Vec<(String, Box3D)>)> {
        let dets = self
            .objects
            .iter()
            .map(|o| o.detection_with(method))
            .collect::<Result<_>>()?;
        let gts = self.scene.objects.iter().map(|o| (o.class.clone(), o.bbox)).collect();
        Ok((dets, gts))
    }
}

/// Depth diagnostics of every simulated object, in scene order.
pub fn diagnostics(results: &[SceneResult]) -> Vec<DepthDiagnostic> {
    results
        .iter()
        .flat_map(|r| &r.objects)
        .map(|o| DepthDiagnostic {
            mu_d: o.depth.mu_d,
            sigma_d: o.depth.sigma_d,
            delta_d: o.delta_d,
            z_gt: o.gt.bbox.z,
        })
        .collect()
}

/// Generates and runs `n_scenes` scenes, scene `i` drawing from substream
/// `(seed, i)` so the result does not depend on the execution strategy.
pub fn simulate_batch(
    scene_cfg: &SceneConfig,
    nm: &NoiseModel,
    cfg: &IouncConfig,
    seed: u64,
    n_scenes: usize,
    exec: Execution,
) -> Result<Vec<SceneResult>> {
    scene_cfg.validate()?;
    nm.validate()?;
    cfg.validate()?;
    exec.map_indexed(n_scenes, |index| {
        let mut rng = substream(seed, index as u64);
        let scene = gen_scene(scene_cfg, &mut rng)?;
        let objects = run_pipeline(&scene, nm, cfg, &mut rng)?;
        Ok(SceneResult { index, scene, objects })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplificationRow {
    pub depth: f64,
    pub h2d: f64,
    pub shift_plus: f64,
    pub shift_minus: f64,
}

/// Depth shifts caused by a `±jitter` error on the 3D height at each depth,
/// with the 2D height held at its true value.
pub fn amplification_study(depths: &[f64], h3d: f64, jitter: f64, f: f64) -> Result<Vec<AmplificationRow>> {
    require_positive("3D height", h3d)?;
    require_non_negative("jitter", jitter)?;
    require_positive("focal length", f)?;
    depths
        .iter()
        .map(|&d| {
            require_positive("depth", d)?;
            let h2d = f * h3d / d;
            Ok(AmplificationRow {
                depth: d,
                h2d,
                shift_plus: f * (h3d + jitter) / h2d - d,
                shift_minus: f * (h3d - jitter) / h2d - d,
            })
        })
        .collect()
}
