//! Command-line surface. Every command writes its artifacts plus a
//! `manifest.json` into the output directory; everything except the manifest
//! is a pure function of the inputs, configuration and seed.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::confidence::{nms3d, Detection, ScoreMethod};
use crate::config::{sha256_hex, to_json, from_json, Manifest, OutputRecord, RunConfig, SCHEMA_VERSION};
use crate::distributions::{fit_error, standardize, Family, LaplaceDist, ResidualHistogram};
use crate::error::{Error, Result};
use crate::evaluation::{
    calibration_report, default_iou_threshold, evaluate_class, ApSummary, CalibrationReport, DepthDiagnostic,
};
use crate::exec::Execution;
use crate::geometry::{Box3D, CameraIntrinsics, IouKind};
use crate::kitti::{read_calib, read_labels, write_labels, KittiLabel};
use crate::propagation::{combine_bias, legacy_geu, mc_oracle, propagate, DepthBelief, DepthEstimate, HeightBeliefs, McStats};
use crate::simulator::{amplification_study, simulate_batch, AmplificationRow, GtObject, NoiseModel};
use crate::training::{htl_csv, htl_trace, synthetic_losses, total_loss, HtlRecord, TotalLossMode};

#[derive(Debug, Parser)]
#[command(name = "gupkit", version, about = "Depth-uncertainty toolkit for monocular 3D detection")]
pub struct Cli {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (falls back to the config, then `gupkit-out`).
    #[arg(long, global = true, env = "GUPKIT_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    /// Run data-parallel stages on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Depth shift caused by a 3D height error, over a grid of depths.
    Amplify(AmplifyArgs),
    /// Depth belief from 2D/3D height beliefs, optionally checked by Monte Carlo.
    Propagate(PropagateArgs),
    /// Re-score KITTI-format predictions and apply 3D NMS.
    Score(ScoreArgs),
    /// Simulate scenes and the full depth-belief pipeline.
    Simulate(SimulateArgs),
    /// AP and calibration of a simulation or of KITTI label directories.
    Evaluate(EvaluateArgs),
    /// Curriculum weights over a synthetic converging loss trace.
    HtlTrace(HtlTraceArgs),
    /// Laplace vs Gaussian fit of standardized depth residuals.
    FitResiduals(FitResidualsArgs),
}

#[derive(Debug, Args)]
pub struct AmplifyArgs {
    #[arg(long)]
    pub h3d: f64,
    #[arg(long)]
    pub jitter: f64,
    /// `start:stop:step` (inclusive) or a comma-separated list, in meters.
    #[arg(long)]
    pub depths: String,
    #[arg(long, default_value_t = 700.0)]
    pub focal: f64,
}

#[derive(Debug, Args)]
pub struct PropagateArgs {
    /// 2D height mean (pixels).
    #[arg(long, allow_hyphen_values = true)]
    pub h2d: f64,
    #[arg(long, default_value_t = 0.0)]
    pub h2d_sigma: f64,
    /// 3D height mean (meters).
    #[arg(long, allow_hyphen_values = true)]
    pub h3d: f64,
    #[arg(long, default_value_t = 0.0)]
    pub h3d_sigma: f64,
    #[arg(long, default_value_t = 700.0, conflicts_with = "calib")]
    pub focal: f64,
    /// KITTI calibration file to take the focal length from.
    #[arg(long)]
    pub calib: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub mu_b: f64,
    #[arg(long, default_value_t = 0.0)]
    pub sigma_b: f64,
    /// Monte-Carlo sample count; requires `--seed`.
    #[arg(long, requires = "seed")]
    pub mc: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// KITTI label file whose score column holds the 2D confidence.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, default_value = "iounc")]
    pub method: ScoreMethod,
}

/// Named noise models; `config` keeps the configured one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum NoisePreset {
    Config,
    Default,
    Heteroscedastic,
    Height3dOnly,
    Zero,
}

impl NoisePreset {
    fn apply(self, cfg: &mut RunConfig) {
        cfg.noise = match self {
            Self::Config => return,
            Self::Default => NoiseModel::default(),
            Self::Heteroscedastic => NoiseModel::heteroscedastic(),
            Self::Height3dOnly => NoiseModel::height3d_only(),
            Self::Zero => NoiseModel::zero(),
        };
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "config")]
    pub noise: NoisePreset,
    /// Number of consecutive seeds to simulate.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub scenes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// `simulation.json` written by `simulate`.
    #[arg(long, conflicts_with_all = ["gt_dir", "pred_dir"])]
    pub simulation: Option<PathBuf>,
    #[arg(long, requires = "pred_dir")]
    pub gt_dir: Option<PathBuf>,
    #[arg(long, requires = "gt_dir")]
    pub pred_dir: Option<PathBuf>,
    /// Matching threshold for every class instead of the per-class default.
    #[arg(long)]
    pub iou_threshold: Option<f64>,
    #[arg(long, default_value = "3d")]
    pub kind: IouKind,
}

#[derive(Debug, Args)]
pub struct HtlTraceArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitResidualsArgs {
    /// Residuals from a `simulation.json`; otherwise a fresh bias-free
    /// simulation is run.
    #[arg(long, conflicts_with = "seed")]
    pub simulation: Option<PathBuf>,
    #[arg(long, required_unless_present = "simulation")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long, value_enum, default_value = "config")]
    pub noise: NoisePreset,
}

/// Collects artifacts and writes them with the manifest.
struct Outputs {
    dir: PathBuf,
    records: Vec<OutputRecord>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir, records: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        std::fs::write(self.dir.join(name), contents)?;
        self.records.push(OutputRecord {
            file: name.to_string(),
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(())
    }

    fn finish(self, command: &str, cfg: &RunConfig) -> Result<()> {
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let manifest = Manifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            schema_version: SCHEMA_VERSION,
            config_hash: cfg.hash(),
            seed: cfg.seed,
            created_unix,
            outputs: self.records,
        };
        std::fs::write(self.dir.join("manifest.json"), to_json("manifest", &manifest)?)?;
        Ok(())
    }
}

fn csv_string<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parses `start:stop:step` (inclusive) or `a,b,c`.
pub fn parse_depths(spec: &str) -> Result<Vec<f64>> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|e| Error::Config(format!("bad depth `{s}`: {e}")))
    };
    if let Some((start, rest)) = spec.split_once(':') {
        let (stop, step) = rest
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("depth range `{spec}` must be start:stop:step")))?;
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if !(step > 0.0) || stop < start {
            return Err(Error::Config(format!("depth range `{spec}` is empty")));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| start + i as f64 * step).collect())
    } else {
        spec.split(',').map(num).collect()
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let dir = cli
        .out_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("gupkit-out"));
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let mut out = Outputs::new(dir)?;
    let name = match &cli.command {
        Command::Amplify(a) => {
            amplify(a, &mut out)?;
            "amplify"
        }
        Command::Propagate(a) => {
            cfg.seed = a.seed.or(cfg.seed);
            propagate_cmd(a, exec, &mut out)?;
            "propagate"
        }
        Command::Score(a) => {
            score(a, &cfg, &mut out)?;
            "score"
        }
        Command::Simulate(a) => {
            cfg.seed = Some(a.seed);
            a.noise.apply(&mut cfg);
            if let Some(n) = a.seeds {
                cfg.simulation.seeds = n;
            }
            if let Some(n) = a.scenes {
                cfg.simulation.scenes_per_seed = n;
            }
            simulate(&cfg, exec, &mut out)?;
            "simulate"
        }
        Command::Evaluate(a) => {
            evaluate(a, &mut out)?;
            "evaluate"
        }
        Command::HtlTrace(a) => {
            cfg.seed = Some(a.seed);
            if let Some(e) = a.epochs {
                cfg.htl.total_epochs = e;
            }
            if let Some(k) = a.window {
                cfg.htl.window = k;
            }
            htl(&cfg, &mut out)?;
            "htl-trace"
        }
        Command::FitResiduals(a) => {
            cfg.seed = a.seed.or(cfg.seed);
            a.noise.apply(&mut cfg);
            if let Some(n) = a.scenes {
                cfg.simulation.scenes_per_seed = n;
            }
            fit_residuals(a, &cfg, exec, &mut out)?;
            "fit-residuals"
        }
    };
    out.finish(name, &cfg)
}

fn amplify(a: &AmplifyArgs, out: &mut Outputs) -> Result<()> {
    let rows = amplification_study(&parse_depths(&a.depths)?, a.h3d, a.jitter, a.focal)?;
    println!("{:>8} {:>10} {:>10} {:>10}", "depth", "h2d_px", "shift+", "shift-");
    for r in &rows {
        println!("{:>8.2} {:>10.4} {:>10.4} {:>10.4}", r.depth, r.h2d, r.shift_plus, r.shift_minus);
    }
    out.write("amplify.json", &to_json("amplify", &rows)?)?;
    out.write("amplify.csv", &csv_string::<AmplificationRow>(&rows)?)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagateReport {
    pub focal: f64,
    pub beliefs: HeightBeliefs,
    pub projected: DepthEstimate,
    pub legacy: DepthEstimate,
    pub depth: DepthBelief,
    pub monte_carlo: Option<McStats>,
}

fn propagate_cmd(a: &PropagateArgs, exec: Execution, out: &mut Outputs) -> Result<()> {
    let focal = match &a.calib {
        Some(p) => read_calib(p)?.f,
        None => a.focal,
    };
    let beliefs = HeightBeliefs::new(LaplaceDist::new(a.h2d, a.h2d_sigma)?, LaplaceDist::new(a.h3d, a.h3d_sigma)?)?;
    let projected = propagate(&beliefs, focal)?;
    let report = PropagateReport {
        focal,
        beliefs,
        projected,
        legacy: legacy_geu(a.h2d, &beliefs.h3d, focal)?,
        depth: combine_bias(projected, a.mu_b, a.sigma_b)?,
        monte_carlo: match (a.mc, a.seed) {
            (Some(n), Some(seed)) => Some(mc_oracle(&beliefs, focal, n, seed, exec)?),
            _ => None,
        },
    };
    println!("mu_p={:.6} sigma_p={:.6}", projected.mu, projected.sigma);
    println!("mu_d={:.6} sigma_d={:.6}", report.depth.mu_d, report.depth.sigma_d);
    if let Some(mc) = &report.monte_carlo {
        println!("mc_mean={:.6} mc_std={:.6} rejected={}", mc.mean, mc.std, mc.rejected);
    }
    out.write("propagate.json", &to_json("propagate", &report)?)
}

fn score(a: &ScoreArgs, cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let labels = read_labels(&a.pred)?;
    let mut dets = Vec::new();
    for (i, l) in labels.iter().enumerate().filter(|(_, l)| !l.is_dont_care()) {
        if a.method.needs_sigma() && l.sigma_d.is_none() {
            return Err(Error::Config(format!(
                "row {} has no sigma_d column; method `{}` needs it",
                i + 1,
                a.method.name()
            )));
        }
        let bbox = l.to_box()?;
        let p_2d = l.score.unwrap_or(1.0);
        let p = a.method.conditional(&bbox, l.sigma_d, &cfg.iounc)?;
        dets.push(Detection::new(bbox, l.class.clone(), p_2d, p, l.sigma_d)?);
    }
    let kept = nms3d(&dets, cfg.nms.threshold, cfg.nms.kind)?;
    println!("{} detections scored, {} kept after NMS", dets.len(), kept.len());
    let rows: Vec<KittiLabel> = kept.iter().map(KittiLabel::from_detection).collect();
    let name = a
        .pred
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scored.txt".into());
    out.write(&name, &write_labels(&rows))
}

/// One simulated object as stored in `simulation.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRecord {
    pub class: String,
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub p_2d: f64,
    pub iounc: f64,
    pub vanilla: f64,
    pub sigma_d: f64,
    pub delta_d: f64,
    pub mu_d: f64,
    pub z_gt: f64,
}

impl ObjectRecord {
    fn detection(&self, method: ScoreMethod) -> Result<Detection> {
        let p = match method {
            ScoreMethod::Iounc => self.iounc,
            ScoreMethod::VanillaUnc => self.vanilla,
            ScoreMethod::Constant => 1.0,
        };
        Detection::new(self.bbox, self.class.clone(), self.p_2d, p, Some(self.sigma_d))
    }

    fn diagnostic(&self) -> DepthDiagnostic {
        DepthDiagnostic {
            mu_d: self.mu_d,
            sigma_d: self.sigma_d,
            delta_d: self.delta_d,
            z_gt: self.z_gt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub ground_truth: Vec<GtObject>,
    pub objects: Vec<ObjectRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRecord {
    pub seed: u64,
    pub scenes: Vec<SceneRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationArtifact {
    pub config_hash: String,
    pub camera: CameraIntrinsics,
    pub runs: Vec<SeedRecord>,
}

pub fn run_simulation(cfg: &RunConfig, exec: Execution) -> Result<SimulationArtifact> {
    let seed = cfg.seed.ok_or_else(|| Error::Config("a seed is required".into()))?;
    let runs = (0..cfg.simulation.seeds as u64)
        .map(|k| {
            let s = seed + k;
            let results = simulate_batch(&cfg.scene, &cfg.noise, &cfg.iounc, s, cfg.simulation.scenes_per_seed, exec)?;
            let scenes = results
                .into_iter()
                .map(|r| SceneRecord {
                    objects: r
                        .objects
                        .iter()
                        .map(|o| ObjectRecord {
                            class: o.detection.class.clone(),
                            bbox: o.detection.bbox,
                            p_2d: o.detection.p_2d,
                            iounc: o.iounc,
                            vanilla: o.vanilla,
                            sigma_d: o.depth.sigma_d,
                            delta_d: o.delta_d,
                            mu_d: o.depth.mu_d,
                            z_gt: o.gt.bbox.z,
                        })
                        .collect(),
                    ground_truth: r.scene.objects,
                })
                .collect();
            Ok(SeedRecord { seed: s, scenes })
        })
        .collect::<Result<_>>()?;
    Ok(SimulationArtifact {
        config_hash: cfg.hash(),
        camera: cfg.scene.camera,
        runs,
    })
}

fn simulate(cfg: &RunConfig, exec: Execution, out: &mut Outputs) -> Result<()> {
    cfg.validate()?;
    let sim = run_simulation(cfg, exec)?;
    let objects: usize = sim.runs.iter().flat_map(|r| &r.scenes).map(|s| s.objects.len()).sum();
    println!("{} seeds, {} objects", sim.runs.len(), objects);
    out.write("simulation.json", &(serde_json::to_string(&envelope("simulation", &sim))? + "\n"))?;
    let rows: Vec<ObjectRow> = sim
        .runs
        .iter()
        .flat_map(|r| r.scenes.iter().enumerate().map(move |(i, s)| (r.seed, i, s)))
        .flat_map(|(seed, scene, s)| {
            s.objects.iter().map(move |o| ObjectRow {
                seed,
                scene,
                class: o.class.clone(),
                p_2d: o.p_2d,
                iounc: o.iounc,
                vanilla: o.vanilla,
                sigma_d: o.sigma_d,
                delta_d: o.delta_d,
                mu_d: o.mu_d,
                z_gt: o.z_gt,
            })
        })
        .collect();
    out.write("objects.csv", &csv_string(&rows)?)
}

/// Flat per-object row of `objects.csv`.
#[derive(Debug, Serialize)]
struct ObjectRow {
    seed: u64,
    scene: usize,
    class: String,
    p_2d: f64,
    iounc: f64,
    vanilla: f64,
    sigma_d: f64,
    delta_d: f64,
    mu_d: f64,
    z_gt: f64,
}

fn envelope<'a, T>(kind: &str, data: &'a T) -> crate::config::Envelope<&'a T> {
    crate::config::Envelope {
        schema: format!("gupkit.{kind}"),
        version: SCHEMA_VERSION,
        data,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAp {
    pub method: String,
    pub class: String,
    pub iou_threshold: f64,
    pub ap11: f64,
    pub ap40: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationEvaluation {
    /// Mean over seeds, one row per method and class.
    pub mean: Vec<MethodAp>,
    /// One row per seed, method and class.
    pub per_seed: Vec<(u64, MethodAp)>,
    pub calibration: CalibrationReport,
}

pub fn evaluate_simulation(sim: &SimulationArtifact, threshold: Option<f64>, kind: IouKind) -> Result<SimulationEvaluation> {
    let classes: BTreeSet<&str> = sim
        .runs
        .iter()
        .flat_map(|r| &r.scenes)
        .flat_map(|s| &s.ground_truth)
        .map(|g| g.class.as_str())
        .collect();
    let mut per_seed = Vec::new();
    let mut mean = Vec::new();
    for method in ScoreMethod::ALL {
        for &class in &classes {
            let thr = threshold.unwrap_or_else(|| default_iou_threshold(class));
            let (mut s11, mut s40) = (0.0, 0.0);
            for run in &sim.runs {
                let frames = run
                    .scenes
                    .iter()
                    .map(|s| {
                        let dets = s.objects.iter().map(|o| o.detection(method)).collect::<Result<Vec<_>>>()?;
                        let gts = s.ground_truth.iter().map(|g| (g.class.clone(), g.bbox)).collect();
                        Ok((dets, gts))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let a = evaluate_class(&frames, class, thr, kind)?;
                s11 += a.ap11;
                s40 += a.ap40;
                per_seed.push((run.seed, method_ap(method, &a)));
            }
            let n = sim.runs.len().max(1) as f64;
            mean.push(MethodAp {
                method: method.name().into(),
                class: class.into(),
                iou_threshold: thr,
                ap11: s11 / n,
                ap40: s40 / n,
            });
        }
    }
    let diag: Vec<DepthDiagnostic> = sim
        .runs
        .iter()
        .flat_map(|r| &r.scenes)
        .flat_map(|s| &s.objects)
        .map(ObjectRecord::diagnostic)
        .collect();
    Ok(SimulationEvaluation {
        mean,
        per_seed,
        calibration: calibration_report(&diag)?,
    })
}

fn method_ap(method: ScoreMethod, a: &ApSummary) -> MethodAp {
    MethodAp {
        method: method.name().into(),
        class: a.class.clone(),
        iou_threshold: a.iou_threshold,
        ap11: a.ap11,
        ap40: a.ap40,
    }
}

fn label_files(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

fn labelled_boxes(labels: &[KittiLabel]) -> Result<Vec<(String, Box3D)>> {
    labels
        .iter()
        .filter(|l| !l.is_dont_care())
        .map(|l| Ok((l.class.clone(), l.to_box()?)))
        .collect()
}

pub fn evaluate_directories(gt_dir: &Path, pred_dir: &Path, threshold: Option<f64>, kind: IouKind) -> Result<Vec<ApSummary>> {
    let mut frames = Vec::new();
    for name in label_files(gt_dir)? {
        let gts = labelled_boxes(&read_labels(&gt_dir.join(&name))?)?;
        let pred_path = pred_dir.join(&name);
        let dets = if pred_path.exists() {
            read_labels(&pred_path)?
                .iter()
                .filter(|l| !l.is_dont_care())
                .map(|l| Detection::new(l.to_box()?, l.class.clone(), l.score.unwrap_or(1.0), 1.0, l.sigma_d))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        frames.push((dets, gts));
    }
    let classes: BTreeSet<String> = frames.iter().flat_map(|(_, g)| g.iter().map(|(c, _)| c.clone())).collect();
    classes
        .iter()
        .map(|c| evaluate_class(&frames, c, threshold.unwrap_or_else(|| default_iou_threshold(c)), kind))
        .collect()
}

fn evaluate(a: &EvaluateArgs, out: &mut Outputs) -> Result<()> {
    if let Some(path) = &a.simulation {
        let sim: SimulationArtifact = from_json("simulation", &std::fs::read_to_string(path)?)?;
        let ev = evaluate_simulation(&sim, a.iou_threshold, a.kind)?;
        for m in &ev.mean {
            println!("{:<12} {:<6} iou={} AP11={:.4} AP40={:.4}", m.method, m.class, m.iou_threshold, m.ap11, m.ap40);
        }
        let c = &ev.calibration;
        println!(
            "coverage@{:.4}={:.4} delta_coverage={:.4} mean_iounc={:.4} spearman={:.4}",
            c.coverage[1].nominal, c.coverage[1].empirical, c.delta_coverage, c.mean_iounc, c.spearman
        );
        out.write("evaluation.json", &to_json("evaluation", &ev)?)?;
        out.write("ap.csv", &csv_string(&ev.mean)?)?;
        out.write("coverage.csv", &csv_string(&c.coverage)?)
    } else if let (Some(gt), Some(pred)) = (&a.gt_dir, &a.pred_dir) {
        let rows = evaluate_directories(gt, pred, a.iou_threshold, a.kind)?;
        for r in &rows {
            println!("{:<12} iou={} AP11={:.4} AP40={:.4}", r.class, r.iou_threshold, r.ap11, r.ap40);
        }
        out.write("evaluation.json", &to_json("evaluation", &rows)?)?;
        out.write("ap.csv", &csv_string(&rows)?)
    } else {
        Err(Error::Config("evaluate needs --simulation or --gt-dir with --pred-dir".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTotal {
    pub epoch: usize,
    pub plain_sum: f64,
    pub htl_weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HtlReport {
    pub total_epochs: usize,
    pub window: usize,
    pub records: Vec<HtlRecord>,
    pub totals: Vec<EpochTotal>,
}

fn htl(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let graph = cfg.htl.task_graph()?;
    let epochs = cfg.htl.total_epochs;
    let losses = synthetic_losses(&graph, epochs + 1, cfg.seed.unwrap_or_default());
    let records = htl_trace(graph, &losses, epochs, cfg.htl.window)?;
    let totals = (0..=epochs)
        .map(|e| {
            let rows: Vec<HtlRecord> = records.iter().filter(|r| r.epoch == e).cloned().collect();
            EpochTotal {
                epoch: e,
                plain_sum: total_loss(&rows, TotalLossMode::PlainSum),
                htl_weighted: total_loss(&rows, TotalLossMode::HtlWeighted),
            }
        })
        .collect();
    let report = HtlReport {
        total_epochs: epochs,
        window: cfg.htl.window,
        records,
        totals,
    };
    println!("{} epochs, {} records", epochs + 1, report.records.len());
    out.write("htl_trace.csv", &htl_csv(&report.records))?;
    out.write("htl_trace.json", &to_json("htl_trace", &report)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub center: f64,
    pub density: f64,
    pub laplace: f64,
    pub gauss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitReport {
    pub count: usize,
    pub dropped: usize,
    pub laplace_error: f64,
    pub gauss_error: f64,
}

/// Histogram and both fit errors of standardized residuals `(z - mu) / sigma`.
pub fn residual_fit(z: &[f64], mu: &[f64], sigma: &[f64]) -> Result<(FitReport, Vec<HistogramRow>)> {
    let r = standardize(z, mu, sigma)?;
    let h = ResidualHistogram::with_defaults(&r)?;
    let rows = h
        .centers()
        .into_iter()
        .zip(&h.densities)
        .map(|(c, &d)| HistogramRow {
            center: c,
            density: d,
            laplace: Family::Laplace.standard_pdf(c),
            gauss: Family::Gauss.standard_pdf(c),
        })
        .collect();
    let report = FitReport {
        count: h.count,
        dropped: h.dropped,
        laplace_error: fit_error(&h, Family::Laplace)?,
        gauss_error: fit_error(&h, Family::Gauss)?,
    };
    Ok((report, rows))
}

fn fit_residuals(a: &FitResidualsArgs, cfg: &RunConfig, exec: Execution, out: &mut Outputs) -> Result<()> {
    let sim = match &a.simulation {
        Some(p) => from_json::<SimulationArtifact>("simulation", &std::fs::read_to_string(p)?)?,
        None => {
            let mut c = cfg.clone();
            c.noise.bias_sigma = 0.0;
            c.noise.bias_mu = 0.0;
            c.simulation.seeds = 1;
            run_simulation(&c, exec)?
        }
    };
    let objs: Vec<&ObjectRecord> = sim.runs.iter().flat_map(|r| &r.scenes).flat_map(|s| &s.objects).collect();
    let z: Vec<f64> = objs.iter().map(|o| o.z_gt).collect();
    let mu: Vec<f64> = objs.iter().map(|o| o.mu_d).collect();
    let sigma: Vec<f64> = objs.iter().map(|o| o.sigma_d).collect();
    let (report, rows) = residual_fit(&z, &mu, &sigma)?;
    println!(
        "{} residuals: laplace_error={:.6} gauss_error={:.6}",
        report.count, report.laplace_error, report.gauss_error
    );
    out.write("residual_fit.json", &to_json("residual_fit", &report)?)?;
    out.write("residual_hist.csv", &csv_string(&rows)?)
}

/// Machine-readable error report printed on failure.
pub fn error_json(e: &Error) -> String {
    serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } }).to_string()
}
