//! Uncertainty regression losses and curriculum loss weighting.
//!
//! The Laplace losses use `sigma` as standard deviation:
//!
//! ```text
//! nll      = sqrt(2) / sigma * |mu - gt| + ln(sigma)
//! beta-nll = [sigma / sqrt(2)]^beta * nll
//! ```
//!
//! where the bracketed prefactor is a stop-gradient constant: gradients are
//! those of `nll` scaled by the prefactor's current value.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::distributions::LaplaceDist;
use crate::error::{require_positive, Error, Result};
use crate::exec::substream;

/// Loss value with its gradients w.r.t. the predicted mean and std.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEval {
    pub value: f64,
    pub d_mu: f64,
    pub d_sigma: f64,
}

fn check_beta(beta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "beta",
            expected: "in [0, 1]",
            value: beta,
        })
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Laplace NLL with the stop-gradient `(sigma / sqrt(2))^beta` weighting.
pub fn beta_nll_laplace(mu: f64, sigma: f64, gt: f64, beta: f64) -> Result<LossEval> {
    require_positive("sigma", sigma)?;
    check_beta(beta)?;
    let pref = (sigma / SQRT_2).powf(beta);
    let err = mu - gt;
    let abs = err.abs();
    Ok(LossEval {
        value: pref * (SQRT_2 / sigma * abs + sigma.ln()),
        d_mu: pref * SQRT_2 / sigma * sign(err),
        d_sigma: pref * (1.0 / sigma - SQRT_2 * abs / (sigma * sigma)),
    })
}

pub fn nll_laplace(mu: f64, sigma: f64, gt: f64) -> Result<LossEval> {
    beta_nll_laplace(mu, sigma, gt, 0.0)
}

/// Gaussian NLL with the stop-gradient `(sigma^2)^beta` weighting.
pub fn beta_nll_gauss(mu: f64, sigma: f64, gt: f64, beta: f64) -> Result<LossEval> {
    require_positive("sigma", sigma)?;
    check_beta(beta)?;
    let pref = (sigma * sigma).powf(beta);
    let err = mu - gt;
    let s2 = sigma * sigma;
    Ok(LossEval {
        value: pref * (err * err / (2.0 * s2) + sigma.ln()),
        d_mu: pref * err / s2,
        d_sigma: pref * (1.0 / sigma - err * err / (s2 * sigma)),
    })
}

pub fn nll_gauss(mu: f64, sigma: f64, gt: f64) -> Result<LossEval> {
    beta_nll_gauss(mu, sigma, gt, 0.0)
}

/// Settings for [`toy_fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub beta: f64,
    pub steps: usize,
    pub lr: f64,
    pub sigma_floor: f64,
    pub init_mu: f64,
    pub init_sigma: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            steps: 1000,
            lr: 0.1,
            sigma_floor: 1e-4,
            init_mu: 0.0,
            init_sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub mu: f64,
    pub sigma: f64,
    pub final_loss: f64,
}

/// Fits a single `(mu, sigma)` to `samples` by minimizing the mean
/// beta-NLL Laplace loss.
///
/// `sigma` is optimized as `ln(sigma)` and clamped at the floor. Steps are
/// preconditioned by the inverse Fisher information of the Laplace family
/// (`sigma^2 / 2` for `mu`, one for `ln(sigma)`), which keeps the sign-valued
/// mean gradient from overshooting as `sigma` shrinks.
pub fn toy_fit(samples: &[f64], cfg: &FitConfig) -> Result<FitResult> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("fit samples"));
    }
    check_beta(cfg.beta)?;
    require_positive("sigma floor", cfg.sigma_floor)?;
    require_positive("initial sigma", cfg.init_sigma)?;
    require_positive("learning rate", cfg.lr)?;
    let n = samples.len() as f64;
    let log_floor = cfg.sigma_floor.ln();
    let mut mu = cfg.init_mu;
    let mut log_sigma = cfg.init_sigma.ln().max(log_floor);
    let mut loss = f64::NAN;
    for step in 0..cfg.steps {
        let sigma = log_sigma.exp();
        let (mut value, mut d_mu, mut d_sigma) = (0.0, 0.0, 0.0);
        for &gt in samples {
            let e = beta_nll_laplace(mu, sigma, gt, cfg.beta)?;
            value += e.value;
            d_mu += e.d_mu;
            d_sigma += e.d_sigma;
        }
        loss = value / n;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        mu -= cfg.lr * 0.5 * sigma * sigma * d_mu / n;
        log_sigma = (log_sigma - cfg.lr * sigma * d_sigma / n).max(log_floor);
        if !mu.is_finite() || !log_sigma.is_finite() {
            return Err(Error::Divergence { step, loss: f64::NAN });
        }
    }
    Ok(FitResult {
        mu,
        sigma: log_sigma.exp(),
        final_loss: loss,
    })
}

/// Polynomial curriculum weight `(t / T)^(1 - alpha)`.
pub fn htl_weight(t: f64, total: f64, alpha: f64) -> f64 {
    (t / total).clamp(0.0, 1.0).powf(1.0 - alpha.clamp(0.0, 1.0))
}

/// Mean absolute first difference over the `k` steps ending at entry `t`.
fn trend(history: &[f64], k: usize, t: usize) -> f64 {
    (t + 1 - k..=t)
        .map(|i| (history[i] - history[i - 1]).abs())
        .sum::<f64>()
        / k as f64
}

/// Learning-situation indicator of a task at epoch `t`.
///
/// Compares the mean loss change over the `k` epochs ending at `t` with the
/// mean change over the first `k` epochs: `(DF(k) - DF(t)) / DF(k)` clamped to
/// `[0, 1]`. A zero initial trend counts as converged.
pub fn learning_situation(history: &[f64], k: usize, t: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("trend window must be at least 1".into()));
    }
    if t < k || t >= history.len() {
        return Err(Error::Config(format!(
            "learning situation at epoch {t} needs epochs 0..={t} with window {k}, history has {}",
            history.len()
        )));
    }
    let initial = trend(history, k, k);
    if initial == 0.0 {
        return Ok(1.0);
    }
    Ok(((initial - trend(history, k, t)) / initial).clamp(0.0, 1.0))
}

/// Acyclic task hierarchy: each task lists the tasks it depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGraph {
    tasks: Vec<String>,
    pre: BTreeMap<String, BTreeSet<String>>,
}

impl TaskGraph {
    pub fn new<S: AsRef<str>>(spec: &[(S, Vec<S>)]) -> Result<Self> {
        let tasks: Vec<String> = spec.iter().map(|(t, _)| t.as_ref().to_string()).collect();
        let known: BTreeSet<&str> = tasks.iter().map(String::as_str).collect();
        let mut pre = BTreeMap::new();
        for (task, deps) in spec {
            let mut set = BTreeSet::new();
            for d in deps {
                if !known.contains(d.as_ref()) {
                    return Err(Error::UnknownTask(d.as_ref().to_string()));
                }
                set.insert(d.as_ref().to_string());
            }
            pre.insert(task.as_ref().to_string(), set);
        }
        let graph = Self { tasks, pre };
        graph.check_acyclic()?;
        Ok(graph)
    }

    /// Three-stage detector hierarchy: 2D detection, then 3D heads on top of
    /// it, then depth after the 2D tasks and the 3D size.
    pub fn detector_default() -> Self {
        let stage1 = vec!["heatmap", "offset_2d", "size_2d"];
        let mut depth_pre = stage1.clone();
        depth_pre.push("size_3d");
        Self::new(&[
            ("heatmap", vec![]),
            ("offset_2d", vec![]),
            ("size_2d", vec![]),
            ("angle", stage1.clone()),
            ("offset_3d", stage1.clone()),
            ("size_3d", stage1),
            ("depth", depth_pre),
        ])
        .expect("default graph is acyclic")
    }

    pub fn tasks(&self) -> &[String] {
        &self.tasks
    }

    pub fn pre_tasks(&self, task: &str) -> Option<&BTreeSet<String>> {
        self.pre.get(task)
    }

    fn check_acyclic(&self) -> Result<()> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Fresh,
            Active,
            Done,
        }
        fn visit<'a>(g: &'a TaskGraph, t: &'a str, marks: &mut BTreeMap<&'a str, Mark>) -> Result<()> {
            match marks[t] {
                Mark::Done => return Ok(()),
                Mark::Active => return Err(Error::CycleDetected(t.to_string())),
                Mark::Fresh => {}
            }
            marks.insert(t, Mark::Active);
            for d in &g.pre[t] {
                visit(g, d, marks)?;
            }
            marks.insert(t, Mark::Done);
            Ok(())
        }
        let mut marks: BTreeMap<&str, Mark> = self.tasks.iter().map(|t| (t.as_str(), Mark::Fresh)).collect();
        for t in &self.tasks {
            visit(self, t, &mut marks)?;
        }
        Ok(())
    }
}

/// Loss history keeping only what the learning-situation indicator needs:
/// the initial trend and the last `k + 1` values.
#[derive(Debug, Clone, PartialEq)]
struct LossHistory {
    window: usize,
    head: Vec<f64>,
    recent: VecDeque<f64>,
    initial_trend: Option<f64>,
}

impl LossHistory {
    fn new(window: usize) -> Self {
        Self {
            window,
            head: Vec::with_capacity(window + 1),
            recent: VecDeque::with_capacity(window + 1),
            initial_trend: None,
        }
    }

    fn push(&mut self, loss: f64) {
        if self.head.len() <= self.window {
            self.head.push(loss);
            if self.head.len() == self.window + 1 {
                self.initial_trend = Some(trend(&self.head, self.window, self.window));
            }
        }
        if self.recent.len() == self.window + 1 {
            self.recent.pop_front();
        }
        self.recent.push_back(loss);
    }

    /// Zero until `k + 1` observations exist.
    fn situation(&self) -> f64 {
        let Some(initial) = self.initial_trend else {
            return 0.0;
        };
        if initial == 0.0 {
            return 1.0;
        }
        let recent: Vec<f64> = self.recent.iter().copied().collect();
        let current = trend(&recent, self.window, self.window);
        ((initial - current) / initial).clamp(0.0, 1.0)
    }
}

/// One row of an HTL trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HtlRecord {
    pub epoch: usize,
    pub task: String,
    pub loss: f64,
    pub ls: f64,
    pub alpha: f64,
    pub weight: f64,
}

/// Curriculum scheduler state for one training run.
#[derive(Debug, Clone)]
pub struct HtlState {
    graph: TaskGraph,
    total_epochs: usize,
    window: usize,
    histories: BTreeMap<String, LossHistory>,
    epoch: usize,
}

impl HtlState {
    pub fn new(graph: TaskGraph, total_epochs: usize, window: usize) -> Result<Self> {
        if total_epochs == 0 {
            return Err(Error::Config("total epochs must be positive".into()));
        }
        if window == 0 {
            return Err(Error::Config("trend window must be at least 1".into()));
        }
        let histories = graph
            .tasks()
            .iter()
            .map(|t| (t.clone(), LossHistory::new(window)))
            .collect();
        Ok(Self {
            graph,
            total_epochs,
            window,
            histories,
            epoch: 0,
        })
    }

    pub fn graph(&self) -> &TaskGraph {
        &self.graph
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Records one epoch of per-task losses and returns the weights for that
    /// epoch, in task-graph order.
    pub fn step(&mut self, losses: &BTreeMap<String, f64>) -> Result<Vec<HtlRecord>> {
        if self.epoch > self.total_epochs {
            return Err(Error::Config(format!(
                "epoch {} beyond the schedule of {} epochs",
                self.epoch, self.total_epochs
            )));
        }
        for task in self.graph.tasks() {
            let loss = *losses.get(task).ok_or_else(|| Error::UnknownTask(task.clone()))?;
            self.histories.get_mut(task).expect("history per task").push(loss);
        }
        let ls: BTreeMap<&str, f64> = self
            .histories
            .iter()
            .map(|(t, h)| (t.as_str(), h.situation()))
            .collect();
        let t = self.epoch;
        let records = self
            .graph
            .tasks()
            .iter()
            .map(|task| {
                let alpha: f64 = self.graph.pre[task].iter().map(|p| ls[p.as_str()]).product();
                HtlRecord {
                    epoch: t,
                    task: task.clone(),
                    loss: losses[task],
                    ls: ls[task.as_str()],
                    alpha,
                    weight: htl_weight(t as f64, self.total_epochs as f64, alpha),
                }
            })
            .collect();
        self.epoch += 1;
        Ok(records)
    }
}

/// How per-task losses are combined into a training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TotalLossMode {
    PlainSum,
    HtlWeighted,
}

pub fn total_loss(records: &[HtlRecord], mode: TotalLossMode) -> f64 {
    match mode {
        TotalLossMode::PlainSum => records.iter().map(|r| r.loss).sum(),
        TotalLossMode::HtlWeighted => records.iter().map(|r| r.weight * r.loss).sum(),
    }
}

/// Converging synthetic loss curves: exponential decay with a per-stage time
/// constant plus small Laplace jitter. Deeper tasks converge more slowly.
pub fn synthetic_losses(graph: &TaskGraph, epochs: usize, seed: u64) -> Vec<BTreeMap<String, f64>> {
    fn depth_of(g: &TaskGraph, t: &str) -> usize {
        g.pre[t].iter().map(|p| 1 + depth_of(g, p)).max().unwrap_or(0)
    }
    let params: Vec<(String, f64, f64, f64)> = graph
        .tasks()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let stage = depth_of(graph, t) as f64;
            let scale = 1.0 + 0.5 * i as f64;
            (t.clone(), scale, 4.0 * (1.0 + stage), 0.05 * scale)
        })
        .collect();
    let mut rng = substream(seed, 0);
    (0..epochs)
        .map(|e| {
            params
                .iter()
                .map(|(t, scale, tau, floor)| {
                    let clean = scale * (-(e as f64) / tau).exp() + floor;
                    let jitter = LaplaceDist { mu: 0.0, sigma: 0.002 * scale }.sample(&mut rng);
                    (t.clone(), (clean + jitter).max(1e-6))
                })
                .collect()
        })
        .collect()
}

/// Runs the scheduler over a full loss trace.
pub fn htl_trace(
    graph: TaskGraph,
    losses: &[BTreeMap<String, f64>],
    total_epochs: usize,
    window: usize,
) -> Result<Vec<HtlRecord>> {
    let mut state = HtlState::new(graph, total_epochs, window)?;
    let mut out = Vec::new();
    for epoch in losses {
        out.extend(state.step(epoch)?);
    }
    Ok(out)
}

pub fn htl_csv(records: &[HtlRecord]) -> String {
    let mut s = String::from("epoch,task,loss,ls,alpha,weight\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.task, r.loss, r.ls, r.alpha, r.weight
        ));
    }
    s
}
