//! Training machinery: score-function gradients for guided sampling, the
//! exact selection-expectation gradient for joint prediction, KL
//! initialization of the guidance weights, task losses, Adam, and the
//! training loop.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::estimator::{
    draw_pool, finish_estimate, EpipolarFittingTask, EpipolarSolver, EstimateConfig,
    EstimateError, EstimateReport, FittingTask, LineFittingTask,
};
use crate::geometry::{
    angular_pose_error, decompose_essential, epipolar_error, Correspondence, GeometryError,
    Line2, Model3x3, ModelKind, Pose,
};
use crate::guidance::{GuidanceError, GuidanceNet};
use crate::metrics::fscore_inliers;
use crate::rng::{mix_seed, Rng};
use crate::scoring::{select_best, selection_distribution, soft_inlier_count_line, SoftScoreParams};
use crate::solvers::solve_line_grad;
use crate::synthdata::{EpipolarScene, LineScene};

#[derive(Debug, Error)]
pub enum TrainError {
    /// The task loss of one example could not be evaluated (non-finite value,
    /// degenerate estimate, or an empty support set). The example is skipped.
    #[error("task loss is not finite")]
    NonFiniteLoss,
    #[error("missing ground truth: {0}")]
    MissingGroundTruth(&'static str),
    #[error("unsupported combination: {0}")]
    Unsupported(&'static str),
    #[error("aborted after {0} consecutive examples with non-finite losses")]
    AbortedNonFinite(usize),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Task loss minimized in expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Angular pose error in degrees after essential decomposition.
    PoseAngular,
    /// Negated hard inlier count of the final model (self-supervised; no
    /// ground truth consumed). Raw value; gradients scale it by `1/n`.
    InlierCount,
    /// Negated inlier-set F-score against the ground-truth model.
    FScore,
    /// Mean epipolar error of the claimed inliers against the ground-truth
    /// model.
    MeanEpipolar,
    /// Robustified maximum vertical deviation from the ground-truth line.
    LineDistance,
}

/// Variance-reduction baseline for the score-function gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// Mean task loss over the example's hypothesis pools.
    BatchMean,
    /// No baseline (kept for variance comparisons).
    None,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    /// Hypothesis pools drawn per example (K).
    pub k: usize,
    /// Hypotheses per pool (M).
    pub m: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Expected-task-loss iterations.
    pub iterations: usize,
    pub objective: Objective,
    pub baseline: Baseline,
    pub seed: u64,
    /// Inlier threshold (tau) used for support sets and hard scores.
    pub inlier_threshold: f64,
    pub epipolar_solver: EpipolarSolver,
    /// Iterations of KL initialization before the expected-loss phase.
    pub kl_iterations: usize,
    pub kl_sigma: f64,
    /// Soft-count parameters for the joint line task.
    pub soft: SoftScoreParams,
    pub point_scale: f64,
    /// Whether trunk gradients are blocked when the weights branch alone
    /// would starve the point predictions.
    pub blockade: bool,
    pub max_resample_attempts: usize,
}

impl TrainConfig {
    pub fn new(objective: Objective) -> Self {
        TrainConfig {
            k: 4,
            m: 16,
            learning_rate: 1e-3,
            batch_size: 32,
            iterations: 5000,
            objective,
            baseline: Baseline::BatchMean,
            seed: 0,
            inlier_threshold: match objective {
                Objective::LineDistance => 0.05,
                _ => 1e-3,
            },
            epipolar_solver: EpipolarSolver::EightPoint,
            kl_iterations: 0,
            kl_sigma: 1e-3,
            soft: SoftScoreParams::line_defaults(),
            point_scale: 1.0,
            blockade: true,
            max_resample_attempts: crate::sampling::DEFAULT_MAX_RESAMPLE,
        }
    }

    fn validate(&self) {
        assert!(self.k >= 1, "need at least one pool per example");
        assert!(self.m >= 1, "need at least one hypothesis per pool");
        assert!(
            self.learning_rate >= 0.0 && self.learning_rate.is_finite(),
            "learning rate must be finite and non-negative"
        );
        assert!(self.batch_size >= 1, "batch size must be positive");
        assert!(self.inlier_threshold > 0.0, "inlier threshold must be positive");
        assert!(self.kl_sigma > 0.0, "KL bandwidth must be positive");
    }

    fn estimate_config(&self, seed: u64) -> EstimateConfig {
        EstimateConfig {
            pool_size: self.m,
            inlier_threshold: self.inlier_threshold,
            seed,
            max_resample_attempts: self.max_resample_attempts,
        }
    }
}

/// One two-view training scene.
#[derive(Debug, Clone)]
pub struct EpipolarExample {
    pub correspondences: Vec<Correspondence>,
    pub kind: ModelKind,
    pub gt_pose: Option<Pose>,
    pub gt_model: Option<Model3x3>,
}

/// One rasterized line scene for joint prediction.
#[derive(Debug, Clone)]
pub struct LineExample {
    /// Flattened per-patch features, `input_dim` values per patch.
    pub features: Vec<f64>,
    pub anchors: Vec<[f64; 2]>,
    pub gt_line: Option<Line2>,
}

#[derive(Debug, Clone)]
pub enum TrainExample {
    Epipolar(EpipolarExample),
    /// Plain 2-D observations guided by a weights-only network whose inputs
    /// are the point coordinates.
    LinePoints { points: Vec<[f64; 2]>, gt_line: Line2 },
    Line(LineExample),
}

impl TrainExample {
    pub fn from_epipolar_scene(scene: &EpipolarScene, kind: ModelKind) -> Self {
        let (correspondences, gt_model) = match kind {
            ModelKind::Essential => (scene.correspondences.clone(), scene.gt_essential),
            ModelKind::Fundamental => (scene.pixel_correspondences(), scene.gt_fundamental),
        };
        TrainExample::Epipolar(EpipolarExample {
            correspondences,
            kind,
            gt_pose: Some(scene.gt_pose),
            gt_model: Some(gt_model),
        })
    }

    pub fn from_line_scene(scene: &LineScene) -> Self {
        TrainExample::Line(LineExample {
            features: scene.features.clone(),
            anchors: scene.anchors.clone(),
            gt_line: Some(scene.gt_line),
        })
    }

    pub fn n_observations(&self) -> usize {
        match self {
            TrainExample::Epipolar(e) => e.correspondences.len(),
            TrainExample::LinePoints { points, .. } => points.len(),
            TrainExample::Line(e) => e.anchors.len(),
        }
    }
}

/// Per-observation network input rows for a correspondence set: coordinates
/// for width 4, coordinates plus the ratio channel for width 5.
pub fn epipolar_features(
    corrs: &[Correspondence],
    input_dim: usize,
) -> Result<Vec<f64>, TrainError> {
    let mut features = Vec::with_capacity(corrs.len() * input_dim);
    for c in corrs {
        match input_dim {
            4 => features.extend_from_slice(&[c.x1, c.y1, c.x2, c.y2]),
            5 => {
                let r = c
                    .ratio
                    .ok_or(TrainError::MissingGroundTruth("ratio side information"))?;
                features.extend_from_slice(&[c.x1, c.y1, c.x2, c.y2, r]);
            }
            _ => return Err(TrainError::Unsupported("correspondence feature width must be 4 or 5")),
        }
    }
    Ok(features)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskLossValue {
    pub value: f64,
    pub kind: Objective,
}

/// Square-root-tempered robust loss: values below 0.25 pass through, larger
/// ones follow `0.25 * sqrt`; the boundary takes the square-root branch.
pub fn robust_loss(l: f64) -> f64 {
    assert!(l >= 0.0, "robust loss takes a non-negative input");
    if l < 0.25 {
        l
    } else {
        0.25 * l.sqrt()
    }
}

/// Line task loss: maximum vertical deviation from the reference line at the
/// unit-image edges, clamped to 1, then robustified.
pub fn line_distance(est: &Line2, gt: &Line2) -> f64 {
    let e0 = (est.y_at(0.0) - gt.y_at(0.0)).abs();
    let e1 = (est.y_at(1.0) - gt.y_at(1.0)).abs();
    // NaN (vertical lines) falls through max/min to the clamp value.
    robust_loss(e0.max(e1).min(1.0))
}

/// [`line_distance`] with its gradient in the estimated line's coefficients;
/// zero wherever the clamp is active, subgradient zero at kinks.
pub fn line_distance_grad(est: &Line2, gt: &Line2) -> (f64, [f64; 3]) {
    let eval = |x: f64| -> f64 { est.y_at(x) - gt.y_at(x) };
    let e0 = eval(0.0);
    let e1 = eval(1.0);
    let (x, e) = if e1.abs() > e0.abs() { (1.0, e1) } else { (0.0, e0) };
    let raw = e0.abs().max(e1.abs());
    if !raw.is_finite() || raw >= 1.0 {
        return (robust_loss(raw.min(1.0)), [0.0; 3]);
    }
    let value = robust_loss(raw);
    let outer = if raw < 0.25 { 1.0 } else { 0.125 / raw.sqrt() };
    let s = if e > 0.0 {
        1.0
    } else if e < 0.0 {
        -1.0
    } else {
        return (value, [0.0; 3]);
    };
    // e = -(a x + c) / b - y_gt(x).
    let b = est.b;
    let scale = outer * s;
    (value, [scale * (-x / b), scale * (est.a * x + est.c) / (b * b), scale * (-1.0 / b)])
}

/// Task loss of a finished two-view estimate. Degenerate estimates (failed
/// decomposition, empty support) surface as [`TrainError::NonFiniteLoss`].
pub fn epipolar_task_loss(
    report: &EstimateReport<Model3x3>,
    example: &EpipolarExample,
    objective: Objective,
    tau: f64,
) -> Result<TaskLossValue, TrainError> {
    let value = match objective {
        Objective::PoseAngular => {
            let gt = example.gt_pose.as_ref().ok_or(TrainError::MissingGroundTruth("pose"))?;
            if report.model.kind != ModelKind::Essential {
                return Err(TrainError::Unsupported("pose loss needs an essential matrix"));
            }
            let supports: Vec<Correspondence> =
                report.inlier_indices.iter().map(|&i| example.correspondences[i]).collect();
            match decompose_essential(&report.model, &supports) {
                Ok(pose) => angular_pose_error(&pose, gt),
                Err(_) => return Err(TrainError::NonFiniteLoss),
            }
        }
        Objective::InlierCount => -(report.inlier_indices.len() as f64),
        Objective::FScore => {
            let gt = example.gt_model.as_ref().ok_or(TrainError::MissingGroundTruth("model"))?;
            -fscore_inliers(&report.model, gt, &example.correspondences, tau)
        }
        Objective::MeanEpipolar => {
            let gt = example.gt_model.as_ref().ok_or(TrainError::MissingGroundTruth("model"))?;
            if report.inlier_indices.is_empty() {
                return Err(TrainError::NonFiniteLoss);
            }
            let sum: f64 = report
                .inlier_indices
                .iter()
                .map(|&i| epipolar_error(&example.correspondences[i], gt).unwrap_or(f64::NAN))
                .sum();
            sum / report.inlier_indices.len() as f64
        }
        Objective::LineDistance => {
            return Err(TrainError::Unsupported("line loss does not apply to two-view scenes"))
        }
    };
    if !value.is_finite() {
        return Err(TrainError::NonFiniteLoss);
    }
    Ok(TaskLossValue { value, kind: objective })
}

/// Gradient of the expected task loss with respect to the network parameters,
/// together with the mean loss it was estimated from.
#[derive(Debug, Clone)]
pub struct GradientOutcome {
    pub grads: Vec<f64>,
    pub mean_loss: f64,
}

/// Score-function estimator: K pools are drawn from the predicted weights
/// with derived seeds, each finished by argmax selection and refit; the
/// gradient of the expected loss flows through the log sampling
/// probabilities only, with the example's mean pool loss as the baseline.
fn score_function_gradient<T: FittingTask>(
    task: &T,
    features: &[f64],
    net: &GuidanceNet,
    config: &TrainConfig,
    seed: u64,
    mut loss_of: impl FnMut(&EstimateReport<T::Model>) -> Result<f64, TrainError>,
) -> Result<GradientOutcome, TrainError> {
    let forward = net.forward(features, None, config.point_scale)?;
    let n = task.n_observations();
    let mut draws: Vec<(Vec<usize>, f64)> = Vec::with_capacity(config.k);
    let mut loss_sum = 0.0;
    for k in 0..config.k {
        let est_cfg = config.estimate_config(seed.wrapping_add(k as u64));
        let mut rng = Rng::from_seed(est_cfg.seed);
        let pool = draw_pool(task, &forward.weights, &est_cfg, &mut rng)?;
        let report = finish_estimate(task, &est_cfg, &pool, select_best(&pool.scores()));
        let loss = loss_of(&report)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss);
        }
        let mut drawn = Vec::with_capacity(config.m * task.minimal_set_size());
        for entry in &pool.entries {
            drawn.extend_from_slice(entry.minimal_set.indices());
        }
        draws.push((drawn, loss));
        loss_sum += loss;
    }
    let mean_loss = loss_sum / config.k as f64;
    let baseline = match config.baseline {
        Baseline::BatchMean => mean_loss,
        Baseline::None => 0.0,
    };
    let mut grad_log_w = vec![0.0f64; n];
    for (drawn, loss) in &draws {
        let coeff = (loss - baseline) / config.k as f64;
        for &i in drawn {
            grad_log_w[i] += coeff;
        }
    }
    let grads = net.backward(&forward.cache, &grad_log_w, None, config.blockade)?;
    Ok(GradientOutcome { grads, mean_loss })
}

/// Score-function gradient for guided estimation on one example. The task
/// loss is treated as a black box; only the sampling probabilities carry
/// gradient. Inlier-count losses are normalized by the observation count
/// here, so gradient magnitudes are comparable across scene sizes.
pub fn ng_ransac_gradient(
    example: &TrainExample,
    net: &GuidanceNet,
    config: &TrainConfig,
    seed: u64,
) -> Result<GradientOutcome, TrainError> {
    match example {
        TrainExample::Epipolar(e) => {
            let features = epipolar_features(&e.correspondences, net.spec.input_dim)?;
            let task =
                EpipolarFittingTask::new(e.correspondences.clone(), e.kind, config.epipolar_solver);
            let n = e.correspondences.len() as f64;
            score_function_gradient(&task, &features, net, config, seed, |report| {
                let loss = epipolar_task_loss(report, e, config.objective, config.inlier_threshold)?;
                Ok(match config.objective {
                    Objective::InlierCount => loss.value / n,
                    _ => loss.value,
                })
            })
        }
        TrainExample::LinePoints { points, gt_line } => {
            if net.spec.input_dim != 2 {
                return Err(TrainError::Unsupported("point observations have 2 feature channels"));
            }
            let features: Vec<f64> = points.iter().flat_map(|p| [p[0], p[1]]).collect();
            let task = LineFittingTask::soft(points.clone(), config.soft);
            let n = points.len() as f64;
            match config.objective {
                Objective::LineDistance => {
                    score_function_gradient(&task, &features, net, config, seed, |report| {
                        Ok(line_distance(&report.model, gt_line))
                    })
                }
                Objective::InlierCount => {
                    score_function_gradient(&task, &features, net, config, seed, |report| {
                        Ok(-(report.inlier_indices.len() as f64) / n)
                    })
                }
                _ => Err(TrainError::Unsupported("line scenes train on line or inlier objectives")),
            }
        }
        TrainExample::Line(_) => {
            Err(TrainError::Unsupported("joint line examples train with ng_dsac_gradient"))
        }
    }
}

/// Selection expectation of one pool of line hypotheses over predicted
/// points, with its gradient into those points — the differentiable inner
/// term of the joint objective, shared with the enumeration oracle.
pub(crate) struct PoolDirect {
    pub expected: f64,
    pub grad_points: Vec<[f64; 2]>,
}

pub(crate) fn joint_pool_direct(
    points: &[[f64; 2]],
    sets: &[[usize; 2]],
    soft: &SoftScoreParams,
    gt: &Line2,
) -> PoolDirect {
    let m = sets.len();
    let mut counts = Vec::with_capacity(m);
    let mut scores = Vec::with_capacity(m);
    let mut losses = Vec::with_capacity(m);
    for set in sets {
        let line = crate::solvers::solve_line(points[set[0]], points[set[1]])
            .expect("caller provides solvable minimal sets");
        let count = soft_inlier_count_line(&line, points, soft);
        scores.push(count.value);
        counts.push(count);
        losses.push(line_distance_grad(&line, gt));
    }
    let probs = selection_distribution(&scores);
    let expected: f64 = probs.iter().zip(&losses).map(|(p, l)| p * l.0).sum();

    let mut grad_points = vec![[0.0f64; 2]; points.len()];
    for (j, set) in sets.iter().enumerate() {
        // Softmax identity: dE/ds_j = p_j (l_j - E); dE/dl_j = p_j.
        let ds = probs[j] * (losses[j].0 - expected);
        let dl = probs[j];
        let mut g_line = [0.0f64; 3];
        for r in 0..3 {
            g_line[r] = ds * counts[j].d_line[r] + dl * losses[j].1[r];
        }
        for (i, dp) in counts[j].d_points.iter().enumerate() {
            grad_points[i][0] += ds * dp[0];
            grad_points[i][1] += ds * dp[1];
        }
        let (p, q) = (points[set[0]], points[set[1]]);
        let (_, jac) = solve_line_grad(p, q).expect("set already solved above");
        for r in 0..3 {
            grad_points[set[0]][0] += g_line[r] * jac[r][0];
            grad_points[set[0]][1] += g_line[r] * jac[r][1];
            grad_points[set[1]][0] += g_line[r] * jac[r][2];
            grad_points[set[1]][1] += g_line[r] * jac[r][3];
        }
    }
    PoolDirect { expected, grad_points }
}

/// Joint gradient for the line task: the selection expectation over each
/// pool is computed exactly, so the gradient has two parts — the
/// score-function term through the sampling probabilities, and the direct
/// term through hypothesis scores and losses into the predicted points.
pub fn ng_dsac_gradient(
    example: &LineExample,
    net: &GuidanceNet,
    config: &TrainConfig,
    seed: u64,
) -> Result<GradientOutcome, TrainError> {
    if config.objective != Objective::LineDistance {
        return Err(TrainError::Unsupported("joint line training uses the line objective"));
    }
    let gt = example.gt_line.as_ref().ok_or(TrainError::MissingGroundTruth("line"))?;
    let forward = net.forward(&example.features, Some(&example.anchors), config.point_scale)?;
    let points = forward
        .points
        .clone()
        .ok_or(GuidanceError::ShapeMismatch("joint training needs the points head"))?;
    let task = LineFittingTask::soft(points.clone(), config.soft);
    let n = points.len();

    let mut pool_sets: Vec<Vec<[usize; 2]>> = Vec::with_capacity(config.k);
    let mut directs: Vec<PoolDirect> = Vec::with_capacity(config.k);
    let mut expected_sum = 0.0;
    for k in 0..config.k {
        let est_cfg = config.estimate_config(seed.wrapping_add(k as u64));
        let mut rng = Rng::from_seed(est_cfg.seed);
        let pool = draw_pool(&task, &forward.weights, &est_cfg, &mut rng)?;
        let sets: Vec<[usize; 2]> = pool
            .entries
            .iter()
            .map(|e| {
                let idx = e.minimal_set.indices();
                [idx[0], idx[1]]
            })
            .collect();
        let direct = joint_pool_direct(&points, &sets, &config.soft, gt);
        if !direct.expected.is_finite() {
            return Err(TrainError::NonFiniteLoss);
        }
        expected_sum += direct.expected;
        pool_sets.push(sets);
        directs.push(direct);
    }
    let mean_loss = expected_sum / config.k as f64;
    let baseline = match config.baseline {
        Baseline::BatchMean => mean_loss,
        Baseline::None => 0.0,
    };

    let mut grad_log_w = vec![0.0f64; n];
    let mut grad_points = vec![[0.0f64; 2]; n];
    for (sets, direct) in pool_sets.iter().zip(&directs) {
        // Score-function part: the pool's expected loss plays the role of
        // the sampled loss.
        let coeff = (direct.expected - baseline) / config.k as f64;
        for set in sets {
            grad_log_w[set[0]] += coeff;
            grad_log_w[set[1]] += coeff;
        }
        for (acc, g) in grad_points.iter_mut().zip(&direct.grad_points) {
            acc[0] += g[0] / config.k as f64;
            acc[1] += g[1] / config.k as f64;
        }
    }
    let grads = net.backward(&forward.cache, &grad_log_w, Some(&grad_points), config.blockade)?;
    Ok(GradientOutcome { grads, mean_loss })
}

/// Target sampling distribution for KL initialization: probability mass
/// proportional to `exp(-d / (2 sigma^2))` over the ground-truth residuals,
/// stabilized by shifting the smallest residual to zero.
pub fn kl_target(distances: &[f64], sigma: f64) -> Vec<f64> {
    assert!(!distances.is_empty(), "need at least one observation");
    assert!(sigma > 0.0, "bandwidth must be positive");
    let d_min = distances.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = 2.0 * sigma * sigma;
    let raw: Vec<f64> = distances.iter().map(|&d| (-(d - d_min) / scale).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|e| e / total).collect()
}

/// One KL-initialization step: gradient of `KL(target || predicted weights)`
/// for a labeled scene, along with the divergence value.
pub fn kl_init_step(
    example: &EpipolarExample,
    net: &GuidanceNet,
    sigma: f64,
) -> Result<(Vec<f64>, f64), TrainError> {
    let gt = example.gt_model.as_ref().ok_or(TrainError::MissingGroundTruth("model"))?;
    let features = epipolar_features(&example.correspondences, net.spec.input_dim)?;
    let mut distances = Vec::with_capacity(example.correspondences.len());
    for c in &example.correspondences {
        distances.push(epipolar_error(c, gt)?);
    }
    let target = kl_target(&distances, sigma);
    let forward = net.forward(&features, None, 1.0)?;
    let weights = forward.weights.weights();
    let mut kl = 0.0;
    let mut grad_log_w = vec![0.0f64; weights.len()];
    for (i, (&g, &w)) in target.iter().zip(weights).enumerate() {
        if g > 0.0 {
            kl += g * (g.ln() - w.ln());
        }
        grad_log_w[i] = -g;
    }
    let grads = net.backward(&forward.cache, &grad_log_w, None, true)?;
    Ok((grads, kl))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment accumulators for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }
}

/// One Adam update with bias correction.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len(), "gradient length mismatch");
    assert_eq!(params.len(), state.m.len(), "state length mismatch");
    state.t += 1;
    let bias1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bias2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for i in 0..params.len() {
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * grads[i];
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// One training-loop progress row.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean task loss of the batch; absent during KL iterations or when the
    /// whole batch was skipped.
    pub mean_loss: Option<f64>,
    /// Mean KL divergence of the batch during the initialization phase.
    pub kl: Option<f64>,
    /// Seconds since the loop started.
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<IterationRecord>,
    /// Examples skipped for non-finite losses.
    pub skipped_examples: usize,
}

const MAX_CONSECUTIVE_SKIPS: usize = 100;

/// Trains the guidance network in place: an optional KL-initialization phase
/// followed by expected-task-loss descent. Batches cycle the dataset in
/// order; every randomized draw derives its seed from the configuration, so
/// a rerun with the same inputs reproduces the same loss curve.
pub fn train_loop(
    dataset: &[TrainExample],
    net: &mut GuidanceNet,
    config: &TrainConfig,
    mut on_iteration: impl FnMut(&IterationRecord),
) -> Result<TrainOutcome, TrainError> {
    config.validate();
    assert!(!dataset.is_empty(), "training needs at least one example");
    let start = Instant::now();
    let mut adam = AdamState::new(net.params.len());
    let mut records = Vec::with_capacity(config.kl_iterations + config.iterations);
    let mut skipped_examples = 0usize;
    let mut consecutive_skips = 0usize;

    for iteration in 0..config.kl_iterations {
        let mut grads = vec![0.0f64; net.params.len()];
        let mut kl_sum = 0.0;
        for j in 0..config.batch_size {
            let example = &dataset[(iteration * config.batch_size + j) % dataset.len()];
            let TrainExample::Epipolar(e) = example else {
                return Err(TrainError::Unsupported("KL initialization needs two-view scenes"));
            };
            let (g, kl) = kl_init_step(e, net, config.kl_sigma)?;
            for (acc, gi) in grads.iter_mut().zip(&g) {
                *acc += gi / config.batch_size as f64;
            }
            kl_sum += kl;
        }
        adam_step(&mut net.params, &grads, &mut adam, config.learning_rate);
        let record = IterationRecord {
            iteration,
            mean_loss: None,
            kl: Some(kl_sum / config.batch_size as f64),
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_iteration(&record);
        records.push(record);
    }

    for iteration in 0..config.iterations {
        let mut grads = vec![0.0f64; net.params.len()];
        let mut loss_sum = 0.0;
        let mut used = 0usize;
        for j in 0..config.batch_size {
            let idx = (iteration * config.batch_size + j) % dataset.len();
            let example = &dataset[idx];
            let seed = mix_seed(&[config.seed, iteration as u64, j as u64]);
            let outcome = match example {
                TrainExample::Epipolar(_) | TrainExample::LinePoints { .. } => {
                    ng_ransac_gradient(example, net, config, seed)
                }
                TrainExample::Line(e) => ng_dsac_gradient(e, net, config, seed),
            };
            match outcome {
                Ok(out) => {
                    consecutive_skips = 0;
                    used += 1;
                    loss_sum += out.mean_loss;
                    for (acc, gi) in grads.iter_mut().zip(&out.grads) {
                        *acc += gi;
                    }
                }
                Err(TrainError::NonFiniteLoss) => {
                    skipped_examples += 1;
                    consecutive_skips += 1;
                    if consecutive_skips >= MAX_CONSECUTIVE_SKIPS {
                        return Err(TrainError::AbortedNonFinite(consecutive_skips));
                    }
                }
                Err(other) => return Err(other),
            }
        }
        let mean_loss = if used > 0 {
            for g in grads.iter_mut() {
                *g /= used as f64;
            }
            adam_step(&mut net.params, &grads, &mut adam, config.learning_rate);
            Some(loss_sum / used as f64)
        } else {
            None
        };
        let record = IterationRecord {
            iteration: config.kl_iterations + iteration,
            mean_loss,
            kl: None,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_iteration(&record);
        records.push(record);
    }

    Ok(TrainOutcome { records, skipped_examples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::{GuidanceNetSpec, HeadKind};
    use crate::sampling::GuidanceDistribution;
    use crate::synthdata::{
        gen_epipolar_scene, gen_line_scene, EpipolarSceneConfig, LineSceneConfig, SideInfo,
    };

    fn line_through(p: [f64; 2], q: [f64; 2]) -> Line2 {
        crate::solvers::solve_line(p, q).unwrap()
    }

    #[test]
    fn robust_loss_frozen_values() {
        assert_eq!(robust_loss(0.0), 0.0);
        assert_eq!(robust_loss(1.0), 0.25);
        // Boundary takes the square-root branch.
        assert_eq!(robust_loss(0.25), 0.125);
    }

    #[test]
    fn robust_loss_is_monotone_on_each_branch() {
        let mut prev = -1.0;
        for i in 0..100 {
            let l = 0.25 * i as f64 / 100.0;
            let v = robust_loss(l);
            assert!(v > prev);
            prev = v;
        }
        let mut prev = 0.0;
        for i in 0..100 {
            let l = 0.25 + 3.75 * i as f64 / 100.0;
            let v = robust_loss(l);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn line_distance_of_the_reference_line_is_zero() {
        let gt = line_through([0.0, 0.2], [1.0, 0.7]);
        assert_eq!(line_distance(&gt, &gt), 0.0);
    }

    #[test]
    fn line_distance_clamps_large_and_vertical_deviations() {
        let gt = line_through([0.0, 0.5], [1.0, 0.5]);
        let far = line_through([0.0, 4.5], [1.0, 6.5]);
        assert_eq!(line_distance(&far, &gt), 0.25);
        let vertical = Line2::new(1.0, 0.0, -0.5).unwrap();
        assert_eq!(line_distance(&vertical, &gt), 0.25);
        // A deviation of exactly 1 robustifies to 0.25 as well.
        let unit_loss = line_through([0.0, 1.5], [1.0, 1.2]);
        assert_eq!(line_distance(&unit_loss, &gt), 0.25);
    }

    #[test]
    fn line_distance_grad_matches_finite_differences() {
        let mut rng = Rng::from_seed(77);
        let mut checked = 0usize;
        for _ in 0..300 {
            let gt = line_through(
                [0.0, rng.uniform_in(0.2, 0.8)],
                [1.0, rng.uniform_in(0.2, 0.8)],
            );
            let est = line_through(
                [0.0, rng.uniform_in(0.0, 1.0)],
                [1.0, rng.uniform_in(0.0, 1.0)],
            );
            let (value, grad) = line_distance_grad(&est, &gt);
            let e0 = (est.y_at(0.0) - gt.y_at(0.0)).abs();
            let e1 = (est.y_at(1.0) - gt.y_at(1.0)).abs();
            let raw = e0.max(e1);
            // Skip kink neighborhoods: max switch, robust boundary, clamp,
            // and the |.| kink at zero.
            let margin = 1e-4;
            if (e0 - e1).abs() < margin
                || (raw - 0.25).abs() < margin
                || (raw - 1.0).abs() < margin
                || raw < margin
            {
                continue;
            }
            checked += 1;
            let h = 1e-6;
            let coeffs = [est.a, est.b, est.c];
            for k in 0..3 {
                let mut lo = coeffs;
                let mut hi = coeffs;
                lo[k] -= h;
                hi[k] += h;
                let f = |c: [f64; 3]| {
                    line_distance(&Line2::new(c[0], c[1], c[2]).unwrap(), &gt)
                };
                let fd = (f(hi) - f(lo)) / (2.0 * h);
                // Floor above the FD rounding noise, ulp(value) / h ~ 1e-10.
                let denom = fd.abs().max(grad[k].abs()).max(1e-4);
                assert!(
                    (fd - grad[k]).abs() / denom < 1e-4,
                    "coeff {k}: analytic {} vs fd {fd} (value {value})",
                    grad[k]
                );
            }
        }
        assert!(checked >= 150, "only {checked} informative cases");
    }

    #[test]
    fn inlier_count_loss_is_the_negated_count() {
        let report = EstimateReport {
            model: Model3x3::fundamental(nalgebra::Matrix3::new(
                0.0, 0.0, 1.0, 0.0, 0.0, -1.0, -1.0, 1.0, 0.0,
            ))
            .unwrap(),
            selected_index: 0,
            score: 50.0,
            inlier_indices: (0..50).collect(),
            pools_drawn: 1,
            hypotheses_drawn: 1,
            rng_seed: 0,
            hypothesis_log_probs: vec![0.0],
            refit_applied: false,
            warnings: Vec::new(),
        };
        let example = EpipolarExample {
            correspondences: vec![Correspondence::new(0.0, 0.0, 0.0, 0.0); 64],
            kind: ModelKind::Fundamental,
            gt_pose: None,
            gt_model: None,
        };
        let loss =
            epipolar_task_loss(&report, &example, Objective::InlierCount, 1e-3).unwrap();
        assert_eq!(loss.value, -50.0);
        assert_eq!(loss.kind, Objective::InlierCount);
        // Pose loss without ground truth is a hard error, not a skip.
        assert!(matches!(
            epipolar_task_loss(&report, &example, Objective::PoseAngular, 1e-3),
            Err(TrainError::MissingGroundTruth("pose"))
        ));
    }

    #[test]
    fn adam_with_zero_gradients_is_the_identity() {
        let mut params = vec![0.5, -1.25, 3.0];
        let reference = params.clone();
        let mut state = AdamState::new(3);
        for _ in 0..5 {
            adam_step(&mut params, &[0.0; 3], &mut state, 0.05);
        }
        assert_eq!(params, reference);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let mut params = vec![1.0, 2.0, -3.0];
        let mut state = AdamState::new(3);
        let lr = 0.01;
        adam_step(&mut params, &[3.0, -0.5, 1e-3], &mut state, lr);
        let steps = [1.0 - params[0], 2.0 - params[1], -3.0 - params[2]];
        // First bias-corrected step is lr * g / (|g| + eps) = lr * sign(g)
        // up to eps/|g|.
        assert!((steps[0] - lr).abs() < 1e-6);
        assert!((steps[1] + lr).abs() < 1e-6);
        assert!((steps[2] - lr).abs() < 1e-4 * lr + 1e-9);
    }

    #[test]
    fn adam_constant_gradient_step_settles_at_learning_rate() {
        let mut params = vec![0.0];
        let mut state = AdamState::new(1);
        let lr = 0.002;
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = params[0];
            adam_step(&mut params, &[0.7], &mut state, lr);
            last = before - params[0];
        }
        assert!((last - lr).abs() < 1e-3 * lr, "step {last} vs lr {lr}");
    }

    fn weights_only_net(input_dim: usize, seed: u64) -> GuidanceNet {
        GuidanceNet::init(GuidanceNetSpec::new(input_dim, 8, 1, HeadKind::WeightsOnly), seed)
    }

    #[test]
    fn equal_losses_give_an_exactly_zero_gradient() {
        // All observations sit on the reference line, so every pool refits to
        // the same model and every loss equals the baseline.
        let gt = line_through([0.0, 0.3], [1.0, 0.6]);
        let points: Vec<[f64; 2]> =
            (0..8).map(|i| [i as f64 / 7.0, gt.y_at(i as f64 / 7.0)]).collect();
        let example = TrainExample::LinePoints { points, gt_line: gt };
        let net = weights_only_net(2, 3);
        let mut config = TrainConfig::new(Objective::LineDistance);
        config.k = 4;
        config.m = 4;
        let out = ng_ransac_gradient(&example, &net, &config, 12).unwrap();
        // Every pool refits over the same full inlier set, so all K losses
        // are identical (though refit rounding can leave them a hair above
        // zero) and the baseline cancels them exactly.
        assert!(out.mean_loss.abs() < 1e-12);
        assert!(out.grads.iter().all(|&g| g == 0.0), "expected exact zeros");
    }

    #[test]
    fn score_gradient_descends_toward_inlier_mass() {
        // 8 points on a line plus 4 far-off points; a few descent steps must
        // shift sampling mass onto the line points.
        let gt = line_through([0.0, 0.4], [1.0, 0.5]);
        let mut points: Vec<[f64; 2]> =
            (0..8).map(|i| [i as f64 / 7.0, gt.y_at(i as f64 / 7.0)]).collect();
        points.extend([[0.1, 0.95], [0.4, 0.02], [0.7, 0.93], [0.95, 0.07]]);
        let example = TrainExample::LinePoints { points: points.clone(), gt_line: gt };
        let mut net = weights_only_net(2, 17);
        // Small pools keep the per-pool losses varied (a large pool almost
        // always contains an all-inlier pair, flattening the signal).
        let mut config = TrainConfig::new(Objective::InlierCount);
        config.inlier_threshold = 0.05;
        config.k = 8;
        config.m = 2;
        config.learning_rate = 0.02;

        let features: Vec<f64> = points.iter().flat_map(|p| [p[0], p[1]]).collect();
        let mass = |net: &GuidanceNet| -> f64 {
            let f = net.forward(&features, None, 1.0).unwrap();
            f.weights.weights()[..8].iter().sum()
        };
        let before = mass(&net);
        let mut adam = AdamState::new(net.params.len());
        for step in 0..120 {
            let out = ng_ransac_gradient(&example, &net, &config, 1000 + step).unwrap();
            adam_step(&mut net.params, &out.grads, &mut adam, config.learning_rate);
        }
        let after = mass(&net);
        assert!(
            after > before + 0.05,
            "inlier mass did not grow: {before:.3} -> {after:.3}"
        );
    }

    #[test]
    fn kl_target_concentrates_on_the_smallest_distance() {
        let target = kl_target(&[0.0, 1.0, 2.0], 0.1);
        assert!(target[0] > 0.999);
        let uniform = kl_target(&[0.5; 4], 0.1);
        for &g in &uniform {
            assert!((g - 0.25).abs() < 1e-15);
        }
        let sum: f64 = target.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kl_step_vanishes_when_the_net_matches_the_target() {
        // Identical observations: equivariance forces uniform weights, and
        // equal distances force a uniform target.
        let n = 16;
        let c = Correspondence::new(0.1, -0.2, 0.15, -0.1);
        let example = EpipolarExample {
            correspondences: vec![c; n],
            kind: ModelKind::Essential,
            gt_pose: None,
            gt_model: Some(
                Pose::new(
                    crate::geometry::rotation_about(nalgebra::Vector3::z(), 0.2),
                    nalgebra::Vector3::new(1.0, 0.2, 0.1),
                )
                .unwrap()
                .essential(),
            ),
        };
        let net = weights_only_net(4, 5);
        let (grads, kl) = kl_init_step(&example, &net, 1e-3).unwrap();
        assert!(kl.abs() < 1e-12, "kl {kl}");
        let norm: f64 = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-9, "gradient norm {norm}");
    }

    #[test]
    fn kl_divergence_is_nonnegative_on_random_scenes() {
        for seed in 0..20 {
            let scene = gen_epipolar_scene(&EpipolarSceneConfig::new(32, 0.4, 1e-3, seed));
            let TrainExample::Epipolar(example) =
                TrainExample::from_epipolar_scene(&scene, ModelKind::Essential)
            else {
                unreachable!()
            };
            let net = weights_only_net(4, seed);
            let (_, kl) = kl_init_step(&example, &net, 1e-3).unwrap();
            assert!(kl >= -1e-12, "kl {kl} at seed {seed}");
        }
    }

    #[test]
    fn kl_descent_reduces_the_divergence_across_seeds() {
        let mut successes = 0;
        for seed in 0..100 {
            let mut config = EpipolarSceneConfig::new(32, 0.5, 1e-3, 9000 + seed);
            config.side_info = SideInfo::Informative { separation: 0.2 };
            let scene = gen_epipolar_scene(&config);
            let TrainExample::Epipolar(example) =
                TrainExample::from_epipolar_scene(&scene, ModelKind::Essential)
            else {
                unreachable!()
            };
            let mut net = weights_only_net(5, seed);
            let (_, kl_start) = kl_init_step(&example, &net, 1e-3).unwrap();
            let mut adam = AdamState::new(net.params.len());
            let mut kl_end = kl_start;
            for _ in 0..100 {
                let (grads, kl) = kl_init_step(&example, &net, 1e-3).unwrap();
                kl_end = kl;
                adam_step(&mut net.params, &grads, &mut adam, 0.01);
            }
            if kl_end < kl_start {
                successes += 1;
            }
        }
        assert!(successes >= 95, "KL decreased in only {successes}/100 trials");
    }

    fn joint_net(seed: u64) -> GuidanceNet {
        GuidanceNet::init(GuidanceNetSpec::new(4, 8, 1, HeadKind::PointsAndWeights), seed)
    }

    #[test]
    fn joint_gradient_is_zero_when_predictions_sit_on_the_reference() {
        // Zeroed point head: predictions equal the anchors, which lie on a
        // horizontal reference line. Every minimal set then solves to a
        // bitwise-exact copy of that line, so all losses are exactly zero
        // and the total gradient vanishes identically.
        let gt = line_through([0.0, 0.5], [1.0, 0.5]);
        let anchors: Vec<[f64; 2]> = (0..6).map(|i| [i as f64 / 5.0, 0.5]).collect();
        let features: Vec<f64> = (0..6).flat_map(|i| vec![0.1 * i as f64, 0.5, 0.0, 0.2]).collect();
        let mut net = joint_net(9);
        let head = net.params.len() - (2 * 8 + 2);
        for p in net.params[head..].iter_mut() {
            *p = 0.0;
        }
        let example = LineExample { features, anchors, gt_line: Some(gt) };
        let mut config = TrainConfig::new(Objective::LineDistance);
        config.k = 3;
        config.m = 4;
        config.blockade = false;
        let out = ng_dsac_gradient(&example, &net, &config, 5).unwrap();
        assert_eq!(out.mean_loss, 0.0);
        assert!(out.grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn joint_direct_term_matches_finite_differences() {
        // With K = 1 and the batch-mean baseline the score-function part
        // cancels exactly, leaving the direct selection-expectation term,
        // which is differentiable for a fixed pool of minimal sets.
        let scene = gen_line_scene(&LineSceneConfig {
            grid: 32,
            patch: 8,
            ..LineSceneConfig::new(21)
        });
        let example = LineExample {
            features: scene.features.clone(),
            anchors: scene.anchors.clone(),
            gt_line: Some(scene.gt_line),
        };
        let net = joint_net(33);
        let mut config = TrainConfig::new(Objective::LineDistance);
        config.k = 1;
        config.m = 4;
        config.blockade = false;
        let seed = 71;

        let expected_loss = |net: &GuidanceNet| -> (f64, Vec<[usize; 2]>) {
            let f = net.forward(&example.features, Some(&example.anchors), 1.0).unwrap();
            let points = f.points.clone().unwrap();
            let task = LineFittingTask::soft(points.clone(), config.soft);
            let est = config.estimate_config(seed);
            let mut rng = Rng::from_seed(est.seed);
            let pool = draw_pool(&task, &f.weights, &est, &mut rng).unwrap();
            let mut scores = Vec::new();
            let mut losses = Vec::new();
            let mut sets = Vec::new();
            for e in &pool.entries {
                scores.push(soft_inlier_count_line(&e.model, &points, &config.soft).value);
                losses.push(line_distance(&e.model, &scene.gt_line));
                let idx = e.minimal_set.indices();
                sets.push([idx[0], idx[1]]);
            }
            let probs = selection_distribution(&scores);
            (probs.iter().zip(&losses).map(|(p, l)| p * l).sum(), sets)
        };

        let (_, base_sets) = expected_loss(&net);
        let out = ng_dsac_gradient(&example, &net, &config, seed).unwrap();

        let mut checked = 0usize;
        let mut perturbed = net.clone();
        for i in 0..net.params.len() {
            let h = 1e-6;
            let fd_at = |p: &mut GuidanceNet, step: f64| -> Option<f64> {
                p.params[i] = net.params[i] + step;
                let (hi, hi_sets) = expected_loss(p);
                p.params[i] = net.params[i] - step;
                let (lo, lo_sets) = expected_loss(p);
                p.params[i] = net.params[i];
                // Different pool draws mean the perturbation crossed a
                // sampling boundary; the comparison is invalid there.
                if hi_sets != base_sets || lo_sets != base_sets {
                    return None;
                }
                Some((hi - lo) / (2.0 * step))
            };
            let Some(fd) = fd_at(&mut perturbed, h) else { continue };
            let Some(fd_fine) = fd_at(&mut perturbed, h / 8.0) else { continue };
            let denom = fd.abs().max(out.grads[i].abs());
            if denom < 1e-5 {
                continue;
            }
            if (fd - fd_fine).abs() > 1e-3 * denom {
                continue; // FD itself unstable at this coordinate
            }
            checked += 1;
            assert!(
                (out.grads[i] - fd).abs() / denom < 1e-3,
                "param {i}: analytic {} vs fd {fd}",
                out.grads[i]
            );
        }
        assert!(checked * 3 >= net.params.len(), "only {checked} informative coordinates");
    }

    #[test]
    fn train_loop_with_zero_learning_rate_leaves_parameters_bitwise_intact() {
        let gt = line_through([0.0, 0.3], [1.0, 0.7]);
        let points: Vec<[f64; 2]> = (0..10)
            .map(|i| {
                let x = i as f64 / 9.0;
                if i % 3 == 0 { [x, 0.9 - x] } else { [x, gt.y_at(x)] }
            })
            .collect();
        let dataset = vec![TrainExample::LinePoints { points, gt_line: gt }];
        let mut net = weights_only_net(2, 41);
        let reference = net.params.clone();
        let mut config = TrainConfig::new(Objective::LineDistance);
        config.learning_rate = 0.0;
        config.k = 2;
        config.m = 4;
        config.batch_size = 2;
        config.iterations = 3;
        let outcome = train_loop(&dataset, &mut net, &config, |_| {}).unwrap();
        assert_eq!(net.params, reference);
        assert_eq!(outcome.records.len(), 3);
    }

    #[test]
    fn train_loop_is_deterministic_in_the_seed() {
        let mut scene_cfg = EpipolarSceneConfig::new(24, 0.4, 1e-3, 700);
        scene_cfg.side_info = SideInfo::Informative { separation: 0.3 };
        let dataset: Vec<TrainExample> = (0..3)
            .map(|i| {
                scene_cfg.seed = 700 + i;
                TrainExample::from_epipolar_scene(&gen_epipolar_scene(&scene_cfg), ModelKind::Essential)
            })
            .collect();
        let mut config = TrainConfig::new(Objective::InlierCount);
        config.k = 2;
        config.m = 4;
        config.batch_size = 2;
        config.iterations = 4;
        config.kl_iterations = 2;
        config.learning_rate = 0.01;

        let run = |config: &TrainConfig| {
            let mut net = weights_only_net(5, 13);
            let outcome = train_loop(&dataset, &mut net, config, |_| {}).unwrap();
            (net.params, outcome)
        };
        let (params_a, out_a) = run(&config);
        let (params_b, out_b) = run(&config);
        assert_eq!(params_a, params_b);
        let curve = |o: &TrainOutcome| -> Vec<(Option<f64>, Option<f64>)> {
            o.records.iter().map(|r| (r.mean_loss, r.kl)).collect()
        };
        assert_eq!(curve(&out_a), curve(&out_b));
        assert_eq!(out_a.records.len(), 6);
        assert!(out_a.records[0].kl.is_some() && out_a.records[0].mean_loss.is_none());
        assert!(out_a.records[5].kl.is_none() && out_a.records[5].mean_loss.is_some());
    }

    #[test]
    fn train_loop_aborts_after_persistent_nonfinite_losses() {
        let scene = gen_epipolar_scene(&EpipolarSceneConfig::new(24, 0.3, 1e-3, 808));
        let dataset = vec![TrainExample::from_epipolar_scene(&scene, ModelKind::Essential)];
        let mut net = weights_only_net(4, 2);
        let mut config = TrainConfig::new(Objective::MeanEpipolar);
        // A threshold no residual can beat leaves every support set empty.
        config.inlier_threshold = 1e-300;
        config.k = 1;
        config.m = 2;
        config.batch_size = 8;
        config.iterations = 50;
        let err = train_loop(&dataset, &mut net, &config, |_| {}).unwrap_err();
        assert!(matches!(err, TrainError::AbortedNonFinite(100)));
    }

    #[test]
    fn guided_training_lifts_mass_onto_true_inliers() {
        // Self-supervised objective on side-info scenes: after a short run,
        // held-out sampling mass on ground-truth inliers must grow.
        let make = |seed: u64| {
            let mut cfg = EpipolarSceneConfig::new(32, 0.5, 2e-3, seed);
            cfg.side_info = SideInfo::Informative { separation: 0.3 };
            gen_epipolar_scene(&cfg)
        };
        let dataset: Vec<TrainExample> = (0..8)
            .map(|i| TrainExample::from_epipolar_scene(&make(100 + i), ModelKind::Essential))
            .collect();
        let holdout = make(999);
        let mut net = weights_only_net(5, 7);

        let mass = |net: &GuidanceNet| -> f64 {
            let features = epipolar_features(&holdout.correspondences, 5).unwrap();
            let f = net.forward(&features, None, 1.0).unwrap();
            f.weights
                .weights()
                .iter()
                .zip(&holdout.correspondences)
                .filter(|(_, c)| c.gt_inlier == Some(true))
                .map(|(w, _)| w)
                .sum()
        };
        let before = mass(&net);
        let mut config = TrainConfig::new(Objective::InlierCount);
        config.k = 4;
        config.m = 8;
        config.batch_size = 4;
        config.iterations = 150;
        config.learning_rate = 0.01;
        let outcome = train_loop(&dataset, &mut net, &config, |_| {}).unwrap();
        let after = mass(&net);
        assert!(
            after > before + 0.1,
            "holdout inlier mass did not grow: {before:.3} -> {after:.3} (skipped {})",
            outcome.skipped_examples
        );
    }

    #[test]
    fn feature_extraction_validates_width_and_side_info() {
        let plain = vec![Correspondence::new(0.0, 0.1, 0.2, 0.3); 4];
        assert_eq!(epipolar_features(&plain, 4).unwrap().len(), 16);
        assert!(matches!(
            epipolar_features(&plain, 5),
            Err(TrainError::MissingGroundTruth(_))
        ));
        assert!(matches!(epipolar_features(&plain, 3), Err(TrainError::Unsupported(_))));
        let mut with_ratio = plain.clone();
        for c in with_ratio.iter_mut() {
            c.ratio = Some(0.4);
        }
        assert_eq!(epipolar_features(&with_ratio, 5).unwrap().len(), 20);
    }

    #[test]
    fn uniform_weights_expose_the_plain_estimator_inside_training() {
        // A guidance distribution with equal weights drives the same draws
        // as uniform sampling, so gradients at uniform weights describe the
        // plain estimator's behaviour.
        let dist = GuidanceDistribution::uniform(6);
        assert_eq!(dist.weights(), &[1.0 / 6.0; 6]);
    }
}
