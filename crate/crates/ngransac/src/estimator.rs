//! End-to-end robust estimators: RANSAC with uniform sampling, NG-RANSAC with
//! guided sampling, probabilistic (DSAC) hypothesis selection, the joint
//! point-and-weight estimator, and the adaptive hypothesis budget.

use crate::geometry::{epipolar_error, point_line_distance, Correspondence, Line2, Model3x3, ModelKind};
use crate::guidance::{ForwardCache, GuidanceError, GuidanceNet};
use crate::rng::Rng;
use crate::sampling::{
    ratio_filter, sample_pool, GuidanceDistribution, HypothesisPool, SampleError, SamplerConfig,
};
use crate::scoring::{
    inlier_count, select_best, selection_distribution, soft_inlier_count, SoftScoreParams,
};
use crate::solvers::{
    refit_line, refit_matrix, solve_fundamental_7pt, solve_fundamental_8pt, solve_line,
    MinimalSet, SolveError,
};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EstimateError {
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
}

/// A robust-fitting problem: observations, a minimal solver, a residual, a
/// hypothesis score, and a refit procedure.
pub trait FittingTask {
    type Model: Clone + PartialEq + std::fmt::Debug;

    fn n_observations(&self) -> usize;
    fn minimal_set_size(&self) -> usize;
    fn solve(&self, set: &MinimalSet) -> Result<Vec<Self::Model>, SolveError>;
    /// Residual of one observation; non-evaluable models yield infinity.
    fn residual(&self, model: &Self::Model, index: usize) -> f64;
    /// Hypothesis score; higher is better. Defaults to the hard inlier count.
    fn score(&self, model: &Self::Model, tau: f64) -> f64 {
        let idx: Vec<usize> = (0..self.n_observations()).collect();
        idx.iter().filter(|&&i| self.residual(model, i) < tau).count() as f64
    }
    fn refit(&self, inliers: &[usize]) -> Result<Self::Model, SolveError>;

    fn inliers(&self, model: &Self::Model, tau: f64) -> Vec<usize> {
        (0..self.n_observations()).filter(|&i| self.residual(model, i) < tau).collect()
    }
}

/// 2D line fitting over a point set; scoring is the hard inlier count or the
/// differentiable soft count.
#[derive(Debug, Clone)]
pub struct LineFittingTask {
    pub points: Vec<[f64; 2]>,
    pub soft: Option<SoftScoreParams>,
}

impl LineFittingTask {
    pub fn hard(points: Vec<[f64; 2]>) -> Self {
        LineFittingTask { points, soft: None }
    }

    pub fn soft(points: Vec<[f64; 2]>, params: SoftScoreParams) -> Self {
        LineFittingTask { points, soft: Some(params) }
    }
}

impl FittingTask for LineFittingTask {
    type Model = Line2;

    fn n_observations(&self) -> usize {
        self.points.len()
    }

    fn minimal_set_size(&self) -> usize {
        2
    }

    fn solve(&self, set: &MinimalSet) -> Result<Vec<Line2>, SolveError> {
        solve_line(self.points[set.0[0]], self.points[set.0[1]]).map(|l| vec![l])
    }

    fn residual(&self, model: &Line2, index: usize) -> f64 {
        point_line_distance(self.points[index], model).unwrap_or(f64::INFINITY)
    }

    fn score(&self, model: &Line2, tau: f64) -> f64 {
        match &self.soft {
            None => inlier_count(model, &self.points, tau, |m, &p| {
                point_line_distance(p, m).unwrap_or(f64::INFINITY)
            }) as f64,
            Some(params) => {
                let residuals: Vec<f64> =
                    (0..self.points.len()).map(|i| self.residual(model, i)).collect();
                soft_inlier_count(&residuals, params).value
            }
        }
    }

    fn refit(&self, inliers: &[usize]) -> Result<Line2, SolveError> {
        refit_line(&self.points, inliers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpipolarSolver {
    EightPoint,
    SevenPoint,
}

/// Fundamental / essential matrix fitting over correspondences.
#[derive(Debug, Clone)]
pub struct EpipolarFittingTask {
    pub corrs: Vec<Correspondence>,
    pub kind: ModelKind,
    pub solver: EpipolarSolver,
}

impl EpipolarFittingTask {
    pub fn new(corrs: Vec<Correspondence>, kind: ModelKind, solver: EpipolarSolver) -> Self {
        assert!(
            !(solver == EpipolarSolver::SevenPoint && kind == ModelKind::Essential),
            "the seven-point solver produces fundamental matrices"
        );
        EpipolarFittingTask { corrs, kind, solver }
    }
}

impl FittingTask for EpipolarFittingTask {
    type Model = Model3x3;

    fn n_observations(&self) -> usize {
        self.corrs.len()
    }

    fn minimal_set_size(&self) -> usize {
        match self.solver {
            EpipolarSolver::EightPoint => 8,
            EpipolarSolver::SevenPoint => 7,
        }
    }

    fn solve(&self, set: &MinimalSet) -> Result<Vec<Model3x3>, SolveError> {
        let subset: Vec<Correspondence> = set.0.iter().map(|&i| self.corrs[i]).collect();
        match self.solver {
            EpipolarSolver::EightPoint => {
                solve_fundamental_8pt(&subset, self.kind).map(|m| vec![m])
            }
            EpipolarSolver::SevenPoint => solve_fundamental_7pt(&subset),
        }
    }

    fn residual(&self, model: &Model3x3, index: usize) -> f64 {
        epipolar_error(&self.corrs[index], model).unwrap_or(f64::INFINITY)
    }

    fn refit(&self, inliers: &[usize]) -> Result<Model3x3, SolveError> {
        refit_matrix(&self.corrs, inliers, self.kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateConfig {
    /// Hypotheses per pool (M).
    pub pool_size: usize,
    /// Inlier threshold (tau) for support sets and hard scores.
    pub inlier_threshold: f64,
    pub seed: u64,
    pub max_resample_attempts: usize,
}

impl EstimateConfig {
    pub fn new(pool_size: usize, inlier_threshold: f64, seed: u64) -> Self {
        assert!(pool_size >= 1 && inlier_threshold > 0.0);
        EstimateConfig {
            pool_size,
            inlier_threshold,
            seed,
            max_resample_attempts: crate::sampling::DEFAULT_MAX_RESAMPLE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport<M> {
    /// Final model, after the refit policy.
    pub model: M,
    pub selected_index: usize,
    /// Score of the selected hypothesis before refitting.
    pub score: f64,
    /// Inliers of the final model at the configured threshold.
    pub inlier_indices: Vec<usize>,
    pub pools_drawn: usize,
    pub hypotheses_drawn: usize,
    pub rng_seed: u64,
    /// Per-hypothesis log sampling probability, for training reuse.
    pub hypothesis_log_probs: Vec<f64>,
    pub refit_applied: bool,
    pub warnings: Vec<String>,
}

/// RANSAC: uniform sampling, argmax selection, refit. Implemented as guided
/// estimation with uniform weights so both paths share the random sequence.
pub fn ransac<T: FittingTask>(
    task: &T,
    config: &EstimateConfig,
) -> Result<EstimateReport<T::Model>, EstimateError> {
    let n = task.n_observations();
    if n < task.minimal_set_size() {
        return Err(SampleError::NotEnoughObservations {
            needed: task.minimal_set_size(),
            got: n,
        }
        .into());
    }
    ng_ransac(task, &GuidanceDistribution::uniform(n), config)
}

/// NG-RANSAC: minimal sets drawn from a guidance distribution.
pub fn ng_ransac<T: FittingTask>(
    task: &T,
    dist: &GuidanceDistribution,
    config: &EstimateConfig,
) -> Result<EstimateReport<T::Model>, EstimateError> {
    if dist.len() != task.n_observations() {
        return Err(SampleError::InvalidDistribution(
            "guidance length differs from the observation count",
        )
        .into());
    }
    let mut rng = Rng::from_seed(config.seed);
    let pool = draw_pool(task, dist, config, &mut rng)?;
    Ok(finish_estimate(task, config, &pool, select_best(&pool.scores())))
}

pub(crate) fn draw_pool<T: FittingTask>(
    task: &T,
    dist: &GuidanceDistribution,
    config: &EstimateConfig,
    rng: &mut Rng,
) -> Result<HypothesisPool<T::Model>, EstimateError> {
    let sampler = SamplerConfig {
        pool_size: config.pool_size,
        minimal_set_size: task.minimal_set_size(),
        seed: config.seed,
        max_resample_attempts: config.max_resample_attempts,
    };
    Ok(sample_pool(
        dist,
        &sampler,
        rng,
        |set| task.solve(set),
        |m| task.score(m, config.inlier_threshold),
    )?)
}

/// Upper bound on refit rounds; guards against support sets that oscillate
/// at equal cardinality.
const MAX_REFIT_ROUNDS: usize = 8;

/// Refit policy: fit to the selected hypothesis's inliers and iterate to a
/// fixed point of the support set; fall back to the last accepted model
/// whenever a round fails or loses inliers. A minimal-set hypothesis often
/// classifies supports poorly, so a single round stops far from the
/// all-support least-squares fit.
pub(crate) fn finish_estimate<T: FittingTask>(
    task: &T,
    config: &EstimateConfig,
    pool: &HypothesisPool<T::Model>,
    selected: usize,
) -> EstimateReport<T::Model> {
    let entry = &pool.entries[selected];
    let tau = config.inlier_threshold;
    let mut model = entry.model.clone();
    let mut supports = task.inliers(&model, tau);
    let mut refit_applied = false;
    for _ in 0..MAX_REFIT_ROUNDS {
        let Ok(refit) = task.refit(&supports) else { break };
        let refit_supports = task.inliers(&refit, tau);
        if refit_supports.len() < supports.len() {
            break;
        }
        let stable = refit_supports == supports;
        model = refit;
        supports = refit_supports;
        refit_applied = true;
        if stable {
            break;
        }
    }
    let inlier_indices = task.inliers(&model, tau);
    EstimateReport {
        model,
        selected_index: selected,
        score: entry.score,
        inlier_indices,
        pools_drawn: 1,
        hypotheses_drawn: config.pool_size,
        rng_seed: config.seed,
        hypothesis_log_probs: pool.entries.iter().map(|e| e.log_prob).collect(),
        refit_applied,
        warnings: Vec::new(),
    }
}

/// Samples a pool index from the softmax selection distribution.
pub fn dsac_select(scores: &[f64], rng: &mut Rng) -> usize {
    let p = selection_distribution(scores);
    let u = rng.uniform_f64();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Expected task loss under the selection distribution.
pub fn dsac_expected_loss(scores: &[f64], losses: &[f64]) -> f64 {
    assert_eq!(scores.len(), losses.len(), "losses must align with the pool");
    assert!(losses.iter().all(|l| l.is_finite()), "losses must be finite");
    let p = selection_distribution(scores);
    p.iter().zip(losses).map(|(pi, li)| pi * li).sum()
}

/// Everything the training side needs to differentiate one guided estimate of
/// the joint point-and-weight task.
pub struct NgDsacTape {
    pub cache: ForwardCache,
    pub weights: GuidanceDistribution,
    pub points: Vec<[f64; 2]>,
    pub pool: HypothesisPool<Line2>,
    pub soft: SoftScoreParams,
}

/// Joint estimation for the line task: the network predicts one point and one
/// sampling weight per patch; minimal sets are drawn from the predicted
/// weights over the predicted points; hypotheses are scored with the soft
/// inlier count. Inference selects the argmax hypothesis.
pub fn ng_dsac_estimate(
    features: &[f64],
    anchors: &[[f64; 2]],
    point_scale: f64,
    net: &GuidanceNet,
    soft: SoftScoreParams,
    config: &EstimateConfig,
) -> Result<(EstimateReport<Line2>, NgDsacTape), EstimateError> {
    let forward = net.forward(features, Some(anchors), point_scale)?;
    let points = forward.points.clone().expect("points head required for joint estimation");
    let task = LineFittingTask::soft(points.clone(), soft);
    let mut rng = Rng::from_seed(config.seed);
    let pool = draw_pool(&task, &forward.weights, config, &mut rng)?;
    let report = finish_estimate(&task, config, &pool, select_best(&pool.scores()));
    let tape = NgDsacTape { cache: forward.cache, weights: forward.weights, points, pool, soft };
    Ok((report, tape))
}

/// Hypothesis count needed to draw one all-inlier minimal set with the given
/// confidence, clamped to [1, m_max].
pub fn adaptive_budget(inlier_ratio: f64, n_minimal: usize, confidence: f64, m_max: usize) -> usize {
    assert!((0.0..=1.0).contains(&inlier_ratio), "inlier ratio out of range");
    assert!(confidence > 0.0 && confidence < 1.0, "confidence must be in (0,1)");
    assert!(m_max >= 1);
    let p_all = inlier_ratio.powi(n_minimal as i32);
    if p_all <= 0.0 {
        return m_max;
    }
    if p_all >= 1.0 {
        return 1;
    }
    let m = ((1.0 - confidence).ln() / (1.0 - p_all).ln()).ceil();
    if !m.is_finite() {
        return m_max;
    }
    (m as usize).clamp(1, m_max)
}

/// Ratio prefilter with the estimator's fallback policy: an empty filter
/// result falls back to the unfiltered set and reports a warning.
pub fn ratio_filter_with_fallback(
    corrs: &[Correspondence],
    threshold: f64,
) -> Result<(Vec<Correspondence>, Vec<usize>, Option<String>), SampleError> {
    let (kept, indices) = ratio_filter(corrs, threshold)?;
    if kept.is_empty() {
        let warning = format!(
            "ratio filter at {threshold} removed all {} correspondences; using the unfiltered set",
            corrs.len()
        );
        return Ok((corrs.to_vec(), (0..corrs.len()).collect(), Some(warning)));
    }
    Ok((kept, indices, None))
}
