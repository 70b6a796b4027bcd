//! Gradient oracles: exact enumeration of the expected task loss on small
//! instances, finite differences of that exact loss, and Monte-Carlo
//! agreement checks for the shipped estimators. `run_all` powers the
//! `gradcheck` CLI subcommand and the acceptance suite.
//!
//! The enumeration rests on the sampler's closed-form minimal-set measure:
//! a whole attempt is discarded on a duplicate, so an unordered pair {i, j}
//! is drawn with probability 2·w_i·w_j / (S² − Σ w²), S = Σ w. Treating the
//! weights as free variables keeps that expression differentiable and makes
//! Σ_pairs p ≡ 1 an identity, so baseline subtraction is exactly neutral.

use crate::estimator::{finish_estimate, EstimateConfig, FittingTask, LineFittingTask};
use crate::geometry::Line2;
use crate::guidance::{GuidanceNet, GuidanceNetSpec, HeadKind};
use crate::rng::{mix_seed, Rng};
use crate::sampling::{HypothesisPool, PoolEntry};
use crate::scoring::select_best;
use crate::solvers::{solve_line, MinimalSet};
use crate::training::{
    joint_pool_direct, line_distance, ng_dsac_gradient, ng_ransac_gradient, Baseline, LineExample,
    Objective, TrainConfig, TrainExample,
};
use std::fmt;
use std::time::Instant;

/// One oracle comparison: `value` must stay within `tolerance`.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub seconds: f64,
    pub detail: String,
}

impl OracleReport {
    fn from_value(
        name: &'static str,
        value: f64,
        tolerance: f64,
        started: Instant,
        detail: String,
    ) -> Self {
        OracleReport {
            name,
            value,
            tolerance,
            passed: value.is_finite() && value <= tolerance,
            seconds: started.elapsed().as_secs_f64(),
            detail,
        }
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: {:.3e} <= {:.1e} ({}; {:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance,
            self.detail,
            self.seconds
        )
    }
}

/// Probability that guided sampling of a 2-element minimal set yields the
/// unordered pair {i, j}. Free-variable form; exact for the shipped sampler.
pub fn pair_probability(weights: &[f64], i: usize, j: usize) -> f64 {
    assert!(i != j, "minimal-set indices are distinct");
    let s: f64 = weights.iter().sum();
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    2.0 * weights[i] * weights[j] / (s * s - sq)
}

/// `d ln pair_probability / d w_k` for all k, weights free.
pub fn pair_log_prob_grad(weights: &[f64], i: usize, j: usize) -> Vec<f64> {
    let s: f64 = weights.iter().sum();
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    let den = s * s - sq;
    weights
        .iter()
        .enumerate()
        .map(|(k, &wk)| {
            let mut g = -(2.0 * s - 2.0 * wk) / den;
            if k == i {
                g += 1.0 / weights[i];
            }
            if k == j {
                g += 1.0 / weights[j];
            }
            g
        })
        .collect()
}

/// Largest per-coordinate relative error, with the denominator floored at
/// `floor_frac` of the reference's largest magnitude so dead coordinates do
/// not divide by ~0.
fn max_rel_per_coord(candidate: &[f64], reference: &[f64], floor_frac: f64) -> (f64, usize) {
    assert_eq!(candidate.len(), reference.len());
    let scale = reference.iter().fold(f64::MIN_POSITIVE, |m, x| m.max(x.abs()));
    let floor = floor_frac * scale;
    let mut worst = (0.0, 0);
    for (k, (&a, &b)) in candidate.iter().zip(reference).enumerate() {
        let rel = (a - b).abs() / b.abs().max(floor);
        if rel > worst.0 {
            worst = (rel, k);
        }
    }
    worst
}

/// Largest per-coordinate error relative to the reference's largest
/// magnitude — the scale-free agreement measure used for Monte-Carlo
/// estimates, whose per-coordinate noise floor is absolute, not relative.
fn max_err_vs_scale(candidate: &[f64], reference: &[f64]) -> (f64, usize) {
    assert_eq!(candidate.len(), reference.len());
    let scale = reference.iter().fold(f64::MIN_POSITIVE, |m, x| m.max(x.abs()));
    let mut worst = (0.0, 0);
    for (k, (&a, &b)) in candidate.iter().zip(reference).enumerate() {
        let rel = (a - b).abs() / scale;
        if rel > worst.0 {
            worst = (rel, k);
        }
    }
    worst
}

/// Central differences with one Richardson extrapolation step (h and h/2),
/// killing the O(h²) truncation term.
fn fd_param_gradient(
    net: &GuidanceNet,
    h: f64,
    mut loss_at: impl FnMut(&GuidanceNet) -> f64,
) -> Vec<f64> {
    let mut probe = net.clone();
    let mut grads = vec![0.0; net.params.len()];
    for t in 0..net.params.len() {
        let orig = net.params[t];
        let mut central = |step: f64| {
            probe.params[t] = orig + step;
            let plus = loss_at(&probe);
            probe.params[t] = orig - step;
            let minus = loss_at(&probe);
            (plus - minus) / (2.0 * step)
        };
        let coarse = central(h);
        let fine = central(h / 2.0);
        probe.params[t] = orig;
        grads[t] = (4.0 * fine - coarse) / 3.0;
    }
    grads
}

const TOY_SEED: u64 = 7;
const JOINT_SEED: u64 = 11;

/// Six observations: three exactly on the reference line, one near-inlier,
/// two outliers. Small enough that all C(6,2) = 15 minimal sets enumerate.
fn toy_points() -> Vec<[f64; 2]> {
    vec![[0.0, 0.3], [0.35, 0.44], [0.7, 0.58], [1.0, 0.712], [0.25, 0.85], [0.8, 0.1]]
}

fn toy_line() -> Line2 {
    solve_line([0.0, 0.3], [1.0, 0.7]).expect("distinct points")
}

/// Weights-only net over raw coordinates, nudged off its uniform
/// initialization so the sampling distribution is in generic position.
fn toy_net() -> GuidanceNet {
    let spec = GuidanceNetSpec::new(2, 8, 1, HeadKind::WeightsOnly);
    let mut net = GuidanceNet::init(spec, TOY_SEED);
    // The nudge seed is chosen so every ReLU pre-activation sits clear of
    // zero: finite differences across a kink would disagree with the
    // subgradient the backward pass uses.
    let mut rng = Rng::from_seed(mix_seed(&[TOY_SEED, 2]));
    for p in net.params.iter_mut() {
        *p += rng.uniform_in(-0.3, 0.3);
    }
    net
}

fn toy_config() -> TrainConfig {
    let mut config = TrainConfig::new(Objective::LineDistance);
    config.m = 2;
    config.inlier_threshold = 0.05;
    config.blockade = false;
    config
}

fn toy_features(points: &[[f64; 2]]) -> Vec<f64> {
    points.iter().flat_map(|p| [p[0], p[1]]).collect()
}

fn all_pairs(n: usize) -> Vec<[usize; 2]> {
    let mut sets = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            sets.push([i, j]);
        }
    }
    sets
}

/// Task loss of every ordered pool (A, B) of minimal sets, replaying the
/// estimator's own selection-and-refit path. Constant in the net parameters,
/// so the table is frozen once per toy.
fn toy_loss_table(
    points: &[[f64; 2]],
    sets: &[[usize; 2]],
    config: &TrainConfig,
    gt: &Line2,
) -> Vec<Vec<f64>> {
    let task = LineFittingTask::soft(points.to_vec(), config.soft);
    let est_cfg = EstimateConfig {
        pool_size: config.m,
        inlier_threshold: config.inlier_threshold,
        seed: 0,
        max_resample_attempts: config.max_resample_attempts,
    };
    let entries: Vec<PoolEntry<Line2>> = sets
        .iter()
        .map(|&[i, j]| {
            let model = solve_line(points[i], points[j]).expect("toy points are distinct");
            let score = task.score(&model, config.inlier_threshold);
            PoolEntry { model, minimal_set: MinimalSet(vec![i, j]), score, log_prob: 0.0 }
        })
        .collect();
    entries
        .iter()
        .map(|a| {
            entries
                .iter()
                .map(|b| {
                    let pool = HypothesisPool { entries: vec![a.clone(), b.clone()] };
                    let selected = select_best(&pool.scores());
                    let report = finish_estimate(&task, &est_cfg, &pool, selected);
                    line_distance(&report.model, gt)
                })
                .collect()
        })
        .collect()
}

/// Exact expected task loss over all ordered pools under the pair measure.
fn toy_exact_loss(weights: &[f64], sets: &[[usize; 2]], table: &[Vec<f64>]) -> f64 {
    let probs: Vec<f64> = sets.iter().map(|&[i, j]| pair_probability(weights, i, j)).collect();
    let mut total = 0.0;
    for (a, pa) in probs.iter().enumerate() {
        for (b, pb) in probs.iter().enumerate() {
            total += pa * pb * table[a][b];
        }
    }
    total
}

/// Exact gradient of the expected loss in log-weight coordinates, with an
/// explicit baseline (neutral analytically because Σ_pools prob ≡ 1).
fn toy_enumerated_glw(
    weights: &[f64],
    sets: &[[usize; 2]],
    table: &[Vec<f64>],
    baseline: f64,
) -> Vec<f64> {
    let probs: Vec<f64> = sets.iter().map(|&[i, j]| pair_probability(weights, i, j)).collect();
    let glnp: Vec<Vec<f64>> =
        sets.iter().map(|&[i, j]| pair_log_prob_grad(weights, i, j)).collect();
    let n = weights.len();
    let mut glw = vec![0.0; n];
    for (a, pa) in probs.iter().enumerate() {
        for (b, pb) in probs.iter().enumerate() {
            let coeff = pa * pb * (table[a][b] - baseline);
            for k in 0..n {
                // d/d ln w_k = w_k · d/d w_k.
                glw[k] += coeff * weights[k] * (glnp[a][k] + glnp[b][k]);
            }
        }
    }
    glw
}

struct ToyOracle {
    net: GuidanceNet,
    config: TrainConfig,
    features: Vec<f64>,
    sets: Vec<[usize; 2]>,
    table: Vec<Vec<f64>>,
    example: TrainExample,
    /// Exact expected loss at the toy parameters.
    exact_loss: f64,
    /// Exact parameter-space gradient via enumeration + analytic backward.
    exact_grads: Vec<f64>,
}

fn toy_oracle() -> ToyOracle {
    let points = toy_points();
    let gt = toy_line();
    let net = toy_net();
    let config = toy_config();
    let features = toy_features(&points);
    let sets = all_pairs(points.len());
    let table = toy_loss_table(&points, &sets, &config, &gt);
    let forward = net.forward(&features, None, config.point_scale).expect("toy net forward");
    let weights = forward.weights.weights().to_vec();
    let exact_loss = toy_exact_loss(&weights, &sets, &table);
    let glw = toy_enumerated_glw(&weights, &sets, &table, 0.0);
    let exact_grads =
        net.backward(&forward.cache, &glw, None, false).expect("toy net backward");
    let example = TrainExample::LinePoints { points, gt_line: gt };
    ToyOracle { net, config, features, sets, table, example, exact_loss, exact_grads }
}

impl ToyOracle {
    /// Exact expected loss as a function of candidate parameters; the loss
    /// table is parameter-independent, only the sampling measure moves.
    fn loss_at(&self, net: &GuidanceNet) -> f64 {
        let forward = net.forward(&self.features, None, self.config.point_scale).expect("forward");
        toy_exact_loss(forward.weights.weights(), &self.sets, &self.table)
    }

    fn mc_gradient(&self, k: usize, baseline: Baseline, seed: u64) -> Vec<f64> {
        let mut config = self.config;
        config.k = k;
        config.baseline = baseline;
        ng_ransac_gradient(&self.example, &self.net, &config, seed)
            .expect("toy Monte-Carlo gradient")
            .grads
    }
}

/// Enumerated exact gradient vs finite differences of the exact expected
/// loss, per coordinate.
pub fn check_reinforce_fd() -> OracleReport {
    let started = Instant::now();
    let toy = toy_oracle();
    let fd = fd_param_gradient(&toy.net, 1e-5, |net| toy.loss_at(net));
    let (worst, at) = max_rel_per_coord(&toy.exact_grads, &fd, 1e-3);
    OracleReport::from_value(
        "reinforce_line_toy_fd",
        worst,
        1e-5,
        started,
        format!(
            "exact loss {:.6}, {} params, worst coordinate {}",
            toy.exact_loss,
            fd.len(),
            at
        ),
    )
}

/// Monte-Carlo score-function gradient at K = 2·10⁵ pools vs the enumerated
/// exact gradient.
pub fn check_reinforce_monte_carlo() -> OracleReport {
    let started = Instant::now();
    let toy = toy_oracle();
    let mc = toy.mc_gradient(200_000, Baseline::BatchMean, mix_seed(&[TOY_SEED, 1]));
    let (worst, at) = max_err_vs_scale(&mc, &toy.exact_grads);
    OracleReport::from_value(
        "reinforce_line_toy_monte_carlo",
        worst,
        1e-2,
        started,
        format!("K=200000, worst coordinate {at} vs gradient scale"),
    )
}

/// Baseline subtraction must not move the enumerated gradient.
pub fn check_baseline_neutrality() -> OracleReport {
    let started = Instant::now();
    let toy = toy_oracle();
    let forward =
        toy.net.forward(&toy.features, None, toy.config.point_scale).expect("forward");
    let weights = forward.weights.weights().to_vec();
    let glw_plain = toy_enumerated_glw(&weights, &toy.sets, &toy.table, 0.0);
    let glw_based = toy_enumerated_glw(&weights, &toy.sets, &toy.table, toy.exact_loss);
    let plain = toy.net.backward(&forward.cache, &glw_plain, None, false).expect("backward");
    let based = toy.net.backward(&forward.cache, &glw_based, None, false).expect("backward");
    let worst = plain
        .iter()
        .zip(&based)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    OracleReport::from_value(
        "baseline_neutrality_enumerated",
        worst,
        1e-10,
        started,
        format!("baseline {:.6}, max absolute coordinate shift", toy.exact_loss),
    )
}

/// The batch-mean baseline must strictly reduce the empirical variance of
/// the estimator in nearly every seeded replication batch.
pub fn check_baseline_variance() -> OracleReport {
    let started = Instant::now();
    let toy = toy_oracle();
    let seeds = 100;
    let replicates = 40;
    let mut reduced = 0;
    for s in 0..seeds {
        let mut var = [0.0f64; 2];
        for (v, baseline) in var.iter_mut().zip([Baseline::BatchMean, Baseline::None]) {
            let grads: Vec<Vec<f64>> = (0..replicates)
                .map(|r| toy.mc_gradient(4, baseline, mix_seed(&[0xba5e, s, r])))
                .collect();
            let dim = grads[0].len();
            let mut total = 0.0;
            for k in 0..dim {
                let mean: f64 = grads.iter().map(|g| g[k]).sum::<f64>() / replicates as f64;
                total += grads
                    .iter()
                    .map(|g| (g[k] - mean).powi(2))
                    .sum::<f64>()
                    / (replicates - 1) as f64;
            }
            *v = total;
        }
        if var[0] < var[1] {
            reduced += 1;
        }
    }
    let failing = 1.0 - reduced as f64 / seeds as f64;
    OracleReport::from_value(
        "baseline_variance_reduction",
        failing,
        0.05,
        started,
        format!("{reduced}/{seeds} seeds with strictly lower variance (paired pools, K=4)"),
    )
}

/// Monte-Carlo error must shrink like 1/sqrt(K): quadrupling the pool count
/// halves the mean distance to the enumerated gradient.
pub fn check_error_halving() -> OracleReport {
    let started = Instant::now();
    let toy = toy_oracle();
    let mean_err = |k: usize| -> f64 {
        let runs = 8;
        (0..runs)
            .map(|r| {
                let mc = toy.mc_gradient(k, Baseline::BatchMean, mix_seed(&[0x4a1f, r, k as u64]));
                mc.iter()
                    .zip(&toy.exact_grads)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum::<f64>()
            / runs as f64
    };
    let coarse = mean_err(2_000);
    let fine = mean_err(8_000);
    let ratio = coarse / fine;
    OracleReport::from_value(
        "monte_carlo_error_halves_at_4x_pools",
        (ratio - 2.1).abs(),
        0.6,
        started,
        format!("error {coarse:.3e} at K=2000 vs {fine:.3e} at K=8000, ratio {ratio:.2}"),
    )
}

/// Joint toy: four predicted points, both the sampling weights and the point
/// coordinates carry gradient.
struct JointOracle {
    net: GuidanceNet,
    config: TrainConfig,
    features: Vec<f64>,
    anchors: Vec<[f64; 2]>,
    gt: Line2,
    sets: Vec<[usize; 2]>,
    example: LineExample,
    exact_loss: f64,
    exact_grads: Vec<f64>,
}

fn joint_oracle() -> JointOracle {
    let anchors = vec![[0.125, 0.5], [0.375, 0.5], [0.625, 0.5], [0.875, 0.5]];
    let gt = solve_line([0.0, 0.35], [1.0, 0.55]).expect("distinct points");
    let spec = GuidanceNetSpec::new(4, 8, 1, HeadKind::PointsAndWeights);
    let mut net = GuidanceNet::init(spec, JOINT_SEED);
    let mut rng = Rng::from_seed(mix_seed(&[JOINT_SEED, 0x0e11]));
    for p in net.params.iter_mut() {
        *p += rng.uniform_in(-0.3, 0.3);
    }
    let features: Vec<f64> = (0..anchors.len() * 4).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let mut config = TrainConfig::new(Objective::LineDistance);
    config.m = 2;
    config.point_scale = 0.25;
    config.blockade = false;
    let sets = all_pairs(anchors.len());

    let forward = net.forward(&features, Some(&anchors), config.point_scale).expect("forward");
    let weights = forward.weights.weights().to_vec();
    let points = forward.points.clone().expect("points head is active");
    let n = weights.len();
    let probs: Vec<f64> = sets.iter().map(|&[i, j]| pair_probability(&weights, i, j)).collect();
    let glnp: Vec<Vec<f64>> =
        sets.iter().map(|&[i, j]| pair_log_prob_grad(&weights, i, j)).collect();
    let mut exact_loss = 0.0;
    let mut glw = vec![0.0; n];
    let mut grad_points = vec![[0.0f64; 2]; n];
    for (a, &pa) in probs.iter().enumerate() {
        for (b, &pb) in probs.iter().enumerate() {
            let pool = [sets[a], sets[b]];
            let direct = joint_pool_direct(&points, &pool, &config.soft, &gt);
            let q = pa * pb;
            exact_loss += q * direct.expected;
            for k in 0..n {
                glw[k] += q * direct.expected * weights[k] * (glnp[a][k] + glnp[b][k]);
            }
            for (acc, g) in grad_points.iter_mut().zip(&direct.grad_points) {
                acc[0] += q * g[0];
                acc[1] += q * g[1];
            }
        }
    }
    let exact_grads = net
        .backward(&forward.cache, &glw, Some(&grad_points), false)
        .expect("joint backward");
    let example =
        LineExample { features: features.clone(), anchors: anchors.clone(), gt_line: Some(gt) };
    JointOracle { net, config, features, anchors, gt, sets, example, exact_loss, exact_grads }
}

impl JointOracle {
    fn loss_at(&self, net: &GuidanceNet) -> f64 {
        let forward = net
            .forward(&self.features, Some(&self.anchors), self.config.point_scale)
            .expect("forward");
        let weights = forward.weights.weights();
        let points = forward.points.as_ref().expect("points head is active");
        let probs: Vec<f64> =
            self.sets.iter().map(|&[i, j]| pair_probability(weights, i, j)).collect();
        let mut total = 0.0;
        for (a, &pa) in probs.iter().enumerate() {
            for (b, &pb) in probs.iter().enumerate() {
                let pool = [self.sets[a], self.sets[b]];
                total +=
                    pa * pb * joint_pool_direct(points, &pool, &self.config.soft, &self.gt).expected;
            }
        }
        total
    }
}

/// Joint analytic gradient (sampling + direct term) vs finite differences of
/// the exactly enumerated doubly-expected loss.
pub fn check_joint_fd() -> OracleReport {
    let started = Instant::now();
    let oracle = joint_oracle();
    let fd = fd_param_gradient(&oracle.net, 1e-4, |net| oracle.loss_at(net));
    let (worst, at) = max_rel_per_coord(&oracle.exact_grads, &fd, 1e-3);
    OracleReport::from_value(
        "ng_dsac_line_toy_fd",
        worst,
        1e-4,
        started,
        format!(
            "exact loss {:.6}, {} params, worst coordinate {}",
            oracle.exact_loss,
            fd.len(),
            at
        ),
    )
}

/// The shipped joint estimator, averaged over many pools, against the
/// enumerated exact gradient.
pub fn check_joint_monte_carlo() -> OracleReport {
    let started = Instant::now();
    let oracle = joint_oracle();
    let mut config = oracle.config;
    config.k = 50_000;
    let mc = ng_dsac_gradient(&oracle.example, &oracle.net, &config, mix_seed(&[JOINT_SEED, 2]))
        .expect("joint Monte-Carlo gradient")
        .grads;
    let (worst, at) = max_err_vs_scale(&mc, &oracle.exact_grads);
    OracleReport::from_value(
        "ng_dsac_monte_carlo_smoke",
        worst,
        3e-2,
        started,
        format!("K=50000, worst coordinate {at} vs gradient scale"),
    )
}

/// The full oracle suite, in deterministic order.
pub fn run_all() -> Vec<OracleReport> {
    vec![
        check_reinforce_fd(),
        check_reinforce_monte_carlo(),
        check_baseline_neutrality(),
        check_baseline_variance(),
        check_error_halving(),
        check_joint_fd(),
        check_joint_monte_carlo(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::GuidanceDistribution;

    fn free_weights(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = Rng::from_seed(seed);
        (0..n).map(|_| rng.uniform_in(0.05, 0.95)).collect()
    }

    #[test]
    fn pair_probabilities_sum_to_one_for_free_weights() {
        for seed in 0..20 {
            let w = free_weights(mix_seed(&[0x511, seed]), 7);
            let total: f64 = all_pairs(7).iter().map(|&[i, j]| pair_probability(&w, i, j)).sum();
            assert!((total - 1.0).abs() < 1e-12, "seed {seed}: total {total}");
        }
    }

    #[test]
    fn pair_log_prob_grad_matches_weight_space_differences() {
        let w = free_weights(0x9d, 6);
        let h = 1e-6;
        for &[i, j] in &all_pairs(6) {
            let grad = pair_log_prob_grad(&w, i, j);
            for k in 0..w.len() {
                let mut plus = w.clone();
                let mut minus = w.clone();
                plus[k] += h;
                minus[k] -= h;
                let fd = (pair_probability(&plus, i, j).ln()
                    - pair_probability(&minus, i, j).ln())
                    / (2.0 * h);
                assert!(
                    (grad[k] - fd).abs() < 1e-6 * fd.abs().max(1.0),
                    "pair {{{i},{j}}} coord {k}: analytic {} vs fd {fd}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn sampled_pair_frequencies_match_the_closed_form() {
        // The enumeration is only an oracle if this formula is the sampler's
        // true measure; check it against a large empirical draw.
        let weights = vec![0.30, 0.25, 0.20, 0.15, 0.10];
        let dist = GuidanceDistribution::new(weights.clone()).unwrap();
        let mut rng = Rng::from_seed(0xf1e1d);
        let draws = 200_000usize;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..draws {
            let set = crate::sampling::sample_minimal_set_guided(&dist, 2, &mut rng).unwrap();
            let mut key = [set.indices()[0], set.indices()[1]];
            key.sort_unstable();
            *counts.entry(key).or_insert(0usize) += 1;
        }
        for &[i, j] in &all_pairs(5) {
            let p = pair_probability(&weights, i, j);
            let observed = *counts.get(&[i, j]).unwrap_or(&0) as f64 / draws as f64;
            let sigma = (p * (1.0 - p) / draws as f64).sqrt();
            assert!(
                (observed - p).abs() < 5.0 * sigma,
                "pair {{{i},{j}}}: observed {observed:.5} vs exact {p:.5}"
            );
        }
    }

    #[test]
    fn toy_loss_table_is_finite_and_spread() {
        let points = toy_points();
        let config = toy_config();
        let sets = all_pairs(points.len());
        let table = toy_loss_table(&points, &sets, &config, &toy_line());
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for row in &table {
            for &l in row {
                assert!(l.is_finite() && l >= 0.0);
                lo = lo.min(l);
                hi = hi.max(l);
            }
        }
        assert!(lo < 1e-2, "some pools recover the reference line, got min {lo}");
        assert!(hi > 0.05, "some pools miss badly, got max {hi}");
    }

    #[test]
    fn enumerated_gradient_matches_finite_differences() {
        let report = check_reinforce_fd();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn baseline_is_neutral_in_enumeration() {
        let report = check_baseline_neutrality();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn joint_gradient_matches_finite_differences() {
        let report = check_joint_fd();
        assert!(report.passed, "{report}");
    }

    /// Full suite incl. the Monte-Carlo checks; covered by the acceptance
    /// tests, so ignored here. Run manually with `-- --ignored --nocapture`.
    #[test]
    #[ignore]
    fn full_oracle_suite_passes() {
        let reports = run_all();
        for r in &reports {
            println!("{r}");
        }
        assert!(reports.iter().all(|r| r.passed));
    }
}
