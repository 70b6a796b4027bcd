//! Hypothesis quality functions: hard inlier counting, the differentiable
//! soft inlier count, and the softmax selection distribution used for
//! probabilistic hypothesis selection.

use crate::geometry::{point_line_distance_grad, Line2};
use serde::{Deserialize, Serialize};

/// Parameters of the soft inlier count `alpha * sum(1 - sigmoid(beta*d - beta*tau))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftScoreParams {
    /// Overall scale of the score.
    pub alpha: f64,
    /// Sigmoid sharpness, in inverse residual units.
    pub beta: f64,
    /// Inlier threshold in residual units.
    pub tau: f64,
}

impl SoftScoreParams {
    pub fn new(alpha: f64, beta: f64, tau: f64) -> Self {
        assert!(alpha > 0.0 && beta > 0.0 && tau > 0.0, "soft score parameters must be positive");
        SoftScoreParams { alpha, beta, tau }
    }

    /// Defaults for the line task.
    pub fn line_defaults() -> Self {
        SoftScoreParams { alpha: 0.1, beta: 100.0, tau: 0.05 }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Number of observations with residual strictly below `tau`.
pub fn inlier_count<M, Y>(
    model: &M,
    observations: &[Y],
    tau: f64,
    residual: impl Fn(&M, &Y) -> f64,
) -> usize {
    assert!(tau > 0.0, "inlier threshold must be positive");
    observations.iter().filter(|y| residual(model, y) < tau).count()
}

/// Indices of observations with residual strictly below `tau`.
pub fn inlier_indices<M, Y>(
    model: &M,
    observations: &[Y],
    tau: f64,
    residual: impl Fn(&M, &Y) -> f64,
) -> Vec<usize> {
    assert!(tau > 0.0, "inlier threshold must be positive");
    observations
        .iter()
        .enumerate()
        .filter(|(_, y)| residual(model, y) < tau)
        .map(|(i, _)| i)
        .collect()
}

/// Soft inlier count over precomputed residuals, with the derivative of the
/// score with respect to each residual (chain with the residual Jacobians to
/// reach model parameters or observations).
#[derive(Debug, Clone, PartialEq)]
pub struct SoftCount {
    pub value: f64,
    pub d_residual: Vec<f64>,
}

pub fn soft_inlier_count(residuals: &[f64], params: &SoftScoreParams) -> SoftCount {
    let mut value = 0.0;
    let mut d_residual = Vec::with_capacity(residuals.len());
    for &d in residuals {
        let z = params.beta * (d - params.tau);
        let s = sigmoid(z);
        value += params.alpha * (1.0 - s);
        d_residual.push(-params.alpha * params.beta * s * (1.0 - s));
    }
    SoftCount { value, d_residual }
}

/// Soft inlier count of a line against a point set, with gradients in the
/// line coefficients and in every point.
pub struct SoftLineCount {
    pub value: f64,
    pub d_line: [f64; 3],
    pub d_points: Vec<[f64; 2]>,
}

pub fn soft_inlier_count_line(
    line: &Line2,
    points: &[[f64; 2]],
    params: &SoftScoreParams,
) -> SoftLineCount {
    let mut value = 0.0;
    let mut d_line = [0.0f64; 3];
    let mut d_points = Vec::with_capacity(points.len());
    for &p in points {
        let (d, dd_line, dd_point) = point_line_distance_grad(p, line);
        let z = params.beta * (d - params.tau);
        let s = sigmoid(z);
        value += params.alpha * (1.0 - s);
        let dv = -params.alpha * params.beta * s * (1.0 - s);
        for k in 0..3 {
            d_line[k] += dv * dd_line[k];
        }
        d_points.push([dv * dd_point[0], dv * dd_point[1]]);
    }
    SoftLineCount { value, d_line, d_points }
}

/// Softmax over hypothesis scores with max-subtraction, the probabilistic
/// selection distribution over a pool.
pub fn selection_distribution(scores: &[f64]) -> Vec<f64> {
    assert!(!scores.is_empty(), "selection distribution over an empty pool");
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(max.is_finite(), "selection distribution needs finite scores");
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the maximal score; ties break toward the lowest index.
pub fn select_best(scores: &[f64]) -> usize {
    assert!(!scores.is_empty(), "select_best over an empty pool");
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use approx::assert_relative_eq;

    fn abs_residual(model: &f64, y: &f64) -> f64 {
        (model - y).abs()
    }

    #[test]
    fn hard_count_separates_labeled_scene() {
        // 50 points at the model value, 50 far away.
        let mut obs = vec![1.0f64; 50];
        obs.extend(vec![100.0f64; 50]);
        assert_eq!(inlier_count(&1.0, &obs, 0.05, abs_residual), 50);
        assert_eq!(inlier_count(&1.0, &obs, f64::INFINITY, abs_residual), 100);
        assert_eq!(inlier_count(&1.0, &[], 0.05, abs_residual), 0);
        assert_eq!(inlier_indices(&1.0, &obs, 0.05, abs_residual), (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn hard_count_is_strict_below_threshold() {
        let obs = [0.05f64, 0.049999];
        assert_eq!(inlier_count(&0.0, &obs, 0.05, abs_residual), 1);
    }

    #[test]
    fn soft_count_worked_values() {
        let params = SoftScoreParams::new(0.1, 100.0, 0.05);
        // Residual exactly at tau: contribution alpha/2.
        let at_tau = soft_inlier_count(&[params.tau], &params);
        assert_relative_eq!(at_tau.value, params.alpha / 2.0, max_relative = 1e-12);
        // Residual 0 with beta*tau = 5: alpha * (1 - sigmoid(-5)).
        let at_zero = soft_inlier_count(&[0.0], &params);
        assert_relative_eq!(at_zero.value, 0.1 * 0.993_307_149_075_715, max_relative = 1e-12);
        assert_eq!(soft_inlier_count(&[], &params).value, 0.0);
    }

    #[test]
    fn soft_count_monotone_in_residual() {
        let params = SoftScoreParams::line_defaults();
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let d = i as f64 * 0.002;
            let v = soft_inlier_count(&[d], &params).value;
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn soft_count_converges_to_hard_count() {
        let mut rng = Rng::from_seed(11);
        let tau = 0.05;
        let residuals: Vec<f64> = (0..100)
            .map(|_| {
                // Keep residuals away from the threshold.
                let d = rng.uniform_in(0.0, 0.2);
                if (d - tau).abs() > 0.01 {
                    d
                } else {
                    d + 0.03
                }
            })
            .collect();
        let hard = residuals.iter().filter(|&&d| d < tau).count() as f64;
        for beta in [1e2, 1e4, 1e6] {
            let params = SoftScoreParams::new(0.1, beta, tau);
            let soft = soft_inlier_count(&residuals, &params).value;
            let bound = match beta as u64 {
                1_000_000 => 0.1 * residuals.len() as f64 * 1e-3,
                _ => 0.1 * residuals.len() as f64, // looser betas only need the trend
            };
            assert!((soft - 0.1 * hard).abs() < bound, "beta {beta}: {soft} vs {hard}");
        }
    }

    #[test]
    fn soft_count_residual_derivative_matches_finite_differences() {
        let params = SoftScoreParams::line_defaults();
        let mut rng = Rng::from_seed(21);
        let h = 1e-6;
        for _ in 0..100 {
            let residuals: Vec<f64> = (0..5).map(|_| rng.uniform_in(0.0, 0.15)).collect();
            let sc = soft_inlier_count(&residuals, &params);
            for i in 0..residuals.len() {
                let mut up = residuals.clone();
                up[i] += h;
                let mut dn = residuals.clone();
                dn[i] -= h;
                let fd = (soft_inlier_count(&up, &params).value
                    - soft_inlier_count(&dn, &params).value)
                    / (2.0 * h);
                let denom = sc.d_residual[i].abs().max(fd.abs()).max(1e-8);
                assert!((sc.d_residual[i] - fd).abs() / denom < 1e-4);
            }
        }
    }

    #[test]
    fn soft_line_count_gradients_match_finite_differences() {
        let params = SoftScoreParams::new(0.1, 20.0, 0.05);
        let mut rng = Rng::from_seed(22);
        let h = 1e-6;
        // Central differences of one point's term inside the full sum bottom
        // out at ulp(total)/h ~ 1e-10 noise, so a 1e-4 relative check is only
        // meaningful for derivatives comfortably above that; smaller ones can
        // only be checked for being jointly negligible.
        let noise_floor = 1e-5;
        let mut checked = 0usize;
        let agree = |analytic: f64, fd: f64, what: &str| -> bool {
            if analytic.abs() < noise_floor && fd.abs() < noise_floor {
                return false;
            }
            let denom = analytic.abs().max(fd.abs());
            assert!((analytic - fd).abs() / denom < 1e-4, "{what}: {analytic} vs {fd}");
            true
        };
        for _ in 0..100 {
            let line = crate::solvers::solve_line(
                [rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)],
                [rng.uniform_in(-1.0, 1.0) + 2.0, rng.uniform_in(-1.0, 1.0)],
            )
            .unwrap();
            let points: Vec<[f64; 2]> = (0..6)
                .map(|_| [rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)])
                .collect();
            // Stay away from the distance kink at d = 0.
            if points
                .iter()
                .any(|&p| crate::geometry::point_line_distance(p, &line).unwrap() < 1e-3)
            {
                continue;
            }
            let sc = soft_inlier_count_line(&line, &points, &params);
            // Line-coefficient gradients, finite-differenced on raw coefficients.
            for k in 0..3 {
                let perturb = |delta: f64| {
                    let mut l = line;
                    match k {
                        0 => l.a += delta,
                        1 => l.b += delta,
                        _ => l.c += delta,
                    }
                    soft_inlier_count_line(&l, &points, &params).value
                };
                let fd = (perturb(h) - perturb(-h)) / (2.0 * h);
                if agree(sc.d_line[k], fd, "line coeff") {
                    checked += 1;
                }
            }
            // Point gradients.
            for (i, &p) in points.iter().enumerate() {
                for k in 0..2 {
                    let perturb = |delta: f64| {
                        let mut pts = points.clone();
                        let mut q = p;
                        q[k] += delta;
                        pts[i] = q;
                        soft_inlier_count_line(&line, &pts, &params).value
                    };
                    let fd = (perturb(h) - perturb(-h)) / (2.0 * h);
                    if agree(sc.d_points[i][k], fd, "point coord") {
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked >= 300, "only {checked} derivative checks were informative");
    }

    #[test]
    fn selection_distribution_examples() {
        let p = selection_distribution(&[7.0, 7.0, 7.0]);
        for v in &p {
            assert_relative_eq!(*v, 1.0 / 3.0, max_relative = 1e-12);
        }
        let p = selection_distribution(&[2.0f64.ln(), 0.0]);
        assert_relative_eq!(p[0], 2.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(p[1], 1.0 / 3.0, max_relative = 1e-12);
        // Large spread must not overflow.
        let p = selection_distribution(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(p[1].abs() < 1e-12);
    }

    #[test]
    fn selection_distribution_sums_to_one_and_shifts_cancel() {
        let mut rng = Rng::from_seed(30);
        for _ in 0..100 {
            let scores: Vec<f64> = (0..8).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
            let p = selection_distribution(&scores);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for shift in [0.5, 100.0] {
                let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
                let q = selection_distribution(&shifted);
                for (a, b) in p.iter().zip(&q) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn select_best_breaks_ties_low() {
        assert_eq!(select_best(&[1.0, 3.0, 2.0]), 1);
        assert_eq!(select_best(&[2.0, 2.0]), 0);
        assert_eq!(select_best(&[5.0]), 0);
    }

    #[test]
    fn select_best_agrees_with_distribution_argmax() {
        let mut rng = Rng::from_seed(33);
        for _ in 0..100 {
            let scores: Vec<f64> = (0..6).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
            let p = selection_distribution(&scores);
            let arg_p = select_best(&p);
            assert_eq!(select_best(&scores), arg_p);
        }
    }
}
