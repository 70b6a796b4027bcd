//! Minimal solvers and refits: 2-point lines, 7/8-point fundamental and
//! essential matrices, plus total-least-squares and homogeneous refitting.

use crate::geometry::{Correspondence, Line2, Model3x3, ModelKind};
use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("the seven-point solver takes exactly 7 correspondences, got {0}")]
    NotSevenPoints(usize),
    #[error("degenerate minimal set: {0}")]
    DegenerateMinimalSet(&'static str),
    #[error("rank-deficient design matrix (singular value ratio {ratio:.3e})")]
    RankDeficient { ratio: f64 },
}

/// Indices into an observation set forming one solver input.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MinimalSet(pub Vec<usize>);

impl MinimalSet {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }
}

/// Line through two points, with unit normal. Errors on coincident points.
pub fn solve_line(p: [f64; 2], q: [f64; 2]) -> Result<Line2, SolveError> {
    let u = p[1] - q[1];
    let v = q[0] - p[0];
    let len = (u * u + v * v).sqrt();
    if len == 0.0 {
        return Err(SolveError::DegenerateMinimalSet("coincident points"));
    }
    let a = u / len;
    let b = v / len;
    Ok(Line2 { a, b, c: -(a * p[0] + b * p[1]) })
}

/// Line plus the Jacobian of its normalized coefficients `(a, b, c)` with
/// respect to the input coordinates `(px, py, qx, qy)` — the differentiable
/// entry point of the hypothesis chain.
pub fn solve_line_grad(p: [f64; 2], q: [f64; 2]) -> Result<(Line2, [[f64; 4]; 3]), SolveError> {
    let line = solve_line(p, q)?;
    let u = p[1] - q[1];
    let v = q[0] - p[0];
    let len3 = (u * u + v * v).powf(1.5);
    // du, dv per input coordinate (px, py, qx, qy).
    let du = [0.0, 1.0, 0.0, -1.0];
    let dv = [-1.0, 0.0, 1.0, 0.0];
    let mut jac = [[0.0f64; 4]; 3];
    for k in 0..4 {
        let w = v * du[k] - u * dv[k];
        jac[0][k] = v * w / len3;
        jac[1][k] = -u * w / len3;
        // c = -(a*px + b*py); px and py are themselves inputs 0 and 1.
        jac[2][k] = -(jac[0][k] * p[0] + jac[1][k] * p[1]);
    }
    jac[2][0] -= line.a;
    jac[2][1] -= line.b;
    Ok((line, jac))
}

/// Hartley similarity transform: centroid to origin, mean distance sqrt(2).
fn hartley_transform(points: &[[f64; 2]]) -> Result<Matrix3<f64>, SolveError> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean_dist =
        points.iter().map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()).sum::<f64>() / n;
    // Relative guard: centroid rounding alone leaves distances near
    // 1e-16 * |coordinate|, which must still count as coincident.
    if mean_dist <= 1e-12 * (1.0 + cx.abs() + cy.abs()) {
        return Err(SolveError::DegenerateMinimalSet("all points coincide in one image"));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn apply_h(t: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    let v = t * Vector3::new(p[0], p[1], 1.0);
    [v.x / v.z, v.y / v.z]
}

/// Epipolar design matrix rows for `x2' F x1 = 0`, `vec(F)` row-major, padded
/// with zero rows to at least 9 so the SVD always exposes a full right basis.
fn design_matrix(p1: &[[f64; 2]], p2: &[[f64; 2]]) -> DMatrix<f64> {
    let rows = p1.len().max(9);
    let mut a = DMatrix::zeros(rows, 9);
    for i in 0..p1.len() {
        let [x1, y1] = p1[i];
        let [x2, y2] = p2[i];
        let row = [x2 * x1, x2 * y1, x2, y2 * x1, y2 * y1, y2, x1, y1, 1.0];
        for (j, v) in row.into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    a
}

/// Right singular vectors of the design matrix ordered by descending singular
/// value, plus the singular values in the same order.
fn right_basis(a: DMatrix<f64>) -> (Vec<f64>, Vec<Vector9>) {
    let svd = a.svd(false, true);
    let vt = svd.v_t.unwrap();
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap());
    let values = order.iter().map(|&i| s[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut v = [0.0f64; 9];
            for j in 0..9 {
                v[j] = vt[(i, j)];
            }
            v
        })
        .collect();
    (values, vectors)
}

type Vector9 = [f64; 9];

fn unvec(v: &Vector9) -> Matrix3<f64> {
    Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8])
}

fn split_points(corrs: &[Correspondence]) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    (corrs.iter().map(|c| [c.x1, c.y1]).collect(), corrs.iter().map(|c| [c.x2, c.y2]).collect())
}

/// Normalized 8-point fit: Hartley normalization of each image separately, the
/// smallest right singular vector of the design matrix, rank enforcement, then
/// de-normalization into the canonical form of the requested kind. Essential
/// results are additionally projected onto the essential manifold. Works for
/// any `n >= 8` (minimal sets and refits alike).
pub fn solve_fundamental_8pt(
    corrs: &[Correspondence],
    kind: ModelKind,
) -> Result<Model3x3, SolveError> {
    if corrs.len() < 8 {
        return Err(SolveError::TooFewObservations { needed: 8, got: corrs.len() });
    }
    let (raw1, raw2) = split_points(corrs);
    let t1 = hartley_transform(&raw1)?;
    let t2 = hartley_transform(&raw2)?;
    let p1: Vec<_> = raw1.iter().map(|&p| apply_h(&t1, p)).collect();
    let p2: Vec<_> = raw2.iter().map(|&p| apply_h(&t2, p)).collect();
    let (s, v) = right_basis(design_matrix(&p1, &p2));
    let ratio = s[7] / s[0];
    if !ratio.is_finite() || ratio < 1e-10 {
        return Err(SolveError::RankDeficient { ratio });
    }
    let f_norm = unvec(v.last().unwrap());
    let f = t2.transpose() * f_norm * t1;
    let model = match kind {
        ModelKind::Fundamental => Model3x3::fundamental(f),
        ModelKind::Essential => Model3x3::essential(f),
    };
    model.map_err(|_| SolveError::DegenerateMinimalSet("null-space solution collapsed to zero"))
}

/// Seven-point fit: the two-dimensional null space gives a pencil
/// `lambda*F1 + (1-lambda)*F2`, and `det = 0` is a cubic in `lambda` solved in
/// closed form. Returns one to three rank-2 candidates (repeated roots are
/// deduplicated), each in canonical fundamental form.
pub fn solve_fundamental_7pt(corrs: &[Correspondence]) -> Result<Vec<Model3x3>, SolveError> {
    if corrs.len() != 7 {
        return Err(SolveError::NotSevenPoints(corrs.len()));
    }
    let (raw1, raw2) = split_points(corrs);
    let t1 = hartley_transform(&raw1)?;
    let t2 = hartley_transform(&raw2)?;
    let p1: Vec<_> = raw1.iter().map(|&p| apply_h(&t1, p)).collect();
    let p2: Vec<_> = raw2.iter().map(|&p| apply_h(&t2, p)).collect();
    let (s, v) = right_basis(design_matrix(&p1, &p2));
    let ratio = s[6] / s[0];
    if !ratio.is_finite() || ratio < 1e-10 {
        return Err(SolveError::RankDeficient { ratio });
    }
    let f1 = unvec(&v[8]);
    let f2 = unvec(&v[7]);

    // det(lambda*F1 + (1-lambda)*F2) sampled at four points pins the cubic.
    let det_at = |lambda: f64| (f1 * lambda + f2 * (1.0 - lambda)).determinant();
    let c0 = det_at(0.0);
    let s1 = det_at(1.0);
    let sm1 = det_at(-1.0);
    let s2 = det_at(2.0);
    let c2 = 0.5 * (s1 + sm1) - c0;
    let odd = 0.5 * (s1 - sm1);
    let c3 = (s2 - c0 - 4.0 * c2 - 2.0 * odd) / 6.0;
    let c1 = odd - c3;

    let mut roots = solve_cubic(c3, c2, c1, c0);
    // Newton polish against the cubic tightens det(F) of the candidates.
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let f = ((c3 * *r + c2) * *r + c1) * *r + c0;
            let df = (3.0 * c3 * *r + 2.0 * c2) * *r + c1;
            if df.abs() < 1e-300 {
                break;
            }
            *r -= f / df;
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs())));

    let mut candidates = Vec::with_capacity(roots.len());
    for lambda in roots {
        let f_norm = f1 * lambda + f2 * (1.0 - lambda);
        let f = t2.transpose() * f_norm * t1;
        if let Ok(model) = Model3x3::fundamental(f) {
            candidates.push(model);
        }
    }
    if candidates.is_empty() {
        return Err(SolveError::DegenerateMinimalSet("cubic produced no usable candidate"));
    }
    Ok(candidates)
}

/// Real roots of `c3 x^3 + c2 x^2 + c1 x + c0`, deduplicated by multiplicity.
/// Degenerate leading coefficients fall back to the lower-degree polynomial.
pub fn solve_cubic(c3: f64, c2: f64, c1: f64, c0: f64) -> Vec<f64> {
    let scale = c3.abs().max(c2.abs()).max(c1.abs()).max(c0.abs());
    if scale == 0.0 {
        return Vec::new(); // identically zero: no isolated roots
    }
    if c3.abs() <= 1e-13 * scale {
        return solve_quadratic(c2, c1, c0);
    }
    // Depress: x = t - c2 / (3 c3), t^3 + p t + q = 0.
    let shift = c2 / (3.0 * c3);
    let p = c1 / c3 - shift * shift * 3.0;
    let q = 2.0 * shift.powi(3) - shift * c1 / c3 + c0 / c3;
    let disc = -4.0 * p * p * p - 27.0 * q * q;
    let disc_scale = (4.0 * p.abs().powi(3)).max(27.0 * q * q).max(1e-300);
    let ts: Vec<f64> = if disc.abs() <= 1e-12 * disc_scale {
        if p.abs() <= 1e-12 * (1.0 + q.abs().cbrt().powi(2)) {
            vec![0.0] // near-triple root
        } else {
            let double = -1.5 * q / p;
            vec![double, -2.0 * double]
        }
    } else if disc > 0.0 {
        // Three distinct real roots: trigonometric form.
        let m = 2.0 * (-p / 3.0).sqrt();
        let theta = (3.0 * q / (p * m)).clamp(-1.0, 1.0).acos() / 3.0;
        (0..3).map(|k| m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos()).collect()
    } else {
        // One real root: Cardano with the sign arranged to avoid cancellation.
        let half_q = 0.5 * q;
        let r = (half_q * half_q + p * p * p / 27.0).sqrt();
        let u = if half_q >= 0.0 { -(half_q + r).cbrt() } else { (r - half_q).cbrt() };
        let t = if u == 0.0 { 0.0 } else { u - p / (3.0 * u) };
        vec![t]
    };
    let mut roots: Vec<f64> = ts.into_iter().map(|t| t - shift).collect();
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots
}

fn solve_quadratic(a: f64, b: f64, c: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if a.abs() <= 1e-13 * scale {
        if b.abs() <= 1e-13 * scale {
            return Vec::new();
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    if disc == 0.0 {
        return vec![-b / (2.0 * a)];
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let mut roots = if q == 0.0 { vec![0.0, 0.0] } else { vec![q / a, c / q] };
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    roots.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * (1.0 + x.abs()));
    roots
}

/// Total-least-squares line through the indexed points: centroid plus the
/// minor eigenvector of the 2x2 scatter matrix. Errors when the scatter is
/// isotropic (no unique direction) or the points coincide.
pub fn refit_line(points: &[[f64; 2]], indices: &[usize]) -> Result<Line2, SolveError> {
    if indices.len() < 2 {
        return Err(SolveError::TooFewObservations { needed: 2, got: indices.len() });
    }
    let n = indices.len() as f64;
    let (mut cx, mut cy) = (0.0, 0.0);
    for &i in indices {
        cx += points[i][0];
        cy += points[i][1];
    }
    cx /= n;
    cy /= n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &i in indices {
        let dx = points[i][0] - cx;
        let dy = points[i][1] - cy;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    // Minor eigenvector of [[sxx, sxy], [sxy, syy]].
    let diff = sxx - syy;
    let spread = (diff * diff + 4.0 * sxy * sxy).sqrt();
    if spread == 0.0 {
        return Err(SolveError::DegenerateMinimalSet("isotropic point scatter"));
    }
    let lambda_min = 0.5 * (sxx + syy - spread);
    // Pick the better-conditioned eigenvector expression.
    let (a, b) = if (sxx - lambda_min).abs() >= (syy - lambda_min).abs() {
        (sxy, lambda_min - sxx)
    } else {
        (lambda_min - syy, sxy)
    };
    let norm = (a * a + b * b).sqrt();
    if norm == 0.0 {
        return Err(SolveError::DegenerateMinimalSet("isotropic point scatter"));
    }
    let (a, b) = (a / norm, b / norm);
    Ok(Line2 { a, b, c: -(a * cx + b * cy) })
}

/// Refit of a two-view model over an inlier set: the 8-point homogeneous fit,
/// which needs at least 8 points regardless of kind.
pub fn refit_matrix(
    corrs: &[Correspondence],
    indices: &[usize],
    kind: ModelKind,
) -> Result<Model3x3, SolveError> {
    let subset: Vec<Correspondence> = indices.iter().map(|&i| corrs[i]).collect();
    solve_fundamental_8pt(&subset, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{epipolar_error, rotation_about, Pose};
    use crate::rng::Rng;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    #[test]
    fn line_through_two_points_worked_example() {
        let line = solve_line([0.0, 1.0], [1.0, 2.0]).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(line.a, -r, max_relative = 1e-12);
        assert_relative_eq!(line.b, r, max_relative = 1e-12);
        assert_relative_eq!(line.c, -r, max_relative = 1e-12);
    }

    #[test]
    fn line_rejects_coincident_points() {
        assert_eq!(
            solve_line([1.0, 1.0], [1.0, 1.0]).unwrap_err(),
            SolveError::DegenerateMinimalSet("coincident points")
        );
    }

    #[test]
    fn line_passes_through_both_inputs() {
        let mut rng = Rng::from_seed(4);
        for _ in 0..100 {
            let p = [rng.gaussian(), rng.gaussian()];
            let q = [rng.gaussian(), rng.gaussian()];
            let line = solve_line(p, q).unwrap();
            assert!((line.a * p[0] + line.b * p[1] + line.c).abs() < 1e-12);
            assert!((line.a * q[0] + line.b * q[1] + line.c).abs() < 1e-12);
        }
    }

    #[test]
    fn line_jacobian_matches_finite_differences() {
        let mut rng = Rng::from_seed(6);
        let h = 1e-6;
        for _ in 0..1000 {
            let p = [rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)];
            let q = [rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)];
            if ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() < 0.1 {
                continue;
            }
            let (_, jac) = solve_line_grad(p, q).unwrap();
            for k in 0..4 {
                let perturb = |delta: f64| {
                    let mut pp = p;
                    let mut qq = q;
                    match k {
                        0 => pp[0] += delta,
                        1 => pp[1] += delta,
                        2 => qq[0] += delta,
                        _ => qq[1] += delta,
                    }
                    solve_line(pp, qq).unwrap()
                };
                let up = perturb(h);
                let dn = perturb(-h);
                let fd = [
                    (up.a - dn.a) / (2.0 * h),
                    (up.b - dn.b) / (2.0 * h),
                    (up.c - dn.c) / (2.0 * h),
                ];
                for row in 0..3 {
                    let err = (jac[row][k] - fd[row]).abs()
                        / jac[row][k].abs().max(fd[row].abs()).max(1e-4);
                    assert!(
                        err < 1e-4,
                        "jacobian mismatch at row {row} col {k}: {} vs {}",
                        jac[row][k],
                        fd[row]
                    );
                }
            }
        }
    }

    fn scene(seed: u64, n: usize) -> (Pose, Vec<Correspondence>) {
        let mut rng = Rng::from_seed(seed);
        let axis = Vector3::new(rng.gaussian(), rng.gaussian(), rng.gaussian());
        let pose =
            Pose::new(rotation_about(axis, rng.uniform_in(0.05, 0.4)), Vector3::new(rng.gaussian(), rng.gaussian(), rng.gaussian()))
                .unwrap();
        let mut corrs = Vec::with_capacity(n);
        while corrs.len() < n {
            let p = Vector3::new(rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0), rng.uniform_in(4.0, 8.0));
            let q = pose.rotation * p + pose.translation;
            if q.z <= 0.1 {
                continue;
            }
            corrs.push(Correspondence::new(p.x / p.z, p.y / p.z, q.x / q.z, q.y / q.z));
        }
        (pose, corrs)
    }

    #[test]
    fn eight_point_recovers_noise_free_models() {
        for seed in 0..50 {
            let (pose, corrs) = scene(seed, 8);
            for kind in [ModelKind::Fundamental, ModelKind::Essential] {
                let model = solve_fundamental_8pt(&corrs, kind).unwrap();
                model.validate().unwrap();
                for c in &corrs {
                    assert!(
                        epipolar_error(c, &model).unwrap() < 1e-9,
                        "seed {seed}: residual too large"
                    );
                }
            }
            // The essential solution matches the generating pose's matrix up to sign.
            let e = solve_fundamental_8pt(&corrs, ModelKind::Essential).unwrap();
            let gt = pose.essential();
            let diff = (e.m - gt.m).norm().min((e.m + gt.m).norm());
            assert!(diff < 1e-6, "seed {seed}: essential differs from ground truth by {diff}");
        }
    }

    #[test]
    fn eight_point_oversized_sets_fit_everything() {
        let (_, corrs) = scene(123, 64);
        let model = solve_fundamental_8pt(&corrs, ModelKind::Fundamental).unwrap();
        for c in &corrs {
            assert!(epipolar_error(c, &model).unwrap() < 1e-9);
        }
    }

    #[test]
    fn eight_point_needs_eight() {
        let (_, corrs) = scene(3, 7);
        assert_eq!(
            solve_fundamental_8pt(&corrs, ModelKind::Fundamental).unwrap_err(),
            SolveError::TooFewObservations { needed: 8, got: 7 }
        );
    }

    #[test]
    fn eight_point_rejects_rank_deficient_sets() {
        // Eight copies of one correspondence span a rank-1 system.
        let c = Correspondence::new(0.1, 0.2, 0.3, 0.4);
        let corrs = vec![c; 8];
        // Coincident points already fail the normalization stage.
        assert!(matches!(
            solve_fundamental_8pt(&corrs, ModelKind::Fundamental).unwrap_err(),
            SolveError::DegenerateMinimalSet(_)
        ));
        // Two distinct correspondences, each repeated: rank 2 < 8.
        let d = Correspondence::new(-0.4, 0.1, -0.2, -0.3);
        let mut corrs = vec![c; 4];
        corrs.extend(vec![d; 4]);
        assert!(matches!(
            solve_fundamental_8pt(&corrs, ModelKind::Fundamental).unwrap_err(),
            SolveError::RankDeficient { .. }
        ));
    }

    #[test]
    fn seven_point_candidates_interpolate_the_constraints() {
        let mut three_root_seen = false;
        for seed in 0..100 {
            let (_, corrs) = scene(seed + 500, 7);
            let candidates = solve_fundamental_7pt(&corrs).unwrap();
            assert!((1..=3).contains(&candidates.len()));
            if candidates.len() == 3 {
                three_root_seen = true;
            }
            for model in &candidates {
                assert!(model.m.determinant().abs() < 1e-9);
                for c in &corrs {
                    assert!(epipolar_error(c, model).unwrap() < 1e-9);
                }
            }
        }
        assert!(three_root_seen, "no three-candidate configuration in 100 scenes");
    }

    #[test]
    fn seven_point_takes_exactly_seven() {
        let (_, corrs) = scene(1, 8);
        assert_eq!(solve_fundamental_7pt(&corrs).unwrap_err(), SolveError::NotSevenPoints(8));
    }

    /// Brute-force root finder: dense sampling plus bisection on sign changes.
    fn grid_roots(f: impl Fn(f64) -> f64, lo: f64, hi: f64, samples: usize) -> Vec<f64> {
        let mut roots = Vec::new();
        let step = (hi - lo) / samples as f64;
        let mut prev_x = lo;
        let mut prev_f = f(lo);
        for i in 1..=samples {
            let x = lo + step * i as f64;
            let fx = f(x);
            if prev_f == 0.0 {
                roots.push(prev_x);
            } else if prev_f * fx < 0.0 {
                let (mut a, mut b) = (prev_x, x);
                let (mut fa, _) = (prev_f, fx);
                for _ in 0..200 {
                    let mid = 0.5 * (a + b);
                    let fm = f(mid);
                    if fa * fm <= 0.0 {
                        b = mid;
                    } else {
                        a = mid;
                        fa = fm;
                    }
                }
                roots.push(0.5 * (a + b));
            }
            prev_x = x;
            prev_f = fx;
        }
        roots
    }

    #[test]
    fn cubic_roots_match_bisection_oracle() {
        let mut rng = Rng::from_seed(77);
        let mut checked = 0;
        for _ in 0..500 {
            let c: Vec<f64> = (0..4).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
            let (c3, c2, c1, c0) = (c[0], c[1], c[2], c[3]);
            if c3.abs() < 0.05 {
                continue;
            }
            let f = |x: f64| ((c3 * x + c2) * x + c1) * x + c0;
            let mine: Vec<f64> =
                solve_cubic(c3, c2, c1, c0).into_iter().filter(|r| r.abs() <= 10.0).collect();
            let oracle = grid_roots(f, -10.0, 10.0, 40_000);
            // Skip near-degenerate configurations where float sign tests are
            // unreliable for both methods.
            let min_sep = mine
                .windows(2)
                .map(|w| (w[1] - w[0]).abs())
                .fold(f64::INFINITY, f64::min);
            if min_sep < 1e-4 {
                continue;
            }
            assert_eq!(mine.len(), oracle.len(), "root count mismatch for {c:?}");
            for (a, b) in mine.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-6, "root value mismatch: {a} vs {b}");
            }
            checked += 1;
        }
        assert!(checked > 300, "too few well-conditioned cubics checked: {checked}");
    }

    #[test]
    fn cubic_handles_degenerate_degrees() {
        // Leading coefficient zero: quadratic x^2 - 1.
        assert_eq!(solve_cubic(0.0, 1.0, 0.0, -1.0), vec![-1.0, 1.0]);
        // Linear.
        assert_eq!(solve_cubic(0.0, 0.0, 2.0, -4.0), vec![2.0]);
        // Triple root at 1: (x-1)^3.
        let roots = solve_cubic(1.0, -3.0, 3.0, -1.0);
        assert_eq!(roots.len(), 1);
        assert_relative_eq!(roots[0], 1.0, epsilon = 1e-6);
        // Double root at 0, simple at 1: x^3 - x^2.
        let roots = solve_cubic(1.0, -1.0, 0.0, 0.0);
        assert_eq!(roots.len(), 2);
        assert_relative_eq!(roots[0], 0.0, epsilon = 1e-9);
        assert_relative_eq!(roots[1], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn tls_refit_reproduces_exact_lines_and_reduces_noise() {
        let mut rng = Rng::from_seed(31);
        let gt = solve_line([0.0, 0.2], [1.0, 0.7]).unwrap();
        let points: Vec<[f64; 2]> = (0..40)
            .map(|i| {
                let x = i as f64 / 39.0;
                [x, gt.y_at(x)]
            })
            .collect();
        let all: Vec<usize> = (0..points.len()).collect();
        let refit = refit_line(&points, &all).unwrap();
        for p in &points {
            assert!(crate::geometry::point_line_distance(*p, &refit).unwrap() < 1e-12);
        }
        // With noise, TLS over all points beats the worst minimal fit.
        let noisy: Vec<[f64; 2]> =
            points.iter().map(|p| [p[0] + 0.01 * rng.gaussian(), p[1] + 0.01 * rng.gaussian()]).collect();
        let refit = refit_line(&noisy, &all).unwrap();
        let rms = |line: &Line2| {
            (noisy
                .iter()
                .map(|p| crate::geometry::point_line_distance(*p, line).unwrap().powi(2))
                .sum::<f64>()
                / noisy.len() as f64)
                .sqrt()
        };
        let minimal = solve_line(noisy[0], noisy[1]).unwrap();
        assert!(rms(&refit) <= rms(&minimal));
    }

    #[test]
    fn tls_refit_rejects_isotropic_scatter() {
        let square = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        assert!(matches!(
            refit_line(&square, &[0, 1, 2, 3]),
            Err(SolveError::DegenerateMinimalSet(_))
        ));
        assert_eq!(
            refit_line(&square, &[0]).unwrap_err(),
            SolveError::TooFewObservations { needed: 2, got: 1 }
        );
    }

    #[test]
    fn matrix_refit_respects_kind_and_size() {
        let (pose, corrs) = scene(9, 30);
        let idx: Vec<usize> = (0..corrs.len()).collect();
        let e = refit_matrix(&corrs, &idx, ModelKind::Essential).unwrap();
        e.validate().unwrap();
        let recovered = crate::geometry::decompose_essential(&e, &corrs).unwrap();
        assert!(crate::geometry::angular_pose_error(&pose, &recovered) < 1e-6);
        assert_eq!(
            refit_matrix(&corrs, &idx[..7], ModelKind::Essential).unwrap_err(),
            SolveError::TooFewObservations { needed: 8, got: 7 }
        );
    }
}
