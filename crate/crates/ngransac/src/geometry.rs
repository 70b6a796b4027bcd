//! Geometric primitives: correspondences, 3x3 two-view models, 2D lines and
//! relative poses, plus the residual and error measures built on them.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    /// A model (or derived epipolar line) without usable constraints.
    #[error("degenerate model: {0}")]
    DegenerateModel(&'static str),
    /// Coordinate normalization over a dimension with no spread.
    #[error("zero variance in coordinate dimension {0}")]
    ZeroVariance(usize),
    /// Essential decomposition found no candidate with a strict cheirality majority.
    #[error("cheirality vote ambiguous: best candidate has {in_front} of {supports} supports in front")]
    CheiralityAmbiguous { in_front: usize, supports: usize },
    /// Operations that need at least one support correspondence.
    #[error("empty support set")]
    EmptySupport,
    /// Rotation not orthonormal, translation not normalizable, etc.
    #[error("invalid pose: {0}")]
    InvalidPose(&'static str),
}

/// A putative match between a point in image 1 and a point in image 2,
/// optionally carrying descriptor-distance side information and a
/// ground-truth inlier label (synthetic data only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    /// Descriptor distance ratio in `[0, 1]`; lower suggests a more reliable match.
    pub ratio: Option<f64>,
    /// Ground-truth inlier flag, available only for generated scenes.
    pub gt_inlier: Option<bool>,
}

impl Correspondence {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Correspondence { x1, y1, x2, y2, ratio: None, gt_inlier: None }
    }

    pub fn point1(&self) -> Vector3<f64> {
        Vector3::new(self.x1, self.y1, 1.0)
    }

    pub fn point2(&self) -> Vector3<f64> {
        Vector3::new(self.x2, self.y2, 1.0)
    }
}

/// Which two-view constraint a 3x3 matrix encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Uncalibrated: rank-2, unit Frobenius norm.
    Fundamental,
    /// Calibrated: two equal singular values, third zero, unit Frobenius norm.
    Essential,
}

/// A fundamental or essential matrix, stored in its canonical form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Model3x3 {
    pub kind: ModelKind,
    pub m: Matrix3<f64>,
}

impl Model3x3 {
    /// Canonicalizes an arbitrary matrix as a fundamental matrix: projects to
    /// rank 2, scales to unit Frobenius norm and fixes the sign so the entry of
    /// largest magnitude is positive.
    pub fn fundamental(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let svd = m.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut s = svd.singular_values;
        if s[0] == 0.0 {
            return Err(GeometryError::DegenerateModel("zero matrix"));
        }
        s[2] = 0.0;
        let projected = u * Matrix3::from_diagonal(&s) * vt;
        Ok(Model3x3 { kind: ModelKind::Fundamental, m: canonical_scale(projected) })
    }

    /// Canonicalizes an arbitrary matrix as an essential matrix: projects the
    /// singular values to `((s1+s2)/2, (s1+s2)/2, 0)`, then normalizes as above.
    pub fn essential(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let svd = m.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let s = svd.singular_values;
        let mean = 0.5 * (s[0] + s[1]);
        if mean == 0.0 {
            return Err(GeometryError::DegenerateModel("zero matrix"));
        }
        let diag = Vector3::new(mean, mean, 0.0);
        let projected = u * Matrix3::from_diagonal(&diag) * vt;
        Ok(Model3x3 { kind: ModelKind::Essential, m: canonical_scale(projected) })
    }

    /// The model expressed for coordinates multiplied by `scale` (e.g. moving
    /// from calibrated units to pixel-like units). Any non-unit scale breaks the
    /// calibrated assumption, so the result is tagged Fundamental.
    pub fn rescale_coordinates(&self, scale: f64) -> Result<Self, GeometryError> {
        if scale == 1.0 {
            return Ok(*self);
        }
        let s_inv = Matrix3::from_diagonal(&Vector3::new(1.0 / scale, 1.0 / scale, 1.0));
        Model3x3::fundamental(s_inv.transpose() * self.m * s_inv)
    }

    /// Checks the canonical-form invariants for this kind.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let svd = self.m.svd(false, false);
        let s = svd.singular_values;
        if s[0] == 0.0 {
            return Err(GeometryError::DegenerateModel("zero matrix"));
        }
        if s[2] / s[0] >= 1e-6 {
            return Err(GeometryError::DegenerateModel("rank > 2"));
        }
        if (self.m.norm() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::DegenerateModel("not unit Frobenius norm"));
        }
        if self.kind == ModelKind::Essential && (s[0] - s[1]).abs() / s[0] > 1e-6 {
            return Err(GeometryError::DegenerateModel("unequal singular values"));
        }
        Ok(())
    }
}

/// Unit Frobenius norm with a deterministic sign: the entry of largest
/// magnitude is made positive.
fn canonical_scale(m: Matrix3<f64>) -> Matrix3<f64> {
    let mut scaled = m / m.norm();
    let mut dominant = 0.0f64;
    for &v in scaled.iter() {
        if v.abs() > dominant.abs() {
            dominant = v;
        }
    }
    if dominant < 0.0 {
        scaled = -scaled;
    }
    scaled
}

/// Squared first-order geometric (Sampson-style) epipolar error of a
/// correspondence under a 3x3 model:
/// `(x2' M x1)^2 / ((M x1)_0^2 + (M x1)_1^2 + (M' x2)_0^2 + (M' x2)_1^2)`.
pub fn epipolar_error(y: &Correspondence, model: &Model3x3) -> Result<f64, GeometryError> {
    let x1 = y.point1();
    let x2 = y.point2();
    let l2 = model.m * x1; // epipolar line in image 2
    let l1 = model.m.transpose() * x2; // epipolar line in image 1
    let num = x2.dot(&l2);
    let den = l2.x * l2.x + l2.y * l2.y + l1.x * l1.x + l1.y * l1.y;
    if den == 0.0 {
        return Err(GeometryError::DegenerateModel("all epipolar line coefficients vanish"));
    }
    Ok(num * num / den)
}

/// A 2D line `a*x + b*y + c = 0` with unit normal (`a^2 + b^2 = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Line2 {
    /// Normalizes coefficients to a unit normal. Errors when `a = b = 0`.
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, GeometryError> {
        let norm = (a * a + b * b).sqrt();
        if norm == 0.0 {
            return Err(GeometryError::DegenerateModel("line normal vanishes"));
        }
        Ok(Line2 { a: a / norm, b: b / norm, c: c / norm })
    }

    /// `y` coordinate at a given `x`; undefined (infinite) for vertical lines.
    pub fn y_at(&self, x: f64) -> f64 {
        -(self.a * x + self.c) / self.b
    }
}

/// Perpendicular distance from a point to a line. The line is re-normalized
/// internally, so the result is invariant to any non-zero scaling of the
/// coefficients.
pub fn point_line_distance(point: [f64; 2], line: &Line2) -> Result<f64, GeometryError> {
    let norm = (line.a * line.a + line.b * line.b).sqrt();
    if norm == 0.0 {
        return Err(GeometryError::DegenerateModel("line normal vanishes"));
    }
    Ok((line.a * point[0] + line.b * point[1] + line.c).abs() / norm)
}

/// Distance plus its partial derivatives with respect to the raw line
/// coefficients and the point. The distance is scale-invariant in the
/// coefficients and the gradient respects that, so it composes with any
/// parameterization of the line. Non-differentiable exactly on the line;
/// there the subgradient zero is returned for the point and only the scale
/// direction survives for the coefficients.
pub fn point_line_distance_grad(point: [f64; 2], line: &Line2) -> (f64, [f64; 3], [f64; 2]) {
    let n2 = line.a * line.a + line.b * line.b;
    assert!(n2 > 0.0, "line normal vanishes");
    let n = n2.sqrt();
    let g = line.a * point[0] + line.b * point[1] + line.c;
    let s = if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    };
    let d = g.abs() / n;
    let d_line = [
        (s * point[0] - d * line.a / n) / n,
        (s * point[1] - d * line.b / n) / n,
        s / n,
    ];
    (d, d_line, [s * line.a / n, s * line.b / n])
}

/// Per-dimension statistics used to center and scale correspondence sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordStats {
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

/// Centers each of the four coordinate dimensions and scales to unit standard
/// deviation (population convention). When `stats` is given they are applied
/// as-is, so a transform fitted on one set can be replayed on another; otherwise
/// statistics are computed from the input and returned for later inversion.
pub fn normalize_coordinates(
    corrs: &[Correspondence],
    stats: Option<&CoordStats>,
) -> Result<(Vec<Correspondence>, CoordStats), GeometryError> {
    if corrs.is_empty() {
        return Err(GeometryError::EmptySupport);
    }
    let stats = match stats {
        Some(s) => {
            for (dim, &sd) in s.std.iter().enumerate() {
                if sd <= 0.0 {
                    return Err(GeometryError::ZeroVariance(dim));
                }
            }
            *s
        }
        None => {
            let n = corrs.len() as f64;
            let mut mean = [0.0f64; 4];
            let mut var = [0.0f64; 4];
            for c in corrs {
                for (dim, v) in [c.x1, c.y1, c.x2, c.y2].into_iter().enumerate() {
                    mean[dim] += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            for c in corrs {
                for (dim, v) in [c.x1, c.y1, c.x2, c.y2].into_iter().enumerate() {
                    var[dim] += (v - mean[dim]) * (v - mean[dim]);
                }
            }
            let mut std = [0.0f64; 4];
            for dim in 0..4 {
                std[dim] = (var[dim] / n).sqrt();
                if std[dim] == 0.0 {
                    return Err(GeometryError::ZeroVariance(dim));
                }
            }
            CoordStats { mean, std }
        }
    };
    let normalized = corrs
        .iter()
        .map(|c| Correspondence {
            x1: (c.x1 - stats.mean[0]) / stats.std[0],
            y1: (c.y1 - stats.mean[1]) / stats.std[1],
            x2: (c.x2 - stats.mean[2]) / stats.std[2],
            y2: (c.y2 - stats.mean[3]) / stats.std[3],
            ..*c
        })
        .collect();
    Ok((normalized, stats))
}

/// Inverse of [`normalize_coordinates`] for the same statistics.
pub fn denormalize_coordinates(corrs: &[Correspondence], stats: &CoordStats) -> Vec<Correspondence> {
    corrs
        .iter()
        .map(|c| Correspondence {
            x1: c.x1 * stats.std[0] + stats.mean[0],
            y1: c.y1 * stats.std[1] + stats.mean[1],
            x2: c.x2 * stats.std[2] + stats.mean[2],
            y2: c.y2 * stats.std[3] + stats.mean[3],
            ..*c
        })
        .collect()
}

/// Relative pose of camera 2 with respect to camera 1: `X2 = R * X1 + t`,
/// with `t` of unit length (the epipolar constraint fixes no scale).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    /// Validates orthonormality and normalizes the translation to unit length.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.norm() > 1e-9 {
            return Err(GeometryError::InvalidPose("rotation not orthonormal"));
        }
        if rotation.determinant() < 0.0 {
            return Err(GeometryError::InvalidPose("rotation is a reflection"));
        }
        let norm = translation.norm();
        if norm == 0.0 {
            return Err(GeometryError::InvalidPose("translation has zero length"));
        }
        Ok(Pose { rotation, translation: translation / norm })
    }

    /// The essential matrix `[t]x R` induced by this pose, in canonical form.
    pub fn essential(&self) -> Model3x3 {
        let t = self.translation;
        let tx = Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0);
        // [t]x R of a unit translation already has singular values (1, 1, 0);
        // canonicalization only fixes scale and sign.
        Model3x3::essential(tx * self.rotation).expect("cross-product matrix is non-zero")
    }
}

/// Rotation matrix for a rotation of `angle` radians about `axis`.
pub fn rotation_about(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let axis = nalgebra::Unit::new_normalize(axis);
    nalgebra::Rotation3::from_axis_angle(&axis, angle).into_inner()
}

/// Recovers the relative pose from an essential matrix by testing the four
/// `(R, +-t)` candidates against the support correspondences: the winner must
/// place a strict majority of supports in front of both cameras, otherwise the
/// vote is ambiguous and an error is returned.
pub fn decompose_essential(
    model: &Model3x3,
    supports: &[Correspondence],
) -> Result<Pose, GeometryError> {
    if supports.is_empty() {
        return Err(GeometryError::EmptySupport);
    }
    let svd = model.m.svd(true, true);
    let mut u = svd.u.unwrap();
    let mut v = svd.v_t.unwrap().transpose();
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v.determinant() < 0.0 {
        v = -v;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v.transpose();
    let r2 = u * w.transpose() * v.transpose();
    let t = u.column(2).into_owned();

    let candidates = [(r1, t), (r1, -t), (r2, t), (r2, -t)];
    let mut counts = [0usize; 4];
    for (i, (r, t)) in candidates.iter().enumerate() {
        counts[i] = supports.iter().filter(|c| in_front_of_both(c, r, t)).count();
    }
    let best = (0..4).max_by_key(|&i| counts[i]).unwrap();
    let unique = counts.iter().filter(|&&c| c == counts[best]).count() == 1;
    if !unique || 2 * counts[best] <= supports.len() {
        return Err(GeometryError::CheiralityAmbiguous {
            in_front: counts[best],
            supports: supports.len(),
        });
    }
    let (r, t) = candidates[best];
    Pose::new(r, t)
}

/// Solves the two-ray depth system `d2 * f2 = d1 * R f1 + t` in least squares
/// and reports whether both depths are positive.
fn in_front_of_both(c: &Correspondence, r: &Matrix3<f64>, t: &Vector3<f64>) -> bool {
    let a = r * c.point1();
    let b = c.point2();
    // Columns of the 3x2 system [-a  b] * (d1, d2)' = t, via normal equations.
    let ata = Matrix2::new(a.dot(&a), -a.dot(&b), -a.dot(&b), b.dot(&b));
    let atv = Vector2::new(-a.dot(t), b.dot(t));
    let det = ata.determinant();
    if det.abs() < 1e-18 {
        return false; // parallel rays carry no cheirality information
    }
    let d1 = (ata.m22 * atv.x - ata.m12 * atv.y) / det;
    let d2 = (ata.m11 * atv.y - ata.m21 * atv.x) / det;
    d1 > 0.0 && d2 > 0.0
}

/// Angular pose error in degrees: the maximum of the rotation angle between
/// the two rotations and the angle between the translation axes. Translation
/// is compared as an undirected axis (`arccos |t_a . t_b|`), since the
/// epipolar constraint leaves the translation sign unobservable.
pub fn angular_pose_error(a: &Pose, b: &Pose) -> f64 {
    // atan2 of (sin, cos) stays fully accurate at both ends of the range,
    // where acos of a clamped cosine loses half the significant digits.
    let rel = a.rotation.transpose() * b.rotation;
    let rot_sin = Vector3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    )
    .norm()
        / 2.0;
    let rot_cos = (rel.trace() - 1.0) / 2.0;
    let rot_deg = rot_sin.atan2(rot_cos).to_degrees();
    let trans_sin = a.translation.cross(&b.translation).norm();
    let trans_cos = a.translation.dot(&b.translation).abs();
    let trans_deg = trans_sin.atan2(trans_cos).to_degrees();
    rot_deg.max(trans_deg)
}
