//! Seeded synthetic scene generators: two-view correspondence sets with
//! controlled outlier rates and side information, and rasterized line scenes
//! for the joint prediction task.

use nalgebra::Vector3;

use crate::geometry::{Correspondence, Line2, Model3x3, Pose, rotation_about};
use crate::rng::Rng;

/// Per-correspondence auxiliary score attached by the generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SideInfo {
    /// No ratio field.
    None,
    /// Inliers draw ratios from a low band, outliers from a high band; the
    /// bands are separated by `separation` around 0.5, so any threshold
    /// between them classifies perfectly.
    Informative { separation: f64 },
    /// Ratios uniform in `[0, 1]` regardless of the label.
    Uninformative,
}

/// Ground-truth relative pose selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScenePose {
    Random,
    Fixed(Pose),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpipolarSceneConfig {
    /// Number of correspondences; at least 16 so both minimal solvers fit.
    pub n: usize,
    /// Fraction of correspondences replaced by uniform mismatches.
    pub outlier_rate: f64,
    /// Isotropic Gaussian noise added to every projected coordinate, in
    /// normalized camera units.
    pub noise_std: f64,
    pub pose: ScenePose,
    pub side_info: SideInfo,
    pub seed: u64,
    /// Normalized-to-pixel scale used for pixel-unit reporting.
    pub pixel_scale: f64,
}

impl EpipolarSceneConfig {
    pub fn new(n: usize, outlier_rate: f64, noise_std: f64, seed: u64) -> Self {
        EpipolarSceneConfig {
            n,
            outlier_rate,
            noise_std,
            pose: ScenePose::Random,
            side_info: SideInfo::None,
            seed,
            pixel_scale: 100.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpipolarScene {
    /// Correspondences in normalized camera coordinates (identity intrinsics),
    /// with `gt_inlier` labels and ratios per the side-info mode.
    pub correspondences: Vec<Correspondence>,
    pub gt_pose: Pose,
    pub gt_essential: Model3x3,
    /// The same constraint expressed for pixel coordinates
    /// (`normalized * pixel_scale`).
    pub gt_fundamental: Model3x3,
    pub pixel_scale: f64,
}

impl EpipolarScene {
    /// The correspondences scaled into pixel units, matching
    /// [`EpipolarScene::gt_fundamental`].
    pub fn pixel_correspondences(&self) -> Vec<Correspondence> {
        self.correspondences
            .iter()
            .map(|c| {
                let mut p = Correspondence::new(
                    c.x1 * self.pixel_scale,
                    c.y1 * self.pixel_scale,
                    c.x2 * self.pixel_scale,
                    c.y2 * self.pixel_scale,
                );
                p.ratio = c.ratio;
                p.gt_inlier = c.gt_inlier;
                p
            })
            .collect()
    }
}

// Scene box: depths well in front of camera 1; lateral extent keeps
// projections inside [-0.5, 0.5], which doubles as the outlier image region.
const DEPTH_MIN: f64 = 4.0;
const DEPTH_MAX: f64 = 8.0;
const IMAGE_HALF: f64 = 0.5;

fn random_pose(rng: &mut Rng) -> Pose {
    loop {
        let axis = Vector3::new(rng.gaussian(), rng.gaussian(), rng.gaussian());
        if axis.norm() < 1e-6 {
            continue;
        }
        let angle = rng.uniform_in(0.05, 0.3);
        let t = Vector3::new(rng.gaussian(), rng.gaussian(), rng.gaussian());
        if t.norm() < 1e-6 {
            continue;
        }
        if let Ok(pose) = Pose::new(rotation_about(axis, angle), t) {
            return pose;
        }
    }
}

/// Generates a two-view scene: 3D points in a box in front of both cameras,
/// projected with identity intrinsics, perturbed by isotropic noise; a
/// `round(outlier_rate * n)`-sized random subset is replaced by independent
/// uniform positions in both images.
pub fn gen_epipolar_scene(config: &EpipolarSceneConfig) -> EpipolarScene {
    assert!(config.n >= 16, "need at least 16 correspondences");
    assert!((0.0..=1.0).contains(&config.outlier_rate), "outlier rate in [0, 1]");
    assert!(config.noise_std >= 0.0, "noise must be non-negative");
    assert!(config.pixel_scale > 0.0, "pixel scale must be positive");
    if let SideInfo::Informative { separation } = config.side_info {
        assert!((0.0..1.0).contains(&separation), "band separation in [0, 1)");
    }

    let mut rng = Rng::from_seed(config.seed);
    let gt_pose = match config.pose {
        ScenePose::Random => random_pose(&mut rng),
        ScenePose::Fixed(p) => p,
    };

    let mut correspondences = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        // Rejection-sample a box point visible in both views.
        let (p1, p2) = loop {
            let x = rng.uniform_in(-2.0, 2.0);
            let y = rng.uniform_in(-2.0, 2.0);
            let z = rng.uniform_in(DEPTH_MIN, DEPTH_MAX);
            let p = Vector3::new(x, y, z);
            let q = gt_pose.rotation * p + gt_pose.translation;
            if q.z <= 0.5 {
                continue;
            }
            let u = [p.x / p.z, p.y / p.z];
            let v = [q.x / q.z, q.y / q.z];
            if v[0].abs() <= IMAGE_HALF && v[1].abs() <= IMAGE_HALF {
                break (u, v);
            }
        };
        let mut c = Correspondence::new(
            p1[0] + rng.gaussian() * config.noise_std,
            p1[1] + rng.gaussian() * config.noise_std,
            p2[0] + rng.gaussian() * config.noise_std,
            p2[1] + rng.gaussian() * config.noise_std,
        );
        c.gt_inlier = Some(true);
        correspondences.push(c);
    }

    let n_outliers = (config.outlier_rate * config.n as f64).round() as usize;
    let mut order: Vec<usize> = (0..config.n).collect();
    rng.shuffle(&mut order);
    for &i in order.iter().take(n_outliers) {
        let c = &mut correspondences[i];
        c.x1 = rng.uniform_in(-IMAGE_HALF, IMAGE_HALF);
        c.y1 = rng.uniform_in(-IMAGE_HALF, IMAGE_HALF);
        c.x2 = rng.uniform_in(-IMAGE_HALF, IMAGE_HALF);
        c.y2 = rng.uniform_in(-IMAGE_HALF, IMAGE_HALF);
        c.gt_inlier = Some(false);
    }

    for c in correspondences.iter_mut() {
        let inlier = c.gt_inlier == Some(true);
        c.ratio = match config.side_info {
            SideInfo::None => None,
            SideInfo::Uninformative => Some(rng.uniform_in(0.0, 1.0)),
            SideInfo::Informative { separation } => {
                let half = separation / 2.0;
                Some(if inlier {
                    rng.uniform_in(0.0, 0.5 - half)
                } else {
                    rng.uniform_in(0.5 + half, 1.0)
                })
            }
        };
    }

    let gt_essential = gt_pose.essential();
    let gt_fundamental = gt_essential
        .rescale_coordinates(config.pixel_scale)
        .expect("rescaled essential stays rank 2");
    EpipolarScene { correspondences, gt_pose, gt_essential, gt_fundamental, pixel_scale: config.pixel_scale }
}

/// Ground-truth line selection for [`gen_line_scene`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinePlacement {
    /// A shallow line through `(0, y0)` and `(1, y1)` with `y` in
    /// `[0.1, 0.9]`, so column-major rasterization always applies.
    Random,
    Fixed(Line2),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSceneConfig {
    /// Raster side length in pixels; must be divisible by `patch`.
    pub grid: usize,
    /// Patch side length in pixels.
    pub patch: usize,
    pub placement: LinePlacement,
    /// Gaussian jitter of the line samples, in unit coordinates.
    pub point_noise: f64,
    /// Fraction of bright pixels that are clutter instead of line samples.
    pub clutter_fraction: f64,
    pub seed: u64,
}

impl LineSceneConfig {
    pub fn new(seed: u64) -> Self {
        LineSceneConfig {
            grid: 64,
            patch: 8,
            placement: LinePlacement::Random,
            point_noise: 0.0,
            clutter_fraction: 0.0,
            seed,
        }
    }
}

/// Number of features emitted per patch: mean intensity, intensity variance,
/// and the bright-pixel centroid offset from the patch center (2 values).
pub const LINE_FEATURES_PER_PATCH: usize = 4;

#[derive(Debug, Clone)]
pub struct LineScene {
    /// Row-major `grid x grid` intensities in `[0, 1]`.
    pub intensities: Vec<f64>,
    pub grid: usize,
    pub patch: usize,
    /// `LINE_FEATURES_PER_PATCH` values per patch, patches in row-major order.
    pub features: Vec<f64>,
    /// Patch centers in unit coordinates, one per patch.
    pub anchors: Vec<[f64; 2]>,
    pub gt_line: Line2,
}

impl LineScene {
    pub fn patches_per_side(&self) -> usize {
        self.grid / self.patch
    }

    pub fn n_patches(&self) -> usize {
        self.patches_per_side() * self.patches_per_side()
    }
}

fn random_line(rng: &mut Rng) -> Line2 {
    loop {
        let y0 = rng.uniform_in(0.1, 0.9);
        let y1 = rng.uniform_in(0.1, 0.9);
        // Through (0, y0) and (1, y1): slope m = y1 - y0, so
        // m*x - y + y0 = 0 in (a, b, c) form.
        if let Ok(line) = Line2::new(y1 - y0, -1.0, y0) {
            return line;
        }
    }
}

/// Renders a line scene on a `grid x grid` raster inside the unit square:
/// one bright pixel per column nearest the (jittered) line, with a
/// `clutter_fraction` share of the bright pixels replaced by uniform clutter,
/// then summarizes each `patch x patch` block into guidance features.
pub fn gen_line_scene(config: &LineSceneConfig) -> LineScene {
    assert!(config.patch > 0 && config.grid % config.patch == 0, "grid must be divisible by patch");
    assert!((0.0..=1.0).contains(&config.clutter_fraction), "clutter fraction in [0, 1]");
    assert!(config.point_noise >= 0.0, "point noise must be non-negative");

    let mut rng = Rng::from_seed(config.seed);
    let gt_line = match config.placement {
        LinePlacement::Random => random_line(&mut rng),
        LinePlacement::Fixed(line) => line,
    };

    let grid = config.grid;
    let px = 1.0 / grid as f64;
    let mut intensities = vec![0.0; grid * grid];

    let n_clutter = (config.clutter_fraction * grid as f64).round() as usize;
    let n_line = grid - n_clutter;
    let mut columns: Vec<usize> = (0..grid).collect();
    rng.shuffle(&mut columns);

    // Line samples: nearest pixel to the jittered line in each kept column.
    for &col in columns.iter().take(n_line) {
        let x = (col as f64 + 0.5) * px;
        let y = gt_line.y_at(x) + rng.gaussian() * config.point_noise;
        if !(0.0..1.0).contains(&y) {
            continue;
        }
        let row = ((y / px) as usize).min(grid - 1);
        intensities[row * grid + col] = 1.0;
    }
    for _ in 0..n_clutter {
        let col = rng.below(grid);
        let row = rng.below(grid);
        intensities[row * grid + col] = 1.0;
    }

    let side = grid / config.patch;
    let mut features = Vec::with_capacity(side * side * LINE_FEATURES_PER_PATCH);
    let mut anchors = Vec::with_capacity(side * side);
    for prow in 0..side {
        for pcol in 0..side {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            let mut bright = 0usize;
            let mut cx = 0.0;
            let mut cy = 0.0;
            for r in 0..config.patch {
                for c in 0..config.patch {
                    let row = prow * config.patch + r;
                    let col = pcol * config.patch + c;
                    let v = intensities[row * grid + col];
                    sum += v;
                    sum_sq += v * v;
                    if v > 0.5 {
                        bright += 1;
                        cx += c as f64;
                        cy += r as f64;
                    }
                }
            }
            let area = (config.patch * config.patch) as f64;
            let mean = sum / area;
            let var = (sum_sq / area - mean * mean).max(0.0);
            let half = (config.patch as f64 - 1.0) / 2.0;
            // Centroid offset from the patch center, in patch half-widths.
            let (ox, oy) = if bright > 0 {
                ((cx / bright as f64 - half) / half.max(1.0), (cy / bright as f64 - half) / half.max(1.0))
            } else {
                (0.0, 0.0)
            };
            features.extend_from_slice(&[mean, var, ox, oy]);
            anchors.push([
                (pcol as f64 + 0.5) * config.patch as f64 * px,
                (prow as f64 + 0.5) * config.patch as f64 * px,
            ]);
        }
    }

    LineScene { intensities, grid, patch: config.patch, features, anchors, gt_line }
}
