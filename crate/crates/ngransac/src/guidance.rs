//! The guidance network: a permutation-equivariant per-observation MLP with
//! instance normalization over the set dimension. One head emits sampling
//! weights (sigmoid, then sum-normalization); an optional second head emits
//! 2D points for tasks that predict their own observations.
//!
//! Forward and backward passes are hand-rolled. Set reductions (instance-norm
//! statistics, weight normalization) use exact order-independent summation so
//! permuting the input set permutes the outputs bitwise.

use crate::fsum::ExactSum;
use crate::rng::Rng;
use crate::sampling::GuidanceDistribution;
use crate::scoring::sigmoid;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;
/// Predicted points live in [-1.5, 1.5] patch-relative coordinates.
pub const POINT_RANGE: f64 = 1.5;

const MAGIC: &[u8; 8] = b"GUIDENET";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum GuidanceError {
    #[error("observation set of size {got} is too small (instance norm needs 2)")]
    SetTooSmall { got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("unsupported model format version {found} (expected {FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("corrupt model file: {0}")]
    CorruptModel(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    WeightsOnly,
    PointsAndWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceNetSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_blocks: usize,
    pub heads: HeadKind,
}

impl GuidanceNetSpec {
    pub fn new(input_dim: usize, hidden_dim: usize, n_blocks: usize, heads: HeadKind) -> Self {
        assert!(input_dim >= 1 && hidden_dim >= 1 && n_blocks >= 1, "dimensions must be >= 1");
        GuidanceNetSpec { input_dim, hidden_dim, n_blocks, heads }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    fn layout(&self) -> Layout {
        let h = self.hidden_dim;
        let mut at = 0;
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let entry_w = take(h * self.input_dim);
        let entry_b = take(h);
        let mut blocks = Vec::with_capacity(self.n_blocks);
        for _ in 0..self.n_blocks {
            blocks.push(BlockRanges {
                w1: take(h * h),
                b1: take(h),
                w2: take(h * h),
                b2: take(h),
            });
        }
        let weight_w = take(h);
        let weight_b = take(1);
        let (point_w, point_b) = match self.heads {
            HeadKind::WeightsOnly => (None, None),
            HeadKind::PointsAndWeights => (Some(take(2 * h)), Some(take(2))),
        };
        Layout { entry_w, entry_b, blocks, weight_w, weight_b, point_w, point_b, total: at }
    }
}

struct BlockRanges {
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
}

struct Layout {
    entry_w: Range<usize>,
    entry_b: Range<usize>,
    blocks: Vec<BlockRanges>,
    weight_w: Range<usize>,
    weight_b: Range<usize>,
    point_w: Option<Range<usize>>,
    point_b: Option<Range<usize>>,
    total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceNet {
    pub spec: GuidanceNetSpec,
    pub params: Vec<f64>,
}

/// Instance normalization over the set dimension: per-channel mean 0 and unit
/// variance (population statistics, epsilon-stabilized). Returns the output
/// plus the per-channel statistics needed by the backward pass. Statistics
/// are exact sums, so the result is independent of observation order.
pub fn instance_norm(
    x: &[f64],
    n: usize,
    channels: usize,
    eps: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), GuidanceError> {
    if n < 2 {
        return Err(GuidanceError::SetTooSmall { got: n });
    }
    if x.len() != n * channels {
        return Err(GuidanceError::ShapeMismatch("instance norm input length"));
    }
    let mut mean = vec![0.0; channels];
    let mut inv_std = vec![0.0; channels];
    for c in 0..channels {
        let mut acc = ExactSum::new();
        for i in 0..n {
            acc.add(x[i * channels + c]);
        }
        mean[c] = acc.value() / n as f64;
        let mut var_acc = ExactSum::new();
        for i in 0..n {
            let d = x[i * channels + c] - mean[c];
            var_acc.add(d * d);
        }
        inv_std[c] = 1.0 / (var_acc.value() / n as f64 + eps).sqrt();
    }
    let mut out = vec![0.0; x.len()];
    for i in 0..n {
        for c in 0..channels {
            out[i * channels + c] = (x[i * channels + c] - mean[c]) * inv_std[c];
        }
    }
    Ok((out, mean, inv_std))
}

/// Gradient of instance_norm: given dL/dy, the statistics from forward, and
/// the normalized output y, produces dL/dx.
pub fn instance_norm_backward(
    dy: &[f64],
    y: &[f64],
    inv_std: &[f64],
    n: usize,
    channels: usize,
) -> Vec<f64> {
    let nf = n as f64;
    let mut dx = vec![0.0; dy.len()];
    for c in 0..channels {
        let mut sum_dy = 0.0;
        let mut sum_dy_y = 0.0;
        for i in 0..n {
            sum_dy += dy[i * channels + c];
            sum_dy_y += dy[i * channels + c] * y[i * channels + c];
        }
        let mean_dy = sum_dy / nf;
        let mean_dy_y = sum_dy_y / nf;
        for i in 0..n {
            let k = i * channels + c;
            dx[k] = inv_std[c] * (dy[k] - mean_dy - y[k] * mean_dy_y);
        }
    }
    dx
}

/// Cache of one affine + instance-norm stage.
#[derive(Debug)]
struct StageCache {
    input: Vec<f64>,      // n x in_dim
    normalized: Vec<f64>, // y after instance norm, n x h
    inv_std: Vec<f64>,
    output: Vec<f64>, // after rectifier (and skip where applicable), n x h
}

#[derive(Debug)]
pub struct ForwardCache {
    n: usize,
    entry: StageCache,
    blocks: Vec<(StageCache, StageCache)>,
    trunk: Vec<f64>, // final trunk activations, n x h
    weight_raw: Vec<f64>,
    weight_sum: f64,
    point_sig: Option<Vec<f64>>, // n x 2 sigmoid outputs
    point_scale: f64,
}

#[derive(Debug)]
pub struct Forward {
    pub weights: GuidanceDistribution,
    pub points: Option<Vec<[f64; 2]>>,
    pub cache: ForwardCache,
}

fn affine(params: &[f64], w: &Range<usize>, b: &Range<usize>, x: &[f64], n: usize, in_dim: usize, out_dim: usize) -> Vec<f64> {
    let w = &params[w.clone()];
    let b = &params[b.clone()];
    let mut z = vec![0.0; n * out_dim];
    for i in 0..n {
        let xi = &x[i * in_dim..(i + 1) * in_dim];
        let zi = &mut z[i * out_dim..(i + 1) * out_dim];
        for r in 0..out_dim {
            let row = &w[r * in_dim..(r + 1) * in_dim];
            let mut acc = b[r];
            for c in 0..in_dim {
                acc += row[c] * xi[c];
            }
            zi[r] = acc;
        }
    }
    z
}

impl GuidanceNet {
    /// Seeded initialization: every affine layer uniform in
    /// [-1/sqrt(fan_in), 1/sqrt(fan_in)], then the weights head zeroed so the
    /// initial sampling distribution is uniform.
    pub fn init(spec: GuidanceNetSpec, seed: u64) -> Self {
        let layout = spec.layout();
        let mut params = vec![0.0; layout.total];
        let mut rng = Rng::from_seed(seed);
        let mut fill = |params: &mut Vec<f64>, r: &Range<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for k in r.clone() {
                params[k] = rng.uniform_in(-bound, bound);
            }
        };
        fill(&mut params, &layout.entry_w, spec.input_dim);
        fill(&mut params, &layout.entry_b, spec.input_dim);
        let h = spec.hidden_dim;
        for b in &layout.blocks {
            fill(&mut params, &b.w1, h);
            fill(&mut params, &b.b1, h);
            fill(&mut params, &b.w2, h);
            fill(&mut params, &b.b2, h);
        }
        fill(&mut params, &layout.weight_w, h);
        fill(&mut params, &layout.weight_b, h);
        if let (Some(pw), Some(pb)) = (&layout.point_w, &layout.point_b) {
            fill(&mut params, pw, h);
            fill(&mut params, pb, h);
        }
        // Uniform initial policy: zero head -> sigmoid(0) everywhere.
        for k in layout.weight_w.clone().chain(layout.weight_b.clone()) {
            params[k] = 0.0;
        }
        GuidanceNet { spec, params }
    }

    /// One affine + instance-norm stage; the rectifier (and optional skip) is
    /// applied by the caller.
    fn stage(
        &self,
        w: &Range<usize>,
        b: &Range<usize>,
        x: Vec<f64>,
        n: usize,
        in_dim: usize,
    ) -> Result<StageCache, GuidanceError> {
        let h = self.spec.hidden_dim;
        let z = affine(&self.params, w, b, &x, n, in_dim, h);
        let (normalized, _mean, inv_std) = instance_norm(&z, n, h, INSTANCE_NORM_EPS)?;
        Ok(StageCache { input: x, normalized, inv_std, output: Vec::new() })
    }

    /// Forward pass over a set of feature vectors (row-major, n x input_dim).
    /// `anchors` and `point_scale` place the predicted points of the
    /// PointsAndWeights head: point = anchor + point_scale * relative, with
    /// relative in [-POINT_RANGE, POINT_RANGE].
    pub fn forward(
        &self,
        features: &[f64],
        anchors: Option<&[[f64; 2]]>,
        point_scale: f64,
    ) -> Result<Forward, GuidanceError> {
        let d = self.spec.input_dim;
        let h = self.spec.hidden_dim;
        if features.len() % d != 0 {
            return Err(GuidanceError::ShapeMismatch("feature length not a multiple of input_dim"));
        }
        let n = features.len() / d;
        if n < 2 {
            return Err(GuidanceError::SetTooSmall { got: n });
        }
        let layout = self.spec.layout();

        let mut entry = self.stage(&layout.entry_w, &layout.entry_b, features.to_vec(), n, d)?;
        entry.output = entry.normalized.iter().map(|&v| v.max(0.0)).collect();

        let mut blocks = Vec::with_capacity(self.spec.n_blocks);
        let mut x = entry.output.clone();
        for br in &layout.blocks {
            let mut s1 = self.stage(&br.w1, &br.b1, x, n, h)?;
            s1.output = s1.normalized.iter().map(|&v| v.max(0.0)).collect();
            let mut s2 = self.stage(&br.w2, &br.b2, s1.output.clone(), n, h)?;
            // Skip connection from the block input into the second rectifier.
            s2.output = s2
                .normalized
                .iter()
                .zip(&s1.input)
                .map(|(&v, &skip)| (v + skip).max(0.0))
                .collect();
            x = s2.output.clone();
            blocks.push((s1, s2));
        }
        let trunk = x;

        // Weights head: sigmoid, then exact sum-normalization.
        let weight_raw: Vec<f64> = (0..n)
            .map(|i| {
                let mut z = self.params[layout.weight_b.start];
                for c in 0..h {
                    z += self.params[layout.weight_w.start + c] * trunk[i * h + c];
                }
                sigmoid(z)
            })
            .collect();
        let mut sum_acc = ExactSum::new();
        for &r in &weight_raw {
            sum_acc.add(r);
        }
        let weight_sum = sum_acc.value();
        let weights = GuidanceDistribution::new(weight_raw.iter().map(|&r| r / weight_sum).collect())
            .map_err(|_| GuidanceError::ShapeMismatch("weight normalization failed"))?;

        // Points head.
        let (points, point_sig) = match self.spec.heads {
            HeadKind::WeightsOnly => (None, None),
            HeadKind::PointsAndWeights => {
                let anchors =
                    anchors.ok_or(GuidanceError::ShapeMismatch("points head needs anchors"))?;
                if anchors.len() != n {
                    return Err(GuidanceError::ShapeMismatch("anchor count differs from set size"));
                }
                let pw = layout.point_w.as_ref().unwrap();
                let pb = layout.point_b.as_ref().unwrap();
                let mut sig = vec![0.0; n * 2];
                let mut pts = Vec::with_capacity(n);
                for i in 0..n {
                    let mut p = [0.0f64; 2];
                    for r in 0..2 {
                        let mut z = self.params[pb.start + r];
                        for c in 0..h {
                            z += self.params[pw.start + r * h + c] * trunk[i * h + c];
                        }
                        let s = sigmoid(z);
                        sig[i * 2 + r] = s;
                        // Rescale (0,1) to [-POINT_RANGE, POINT_RANGE].
                        p[r] = anchors[i][r] + point_scale * (2.0 * POINT_RANGE * s - POINT_RANGE);
                    }
                    pts.push(p);
                }
                (Some(pts), Some(sig))
            }
        };

        Ok(Forward {
            weights,
            points,
            cache: ForwardCache {
                n,
                entry,
                blocks,
                trunk,
                weight_raw,
                weight_sum,
                point_sig,
                point_scale,
            },
        })
    }

    /// Reverse-mode gradients with respect to the parameters.
    ///
    /// `grad_log_weights[i]` is dL/d(log w_i) — the natural quantity for
    /// score-function estimators. `grad_points` is dL/d(point_i). When
    /// `blockade` is set and both heads are present, the weights-branch
    /// gradient stops at the trunk boundary (the points branch still flows
    /// through the trunk).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_log_weights: &[f64],
        grad_points: Option<&[[f64; 2]]>,
        blockade: bool,
    ) -> Result<Vec<f64>, GuidanceError> {
        let n = cache.n;
        let h = self.spec.hidden_dim;
        let d = self.spec.input_dim;
        if grad_log_weights.len() != n {
            return Err(GuidanceError::ShapeMismatch("grad_log_weights length"));
        }
        let layout = self.spec.layout();
        let mut grads = vec![0.0; layout.total];
        let mut d_trunk = vec![0.0; n * h];

        // Weights head: w_i = r_i / S, so dL/dr_j = g_j/r_j - (sum g)/S.
        let g_total: f64 = grad_log_weights.iter().sum();
        let mut dz_w = vec![0.0; n];
        for i in 0..n {
            let r = cache.weight_raw[i];
            let dr = grad_log_weights[i] / r - g_total / cache.weight_sum;
            dz_w[i] = dr * r * (1.0 - r);
        }
        for i in 0..n {
            grads[layout.weight_b.start] += dz_w[i];
            for c in 0..h {
                grads[layout.weight_w.start + c] += dz_w[i] * cache.trunk[i * h + c];
            }
        }
        let block_weights_branch = blockade && self.spec.heads == HeadKind::PointsAndWeights;
        if !block_weights_branch {
            for i in 0..n {
                for c in 0..h {
                    d_trunk[i * h + c] += dz_w[i] * self.params[layout.weight_w.start + c];
                }
            }
        }

        // Points head.
        if let Some(gp) = grad_points {
            let sig = cache
                .point_sig
                .as_ref()
                .ok_or(GuidanceError::ShapeMismatch("no points head in forward cache"))?;
            if gp.len() != n {
                return Err(GuidanceError::ShapeMismatch("grad_points length"));
            }
            let pw = layout.point_w.as_ref().unwrap();
            let pb = layout.point_b.as_ref().unwrap();
            for i in 0..n {
                for r in 0..2 {
                    let s = sig[i * 2 + r];
                    let dz = gp[i][r] * cache.point_scale * 2.0 * POINT_RANGE * s * (1.0 - s);
                    grads[pb.start + r] += dz;
                    for c in 0..h {
                        grads[pw.start + r * h + c] += dz * cache.trunk[i * h + c];
                        d_trunk[i * h + c] += dz * self.params[pw.start + r * h + c];
                    }
                }
            }
        }

        // Trunk, blocks in reverse.
        let mut dx = d_trunk;
        for (br, (s1, s2)) in layout.blocks.iter().zip(&cache.blocks).rev() {
            // Second stage: relu over (normalized + skip).
            let mut dy2 = dx.clone();
            for (g, &out) in dy2.iter_mut().zip(&s2.output) {
                if out <= 0.0 {
                    *g = 0.0;
                }
            }
            let d_skip = dy2.clone(); // gradient into the block input via skip
            let dz2 = instance_norm_backward(&dy2, &s2.normalized, &s2.inv_std, n, h);
            let dy1 = self.affine_backward(&br.w2, &br.b2, &s2.input, &dz2, &mut grads, n, h, h);

            // First stage: plain relu.
            let mut dy1 = dy1;
            for (g, &out) in dy1.iter_mut().zip(&s1.output) {
                if out <= 0.0 {
                    *g = 0.0;
                }
            }
            let dz1 = instance_norm_backward(&dy1, &s1.normalized, &s1.inv_std, n, h);
            let mut d_in = self.affine_backward(&br.w1, &br.b1, &s1.input, &dz1, &mut grads, n, h, h);
            for (a, b) in d_in.iter_mut().zip(&d_skip) {
                *a += b;
            }
            dx = d_in;
        }

        // Entry stage.
        let mut dy = dx;
        for (g, &out) in dy.iter_mut().zip(&cache.entry.output) {
            if out <= 0.0 {
                *g = 0.0;
            }
        }
        let dz = instance_norm_backward(&dy, &cache.entry.normalized, &cache.entry.inv_std, n, h);
        let _ = self.affine_backward(&layout.entry_w, &layout.entry_b, &cache.entry.input, &dz, &mut grads, n, d, h);

        Ok(grads)
    }

    #[allow(clippy::too_many_arguments)]
    fn affine_backward(
        &self,
        w: &Range<usize>,
        b: &Range<usize>,
        input: &[f64],
        dz: &[f64],
        grads: &mut [f64],
        n: usize,
        in_dim: usize,
        out_dim: usize,
    ) -> Vec<f64> {
        let mut dx = vec![0.0; n * in_dim];
        for i in 0..n {
            let xi = &input[i * in_dim..(i + 1) * in_dim];
            let dzi = &dz[i * out_dim..(i + 1) * out_dim];
            for r in 0..out_dim {
                let g = dzi[r];
                grads[b.start + r] += g;
                let wrow = &self.params[w.start + r * in_dim..w.start + (r + 1) * in_dim];
                let grow = &mut grads[w.start + r * in_dim..w.start + (r + 1) * in_dim];
                for c in 0..in_dim {
                    grow[c] += g * xi[c];
                    dx[i * in_dim + c] += g * wrow[c];
                }
            }
        }
        dx
    }

    /// Versioned binary serialization: magic, format version, spec fields,
    /// parameter count, raw little-endian doubles, FNV-1a checksum.
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * 4 + 1 + 8 + self.params.len() * 8 + 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.spec.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.spec.hidden_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.spec.n_blocks as u32).to_le_bytes());
        out.push(match self.spec.heads {
            HeadKind::WeightsOnly => 0,
            HeadKind::PointsAndWeights => 1,
        });
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out.extend_from_slice(&fnv1a(&out).to_le_bytes());
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, GuidanceError> {
        let min_len = 8 + 4 + 12 + 1 + 8 + 8;
        if bytes.len() < min_len {
            return Err(GuidanceError::CorruptModel("file shorter than the fixed header"));
        }
        if &bytes[0..8] != MAGIC {
            return Err(GuidanceError::CorruptModel("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(GuidanceError::VersionMismatch { found: version });
        }
        let (body, check) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(check.try_into().unwrap());
        if fnv1a(body) != stored {
            return Err(GuidanceError::CorruptModel("checksum mismatch"));
        }
        let input_dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let hidden_dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        let n_blocks = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;
        let heads = match bytes[24] {
            0 => HeadKind::WeightsOnly,
            1 => HeadKind::PointsAndWeights,
            _ => return Err(GuidanceError::CorruptModel("unknown head kind")),
        };
        let count = u64::from_le_bytes(bytes[25..33].try_into().unwrap()) as usize;
        let spec = GuidanceNetSpec { input_dim, hidden_dim, n_blocks, heads };
        if count != spec.param_count() {
            return Err(GuidanceError::CorruptModel("parameter count differs from the layout"));
        }
        let expected_len = 33 + count * 8 + 8;
        if bytes.len() != expected_len {
            return Err(GuidanceError::CorruptModel("length differs from the header"));
        }
        let mut params = Vec::with_capacity(count);
        for k in 0..count {
            let at = 33 + k * 8;
            let v = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
            if !v.is_finite() {
                return Err(GuidanceError::CorruptModel("non-finite parameter"));
            }
            params.push(v);
        }
        Ok(GuidanceNet { spec, params })
    }

    /// Parameter index range of the trunk (entry + blocks) — everything below
    /// the heads. Used to verify the gradient blockade.
    pub fn trunk_param_range(&self) -> Range<usize> {
        0..self.spec.layout().weight_w.start
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
