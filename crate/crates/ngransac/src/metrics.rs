//! Task-quality metrics and the CSV record format used by the benchmark.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{epipolar_error, Correspondence, Model3x3};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("estimate has no inliers at the given threshold")]
    NoInliers,
    #[error("bin width {bin_width} does not divide threshold {max_threshold}")]
    BinMismatch { max_threshold: f64, bin_width: f64 },
    #[error("csv parse failure at line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

/// Area under the cumulative error curve, via the histogram protocol: errors
/// are binned into `[0,b), [b,2b), …` up to `max_threshold`, and the AUC is
/// the mean of the per-bin cumulative fractions. Errors at or above the
/// threshold reduce every fraction but occupy no bin.
pub fn auc(errors: &[f64], max_threshold: f64, bin_width: f64) -> Result<f64, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    assert!(max_threshold > 0.0 && bin_width > 0.0, "thresholds must be positive");
    let ratio = max_threshold / bin_width;
    let bins = ratio.round() as usize;
    if bins == 0 || (ratio - bins as f64).abs() > 1e-9 {
        return Err(MetricsError::BinMismatch { max_threshold, bin_width });
    }
    let mut counts = vec![0usize; bins];
    for &e in errors {
        // NaN fails the comparison and lands beyond the last bin.
        if e >= 0.0 && e < max_threshold {
            let mut idx = (e / bin_width) as usize;
            if idx >= bins {
                idx = bins - 1; // guards e just under max_threshold rounding up
            }
            counts[idx] += 1;
        }
    }
    let total = errors.len() as f64;
    let mut cumulative = 0usize;
    let mut acc = 0.0;
    for &c in &counts {
        cumulative += c;
        acc += cumulative as f64 / total;
    }
    Ok(acc / bins as f64)
}

fn inlier_set(model: &Model3x3, corrs: &[Correspondence], tau: f64) -> Vec<usize> {
    corrs
        .iter()
        .enumerate()
        .filter(|(_, c)| matches!(epipolar_error(c, model), Ok(e) if e < tau))
        .map(|(i, _)| i)
        .collect()
}

pub(crate) fn fscore_from_counts(both: usize, est: usize, gt: usize) -> f64 {
    if est == 0 || gt == 0 {
        return 0.0;
    }
    let precision = both as f64 / est as f64;
    let recall = both as f64 / gt as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// F-score of the estimated model's inlier set against the reference model's
/// inlier set, both taken at threshold `tau`; true positives are inliers of
/// both models. Returns 0 when either set is empty.
pub fn fscore_inliers(
    est_model: &Model3x3,
    gt_model: &Model3x3,
    corrs: &[Correspondence],
    tau: f64,
) -> f64 {
    assert!(tau > 0.0, "inlier threshold must be positive");
    let est = inlier_set(est_model, corrs, tau);
    let gt = inlier_set(gt_model, corrs, tau);
    let gt_mask: Vec<bool> = {
        let mut mask = vec![false; corrs.len()];
        for &i in &gt {
            mask[i] = true;
        }
        mask
    };
    let both = est.iter().filter(|&&i| gt_mask[i]).count();
    fscore_from_counts(both, est.len(), gt.len())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpipolarStats {
    pub mean: f64,
    pub median: f64,
}

/// Mean and median epipolar error, against the reference model, of the
/// correspondences the estimated model claims as inliers at `tau`.
pub fn epipolar_stats(
    est_model: &Model3x3,
    gt_model: &Model3x3,
    corrs: &[Correspondence],
    tau: f64,
) -> Result<EpipolarStats, MetricsError> {
    assert!(tau > 0.0, "inlier threshold must be positive");
    let inliers = inlier_set(est_model, corrs, tau);
    if inliers.is_empty() {
        return Err(MetricsError::NoInliers);
    }
    let mut errors: Vec<f64> = inliers
        .iter()
        .map(|&i| epipolar_error(&corrs[i], gt_model).unwrap_or(f64::INFINITY))
        .collect();
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    errors.sort_by(|a, b| a.partial_cmp(b).expect("epipolar errors are comparable"));
    let n = errors.len();
    let median = if n % 2 == 1 { errors[n / 2] } else { (errors[n / 2 - 1] + errors[n / 2]) / 2.0 };
    Ok(EpipolarStats { mean, median })
}

/// Rounds to 9 significant decimal digits — the benchmark CSV precision — so
/// that a record survives a serialize/parse round trip bitwise.
pub fn quantize9(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    format!("{:.8e}", x).parse().expect("formatted float reparses")
}

fn fmt9(x: f64) -> String {
    format!("{:.8e}", x)
}

/// One benchmark cell: a (task, method, budget, seed) combination and its
/// quality metrics. Float fields are quantized to 9 significant digits at
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub task: String,
    pub method: String,
    pub m: usize,
    pub seed: u64,
    pub angular_error_deg: f64,
    pub pct_inliers: f64,
    pub f_score: f64,
    pub mean_epi: f64,
    pub median_epi: f64,
    pub wall_ms: f64,
}

impl MetricRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        task: impl Into<String>,
        method: impl Into<String>,
        m: usize,
        seed: u64,
        angular_error_deg: f64,
        pct_inliers: f64,
        f_score: f64,
        mean_epi: f64,
        median_epi: f64,
        wall_ms: f64,
    ) -> Self {
        let record = MetricRecord {
            task: task.into(),
            method: method.into(),
            m,
            seed,
            angular_error_deg: quantize9(angular_error_deg),
            pct_inliers: quantize9(pct_inliers),
            f_score: quantize9(f_score),
            mean_epi: quantize9(mean_epi),
            median_epi: quantize9(median_epi),
            wall_ms: quantize9(wall_ms),
        };
        for (name, v) in [
            ("angular_error_deg", record.angular_error_deg),
            ("pct_inliers", record.pct_inliers),
            ("f_score", record.f_score),
            ("mean_epi", record.mean_epi),
            ("median_epi", record.median_epi),
            ("wall_ms", record.wall_ms),
        ] {
            assert!(v.is_finite() && v >= 0.0, "{name} must be finite and non-negative, got {v}");
        }
        record
    }

    pub const CSV_HEADER: &'static str =
        "task,method,m,seed,angular_error_deg,pct_inliers,f_score,mean_epi,median_epi,wall_ms";

    pub fn to_csv_row(&self) -> String {
        assert!(
            !self.task.contains(',') && !self.method.contains(','),
            "identifiers must not contain commas"
        );
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.task,
            self.method,
            self.m,
            self.seed,
            fmt9(self.angular_error_deg),
            fmt9(self.pct_inliers),
            fmt9(self.f_score),
            fmt9(self.mean_epi),
            fmt9(self.median_epi),
            fmt9(self.wall_ms),
        )
    }

    pub fn from_csv_row(row: &str, line: usize) -> Result<Self, MetricsError> {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 10 {
            return Err(MetricsError::Csv {
                line,
                reason: format!("expected 10 fields, got {}", fields.len()),
            });
        }
        let num = |i: usize| -> Result<f64, MetricsError> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| MetricsError::Csv { line, reason: format!("field {i}: {e}") })
        };
        Ok(MetricRecord {
            task: fields[0].to_string(),
            method: fields[1].to_string(),
            m: fields[2]
                .parse()
                .map_err(|e| MetricsError::Csv { line, reason: format!("field 2: {e}") })?,
            seed: fields[3]
                .parse()
                .map_err(|e| MetricsError::Csv { line, reason: format!("field 3: {e}") })?,
            angular_error_deg: num(4)?,
            pct_inliers: num(5)?,
            f_score: num(6)?,
            mean_epi: num(7)?,
            median_epi: num(8)?,
            wall_ms: num(9)?,
        })
    }
}

/// Serializes records under the fixed header; `comments` lines are embedded
/// as leading `#` lines (used to echo the effective configuration).
pub fn write_csv(records: &[MetricRecord], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    out.push_str(MetricRecord::CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

/// Parses CSV produced by [`write_csv`], skipping `#` comments and the header.
pub fn read_csv(text: &str) -> Result<Vec<MetricRecord>, MetricsError> {
    let mut records = Vec::new();
    let mut seen_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_header {
            if line != MetricRecord::CSV_HEADER {
                return Err(MetricsError::Csv {
                    line: idx + 1,
                    reason: "missing or unrecognized header row".into(),
                });
            }
            seen_header = true;
            continue;
        }
        records.push(MetricRecord::from_csv_row(line, idx + 1)?);
    }
    if !seen_header {
        return Err(MetricsError::Csv { line: 0, reason: "missing header row".into() });
    }
    Ok(records)
}
