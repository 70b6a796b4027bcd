//! Benchmark sweeps over estimation methods, hypothesis budgets, outlier
//! rates, and scene seeds. Cells may run concurrently, but outcomes are
//! emitted through a reorder buffer in grid order, so repeated runs of the
//! same configuration produce identical output apart from wall-clock timings.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::Instant;

use crate::estimator::{ng_ransac, EpipolarFittingTask, EpipolarSolver, EstimateConfig};
use crate::geometry::{angular_pose_error, decompose_essential, Correspondence, ModelKind};
use crate::guidance::GuidanceNet;
use crate::metrics::{epipolar_stats, fscore_inliers, MetricRecord};
use crate::rng::mix_seed;
use crate::sampling::GuidanceDistribution;
use crate::synthdata::{gen_epipolar_scene, EpipolarSceneConfig, SideInfo};
use crate::training::epipolar_features;

/// How a method weights correspondences before sampling.
#[derive(Clone)]
pub enum MethodGuidance {
    /// Equal weight on every correspondence.
    Uniform,
    /// Weight proportional to `1 - ratio`; requires ratio side information.
    RatioHeuristic,
    /// A guidance network scoring each correspondence.
    Net(Arc<GuidanceNet>),
}

#[derive(Clone)]
pub struct MethodSpec {
    /// Identifier written into the `method` CSV column; no commas.
    pub id: String,
    pub guidance: MethodGuidance,
}

impl MethodSpec {
    pub fn uniform() -> Self {
        MethodSpec { id: "uniform".into(), guidance: MethodGuidance::Uniform }
    }

    pub fn ratio_heuristic() -> Self {
        MethodSpec { id: "ratio".into(), guidance: MethodGuidance::RatioHeuristic }
    }

    pub fn net(id: impl Into<String>, net: Arc<GuidanceNet>) -> Self {
        MethodSpec { id: id.into(), guidance: MethodGuidance::Net(net) }
    }
}

#[derive(Clone)]
pub struct BenchConfig {
    pub methods: Vec<MethodSpec>,
    /// Hypothesis budgets (pool sizes) to sweep.
    pub budgets: Vec<usize>,
    pub outlier_rates: Vec<f64>,
    /// Scene seeds; a scene is shared by every method and budget at a given
    /// `(outlier rate, seed)` so the comparison is paired.
    pub seeds: Vec<u64>,
    pub scene_n: usize,
    pub noise_std: f64,
    pub side_info: SideInfo,
    pub inlier_threshold: f64,
    /// Worker threads; cells never share mutable state.
    pub jobs: usize,
    /// Stirred into every derived scene and estimator seed.
    pub base_seed: u64,
}

impl BenchConfig {
    pub fn new(
        methods: Vec<MethodSpec>,
        budgets: Vec<usize>,
        outlier_rates: Vec<f64>,
        seeds: Vec<u64>,
    ) -> Self {
        BenchConfig {
            methods,
            budgets,
            outlier_rates,
            seeds,
            scene_n: 500,
            noise_std: 1e-3,
            side_info: SideInfo::Informative { separation: 0.2 },
            inlier_threshold: 3e-3,
            jobs: 1,
            base_seed: 0,
        }
    }
}

/// Identifies one grid cell in reports and error lines.
#[derive(Debug, Clone, PartialEq)]
pub struct CellKey {
    pub task: String,
    pub method: String,
    pub m: usize,
    pub outlier_rate: f64,
    pub seed: u64,
}

/// One finished cell: either a metric row or a recorded failure. Failures do
/// not abort the sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum BenchOutcome {
    Row(MetricRecord),
    Failed { key: CellKey, message: String },
}

impl BenchOutcome {
    /// The line this outcome contributes to a metrics CSV: a data row, or a
    /// `#`-prefixed comment that CSV readers skip.
    pub fn csv_line(&self) -> String {
        match self {
            BenchOutcome::Row(record) => record.to_csv_row(),
            BenchOutcome::Failed { key, message } => format!(
                "# error task={} method={} m={} seed={}: {}",
                key.task, key.method, key.m, key.seed, message
            ),
        }
    }
}

struct Cell {
    method_index: usize,
    m: usize,
    rate_index: usize,
    seed: u64,
}

fn task_id(outlier_rate: f64) -> String {
    format!("epipolar-o{outlier_rate}")
}

/// Normalized sampling weights for a method over a scene's correspondences.
pub fn method_weights(
    guidance: &MethodGuidance,
    corrs: &[Correspondence],
) -> Result<GuidanceDistribution, String> {
    match guidance {
        MethodGuidance::Uniform => Ok(GuidanceDistribution::uniform(corrs.len())),
        MethodGuidance::RatioHeuristic => {
            let mut weights = Vec::with_capacity(corrs.len());
            for c in corrs {
                let r = c.ratio.ok_or("ratio heuristic needs ratio side information")?;
                weights.push((1.0 - r).max(1e-9));
            }
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            GuidanceDistribution::new(weights).map_err(|e| e.to_string())
        }
        MethodGuidance::Net(net) => {
            let features =
                epipolar_features(corrs, net.spec.input_dim).map_err(|e| e.to_string())?;
            let forward = net.forward(&features, None, 1.0).map_err(|e| e.to_string())?;
            Ok(forward.weights)
        }
    }
}

fn run_cell(config: &BenchConfig, cell: &Cell) -> BenchOutcome {
    let method = &config.methods[cell.method_index];
    let rate = config.outlier_rates[cell.rate_index];
    let key = CellKey {
        task: task_id(rate),
        method: method.id.clone(),
        m: cell.m,
        outlier_rate: rate,
        seed: cell.seed,
    };
    let start = Instant::now();
    match run_cell_inner(config, cell, &key) {
        Ok(record) => BenchOutcome::Row(record),
        Err(message) => {
            let _ = start.elapsed();
            BenchOutcome::Failed { key, message }
        }
    }
}

fn run_cell_inner(
    config: &BenchConfig,
    cell: &Cell,
    key: &CellKey,
) -> Result<MetricRecord, String> {
    let start = Instant::now();
    // The scene depends only on (rate, seed): all methods and budgets see the
    // same data, so rows within a (rate, seed) group are paired comparisons.
    let scene_seed = mix_seed(&[config.base_seed, 0xbe9c, cell.rate_index as u64, cell.seed]);
    let mut scene_config =
        EpipolarSceneConfig::new(config.scene_n, key.outlier_rate, config.noise_std, scene_seed);
    scene_config.side_info = config.side_info;
    let scene = gen_epipolar_scene(&scene_config);
    let corrs = &scene.correspondences;

    let dist = method_weights(&config.methods[cell.method_index].guidance, corrs)?;
    let task =
        EpipolarFittingTask::new(corrs.clone(), ModelKind::Essential, EpipolarSolver::EightPoint);
    let estimate_seed = mix_seed(&[
        config.base_seed,
        0xce11,
        cell.method_index as u64,
        cell.m as u64,
        cell.rate_index as u64,
        cell.seed,
    ]);
    let estimate_config = EstimateConfig::new(cell.m, config.inlier_threshold, estimate_seed);
    let report = ng_ransac(&task, &dist, &estimate_config).map_err(|e| e.to_string())?;

    let supports: Vec<Correspondence> =
        report.inlier_indices.iter().map(|&i| corrs[i]).collect();
    let pose = decompose_essential(&report.model, &supports).map_err(|e| e.to_string())?;
    let angular = angular_pose_error(&pose, &scene.gt_pose);
    let pct_inliers = 100.0 * report.inlier_indices.len() as f64 / corrs.len() as f64;
    let f_score =
        fscore_inliers(&report.model, &scene.gt_essential, corrs, config.inlier_threshold);
    let stats = epipolar_stats(&report.model, &scene.gt_essential, corrs, config.inlier_threshold)
        .map_err(|e| e.to_string())?;

    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(MetricRecord::new(
        key.task.clone(),
        key.method.clone(),
        cell.m,
        cell.seed,
        angular,
        pct_inliers,
        f_score,
        stats.mean,
        stats.median,
        wall_ms,
    ))
}

/// Runs the full grid. `emit` receives every outcome — rows and failures — in
/// deterministic grid order (methods, then budgets, then rates, then seeds),
/// as soon as each is ready, so callers can append to a file incrementally.
/// Returns the successful rows in that same order.
pub fn run_benchmark(
    config: &BenchConfig,
    mut emit: impl FnMut(&BenchOutcome),
) -> Vec<MetricRecord> {
    assert!(!config.methods.is_empty(), "no methods to benchmark");
    assert!(!config.budgets.is_empty(), "no hypothesis budgets to benchmark");
    assert!(!config.outlier_rates.is_empty(), "no outlier rates to benchmark");
    assert!(!config.seeds.is_empty(), "no seeds to benchmark");

    let mut cells = Vec::new();
    for method_index in 0..config.methods.len() {
        for &m in &config.budgets {
            for rate_index in 0..config.outlier_rates.len() {
                for &seed in &config.seeds {
                    cells.push(Cell { method_index, m, rate_index, seed });
                }
            }
        }
    }

    let jobs = config.jobs.max(1).min(cells.len());
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, BenchOutcome)>();

    let mut rows = Vec::new();
    thread::scope(|scope| {
        for _ in 0..jobs {
            let tx = tx.clone();
            let cells = &cells;
            let next = &next;
            scope.spawn(move || loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= cells.len() {
                    break;
                }
                let outcome = run_cell(config, &cells[index]);
                if tx.send((index, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // Reorder buffer: outcomes finish in any order but are emitted in
        // grid order, which keeps the output stream deterministic.
        let mut pending = BTreeMap::new();
        let mut next_emit = 0;
        for (index, outcome) in rx {
            pending.insert(index, outcome);
            while let Some(outcome) = pending.remove(&next_emit) {
                emit(&outcome);
                if let BenchOutcome::Row(record) = outcome {
                    rows.push(record);
                }
                next_emit += 1;
            }
        }
        assert!(pending.is_empty(), "reorder buffer drained");
    });
    rows
}
