//! Self-supervised guidance training: the negated inlier count of the final
//! model is the loss, so no ground-truth labels, poses, or reference models
//! are consumed anywhere — the examples are stripped before training.

use ngransac::estimator::{ng_ransac, EpipolarFittingTask, EpipolarSolver, EstimateConfig};
use ngransac::geometry::ModelKind;
use ngransac::guidance::{GuidanceNet, GuidanceNetSpec, HeadKind};
use ngransac::rng::mix_seed;
use ngransac::synthdata::{gen_epipolar_scene, EpipolarScene, EpipolarSceneConfig, SideInfo};
use ngransac::training::{
    epipolar_features, train_loop, EpipolarExample, Objective, TrainConfig, TrainExample,
};

fn scene(seed: u64) -> EpipolarScene {
    let mut config = EpipolarSceneConfig::new(200, 0.6, 1e-3, seed);
    config.side_info = SideInfo::Informative { separation: 0.2 };
    gen_epipolar_scene(&config)
}

fn mean_inliers(net: &GuidanceNet, scenes: &[EpipolarScene], tag: u64) -> f64 {
    let mut total = 0usize;
    for (i, s) in scenes.iter().enumerate() {
        let corrs = &s.correspondences;
        let features = epipolar_features(corrs, net.spec.input_dim).unwrap();
        let weights = net.forward(&features, None, 1.0).unwrap().weights;
        let task = EpipolarFittingTask::new(
            corrs.clone(),
            ModelKind::Essential,
            EpipolarSolver::EightPoint,
        );
        let cfg = EstimateConfig::new(16, 1e-3, mix_seed(&[tag, i as u64]));
        if let Ok(report) = ng_ransac(&task, &weights, &cfg) {
            total += report.inlier_indices.len();
        }
    }
    total as f64 / scenes.len() as f64
}

fn main() {
    let dataset: Vec<TrainExample> = (0..32)
        .map(|i| {
            let mut corrs = scene(mix_seed(&[51, i])).correspondences;
            for c in &mut corrs {
                c.gt_inlier = None; // nothing downstream can peek at labels
            }
            TrainExample::Epipolar(EpipolarExample {
                correspondences: corrs,
                kind: ModelKind::Essential,
                gt_pose: None,
                gt_model: None,
            })
        })
        .collect();

    let untrained = GuidanceNet::init(GuidanceNetSpec::new(5, 16, 2, HeadKind::WeightsOnly), 9);
    let mut net = untrained.clone();
    let mut config = TrainConfig::new(Objective::InlierCount);
    config.k = 2;
    config.m = 16;
    config.learning_rate = 3e-3;
    config.batch_size = 8;
    config.iterations = 120;
    config.seed = 10;
    train_loop(&dataset, &mut net, &config, |_| {}).unwrap();

    let holdout: Vec<EpipolarScene> = (0..60).map(|i| scene(mix_seed(&[52, i]))).collect();
    let before = mean_inliers(&untrained, &holdout, 53);
    let after = mean_inliers(&net, &holdout, 53);
    println!("mean final inlier count over {} held-out scenes:", holdout.len());
    println!("  untrained (uniform weights): {before:.1}");
    println!("  self-supervised:             {after:.1}  ({:+.0}%)", 100.0 * (after / before - 1.0));
}
