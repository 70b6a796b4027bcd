//! Train a guidance network for epipolar sampling: a KL phase pulls the
//! predicted weights toward residual-based targets, then score-function
//! gradients of the expected pose loss refine them. The trained weights are
//! serialized, restored, and compared against uniform sampling.

use ngransac::estimator::{ng_ransac, EpipolarFittingTask, EpipolarSolver, EstimateConfig};
use ngransac::geometry::{angular_pose_error, decompose_essential, Correspondence, ModelKind};
use ngransac::guidance::{GuidanceNet, GuidanceNetSpec, HeadKind};
use ngransac::rng::mix_seed;
use ngransac::sampling::GuidanceDistribution;
use ngransac::synthdata::{gen_epipolar_scene, EpipolarScene, EpipolarSceneConfig, SideInfo};
use ngransac::training::{epipolar_features, train_loop, Objective, TrainConfig, TrainExample};

fn scene(seed: u64) -> EpipolarScene {
    let mut config = EpipolarSceneConfig::new(400, 0.85, 3e-4, seed);
    config.side_info = SideInfo::Informative { separation: 0.2 };
    gen_epipolar_scene(&config)
}

fn success(corrs: &[Correspondence], dist: &GuidanceDistribution, m: usize, seed: u64, scene: &EpipolarScene) -> bool {
    let task =
        EpipolarFittingTask::new(corrs.to_vec(), ModelKind::Essential, EpipolarSolver::EightPoint);
    let Ok(report) = ng_ransac(&task, dist, &EstimateConfig::new(m, 3e-5, seed)) else {
        return false;
    };
    let supports: Vec<Correspondence> = report.inlier_indices.iter().map(|&i| corrs[i]).collect();
    match decompose_essential(&report.model, &supports) {
        Ok(pose) => angular_pose_error(&pose, &scene.gt_pose) < 5.0,
        Err(_) => false,
    }
}

fn main() {
    let dataset: Vec<TrainExample> = (0..32)
        .map(|i| TrainExample::from_epipolar_scene(&scene(mix_seed(&[31, i])), ModelKind::Essential))
        .collect();

    // Five input channels: the four coordinates plus the ratio side channel.
    let mut net = GuidanceNet::init(GuidanceNetSpec::new(5, 16, 2, HeadKind::WeightsOnly), 3);
    let mut config = TrainConfig::new(Objective::PoseAngular);
    config.k = 2;
    config.m = 16;
    config.learning_rate = 1e-2;
    config.batch_size = 8;
    config.kl_iterations = 200;
    config.iterations = 30;
    config.inlier_threshold = 3e-5;
    config.seed = 4;
    let outcome = train_loop(&dataset, &mut net, &config, |record| {
        if record.iteration % 50 == 0 {
            match (record.kl, record.mean_loss) {
                (Some(kl), _) => println!("iter {:3}  kl {kl:.4}", record.iteration),
                (None, Some(loss)) => println!("iter {:3}  loss {loss:.3}", record.iteration),
                _ => {}
            }
        }
    })
    .unwrap();
    println!("trained {} iterations, {} skipped examples", outcome.records.len(), outcome.skipped_examples);

    // Round-trip through the on-disk format before evaluating.
    let net = GuidanceNet::deserialize(&net.serialize()).unwrap();

    let holdout: Vec<EpipolarScene> = (0..60).map(|i| scene(mix_seed(&[32, i]))).collect();
    let mut guided = 0;
    let mut uniform = 0;
    for (i, s) in holdout.iter().enumerate() {
        let corrs = &s.correspondences;
        let features = epipolar_features(corrs, net.spec.input_dim).unwrap();
        let weights = net.forward(&features, None, 1.0).unwrap().weights;
        guided += success(corrs, &weights, 10, mix_seed(&[33, i as u64]), s) as usize;
        let flat = GuidanceDistribution::uniform(corrs.len());
        uniform += success(corrs, &flat, 10, mix_seed(&[34, i as u64]), s) as usize;
    }
    println!(
        "held-out pose success at M=10, 85% outliers: guided {guided}/{}  uniform {uniform}/{}",
        holdout.len(),
        holdout.len()
    );
}
