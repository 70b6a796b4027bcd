//! Joint training on the raster line task: the network predicts one point
//! and one sampling weight per patch; pools of two-point hypotheses are
//! scored softly, the selection expectation is differentiated exactly, and
//! the sampling path contributes score-function gradients.

use ngransac::estimator::{ng_dsac_estimate, EstimateConfig};
use ngransac::guidance::{GuidanceNet, GuidanceNetSpec, HeadKind};
use ngransac::rng::mix_seed;
use ngransac::synthdata::{gen_line_scene, LineScene, LineSceneConfig, LINE_FEATURES_PER_PATCH};
use ngransac::training::{line_distance, train_loop, LineExample, Objective, TrainConfig, TrainExample};

fn scene(seed: u64) -> LineScene {
    let mut config = LineSceneConfig::new(seed);
    config.point_noise = 0.01;
    config.clutter_fraction = 0.3;
    gen_line_scene(&config)
}

fn main() {
    let dataset: Vec<TrainExample> = (0..24)
        .map(|i| {
            let s = scene(mix_seed(&[61, i]));
            TrainExample::Line(LineExample {
                features: s.features,
                anchors: s.anchors,
                gt_line: Some(s.gt_line),
            })
        })
        .collect();

    let spec = GuidanceNetSpec::new(LINE_FEATURES_PER_PATCH, 16, 2, HeadKind::PointsAndWeights);
    let mut net = GuidanceNet::init(spec, 5);
    let mut config = TrainConfig::new(Objective::LineDistance);
    config.k = 2;
    config.m = 8;
    config.learning_rate = 5e-3;
    config.batch_size = 8;
    config.iterations = 300;
    config.seed = 6;
    train_loop(&dataset, &mut net, &config, |record| {
        if record.iteration % 75 == 0 {
            if let Some(loss) = record.mean_loss {
                println!("iter {:3}  expected line distance {loss:.4}", record.iteration);
            }
        }
    })
    .unwrap();

    let mut before_sum = 0.0;
    let mut after_sum = 0.0;
    let holdout = 20;
    for i in 0..holdout {
        let s = scene(mix_seed(&[62, i]));
        let cfg = EstimateConfig::new(8, config.soft.tau, mix_seed(&[63, i]));
        let fresh = GuidanceNet::init(spec, 5);
        for (net, acc) in [(&fresh, &mut before_sum), (&net, &mut after_sum)] {
            let (report, _tape) =
                ng_dsac_estimate(&s.features, &s.anchors, config.point_scale, net, config.soft, &cfg)
                    .unwrap();
            *acc += line_distance(&report.model, &s.gt_line);
        }
    }
    println!("mean held-out line distance over {holdout} scenes:");
    println!("  untrained: {:.4}", before_sum / holdout as f64);
    println!("  trained:   {:.4}", after_sum / holdout as f64);
}
