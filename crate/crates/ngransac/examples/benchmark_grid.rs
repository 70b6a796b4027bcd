//! Run the benchmark grid programmatically: methods x budgets x outlier
//! rates x seeds, cells executed by a worker pool but emitted in grid order,
//! failed cells reported as CSV comments.

use ngransac::bench::{BenchConfig, MethodSpec};
use ngransac::metrics::MetricRecord;
use ngransac::run_benchmark;

fn main() {
    let mut config = BenchConfig::new(
        vec![MethodSpec::uniform(), MethodSpec::ratio_heuristic()],
        vec![16, 64],
        vec![0.5, 0.7],
        (0..4).collect(),
    );
    config.scene_n = 200;
    config.noise_std = 3e-4;
    config.inlier_threshold = 3e-5;
    config.jobs = 4;

    println!("{}", MetricRecord::CSV_HEADER);
    let rows = run_benchmark(&config, |outcome| println!("{}", outcome.csv_line()));

    let mean_f = |method: &str| {
        let (sum, count) = rows
            .iter()
            .filter(|r| r.method == method)
            .fold((0.0, 0usize), |(s, c), r| (s + r.f_score, c + 1));
        sum / count.max(1) as f64
    };
    println!("# mean f-score: uniform {:.3}, ratio {:.3}", mean_f("uniform"), mean_f("ratio"));
}
