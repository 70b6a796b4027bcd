//! The seven-point solver interpolates seven correspondences exactly and
//! returns one to three fundamental-matrix candidates — the real roots of a
//! cubic. Scoring against the remaining data picks the physical one.

use ngransac::geometry::epipolar_error;
use ngransac::solvers::solve_fundamental_7pt;
use ngransac::synthdata::{gen_epipolar_scene, EpipolarSceneConfig};

fn main() {
    let scene = gen_epipolar_scene(&EpipolarSceneConfig::new(64, 0.0, 0.0, 41));
    let corrs = &scene.correspondences;
    let candidates = solve_fundamental_7pt(&corrs[..7]).unwrap();
    println!("{} candidate(s) from the first seven correspondences", candidates.len());

    for (i, model) in candidates.iter().enumerate() {
        let max_sample_residual = corrs[..7]
            .iter()
            .map(|c| epipolar_error(c, model).unwrap())
            .fold(0.0f64, f64::max);
        let consistent = corrs
            .iter()
            .filter(|c| epipolar_error(c, model).unwrap() < 1e-12)
            .count();
        println!(
            "candidate {i}: max residual on the sample {max_sample_residual:.2e}, \
             consistent with {consistent}/{} of the scene",
            corrs.len()
        );
    }
}
