//! Robust model fitting with learned hypothesis sampling.
//!
//! This crate implements the classic RANSAC loop together with its differentiable
//! and neurally-guided relatives (DSAC, NG-RANSAC, NG-DSAC) for two concrete
//! estimation problems:
//!
//! * 2D line fitting from noisy point sets (the didactic task), and
//! * epipolar geometry — fundamental / essential matrices from image
//!   correspondences, including essential-matrix decomposition into a relative
//!   camera pose.
//!
//! Beyond inference, the crate ships the full training machinery for learning
//! a sampling distribution over observations: a small permutation-equivariant
//! network with a hand-rolled forward/backward pass ([`guidance`]), score-function
//! (REINFORCE) gradients with a variance-reducing baseline, a KL-divergence
//! initialization scheme, and a self-supervised inlier-count objective
//! ([`training`]). Synthetic scene generators ([`synthdata`]), evaluation metrics
//! and a benchmark harness ([`metrics`], [`bench`]) round out the toolkit.
//!
//! Everything stochastic takes an explicit [`rng::Rng`] — there is no global
//! generator, and identical seeds give bit-identical results across platforms.
//!
//! The `examples/` directory is the best starting point; each example is a small
//! runnable program exercising one capability end to end. A thin `ngransac`
//! binary exposes the same flows as subcommands (`synth`, `train`, `eval`,
//! `bench`, `gradcheck`).

pub mod bench;
pub mod cli;
pub mod estimator;
pub mod fsum;
pub mod geometry;
pub mod gradcheck;
pub mod guidance;
pub mod metrics;
pub mod rng;
pub mod sampling;
pub mod sceneio;
pub mod scoring;
pub mod solvers;
pub mod synthdata;
pub mod training;

pub use bench::{run_benchmark, BenchConfig, BenchOutcome, MethodSpec};
pub use estimator::{ng_ransac, ransac, EstimateConfig, EstimateReport};
pub use geometry::{Correspondence, Line2, Model3x3, ModelKind, Pose};
pub use guidance::{GuidanceNet, GuidanceNetSpec, HeadKind};
pub use rng::Rng;
pub use sampling::GuidanceDistribution;
pub use training::{train_loop, Objective, TrainConfig, TrainExample};
