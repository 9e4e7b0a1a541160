//! Planar pose-graph SLAM.
//!
//! Poses live on SE(2) and are estimated by maximum a posteriori inference over
//! a factor graph. Every new laser scan is registered with GICP against each
//! scan in a sliding window, giving a fully connected set of relative-pose
//! factors; the whole graph is then re-optimized with sparse
//! Levenberg-Marquardt. The crate also carries the pieces needed to exercise
//! that loop end to end: a ray-casting scan simulator, a hit-count map
//! rasterizer, and absolute pose error evaluation.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled. File formats and the command line live in the companion `slam2d`
//! crate.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod evaluation;
pub mod factor_graph;
pub mod geometry;
pub mod kdtree;
pub mod mapping;
pub mod math;
pub mod pipeline;
pub mod registration;
pub mod scan;
pub mod simulator;
pub mod sparse;

pub use evaluation::{ApeOptions, ApeResult, Trajectory, TrajStats};
pub use factor_graph::{Factor, FactorGraph, NoiseModel, OptimizerConfig, SolveReport, Values, VarId};
pub use geometry::{Cov3, Pose2, Tangent2};
pub use mapping::GridMap;
pub use pipeline::{PipelineConfig, PoseEstimate, SlamState};
pub use registration::{GicpConfig, MatchResult};
pub use scan::{LaserScan, PointCloud2};
pub use simulator::{SimConfig, World2D};
