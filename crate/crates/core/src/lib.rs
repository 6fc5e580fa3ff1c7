//! Keypoint subgoal extraction, subgoal anticipation, stage-wise rewards
//! and a grid oracle for a 2-D point-manipulation world.

pub mod error;
pub mod exec;
pub mod experiment;
pub mod geometry;
pub mod io;
pub mod oracle;
pub mod perception;
pub mod planner;
pub mod reward;
pub mod seed;
pub mod trainer;
pub mod world;

pub use exec::Execution;
pub use geometry::{euclid, mean_keypoint_distance, KeypointSet, KeypointTrack, Point2};
