//! Adaptive multi-sensor odometry library.
//!
//! The crate is organized around a single processing pipeline:
//!
//! * [`radar`] turns raw 4D-radar scans into an ego-velocity estimate and a
//!   static/dynamic/noise partition,
//! * [`lidar`] deskews LiDAR sweeps, removes radar-confirmed dynamic points
//!   and tracks feature degradation,
//! * [`filter`] runs the iterated error-state Kalman filter against whichever
//!   point source is currently active,
//! * [`map`] owns the incremental scan-to-map indexes and the LiDAR/radar
//!   switching state machine,
//! * [`gate`] scores GPS fixes with a chi-square residual test and smooths the
//!   resulting weight,
//! * [`graph`] fuses keyframe odometry with weighted GPS factors,
//! * [`sim`] generates deterministic synthetic sensor logs for all of the
//!   above, and [`pipeline`] replays a log end to end.
//!
//! Conventions held throughout: world frame is z-up with gravity along -z,
//! rotations map body vectors into the world frame, and all units are SI
//! (meters, seconds, radians).

pub mod config;
pub mod filter;
pub mod gate;
pub mod geometry;
pub mod graph;
pub mod kdtree;
pub mod lidar;
pub mod log;
pub mod map;
pub mod metrics;
pub mod pipeline;
pub mod radar;
pub mod sim;
