//! Dispatch engine and benchmark harness for isolated microgrids with
//! battery and long-duration hydrogen storage.
//!
//! The pipeline has two stages. Offline, [`solver`] generates
//! hindsight-optimal storage trajectories over an inner convex hull
//! approximation ([`model`]) of the nonconvex LDES conversion curves, for
//! scenario ensembles from [`scenario`]. Online, [`learner`] updates a
//! state-of-charge reference by kernel regression over those trajectories,
//! and [`online`] makes non-anticipatory per-hour decisions with an adaptive
//! virtual-queue controller aggregated over experts, with MPC and myopic
//! baselines. [`metrics`] reports dynamic regret and its decomposition.

pub mod artifacts;
pub mod config;
pub mod learner;
pub mod metrics;
pub mod model;
pub mod online;
pub mod qp;
pub mod scenario;
pub mod solver;
