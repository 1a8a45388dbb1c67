//! Decentralized pose-formation control of rigid bodies on SE(3) with
//! prescribed-performance funnels on distances, orientations and velocities.

// Funnel checks are written `!(x < bound)` on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod funnel;
pub mod graph;
pub mod plant;
pub mod se3;
pub mod sim;
pub mod verify;
