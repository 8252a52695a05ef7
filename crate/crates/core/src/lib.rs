//! Discrete-event simulation and analysis toolkit for in-network mobile
//! function offloading.
//!
//! The crate is split along the lines of the problem:
//!
//! * [`topology`]: compute nodes, links and routing toward the server.
//! * [`workload`]: services, Poisson arrival streams and the circular-buffer
//!   estimator behind probabilistic admission.
//! * [`control`]: the `none`, `passive` and `proactive` admission strategies.
//! * [`simulator`]: the event loop, scenario presets and metric export.
//! * [`partition`]: call graphs, Girvan-Newman clustering and Louvain.
//! * [`decision`]: runtime offload-validity checks and partition escalation.
//! * [`appstats`]: package-overlap statistics over app corpora.

// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod appstats;
pub mod control;
pub mod decision;
pub mod partition;
pub mod simulator;
pub mod topology;
pub mod workload;
