//! Picture-level intra encoding time control.
//!
//! A picture time budget is pre-allocated across 64×64 CTUs by SA8D weight,
//! each CTU's unaccelerated luma time is predicted from its PlanarCost with
//! a calibrated power law, the nearest QTMT depth preset is chosen for the
//! allocated-to-predicted ratio, and the running error is fed back over a
//! sliding window. Encoders are stood in for by a seeded simulator or by
//! recorded traces.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod encoder_sim;
pub mod error;
pub mod frame_model;
pub mod harness;
pub mod kv;
pub mod metrics;
pub mod preset_catalog;
pub mod tc_model;

pub use controller::{
    run_frame, ControllerConfig, ControllerState, CtuDecision, CtuRecord, EncoderBackend,
    ErrorBase, FrameReport,
};
pub use encoder_sim::{SimBackend, SimParams, TraceBackend, TraceRow};
pub use error::{Error, Result};
pub use frame_model::{CtuGeometry, CtuWeight, FramePlane};
pub use preset_catalog::{default_catalog, Catalog, Preset};
pub use tc_model::{fit, FitSample, TcModel};
