#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod curves;
pub mod error;
pub mod quat;
pub mod scalar;
pub mod simenv;
pub mod spline;
pub mod synclog;
pub mod telemetry;
pub mod harness;

pub use error::{Error, Result};

pub type BezierCurve64 = curves::BezierCurve<f64>;
pub type BezierCurve32 = curves::BezierCurve<f32>;
pub type TimeVector64 = curves::TimeVector<f64>;
pub type TimeVector32 = curves::TimeVector<f32>;
pub type PursuitConfig64 = control::PursuitConfig<f64>;
pub type PursuitConfig32 = control::PursuitConfig<f32>;
pub type ControlCommand64 = control::ControlCommand<f64>;
pub type ControlCommand32 = control::ControlCommand<f32>;
pub type ClockModel64 = synclog::ClockModel<f64>;
pub type ClockModel32 = synclog::ClockModel<f32>;
