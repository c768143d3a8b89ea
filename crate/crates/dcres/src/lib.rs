//! Resilience analysis toolkit for droop-controlled DC microgrids facing
//! pulsed power loads.
//!
//! The crate models a single-bus DC microgrid in which proportional-droop
//! sources (generators, batteries) and integral-droop sources
//! (supercapacitors) feed a constant power load through RL branches. On top
//! of that model it provides:
//!
//! - time-domain simulation under load steps, with optional secondary
//!   voltage restoration ([`sim`]),
//! - time-domain resilience metrics: energy imbalance, voltage nadir, and
//!   rate of change of voltage ([`metrics`]),
//! - analytic bus-impedance and load-to-voltage transfer functions with
//!   H2 / H-infinity norms ([`tf`]),
//! - a measurement pipeline that identifies the bus impedance from swept-sine
//!   perturbation data via single-bin DFT extraction and vector fitting
//!   ([`sysid`]).

// validators negate comparisons (`!(x > 0.0)`) so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod metrics;
pub mod model;
pub mod sim;
pub mod sysid;
pub mod tf;
