//! Uplink spectral efficiency of multi-level cooperative cell-free massive
//! MIMO.
//!
//! APs relay to spatial expansion units (SEUs), which estimate channels and
//! apply MRC or ZF combining; a CPU fuses the per-SEU estimates with
//! large-scale fading decoding (LSFD) weights. Rates are computed by Monte
//! Carlo simulation and by Gamma moment-matched closed forms.

#![allow(clippy::needless_range_loop)]

pub mod channel;
pub mod clustering;
pub mod combining;
pub mod config;
pub mod deployment;
pub mod error;
pub mod harness;
pub mod netgeom;
mod par;
pub mod pilots;
pub mod rates;
pub mod rng;

pub use channel::SignalModel;
pub use combining::Receiver;
pub use config::{SimConfig, Threshold};
pub use deployment::Deployment;
pub use error::{Error, Result};
pub use harness::{Architecture, Scenario};
pub use rates::{CfVariant, SinrForm};
