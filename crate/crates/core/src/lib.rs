//! Fleet analytics for wind farms: operational zoning of SCADA data, load
//! duration/revolution profiles, a seeded storm simulator and a
//! policy-gradient trainer for row-based preventive shutdowns.

pub mod cli;
pub mod clustering;
pub mod controller;
pub mod error;
pub mod farmsim;
pub mod layout;
pub mod profiles;
pub mod scada;

pub use error::{Error, Result};
