// SPDX-License-Identifier: Apache-2.0

pub mod cells;
pub mod coarse_graining;
pub mod dynamics;
pub mod ensembles;
pub mod error;
pub mod experiments;
pub mod ode;
pub mod quad;
pub mod wavefunction;

pub use error::{Error, Result};
