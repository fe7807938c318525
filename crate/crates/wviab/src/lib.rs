//! Viability analysis for continuity inclusions over the 1-Wasserstein space,
//! restricted to finitely supported measures.
//!
//! Layering, bottom-up: [`measures`] and [`transport`] provide exact W1;
//! [`fields`] and [`profile`] provide the field algebra and step-function
//! bounds; [`dynamics`] integrates continuity equations and inclusions;
//! [`constraints`] holds the constraint tubes and rate probes;
//! [`viability`] runs the constructive schemes. [`oracle`] contains the
//! brute-force references used for cross-checks.

pub mod constraints;
pub mod dynamics;
pub mod error;
pub mod fields;
pub mod measures;
pub mod oracle;
pub mod profile;
pub mod transport;
pub mod viability;

pub use error::{Error, Result};
pub use measures::DiscreteMeasure;
