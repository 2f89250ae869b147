//! Colour shift keying (CSK) simulation over diffuse optical wireless links.
//!
//! The crate models tri-chromatic (TLED) and quad-chromatic (QLED) CSK
//! transmitters, block transmission with a cyclic prefix, an exponential-decay
//! multipath channel with colour cross-talk, and a frequency-domain
//! zero-forcing equaliser at the receiver. The [`harness`] module runs Monte
//! Carlo BER measurements and bisects the optical power needed to reach a
//! target BER, normalised to on-off keying over an AWGN channel.
//!
//! Module map:
//!
//! - [`colorimetry`]: chromaticity to LED intensity conversion and the
//!   TLED/QLED constellations.
//! - [`modem`]: bit mapping, cyclic-prefix framing, ML detection, de-mapping.
//! - [`channel`]: impulse response, cross-talk matrix, noise, calibration.
//! - [`fde`]: DFT helpers and the zero-forcing frequency-domain equaliser.
//! - [`harness`]: BER points, power requirement search, sweeps, result files.
//! - [`config`]: TOML configuration for sources, layouts, matrices and runs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod colorimetry;
pub mod config;
pub mod error;
pub mod fde;
pub mod harness;
pub mod modem;
pub mod rng;

pub use error::{Error, Result};
