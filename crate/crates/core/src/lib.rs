//! Joint optimization of time-to-first-spike encoders and spiking-neural-network
//! equalizers for PAM-4 transmission over a simulated IM/DD fiber link.
//!
//! The crate is organized bottom-up:
//!
//! * [`link`] simulates the dispersive IM/DD channel and slices receive samples
//!   into equalizer tap windows.
//! * [`encoder`] converts tap windows into spike rasters with a
//!   time-to-first-spike characteristic.
//! * [`snn`] is the LIF/LI network with surrogate-gradient BPTT and Adam.
//! * [`policy`] is the Gaussian-policy black-box optimizer used on the encoder.
//! * [`training`] runs the alternating schedule and the `(J, K)` sweep.
//! * [`metrics`] covers Monte-Carlo BER, spike statistics and complexity counts.
//! * [`config`] and [`io`] hold the experiment schema and file formats.

pub mod config;
pub mod encoder;
pub mod error;
pub mod io;
pub mod link;
pub mod metrics;
pub mod policy;
pub mod seed;
pub mod snn;
pub mod training;

pub use error::{Error, Result};
