//! Directional modulation with space-time digitally coded leaky-wave antennas.
//!
//! The crate is organised bottom-up:
//!
//! - [`array`]: cumulative cell phases, array factors, Fourier coefficients of the
//!   periodic switching waveform and the harmonic weights `W(nu, angle)`.
//! - [`objective`]: directional-modulation objectives (free space 1D/2D and
//!   channel-domain with perfect or partial eavesdropper CSI), their continuous
//!   relaxation with analytic gradients, and constraint verification.
//! - [`bnb`]: depth-first branch and bound over the binary coding schedule with
//!   projected-gradient relaxations and an exhaustive oracle for small instances.
//! - [`pruning`]: node features, the pruning network and its staged training.
//! - [`link`] and [`channel`]: OFDM/QPSK Monte-Carlo link simulation through the
//!   time-modulated array, fading channel generation and secrecy capacity.
//!
//! Angles are degrees at every public interface and radians internally. The
//! `sinc` used throughout is the unnormalized `sin(x)/x` with `sinc(0) = 1`.

pub mod array;
pub mod bnb;
pub mod channel;
pub mod error;
pub mod link;
pub mod objective;
pub mod pruning;
pub mod seed;
pub mod textfmt;

pub use error::{Error, Result};
pub use num_complex::Complex64;
