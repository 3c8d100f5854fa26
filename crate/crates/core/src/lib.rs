//! Baseband OFDM link-level simulation with receiver-side compensation of
//! memoryless power-amplifier nonlinearity.
//!
//! The crate is organised bottom-up:
//!
//! * [`dsp`] - transforms, convolution, small least-squares solves, seeded RNG streams
//! * [`constellation`] - Gray-mapped PSK / square QAM on the integer grid
//! * [`ofdm`] - modulation with cyclic prefix and oversampling, training frames
//! * [`pa`] - Rapp and odd-order polynomial amplifier models, fitting, back-off
//! * [`nld`] - frequency-domain distortion bases, replica energies, Bussgang gain
//! * [`estimator`] - alternating least-squares estimate of channel and PA model
//! * [`compensator`] - zero-forcing plus iterative decision-aided cancellation
//! * [`channel`] - AWGN and block-fading multipath
//! * [`fec`] - K=7 convolutional code, puncturing, interleaving, Viterbi
//! * [`sim`] - Monte Carlo experiment harness and CSV output

pub mod channel;
pub mod compensator;
pub mod constellation;
pub mod dsp;
pub mod error;
pub mod estimator;
pub mod fec;
pub mod nld;
pub mod ofdm;
pub mod pa;
pub mod sim;

pub use error::{Error, Result};
pub use num_complex::Complex64;
