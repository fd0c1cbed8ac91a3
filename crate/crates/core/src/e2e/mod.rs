//! End-to-end transmitter/receiver learning through the surrogate, the
//! classical baselines, and their evaluation on the rate equations.

mod autoencoder;
mod baselines;
mod encoder;
mod evaluate;

pub use autoencoder::*;
pub use baselines::*;
pub use encoder::{
    bounded_current, bounded_value, encode_frame, init_encoder, learned_currents, names, one_hot, tx_lowpass,
    unbounded_value,
};
pub use evaluate::*;
