pub mod code;
pub mod decoders;
pub mod env;
pub mod error;
pub mod eval;
pub mod gf2;
pub mod hardware;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
