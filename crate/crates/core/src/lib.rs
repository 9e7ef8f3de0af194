//! Learning to repair typographic syntax errors by navigating and editing
//! token streams.
//!
//! The pieces, bottom up: [`token`] and [`vocab`] turn source text into the
//! network's input, [`oracle`] counts compiler errors, [`env`] is the repair
//! MDP, [`demos`] derives expert action sequences from (broken, fixed) pairs,
//! [`net`] is the LSTM actor-critic, [`trainer`] runs A3C, [`eval`] repairs
//! and scores held-out programs, and [`corpus`] handles datasets and seeds
//! synthetic errors.

pub mod config;
pub mod corpus;
pub mod demos;
pub mod env;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod net;
pub mod oracle;
pub mod par;
pub mod token;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
