//! Image–text matching with cross attention and a text-ordered recurrent
//! visual embedding, built on a small reverse-mode autodiff tape.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod data;
pub mod dump;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod matching;
pub mod model;
pub mod params;
pub mod rve;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
