mod binio;
pub mod encoders;
pub mod error;
pub mod inspect;
pub mod model;
pub mod numerics;
pub mod preprocessing;
pub mod rng;
pub mod routing;
pub mod training;

pub use error::{Error, Result};
