pub mod acceptance;
pub mod design;
pub mod error;
pub mod input_unit;
pub mod io;
pub mod linalg;
pub mod output_unit;
pub mod quantizer;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
