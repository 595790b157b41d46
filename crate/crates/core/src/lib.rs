pub mod backends;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod interact;
pub mod optim;
pub mod store;
pub mod synth;
pub mod train;
pub mod tsne;

pub use error::{Error, ErrorKind, Result};
