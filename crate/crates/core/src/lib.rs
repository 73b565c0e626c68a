pub mod channel;
pub mod converse;
pub mod dofregion;
pub mod error;
pub mod exec;
pub mod numerics;
pub mod scheme;
pub mod seeding;
pub mod simulate;

pub use error::{Error, Result};
