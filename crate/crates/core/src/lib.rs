pub mod basis;
pub mod error;
pub mod model;
pub mod ode;

pub use error::{Error, Result};
pub use model::{Parity, ProblemParams};
pub mod shooting;
pub mod oracle;
pub mod continuation;
pub mod analysis;
pub mod io;
pub mod run;
