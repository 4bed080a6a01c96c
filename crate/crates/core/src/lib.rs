pub mod backend;
pub mod env;
pub mod error;
pub mod game;
pub mod history;
pub mod lp;
pub mod messages;
pub mod metrics;
pub mod multistage;
pub mod oracles;
pub mod playout;
pub mod prompt;
pub mod psro;
pub mod runs;
pub mod seed;
pub mod solver;

pub use error::{Error, Result};
