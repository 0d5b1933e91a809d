pub mod bayes_opt;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gmm;
pub mod graph;
pub mod icp;
pub mod io;
pub mod learning;
pub mod loop_closure;
pub mod maps;
pub mod optimizer;
pub mod pipeline;
pub mod polygon;
pub mod sim;
pub mod sparse;

pub use error::{MapError, Result};
