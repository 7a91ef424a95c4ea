pub mod contrastive;
pub mod dataset;
pub mod error;
pub mod io;
pub mod math;
pub mod model;
pub mod preprocess;
pub mod refindex;
pub mod metrics;
pub mod synthgen;
pub mod ablation;
pub mod cli;
