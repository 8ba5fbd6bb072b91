pub mod cli;
pub mod eval;
pub mod features;
pub mod forest;
pub mod netmodel;
pub mod osm_ingest;
pub mod rng;
pub mod routing;
pub mod synth;
