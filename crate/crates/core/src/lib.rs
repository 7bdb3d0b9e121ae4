pub mod numeric;
pub mod store;
pub mod synth;
pub mod model;
pub mod train;
pub mod eval;
pub mod verify;
pub mod cli;
