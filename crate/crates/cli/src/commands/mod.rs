pub mod analyze;
pub mod detect;
pub mod eval;
pub mod featurize;
pub mod synth;
pub mod train;
