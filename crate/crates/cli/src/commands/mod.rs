pub mod bench;
pub mod eval;
pub mod gradcheck;
pub mod pipeline;
pub mod synth;
pub mod train;
