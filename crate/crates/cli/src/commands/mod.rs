pub mod build_index;
pub mod evaluate;
pub mod localize;
pub mod recognize;
pub mod refine;
pub mod synth_gen;
pub mod train_classifier;
pub mod train_regressor;
