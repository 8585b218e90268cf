pub mod scene;
pub mod kg;
pub mod kge;
pub mod bayes;
pub mod config;
pub mod synth;
pub mod eval;
