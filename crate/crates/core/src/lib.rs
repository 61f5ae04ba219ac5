pub mod autodiff;
pub mod bitstream;
pub mod checkpoint;
pub mod codec;
pub mod cognition;
pub mod config;
pub mod entropy;
pub mod error;
pub mod evaluation;
pub mod gain;
pub mod nn;
pub mod tensor;
pub mod training;
