pub mod audio_io;
pub mod prob_beta;
pub mod gammatone;
pub mod network;
pub mod trainer;
pub mod inference_eval;
pub mod synth_data;
pub mod cli;
