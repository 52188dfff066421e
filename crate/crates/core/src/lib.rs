//! Hardware-free toolkit for EM side-channel extraction of CNN
//! architectures running on an embedded GPU.

pub mod dsp;
pub mod nn;
pub mod pipeline;
pub mod segmenter;
pub mod simulator;
pub mod trace;
