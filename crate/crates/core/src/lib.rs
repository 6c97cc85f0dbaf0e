//! Gesture recognition from mmWave beam SNR and Wi-Fi CSI time series.

pub mod dataio;
pub mod experiments;
pub mod model;
pub mod optim;
pub mod synth;
pub mod tensor;
