//! Two-stage pipeline estimating PTSD severity from physiological recordings.
//!
//! Stage one learns a fear-response scorer from labeled, windowed ECG/GSR
//! features (an ensemble of small MLPs). Stage two summarizes each target
//! subject's fear-response curve into static features and predicts a
//! distribution over PCL-M scores with a mixed-kernel density estimator.

pub mod signal;
pub mod fear_model;
pub mod fear_features;
pub mod mkde;
pub mod eval;
pub mod synth;
pub mod pipeline;
