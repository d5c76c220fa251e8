pub mod error;
pub mod geometry;
pub mod image;
pub mod matching;
pub mod synth;
pub mod motionfield;
pub mod optimizer;
pub mod profiles;
pub mod warp;
pub mod metrics;
pub mod config;
pub mod pipeline;
