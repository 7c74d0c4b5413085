mod config;
mod network;
mod trace;

pub use config::{scale_channels, EncoderKind, ModelConfig, STAGES};
pub use network::{Model, ParamBreakdown};
pub use trace::{dims, ShapeTrace, TraceRow};
