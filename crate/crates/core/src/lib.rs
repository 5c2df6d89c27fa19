//! Identity-preserving stylization toolkit.
//!
//! Content-guided DDIM sampling over analytic denoisers, face mosaics that
//! enlarge small faces before stylization, and a cosine-similarity identity
//! evaluation harness.

pub mod cli;
pub mod codec;
pub mod config;
pub mod denoise;
pub mod error;
pub mod evalkit;
pub mod guidance;
pub mod imageio;
pub mod latent;
pub mod mosaic;
pub mod pipeline;
pub mod sampler;
pub mod schedule;

pub use codec::{CodecConfig, CodecMode};
pub use config::PipelineConfig;
pub use denoise::{GaussianPriorPredictor, NoisePredictor, PointMassPredictor, StylePullPredictor};
pub use error::{Error, Result};
pub use evalkit::{Category, EvalRecord, EvalReport};
pub use guidance::{GuidanceConfig, LambdaScale, Reduction};
pub use imageio::{Image, Rect};
pub use latent::Latent;
pub use mosaic::{FaceBox, MosaicLayout, StyleMosaicSpec};
pub use sampler::{InversionConfig, SampleTrace};
pub use schedule::{BetaKind, NoiseSchedule, TimestepPlan};
