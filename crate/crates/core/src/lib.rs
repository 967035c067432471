//! Diffusion-based image completion guided by a context-adaptive discrepancy.

pub mod baselines;
pub mod bench;
pub mod cad;
pub mod confill;
pub mod denoiser;
pub mod error;
pub mod features;
pub mod imaging;
pub mod metrics;
pub mod rng;
pub mod schedule;

pub use denoiser::{Denoiser, DenoiserParams, NoisePredictor};
pub use error::{Error, Result};
pub use features::{CellGrid, FeatureConfig, Weighting};
pub use imaging::{composite, Image, Mask, MaskKind, PatternKind};
pub use schedule::{NoiseSchedule, ScheduleConfig};
