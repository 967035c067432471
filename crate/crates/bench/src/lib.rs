//! Shared fixtures for the benchmarks.

use confill_core::imaging::{gen_toy_image, make_mask};
use confill_core::{Denoiser, DenoiserParams, Image, Mask, MaskKind, NoiseSchedule, PatternKind, ScheduleConfig};

/// A 32x32 reference image, a half mask and an untrained network.
pub struct Fixture {
    pub image: Image,
    pub mask: Mask,
    pub net: Denoiser,
    pub sched: NoiseSchedule,
}

impl Fixture {
    pub fn new() -> Self {
        let sched = ScheduleConfig::default().build().expect("default schedule");
        Self {
            image: gen_toy_image(PatternKind::ALL[0], 1, 32).expect("valid size"),
            mask: make_mask(MaskKind::HalfVertical, 1, 32).expect("valid size"),
            net: Denoiser::new(DenoiserParams::init(1), sched.timesteps()),
            sched,
        }
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
