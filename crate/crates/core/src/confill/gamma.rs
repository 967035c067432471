//! Per-timestep variance of the one-step clean-image prediction error.

use std::collections::BTreeMap;

use super::guide::{Discrepancy, Guide};
use super::ConFillConfig;
use crate::denoiser::NoisePredictor;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::imaging::{make_mask, Image, MaskKind};
use crate::rng;
use crate::schedule::NoiseSchedule;

/// `gamma'^2_t` for `t = 1..=T`, each at least the configured floor.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaTable {
    values: Vec<f64>,
}

impl GammaTable {
    /// Build from values for `t = 1..=T`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("gamma table needs at least one entry"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::contract("gamma table entries must be finite and positive"));
        }
        Ok(Self { values })
    }

    /// A table with every entry equal to `value`.
    pub fn constant(timesteps: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; timesteps])
    }

    pub fn timesteps(&self) -> usize {
        self.values.len()
    }

    /// Entry for timestep `t` (1-based).
    pub fn get(&self, t: usize) -> f64 {
        self.values[t - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// JSON object `{"1": g1, "2": g2, ...}`.
    pub fn to_json(&self) -> String {
        let map: BTreeMap<usize, f64> = self.values.iter().enumerate().map(|(i, &v)| (i + 1, v)).collect();
        serde_json::to_string_pretty(&map).expect("numbers serialise")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<usize, f64> =
            serde_json::from_str(text).map_err(|e| Error::parse(0, format!("gamma table: {e}")))?;
        let expected: Vec<usize> = (1..=map.len()).collect();
        if map.keys().copied().collect::<Vec<_>>() != expected {
            return Err(Error::parse(0, "gamma table keys must be 1..=T without gaps"));
        }
        Self::new(map.into_values().collect())
    }
}

/// Calibrated table: for each `t`, the mean over calibration images of the
/// discrepancy between the one-step prediction from `q_sample(x0, t)` and `x0`
/// on the known region of a fixed half-vertical mask, floored at
/// `cfg.gamma_floor`.
pub fn calibrate_gamma(
    net: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    images: &[Image],
    features: &FeatureConfig,
    kind: Discrepancy,
    cfg: &ConFillConfig,
) -> Result<GammaTable> {
    cfg.validate()?;
    let count = images.len().min(cfg.calib_images);
    if count == 0 {
        return Err(Error::contract("calibration needs at least one image"));
    }
    let big_t = sched.timesteps();
    let mut sums = vec![0.0; big_t];
    for (i, x0) in images[..count].iter().enumerate() {
        if x0.width() != x0.height() {
            return Err(Error::contract("calibration images must be square"));
        }
        let mask = make_mask(MaskKind::HalfVertical, 0, x0.width())?;
        let guide = Guide::new(kind, features, x0, &mask, rng::derive_indexed(cfg.seed, "calibration-grid", &[i as u64]), None)?;
        let eval = guide.evaluator()?;
        let scale = if cfg.gamma_per_pixel {
            1.0 / mask.known_count() as f64
        } else {
            1.0
        };
        for t in 1..=big_t {
            let mut rng = rng::stream_indexed(cfg.seed, "calibration-noise", &[i as u64, t as u64]);
            let noise = super::gaussian(x0.width(), x0.height(), &mut rng);
            let x_t = sched.q_sample(x0, t, &noise)?;
            let eps = net.predict(&x_t, t)?;
            let pred = sched.predict_x0(&x_t, &eps, t)?;
            sums[t - 1] += eval.value(&pred)? * scale;
        }
    }
    let values = sums
        .into_iter()
        .map(|s| (s / count as f64).max(cfg.gamma_floor))
        .collect();
    GammaTable::new(values)
}
