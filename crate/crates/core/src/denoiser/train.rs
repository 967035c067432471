//! Adam training on the noise-prediction objective.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Denoiser, DenoiserParams, PARAM_COUNT};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::rng;
use crate::schedule::NoiseSchedule;

const MIN_DATASET: usize = 32;
const RUNNING_WINDOW: usize = 100;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 16,
            learning_rate: 2e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        // Zero is accepted so that a run can reproduce its initial parameters.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be finite and non-negative"));
        }
        Ok(())
    }
}

/// One noisy training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub x_t: Image,
    pub t: usize,
    pub noise: Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    /// Mean loss over the first (up to) 100 steps.
    pub initial_loss: f64,
    /// Mean loss over the last (up to) 100 steps.
    pub final_loss: f64,
    pub losses: Vec<f64>,
}

/// Train from [`DenoiserParams::init`] with `cfg.seed`.
pub fn train(dataset: &[Image], sched: &NoiseSchedule, cfg: &TrainConfig) -> Result<(DenoiserParams, TrainReport)> {
    train_from(DenoiserParams::init(cfg.seed), dataset, sched, cfg)
}

/// Train starting from the given parameters.
pub fn train_from(
    params: DenoiserParams,
    dataset: &[Image],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<(DenoiserParams, TrainReport)> {
    cfg.validate()?;
    if dataset.len() < MIN_DATASET {
        return Err(Error::contract(format!(
            "training needs at least {MIN_DATASET} images, got {}",
            dataset.len()
        )));
    }
    let (w, h) = (dataset[0].width(), dataset[0].height());
    if dataset.iter().any(|img| img.width() != w || img.height() != h) {
        return Err(Error::contract("training images must share one shape"));
    }

    let big_t = sched.timesteps();
    let mut net = Denoiser::new(params, big_t);
    let mut m = vec![0.0; PARAM_COUNT];
    let mut v = vec![0.0; PARAM_COUNT];
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = rng::stream(cfg.seed, "train");
    let mut losses = Vec::new();
    let mut step = 0i32;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let t = rng.random_range(1..=big_t);
                let noise: Vec<f64> = (0..w * h).map(|_| StandardNormal.sample(&mut rng)).collect();
                let noise = Image::new(w, h, noise)?;
                let x_t = sched.q_sample(&dataset[i], t, &noise)?;
                batch.push(TrainSample { x_t, t, noise });
            }
            let (loss, grad) = net.grad_params(&batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, step {step}"
                )));
            }
            losses.push(loss);
            step += 1;
            let c1 = 1.0 - BETA1.powi(step);
            let c2 = 1.0 - BETA2.powi(step);
            for (k, p) in net.params.values_mut().iter_mut().enumerate() {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * grad[k];
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * grad[k] * grad[k];
                let update = cfg.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
                *p = (*p - update) as f32 as f64;
            }
        }
    }

    let window = RUNNING_WINDOW.min(losses.len()).max(1);
    let mean = |s: &[f64]| if s.is_empty() { f64::NAN } else { s.iter().sum::<f64>() / s.len() as f64 };
    let report = TrainReport {
        steps: losses.len(),
        initial_loss: mean(&losses[..window.min(losses.len())]),
        final_loss: mean(&losses[losses.len().saturating_sub(window)..]),
        losses,
    };
    Ok((net.params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{gen_toy_dataset, ToyDatasetSpec};

    fn data(count: usize) -> Vec<Image> {
        gen_toy_dataset(&ToyDatasetSpec {
            count,
            size: 16,
            seed: 0,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn two_hundred_steps_reduce_running_loss() {
        let sched = NoiseSchedule::linear(200, 1e-4, 0.02, 1.0).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 16,
            learning_rate: 2e-3,
            seed: 0,
        };
        let (_, report) = train(&data(64), &sched, &cfg).unwrap();
        assert_eq!(report.steps, 200);
        assert!(report.final_loss < report.initial_loss, "{report:?}");
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let sched = NoiseSchedule::linear(50, 1e-4, 0.02, 1.0).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            learning_rate: 0.0,
            seed: 5,
        };
        let (p, _) = train(&data(32), &sched, &cfg).unwrap();
        assert_eq!(p, DenoiserParams::init(5));
    }

    #[test]
    fn training_is_deterministic() {
        let sched = NoiseSchedule::linear(50, 1e-4, 0.02, 1.0).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 9,
        };
        let d = data(32);
        assert_eq!(train(&d, &sched, &cfg).unwrap(), train(&d, &sched, &cfg).unwrap());
    }

    #[test]
    fn rejects_small_datasets_and_bad_config() {
        let sched = NoiseSchedule::linear(50, 1e-4, 0.02, 1.0).unwrap();
        assert!(matches!(
            train(&data(31), &sched, &TrainConfig::default()),
            Err(Error::Contract(_))
        ));
        let bad = TrainConfig {
            learning_rate: -1.0,
            ..Default::default()
        };
        assert!(matches!(train(&data(32), &sched, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn divergence_is_a_training_error() {
        let sched = NoiseSchedule::linear(50, 1e-4, 0.02, 1.0).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e300,
            seed: 1,
        };
        let err = train(&data(32), &sched, &cfg).unwrap_err();
        assert!(err.is_numerical(), "{err}");
    }
}
