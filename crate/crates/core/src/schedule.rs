//! Linear variance schedule and the closed-form diffusion maps built on it.
//!
//! Timesteps are 1-based: `t = 1..=T`, with `alpha_bar(0) = 1`. The reverse
//! mean follows the DDIM form with the cumulative products `alpha_bar` in
//! place of per-step `alpha`, and
//! `sigma_t = eta * sqrt((1 - abar_{t-1}) / (1 - abar_t)) * sqrt(1 - abar_t / abar_{t-1})`,
//! which vanishes at `t = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;

/// Lower and upper clamp applied to one-step clean-image predictions.
pub const X0_CLAMP: (f64, f64) = (-0.1, 1.1);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub eta: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            timesteps: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
            eta: 1.0,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end, self.eta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Betas interpolated linearly from `beta_1` at `t = 1` to `beta_t` at `t = T`.
    pub fn linear(timesteps: usize, beta_1: f64, beta_t: f64, eta: f64) -> Result<Self> {
        if timesteps < 2 {
            return Err(Error::config(format!(
                "schedule needs at least 2 timesteps, got {timesteps}"
            )));
        }
        if !(beta_1 > 0.0 && beta_1 <= beta_t && beta_t < 1.0) {
            return Err(Error::config(format!(
                "betas must satisfy 0 < beta_1 <= beta_T < 1, got {beta_1} and {beta_t}"
            )));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::config(format!("eta must lie in [0, 1], got {eta}")));
        }
        let last = (timesteps - 1) as f64;
        let betas: Vec<f64> = (0..timesteps)
            .map(|i| beta_1 + (beta_t - beta_1) * i as f64 / last)
            .collect();
        let mut alpha_bars = Vec::with_capacity(timesteps + 1);
        alpha_bars.push(1.0);
        for b in &betas {
            let prev = *alpha_bars.last().unwrap();
            alpha_bars.push(prev * (1.0 - b));
        }
        let mut sigmas = vec![0.0; timesteps + 1];
        for t in 1..=timesteps {
            let (ab, ab_prev) = (alpha_bars[t], alpha_bars[t - 1]);
            let var = (1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev);
            sigmas[t] = eta * var.max(0.0).sqrt();
        }
        Ok(Self {
            config: ScheduleConfig {
                timesteps,
                beta_start: beta_1,
                beta_end: beta_t,
                eta,
            },
            betas,
            alpha_bars,
            sigmas,
        })
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn timesteps(&self) -> usize {
        self.config.timesteps
    }

    pub fn eta(&self) -> f64 {
        self.config.eta
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// Per-step `1 - beta_t`.
    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// Cumulative product up to `t`; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t]
    }

    fn check_t(&self, t: usize, what: &str) -> Result<()> {
        if (1..=self.timesteps()).contains(&t) {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "{what}: timestep {t} outside [1, {}]",
                self.timesteps()
            )))
        }
    }

    /// `sqrt(abar_t) * x0 + sqrt(1 - abar_t) * noise`.
    pub fn q_sample(&self, x0: &Image, t: usize, noise: &Image) -> Result<Image> {
        self.check_t(t, "q_sample")?;
        x0.check_shape(noise, "q_sample")?;
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0.zip_map(noise, |x, n| a * x + b * n))
    }

    /// Coefficients `(c_x, c_eps)` of `x0 = c_x * x_t - c_eps * eps` before clamping.
    pub fn x0_coefficients(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar(t);
        (1.0 / ab.sqrt(), ((1.0 - ab) / ab).sqrt())
    }

    /// One-step clean-image estimate, clamped to [`X0_CLAMP`].
    pub fn predict_x0(&self, x_t: &Image, eps_hat: &Image, t: usize) -> Result<Image> {
        self.check_t(t, "predict_x0")?;
        x_t.check_shape(eps_hat, "predict_x0")?;
        let (cx, ce) = self.x0_coefficients(t);
        Ok(x_t.zip_map(eps_hat, |x, e| (cx * x - ce * e).clamp(X0_CLAMP.0, X0_CLAMP.1)))
    }

    /// DDIM-style reverse mean from level `t` to `t - 1`.
    pub fn ddim_mean(&self, x_t: &Image, x0_hat: &Image, t: usize) -> Result<Image> {
        self.check_t(t, "ddim_mean")?;
        if t < 2 {
            return Err(Error::contract("ddim_mean needs t >= 2; t = 1 is the terminal step"));
        }
        ddim_mean_with(
            x_t,
            x0_hat,
            self.alpha_bar(t),
            self.alpha_bar(t - 1),
            self.sigma(t),
        )
    }

    /// Sample `q(x_to | x_from)` for `to >= from`: scale by
    /// `sqrt(abar_to / abar_from)` and add noise with variance `1 - abar_to / abar_from`.
    pub fn renoise(&self, x: &Image, from: usize, to: usize, noise: &Image) -> Result<Image> {
        self.check_t(from, "renoise")?;
        self.check_t(to, "renoise")?;
        if to < from {
            return Err(Error::contract("renoise can only move to a noisier level"));
        }
        let ratio = self.alpha_bar(to) / self.alpha_bar(from);
        let (a, b) = (ratio.sqrt(), (1.0 - ratio).max(0.0).sqrt());
        Ok(x.zip_map(noise, |v, n| a * v + b * n))
    }
}

/// `x0 * sqrt(abar_prev) + ((x_t - x0 * sqrt(abar_t)) / sqrt(1 - abar_t)) * sqrt(1 - abar_prev - sigma^2)`.
pub fn ddim_mean_with(
    x_t: &Image,
    x0_hat: &Image,
    abar_t: f64,
    abar_prev: f64,
    sigma: f64,
) -> Result<Image> {
    x_t.check_shape(x0_hat, "ddim_mean")?;
    let rest = 1.0 - abar_prev - sigma * sigma;
    if rest < 0.0 {
        return Err(Error::contract(format!(
            "sigma^2 = {} exceeds 1 - abar_prev = {}",
            sigma * sigma,
            1.0 - abar_prev
        )));
    }
    let (sp, st, dir) = (abar_prev.sqrt(), abar_t.sqrt(), rest.sqrt() / (1.0 - abar_t).sqrt());
    Ok(x_t.zip_map(x0_hat, |x, x0| x0 * sp + (x - x0 * st) * dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn default_sched() -> NoiseSchedule {
        ScheduleConfig::default().build().unwrap()
    }

    fn noise(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h).map(|_| StandardNormal.sample(&mut rng)).collect();
        Image::new(w, h, data).unwrap()
    }

    #[test]
    fn endpoints_and_first_product() {
        let s = NoiseSchedule::linear(10, 0.001, 0.05, 1.0).unwrap();
        assert_eq!(s.beta(1), 0.001);
        assert_eq!(s.beta(10), 0.05);
        assert_eq!(s.alpha_bar(1), 1.0 - 0.001);
        assert!(NoiseSchedule::linear(1, 0.001, 0.05, 1.0).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.05, 1.0).is_err());
        assert!(NoiseSchedule::linear(10, 0.06, 0.05, 1.0).is_err());
        assert!(NoiseSchedule::linear(10, 0.01, 1.0, 1.0).is_err());
    }

    #[test]
    fn tables_are_well_formed() {
        let s = default_sched();
        assert_eq!(s.sigma(1), 0.0);
        for t in 1..=s.timesteps() {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.alpha_bar(t) > 0.0);
            assert!(s.sigma(t).is_finite());
            assert!(s.sigma(t).powi(2) <= 1.0 - s.alpha_bar(t - 1) + 1e-15);
        }
    }

    #[test]
    fn q_sample_limits() {
        let s = default_sched();
        let x0 = Image::from_fn(4, 4, |x, y| (x + y) as f64 / 6.0);
        let z = Image::zeros(4, 4);
        let n = noise(4, 4, 1);
        let t = 50;
        let ab = s.alpha_bar(t);
        let a = s.q_sample(&x0, t, &z).unwrap();
        let b = s.q_sample(&z, t, &n).unwrap();
        for i in 0..16 {
            assert_eq!(a.data()[i], ab.sqrt() * x0.data()[i]);
            assert_eq!(b.data()[i], (1.0 - ab).sqrt() * n.data()[i]);
        }
        assert!(matches!(s.q_sample(&x0, 0, &n), Err(Error::Contract(_))));
        assert!(matches!(s.q_sample(&x0, 201, &n), Err(Error::Contract(_))));
    }

    #[test]
    fn q_sample_moments_monte_carlo() {
        let s = default_sched();
        let t = 120;
        let ab = s.alpha_bar(t);
        let x0 = Image::filled(1, 1, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| {
                let n = Image::filled(1, 1, StandardNormal.sample(&mut rng));
                s.q_sample(&x0, t, &n).unwrap().data()[0]
            })
            .collect();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let v = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let var = 1.0 - ab;
        let se_mean = (var / 1e4).sqrt();
        let se_var = var * (2.0 / 1e4f64).sqrt();
        assert!((m - ab.sqrt() * 0.7).abs() < 3.0 * se_mean, "{m}");
        assert!((v - var).abs() < 3.0 * se_var, "{v} vs {var}");
    }

    #[test]
    fn predict_x0_inverts_q_sample() {
        let s = default_sched();
        let x0 = Image::from_fn(6, 6, |x, y| ((x * 5 + y * 3) % 7) as f64 / 6.0);
        let n = noise(6, 6, 3);
        for t in [1, 17, 100, 200] {
            let xt = s.q_sample(&x0, t, &n).unwrap();
            let back = s.predict_x0(&xt, &n, t).unwrap();
            for (a, b) in back.data().iter().zip(x0.data()) {
                assert!((a - b).abs() < 1e-12, "t={t}");
            }
        }
        let xt = noise(6, 6, 4);
        let plain = s.predict_x0(&xt, &Image::zeros(6, 6), 3).unwrap();
        let ab = s.alpha_bar(3);
        for (a, b) in plain.data().iter().zip(xt.data()) {
            assert!((*a - (b / ab.sqrt()).clamp(-0.1, 1.1)).abs() < 1e-15);
        }
        let wild = s.predict_x0(&xt.map(|v| 50.0 * v), &Image::zeros(6, 6), 200).unwrap();
        assert!(wild.data().iter().all(|v| (-0.1..=1.1).contains(v)));
    }

    #[test]
    fn ddim_mean_identities() {
        let xt = noise(4, 4, 5);
        let x0 = noise(4, 4, 6);
        let same = ddim_mean_with(&xt, &x0, 0.6, 0.6, 0.0).unwrap();
        for (a, b) in same.data().iter().zip(xt.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let s = NoiseSchedule::linear(50, 1e-3, 0.05, 0.0).unwrap();
        let t = 30;
        let clean = x0.map(|v| v * s.alpha_bar(t).sqrt());
        let k = s.ddim_mean(&clean, &x0, t).unwrap();
        for (a, b) in k.data().iter().zip(x0.data()) {
            assert!((a - b * s.alpha_bar(t - 1).sqrt()).abs() < 1e-12);
        }
        assert!(matches!(
            ddim_mean_with(&xt, &x0, 0.5, 0.9, 0.5),
            Err(Error::Contract(_))
        ));
        assert!(s.ddim_mean(&xt, &x0, 1).is_err());
    }

    #[test]
    fn ddim_mean_matches_second_evaluation() {
        let s = default_sched();
        let xt = noise(4, 4, 7);
        let x0 = noise(4, 4, 8);
        for t in [2, 50, 200] {
            let k = s.ddim_mean(&xt, &x0, t).unwrap();
            // Direct per-pixel transcription, regrouped.
            let (a, ap, sg) = (s.alpha_bar(t), s.alpha_bar(t - 1), s.sigma(t));
            for i in 0..16 {
                let eps = (xt.data()[i] - a.sqrt() * x0.data()[i]) / (1.0 - a).sqrt();
                let want = ap.sqrt() * x0.data()[i] + (1.0 - ap - sg * sg).sqrt() * eps;
                assert!((k.data()[i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eta_zero_reverse_map_is_deterministic_and_linear() {
        let s = NoiseSchedule::linear(20, 1e-3, 0.05, 0.0).unwrap();
        assert!((1..=20).all(|t| s.sigma(t) == 0.0));
        let xt = noise(3, 3, 1);
        let x0 = noise(3, 3, 2);
        assert_eq!(s.ddim_mean(&xt, &x0, 7).unwrap(), s.ddim_mean(&xt, &x0, 7).unwrap());
    }

    #[test]
    fn renoise_identity_and_moments() {
        let s = default_sched();
        let x = noise(3, 3, 1);
        let n = noise(3, 3, 2);
        assert_eq!(s.renoise(&x, 10, 10, &n).unwrap(), x);
        let r = s.renoise(&x, 10, 19, &Image::zeros(3, 3)).unwrap();
        let scale = (s.alpha_bar(19) / s.alpha_bar(10)).sqrt();
        assert!((r.data()[0] - scale * x.data()[0]).abs() < 1e-15);
        assert!(s.renoise(&x, 10, 9, &n).is_err());
    }
}
