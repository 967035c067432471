//! Small convolutional noise predictor with exact gradients.

mod checkpoint;
mod net;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use net::{time_embedding, ARCH_DESCRIPTOR, PARAM_COUNT};
pub use train::{train, TrainConfig, TrainReport, TrainSample};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::rng;
use net::Packed;

/// Flat parameter vector of the fixed architecture.
///
/// Values produced by [`DenoiserParams::init`] and by training are always
/// representable as `f32`, so checkpoints round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserParams {
    values: Vec<f64>,
}

impl DenoiserParams {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != PARAM_COUNT {
            return Err(Error::contract(format!(
                "expected {PARAM_COUNT} parameters, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("parameters must be finite"));
        }
        Ok(Self { values })
    }

    pub fn zeros() -> Self {
        Self {
            values: vec![0.0; PARAM_COUNT],
        }
    }

    /// Uniform Glorot initialisation per layer, zero biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = rng::stream(seed, "denoiser-init");
        let mut values = vec![0.0; PARAM_COUNT];
        let layers = [
            (net::W1, net::B1, net::IN_CHANNELS, net::HIDDEN),
            (net::W2, net::B2, net::HIDDEN, net::HIDDEN),
            (net::W3, net::B3, net::HIDDEN, 1),
        ];
        for (start, end, cin, cout) in layers {
            let limit = (6.0 / ((cin + cout) * net::TAPS) as f64).sqrt();
            for v in &mut values[start..end] {
                *v = rng.random_range(-limit..limit) as f32 as f64;
            }
        }
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// A noise predictor `eps(x_t, t)` with an input vector-Jacobian product.
pub trait NoisePredictor: Sync {
    fn predict(&self, x_t: &Image, t: usize) -> Result<Image>;

    /// Predict and return a pullback computing `J^T c` at the same point.
    fn predict_with_pullback<'a>(
        &'a self,
        x_t: &Image,
        t: usize,
    ) -> Result<(Image, Pullback<'a>)>;
}

/// Maps an output cotangent to an input gradient.
pub type Pullback<'a> = Box<dyn Fn(&Image) -> Image + 'a>;

/// The trained network bound to its schedule length.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    params: DenoiserParams,
    timesteps: usize,
}

impl Denoiser {
    pub fn new(params: DenoiserParams, timesteps: usize) -> Self {
        Self { params, timesteps }
    }

    pub fn params(&self) -> &DenoiserParams {
        &self.params
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    fn check(&self, x: &Image, t: usize) -> Result<()> {
        if !(1..=self.timesteps).contains(&t) {
            return Err(Error::contract(format!(
                "timestep {t} outside [1, {}]",
                self.timesteps
            )));
        }
        if !x.is_finite() {
            return Err(Error::contract("denoiser input contains non-finite values"));
        }
        Ok(())
    }

    fn packed(&self, t: usize) -> Packed {
        Packed::new(self.params.values(), &time_embedding(t, self.timesteps))
    }

    pub fn forward(&self, x: &Image, t: usize) -> Result<Image> {
        self.check(x, t)?;
        let act = net::forward(&self.packed(t), x.data(), x.width(), x.height());
        Image::new(x.width(), x.height(), act.out)
    }

    /// Exact `J^T cotangent` of [`Denoiser::forward`] at `(x, t)`.
    pub fn vjp_input(&self, x: &Image, t: usize, cotangent: &Image) -> Result<Image> {
        self.check(x, t)?;
        x.check_shape(cotangent, "vjp_input")?;
        let packed = self.packed(t);
        let act = net::forward(&packed, x.data(), x.width(), x.height());
        let deltas = net::backward_hidden(&packed, &act, cotangent.data());
        Image::new(x.width(), x.height(), net::input_grad(&packed, &act, &deltas))
    }

    /// Mean squared noise-prediction error over the batch and its parameter gradient.
    pub fn grad_params(&self, batch: &[TrainSample]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::contract("grad_params needs a non-empty batch"));
        }
        let mut grad = vec![0.0; PARAM_COUNT];
        let mut loss = 0.0;
        for s in batch {
            self.check(&s.x_t, s.t)?;
            s.x_t.check_shape(&s.noise, "grad_params")?;
            let emb = time_embedding(s.t, self.timesteps);
            let packed = Packed::new(self.params.values(), &emb);
            let act = net::forward(&packed, s.x_t.data(), s.x_t.width(), s.x_t.height());
            let scale = 1.0 / (batch.len() * s.x_t.len()) as f64;
            let cot: Vec<f64> = act
                .out
                .iter()
                .zip(s.noise.data())
                .map(|(o, e)| {
                    loss += (o - e) * (o - e) * scale;
                    2.0 * (o - e) * scale
                })
                .collect();
            let deltas = net::backward_hidden(&packed, &act, &cot);
            net::accumulate_param_grad(&act, &deltas, s.x_t.data(), &cot, &emb, &mut grad);
        }
        Ok((loss, grad))
    }
}

impl NoisePredictor for Denoiser {
    fn predict(&self, x_t: &Image, t: usize) -> Result<Image> {
        self.forward(x_t, t)
    }

    fn predict_with_pullback<'a>(&'a self, x_t: &Image, t: usize) -> Result<(Image, Pullback<'a>)> {
        self.check(x_t, t)?;
        let packed = self.packed(t);
        let (w, h) = (x_t.width(), x_t.height());
        let act = net::forward(&packed, x_t.data(), w, h);
        let out = Image::new(w, h, act.out.clone())?;
        let pullback = move |cot: &Image| {
            let deltas = net::backward_hidden(&packed, &act, cot.data());
            Image::new(w, h, net::input_grad(&packed, &act, &deltas)).expect("same shape")
        };
        Ok((out, Box::new(pullback)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(w, h, (0..w * h).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap()
    }

    fn random_params(seed: u64) -> DenoiserParams {
        let mut p = DenoiserParams::init(seed);
        // Non-zero biases so every code path is exercised.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
        for i in (net::B1..net::W2).chain(net::B2..net::W3).chain(net::B3..PARAM_COUNT) {
            p.values_mut()[i] = rng.random_range(-0.3..0.3);
        }
        p
    }

    fn dot(a: &Image, b: &Image) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn time_embedding_examples() {
        let e = time_embedding(200, 200);
        for (a, b) in e.iter().zip([0.0, 1.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let e = time_embedding(100, 200);
        for (a, b) in e.iter().zip([0.0, -1.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn time_embedding_is_injective() {
        for big_t in [2usize, 3, 10, 200, 1000, 10_000] {
            let mut embs: Vec<[u64; 4]> = (1..=big_t)
                .map(|t| time_embedding(t, big_t).map(|v| (v * 1e9).round() as i64 as u64))
                .collect();
            embs.sort_unstable();
            embs.dedup();
            assert_eq!(embs.len(), big_t, "T = {big_t}");
        }
    }

    #[test]
    fn zero_params_give_zero_output() {
        let d = Denoiser::new(DenoiserParams::zeros(), 50);
        let out = d.forward(&gaussian(8, 8, 1), 7).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_nonlinear_and_deterministic() {
        let d = Denoiser::new(random_params(3), 50);
        let x = gaussian(8, 8, 2);
        let a = d.forward(&x, 10).unwrap();
        let b = d.forward(&x.map(|v| 2.0 * v), 10).unwrap();
        let diff: f64 = a.data().iter().zip(b.data()).map(|(u, v)| (2.0 * u - v).abs()).sum();
        assert!(diff > 1e-3);
        assert_eq!(a, d.forward(&x, 10).unwrap());
    }

    #[test]
    fn forward_rejects_bad_input() {
        let d = Denoiser::new(random_params(3), 50);
        let mut x = gaussian(4, 4, 2);
        assert!(d.forward(&x, 0).is_err());
        assert!(d.forward(&x, 51).is_err());
        x.set(1, 1, f64::NAN);
        assert!(matches!(d.forward(&x, 3), Err(Error::Contract(_))));
    }

    #[test]
    fn vjp_zero_and_linear_in_cotangent() {
        let d = Denoiser::new(random_params(4), 50);
        let x = gaussian(8, 8, 5);
        let g0 = d.vjp_input(&x, 9, &Image::zeros(8, 8)).unwrap();
        assert!(g0.data().iter().all(|&v| v == 0.0));
        let c1 = gaussian(8, 8, 6);
        let c2 = gaussian(8, 8, 7);
        let sum = d.vjp_input(&x, 9, &c1.zip_map(&c2, |a, b| a + b)).unwrap();
        let parts = d
            .vjp_input(&x, 9, &c1)
            .unwrap()
            .zip_map(&d.vjp_input(&x, 9, &c2).unwrap(), |a, b| a + b);
        for (a, b) in sum.data().iter().zip(parts.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn vjp_matches_central_differences() {
        for seed in 0..3 {
            let d = Denoiser::new(random_params(seed), 40);
            let x = gaussian(8, 8, 100 + seed);
            let c = gaussian(8, 8, 200 + seed);
            let g = d.vjp_input(&x, 13, &c).unwrap();
            let h = 1e-5;
            for i in 0..64 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp.data_mut()[i] += h;
                xm.data_mut()[i] -= h;
                let fd = (dot(&d.forward(&xp, 13).unwrap(), &c) - dot(&d.forward(&xm, 13).unwrap(), &c))
                    / (2.0 * h);
                let an = g.data()[i];
                if an.abs() > 1e-8 {
                    assert!(((fd - an) / an).abs() < 1e-4, "seed {seed} pixel {i}: {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn pullback_matches_vjp() {
        let d = Denoiser::new(random_params(8), 40);
        let x = gaussian(6, 5, 1);
        let c = gaussian(6, 5, 2);
        let (out, pb) = d.predict_with_pullback(&x, 11).unwrap();
        assert_eq!(out, d.forward(&x, 11).unwrap());
        assert_eq!(pb(&c), d.vjp_input(&x, 11, &c).unwrap());
    }

    fn sample(seed: u64, t: usize) -> TrainSample {
        TrainSample {
            x_t: gaussian(6, 6, seed),
            t,
            noise: gaussian(6, 6, seed + 1000),
        }
    }

    #[test]
    fn param_gradient_matches_central_differences() {
        let d = Denoiser::new(random_params(11), 30);
        let batch = vec![sample(1, 4), sample(2, 29)];
        let (_, g) = d.grad_params(&batch).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut picks: Vec<usize> = (0..12).map(|_| rng.random_range(0..PARAM_COUNT)).collect();
        picks.extend([net::B1, net::W1 + 9 * 2 + 4, net::B2 + 3, net::B3, net::W3 + 5]);
        let h = 1e-5;
        for i in picks {
            let mut pp = d.params().clone();
            let mut pm = d.params().clone();
            pp.values_mut()[i] += h;
            pm.values_mut()[i] -= h;
            let lp = Denoiser::new(pp, 30).grad_params(&batch).unwrap().0;
            let lm = Denoiser::new(pm, 30).grad_params(&batch).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            if g[i].abs() > 1e-8 {
                assert!(((fd - g[i]) / g[i]).abs() < 1e-4, "param {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn perfect_predictor_has_zero_gradient() {
        let d = Denoiser::new(random_params(12), 30);
        let x = gaussian(5, 5, 1);
        let noise = d.forward(&x, 6).unwrap();
        let (loss, g) = d
            .grad_params(&[TrainSample { x_t: x, t: 6, noise }])
            .unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let d = Denoiser::new(random_params(13), 30);
        let one = vec![sample(3, 7), sample(4, 20)];
        let two: Vec<TrainSample> = one.iter().chain(one.iter()).cloned().collect();
        let (l1, g1) = d.grad_params(&one).unwrap();
        let (l2, g2) = d.grad_params(&two).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(d.grad_params(&[]).is_err());
    }

    #[test]
    fn init_is_f32_representable_and_seeded() {
        let p = DenoiserParams::init(1);
        assert!(p.values().iter().all(|&v| v as f32 as f64 == v));
        assert_eq!(p, DenoiserParams::init(1));
        assert_ne!(p, DenoiserParams::init(2));
    }
}
