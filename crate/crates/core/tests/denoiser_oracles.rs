//! Denoiser passes checked against naive and finite-difference references.

use confill_core::denoiser::{time_embedding, Denoiser, DenoiserParams, TrainSample, PARAM_COUNT};
use confill_core::Image;
use confill_oracles::{finite_diff_grad, naive_net, rel_err};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_denoiser(seed: u64, timesteps: usize) -> Denoiser {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = DenoiserParams::from_values(random_vec(PARAM_COUNT, 0.25, &mut rng)).unwrap();
    Denoiser::new(params, timesteps)
}

#[test]
fn forward_and_vjp_agree_with_dual_numbers() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let net = random_denoiser(seed, 100);
        let t = rng.random_range(1..=100);
        let x = random_vec(16, 1.5, &mut rng);
        let dir = random_vec(16, 1.0, &mut rng);
        let cot = random_vec(16, 1.0, &mut rng);
        let reference = naive_net(net.params().values(), &x, &dir, 4, 4, &time_embedding(t, 100));

        let img = Image::new(4, 4, x).unwrap();
        let out = net.forward(&img, t).unwrap();
        for (a, r) in out.data().iter().zip(&reference) {
            assert!((a - r.v).abs() < 1e-10, "seed {seed}: {a} vs {}", r.v);
        }
        // <J^T c, v> must equal <c, J v>.
        let vjp = net.vjp_input(&img, t, &Image::new(4, 4, cot.clone()).unwrap()).unwrap();
        let lhs: f64 = vjp.data().iter().zip(&dir).map(|(g, v)| g * v).sum();
        let rhs: f64 = cot.iter().zip(&reference).map(|(c, r)| c * r.d).sum();
        assert!((lhs - rhs).abs() < 1e-10, "seed {seed}: {lhs} vs {rhs}");
    }
}

#[test]
fn input_gradient_matches_finite_differences_over_twenty_seeds() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let net = random_denoiser(100 + seed, 200);
        let t = rng.random_range(1..=200);
        let x = random_vec(64, 2.0, &mut rng);
        let cot = Image::new(8, 8, random_vec(64, 1.0, &mut rng)).unwrap();
        let grad = net.vjp_input(&Image::new(8, 8, x.clone()).unwrap(), t, &cot).unwrap();
        let f = |v: &[f64]| -> f64 {
            let out = net.forward(&Image::new(8, 8, v.to_vec()).unwrap(), t).unwrap();
            out.data().iter().zip(cot.data()).map(|(a, b)| a * b).sum()
        };
        let fd = finite_diff_grad(f, &x, 1e-5);
        for (i, (&a, &n)) in grad.data().iter().zip(&fd).enumerate() {
            if a.abs() > 1e-8 {
                assert!(rel_err(n, a) < 1e-4, "seed {seed} pixel {i}: fd {n} vs {a}");
            }
        }
    }
}

#[test]
fn parameter_gradient_matches_finite_differences_over_twenty_seeds() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let net = random_denoiser(200 + seed, 50);
        let batch: Vec<TrainSample> = (0..2)
            .map(|_| TrainSample {
                x_t: Image::new(6, 6, random_vec(36, 2.0, &mut rng)).unwrap(),
                t: rng.random_range(1..=50),
                noise: Image::new(6, 6, random_vec(36, 1.5, &mut rng)).unwrap(),
            })
            .collect();
        let (_, grad) = net.grad_params(&batch).unwrap();
        let picks: Vec<usize> = (0..5).map(|_| rng.random_range(0..PARAM_COUNT)).collect();
        let base = net.params().values().to_vec();
        let loss = |p: &[f64]| -> f64 {
            let mut full = base.clone();
            for (k, &i) in picks.iter().enumerate() {
                full[i] = p[k];
            }
            Denoiser::new(DenoiserParams::from_values(full).unwrap(), 50)
                .grad_params(&batch)
                .unwrap()
                .0
        };
        let at: Vec<f64> = picks.iter().map(|&i| base[i]).collect();
        let fd = finite_diff_grad(loss, &at, 1e-5);
        for (k, &i) in picks.iter().enumerate() {
            if grad[i].abs() > 1e-8 {
                assert!(rel_err(fd[k], grad[i]) < 1e-4, "seed {seed} param {i}: fd {} vs {}", fd[k], grad[i]);
            }
        }
    }
}
