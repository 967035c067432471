//! Naive reference implementations for tests.
//!
//! Nothing here shares code with the library under test. Everything favours
//! being obviously correct over being fast.

use std::fmt::Write as _;
use std::ops::{Add, Mul, Sub};

/// Minimum over all bijections of the mean squared matched difference.
///
/// Exhaustive, so keep inputs at eight values or fewer.
pub fn permutation_wasserstein(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    assert!(a.len() <= 8, "exhaustive search is limited to 8 values");
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let cost: f64 = (0..n).map(|i| (a[i] - b[p[i]]).powi(2)).sum::<f64>() / n as f64;
        if cost < best {
            best = cost;
        }
    });
    best
}

fn permute(p: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_diff_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error with an absolute floor, for gradient comparisons.
pub fn rel_err(expected: f64, actual: f64) -> f64 {
    (expected - actual).abs() / expected.abs().max(actual.abs()).max(1e-300)
}

/// Timesteps visited by the sampler's denoise/rewind loop.
///
/// A step at level `t` produces level `t - 1`. Whenever the new level is a
/// positive multiple of `interval` at least `interval` below the top, the
/// sampler either rewinds to `t + interval - 1` (spending one jump) or, when
/// no jumps remain, refills the jump budget and carries on.
pub fn trace_simulator(timesteps: usize, interval: usize, jumps: usize) -> Vec<usize> {
    let mut visited = Vec::new();
    let mut level = timesteps as i64;
    let mut budget = jumps as i64;
    let top = timesteps as i64;
    let dt = interval as i64;
    while level > 0 {
        visited.push(level as usize);
        level -= 1;
        let checkpoint = level > 0 && level + dt <= top && level % dt == 0;
        if !checkpoint {
            continue;
        }
        if budget == 0 {
            budget = jumps as i64;
        } else {
            budget -= 1;
            level += dt - 1;
        }
    }
    visited
}

/// Value with a single forward-mode tangent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub fn constant(v: f64) -> Self {
        Dual { v, d: 0.0 }
    }

    pub fn tanh(self) -> Self {
        let t = self.v.tanh();
        Dual {
            v: t,
            d: (1.0 - t * t) * self.d,
        }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual {
            v: self.v + o.v,
            d: self.d + o.d,
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual {
            v: self.v - o.v,
            d: self.d - o.d,
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual {
            v: self.v * o.v,
            d: self.d * o.v + self.v * o.d,
        }
    }
}

/// One 3x3 convolution with replicate padding over channel-major planes.
/// `weights` is `[out][in][ky][kx]`.
fn conv3x3(
    planes: &[Vec<Dual>],
    w: usize,
    h: usize,
    weights: &[f64],
    bias: &[f64],
    outs: usize,
) -> Vec<Vec<Dual>> {
    let ins = planes.len();
    assert_eq!(weights.len(), outs * ins * 9);
    let mut result = vec![vec![Dual::constant(0.0); w * h]; outs];
    for (o, plane) in result.iter_mut().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let mut acc = Dual::constant(bias[o]);
                for (c, input) in planes.iter().enumerate() {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let yy = (y as i64 + ky as i64 - 1).clamp(0, h as i64 - 1) as usize;
                            let xx = (x as i64 + kx as i64 - 1).clamp(0, w as i64 - 1) as usize;
                            let wt = weights[((o * ins + c) * 3 + ky) * 3 + kx];
                            acc = acc + Dual::constant(wt) * input[yy * w + xx];
                        }
                    }
                }
                plane[y * w + x] = acc;
            }
        }
    }
    result
}

/// Straight-line evaluation of the three-layer noise predictor.
///
/// The input planes are the image followed by one constant plane per
/// embedding value. Parameters are `w1, b1, w2, b2, w3, b3` with 16 hidden
/// channels. Returns value and tangent in direction `dir` per pixel.
pub fn naive_net(params: &[f64], image: &[f64], dir: &[f64], w: usize, h: usize, embedding: &[f64]) -> Vec<Dual> {
    const HID: usize = 16;
    let cin = 1 + embedding.len();
    let sizes = [HID * cin * 9, HID, HID * HID * 9, HID, HID * 9, 1];
    let mut chunks = Vec::new();
    let mut at = 0;
    for s in sizes {
        chunks.push(&params[at..at + s]);
        at += s;
    }
    assert_eq!(at, params.len(), "parameter count mismatch");

    let mut input = vec![image.iter().zip(dir).map(|(&v, &d)| Dual { v, d }).collect::<Vec<_>>()];
    for &e in embedding {
        input.push(vec![Dual::constant(e); w * h]);
    }
    let act = |planes: Vec<Vec<Dual>>| -> Vec<Vec<Dual>> {
        planes
            .into_iter()
            .map(|p| p.into_iter().map(Dual::tanh).collect())
            .collect()
    };
    let h1 = act(conv3x3(&input, w, h, chunks[0], chunks[1], HID));
    let h2 = act(conv3x3(&h1, w, h, chunks[2], chunks[3], HID));
    conv3x3(&h2, w, h, chunks[4], chunks[5], 1).remove(0)
}

/// Collects named checks and renders them as TAP lines.
#[derive(Debug, Default)]
pub struct OracleReport {
    lines: Vec<(bool, String)>,
}

impl OracleReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check(&mut self, ok: bool, name: impl Into<String>) -> bool {
        self.lines.push((ok, name.into()));
        ok
    }

    pub fn passed(&self) -> bool {
        self.lines.iter().all(|(ok, _)| *ok)
    }

    pub fn tap(&self) -> String {
        let mut out = format!("1..{}\n", self.lines.len());
        for (i, (ok, name)) in self.lines.iter().enumerate() {
            let status = if *ok { "ok" } else { "not ok" };
            let _ = writeln!(out, "{status} {} - {name}", i + 1);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_oracle_small_cases() {
        assert_eq!(permutation_wasserstein(&[0.0, 1.0], &[1.0, 2.0]), 1.0);
        assert_eq!(permutation_wasserstein(&[2.0, 0.0], &[0.0, 2.0]), 0.0);
    }

    #[test]
    fn finite_differences_of_a_quadratic() {
        let g = finite_diff_grad(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 5.0], 1e-4);
        assert!((g[0] - 4.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn simulator_hand_trace() {
        assert_eq!(trace_simulator(6, 3, 1), vec![6, 5, 4, 5, 4, 3, 2, 1]);
        assert_eq!(trace_simulator(4, 2, 0), vec![4, 3, 2, 1]);
    }

    #[test]
    fn dual_product_rule() {
        let x = Dual { v: 3.0, d: 1.0 };
        let y = x * x - Dual::constant(1.0);
        assert_eq!(y, Dual { v: 8.0, d: 6.0 });
    }

    #[test]
    fn tap_rendering() {
        let mut r = OracleReport::new();
        r.check(true, "a");
        r.check(false, "b");
        assert_eq!(r.tap(), "1..2\nok 1 - a\nnot ok 2 - b\n");
        assert!(!r.passed());
    }
}
