//! Procedural grayscale patterns used as a stand-in training and test set.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Gradient,
    Stripes,
    Checker,
    Blobs,
    Rings,
}

impl PatternKind {
    pub const ALL: [PatternKind; 5] = [
        PatternKind::Gradient,
        PatternKind::Stripes,
        PatternKind::Checker,
        PatternKind::Blobs,
        PatternKind::Rings,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PatternKind::Gradient => "gradient",
            PatternKind::Stripes => "stripes",
            PatternKind::Checker => "checker",
            PatternKind::Blobs => "blobs",
            PatternKind::Rings => "rings",
        }
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PatternKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown pattern kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyDatasetSpec {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    pub kinds: Vec<PatternKind>,
}

impl Default for ToyDatasetSpec {
    fn default() -> Self {
        Self {
            count: 500,
            size: 32,
            seed: 0,
            kinds: PatternKind::ALL.to_vec(),
        }
    }
}

impl ToyDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count < 1 {
            return Err(Error::config("dataset count must be at least 1"));
        }
        if self.size < 8 {
            return Err(Error::config(format!(
                "image size {} is below the minimum of 8",
                self.size
            )));
        }
        if self.kinds.is_empty() {
            return Err(Error::config("dataset needs at least one pattern kind"));
        }
        Ok(())
    }
}

/// Image `i` uses kind `kinds[i % len]` and a seed derived from `(seed, i)`.
pub fn gen_toy_dataset(spec: &ToyDatasetSpec) -> Result<Vec<Image>> {
    spec.validate()?;
    (0..spec.count)
        .map(|i| {
            let kind = spec.kinds[i % spec.kinds.len()];
            gen_toy_image(
                kind,
                rng::derive_indexed(spec.seed, "toy-image", &[i as u64]),
                spec.size,
            )
        })
        .collect()
}

/// Deterministic pattern image of the given kind.
///
/// Every kind spans at least `[0.1, 0.9]`. `Gradient` with `seed % 4 == 0`
/// runs from 0 on the top row to 1 on the bottom row; other residues flip or
/// rotate it. `Checker` alternates full-contrast blocks whose side is drawn
/// from `{2, 4, 8}` but capped at `size / 4`.
pub fn gen_toy_image(kind: PatternKind, seed: u64, size: usize) -> Result<Image> {
    if size < 8 {
        return Err(Error::contract(format!(
            "toy image size {size} is below the minimum of 8"
        )));
    }
    let n = size;
    let last = (n - 1) as f64;
    let mut rng = rng::stream_indexed(seed, kind.name(), &[n as u64]);
    let img = match kind {
        PatternKind::Gradient => {
            let dir = seed % 4;
            Image::from_fn(n, n, |x, y| match dir {
                0 => y as f64 / last,
                1 => 1.0 - y as f64 / last,
                2 => x as f64 / last,
                _ => 1.0 - x as f64 / last,
            })
        }
        PatternKind::Stripes => {
            let horizontal = rng.random_bool(0.5);
            let period = rng.random_range(5.0..10.0);
            let phase = rng.random_range(0.0..period);
            Image::from_fn(n, n, |x, y| {
                let coord = if horizontal { y } else { x } as f64;
                let s = ((coord + phase) / period).rem_euclid(1.0);
                // Trapezoid wave: flat plateaus joined by short ramps.
                let tri = 1.0 - 2.0 * (s - 0.5).abs();
                ((tri - 0.3) / 0.4).clamp(0.0, 1.0)
            })
        }
        PatternKind::Checker => {
            let options: Vec<usize> = [2, 4, 8].into_iter().filter(|&c| c <= n / 4).collect();
            let options = if options.is_empty() { vec![2] } else { options };
            let cell = options[(seed as usize) % options.len()];
            let invert = (seed / 3) % 2 == 1;
            Image::from_fn(n, n, |x, y| {
                let on = ((x / cell) + (y / cell)) % 2 == 0;
                if on != invert {
                    1.0
                } else {
                    0.0
                }
            })
        }
        PatternKind::Blobs => {
            let count = rng.random_range(3..=5);
            let blobs: Vec<(f64, f64, f64, f64)> = (0..count)
                .map(|_| {
                    (
                        rng.random_range(0.0..last),
                        rng.random_range(0.0..last),
                        rng.random_range(n as f64 / 10.0..n as f64 / 4.0),
                        if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                    )
                })
                .collect();
            let raw = Image::from_fn(n, n, |x, y| {
                blobs
                    .iter()
                    .map(|&(cx, cy, s, a)| {
                        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                        a * (-d2 / (2.0 * s * s)).exp()
                    })
                    .sum()
            });
            normalize(raw)
        }
        PatternKind::Rings => {
            let cx = rng.random_range(0.3 * last..0.7 * last);
            let cy = rng.random_range(0.3 * last..0.7 * last);
            let period = rng.random_range(6.0..10.0);
            let radius = rng.random_range(0.3..0.5) * n as f64;
            let outside = rng.random_range(0.2..0.8);
            Image::from_fn(n, n, |x, y| {
                let r = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                if r <= radius {
                    0.5 + 0.5 * (2.0 * PI * r / period).cos()
                } else {
                    outside
                }
            })
        }
    };
    Ok(img)
}

fn normalize(img: Image) -> Image {
    let lo = img.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = img.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span <= 0.0 {
        return img.map(|_| 0.5);
    }
    img.map(|v| (v - lo) / span)
}
