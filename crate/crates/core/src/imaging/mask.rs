//! Mask generators for the completion benchmark.
//!
//! Free-form kinds paint brush strokes along random polylines (and, for the
//! wide kinds, random rectangles) until the unknown fraction reaches a target
//! drawn inside the kind's band. A stamp that would overshoot the band is
//! replaced by a single pixel, so the final fraction always lands in band.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Mask;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Narrow,
    Wide1,
    Wide2,
    HalfVertical,
    HalfHorizontal,
    Expand,
}

impl MaskKind {
    pub const ALL: [MaskKind; 6] = [
        MaskKind::Narrow,
        MaskKind::Wide1,
        MaskKind::Wide2,
        MaskKind::HalfVertical,
        MaskKind::HalfHorizontal,
        MaskKind::Expand,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MaskKind::Narrow => "narrow",
            MaskKind::Wide1 => "wide1",
            MaskKind::Wide2 => "wide2",
            MaskKind::HalfVertical => "half_vertical",
            MaskKind::HalfHorizontal => "half_horizontal",
            MaskKind::Expand => "expand",
        }
    }

    /// Unknown-fraction band `(lo, hi]` for the free-form kinds.
    pub fn band(self) -> Option<(f64, f64)> {
        match self {
            MaskKind::Narrow => Some((0.0, 0.15)),
            MaskKind::Wide1 => Some((0.15, 0.35)),
            MaskKind::Wide2 => Some((0.35, 0.55)),
            _ => None,
        }
    }
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown mask kind '{s}'")))
    }
}

pub fn make_mask(kind: MaskKind, seed: u64, size: usize) -> Result<Mask> {
    if size < 2 {
        return Err(Error::contract("mask size must be at least 2"));
    }
    let n = size;
    let half = n.div_ceil(2);
    let mask = match kind {
        MaskKind::HalfVertical => Mask::from_fn(n, n, |x, _| x >= half),
        MaskKind::HalfHorizontal => Mask::from_fn(n, n, |_, y| y >= half),
        MaskKind::Expand => {
            let off = (n - half) / 2;
            Mask::from_fn(n, n, |x, y| {
                (off..off + half).contains(&x) && (off..off + half).contains(&y)
            })
        }
        MaskKind::Narrow | MaskKind::Wide1 | MaskKind::Wide2 => {
            let (lo, hi) = kind.band().expect("free-form kind has a band");
            let mut rng = rng::stream_indexed(seed, kind.name(), &[n as u64]);
            // Keep the target a few pixels inside the band.
            let px = 1.0 / (n * n) as f64;
            let target = rng.random_range((lo + 0.3 * (hi - lo)).max(px)..=hi - px);
            let mut painter = Painter::new(n, target, hi);
            painter.paint(kind, &mut rng);
            Mask::new(n, n, painter.known)?
        }
    };
    Ok(mask)
}

struct Painter {
    n: usize,
    known: Vec<bool>,
    unknown: usize,
    target: usize,
    limit: usize,
}

impl Painter {
    fn new(n: usize, target: f64, hi: f64) -> Self {
        let total = (n * n) as f64;
        Self {
            n,
            known: vec![true; n * n],
            unknown: 0,
            target: ((target * total).ceil() as usize).max(1),
            limit: (hi * total).floor() as usize,
        }
    }

    fn done(&self) -> bool {
        self.unknown >= self.target
    }

    fn stamp(&mut self, cx: f64, cy: f64, radius: f64) {
        if self.done() {
            return;
        }
        let n = self.n as isize;
        let r = radius.ceil() as isize;
        let (ix, iy) = (cx.round() as isize, cy.round() as isize);
        let mut fresh = Vec::new();
        for y in (iy - r).max(0)..=(iy + r).min(n - 1) {
            for x in (ix - r).max(0)..=(ix + r).min(n - 1) {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let idx = (y * n + x) as usize;
                if d2 <= radius * radius + 0.25 && self.known[idx] {
                    fresh.push(idx);
                }
            }
        }
        if self.unknown + fresh.len() > self.limit {
            // Overshoot: fall back to the centre pixel only.
            let idx = (iy.clamp(0, n - 1) * n + ix.clamp(0, n - 1)) as usize;
            fresh.clear();
            if self.known[idx] {
                fresh.push(idx);
            }
        }
        for idx in fresh {
            self.known[idx] = false;
            self.unknown += 1;
        }
    }

    fn polyline(&mut self, rng: &mut ChaCha8Rng, radius: f64) {
        let n = self.n as f64;
        let mut x = rng.random_range(0.0..n);
        let mut y = rng.random_range(0.0..n);
        let mut angle = rng.random_range(0.0..std::f64::consts::TAU);
        for _ in 0..rng.random_range(2..=5) {
            angle += rng.random_range(-1.2..1.2);
            let len = rng.random_range(n / 8.0..n / 3.0);
            let steps = (len * 2.0).ceil() as usize;
            for _ in 0..steps {
                self.stamp(x, y, radius);
                x = (x + 0.5 * angle.cos()).clamp(0.0, n - 1.0);
                y = (y + 0.5 * angle.sin()).clamp(0.0, n - 1.0);
            }
        }
    }

    fn rectangle(&mut self, rng: &mut ChaCha8Rng) {
        let n = self.n;
        let w = rng.random_range((n / 8).max(1)..=(n / 3).max(1));
        let h = rng.random_range((n / 8).max(1)..=(n / 3).max(1));
        let x0 = rng.random_range(0..=n - w);
        let y0 = rng.random_range(0..=n - h);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.stamp(x as f64, y as f64, 0.0);
            }
        }
    }

    fn paint(&mut self, kind: MaskKind, rng: &mut ChaCha8Rng) {
        let scale = self.n as f64 / 32.0;
        for _ in 0..64 {
            if self.done() {
                return;
            }
            match kind {
                MaskKind::Narrow => {
                    let radius = rng.random_range(0.0..1.0) * scale.max(0.5);
                    self.polyline(rng, radius);
                }
                _ => {
                    if rng.random_bool(0.5) {
                        self.rectangle(rng);
                    } else {
                        let radius = rng.random_range(1.0..3.0) * scale.max(0.5);
                        self.polyline(rng, radius);
                    }
                }
            }
        }
        // Unlucky draws: finish with single pixels.
        while !self.done() {
            let idx = rng.random_range(0..self.known.len());
            if self.known[idx] {
                self.known[idx] = false;
                self.unknown += 1;
            }
        }
    }
}
