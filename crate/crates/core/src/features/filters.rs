use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::imaging::Image;

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

/// Per-pixel Sobel gradient magnitude with kernels scaled by 1/8 and
/// replicate-padded borders.
pub fn sobel_magnitude(img: &Image) -> Result<Vec<f64>> {
    if img.width() < 3 || img.height() < 3 {
        return Err(Error::contract(format!(
            "sobel needs at least 3x3 pixels, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut out = Vec::with_capacity(img.len());
    for y in 0..h {
        for x in 0..w {
            let (mut gx, mut gy) = (0.0, 0.0);
            for (j, row) in SOBEL_X.iter().enumerate() {
                for (i, &k) in row.iter().enumerate() {
                    let dx = i as isize - 1;
                    let dy = j as isize - 1;
                    gx += k * img.get_clamped(x + dx, y + dy);
                    // The y kernel is the transpose of the x kernel.
                    gy += k * img.get_clamped(x + dy, y + dx);
                }
            }
            gx /= 8.0;
            gy /= 8.0;
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    Ok(out)
}

/// A bank of real, zero-mean Gabor kernels.
///
/// Orientation `k` has angle `theta = k * pi / K`; its carrier is
/// `cos(2 pi (u sin theta + v cos theta) / lambda)`, so orientation 0 responds
/// to horizontal stripes (intensity varying along y). The envelope is an
/// isotropic Gaussian with `sigma = 0.56 * lambda`; the kernel spans
/// `2 * ceil(0.75 * lambda) + 1` pixels per side.
#[derive(Debug, Clone)]
pub struct GaborBank {
    half: usize,
    kernels: Vec<Vec<f64>>,
}

impl GaborBank {
    pub fn new(orientations: usize, wavelength: f64) -> Self {
        let half = (0.75 * wavelength).ceil() as usize;
        let side = 2 * half + 1;
        let sigma = 0.56 * wavelength;
        let kernels = (0..orientations)
            .map(|k| {
                let theta = k as f64 * PI / orientations as f64;
                let (s, c) = theta.sin_cos();
                let mut ker = Vec::with_capacity(side * side);
                for v in -(half as isize)..=half as isize {
                    for u in -(half as isize)..=half as isize {
                        let (uf, vf) = (u as f64, v as f64);
                        let env = (-(uf * uf + vf * vf) / (2.0 * sigma * sigma)).exp();
                        ker.push(env * (2.0 * PI * (uf * s + vf * c) / wavelength).cos());
                    }
                }
                let mean = ker.iter().sum::<f64>() / ker.len() as f64;
                ker.iter_mut().for_each(|v| *v -= mean);
                ker
            })
            .collect();
        Self { half, kernels }
    }

    pub fn support(&self) -> usize {
        2 * self.half + 1
    }

    pub fn orientations(&self) -> usize {
        self.kernels.len()
    }

    /// One response map per orientation, replicate padding.
    pub fn apply(&self, img: &Image) -> Result<Vec<Vec<f64>>> {
        let side = self.support();
        if img.width() < side || img.height() < side {
            return Err(Error::contract(format!(
                "gabor bank needs at least {side}x{side} pixels, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        let (w, h) = (img.width() as isize, img.height() as isize);
        let half = self.half as isize;
        let mut maps = vec![Vec::with_capacity(img.len()); self.kernels.len()];
        let mut patch = vec![0.0; side * side];
        for y in 0..h {
            for x in 0..w {
                let mut p = 0;
                for v in -half..=half {
                    for u in -half..=half {
                        patch[p] = img.get_clamped(x + u, y + v);
                        p += 1;
                    }
                }
                for (ker, map) in self.kernels.iter().zip(maps.iter_mut()) {
                    map.push(ker.iter().zip(&patch).map(|(k, v)| k * v).sum());
                }
            }
        }
        Ok(maps)
    }
}
