//! Grayscale images, known/unknown masks, and their file formats.
//!
//! [`Image`] is a dense row-major grid of `f64`. Images loaded from disk or
//! produced by the toy generators lie in `[0, 1]`; the sampler reuses the same
//! type for noisy latents, which are unbounded.

mod mask;
mod pgm;
mod toy;

pub use mask::{make_mask, MaskKind};
pub use pgm::{read_mask_pgm, read_pgm, write_mask_pgm, write_pgm};
pub use toy::{gen_toy_dataset, gen_toy_image, PatternKind, ToyDatasetSpec};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::contract("image dimensions must be non-zero"));
        }
        if data.len() != width * height {
            return Err(Error::contract(format!(
                "image data has {} values, expected {}x{}={}",
                data.len(),
                width,
                height,
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be non-zero");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be non-zero");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Value at `(x, y)` with coordinates clamped into the image (replicate padding).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "{what}: shape mismatch {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    /// True when every intensity lies in `[0, 1]`.
    pub fn is_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
        debug_assert!(self.same_shape(other));
        Image {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Transpose rows and columns.
    pub fn transposed(&self) -> Image {
        Image::from_fn(self.height, self.width, |x, y| self.get(y, x))
    }

    /// Rotate 90 degrees counter-clockwise: `out(x, y) = in(w - 1 - y, x)`.
    pub fn rotated90(&self) -> Image {
        let w = self.width;
        Image::from_fn(self.height, self.width, |x, y| self.get(w - 1 - y, x))
    }
}

/// Binary partition into known (`true`) and unknown pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    known: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, known: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || known.len() != width * height {
            return Err(Error::contract(format!(
                "mask has {} flags, expected {}x{}",
                known.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            known,
        })
    }

    pub fn all_known(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            known: vec![true; width * height],
        }
    }

    pub fn all_unknown(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            known: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut known = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                known.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            known,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn known(&self) -> &[bool] {
        &self.known
    }

    #[inline]
    pub fn is_known(&self, x: usize, y: usize) -> bool {
        self.known[y * self.width + x]
    }

    pub fn known_count(&self) -> usize {
        self.known.iter().filter(|&&k| k).count()
    }

    pub fn unknown_count(&self) -> usize {
        self.known.len() - self.known_count()
    }

    pub fn unknown_fraction(&self) -> f64 {
        self.unknown_count() as f64 / self.known.len() as f64
    }

    pub fn matches(&self, img: &Image) -> bool {
        self.width == img.width() && self.height == img.height()
    }

    pub(crate) fn check_matches(&self, img: &Image, what: &str) -> Result<()> {
        if self.matches(img) {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "{what}: mask {}x{} does not match image {}x{}",
                self.width,
                self.height,
                img.width(),
                img.height()
            )))
        }
    }

    /// Number of 4-connected components of unknown pixels.
    pub fn unknown_components(&self) -> usize {
        let (w, h) = (self.width, self.height);
        let mut seen = vec![false; w * h];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..w * h {
            if self.known[start] || seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                let mut visit = |j: usize| {
                    if !self.known[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
        }
        count
    }
}

/// Known pixels from `r0`, unknown pixels from `generated`.
pub fn composite(r0: &Image, generated: &Image, mask: &Mask) -> Result<Image> {
    r0.check_shape(generated, "composite")?;
    mask.check_matches(r0, "composite")?;
    let data = r0
        .data()
        .iter()
        .zip(generated.data())
        .zip(mask.known())
        .map(|((&r, &g), &k)| if k { r } else { g })
        .collect();
    Image::new(r0.width(), r0.height(), data)
}
