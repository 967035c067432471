//! Contextual features of image cells.
//!
//! The image is tiled into square cells. For each cell we measure textural
//! complexity (population variance) and structural complexity (fraction of
//! pixels whose Sobel magnitude exceeds a threshold), combine them into an
//! adaptability weight, and derive how many pixels to sample from the cell.
//! The context vector of a cell is
//! `[mean, variance, mean sobel, mean |gabor_0|, ..., mean |gabor_{K-1}|]`,
//! optionally followed by the means of external feature channels.
//!
//! When a mask is supplied, statistics use known pixels only and features are
//! computed on the "selected" image: unknown pixels are replaced by the mean
//! of the known ones, so nothing about the unknown region leaks in.

mod cfeat;
mod filters;

pub use cfeat::ExternalFeatures;
pub use filters::{sobel_magnitude, GaborBank};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Image, Mask};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub cell_size: usize,
    pub gabor_orientations: usize,
    pub gabor_wavelength: f64,
    /// Sobel magnitude above which a pixel counts as an edge.
    pub edge_threshold: f64,
    /// Variance sensitivity of the texture term.
    pub psi: f64,
    /// Texture weight.
    pub alpha_hat: f64,
    /// Structure weight.
    pub beta_hat: f64,
    /// Amplitude of the contextual scaling.
    pub upsilon: f64,
    /// Sensitivity of the contextual scaling.
    pub tau: f64,
    /// Maximum samples per cell; `None` means `cell_size^2`.
    pub max_samples: Option<usize>,
    /// Use `1 - exp(..)` for the texture term so busier cells weigh more.
    pub invert_texture_term: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            cell_size: 8,
            gabor_orientations: 4,
            gabor_wavelength: 4.0,
            edge_threshold: 0.1,
            psi: 10.0,
            alpha_hat: 0.5,
            beta_hat: 0.5,
            upsilon: 0.1,
            tau: 0.02,
            max_samples: None,
            invert_texture_term: false,
        }
    }
}

impl FeatureConfig {
    pub fn max_samples(&self) -> usize {
        self.max_samples.unwrap_or(self.cell_size * self.cell_size)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m));
        if self.cell_size < 2 {
            return bad("cell_size must be at least 2");
        }
        if self.gabor_orientations < 1 {
            return bad("gabor_orientations must be at least 1");
        }
        if !(self.gabor_wavelength > 0.0) {
            return bad("gabor_wavelength must be positive");
        }
        if !(self.alpha_hat >= 0.0 && self.beta_hat >= 0.0 && self.alpha_hat + self.beta_hat > 0.0)
        {
            return bad("alpha_hat and beta_hat must be non-negative with a positive sum");
        }
        if !(self.upsilon >= 0.0) {
            return bad("upsilon must be non-negative");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.psi > 0.0) {
            return bad("psi must be positive");
        }
        let m = self.max_samples();
        if m < 1 || m > self.cell_size * self.cell_size {
            return bad("max_samples must lie in [1, cell_size^2]");
        }
        Ok(())
    }

    /// Dimension of the handcrafted context vector.
    pub fn context_dim(&self) -> usize {
        3 + self.gabor_orientations
    }
}

/// Adaptability weight of a cell with `n` pixels.
///
/// `alpha_hat * exp(-psi * var * n / (n - 1)) + beta_hat * edge_density`; the
/// exponential becomes `1 - exp(..)` under `invert_texture_term`.
pub fn adaptability(variance: f64, edge_density: f64, n: usize, cfg: &FeatureConfig) -> Result<f64> {
    if n < 2 {
        return Err(Error::contract(format!(
            "adaptability needs at least 2 pixels per cell, got {n}"
        )));
    }
    let unbiased = variance * n as f64 / (n - 1) as f64;
    let decay = (-cfg.psi * unbiased).exp();
    let texture = if cfg.invert_texture_term {
        1.0 - decay
    } else {
        decay
    };
    Ok(cfg.alpha_hat * texture + cfg.beta_hat * edge_density)
}

/// `max(1, min(cell_len, ceil(m * weight)))`.
pub fn sample_count(weight: f64, cell_len: usize, cfg: &FeatureConfig) -> usize {
    let want = (cfg.max_samples() as f64 * weight).ceil();
    let want = if want.is_finite() && want > 0.0 {
        want as usize
    } else {
        1
    };
    want.clamp(1, cell_len.max(1))
}

/// Contextual scaling `1 + upsilon * exp(-tau * |cx - cy|)`, Euclidean norm.
pub fn scaling(cx: &[f64], cy: &[f64], cfg: &FeatureConfig) -> f64 {
    debug_assert_eq!(cx.len(), cy.len());
    let dist = cx
        .iter()
        .zip(cy)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    1.0 + cfg.upsilon * (-cfg.tau * dist).exp()
}

/// Replace unknown pixels by the mean of the known ones.
pub fn select(img: &Image, mask: &Mask) -> Image {
    let (sum, count) = img
        .data()
        .iter()
        .zip(mask.known())
        .filter(|(_, &k)| k)
        .fold((0.0, 0usize), |(s, c), (&v, _)| (s + v, c + 1));
    let fill = if count > 0 { sum / count as f64 } else { 0.0 };
    let data = img
        .data()
        .iter()
        .zip(mask.known())
        .map(|(&v, &k)| if k { v } else { fill })
        .collect();
    Image::new(img.width(), img.height(), data).expect("same shape")
}

/// A rectangular cell and the pixels of it that take part in comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    /// Row-major indices of eligible (known) pixels.
    pub pixels: Vec<usize>,
    pub variance: f64,
    pub edge_density: f64,
    /// Adaptability weight; zero for inactive cells.
    pub weight: f64,
    /// Sampled pixel indices, a sorted subset of `pixels`.
    pub samples: Vec<usize>,
    /// Context vector of the reference image on this cell.
    pub context: Vec<f64>,
}

impl Cell {
    /// Cells with fewer than two eligible pixels carry no statistics.
    pub fn is_active(&self) -> bool {
        self.pixels.len() >= 2
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

/// How cell weights are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// Adaptability-weighted, with sample counts following the weight.
    #[default]
    Adaptive,
    /// Every active cell weighs 1 and samples `min(m, |cell|)` pixels.
    Uniform,
}

/// Feature maps of one image.
#[derive(Debug, Clone)]
pub struct FeatureMaps {
    pub intensity: Image,
    pub sobel: Vec<f64>,
    pub gabor: Vec<Vec<f64>>,
}

/// Computes feature maps and context vectors under one configuration.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    bank: GaborBank,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let bank = GaborBank::new(cfg.gabor_orientations, cfg.gabor_wavelength);
        Ok(Self { cfg, bank })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    /// Feature maps of `img`, or of its selection when a mask is given.
    pub fn maps(&self, img: &Image, mask: Option<&Mask>) -> Result<FeatureMaps> {
        let intensity = match mask {
            Some(m) => {
                m.check_matches(img, "feature maps")?;
                select(img, m)
            }
            None => img.clone(),
        };
        let sobel = sobel_magnitude(&intensity)?;
        let gabor = self.bank.apply(&intensity)?;
        Ok(FeatureMaps {
            intensity,
            sobel,
            gabor,
        })
    }

    /// Context vector over the given pixel set.
    pub fn context_vector(
        &self,
        maps: &FeatureMaps,
        pixels: &[usize],
        external: Option<&ExternalFeatures>,
    ) -> Vec<f64> {
        let n = pixels.len().max(1) as f64;
        let mean_of = |f: &dyn Fn(usize) -> f64| pixels.iter().map(|&p| f(p)).sum::<f64>() / n;
        let data = maps.intensity.data();
        let mean = mean_of(&|p| data[p]);
        let var = mean_of(&|p| (data[p] - mean) * (data[p] - mean));
        let mut c = Vec::with_capacity(self.cfg.context_dim());
        c.push(mean);
        c.push(var);
        c.push(mean_of(&|p| maps.sobel[p]));
        for g in &maps.gabor {
            c.push(mean_of(&|p| g[p].abs()));
        }
        if let Some(ext) = external {
            for ch in 0..ext.depth {
                c.push(mean_of(&|p| ext.at(p, ch) as f64));
            }
        }
        c
    }

    /// Context vectors of every cell of `grid`, evaluated on `img`.
    pub fn context_vectors(
        &self,
        img: &Image,
        grid: &CellGrid,
        external: Option<&ExternalFeatures>,
    ) -> Result<Vec<Vec<f64>>> {
        let maps = self.maps(img, grid.mask.as_ref())?;
        Ok(grid
            .cells
            .iter()
            .map(|c| self.context_vector(&maps, &c.pixels, external))
            .collect())
    }
}

/// Population variance of each cell's eligible pixels.
pub fn local_variance(img: &Image, cells: &[Cell]) -> Vec<f64> {
    cells
        .iter()
        .map(|c| {
            if c.pixels.is_empty() {
                return 0.0;
            }
            let n = c.pixels.len() as f64;
            let mean = c.pixels.iter().map(|&p| img.data()[p]).sum::<f64>() / n;
            c.pixels
                .iter()
                .map(|&p| (img.data()[p] - mean).powi(2))
                .sum::<f64>()
                / n
        })
        .collect()
}

/// Fraction of each cell's eligible pixels whose Sobel magnitude exceeds `threshold`.
pub fn edge_density(img: &Image, cells: &[Cell], threshold: f64) -> Result<Vec<f64>> {
    let sobel = sobel_magnitude(img)?;
    Ok(edge_density_from(&sobel, cells, threshold))
}

fn edge_density_from(sobel: &[f64], cells: &[Cell], threshold: f64) -> Vec<f64> {
    cells
        .iter()
        .map(|c| {
            if c.pixels.is_empty() {
                return 0.0;
            }
            let edges = c.pixels.iter().filter(|&&p| sobel[p] > threshold).count();
            edges as f64 / c.pixels.len() as f64
        })
        .collect()
}

/// Cell partition of an image together with the reference statistics,
/// weights, and sampled coordinates. Immutable once built.
#[derive(Debug, Clone)]
pub struct CellGrid {
    pub width: usize,
    pub height: usize,
    pub cell_size: usize,
    pub cells: Vec<Cell>,
    /// Eligibility mask; `None` means every pixel is eligible.
    pub mask: Option<Mask>,
}

impl CellGrid {
    /// Tile `width x height` into `cell_size` squares (edge cells may be
    /// smaller), keeping only pixels known under `mask`.
    pub fn partition(width: usize, height: usize, cell_size: usize, mask: Option<&Mask>) -> Vec<Cell> {
        let mut cells = Vec::new();
        for y0 in (0..height).step_by(cell_size) {
            for x0 in (0..width).step_by(cell_size) {
                let w = cell_size.min(width - x0);
                let h = cell_size.min(height - y0);
                let mut pixels = Vec::with_capacity(w * h);
                for y in y0..y0 + h {
                    for x in x0..x0 + w {
                        if mask.is_none_or(|m| m.is_known(x, y)) {
                            pixels.push(y * width + x);
                        }
                    }
                }
                cells.push(Cell {
                    x0,
                    y0,
                    width: w,
                    height: h,
                    pixels,
                    variance: 0.0,
                    edge_density: 0.0,
                    weight: 0.0,
                    samples: Vec::new(),
                    context: Vec::new(),
                });
            }
        }
        cells
    }

    /// Build the grid from a reference image.
    pub fn build(
        extractor: &FeatureExtractor,
        reference: &Image,
        mask: Option<&Mask>,
        seed: u64,
        weighting: Weighting,
        external: Option<&ExternalFeatures>,
    ) -> Result<Self> {
        let cfg = extractor.config();
        if let Some(m) = mask {
            m.check_matches(reference, "cell grid")?;
        }
        let maps = extractor.maps(reference, mask)?;
        let mut cells = Self::partition(reference.width(), reference.height(), cfg.cell_size, mask);
        let variances = local_variance(&maps.intensity, &cells);
        let densities = edge_density_from(&maps.sobel, &cells, cfg.edge_threshold);
        for (i, cell) in cells.iter_mut().enumerate() {
            cell.variance = variances[i];
            cell.edge_density = densities[i];
            cell.context = extractor.context_vector(&maps, &cell.pixels, external);
            if !cell.is_active() {
                continue;
            }
            let n = cell.pixels.len();
            let (weight, count) = match weighting {
                Weighting::Adaptive => {
                    let w = adaptability(cell.variance, cell.edge_density, n, cfg)?;
                    (w, sample_count(w, n, cfg))
                }
                Weighting::Uniform => (1.0, cfg.max_samples().min(n)),
            };
            cell.weight = weight;
            cell.samples = sample_pixels(&cell.pixels, count, seed, i);
        }
        Ok(Self {
            width: reference.width(),
            height: reference.height(),
            cell_size: cfg.cell_size,
            cells,
            mask: mask.cloned(),
        })
    }

    pub fn active_cells(&self) -> impl Iterator<Item = (usize, &Cell)> {
        self.cells.iter().enumerate().filter(|(_, c)| c.is_active())
    }

    /// Expand a per-cell value into a per-pixel map.
    pub fn paint(&self, values: impl Fn(&Cell) -> f64) -> Image {
        let mut img = Image::zeros(self.width, self.height);
        for cell in &self.cells {
            let v = values(cell);
            for y in cell.y0..cell.y0 + cell.height {
                for x in cell.x0..cell.x0 + cell.width {
                    img.set(x, y, v);
                }
            }
        }
        img
    }
}

/// `count` distinct pixels drawn from `pixels`, seeded by `(seed, cell, count)`.
fn sample_pixels(pixels: &[usize], count: usize, seed: u64, cell: usize) -> Vec<usize> {
    let mut rng = rng::stream_indexed(seed, "cell-samples", &[cell as u64, count as u64]);
    let mut picked: Vec<usize> = index::sample(&mut rng, pixels.len(), count)
        .into_iter()
        .map(|i| pixels[i])
        .collect();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{gen_toy_image, PatternKind};
    use proptest::prelude::*;

    fn cfg() -> FeatureConfig {
        FeatureConfig::default()
    }

    #[test]
    fn adaptability_examples() {
        assert_eq!(adaptability(0.0, 0.0, 64, &cfg()).unwrap(), 0.5);
        let c = FeatureConfig {
            alpha_hat: 0.0,
            beta_hat: 1.0,
            ..cfg()
        };
        assert_eq!(adaptability(0.3, 0.5, 64, &c).unwrap(), 0.5);
        let v = adaptability(0.25, 1.0, 64, &cfg()).unwrap();
        let expect = 0.5 * (-10.0f64 * 0.25 * 64.0 / 63.0).exp() + 0.5;
        assert!((v - expect).abs() < 1e-15);
        assert!((v - 0.5394).abs() < 1e-4);
        assert!(matches!(adaptability(0.0, 0.0, 1, &cfg()), Err(Error::Contract(_))));
    }

    #[test]
    fn inverted_texture_term() {
        let c = FeatureConfig {
            invert_texture_term: true,
            ..cfg()
        };
        assert_eq!(adaptability(0.0, 0.0, 16, &c).unwrap(), 0.0);
        assert!(adaptability(0.2, 0.0, 16, &c).unwrap() > adaptability(0.01, 0.0, 16, &c).unwrap());
    }

    #[test]
    fn sample_count_examples() {
        assert_eq!(sample_count(1.0, 64, &cfg()), 64);
        assert_eq!(sample_count(0.5, 64, &cfg()), 32);
        assert_eq!(sample_count(0.001, 64, &cfg()), 1);
        assert_eq!(sample_count(1.0, 10, &cfg()), 10);
        assert_eq!(sample_count(0.0, 64, &cfg()), 1);
    }

    #[test]
    fn scaling_examples() {
        let a = [0.2; 7];
        assert!((scaling(&a, &a, &cfg()) - 1.1).abs() < 1e-15);
        let c0 = FeatureConfig {
            upsilon: 0.0,
            ..cfg()
        };
        assert_eq!(scaling(&a, &[9.0; 7], &c0), 1.0);
        let mut b = a;
        b[3] += 1.0;
        let f = scaling(&a, &b, &cfg());
        assert!((f - (1.0 + 0.1 * (-0.02f64).exp())).abs() < 1e-15);
        assert!((f - 1.09802).abs() < 1e-5);
    }

    #[test]
    fn variance_examples() {
        let img = Image::new(2, 1, vec![0.0, 1.0]).unwrap();
        let cells = CellGrid::partition(2, 1, 2, None);
        assert_eq!(local_variance(&img, &cells), vec![0.25]);
        let flat = Image::filled(2, 1, 0.3);
        assert_eq!(local_variance(&flat, &cells), vec![0.0]);
        let shifted = img.map(|v| v + 0.375);
        assert_eq!(local_variance(&shifted, &cells), vec![0.25]);
    }

    #[test]
    fn edge_density_examples() {
        let cells = CellGrid::partition(16, 16, 8, None);
        let ed = edge_density(&Image::filled(16, 16, 0.4), &cells, 0.1).unwrap();
        assert!(ed.iter().all(|&v| v == 0.0));

        let ramp = Image::from_fn(16, 16, |x, y| if x < 8 { 0.0 } else { (y as f64) / 15.0 });
        let sobel = sobel_magnitude(&ramp).unwrap();
        let ed0 = edge_density(&ramp, &cells, 0.0).unwrap();
        for (c, &e) in cells.iter().zip(&ed0) {
            let pos = c.pixels.iter().filter(|&&p| sobel[p] > 0.0).count();
            assert_eq!(e, pos as f64 / c.pixels.len() as f64);
        }

        // 2x2-tile checkerboard: every pixel away from the image corners sits on an edge.
        let checker = Image::from_fn(32, 32, |x, y| ((x / 2 + y / 2) % 2) as f64);
        let cells = CellGrid::partition(32, 32, 8, None);
        let ed = edge_density(&checker, &cells, 0.1).unwrap();
        for (c, &e) in cells.iter().zip(&ed) {
            let corner = (c.x0 == 0 || c.x0 + c.width == 32) && (c.y0 == 0 || c.y0 + c.height == 32);
            if corner {
                assert_eq!(e, 63.0 / 64.0);
            } else {
                assert_eq!(e, 1.0);
            }
        }
    }

    #[test]
    fn context_vectors_of_flat_cells() {
        let ex = FeatureExtractor::new(cfg()).unwrap();
        for c in [0.0, 0.6] {
            let img = Image::filled(16, 16, c);
            let grid = CellGrid::build(&ex, &img, None, 0, Weighting::Adaptive, None).unwrap();
            for cell in &grid.cells {
                assert_eq!(cell.context.len(), 7);
                assert!((cell.context[0] - c).abs() < 1e-15);
                assert!(cell.context[1..].iter().all(|v| v.abs() < 1e-9), "{:?}", cell.context);
            }
        }
    }

    #[test]
    fn context_is_local() {
        // Identical on cell (1,1) and its 3-pixel kernel halo, different elsewhere.
        let ex = FeatureExtractor::new(cfg()).unwrap();
        let a = gen_toy_image(PatternKind::Blobs, 4, 32).unwrap();
        let b = Image::from_fn(32, 32, |x, y| {
            if (5..19).contains(&x) && (5..19).contains(&y) {
                a.get(x, y)
            } else {
                0.9
            }
        });
        let cells = CellGrid::partition(32, 32, 8, None);
        let ca = ex.context_vector(&ex.maps(&a, None).unwrap(), &cells[5].pixels, None);
        let cb = ex.context_vector(&ex.maps(&b, None).unwrap(), &cells[5].pixels, None);
        assert_eq!(ca, cb);
    }

    #[test]
    fn grid_partition_covers_image_once() {
        for (w, h, s) in [(32, 32, 8), (9, 13, 4), (10, 10, 3)] {
            let cells = CellGrid::partition(w, h, s, None);
            let mut seen = vec![0u8; w * h];
            for c in &cells {
                assert_eq!(c.pixels.len(), c.area());
                for &p in &c.pixels {
                    seen[p] += 1;
                }
            }
            assert!(seen.iter().all(|&v| v == 1));
        }
    }

    #[test]
    fn grid_invariants_on_toy_images() {
        let ex = FeatureExtractor::new(cfg()).unwrap();
        for kind in PatternKind::ALL {
            let img = gen_toy_image(kind, 3, 32).unwrap();
            let grid = CellGrid::build(&ex, &img, None, 42, Weighting::Adaptive, None).unwrap();
            for cell in &grid.cells {
                assert!((0.0..=1.0).contains(&cell.edge_density));
                assert!(cell.variance >= 0.0);
                assert!((0.0..=1.0).contains(&cell.weight));
                let s = cell.samples.len();
                assert!(s >= 1 && s <= 64.min(cell.pixels.len()));
                let mut dedup = cell.samples.clone();
                dedup.dedup();
                assert_eq!(dedup.len(), s);
                assert!(cell.samples.iter().all(|p| cell.pixels.contains(p)));
            }
            for a in &grid.cells {
                for b in &grid.cells {
                    if a.weight >= b.weight {
                        assert!(a.samples.len() >= b.samples.len());
                    }
                }
            }
            let again = CellGrid::build(&ex, &img, None, 42, Weighting::Adaptive, None).unwrap();
            assert_eq!(grid.cells, again.cells);
        }
    }

    #[test]
    fn masked_grid_uses_known_pixels_only() {
        let ex = FeatureExtractor::new(cfg()).unwrap();
        let img = gen_toy_image(PatternKind::Rings, 2, 32).unwrap();
        let mask = Mask::from_fn(32, 32, |x, _| x >= 12);
        let grid = CellGrid::build(&ex, &img, Some(&mask), 1, Weighting::Adaptive, None).unwrap();
        for cell in &grid.cells {
            assert!(cell.pixels.iter().all(|&p| mask.known()[p]));
            if cell.x0 + cell.width <= 12 {
                assert!(!cell.is_active());
                assert!(cell.samples.is_empty());
                assert_eq!(cell.weight, 0.0);
            }
        }
        // Unknown pixels never influence the grid.
        let mut other = img.clone();
        for y in 0..32 {
            for x in 0..12 {
                other.set(x, y, 1.0 - img.get(x, y));
            }
        }
        let grid2 = CellGrid::build(&ex, &other, Some(&mask), 1, Weighting::Adaptive, None).unwrap();
        assert_eq!(grid.cells, grid2.cells);
    }

    #[test]
    fn uniform_weighting_samples_whole_cells() {
        let ex = FeatureExtractor::new(cfg()).unwrap();
        let img = gen_toy_image(PatternKind::Stripes, 1, 32).unwrap();
        let grid = CellGrid::build(&ex, &img, None, 0, Weighting::Uniform, None).unwrap();
        assert!(grid.cells.iter().all(|c| c.weight == 1.0 && c.samples.len() == 64));
    }

    #[test]
    fn shifting_by_cell_stride_permutes_interior_cells() {
        let ex = FeatureExtractor::new(cfg()).unwrap();
        let img = gen_toy_image(PatternKind::Blobs, 8, 40).unwrap();
        let shifted = Image::from_fn(40, 40, |x, y| img.get(x.saturating_sub(8), y));
        let a = CellGrid::build(&ex, &img, None, 0, Weighting::Adaptive, None).unwrap();
        let b = CellGrid::build(&ex, &shifted, None, 0, Weighting::Adaptive, None).unwrap();
        // 5x5 cells; cell (cx, cy) of `img` is cell (cx + 1, cy) of `shifted`.
        // Interior: away from the image border by at least one cell.
        for cy in 1..4 {
            for cx in 1..3 {
                let ca = &a.cells[cy * 5 + cx];
                let cb = &b.cells[cy * 5 + cx + 1];
                assert!((ca.variance - cb.variance).abs() < 1e-15);
                assert_eq!(ca.edge_density, cb.edge_density);
                assert_eq!(ca.weight, cb.weight);
                for (u, v) in ca.context.iter().zip(&cb.context) {
                    assert!((u - v).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn external_features_extend_context() {
        let ex = FeatureExtractor::new(cfg()).unwrap();
        let img = Image::filled(8, 8, 0.5);
        let ext = ExternalFeatures::new(8, 8, 2, (0..128).map(|i| (i % 2) as f32).collect()).unwrap();
        let grid = CellGrid::build(&ex, &img, None, 0, Weighting::Adaptive, Some(&ext)).unwrap();
        assert_eq!(grid.cells[0].context.len(), 9);
        assert_eq!(&grid.cells[0].context[7..], &[0.0, 1.0]);
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(FeatureConfig { tau: 0.0, ..cfg() }.validate().is_err());
        assert!(FeatureConfig { alpha_hat: 0.0, beta_hat: 0.0, ..cfg() }.validate().is_err());
        assert!(FeatureConfig { max_samples: Some(65), ..cfg() }.validate().is_err());
        assert!(FeatureConfig { upsilon: -0.1, ..cfg() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn scaling_symmetric_and_decreasing(
            a in proptest::collection::vec(-2.0f64..2.0, 7),
            b in proptest::collection::vec(-2.0f64..2.0, 7),
            t in 1.01f64..3.0,
        ) {
            let c = cfg();
            let f = scaling(&a, &b, &c);
            prop_assert_eq!(f, scaling(&b, &a, &c));
            prop_assert!(f > 1.0 && f <= 1.1);
            // Push b further away along the same direction.
            let far: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + t * (y - x)).collect();
            if a != b {
                prop_assert!(scaling(&a, &far, &c) < f);
            }
        }

        #[test]
        fn adaptability_bounded_and_counts_monotone(
            v1 in 0.0f64..0.25, e1 in 0.0f64..1.0,
            v2 in 0.0f64..0.25, e2 in 0.0f64..1.0,
        ) {
            let c = cfg();
            let w1 = adaptability(v1, e1, 64, &c).unwrap();
            let w2 = adaptability(v2, e2, 64, &c).unwrap();
            prop_assert!((0.0..=1.0).contains(&w1));
            if w1 >= w2 {
                prop_assert!(sample_count(w1, 64, &c) >= sample_count(w2, 64, &c));
            }
        }
    }
}
