//! Context-adaptive discrepancy between two images.
//!
//! Each active cell of a [`CellGrid`] contributes `weight * scaling * W`, where
//! `W` is the squared 2-Wasserstein distance between the sampled values of the
//! two images (paired coordinates), `weight` is the cell's adaptability, and
//! `scaling` compares the context vectors of the two images on the cell.
//!
//! Gradients treat `weight`, `scaling` and the sorting permutations as
//! constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{scaling, CellGrid, ExternalFeatures, FeatureExtractor};
use crate::imaging::{Image, Mask};

/// Mean squared difference of the sorted inputs.
pub fn wasserstein_1d_sq(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(brenier_map(a, b)?.cost())
}

/// Monotone rearrangement between two equally sized samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportMap {
    pub source_sorted: Vec<f64>,
    pub target_sorted: Vec<f64>,
    /// `permutation[k]` is the index in the source of its `k`-th smallest value.
    pub permutation: Vec<usize>,
    /// Same for the target.
    pub target_permutation: Vec<usize>,
}

impl TransportMap {
    /// Mean squared displacement.
    pub fn cost(&self) -> f64 {
        if self.source_sorted.is_empty() {
            return 0.0;
        }
        self.source_sorted
            .iter()
            .zip(&self.target_sorted)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / self.source_sorted.len() as f64
    }

    /// Target value matched to each source index.
    pub fn matched_targets(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.permutation.len()];
        for (k, &i) in self.permutation.iter().enumerate() {
            out[i] = self.target_sorted[k];
        }
        out
    }
}

fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    // Stable, so ties keep index order.
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    idx
}

/// Sorted-to-sorted pairing, ties broken by index.
pub fn brenier_map(a: &[f64], b: &[f64]) -> Result<TransportMap> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "transport needs equal sample sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let permutation = argsort(a);
    let target_permutation = argsort(b);
    Ok(TransportMap {
        source_sorted: permutation.iter().map(|&i| a[i]).collect(),
        target_sorted: target_permutation.iter().map(|&i| b[i]).collect(),
        permutation,
        target_permutation,
    })
}

/// Per-cell breakdown of a discrepancy evaluation. Vectors are indexed by
/// cell; inactive cells hold zero weight, unit scaling and zero terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CadReport {
    pub total: f64,
    /// `scaling * wasserstein` per cell.
    pub terms: Vec<f64>,
    pub weights: Vec<f64>,
    pub scalings: Vec<f64>,
    pub wasserstein: Vec<f64>,
}

/// A fixed comparison target: the grid, the target image and its context vectors.
///
/// Building one precomputes everything that depends only on the target, so
/// repeated evaluations against the same reference only pay for the
/// candidate side.
#[derive(Debug, Clone)]
pub struct CadTarget<'a> {
    extractor: &'a FeatureExtractor,
    grid: &'a CellGrid,
    external: Option<&'a ExternalFeatures>,
    target: Image,
    target_context: Vec<Vec<f64>>,
}

impl<'a> CadTarget<'a> {
    pub fn new(
        extractor: &'a FeatureExtractor,
        grid: &'a CellGrid,
        target: &Image,
        external: Option<&'a ExternalFeatures>,
    ) -> Result<Self> {
        check_grid(grid, target)?;
        let target_context = extractor.context_vectors(target, grid, external)?;
        Ok(Self {
            extractor,
            grid,
            external,
            target: target.clone(),
            target_context,
        })
    }

    pub fn grid(&self) -> &CellGrid {
        self.grid
    }

    pub fn target(&self) -> &Image {
        &self.target
    }

    /// Contextual scaling of every cell for candidate `x`.
    pub fn scalings(&self, x: &Image) -> Result<Vec<f64>> {
        check_grid(self.grid, x)?;
        let cx = self.extractor.context_vectors(x, self.grid, self.external)?;
        Ok(self
            .grid
            .cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if c.is_active() {
                    scaling(&cx[i], &self.target_context[i], self.extractor.config())
                } else {
                    1.0
                }
            })
            .collect())
    }

    pub fn evaluate(&self, x: &Image) -> Result<CadReport> {
        let s = self.scalings(x)?;
        self.evaluate_with_scalings(x, &s)
    }

    /// Evaluate with the given per-cell scalings instead of recomputing them.
    pub fn evaluate_with_scalings(&self, x: &Image, scalings: &[f64]) -> Result<CadReport> {
        self.run(x, scalings, None)
    }

    /// Discrepancy and its gradient with respect to `x`.
    pub fn gradient(&self, x: &Image) -> Result<(CadReport, Image)> {
        let s = self.scalings(x)?;
        self.gradient_with_scalings(x, &s)
    }

    pub fn gradient_with_scalings(&self, x: &Image, scalings: &[f64]) -> Result<(CadReport, Image)> {
        let mut grad = Image::zeros(x.width(), x.height());
        let report = self.run(x, scalings, Some(&mut grad))?;
        Ok((report, grad))
    }

    fn run(&self, x: &Image, scalings: &[f64], mut grad: Option<&mut Image>) -> Result<CadReport> {
        check_grid(self.grid, x)?;
        let n = self.grid.cells.len();
        if scalings.len() != n {
            return Err(Error::contract(format!(
                "expected {n} scalings, got {}",
                scalings.len()
            )));
        }
        let mut report = CadReport {
            total: 0.0,
            terms: vec![0.0; n],
            weights: vec![0.0; n],
            scalings: vec![1.0; n],
            wasserstein: vec![0.0; n],
        };
        let (xd, yd) = (x.data(), self.target.data());
        for (i, cell) in self.grid.active_cells() {
            let a: Vec<f64> = cell.samples.iter().map(|&p| xd[p]).collect();
            let b: Vec<f64> = cell.samples.iter().map(|&p| yd[p]).collect();
            let map = brenier_map(&a, &b)?;
            let w = map.cost();
            report.weights[i] = cell.weight;
            report.scalings[i] = scalings[i];
            report.wasserstein[i] = w;
            report.terms[i] = scalings[i] * w;
            report.total += cell.weight * scalings[i] * w;
            if let Some(g) = grad.as_deref_mut() {
                let coef = cell.weight * scalings[i] * 2.0 / a.len() as f64;
                let gd = g.data_mut();
                for (k, &j) in map.permutation.iter().enumerate() {
                    gd[cell.samples[j]] += coef * (map.source_sorted[k] - map.target_sorted[k]);
                }
            }
        }
        Ok(report)
    }
}

fn check_grid(grid: &CellGrid, img: &Image) -> Result<()> {
    if img.width() != grid.width || img.height() != grid.height {
        return Err(Error::contract(format!(
            "image is {}x{} but the cell grid is {}x{}",
            img.width(),
            img.height(),
            grid.width,
            grid.height
        )));
    }
    Ok(())
}

/// Discrepancy of `x` from `y` on `grid`.
pub fn cad_total(
    x: &Image,
    y: &Image,
    grid: &CellGrid,
    extractor: &FeatureExtractor,
    external: Option<&ExternalFeatures>,
) -> Result<CadReport> {
    x.check_shape(y, "cad_total")?;
    CadTarget::new(extractor, grid, y, external)?.evaluate(x)
}

/// Gradient of [`cad_total`] with respect to `x`.
pub fn cad_grad(
    x: &Image,
    y: &Image,
    grid: &CellGrid,
    extractor: &FeatureExtractor,
    external: Option<&ExternalFeatures>,
) -> Result<Image> {
    x.check_shape(y, "cad_grad")?;
    Ok(CadTarget::new(extractor, grid, y, external)?.gradient(x)?.1)
}

/// Discrepancy restricted to the known region of `mask`.
///
/// `grid` must have been built with the same mask, so that only known pixels
/// are sampled.
pub fn cad_masked(
    x0_hat: &Image,
    r0: &Image,
    mask: &Mask,
    grid: &CellGrid,
    extractor: &FeatureExtractor,
    external: Option<&ExternalFeatures>,
) -> Result<CadReport> {
    check_masked_grid(mask, grid)?;
    cad_total(x0_hat, r0, grid, extractor, external)
}

pub(crate) fn check_masked_grid(mask: &Mask, grid: &CellGrid) -> Result<()> {
    if mask.known_count() == 0 {
        return Err(Error::contract("mask has no known pixels to compare"));
    }
    if grid.mask.as_ref() != Some(mask) {
        return Err(Error::contract("cell grid was not built with this mask"));
    }
    Ok(())
}
