//! The completion constraint: a discrepancy between a clean-image estimate
//! and the reference on the known region, with its gradient.

use serde::{Deserialize, Serialize};

use crate::cad::CadTarget;
use crate::error::{Error, Result};
use crate::features::{CellGrid, ExternalFeatures, FeatureConfig, FeatureExtractor, Weighting};
use crate::imaging::{Image, Mask};
use crate::rng;

/// Which discrepancy measures agreement with the known region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discrepancy {
    /// Adaptability-weighted, context-scaled per-cell transport cost.
    #[default]
    Cad,
    /// Per-cell transport cost with unit weights and no context scaling.
    Wasserstein,
    /// Mean squared difference over known pixels.
    L2,
}

impl Discrepancy {
    pub fn name(self) -> &'static str {
        match self {
            Discrepancy::Cad => "cad",
            Discrepancy::Wasserstein => "wasserstein",
            Discrepancy::L2 => "l2",
        }
    }
}

/// Everything needed to compare candidates with `r0` on the known region.
#[derive(Debug, Clone)]
pub struct Guide {
    kind: Discrepancy,
    extractor: FeatureExtractor,
    grid: CellGrid,
    r0: Image,
    mask: Mask,
    external: Option<ExternalFeatures>,
}

impl Guide {
    pub fn new(
        kind: Discrepancy,
        features: &FeatureConfig,
        r0: &Image,
        mask: &Mask,
        seed: u64,
        external: Option<&ExternalFeatures>,
    ) -> Result<Self> {
        mask.check_matches(r0, "guide")?;
        if mask.known_count() == 0 {
            return Err(Error::contract("mask has no known pixels to constrain the completion"));
        }
        if let Some(ext) = external {
            if ext.width != r0.width() || ext.height != r0.height() {
                return Err(Error::contract("external features do not match the image shape"));
            }
        }
        let (cfg, weighting) = match kind {
            Discrepancy::Wasserstein => (
                FeatureConfig {
                    upsilon: 0.0,
                    ..features.clone()
                },
                Weighting::Uniform,
            ),
            _ => (features.clone(), Weighting::Adaptive),
        };
        let extractor = FeatureExtractor::new(cfg)?;
        let grid = CellGrid::build(
            &extractor,
            r0,
            Some(mask),
            rng::derive(seed, "cell-grid"),
            weighting,
            external,
        )?;
        Ok(Self {
            kind,
            extractor,
            grid,
            r0: r0.clone(),
            mask: mask.clone(),
            external: external.cloned(),
        })
    }

    pub fn kind(&self) -> Discrepancy {
        self.kind
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn reference(&self) -> &Image {
        &self.r0
    }

    /// Precompute the reference side for repeated evaluation.
    pub fn evaluator(&self) -> Result<Evaluator<'_>> {
        let cad = match self.kind {
            Discrepancy::L2 => None,
            _ => Some(CadTarget::new(
                &self.extractor,
                &self.grid,
                &self.r0,
                self.external.as_ref(),
            )?),
        };
        Ok(Evaluator { guide: self, cad })
    }
}

/// Evaluates the discrepancy of candidates against a [`Guide`].
pub struct Evaluator<'a> {
    guide: &'a Guide,
    cad: Option<CadTarget<'a>>,
}

impl Evaluator<'_> {
    pub fn reference(&self) -> &Image {
        &self.guide.r0
    }

    pub fn value(&self, x0: &Image) -> Result<f64> {
        match &self.cad {
            Some(t) => Ok(t.evaluate(x0)?.total),
            None => self.l2(x0, false).map(|(v, _)| v),
        }
    }

    pub fn value_and_grad(&self, x0: &Image) -> Result<(f64, Image)> {
        match &self.cad {
            Some(t) => {
                let (rep, g) = t.gradient(x0)?;
                Ok((rep.total, g))
            }
            None => self.l2(x0, true).map(|(v, g)| (v, g.expect("requested"))),
        }
    }

    fn l2(&self, x0: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
        let g = self.guide;
        x0.check_shape(&g.r0, "l2 discrepancy")?;
        let n = g.mask.known_count() as f64;
        let mut total = 0.0;
        let mut grad = want_grad.then(|| Image::zeros(x0.width(), x0.height()));
        for (i, (&known, (&a, &b))) in g
            .mask
            .known()
            .iter()
            .zip(x0.data().iter().zip(g.r0.data()))
            .enumerate()
        {
            if known {
                total += (a - b) * (a - b) / n;
                if let Some(gr) = grad.as_mut() {
                    gr.data_mut()[i] = 2.0 * (a - b) / n;
                }
            }
        }
        Ok((total, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(kind: Discrepancy) -> Guide {
        let r0 = Image::from_fn(16, 16, |x, y| ((x * 3 + y * 5) % 7) as f64 / 7.0);
        let mask = Mask::from_fn(16, 16, |x, _| x >= 8);
        Guide::new(kind, &FeatureConfig::default(), &r0, &mask, 3, None).unwrap()
    }

    #[test]
    fn every_kind_is_zero_at_the_reference() {
        for kind in [Discrepancy::Cad, Discrepancy::Wasserstein, Discrepancy::L2] {
            let g = setup(kind);
            let ev = g.evaluator().unwrap();
            let (v, grad) = ev.value_and_grad(g.reference()).unwrap();
            assert_eq!(v, 0.0);
            assert!(grad.data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn l2_is_mean_squared_known_difference() {
        let g = setup(Discrepancy::L2);
        let x = g.reference().map(|v| v + 0.5);
        let v = g.evaluator().unwrap().value(&x).unwrap();
        assert!((v - 0.25).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_weights_are_uniform() {
        let g = setup(Discrepancy::Wasserstein);
        assert!(g.grid().active_cells().all(|(_, c)| c.weight == 1.0));
        let x = g.reference().map(|v| 1.0 - v);
        let rep = crate::cad::CadTarget::new(&g.extractor, &g.grid, &g.r0, None)
            .unwrap()
            .evaluate(&x)
            .unwrap();
        assert!(rep.scalings.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn fully_unknown_mask_is_rejected() {
        let r0 = Image::zeros(16, 16);
        let mask = Mask::all_unknown(16, 16);
        let err = Guide::new(Discrepancy::Cad, &FeatureConfig::default(), &r0, &mask, 0, None);
        assert!(matches!(err, Err(Error::Contract(_))));
    }
}
