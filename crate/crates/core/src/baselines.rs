//! Replacement-guided reverse diffusion, the comparison baseline.

use crate::confill::{InpaintOutput, TraceStep};
use crate::denoiser::NoisePredictor;
use crate::error::{Error, Result};
use crate::imaging::{composite, Image, Mask};
use crate::rng;
use crate::schedule::NoiseSchedule;

/// Plain reverse pass that overwrites the known region with a freshly noised
/// copy of the reference after every step.
pub fn blend_baseline(
    net: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    r0: &Image,
    mask: &Mask,
    seed: u64,
) -> Result<InpaintOutput> {
    mask.check_matches(r0, "blend")?;
    if !r0.is_finite() || !r0.is_unit_range() {
        return Err(Error::contract("reference image must lie in [0, 1]"));
    }
    let (w, h) = (r0.width(), r0.height());
    let mut rng = rng::stream(seed, "blend");
    let mut x = crate::confill::gaussian(w, h, &mut rng);
    let mut trace = Vec::with_capacity(sched.timesteps());
    for t in (1..=sched.timesteps()).rev() {
        let eps = net.predict(&x, t)?;
        let x0 = sched.predict_x0(&x, &eps, t)?;
        trace.push(TraceStep {
            step_index: trace.len(),
            t,
            prior_term: 0.0,
            constraint_term: 0.0,
            grad_norm: 0.0,
            jumped: false,
            known_mae: known_mae(&x0, r0, mask),
        });
        if t == 1 {
            return Ok(InpaintOutput {
                composite: composite(r0, &x0.map(|v| v.clamp(0.0, 1.0)), mask)?,
                raw: x0,
                trace,
                jumps: 0,
                init_objective: Vec::new(),
            });
        }
        let mean = sched.ddim_mean(&x, &x0, t)?;
        let sigma = sched.sigma(t);
        let xi = crate::confill::gaussian(w, h, &mut rng);
        let next = mean.zip_map(&xi, |m, n| m + sigma * n);
        let known = sched.q_sample(r0, t - 1, &crate::confill::gaussian(w, h, &mut rng))?;
        x = composite(&known, &next, mask)?;
    }
    unreachable!("the loop returns at t = 1")
}

pub(crate) fn known_mae(x0: &Image, r0: &Image, mask: &Mask) -> f64 {
    let mut s = 0.0;
    for ((&k, a), b) in mask.known().iter().zip(x0.data()).zip(r0.data()) {
        if k {
            s += (a - b).abs();
        }
    }
    s / mask.known_count().max(1) as f64
}
