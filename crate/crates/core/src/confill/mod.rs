//! Guided reverse diffusion for image completion.
//!
//! The sampler starts from an optimised Gaussian latent and walks the reverse
//! chain. At each level it forms the reverse mean, then takes a few clipped
//! gradient steps on a two-term objective: a quadratic pull towards that mean
//! and the discrepancy between the step's clean-image estimate and the known
//! region, divided by a calibrated variance. Every `travel_interval` levels the
//! state is re-noised a little and the interval is denoised again.

mod gamma;
mod guide;

pub use gamma::{calibrate_gamma, GammaTable};
pub use guide::{Discrepancy, Evaluator, Guide};

use std::fmt::Write as _;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::denoiser::NoisePredictor;
use crate::error::{Error, Result};
use crate::features::{select, ExternalFeatures, FeatureConfig};
use crate::imaging::{composite, Image, Mask};
use crate::rng;
use crate::schedule::{NoiseSchedule, X0_CLAMP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConFillConfig {
    /// Gradient steps per level.
    pub gradient_steps: usize,
    /// Base refinement step size.
    pub learning_rate: f64,
    /// Ascent steps on the initial latent.
    pub init_steps: usize,
    /// Levels between rewind checkpoints.
    pub travel_interval: usize,
    /// Rewinds per checkpoint cycle.
    pub travel_jumps: usize,
    /// Gradient 2-norm cap.
    pub clip_norm: f64,
    /// Lower bound for calibrated variances and for the prior variance.
    pub gamma_floor: f64,
    /// Number of calibration images.
    pub calib_images: usize,
    /// Divide calibrated discrepancies by the number of known pixels.
    pub gamma_per_pixel: bool,
    /// Run the gradient steps from the reverse mean and add the step noise
    /// afterwards, instead of refining the noisy proposal.
    pub noise_after_refinement: bool,
    pub seed: u64,
}

impl Default for ConFillConfig {
    fn default() -> Self {
        Self {
            gradient_steps: 2,
            learning_rate: 1.0,
            init_steps: 2,
            travel_interval: 10,
            travel_jumps: 1,
            clip_norm: 1.0,
            gamma_floor: 1e-4,
            calib_images: 16,
            gamma_per_pixel: false,
            noise_after_refinement: true,
            seed: 0,
        }
    }
}

impl ConFillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.travel_interval < 1 {
            return Err(Error::config("travel_interval must be at least 1"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm must be positive"));
        }
        if !(self.gamma_floor > 0.0 && self.gamma_floor.is_finite()) {
            return Err(Error::config("gamma_floor must be positive"));
        }
        if self.calib_images < 1 {
            return Err(Error::config("calib_images must be at least 1"));
        }
        Ok(())
    }
}

pub(crate) fn gaussian(width: usize, height: usize, rng: &mut ChaCha8Rng) -> Image {
    let data = (0..width * height).map(|_| StandardNormal.sample(rng)).collect();
    Image::new(width, height, data).expect("sized")
}

/// Scale `g` down to 2-norm `cap` if it is longer.
pub fn clip(g: &Image, cap: f64) -> Image {
    let n = g.norm();
    if n > cap {
        let s = cap / n;
        g.map(|v| v * s)
    } else {
        g.clone()
    }
}

/// `lr * clip(g, cap) / (1 + |g| / cap)`; its norm never exceeds `lr * cap`.
pub fn adapted_step(g: &Image, lr: f64, cap: f64) -> Image {
    let eff = lr / (1.0 + g.norm() / cap);
    clip(g, cap).map(|v| v * eff)
}

/// Discrepancy of the clean-image estimate at `(z, t)` and its gradient with
/// respect to `z`, chained through the clamp and the noise predictor.
pub struct GuidedEval {
    pub eps: Image,
    pub x0: Image,
    pub discrepancy: f64,
    pub grad: Image,
}

pub fn guided_gradient(
    net: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    eval: &Evaluator<'_>,
    z: &Image,
    t: usize,
) -> Result<GuidedEval> {
    let (eps, pullback) = net.predict_with_pullback(z, t)?;
    let (cx, ce) = sched.x0_coefficients(t);
    let raw = z.zip_map(&eps, |x, e| cx * x - ce * e);
    let x0 = raw.map(|v| v.clamp(X0_CLAMP.0, X0_CLAMP.1));
    let (discrepancy, g_x0) = eval.value_and_grad(&x0)?;
    // The clamp passes gradient only strictly inside its range.
    let g_raw = raw.zip_map(&g_x0, |r, g| if r > X0_CLAMP.0 && r < X0_CLAMP.1 { g } else { 0.0 });
    let back = pullback(&g_raw);
    let grad = g_raw.zip_map(&back, |g, b| cx * g - ce * b);
    Ok(GuidedEval {
        eps,
        x0,
        discrepancy,
        grad,
    })
}

/// One processed level of the reverse walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step_index: usize,
    pub t: usize,
    /// Final value of the quadratic pull towards the reverse mean.
    pub prior_term: f64,
    /// Final value of the scaled discrepancy term (unscaled at `t = 1`).
    pub constraint_term: f64,
    /// Norm of the last objective gradient.
    pub grad_norm: f64,
    /// Whether a rewind followed this step.
    pub jumped: bool,
    /// Mean absolute difference between the clean-image estimate at entry and
    /// the reference, over known pixels.
    pub known_mae: f64,
}

/// Tab-separated trace: `step_index, t, prior_term, constraint_term, grad_norm, jumped`.
pub fn trace_tsv(trace: &[TraceStep]) -> String {
    let mut out = String::new();
    for s in trace {
        let _ = writeln!(
            out,
            "{}\t{}\t{:e}\t{:e}\t{:e}\t{}",
            s.step_index,
            s.t,
            s.prior_term,
            s.constraint_term,
            s.grad_norm,
            u8::from(s.jumped)
        );
    }
    out
}

/// Mutable state of the reverse walk.
#[derive(Debug, Clone)]
pub struct SamplerState {
    pub x: Image,
    pub t: usize,
    /// Remaining rewinds in the current cycle.
    pub jumps_left: usize,
    pub steps: usize,
}

/// Rewind bookkeeping after a step has produced level `state.t`.
///
/// At a checkpoint (`1 <= t <= T - interval`, `t % interval == 0`) the state is
/// either re-noised to level `t + interval - 1`, spending one jump, or the jump
/// budget is refilled. Returns whether a rewind happened.
pub fn time_travel(
    state: &mut SamplerState,
    sched: &NoiseSchedule,
    cfg: &ConFillConfig,
    rng: &mut ChaCha8Rng,
) -> Result<bool> {
    let (t, dt, big_t) = (state.t, cfg.travel_interval, sched.timesteps());
    if t < 1 || t + dt > big_t || t % dt != 0 {
        return Ok(false);
    }
    if state.jumps_left == 0 {
        state.jumps_left = cfg.travel_jumps;
        return Ok(false);
    }
    let to = t + dt - 1;
    let noise = gaussian(state.x.width(), state.x.height(), rng);
    state.x = sched.renoise(&state.x, t, to, &noise)?;
    state.t = to;
    state.jumps_left -= 1;
    Ok(true)
}

/// Objective of one guided step:
/// `w_prior * |z - kappa|^2 + D(x0(z)) / (2 gamma'^2_{t-1})`.
pub struct StepObjective<'e> {
    pub eval: &'e Evaluator<'e>,
    /// Reverse mean the prior term pulls towards.
    pub kappa: Image,
    /// Standard deviation of the step noise.
    pub sigma: f64,
    pub w_prior: f64,
    /// `1 / (2 gamma'^2_{t-1})`.
    pub inv: f64,
    /// Level of the variable, `t - 1`.
    pub level: usize,
}

/// Result of the descent at one level.
#[derive(Debug, Clone)]
pub struct Descent {
    pub z: Image,
    /// Prior and constraint terms at the last gradient evaluation.
    pub prior: f64,
    pub constraint: f64,
    pub grad_norm: f64,
}

/// Output of one completion run.
#[derive(Debug, Clone)]
pub struct InpaintOutput {
    /// Final clean-image estimate over the whole frame.
    pub raw: Image,
    /// `raw` with known pixels replaced by the reference.
    pub composite: Image,
    pub trace: Vec<TraceStep>,
    pub jumps: usize,
    /// Objective values of the latent ascent, initial value first.
    pub init_objective: Vec<f64>,
}

/// A configured sampler. The discrepancy kind selects the guidance variant.
pub struct ConFill<'a> {
    pub net: &'a dyn NoisePredictor,
    pub sched: &'a NoiseSchedule,
    pub features: &'a FeatureConfig,
    pub cfg: &'a ConFillConfig,
    pub kind: Discrepancy,
    pub external: Option<&'a ExternalFeatures>,
}

impl ConFill<'_> {
    fn check_inputs(&self, r0: &Image, mask: &Mask) -> Result<()> {
        self.cfg.validate()?;
        mask.check_matches(r0, "inpaint")?;
        if !r0.is_finite() || !r0.is_unit_range() {
            return Err(Error::contract("reference image must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Calibrate on the reference itself when no table is supplied: its
    /// unknown pixels are filled by the known mean and only the known region
    /// is compared.
    pub fn on_the_fly_gamma(&self, r0: &Image, mask: &Mask) -> Result<GammaTable> {
        let guide = Guide::new(self.kind, self.features, r0, mask, self.cfg.seed, self.external)?;
        let eval = guide.evaluator()?;
        let filled = select(r0, mask);
        let big_t = self.sched.timesteps();
        let scale = if self.cfg.gamma_per_pixel {
            1.0 / mask.known_count() as f64
        } else {
            1.0
        };
        let mut values = Vec::with_capacity(big_t);
        for t in 1..=big_t {
            let mut rng = rng::stream_indexed(self.cfg.seed, "calibration-noise", &[0, t as u64]);
            let noise = gaussian(r0.width(), r0.height(), &mut rng);
            let x_t = self.sched.q_sample(&filled, t, &noise)?;
            let eps = self.net.predict(&x_t, t)?;
            let pred = self.sched.predict_x0(&x_t, &eps, t)?;
            values.push((eval.value(&pred)? * scale).max(self.cfg.gamma_floor));
        }
        GammaTable::new(values)
    }

    /// Value of `-|x|^2 / 2 - D / (2 gamma'^2_T)` at `x` and its gradient.
    pub fn init_objective(&self, eval: &Evaluator<'_>, gamma: &GammaTable, x: &Image) -> Result<(f64, Image)> {
        let big_t = self.sched.timesteps();
        let inv = 1.0 / (2.0 * gamma.get(big_t));
        let ge = guided_gradient(self.net, self.sched, eval, x, big_t)?;
        let value = -0.5 * x.norm().powi(2) - inv * ge.discrepancy;
        let delta = x.zip_map(&ge.grad, |v, g| -v - inv * g);
        if !value.is_finite() || !delta.is_finite() {
            return Err(Error::Refinement("non-finite initial-latent objective".into()));
        }
        Ok((value, delta))
    }

    /// Ascent on the initial-latent objective from a standard normal draw.
    /// Returns the latent and the objective before each step and at the end.
    pub fn init_latent(&self, eval: &Evaluator<'_>, gamma: &GammaTable, seed: u64) -> Result<(Image, Vec<f64>)> {
        let (w, h) = (eval.reference().width(), eval.reference().height());
        let mut rng = rng::stream(seed, "init-latent");
        let mut x = gaussian(w, h, &mut rng);
        let mut objective = Vec::with_capacity(self.cfg.init_steps + 1);
        for _ in 0..self.cfg.init_steps {
            let (value, delta) = self.init_objective(eval, gamma, &x)?;
            objective.push(value);
            let step = clip(&delta, self.cfg.clip_norm);
            x = x.zip_map(&step, |v, s| v + self.cfg.learning_rate * s);
        }
        if self.cfg.init_steps > 0 {
            objective.push(self.init_objective(eval, gamma, &x)?.0);
        }
        Ok((x, objective))
    }

    /// The objective minimised when stepping from level `t >= 2` to `t - 1`,
    /// anchored at the reverse mean of `(x_t, eps_t)`.
    pub fn step_objective<'e>(
        &self,
        eval: &'e Evaluator<'e>,
        gamma: &GammaTable,
        x_t: &Image,
        eps_t: &Image,
        t: usize,
    ) -> Result<StepObjective<'e>> {
        if t < 2 {
            return Err(Error::contract("a guided step needs t >= 2"));
        }
        let x0 = self.sched.predict_x0(x_t, eps_t, t)?;
        let kappa = self.sched.ddim_mean(x_t, &x0, t)?;
        let sigma = self.sched.sigma(t);
        Ok(StepObjective {
            eval,
            kappa,
            sigma,
            w_prior: 1.0 / (2.0 * (sigma * sigma).max(self.cfg.gamma_floor)),
            inv: 1.0 / (2.0 * gamma.get(t - 1)),
            level: t - 1,
        })
    }

    /// `(prior, constraint, gradient)` of `obj` at `z`.
    pub fn step_terms(&self, obj: &StepObjective<'_>, z: &Image) -> Result<(f64, f64, Image)> {
        let ge = guided_gradient(self.net, self.sched, obj.eval, z, obj.level)?;
        let prior = obj.w_prior * z.zip_map(&obj.kappa, |a, b| (a - b) * (a - b)).data().iter().sum::<f64>();
        let grad = z
            .zip_map(&obj.kappa, |a, b| 2.0 * obj.w_prior * (a - b))
            .zip_map(&ge.grad, |p, c| p + obj.inv * c);
        Ok((prior, obj.inv * ge.discrepancy, grad))
    }

    /// `gradient_steps` clipped, adapted descent steps on `obj` from `z`.
    /// A non-finite gradient halves the step size and retries the last step
    /// once; a second failure is an error.
    pub fn descend(&self, obj: &StepObjective<'_>, mut z: Image) -> Result<Descent> {
        let mut lr = self.cfg.learning_rate;
        let mut retried = false;
        let (mut prior_term, mut constraint_term, mut grad_norm) = (0.0, 0.0, 0.0);
        let mut g = 0;
        let mut previous: Option<Image> = None;
        while g < self.cfg.gradient_steps {
            let (prior, constraint, grad) = self.step_terms(obj, &z)?;
            if !grad.is_finite() || !constraint.is_finite() {
                match (retried, previous.take()) {
                    (false, Some(back)) => {
                        retried = true;
                        lr *= 0.5;
                        z = back;
                        g -= 1;
                        continue;
                    }
                    _ => {
                        return Err(Error::Refinement(format!(
                            "non-finite refinement gradient at t = {}",
                            obj.level + 1
                        )))
                    }
                }
            }
            prior_term = prior;
            constraint_term = constraint;
            grad_norm = grad.norm();
            let step = adapted_step(&grad, lr, self.cfg.clip_norm);
            previous = Some(z.clone());
            z = z.zip_map(&step, |a, s| a - s);
            g += 1;
        }
        if self.cfg.gradient_steps == 0 {
            let x0 = self.sched.predict_x0(&z, &self.net.predict(&z, obj.level)?, obj.level)?;
            constraint_term = obj.inv * obj.eval.value(&x0)?;
        }
        Ok(Descent {
            z,
            prior: prior_term,
            constraint: constraint_term,
            grad_norm,
        })
    }

    /// One guided step from level `t >= 2` to `t - 1`.
    ///
    /// `eps_t` is the noise prediction at `(x_t, t)`. Returns the new state
    /// and the trace terms of the last gradient evaluation.
    pub fn refine_step(
        &self,
        eval: &Evaluator<'_>,
        gamma: &GammaTable,
        x_t: &Image,
        eps_t: &Image,
        t: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Descent> {
        let obj = self.step_objective(eval, gamma, x_t, eps_t, t)?;
        let xi = gaussian(x_t.width(), x_t.height(), rng);
        let sigma = obj.sigma;
        if self.cfg.noise_after_refinement {
            let mut d = self.descend(&obj, obj.kappa.clone())?;
            d.z = d.z.zip_map(&xi, |a, n| a + sigma * n);
            Ok(d)
        } else {
            self.descend(&obj, obj.kappa.zip_map(&xi, |k, n| k + sigma * n))
        }
    }

    /// Complete `r0` on the unknown region of `mask`.
    pub fn inpaint(&self, r0: &Image, mask: &Mask, gamma: Option<&GammaTable>, seed: u64) -> Result<InpaintOutput> {
        self.check_inputs(r0, mask)?;
        let big_t = self.sched.timesteps();
        let owned;
        let gamma = match gamma {
            Some(g) => g,
            None => {
                owned = self.on_the_fly_gamma(r0, mask)?;
                &owned
            }
        };
        if gamma.timesteps() != big_t {
            return Err(Error::contract(format!(
                "gamma table has {} entries for a {big_t}-step schedule",
                gamma.timesteps()
            )));
        }
        let guide = Guide::new(self.kind, self.features, r0, mask, seed, self.external)?;
        let eval = guide.evaluator()?;
        let (x_t, init_objective) = self.init_latent(&eval, gamma, seed)?;
        let mut state = SamplerState {
            x: x_t,
            t: big_t,
            jumps_left: self.cfg.travel_jumps,
            steps: 0,
        };
        let mut step_rng = rng::stream(seed, "reverse-steps");
        let mut travel_rng = rng::stream(seed, "time-travel");
        let mut trace = Vec::new();
        let mut jumps = 0;
        let known_mae = |x0: &Image| crate::baselines::known_mae(x0, r0, mask);
        loop {
            let t = state.t;
            let eps = self.net.predict(&state.x, t)?;
            let x0 = self.sched.predict_x0(&state.x, &eps, t)?;
            let mae = known_mae(&x0);
            if t == 1 {
                trace.push(TraceStep {
                    step_index: state.steps,
                    t,
                    prior_term: 0.0,
                    constraint_term: eval.value(&x0)?,
                    grad_norm: 0.0,
                    jumped: false,
                    known_mae: mae,
                });
                let composite = composite(r0, &x0.map(|v| v.clamp(0.0, 1.0)), mask)?;
                return Ok(InpaintOutput {
                    raw: x0,
                    composite,
                    trace,
                    jumps,
                    init_objective,
                });
            }
            let d = self.refine_step(&eval, gamma, &state.x, &eps, t, &mut step_rng)?;
            state.x = d.z;
            state.t = t - 1;
            let jumped = time_travel(&mut state, self.sched, self.cfg, &mut travel_rng)?;
            jumps += usize::from(jumped);
            trace.push(TraceStep {
                step_index: state.steps,
                t,
                prior_term: d.prior,
                constraint_term: d.constraint,
                grad_norm: d.grad_norm,
                jumped,
                known_mae: mae,
            });
            state.steps += 1;
        }
    }
}
