//! Diffusion-bridge pretraining: linear noise schedule, the closed-form
//! Gaussian bridge marginal between two trajectories' features, and the
//! embedding-space pred-x reconstruction loss.
//!
//! The GPS side is bridged with noise, e_t = mu_hat + sigma_hat * xi; the
//! grid side uses the same interpolation coefficients without the noise
//! term. The model reads both interpolants and is trained to reconstruct
//! the pre-encoded bridge mean, with gradients blocked through the target
//! branch so the pre-encoder cannot collapse the loss to zero.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::sam::{
    encode_sequence, gps_features, grid_features, pre_encode, BoundParams, SamConfig,
};
use crate::traj::{resample, to_grid_sequence, GridSpec, Trajectory};

/// Linear beta(t) schedule with the variance-preserving pairing
/// sigma_t^2 = 1 - alpha_t^2. The horizon is fixed at T = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
    pub t_horizon: f64,
}

impl BridgeSchedule {
    pub fn new(beta_min: f64, beta_max: f64) -> Result<BridgeSchedule> {
        if !(beta_min.is_finite() && beta_max.is_finite()) || beta_min <= 0.0 {
            return Err(Error::Config(format!(
                "schedule needs 0 < beta_min <= beta_max, got ({beta_min}, {beta_max})"
            )));
        }
        if beta_min > beta_max {
            return Err(Error::Config(format!(
                "beta_min {beta_min} exceeds beta_max {beta_max}"
            )));
        }
        Ok(BridgeSchedule {
            beta_min,
            beta_max,
            t_horizon: 1.0,
        })
    }

    fn check_t(&self, t: f64) -> Result<()> {
        if !(0.0..=self.t_horizon).contains(&t) {
            return Err(Error::Config(format!(
                "bridge time {t} outside [0, {}]",
                self.t_horizon
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: f64) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.beta_min + t * (self.beta_max - self.beta_min))
    }

    /// alpha_t = exp(-1/2 int_0^t beta(s) ds) for the linear beta.
    pub fn alpha(&self, t: f64) -> Result<f64> {
        self.check_t(t)?;
        Ok((-0.5 * (self.beta_min * t + (self.beta_max - self.beta_min) * t * t / 2.0)).exp())
    }

    pub fn sigma_sq(&self, t: f64) -> Result<f64> {
        let a = self.alpha(t)?;
        Ok(1.0 - a * a)
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        Ok(self.sigma_sq(t)?.sqrt())
    }

    /// SNR_t = alpha_t^2 / sigma_t^2; infinite at t = 0.
    pub fn snr(&self, t: f64) -> Result<f64> {
        let a = self.alpha(t)?;
        let s2 = 1.0 - a * a;
        if s2 == 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(a * a / s2)
    }

    /// rho_t = SNR_T / SNR_t, the interpolation weight toward the terminal
    /// state; 0 at t = 0, 1 at t = T.
    pub fn rho(&self, t: f64) -> Result<f64> {
        self.check_t(t)?;
        if t == 0.0 {
            return Ok(0.0);
        }
        if t == self.t_horizon {
            return Ok(1.0);
        }
        let a_t = self.alpha(t)?;
        let a_tt = self.alpha(self.t_horizon)?;
        let s2_t = 1.0 - a_t * a_t;
        let s2_tt = 1.0 - a_tt * a_tt;
        Ok((a_tt * a_tt * s2_t) / (a_t * a_t * s2_tt))
    }

    /// Variance of the bridge marginal, sigma_t^2 (1 - rho_t).
    pub fn bridge_var(&self, t: f64) -> Result<f64> {
        let v = self.sigma_sq(t)? * (1.0 - self.rho(t)?);
        Ok(v.max(0.0))
    }
}

fn check_same_shape(e0: &Tensor, e_t: &Tensor) -> Result<()> {
    if e0.shape() != e_t.shape() {
        return Err(Error::Shape(format!(
            "bridge endpoints disagree: {}x{} against {}x{}",
            e0.rows, e0.cols, e_t.rows, e_t.cols
        )));
    }
    Ok(())
}

/// Noise-free interpolant rho (alpha_t/alpha_T) eT + alpha_t (1-rho) e0;
/// equals the bridge mean. Exact at both endpoints.
pub fn interpolate(schedule: &BridgeSchedule, e0: &Tensor, e_t: &Tensor, t: f64) -> Result<Tensor> {
    check_same_shape(e0, e_t)?;
    schedule.check_t(t)?;
    if t == 0.0 {
        return Ok(e0.clone());
    }
    if t == schedule.t_horizon {
        return Ok(e_t.clone());
    }
    let rho = schedule.rho(t)?;
    let a_t = schedule.alpha(t)?;
    let a_tt = schedule.alpha(schedule.t_horizon)?;
    let w_t = rho * a_t / a_tt;
    let w_0 = a_t * (1.0 - rho);
    Ok(e0.zip(e_t, |a, b| w_0 * a + w_t * b))
}

/// Mean and standard deviation of the bridge marginal q(x_t | x_0, x_T).
pub fn bridge_stats(
    schedule: &BridgeSchedule,
    e0: &Tensor,
    e_t: &Tensor,
    t: f64,
) -> Result<(Tensor, f64)> {
    let mu = interpolate(schedule, e0, e_t, t)?;
    let sigma = if t == 0.0 || t == schedule.t_horizon {
        0.0
    } else {
        schedule.bridge_var(t)?.sqrt()
    };
    Ok((mu, sigma))
}

/// One draw from the bridge: noisy GPS interpolant, deterministic grid
/// interpolant, and the stats they came from.
#[derive(Debug, Clone)]
pub struct BridgeSample {
    pub t: f64,
    pub e_gps_t: Tensor,
    pub e_grid_t: Tensor,
    pub mu_hat: Tensor,
    pub sigma_hat: f64,
}

pub fn sample_bridge(
    schedule: &BridgeSchedule,
    e0_gps: &Tensor,
    e_t_gps: &Tensor,
    e0_grid: &Tensor,
    e_t_grid: &Tensor,
    t: f64,
    rng: &mut impl Rng,
) -> Result<BridgeSample> {
    let (mu_hat, sigma_hat) = bridge_stats(schedule, e0_gps, e_t_gps, t)?;
    let e_gps_t = if sigma_hat == 0.0 {
        mu_hat.clone()
    } else {
        mu_hat.map(|m| m + sigma_hat * rng.sample::<f64, _>(StandardNormal))
    };
    let e_grid_t = interpolate(schedule, e0_grid, e_t_grid, t)?;
    Ok(BridgeSample {
        t,
        e_gps_t,
        e_grid_t,
        mu_hat,
        sigma_hat,
    })
}

/// Everything a pretraining step needs besides the pair and the parameters.
pub struct PretrainContext<'a> {
    pub schedule: BridgeSchedule,
    pub grid: &'a GridSpec,
    pub sam: SamConfig,
    pub resample_len: usize,
    pub t_min: f64,
    pub t_max: f64,
}

impl PretrainContext<'_> {
    pub fn validate(&self) -> Result<()> {
        self.sam.validate()?;
        if self.resample_len < 2 {
            return Err(Error::Config(format!(
                "resample length must be at least 2, got {}",
                self.resample_len
            )));
        }
        if !(0.0 < self.t_min && self.t_min < self.t_max && self.t_max < self.schedule.t_horizon) {
            return Err(Error::Config(format!(
                "bridge time range ({}, {}) must sit strictly inside (0, {})",
                self.t_min, self.t_max, self.schedule.t_horizon
            )));
        }
        Ok(())
    }

    fn draw_t(&self, rng: &mut impl Rng) -> f64 {
        rng.gen_range(self.t_min..=self.t_max)
    }
}

/// Both feature views of a trajectory after resampling to the common
/// bridge length.
fn pair_features(traj: &Trajectory, ctx: &PretrainContext) -> Result<(Tensor, Tensor)> {
    let r = resample(traj, ctx.resample_len)?;
    let seq = to_grid_sequence(&r, ctx.grid)?;
    Ok((gps_features(&r, ctx.grid)?, grid_features(&seq, ctx.grid)?))
}

struct BridgeInputs {
    e_gps_t: Tensor,
    e_grid_t: Tensor,
    mu_hat: Tensor,
}

/// Draw one noised bridge state for the pair; `None` if the ids coincide.
fn bridge_inputs(
    a: &Trajectory,
    b: &Trajectory,
    ctx: &PretrainContext,
    rng: &mut impl Rng,
) -> Result<Option<BridgeInputs>> {
    if a.id == b.id {
        return Ok(None);
    }
    let (gps0, grid0) = pair_features(a, ctx)?;
    let (gps_t, grid_t) = pair_features(b, ctx)?;
    let t = ctx.draw_t(rng);
    let s = sample_bridge(&ctx.schedule, &gps0, &gps_t, &grid0, &grid_t, t, rng)?;
    Ok(Some(BridgeInputs {
        e_gps_t: s.e_gps_t,
        e_grid_t: s.e_grid_t,
        mu_hat: s.mu_hat,
    }))
}

/// Pre-encoded bridge mean, detached from the graph: the regression
/// target is a constant, so no gradient reaches the PE weights through it.
fn detached_target(mu_hat: &Tensor, ctx: &PretrainContext, store: &ParamStore) -> Result<Tensor> {
    let mut tape = Tape::new();
    let params = BoundParams::bind(&mut tape, store)?;
    let mu_in = tape.leaf(mu_hat.clone())?;
    let out = pre_encode(&mut tape, &params, &ctx.sam, mu_in)?;
    Ok(tape.value(out).clone())
}

fn loss_against_target(
    inputs: &BridgeInputs,
    target: &Tensor,
    ctx: &PretrainContext,
    store: &ParamStore,
) -> Result<(Tape, BoundParams, crate::autodiff::Var, f64)> {
    let mut tape = Tape::new();
    let params = BoundParams::bind(&mut tape, store)?;
    let gps_in = tape.leaf(inputs.e_gps_t.clone())?;
    let grid_in = tape.leaf(inputs.e_grid_t.clone())?;
    let h = encode_sequence(&mut tape, &params, &ctx.sam, gps_in, grid_in)?;
    let tgt = tape.leaf(target.clone())?;
    let diff = tape.sub(h, tgt)?;
    let sq = tape.mul(diff, diff)?;
    let loss = tape.mean(sq)?;
    let value = tape.value(loss).item();
    Ok((tape, params, loss, value))
}

fn pair_loss_tape(
    a: &Trajectory,
    b: &Trajectory,
    ctx: &PretrainContext,
    store: &ParamStore,
    rng: &mut impl Rng,
) -> Result<Option<(Tape, BoundParams, crate::autodiff::Var, f64)>> {
    match bridge_inputs(a, b, ctx, rng)? {
        None => Ok(None),
        Some(inputs) => {
            let target = detached_target(&inputs.mu_hat, ctx, store)?;
            loss_against_target(&inputs, &target, ctx, store).map(Some)
        }
    }
}

/// Forward-only bridge loss for a pair; `None` if the ids coincide.
pub fn pretrain_loss(
    a: &Trajectory,
    b: &Trajectory,
    ctx: &PretrainContext,
    store: &ParamStore,
    rng: &mut impl Rng,
) -> Result<Option<f64>> {
    Ok(pair_loss_tape(a, b, ctx, store, rng)?.map(|(_, _, _, v)| v))
}

/// One pretraining step on a pair: builds the bridge, runs the model,
/// backpropagates, and adds gradients into `store`. Returns the loss, or
/// `None` if the pair was skipped (identical ids).
pub fn pretrain_step(
    a: &Trajectory,
    b: &Trajectory,
    ctx: &PretrainContext,
    store: &mut ParamStore,
    rng: &mut impl Rng,
) -> Result<Option<f64>> {
    match pair_loss_tape(a, b, ctx, store, rng)? {
        None => Ok(None),
        Some((tape, params, loss, value)) => {
            let grads = tape.backward(loss)?;
            params.accumulate_into(&grads, store)?;
            Ok(Some(value))
        }
    }
}
