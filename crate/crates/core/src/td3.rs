//! Twin Delayed DDPG: clipped double-Q targets with target policy smoothing,
//! delayed actor updates and Polyak-averaged target networks.
//!
//! Critics see `[state, action]` concatenated at the input layer. All noise
//! scales in [`Td3Hypers`] are fractions of the action bound.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamState, Mlp, MlpSpec, OutputActivation, ParamVector};
use crate::replay::Batch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Td3Hypers {
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: usize,
    pub explore_noise_std: f64,
    pub target_noise_std: f64,
    pub target_noise_clip: f64,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for Td3Hypers {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            explore_noise_std: 0.1,
            target_noise_std: 0.2,
            target_noise_clip: 0.5,
            batch_size: 256,
            lr: 3e-4,
        }
    }
}

impl Td3Hypers {
    pub fn validate(&self) -> Result<()> {
        let check = |key: &str, ok: bool, v: f64| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("td3.{key}"), format!("out of range: {v}")))
            }
        };
        check("gamma", (0.0..=1.0).contains(&self.gamma), self.gamma)?;
        check("tau", self.tau > 0.0 && self.tau <= 1.0, self.tau)?;
        check("policy_delay", self.policy_delay >= 1, self.policy_delay as f64)?;
        check(
            "explore_noise_std",
            self.explore_noise_std.is_finite() && self.explore_noise_std >= 0.0,
            self.explore_noise_std,
        )?;
        check(
            "target_noise_std",
            self.target_noise_std.is_finite() && self.target_noise_std >= 0.0,
            self.target_noise_std,
        )?;
        check(
            "target_noise_clip",
            self.target_noise_clip.is_finite() && self.target_noise_clip >= 0.0,
            self.target_noise_clip,
        )?;
        check("batch_size", self.batch_size >= 1, self.batch_size as f64)?;
        check("lr", self.lr.is_finite() && self.lr > 0.0, self.lr)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Td3Agent {
    pub actor: Mlp,
    pub critic0: Mlp,
    pub critic1: Mlp,
    pub target_actor: Mlp,
    pub target_critic0: Mlp,
    pub target_critic1: Mlp,
    actor_opt: AdamState,
    /// Covers both critics, `critic0` parameters first.
    critic_opt: AdamState,
    update_count: u64,
    obs_dim: usize,
    act_dim: usize,
    action_bound: f64,
}

/// Losses from one [`Td3Agent::train_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub critic_loss: (f64, f64),
    pub actor_loss: Option<f64>,
}

pub fn actor_spec(obs_dim: usize, act_dim: usize, hidden: &[usize], bound: f64) -> Result<MlpSpec> {
    let mut sizes = vec![obs_dim];
    sizes.extend_from_slice(hidden);
    sizes.push(act_dim);
    MlpSpec::new(sizes, OutputActivation::ScaledTanh(bound))
}

pub fn critic_spec(obs_dim: usize, act_dim: usize, hidden: &[usize]) -> Result<MlpSpec> {
    let mut sizes = vec![obs_dim + act_dim];
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    MlpSpec::new(sizes, OutputActivation::Identity)
}

/// Mean squared error of `critic(states, actions)` against `targets`, and its
/// gradient with respect to the critic's parameters.
pub fn critic_loss_and_grad(
    critic: &Mlp,
    input: ArrayView2<'_, f64>,
    targets: &Array1<f64>,
) -> Result<(f64, ParamVector)> {
    let n = input.nrows();
    if targets.len() != n {
        return Err(Error::dim("critic targets", n, targets.len()));
    }
    let tape = critic.forward_batch(input)?;
    let q = tape.output().column(0).to_owned();
    let residual = &q - targets;
    let loss = residual.mapv(|r| r * r).sum() / n as f64;
    let upstream = residual
        .mapv(|r| 2.0 * r / n as f64)
        .into_shape_with_order((n, 1))
        .unwrap();
    let (grad, _) = critic.backward_batch(&tape, upstream.view())?;
    Ok((loss, grad))
}

fn join(states: &Array2<f64>, actions: ArrayView2<'_, f64>) -> Array2<f64> {
    concatenate(Axis(1), &[states.view(), actions]).unwrap()
}

impl Td3Agent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        action_bound: f64,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let a_spec = actor_spec(obs_dim, act_dim, hidden, action_bound)?;
        let c_spec = critic_spec(obs_dim, act_dim, hidden)?;
        let actor = Mlp::init_with_rng(&a_spec, rng);
        let critic0 = Mlp::init_with_rng(&c_spec, rng);
        let critic1 = Mlp::init_with_rng(&c_spec, rng);
        Ok(Self::from_networks(actor, critic0, critic1))
    }

    /// Builds an agent around given networks; targets start as exact copies.
    pub fn from_networks(actor: Mlp, critic0: Mlp, critic1: Mlp) -> Self {
        let obs_dim = actor.spec().input_dim();
        let act_dim = actor.spec().output_dim();
        let action_bound = match actor.spec().output_activation() {
            OutputActivation::ScaledTanh(b) => b,
            _ => 1.0,
        };
        Self {
            actor_opt: AdamState::new(actor.param_count()),
            critic_opt: AdamState::new(critic0.param_count() + critic1.param_count()),
            target_actor: actor.clone(),
            target_critic0: critic0.clone(),
            target_critic1: critic1.clone(),
            actor,
            critic0,
            critic1,
            update_count: 0,
            obs_dim,
            act_dim,
            action_bound,
        }
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn action_bound(&self) -> f64 {
        self.action_bound
    }

    /// `clip(pi(obs) + xi)`, `xi ~ N(0, (explore_noise_std * bound)^2)`.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        hypers: &Td3Hypers,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let mut action = self.actor.forward(obs)?;
        let std = hypers.explore_noise_std * self.action_bound;
        let b = self.action_bound;
        for a in &mut action {
            let xi: f64 = rng.sample(StandardNormal);
            *a = (*a + std * xi).clamp(-b, b);
        }
        Ok(action)
    }

    /// Bootstrapped targets `r + not_done * gamma * min(Q0', Q1')` evaluated at
    /// smoothed target-policy actions.
    pub fn compute_targets<R: Rng + ?Sized>(
        &self,
        batch: &Batch,
        hypers: &Td3Hypers,
        rng: &mut R,
    ) -> Result<Array1<f64>> {
        if batch.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let b = self.action_bound;
        let std = hypers.target_noise_std * b;
        let clip = hypers.target_noise_clip * b;
        let mut next_actions = self.target_actor.predict_batch(batch.next_states.view())?;
        for a in next_actions.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *a = (*a + (std * z).clamp(-clip, clip)).clamp(-b, b);
        }
        let input = join(&batch.next_states, next_actions.view());
        let q0 = self.target_critic0.predict_batch(input.view())?;
        let q1 = self.target_critic1.predict_batch(input.view())?;
        let mut y = batch.rewards.clone();
        for i in 0..y.len() {
            let q = q0[[i, 0]].min(q1[[i, 0]]);
            y[i] += batch.not_done[i] * hypers.gamma * q;
        }
        Ok(y)
    }

    /// One Adam step for both critics toward `targets`.
    pub fn critic_update(
        &mut self,
        batch: &Batch,
        targets: &Array1<f64>,
        hypers: &Td3Hypers,
    ) -> Result<(f64, f64)> {
        let input = join(&batch.states, batch.actions.view());
        let (loss0, g0) = critic_loss_and_grad(&self.critic0, input.view(), targets)?;
        let (loss1, g1) = critic_loss_and_grad(&self.critic1, input.view(), targets)?;
        if !loss0.is_finite() || !loss1.is_finite() {
            return Err(Error::NonFinite("critic loss"));
        }
        let n0 = self.critic0.param_count();
        let mut params = self.critic0.params().into_vec();
        params.extend(self.critic1.params().iter());
        let mut grad = g0.into_vec();
        grad.extend(g1.iter());
        self.critic_opt.step(&mut params, &grad, hypers.lr)?;
        self.critic0.set_params(&params[..n0])?;
        self.critic1.set_params(&params[n0..])?;
        self.update_count += 1;
        Ok((loss0, loss1))
    }

    /// Gradient of `-mean Q0(s, pi(s))` with respect to the actor parameters,
    /// with the loss itself.
    pub fn actor_loss_and_grad(&self, batch: &Batch) -> Result<(f64, ParamVector)> {
        let n = batch.len();
        let actor_tape = self.actor.forward_batch(batch.states.view())?;
        let input = join(&batch.states, actor_tape.output());
        let critic_tape = self.critic0.forward_batch(input.view())?;
        let loss = -critic_tape.output().sum() / n as f64;
        let upstream = Array2::from_elem((n, 1), -1.0 / n as f64);
        let (_, input_grad) = self.critic0.backward_batch(&critic_tape, upstream.view())?;
        let action_grad = input_grad.slice(s![.., self.obs_dim..]);
        let (grad, _) = self.actor.backward_batch(&actor_tape, action_grad)?;
        Ok((loss, grad))
    }

    /// One Adam ascent step on `mean Q0(s, pi(s))`; critics are untouched.
    pub fn actor_update(&mut self, batch: &Batch, hypers: &Td3Hypers) -> Result<f64> {
        let (loss, grad) = self.actor_loss_and_grad(batch)?;
        let mut params = self.actor.params().into_vec();
        self.actor_opt.step(&mut params, &grad, hypers.lr)?;
        self.actor.set_params(&params)?;
        Ok(loss)
    }

    pub fn soft_update_targets(&mut self, tau: f64) -> Result<()> {
        soft_update(&mut self.target_actor, &self.actor, tau)?;
        soft_update(&mut self.target_critic0, &self.critic0, tau)?;
        soft_update(&mut self.target_critic1, &self.critic1, tau)
    }

    /// Critic step every call; actor step and target refresh every
    /// `policy_delay` calls.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        hypers: &Td3Hypers,
        rng: &mut R,
    ) -> Result<TrainStats> {
        if batch.states.ncols() != self.obs_dim || batch.actions.ncols() != self.act_dim {
            return Err(Error::dim("td3 batch", self.obs_dim + self.act_dim, batch.states.ncols() + batch.actions.ncols()));
        }
        let targets = self.compute_targets(batch, hypers, rng)?;
        let critic_loss = self.critic_update(batch, &targets, hypers)?;
        let actor_loss = if self.update_count % hypers.policy_delay as u64 == 0 {
            let loss = self.actor_update(batch, hypers)?;
            self.soft_update_targets(hypers.tau)?;
            Some(loss)
        } else {
            None
        };
        Ok(TrainStats {
            critic_loss,
            actor_loss,
        })
    }
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::config("tau", format!("must lie in [0, 1], got {tau}")));
    }
    target.soft_update_from(online, tau)
}
