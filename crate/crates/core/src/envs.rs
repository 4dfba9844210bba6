//! Small deterministic continuous-control tasks and the episode rollout used
//! for fitness evaluation.
//!
//! All dynamics use `dt = 0.1`. Actions are clipped to the environment's bound
//! without complaint.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::replay::Transition;

pub const DT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub action_bound: f64,
    pub max_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// The episode is over. Always set on the final allowed step.
    pub terminated: bool,
    /// Set when the episode ended only because it ran out of steps. Such an
    /// ending is not a true terminal state and should still be bootstrapped.
    pub truncated: bool,
}

impl StepResult {
    /// Whether value bootstrapping must stop at this transition.
    pub fn is_terminal_state(&self) -> bool {
        self.terminated && !self.truncated
    }
}

pub trait Environment: Send {
    fn spec(&self) -> EnvSpec;

    /// Returns the start observation. Dynamics are deterministic, so `seed`
    /// currently has no effect.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
}

/// Environment names accepted in run configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvKind {
    #[serde(rename = "pointmass2d")]
    PointMass2D,
    #[serde(rename = "pendulum")]
    Pendulum,
    #[serde(rename = "corridor")]
    Corridor,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::PointMass2D, EnvKind::Pendulum, EnvKind::Corridor];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::PointMass2D => "pointmass2d",
            EnvKind::Pendulum => "pendulum",
            EnvKind::Corridor => "corridor",
        }
    }

    pub fn make(self) -> Box<dyn Environment> {
        match self {
            EnvKind::PointMass2D => Box::new(PointMass2D::new()),
            EnvKind::Pendulum => Box::new(PendulumSwingUp::new()),
            EnvKind::Corridor => Box::new(DeceptiveCorridor::new()),
        }
    }

    pub fn spec(self) -> EnvSpec {
        match self {
            EnvKind::PointMass2D => PointMass2D::SPEC,
            EnvKind::Pendulum => PendulumSwingUp::SPEC,
            EnvKind::Corridor => DeceptiveCorridor::SPEC,
        }
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownEnv(s.to_string()))
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Shared step bookkeeping: counts steps and refuses to run past the end.
#[derive(Debug, Clone, Default)]
struct Clock {
    steps: usize,
    done: bool,
}

impl Clock {
    fn check(&self) -> Result<()> {
        if self.done {
            Err(Error::Usage("step called on a finished episode; reset first".into()))
        } else {
            Ok(())
        }
    }

    /// Advances the counter; returns `(terminated, truncated)`.
    fn tick(&mut self, max_steps: usize, reached_terminal: bool) -> (bool, bool) {
        self.steps += 1;
        let out_of_time = self.steps >= max_steps;
        self.done = reached_terminal || out_of_time;
        (self.done, out_of_time && !reached_terminal)
    }
}

fn check_action(spec: &EnvSpec, action: &[f64]) -> Result<()> {
    if action.len() != spec.act_dim {
        return Err(Error::dim("action", spec.act_dim, action.len()));
    }
    if action.iter().any(|a| a.is_nan()) {
        return Err(Error::NonFinite("action"));
    }
    Ok(())
}

/// A point in the plane with bounded velocity, rewarded for closeness to (1, 1).
#[derive(Debug, Clone, Default)]
pub struct PointMass2D {
    pos: [f64; 2],
    vel: [f64; 2],
    clock: Clock,
}

impl PointMass2D {
    pub const SPEC: EnvSpec = EnvSpec {
        obs_dim: 4,
        act_dim: 2,
        action_bound: 1.0,
        max_steps: 100,
    };
    pub const GOAL: [f64; 2] = [1.0, 1.0];

    pub fn new() -> Self {
        Self::default()
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }

    /// Places the mass at an arbitrary state, keeping the step counter.
    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
    }
}

impl Environment for PointMass2D {
    fn spec(&self) -> EnvSpec {
        Self::SPEC
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        *self = Self::default();
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.clock.check()?;
        check_action(&Self::SPEC, action)?;
        for i in 0..2 {
            let a = action[i].clamp(-1.0, 1.0);
            self.vel[i] = (self.vel[i] + DT * a).clamp(-1.0, 1.0);
            self.pos[i] += DT * self.vel[i];
        }
        let dx = self.pos[0] - Self::GOAL[0];
        let dy = self.pos[1] - Self::GOAL[1];
        let reward = -(dx * dx + dy * dy).sqrt();
        let (terminated, truncated) = self.clock.tick(Self::SPEC.max_steps, false);
        Ok(StepResult {
            observation: self.observation(),
            reward,
            terminated,
            truncated,
        })
    }
}

/// Torque-limited pendulum starting at the bottom; upright is `theta = 0`.
#[derive(Debug, Clone)]
pub struct PendulumSwingUp {
    theta: f64,
    theta_dot: f64,
    clock: Clock,
}

impl Default for PendulumSwingUp {
    fn default() -> Self {
        Self {
            theta: PI,
            theta_dot: 0.0,
            clock: Clock::default(),
        }
    }
}

/// Maps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    theta - two_pi * ((theta - PI) / two_pi).ceil()
}

impl PendulumSwingUp {
    pub const SPEC: EnvSpec = EnvSpec {
        obs_dim: 3,
        act_dim: 1,
        action_bound: 2.0,
        max_steps: 200,
    };
    pub const MAX_SPEED: f64 = 8.0;

    pub fn new() -> Self {
        Self::default()
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Environment for PendulumSwingUp {
    fn spec(&self) -> EnvSpec {
        Self::SPEC
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        *self = Self::default();
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.clock.check()?;
        check_action(&Self::SPEC, action)?;
        let u = action[0].clamp(-2.0, 2.0);
        // g = 10, unit mass and length.
        let theta_acc = -10.0 * (self.theta + PI).sin() * 1.5 + 3.0 * u;
        self.theta_dot = (self.theta_dot + DT * theta_acc).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.theta += DT * self.theta_dot;
        let w = wrap_angle(self.theta);
        let reward = -(w * w + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u);
        let (terminated, truncated) = self.clock.tick(Self::SPEC.max_steps, false);
        Ok(StepResult {
            observation: self.observation(),
            reward,
            terminated,
            truncated,
        })
    }
}

/// One-dimensional corridor with a small reward for hiding on the left and a
/// large terminal reward far to the right.
#[derive(Debug, Clone, Default)]
pub struct DeceptiveCorridor {
    x: f64,
    clock: Clock,
}

impl DeceptiveCorridor {
    pub const SPEC: EnvSpec = EnvSpec {
        obs_dim: 1,
        act_dim: 1,
        action_bound: 1.0,
        max_steps: 120,
    };
    pub const GOAL: f64 = 4.0;
    pub const GOAL_REWARD: f64 = 100.0;
    pub const LURE_EDGE: f64 = -1.0;
    pub const LURE_REWARD: f64 = 0.1;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn position(&self) -> f64 {
        self.x
    }

    pub fn set_position(&mut self, x: f64) {
        self.x = x.clamp(-5.0, 5.0);
    }
}

impl Environment for DeceptiveCorridor {
    fn spec(&self) -> EnvSpec {
        Self::SPEC
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        *self = Self::default();
        vec![self.x]
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.clock.check()?;
        check_action(&Self::SPEC, action)?;
        let a = action[0].clamp(-1.0, 1.0);
        self.x = (self.x + DT * a).clamp(-5.0, 5.0);
        let at_goal = self.x >= Self::GOAL;
        let reward = if at_goal {
            Self::GOAL_REWARD
        } else if self.x < Self::LURE_EDGE {
            Self::LURE_REWARD
        } else {
            0.0
        };
        let (terminated, truncated) = self.clock.tick(Self::SPEC.max_steps, at_goal);
        Ok(StepResult {
            observation: vec![self.x],
            reward,
            terminated,
            truncated,
        })
    }
}

/// A deterministic map from observation to action.
pub trait Policy {
    fn act(&self, observation: &[f64]) -> Result<Vec<f64>>;
}

impl Policy for Mlp {
    fn act(&self, observation: &[f64]) -> Result<Vec<f64>> {
        self.forward(observation)
    }
}

impl<F> Policy for F
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    fn act(&self, observation: &[f64]) -> Result<Vec<f64>> {
        Ok(self(observation))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    /// Undiscounted sum of the member rewards, accumulated in order.
    pub fitness: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Rolls out one full noise-free episode and records every transition.
pub fn evaluate<P: Policy + ?Sized>(
    policy: &P,
    env: &mut dyn Environment,
    seed: u64,
) -> Result<Trajectory> {
    let mut state = env.reset(seed);
    let mut traj = Trajectory {
        transitions: Vec::with_capacity(env.spec().max_steps),
        fitness: 0.0,
    };
    loop {
        let action = policy.act(&state)?;
        let res = env.step(&action)?;
        traj.fitness += res.reward;
        let done = res.terminated;
        let terminal = res.is_terminal_state();
        let next = res.observation;
        traj.transitions.push(Transition {
            state: std::mem::replace(&mut state, next.clone()),
            action,
            next_state: next,
            reward: res.reward,
            terminated: terminal,
        });
        if done {
            return Ok(traj);
        }
    }
}
