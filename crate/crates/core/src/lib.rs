//! Hybrid Evolution Strategies + TD3 training with a three-compartment
//! replay buffer.
//!
//! The crate is organised bottom-up: [`nn`] provides dense networks and Adam,
//! [`envs`] the control tasks and rollouts, [`replay`] the good/bad/noisy
//! buffer, [`es`] and [`td3`] the two learners, and [`orchestrator`] the loop
//! that ties them together under a [`RunConfig`].

pub mod config;
pub mod envs;
pub mod error;
pub mod es;
pub mod nn;
pub mod orchestrator;
pub mod replay;
pub mod td3;

pub use config::{Ablation, BufferConfig, EsConfig, RunConfig};
pub use envs::{evaluate, EnvKind, EnvSpec, Environment, Policy, StepResult, Trajectory};
pub use error::{Error, Result};
pub use es::{FitnessShaping, OffspringSet, SearchDistribution};
pub use nn::{AdamState, Mlp, MlpSpec, OutputActivation, ParamVector};
pub use orchestrator::{run, run_with, GenerationTrace, IterationReport, RunOutput, Trainer};
pub use replay::{Destination, MultiBuffer, SampleRatio, ThresholdMode, ThresholdTracker, Transition};
pub use td3::{Td3Agent, Td3Hypers};
