//! The hybrid training loop.
//!
//! Each iteration runs, in order: `M` frames of TD3 with exploration, `g`
//! generations of ES whose rollouts are routed into the good/bad
//! compartments, and the overwrite check that copies the TD3 actor into the
//! ES mean when it scores strictly higher.

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::envs::{evaluate, Environment};
use crate::error::Result;
use crate::es::{self, SearchDistribution};
use crate::nn::{Mlp, MlpSpec};
use crate::replay::{Batch, Destination, MultiBuffer, ThresholdTracker, Transition};
use crate::td3::{self, Td3Agent};

/// One row of the learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    /// 1-based.
    pub iteration: usize,
    pub cumulative_frames: u64,
    pub cumulative_es_evals: u64,
    pub es_eval: f64,
    pub td3_eval: f64,
    pub threshold: f64,
    pub good_size: usize,
    pub bad_size: usize,
    pub noisy_size: usize,
    pub overwrite_applied: bool,
    pub td3_updates: u64,
}

impl IterationReport {
    /// The better of the two evaluated policies.
    pub fn best_eval(&self) -> f64 {
        self.es_eval.max(self.td3_eval)
    }
}

/// Fine-grained trace entry, one per ES generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub iteration: usize,
    pub generation: usize,
    pub mean_fitness: f64,
    pub best_offspring: f64,
    pub routed_good: usize,
    pub routed_bad: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverwriteOutcome {
    pub td3_score: f64,
    pub es_score: f64,
    pub applied: bool,
}

/// Independent random streams, so that e.g. changing the ES population size
/// does not perturb TD3's exploration noise.
#[derive(Debug, Clone)]
struct Streams {
    explore: ChaCha8Rng,
    learn: ChaCha8Rng,
    es: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub struct Trainer {
    config: RunConfig,
    env: Box<dyn Environment>,
    actor_spec: MlpSpec,
    agent: Td3Agent,
    dist: SearchDistribution,
    buffer: MultiBuffer,
    tracker: ThresholdTracker,
    streams: Streams,
    frames: u64,
    es_evals: u64,
    td3_episodes: u64,
    iteration: usize,
    trace: Vec<GenerationTrace>,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let env = config.env.make();
        let spec = env.spec();
        let mut init = stream(config.seed, 0);
        let agent = Td3Agent::new(
            spec.obs_dim,
            spec.act_dim,
            spec.action_bound,
            &config.hidden_sizes,
            &mut init,
        )?;
        let actor_spec = agent.actor.spec().clone();
        let mu = Mlp::init_with_rng(&actor_spec, &mut stream(config.seed, 1)).params();
        let dist = SearchDistribution::new(mu, config.es.sigma, config.es.learning_rate)?;
        let buffer = MultiBuffer::new(config.multibuffer())?;
        let tracker = ThresholdTracker::new(config.buffer.good_fraction, config.buffer.threshold_mode);
        let streams = Streams {
            explore: stream(config.seed, 2),
            learn: stream(config.seed, 3),
            es: stream(config.seed, 4),
        };
        Ok(Self {
            config,
            env,
            actor_spec,
            agent,
            dist,
            buffer,
            tracker,
            streams,
            frames: 0,
            es_evals: 0,
            td3_episodes: 0,
            iteration: 0,
            trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn agent(&self) -> &Td3Agent {
        &self.agent
    }

    pub fn agent_mut(&mut self) -> &mut Td3Agent {
        &mut self.agent
    }

    pub fn distribution(&self) -> &SearchDistribution {
        &self.dist
    }

    pub fn distribution_mut(&mut self) -> &mut SearchDistribution {
        &mut self.dist
    }

    pub fn buffer(&self) -> &MultiBuffer {
        &self.buffer
    }

    pub fn tracker(&self) -> &ThresholdTracker {
        &self.tracker
    }

    pub fn actor_spec(&self) -> &MlpSpec {
        &self.actor_spec
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn es_evals(&self) -> u64 {
        self.es_evals
    }

    pub fn td3_episodes(&self) -> u64 {
        self.td3_episodes
    }

    pub fn generation_trace(&self) -> &[GenerationTrace] {
        &self.trace
    }

    /// The ES mean as an actor network.
    pub fn mean_policy(&self) -> Mlp {
        Mlp::from_params(&self.actor_spec, self.dist.mu()).expect("mean length fixed by actor spec")
    }

    fn eval_seed(&self) -> u64 {
        self.config.seed
    }

    /// Exactly `M` exploratory environment steps. Each step is stored in the
    /// noisy compartment and, once the buffer is ready, followed by one TD3
    /// update. Completed episodes raise the threshold; an episode cut off by
    /// the frame budget does not.
    pub fn td3_phase(&mut self) -> Result<()> {
        let budget = self.config.td3_frames_per_iter;
        let hypers = self.config.td3.clone();
        let mut state: Option<Vec<f64>> = None;
        let mut episode_return = 0.0;
        for _ in 0..budget {
            let obs = match state.take() {
                Some(s) => s,
                None => {
                    episode_return = 0.0;
                    self.env.reset(self.config.seed.wrapping_add(self.td3_episodes))
                }
            };
            let action = self
                .agent
                .select_action(&obs, &hypers, &mut self.streams.explore)?;
            let res = self.env.step(&action)?;
            self.frames += 1;
            episode_return += res.reward;
            let terminal = res.is_terminal_state();
            let done = res.terminated;
            self.buffer.push_noisy(Transition {
                state: obs,
                action,
                next_state: res.observation.clone(),
                reward: res.reward,
                terminated: terminal,
            });
            if self.buffer.ready(hypers.batch_size) {
                let batch = {
                    let sampled = self
                        .buffer
                        .sample_batch(hypers.batch_size, &mut self.streams.learn)?;
                    Batch::from_transitions(sampled)?
                };
                self.agent
                    .train_step(&batch, &hypers, &mut self.streams.learn)?;
            }
            if done {
                self.td3_episodes += 1;
                self.tracker.update(episode_return);
            } else {
                state = Some(res.observation);
            }
        }
        Ok(())
    }

    /// `g` generations: sample mirrored offspring, roll each out, route every
    /// trajectory in offspring order, then move the mean.
    pub fn es_phase(&mut self) -> Result<()> {
        let seed = self.eval_seed();
        for generation in 0..self.config.es_generations_per_iter {
            let mut set = es::sample_offspring(&self.dist, self.config.es.offspring, &mut self.streams.es);
            let trajectories = es::evaluate_offspring(&set, &self.actor_spec, self.config.env, seed)?;
            self.es_evals += trajectories.len() as u64;
            let fitnesses: Vec<f64> = trajectories.iter().map(|t| t.fitness).collect();
            set.set_fitnesses(&fitnesses)?;
            let (mut good, mut bad) = (0, 0);
            for traj in trajectories {
                match self.buffer.route_trajectory(traj, &mut self.tracker) {
                    Destination::Good => good += 1,
                    Destination::Bad => bad += 1,
                    Destination::Noisy => {}
                }
            }
            es::es_update(&mut self.dist, &set, self.config.es.shaping)?;
            let mean_fitness = es::evaluate_mean(&self.dist, &self.actor_spec, self.env.as_mut(), seed)?.fitness;
            self.tracker.update(mean_fitness);
            let best = fitnesses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            debug!(
                "iter {} gen {generation}: mean {mean_fitness:.3}, best offspring {best:.3}, good {good}, bad {bad}",
                self.iteration
            );
            self.trace.push(GenerationTrace {
                iteration: self.iteration,
                generation: generation + 1,
                mean_fitness,
                best_offspring: best,
                routed_good: good,
                routed_bad: bad,
                threshold: self.tracker.threshold(),
            });
        }
        Ok(())
    }

    fn average_score(&mut self, policy: &Mlp) -> Result<f64> {
        let n = self.config.overwrite_eval_episodes;
        let mut total = 0.0;
        for k in 0..n {
            let seed = self.eval_seed().wrapping_add(k as u64);
            total += evaluate(policy, self.env.as_mut(), seed)?.fitness;
        }
        Ok(total / n as f64)
    }

    /// Scores both policies over `overwrite_eval_episodes` noise-free
    /// episodes; if TD3 is strictly better (and overwriting is enabled) the
    /// ES mean becomes an exact copy of the actor's parameters.
    pub fn compare_and_overwrite(&mut self) -> Result<OverwriteOutcome> {
        let actor = self.agent.actor.clone();
        let td3_score = self.average_score(&actor)?;
        let mean = self.mean_policy();
        let es_score = self.average_score(&mean)?;
        let applied = self.config.overwrite && td3_score > es_score;
        if applied {
            self.dist.set_mu(actor.params())?;
        }
        Ok(OverwriteOutcome {
            td3_score,
            es_score,
            applied,
        })
    }

    pub fn run_iteration(&mut self) -> Result<IterationReport> {
        self.iteration += 1;
        self.td3_phase()?;
        self.es_phase()?;
        let outcome = self.compare_and_overwrite()?;
        let [good_size, bad_size, noisy_size] = self.buffer.sizes();
        let report = IterationReport {
            iteration: self.iteration,
            cumulative_frames: self.frames,
            cumulative_es_evals: self.es_evals,
            es_eval: outcome.es_score,
            td3_eval: outcome.td3_score,
            threshold: self.tracker.threshold(),
            good_size,
            bad_size,
            noisy_size,
            overwrite_applied: outcome.applied,
            td3_updates: self.agent.update_count(),
        };
        debug!("{report:?}");
        Ok(report)
    }
}

/// Final policies and the learning curve of one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub reports: Vec<IterationReport>,
    pub trace: Vec<GenerationTrace>,
    pub es_mean: Mlp,
    pub actor: Mlp,
}

pub fn run(config: RunConfig) -> Result<RunOutput> {
    run_with(config, |_| {})
}

/// Like [`run`], handing each report to `on_report` as soon as it exists, so
/// callers keep everything up to a failure.
pub fn run_with<F>(config: RunConfig, mut on_report: F) -> Result<RunOutput>
where
    F: FnMut(&IterationReport),
{
    let mut trainer = Trainer::new(config)?;
    let mut reports = Vec::with_capacity(trainer.config.iterations);
    for _ in 0..trainer.config.iterations {
        let report = trainer.run_iteration()?;
        on_report(&report);
        reports.push(report);
    }
    Ok(RunOutput {
        reports,
        trace: trainer.trace.clone(),
        es_mean: trainer.mean_policy(),
        actor: trainer.agent.actor.clone(),
    })
}

/// Critic network spec matching a run's environment and hidden sizes.
pub fn critic_spec_for(config: &RunConfig) -> Result<MlpSpec> {
    let spec = config.env.spec();
    td3::critic_spec(spec.obs_dim, spec.act_dim, &config.hidden_sizes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Ablation;
    use crate::envs::EnvKind;
    use crate::nn::ParamVector;

    fn small(env: EnvKind) -> RunConfig {
        let mut c = RunConfig {
            env,
            iterations: 2,
            td3_frames_per_iter: 300,
            es_generations_per_iter: 2,
            warmup: 200,
            hidden_sizes: vec![8],
            seed: 3,
            ..RunConfig::default()
        };
        c.es.offspring = 3;
        c.td3.batch_size = 16;
        c.overwrite_eval_episodes = 2;
        c
    }

    #[test]
    fn zero_frame_phase_is_a_no_op() {
        let mut c = small(EnvKind::PointMass2D);
        c.td3_frames_per_iter = 0;
        let mut t = Trainer::new(c).unwrap();
        let before = t.agent().actor.params();
        t.td3_phase().unwrap();
        assert_eq!(t.frames(), 0);
        assert_eq!(t.buffer().sizes(), [0, 0, 0]);
        assert!(t.agent().actor.params().bit_eq(&before));
        assert_eq!(t.tracker().threshold(), f64::NEG_INFINITY);
    }

    #[test]
    fn warmup_gate_blocks_updates() {
        let mut c = small(EnvKind::PointMass2D);
        c.td3_frames_per_iter = 150;
        c.warmup = 1000;
        let mut t = Trainer::new(c).unwrap();
        t.td3_phase().unwrap();
        assert_eq!(t.buffer().sizes(), [0, 0, 150]);
        assert_eq!(t.agent().update_count(), 0);
        // one complete 100-step episode, one cut off at the budget
        assert_eq!(t.td3_episodes(), 1);
        assert!(t.tracker().threshold().is_finite());
    }

    #[test]
    fn noisy_only_ratio_trains_after_warmup() {
        let mut c = small(EnvKind::PointMass2D).with_ablation(Ablation::Td3Only);
        c.warmup = 100;
        let mut t = Trainer::new(c).unwrap();
        t.td3_phase().unwrap();
        // ready from the 100th stored transition onwards
        assert_eq!(t.agent().update_count(), 201);
    }

    #[test]
    fn single_generation_counts() {
        let mut c = small(EnvKind::PointMass2D);
        c.es_generations_per_iter = 1;
        c.es.offspring = 1;
        let mut t = Trainer::new(c).unwrap();
        let mu_before = t.distribution().mu().clone();
        t.es_phase().unwrap();
        assert_eq!(t.es_evals(), 2);
        assert_eq!(t.generation_trace().len(), 1);
        let g = &t.generation_trace()[0];
        assert_eq!(g.routed_good + g.routed_bad, 2);
        assert_ne!(t.distribution().mu(), &mu_before);
    }

    #[test]
    fn bad_routing_when_threshold_is_high() {
        let mut c = small(EnvKind::PointMass2D);
        c.es_generations_per_iter = 1;
        let mut t = Trainer::new(c).unwrap();
        // every PointMass return is negative, far below 0.9 * 10
        t.tracker.update(10.0);
        t.es_phase().unwrap();
        let [good, bad, _] = t.buffer().sizes();
        assert_eq!(good, 0);
        assert_eq!(bad, 6 * 100);
    }

    #[test]
    fn tie_does_not_overwrite() {
        let c = small(EnvKind::Corridor);
        let mut t = Trainer::new(c).unwrap();
        let mu = t.agent().actor.params();
        t.distribution_mut().set_mu(mu.clone()).unwrap();
        let out = t.compare_and_overwrite().unwrap();
        assert_eq!(out.td3_score, out.es_score);
        assert!(!out.applied);
    }

    #[test]
    fn overwrite_copies_actor_exactly() {
        let c = small(EnvKind::PointMass2D);
        let mut t = Trainer::new(c).unwrap();
        let spec = t.actor_spec().clone();
        // Mean saturates both accelerations and overshoots the goal badly; the
        // zero actor just sits at the origin.
        let mut runaway = vec![0.0; spec.param_count()];
        let n = runaway.len();
        runaway[n - 2] = 3.0;
        runaway[n - 1] = 3.0;
        t.distribution_mut().set_mu(ParamVector::new(runaway).unwrap()).unwrap();
        t.agent_mut().actor = Mlp::zeros(&spec);
        let out = t.compare_and_overwrite().unwrap();
        assert!(out.td3_score > out.es_score);
        assert!(out.applied);
        assert!(t.distribution().mu().bit_eq(&t.agent().actor.params()));
        let again = t.compare_and_overwrite().unwrap();
        assert_eq!(again.es_score.to_bits(), again.td3_score.to_bits());
        assert!(!again.applied);
    }

    #[test]
    fn disabled_overwrite_never_fires() {
        let mut c = small(EnvKind::PointMass2D);
        c.overwrite = false;
        let mut t = Trainer::new(c).unwrap();
        let spec = t.actor_spec().clone();
        let mut runaway = vec![0.0; spec.param_count()];
        let n = runaway.len();
        runaway[n - 1] = 3.0;
        t.distribution_mut().set_mu(ParamVector::new(runaway.clone()).unwrap()).unwrap();
        t.agent_mut().actor = Mlp::zeros(&spec);
        let out = t.compare_and_overwrite().unwrap();
        assert!(out.td3_score > out.es_score && !out.applied);
        assert_eq!(t.distribution().mu().as_slice(), runaway.as_slice());
    }

    #[test]
    fn run_reports_and_accounting() {
        let c = small(EnvKind::PointMass2D);
        let out = run(c.clone()).unwrap();
        assert_eq!(out.reports.len(), 2);
        for (k, r) in out.reports.iter().enumerate() {
            let k = (k + 1) as u64;
            assert_eq!(r.iteration as u64, k);
            assert_eq!(r.cumulative_frames, k * c.td3_frames_per_iter as u64);
            assert_eq!(r.cumulative_es_evals, k * c.es_evals_per_iter() as u64);
        }
        let again = run(c).unwrap();
        assert_eq!(out.reports, again.reports);
        assert!(out.actor.params().bit_eq(&again.actor.params()));
    }

    #[test]
    fn zero_iterations() {
        let mut c = small(EnvKind::Pendulum);
        c.iterations = 0;
        let out = run(c.clone()).unwrap();
        assert!(out.reports.is_empty());
        let fresh = Trainer::new(c).unwrap();
        assert!(out.actor.params().bit_eq(&fresh.agent().actor.params()));
        assert!(out.es_mean.params().bit_eq(fresh.distribution().mu()));
    }

    #[test]
    fn ablation_modes() {
        let td3_only = run(small(EnvKind::Corridor).with_ablation(Ablation::Td3Only)).unwrap();
        assert!(td3_only.reports.iter().all(|r| r.cumulative_es_evals == 0));
        assert!(td3_only.reports.iter().all(|r| r.good_size == 0 && r.bad_size == 0));

        let es_only = run(small(EnvKind::Corridor).with_ablation(Ablation::EsOnly)).unwrap();
        assert!(es_only
            .reports
            .iter()
            .all(|r| r.td3_updates == 0 && !r.overwrite_applied && r.cumulative_frames == 0));

        let single = run(small(EnvKind::Corridor).with_ablation(Ablation::SingleBuffer)).unwrap();
        let last = single.reports.last().unwrap();
        assert_eq!((last.good_size, last.bad_size), (0, 0));
        assert!(last.noisy_size > 600);
    }

    #[test]
    fn full_mode_fills_compartments() {
        let out = run(small(EnvKind::Corridor)).unwrap();
        let last = out.reports.last().unwrap();
        assert!(last.good_size > 0);
        assert_eq!(last.noisy_size, 600);
        let routed: usize = out.trace.iter().map(|g| g.routed_good + g.routed_bad).sum();
        assert_eq!(routed, 2 * 2 * 6);
    }
}
