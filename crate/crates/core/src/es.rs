//! Evolution Strategies with a fixed isotropic Gaussian search distribution.
//!
//! Each generation draws `n` standard-normal directions and evaluates both
//! mirrored offspring `mu + sigma * N` and `mu - sigma * N`. The mean then
//! moves along the rank-weighted average of the directions. `sigma` never
//! changes.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{evaluate, EnvKind, Environment, Trajectory};
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpSpec, ParamVector};

#[derive(Debug, Clone, PartialEq)]
pub struct SearchDistribution {
    mu: ParamVector,
    sigma: f64,
    learning_rate: f64,
}

impl SearchDistribution {
    pub fn new(mu: ParamVector, sigma: f64, learning_rate: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::config("sigma", format!("must be positive, got {sigma}")));
        }
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(Error::config(
                "es_learning_rate",
                format!("must be positive, got {learning_rate}"),
            ));
        }
        if !mu.is_finite() {
            return Err(Error::NonFinite("search mean"));
        }
        Ok(Self {
            mu,
            sigma,
            learning_rate,
        })
    }

    pub fn mu(&self) -> &ParamVector {
        &self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Replaces the mean, leaving `sigma` and the learning rate alone.
    pub fn set_mu(&mut self, mu: ParamVector) -> Result<()> {
        if mu.len() != self.mu.len() {
            return Err(Error::dim("search mean", self.mu.len(), mu.len()));
        }
        if !mu.is_finite() {
            return Err(Error::NonFinite("search mean"));
        }
        self.mu = mu;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessShaping {
    #[default]
    CenteredRank,
    /// Use the raw fitness values as weights.
    Raw,
}

/// One generation: `n` noise directions, `2n` mirrored offspring.
#[derive(Debug, Clone)]
pub struct OffspringSet {
    noises: Vec<ParamVector>,
    offspring: Vec<ParamVector>,
    fitnesses: Vec<Option<f64>>,
}

impl OffspringSet {
    pub fn noises(&self) -> &[ParamVector] {
        &self.noises
    }

    /// `offspring[2i] = mu + sigma N_i`, `offspring[2i + 1] = mu - sigma N_i`.
    pub fn offspring(&self) -> &[ParamVector] {
        &self.offspring
    }

    pub fn len(&self) -> usize {
        self.offspring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offspring.is_empty()
    }

    pub fn set_fitness(&mut self, index: usize, fitness: f64) {
        self.fitnesses[index] = Some(fitness);
    }

    pub fn set_fitnesses(&mut self, fitnesses: &[f64]) -> Result<()> {
        if fitnesses.len() != self.offspring.len() {
            return Err(Error::dim("offspring fitnesses", self.offspring.len(), fitnesses.len()));
        }
        for (slot, &f) in self.fitnesses.iter_mut().zip(fitnesses) {
            *slot = Some(f);
        }
        Ok(())
    }

    pub fn fitnesses(&self) -> &[Option<f64>] {
        &self.fitnesses
    }

    /// Sign applied to the noise direction of offspring `j`.
    fn direction_sign(j: usize) -> f64 {
        if j % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

pub fn sample_offspring<R: Rng + ?Sized>(
    dist: &SearchDistribution,
    n: usize,
    rng: &mut R,
) -> OffspringSet {
    let dim = dist.mu.len();
    let mut noises = Vec::with_capacity(n);
    let mut offspring = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let noise: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let mut plus = Vec::with_capacity(dim);
        let mut minus = Vec::with_capacity(dim);
        for (m, e) in dist.mu.iter().zip(&noise) {
            let step = dist.sigma * e;
            plus.push(m + step);
            minus.push(m - step);
        }
        noises.push(ParamVector::from_raw(noise));
        offspring.push(ParamVector::from_raw(plus));
        offspring.push(ParamVector::from_raw(minus));
    }
    OffspringSet {
        noises,
        offspring,
        fitnesses: vec![None; 2 * n],
    }
}

/// Centered ranks in `[-0.5, 0.5]`: rank `k` of `m` (ascending) maps to
/// `k / (m - 1) - 0.5`. Tied values share the average of their ranks, so
/// equal fitnesses always receive equal weights.
pub fn shape_fitness(raw: &[f64]) -> Vec<f64> {
    let m = raw.len();
    if m < 2 {
        return vec![0.0; m];
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; m];
    let mut start = 0;
    while start < m {
        let mut end = start + 1;
        while end < m && raw[order[end]] == raw[order[start]] {
            end += 1;
        }
        let avg = (start + end - 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    let denom = (m - 1) as f64;
    ranks.into_iter().map(|r| r / denom - 0.5).collect()
}

/// `mu <- mu + lr / (2n sigma) * sum_j w_j * (+-N)_j`, summed in offspring
/// order.
pub fn es_update(
    dist: &mut SearchDistribution,
    set: &OffspringSet,
    shaping: FitnessShaping,
) -> Result<()> {
    if set.noises.is_empty() {
        return Err(Error::Usage("empty offspring set".into()));
    }
    if set.noises[0].len() != dist.mu.len() {
        return Err(Error::dim("offspring noise", dist.mu.len(), set.noises[0].len()));
    }
    let fitnesses = set
        .fitnesses
        .iter()
        .enumerate()
        .map(|(j, f)| f.ok_or_else(|| Error::Usage(format!("offspring {j} was never evaluated"))))
        .collect::<Result<Vec<f64>>>()?;
    if fitnesses.iter().any(|f| !f.is_finite()) {
        return Err(Error::NonFinite("offspring fitness"));
    }
    let weights = match shaping {
        FitnessShaping::CenteredRank => shape_fitness(&fitnesses),
        FitnessShaping::Raw => fitnesses,
    };

    let mut direction = vec![0.0; dist.mu.len()];
    for (j, w) in weights.iter().enumerate() {
        let coef = w * OffspringSet::direction_sign(j);
        for (d, e) in direction.iter_mut().zip(set.noises[j / 2].iter()) {
            *d += coef * e;
        }
    }
    let scale = dist.learning_rate / (set.offspring.len() as f64 * dist.sigma);
    let mu = dist.mu.as_mut_slice();
    for (m, d) in mu.iter_mut().zip(&direction) {
        *m += scale * d;
    }
    if !dist.mu.is_finite() {
        return Err(Error::NonFinite("search mean after update"));
    }
    Ok(())
}

/// Samples, scores and applies one generation for an arbitrary fitness
/// function. Scores are computed in parallel and collected in index order.
pub fn run_generation<R, F>(
    dist: &mut SearchDistribution,
    n: usize,
    shaping: FitnessShaping,
    rng: &mut R,
    fitness: F,
) -> Result<OffspringSet>
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut set = sample_offspring(dist, n, rng);
    let scores: Vec<f64> = set.offspring.par_iter().map(|x| fitness(x)).collect();
    set.set_fitnesses(&scores)?;
    es_update(dist, &set, shaping)?;
    Ok(set)
}

/// Rolls out every offspring as an actor network, fanning out across
/// threads. The returned trajectories are in offspring order.
pub fn evaluate_offspring(
    set: &OffspringSet,
    actor_spec: &MlpSpec,
    env: EnvKind,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    set.offspring
        .par_iter()
        .map(|params| {
            let policy = Mlp::from_params(actor_spec, params)?;
            evaluate(&policy, env.make().as_mut(), seed)
        })
        .collect()
}

/// Fitness of the deterministic policy at the search mean.
pub fn evaluate_mean(
    dist: &SearchDistribution,
    actor_spec: &MlpSpec,
    env: &mut dyn Environment,
    seed: u64,
) -> Result<Trajectory> {
    let policy = Mlp::from_params(actor_spec, dist.mu())?;
    evaluate(&policy, env, seed)
}
