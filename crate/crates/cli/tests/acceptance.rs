//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run a subset with `cargo test --test acceptance -- c4 c5`.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use estd3_cli::experiment::curve_path;
use estd3_cli::{read_curve, run_experiment, OutputOptions};
use estd3_core::envs::PointMass2D;
use estd3_core::es::{es_update, evaluate_mean, run_generation, sample_offspring, FitnessShaping};
use estd3_core::nn::{Mlp, MlpSpec, OutputActivation};
use estd3_core::replay::MultiBufferConfig;
use estd3_core::{
    evaluate, run, Ablation, Destination, EnvKind, MultiBuffer, ParamVector, RunConfig, SampleRatio,
    SearchDistribution, ThresholdMode, ThresholdTracker, Trainer, Trajectory, Transition,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances and budgets.
const GRAD_STEP: f64 = 1e-5;
const GRAD_MAX_REL_ERR: f64 = 1e-4;
/// Denominator floor for the relative error, well above the ~1e-10
/// absolute error of central differences at this step.
const GRAD_REL_FLOOR: f64 = 1e-6;
const GRAD_BUDGET: Duration = Duration::from_secs(10);
const SPHERE_RADIUS: f64 = 0.1;
const SPHERE_MAX_GENERATIONS: usize = 300;
const SPHERE_BUDGET: Duration = Duration::from_secs(30);
const POINTMASS_TARGET: f64 = -20.0;
const POINTMASS_SEEDS: u64 = 5;
const POINTMASS_REQUIRED: usize = 4;
const POINTMASS_BUDGET: Duration = Duration::from_secs(600);
const CORRIDOR_SEEDS: u64 = 7;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 1 --------------------------------------------------------------------

fn objective(spec: &MlpSpec, params: &[f64], x: &[f64], up: &[f64]) -> f64 {
    let net = Mlp::from_params(spec, params).unwrap();
    net.forward(x).unwrap().iter().zip(up).map(|(y, u)| y * u).sum()
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut nets = 0;
    while nets < 20 {
        let mut sizes = vec![rng.random_range(1..=6)];
        for _ in 0..rng.random_range(1..=2) {
            sizes.push(rng.random_range(2..=10));
        }
        sizes.push(rng.random_range(1..=3));
        let output = [
            OutputActivation::Tanh,
            OutputActivation::ScaledTanh(2.0),
            OutputActivation::Identity,
        ][nets % 3];
        let spec = MlpSpec::new(sizes, output).unwrap();
        if spec.param_count() > 200 {
            continue;
        }
        nets += 1;
        let params: Vec<f64> = (0..spec.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let net = Mlp::from_params(&spec, &params).unwrap();
        let x: Vec<f64> = (0..spec.input_dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
        let up: Vec<f64> = (0..spec.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grad = net.backward(&x, &up).unwrap();
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] = params[i] + GRAD_STEP;
            let fp = objective(&spec, &p, &x, &up);
            p[i] = params[i] - GRAD_STEP;
            let fm = objective(&spec, &p, &x, &up);
            let numeric = (fp - fm) / (2.0 * GRAD_STEP);
            let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(GRAD_REL_FLOOR);
            worst = worst.max(rel);
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= GRAD_MAX_REL_ERR && elapsed < GRAD_BUDGET,
        format!("max relative error {worst:.2e} over 20 nets in {elapsed:.2?}"),
    )
}

// 2 --------------------------------------------------------------------

fn es_sphere() -> Outcome {
    let start = Instant::now();
    let mut reached = Vec::new();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let target: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |x: &[f64]| -x.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let mut dist = SearchDistribution::new(ParamVector::zeros(10), 0.05, 0.05).unwrap();
        let mut hit = None;
        for g in 1..=SPHERE_MAX_GENERATIONS {
            run_generation(&mut dist, 30, FitnessShaping::CenteredRank, &mut rng, f).unwrap();
            if (-f(dist.mu())).sqrt() < SPHERE_RADIUS {
                hit = Some(g);
                break;
            }
        }
        reached.push(hit);
    }
    let elapsed = start.elapsed();
    let ok = reached.iter().all(Option::is_some) && elapsed < SPHERE_BUDGET;
    check(ok, format!("generations to within {SPHERE_RADIUS}: {reached:?} in {elapsed:.2?}"))
}

// 3 --------------------------------------------------------------------

fn rank_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let maps: [(&str, fn(f64) -> f64); 3] = [
        ("2x+7", |x| 2.0 * x + 7.0),
        ("x^3", |x| x * x * x),
        ("exp", f64::exp),
    ];
    for trial in 0..50 {
        let mu: Vec<f64> = (0..17).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = SearchDistribution::new(ParamVector::new(mu).unwrap(), 0.1, 0.03).unwrap();
        let mut set = sample_offspring(&base, 8, &mut rng);
        let fit: Vec<f64> = (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
        set.set_fitnesses(&fit).unwrap();
        let mut reference = base.clone();
        es_update(&mut reference, &set, FitnessShaping::CenteredRank).unwrap();
        for (name, g) in maps {
            let mapped: Vec<f64> = fit.iter().map(|&f| g(f)).collect();
            set.set_fitnesses(&mapped).unwrap();
            let mut d = base.clone();
            es_update(&mut d, &set, FitnessShaping::CenteredRank).unwrap();
            if !d.mu().bit_eq(reference.mu()) {
                return Err(format!("trial {trial}: update changed under {name}"));
            }
        }
    }
    Ok("50 generations x 3 increasing maps, all updates bit-identical".into())
}

// 4 --------------------------------------------------------------------

fn transitions(n: usize, tag: f64) -> Vec<Transition> {
    (0..n)
        .map(|i| Transition {
            state: vec![tag, i as f64],
            action: vec![0.0],
            next_state: vec![tag, i as f64 + 1.0],
            reward: tag,
            terminated: false,
        })
        .collect()
}

fn buffer_composition() -> Outcome {
    let ratio = SampleRatio::new(0.5, 0.2, 0.3).unwrap();
    let mut buf = MultiBuffer::new(MultiBufferConfig {
        ratio,
        min_total: 10,
        ..Default::default()
    })
    .unwrap();
    let mut tracker = ThresholdTracker::new(0.9, ThresholdMode::Literal);
    let good = Trajectory {
        transitions: transitions(40, 1.0),
        fitness: 100.0,
    };
    let bad = Trajectory {
        transitions: transitions(25, 2.0),
        fitness: 1.0,
    };
    assert_eq!(buf.route_trajectory(good, &mut tracker), Destination::Good);
    assert_eq!(buf.route_trajectory(bad, &mut tracker), Destination::Bad);
    for t in transitions(30, 3.0) {
        buf.push_noisy(t);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..1000 {
        let batch = buf.sample_batch(10, &mut rng).map_err(|e| e.to_string())?;
        let mut counts = [0usize; 3];
        for t in &batch {
            let slot = match buf.compartment_of(t) {
                Some(Destination::Good) => 0,
                Some(Destination::Bad) => 1,
                Some(Destination::Noisy) => 2,
                None => return Err(format!("batch {i}: transition from no compartment")),
            };
            counts[slot] += 1;
        }
        if counts != [5, 2, 3] {
            return Err(format!("batch {i}: composition {counts:?}"));
        }
    }
    Ok("1000 batches of 10, each exactly (5, 2, 3)".into())
}

// 5 --------------------------------------------------------------------

fn threshold_routing() -> Outcome {
    let mut buf = MultiBuffer::new(MultiBufferConfig {
        min_total: 1,
        ..Default::default()
    })
    .unwrap();
    let mut tracker = ThresholdTracker::new(0.9, ThresholdMode::Literal);
    if tracker.threshold() != f64::NEG_INFINITY {
        return Err(format!("initial threshold {}", tracker.threshold()));
    }
    let routes: Vec<Destination> = [50.0, 40.0, 60.0, 53.0, 55.0]
        .iter()
        .map(|&f| {
            let traj = Trajectory {
                transitions: transitions(1, f),
                fitness: f,
            };
            buf.route_trajectory(traj, &mut tracker)
        })
        .collect();
    use Destination::{Bad, Good};
    check(
        routes == [Good, Bad, Good, Bad, Good] && tracker.threshold() == 60.0,
        format!("routes {routes:?}, final threshold {}", tracker.threshold()),
    )
}

// 6 --------------------------------------------------------------------

fn overwrite_exactness() -> Outcome {
    let mut fired = 0;
    let mut checked = 0;
    for seed in 0..4 {
        let mut cfg = RunConfig {
            env: EnvKind::PointMass2D,
            td3_frames_per_iter: 1500,
            es_generations_per_iter: 2,
            warmup: 200,
            hidden_sizes: vec![16, 16],
            seed,
            ..RunConfig::default()
        };
        cfg.es.offspring = 3;
        cfg.td3.batch_size = 32;
        cfg.td3.lr = 1e-3;
        let mut trainer = Trainer::new(cfg).map_err(|e| e.to_string())?;
        for _ in 0..4 {
            trainer.td3_phase().map_err(|e| e.to_string())?;
            trainer.es_phase().map_err(|e| e.to_string())?;
            let outcome = trainer.compare_and_overwrite().map_err(|e| e.to_string())?;
            checked += 1;
            if !outcome.applied {
                continue;
            }
            fired += 1;
            let actor = trainer.agent().actor.clone();
            if !actor.params().bit_eq(trainer.distribution().mu()) {
                return Err(format!("seed {seed}: mu differs from the actor after overwrite"));
            }
            let mut env = PointMass2D::new();
            let es = evaluate_mean(trainer.distribution(), trainer.actor_spec(), &mut env, seed).unwrap();
            let td3 = evaluate(&actor, &mut env, seed).unwrap();
            if es.fitness.to_bits() != td3.fitness.to_bits() || es != td3 {
                return Err(format!("seed {seed}: evaluations differ ({} vs {})", es.fitness, td3.fitness));
            }
        }
    }
    check(fired > 0, format!("{fired} overwrites in {checked} comparisons, all exact"))
}

// 7 --------------------------------------------------------------------

/// Best return of a saturated PD controller `a = clip(kp (goal - p) - kd v)`
/// over a grid of gains.
fn pointmass_oracle() -> (f64, f64, f64) {
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 1..=30 {
        for j in 0..=30 {
            let (kp, kd) = (i as f64, j as f64 * 0.5);
            let policy = move |o: &[f64]| -> Vec<f64> {
                (0..2).map(|k| (kp * (1.0 - o[k]) - kd * o[2 + k]).clamp(-1.0, 1.0)).collect()
            };
            let mut env = PointMass2D::new();
            let r = evaluate(&policy, &mut env, 0).unwrap().fitness;
            if r > best.0 {
                best = (r, kp, kd);
            }
        }
    }
    best
}

pub fn pointmass_td3_config(seed: u64) -> RunConfig {
    RunConfig {
        env: EnvKind::PointMass2D,
        iterations: 10,
        td3_frames_per_iter: 3000,
        warmup: 1000,
        seed,
        ..RunConfig::default()
    }
    .with_ablation(Ablation::Td3Only)
}

fn td3_competence() -> Outcome {
    let (oracle, kp, kd) = pointmass_oracle();
    let stationary = -100.0 * 2f64.sqrt();
    let start = Instant::now();
    let mut scores = Vec::new();
    for seed in 0..POINTMASS_SEEDS {
        let out = run(pointmass_td3_config(seed)).map_err(|e| e.to_string())?;
        let last = out.reports.last().unwrap();
        assert_eq!(last.cumulative_frames, 30_000);
        scores.push(last.best_eval());
    }
    let elapsed = start.elapsed();
    let passing = scores.iter().filter(|&&s| s >= POINTMASS_TARGET).count();
    let shown: Vec<String> = scores.iter().map(|s| format!("{s:.2}")).collect();
    check(
        passing >= POINTMASS_REQUIRED && elapsed < POINTMASS_BUDGET,
        format!(
            "{passing}/{POINTMASS_SEEDS} seeds >= {POINTMASS_TARGET} [{}] in {elapsed:.0?}; \
             PD oracle {oracle:.2} (kp {kp}, kd {kd}), stationary {stationary:.2}",
            shown.join(", ")
        ),
    )
}

// 8 --------------------------------------------------------------------

fn corridor_config(seed: u64, mode: Ablation) -> RunConfig {
    let mut c = RunConfig {
        env: EnvKind::Corridor,
        iterations: 10,
        td3_frames_per_iter: 3000,
        es_generations_per_iter: 10,
        seed,
        ..RunConfig::default()
    };
    c.es.offspring = 10;
    c.with_ablation(mode)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn hybrid_beats_parts() -> Outcome {
    let mut medians = Vec::new();
    let mut detail = Vec::new();
    for mode in [Ablation::Full, Ablation::Td3Only, Ablation::EsOnly] {
        let mut finals = Vec::new();
        for seed in 0..CORRIDOR_SEEDS {
            let out = run(corridor_config(seed, mode)).map_err(|e| e.to_string())?;
            finals.push(out.reports.last().unwrap().best_eval());
        }
        let shown: Vec<String> = finals.iter().map(|s| format!("{s:.1}")).collect();
        let m = median(finals);
        detail.push(format!("{} median {m:.2} [{}]", mode.name(), shown.join(" ")));
        medians.push(m);
    }
    check(medians[0] > medians[1] && medians[0] > medians[2], detail.join("; "))
}

// 9, 10 ----------------------------------------------------------------

fn small_full_config() -> RunConfig {
    let mut c = RunConfig {
        env: EnvKind::PointMass2D,
        iterations: 3,
        td3_frames_per_iter: 730,
        es_generations_per_iter: 3,
        warmup: 500,
        hidden_sizes: vec![16, 16],
        ..RunConfig::default()
    };
    c.es.offspring = 4;
    c.td3.batch_size = 64;
    c
}

fn determinism() -> Outcome {
    let cfg = small_full_config();
    let seeds = [0, 1];
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_experiment(&cfg, &seeds, d.path(), OutputOptions { smoothed: true, trace: true })
            .map_err(|e| format!("{e:#}"))?;
    }
    let mut compared = 0;
    for entry in fs::read_dir(dirs[0].path()).unwrap() {
        let name = entry.unwrap().file_name();
        let a = fs::read(dirs[0].path().join(&name)).unwrap();
        let b = fs::read(dirs[1].path().join(&name)).map_err(|e| format!("{name:?}: {e}"))?;
        if a != b {
            return Err(format!("{name:?} differs between runs"));
        }
        compared += 1;
    }
    check(compared == 2 + 4 * seeds.len(), format!("{compared} output files byte-identical"))
}

fn frame_accounting() -> Outcome {
    let cfg = small_full_config();
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&cfg, &[7], dir.path(), OutputOptions::default()).map_err(|e| format!("{e:#}"))?;
    let rows = read_curve(fs::File::open(curve_path(dir.path(), 7)).unwrap()).map_err(|e| e.to_string())?;
    let last = rows.last().ok_or("empty curve")?;
    let frames = (cfg.iterations * cfg.td3_frames_per_iter) as u64;
    let evals = (cfg.iterations * cfg.es_generations_per_iter * 2 * cfg.es.offspring) as u64;
    let per_iter_ok = rows.iter().enumerate().all(|(k, r)| {
        r.cumulative_frames == (k as u64 + 1) * cfg.td3_frames_per_iter as u64
            && r.cumulative_es_evals == (k as u64 + 1) * cfg.es_evals_per_iter() as u64
    });
    check(
        last.cumulative_frames == frames && last.cumulative_es_evals == evals && per_iter_ok,
        format!(
            "frames {} (expected {frames}), ES evaluations {} (expected {evals})",
            last.cumulative_frames, last.cumulative_es_evals
        ),
    )
}

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome); 10] = [
        ("c1", "gradient oracle", gradient_oracle),
        ("c2", "ES sphere convergence", es_sphere),
        ("c3", "ES rank invariance", rank_invariance),
        ("c4", "buffer composition", buffer_composition),
        ("c5", "threshold routing", threshold_routing),
        ("c6", "overwrite exactness", overwrite_exactness),
        ("c9", "end-to-end determinism", determinism),
        ("c10", "frame accounting", frame_accounting),
        ("c7", "TD3 on PointMass2D", td3_competence),
        ("c8", "hybrid beats parts on corridor", hybrid_beats_parts),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|x| x == id) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {id:>3} {name} ({secs:.1}s): {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {id:>3} {name} ({secs:.1}s): {d}");
            }
        }
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
