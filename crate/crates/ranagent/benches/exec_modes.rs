use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ranagent::deql::train::greedy_policy;
use ranagent::deql::{learner_loss, LossKind, Mlp, PrefBatch};
use ranagent::exec::Exec;
use ranagent::morl_env::{EnvConfig, LaConfig};
use ranagent::pareto_metrics::{eval_preferences, hv_monte_carlo, recover_front};
use ranagent::replay::Transition;
use ranagent::simplex::sample_uniform;
use ranagent::workflow::omega_sweep;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn loss(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // DST-sized input (one-hot position + preference), 64-unit layers.
    let sizes = [123, 64, 64, 64, 8];
    let online = Mlp::new(&sizes, &mut rng);
    let target = Mlp::new(&sizes, &mut rng);
    let batch: Vec<Transition> = (0..32)
        .map(|_| {
            let mut s = vec![0.0; 121];
            s[rng.random_range(0..121)] = 1.0;
            let mut s2 = vec![0.0; 121];
            s2[rng.random_range(0..121)] = 1.0;
            Transition { state: s, action: rng.random_range(0..4), reward: vec![0.0, -1.0], next_state: s2, done: rng.random_bool(0.05) }
        })
        .collect();
    let prefs = PrefBatch::Shared((0..16).map(|_| sample_uniform(2, &mut rng)).collect());
    let weights = vec![1.0; batch.len()];
    let mut g = c.benchmark_group("learner_loss");
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| learner_loss(&online, &target, &batch, &weights, &prefs, 0.99, LossKind::Envelope { lambda: 0.1 }, exec))
        });
    }
    g.finish();
}

fn hypervolume(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let front: Vec<Vec<f64>> = (0..64)
        .map(|_| {
            let w = sample_uniform(4, &mut rng);
            w.as_slice().iter().map(|x| x * 10.0).collect()
        })
        .collect();
    let r = vec![0.0; 4];
    let mut g = c.benchmark_group("hv_monte_carlo");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, 100_000), &front, |b, f| b.iter(|| hv_monte_carlo(f, &r, 100_000, 7, exec)));
    }
    g.finish();
}

fn rollouts(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let env = EnvConfig::ftn(6);
    let spec = env.build().spec();
    let net = Mlp::new(&[spec.state_dim + spec.reward_dim, 64, 64, 64, spec.n_actions * spec.reward_dim], &mut rng);
    let prefs = eval_preferences(spec.reward_dim, 500, 0);
    let policy = greedy_policy(&net);
    let make_env = || env.build();
    let la = EnvConfig::La(LaConfig::default()).build().spec();
    let la_net = Mlp::new(&[la.state_dim + la.reward_dim, 64, 64, 64, la.n_actions * la.reward_dim], &mut rng);
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let mut g = c.benchmark_group("rollouts");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("recover_front_ftn6", name), |b| b.iter(|| recover_front(&policy, &make_env, &prefs, exec)));
        g.bench_function(BenchmarkId::new("omega_sweep", name), |b| {
            b.iter(|| omega_sweep(&la_net, &LaConfig::default(), &grid, 200, 3, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, loss, hypervolume, rollouts);
criterion_main!(benches);
