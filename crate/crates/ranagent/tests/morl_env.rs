use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ranagent::morl_env::*;
use ranagent::pareto_metrics::{ccs, pareto_filter};

/// Independent oracle: exhaustive DFS over simple paths (bounded length) from the start.
fn dfs_treasures() -> Vec<(f64, usize)> {
    let mut best = std::collections::BTreeMap::<i64, usize>::new();
    fn go(r: usize, c: usize, d: usize, seen: &mut Vec<(usize, usize)>, best: &mut std::collections::BTreeMap<i64, usize>) {
        if d > 19 {
            return;
        }
        if let Some(v) = dst_treasure(r, c) {
            let k = (v * 10.0).round() as i64;
            let e = best.entry(k).or_insert(usize::MAX);
            *e = (*e).min(d);
            return;
        }
        let moves = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)];
        for (dr, dc) in moves {
            let (nr, nc) = (r as i64 + dr, c as i64 + dc);
            if nr < 0 || nc < 0 || nr >= 11 || nc >= 11 {
                continue;
            }
            let (nr, nc) = (nr as usize, nc as usize);
            if dst_is_rock(nr, nc) || seen.contains(&(nr, nc)) {
                continue;
            }
            seen.push((nr, nc));
            go(nr, nc, d + 1, seen, best);
            seen.pop();
        }
    }
    go(0, 0, 0, &mut vec![(0, 0)], &mut best);
    best.into_iter().map(|(k, d)| (k as f64 / 10.0, d)).collect()
}

#[test]
fn dst_bfs_matches_dfs_oracle() {
    let mut bfs = dst_shortest_paths();
    bfs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    assert_eq!(bfs, dfs_treasures());
}

#[test]
fn dst_treasure_step_and_time_penalty() {
    let mut env = Dst::new(0.99, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    env.reset(&mut rng);
    let t = env.step(1, &mut rng).unwrap();
    assert!(t.done);
    assert_eq!(t.reward, vec![0.7, -1.0]);
    assert!(matches!(env.step(0, &mut rng), Err(EnvError::Finished)));
    env.reset(&mut rng);
    assert!(matches!(env.step(4, &mut rng), Err(EnvError::InvalidAction { .. })));
}

#[test]
fn dst_front_undiscounted_and_discounted() {
    let undiscounted = true_pareto_set(&EnvConfig::Dst { gamma: 1.0, horizon: 100 }).unwrap();
    assert_eq!(undiscounted.len(), 10);
    assert!(undiscounted.contains(&vec![23.7, -19.0]));
    let front = true_pareto_set(&EnvConfig::dst()).unwrap();
    assert_eq!(front.len(), 10);
    assert_eq!(ccs(&front).len(), 10);
    // Dense preference sweep oracle: every treasure is the unique maximizer somewhere.
    let mut hit = vec![false; front.len()];
    for i in 0..=100_000 {
        let w = i as f64 / 100_000.0;
        let s: Vec<f64> = front.iter().map(|p| w * p[0] + (1.0 - w) * p[1]).collect();
        let best = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let arg: Vec<usize> = (0..s.len()).filter(|&k| s[k] == best).collect();
        if arg.len() == 1 {
            hit[arg[0]] = true;
        }
    }
    assert!(hit.iter().all(|h| *h));
}

#[test]
fn ftn_paths_terminate_at_depth() {
    for depth in [1, 5, 6] {
        let mut env = Ftn::new(depth, 0.99);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for leaf in 0..(1usize << depth) {
            env.reset(&mut rng);
            let mut rewards = Vec::new();
            for level in 0..depth {
                let a = (leaf >> (depth - 1 - level)) & 1;
                let t = env.step(a, &mut rng).unwrap();
                assert_eq!(t.done, level + 1 == depth);
                rewards.push(t.reward);
            }
            let g = discounted_return(&rewards, 0.99);
            let f = &env.fruits()[leaf];
            for j in 0..FTN_DIM {
                assert!((g[j] - 0.99f64.powi(depth as i32 - 1) * f[j]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn ftn_fronts() {
    let f0 = true_pareto_set(&EnvConfig::ftn(0)).unwrap();
    assert_eq!(f0.len(), 1);
    for d in [5, 6, 7] {
        let leaves = enumerate_returns(&EnvConfig::ftn(d)).unwrap();
        assert_eq!(leaves.len(), 1 << d);
        // Fruits lie on a sphere, so none dominates another and all support the hull.
        let front = true_pareto_set(&EnvConfig::ftn(d)).unwrap();
        assert_eq!(front.len(), leaves.len());
        assert_eq!(ccs(&front).len(), leaves.len());
    }
    assert_eq!(ftn_fruits(5), ftn_fruits(5));
}

#[test]
fn la_not_enumerable() {
    assert_eq!(true_pareto_set(&EnvConfig::La(LaConfig::default())), Err(EnvError::NotEnumerable));
}

#[test]
fn la_rewards() {
    let cfg = LaConfig::default();
    let mut env = LinkAdaptation::new(cfg.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut saw_fail = false;
    let mut saw_ok = false;
    for _ in 0..500 {
        env.reset(&mut rng);
        loop {
            let a = rng.random_range(0..8);
            let first = env.state().attempt == 1;
            let t = env.step(a, &mut rng).unwrap();
            if first {
                assert_eq!(t.reward[1], -1.0);
            }
            if t.reward[0] == 0.0 {
                saw_fail = true;
            } else {
                saw_ok = true;
                assert!((t.reward[0] - env.state().tbs / cfg.n_re_max).abs() < 1e-12);
            }
            if t.done {
                break;
            }
        }
        assert!(env.outcome().attempts <= 5);
    }
    assert!(saw_fail && saw_ok);
}

#[test]
fn trace_export() {
    let mut env = Ftn::new(2, 0.99);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    env.reset(&mut rng);
    let trace = vec![env.step(0, &mut rng).unwrap(), env.step(1, &mut rng).unwrap()];
    let csv = trace_csv(&trace);
    assert!(csv.starts_with("t,s,a,r1,r2,r3,r4,r5,r6,done\n"));
    assert_eq!(csv.lines().count(), 3);
}

fn run(cfg: &EnvConfig, seed: u64) -> Vec<(Vec<f64>, usize, Vec<f64>, bool)> {
    let mut env = cfg.build();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = env.spec().n_actions;
    let mut out = Vec::new();
    env.reset(&mut rng);
    for _ in 0..200 {
        let a = rng.random_range(0..n);
        let t = env.step(a, &mut rng).unwrap();
        let done = t.done;
        out.push((t.state, t.action, t.reward, t.done));
        if done {
            env.reset(&mut rng);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn same_seed_same_trace(seed in any::<u64>()) {
        for cfg in [EnvConfig::dst(), EnvConfig::ftn(5), EnvConfig::La(LaConfig::default())] {
            prop_assert_eq!(run(&cfg, seed), run(&cfg, seed));
        }
    }

    #[test]
    fn dst_time_component_is_episode_length(seed in any::<u64>()) {
        let mut env = Dst::new(1.0, 100);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        env.reset(&mut rng);
        let mut total = 0.0;
        let mut len = 0;
        loop {
            let t = env.step(rng.random_range(0..4), &mut rng).unwrap();
            total += t.reward[1];
            len += 1;
            if t.done { break; }
        }
        prop_assert_eq!(total, -(len as f64));
    }

    #[test]
    fn la_resource_cost_bounded(seed in any::<u64>()) {
        let mut env = LinkAdaptation::new(LaConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        env.reset(&mut rng);
        let mut cost = 0.0;
        loop {
            let t = env.step(rng.random_range(0..8), &mut rng).unwrap();
            cost += t.reward[1].abs();
            if t.done { break; }
        }
        prop_assert!(cost <= 5.0 + 1e-12);
    }

    #[test]
    fn la_success_monotone(c in 0.1f64..6.0, a in 0.1f64..6.0, b in 0.1f64..6.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(la_success_prob(c, lo, 4.0) >= la_success_prob(c, hi, 4.0));
    }
}

#[test]
fn pareto_of_dst_is_identity() {
    let r = enumerate_returns(&EnvConfig::dst()).unwrap();
    assert_eq!(pareto_filter(&r), r);
}
