use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ranagent::replay::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn freq(shards: &[ReplayShard<u64>], draws: usize, batch: usize, seed: u64) -> std::collections::HashMap<u64, usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = std::collections::HashMap::new();
    for _ in 0..draws / batch {
        let b = sample(shards, batch, 0.4, &mut rng).unwrap();
        for x in b.items {
            *counts.entry(x).or_insert(0) += 1;
        }
    }
    counts
}

#[test]
fn two_item_ratio() {
    let mut s = ReplayShard::new(0, 8, 1.0).unwrap();
    s.add_batch(vec![1u64, 2], &[1.0, 3.0]).unwrap();
    let c = freq(&[s], 100_000, 2, 1);
    let f = c[&2] as f64 / 100_000.0;
    assert!((f - 0.75).abs() < 0.01, "{f}");
}

#[test]
fn alpha_zero_is_uniform() {
    let mut s = ReplayShard::new(0, 8, 0.0).unwrap();
    s.add_batch(vec![1u64, 2], &[1.0, 30.0]).unwrap();
    let c = freq(&[s], 100_000, 2, 2);
    assert!((c[&1] as f64 / 100_000.0 - 0.5).abs() < 0.01);
}

#[test]
fn closed_form_weights() {
    let w = importance_weights(&[0.25, 0.75], 2, 1.0);
    assert_eq!(w[0], 1.0);
    assert!((w[1] - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(importance_weights(&[0.25, 0.75], 2, 0.0), vec![1.0, 1.0]);
}

#[test]
fn dst_local_buffer_fill() {
    let mut s = ReplayShard::new(0, 125, 0.6).unwrap();
    s.add_batch((0..125u64).collect(), &vec![1.0; 125]).unwrap();
    assert_eq!(s.len(), 125);
    s.add_batch(vec![999], &[1.0]).unwrap();
    assert_eq!(s.len(), 125);
}

/// 16 items spread over three shards; empirical law against p^α/ΣZ.
#[test]
fn chi_square_sixteen_items() {
    for alpha in [1.0, 0.6, 0.0] {
        let pr: Vec<f64> = (0..16).map(|i| 0.5 + (i as f64 * 0.37) % 2.0).collect();
        let mut shards = vec![
            ReplayShard::new(0, 5, alpha).unwrap(),
            ReplayShard::new(1, 6, alpha).unwrap(),
            ReplayShard::new(2, 5, alpha).unwrap(),
        ];
        shards[0].add_batch((0..5u64).collect(), &pr[0..5]).unwrap();
        shards[1].add_batch((5..11u64).collect(), &pr[5..11]).unwrap();
        shards[2].add_batch((11..16u64).collect(), &pr[11..16]).unwrap();
        let n = 100_000;
        let c = freq(&shards, n, 4, 7);
        let z: f64 = pr.iter().map(|p| p.powf(alpha)).sum();
        let chi2: f64 = (0..16u64)
            .map(|i| {
                let e = n as f64 * pr[i as usize].powf(alpha) / z;
                let o = *c.get(&i).unwrap_or(&0) as f64;
                (o - e).powi(2) / e
            })
            .sum();
        let crit = ChiSquared::new(15.0).unwrap().inverse_cdf(0.99);
        assert!(chi2 < crit, "alpha {alpha}: chi2 {chi2} >= {crit}");
    }
}

#[test]
fn tenfold_priority() {
    let alpha = 0.6;
    let n = 10;
    let mut s = ReplayShard::new(0, n, alpha).unwrap();
    let ids = s.add_batch((0..n as u64).collect(), &vec![1.0; n]).unwrap();
    s.update_priorities(&ids[3..4], &[10.0]);
    let c = freq(&[s], 100_000, 5, 9);
    let expect = 10f64.powf(alpha) / (10f64.powf(alpha) + (n - 1) as f64);
    assert!((c[&3] as f64 / 100_000.0 - expect).abs() < 0.01);
}

#[test]
fn identical_update_and_stale() {
    let mut s = ReplayShard::new(0, 4, 0.6).unwrap();
    let ids = s.add_batch(vec![1u64, 2, 3, 4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    let z = s.total();
    s.update_priorities(&ids[1..2], &[2.0]);
    assert!((s.total() - z).abs() < 1e-9);
    s.add_batch(vec![5u64], &[1.0]).unwrap();
    assert_eq!(s.update_priorities(&ids[0..1], &[9.0]), 1);
    assert_eq!(s.stale_count(), 1);
    assert_eq!(s.priority(0), 1.0);
}

#[test]
fn snapshot_round_trip() {
    let mut s = ReplayShard::new(3, 5, 0.6).unwrap();
    let t = |i: usize| Transition {
        state: vec![i as f64, 0.5],
        action: i % 4,
        reward: vec![1.0, -1.0],
        next_state: vec![0.0; 2],
        done: i.is_multiple_of(2),
    };
    s.add_batch((0..7).map(t).collect(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("shard.bin");
    s.save(&path).unwrap();
    let r = ReplayShard::<Transition>::load(&path).unwrap();
    assert_eq!(r.to_bytes(), s.to_bytes());
    assert_eq!(r.total(), s.total());
    let mut a = ChaCha8Rng::seed_from_u64(1);
    let mut b = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(r.draw(10, &mut a).items, s.draw(10, &mut b).items);
    let bytes = s.to_bytes();
    assert!(ReplayShard::<Transition>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn served_shards_follow_the_same_law() {
    let servers: Vec<ShardServer<u64>> = (0..2)
        .map(|k| ShardServer::spawn(ReplayShard::new(k, 8, 1.0).unwrap()))
        .collect();
    let handles: Vec<_> = servers
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let inbox = s.inbox();
            std::thread::spawn(move || {
                inbox.add_batch(vec![k as u64 * 10], vec![1.0 + 2.0 * k as f64]);
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut hits = 0;
    let n = 40_000;
    for _ in 0..n / 2 {
        let b = sample_served(&servers, 2, 1.0, &mut rng).unwrap();
        hits += b.items.iter().filter(|x| **x == 10).count();
        update_served(&servers, &b.ids, &[1.0, 3.0]);
    }
    assert!((hits as f64 / n as f64 - 0.75).abs() < 0.01);
    let shards: Vec<_> = servers.into_iter().map(|s| s.stop()).collect();
    assert_eq!(shards[0].len() + shards[1].len(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn conservation_and_isolation(seed in any::<u64>(), alpha in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shards: Vec<ReplayShard<u64>> = (0..3).map(|k| ReplayShard::new(k, 37, alpha).unwrap()).collect();
        let mut ids: Vec<ItemId> = Vec::new();
        for step in 0..10_000u64 {
            let op = rng.random_range(0..3);
            let k = rng.random_range(0..3);
            let before: Vec<Vec<u8>> = shards.iter().map(|s| {
                let mut v = Vec::new();
                v.extend_from_slice(&s.total().to_le_bytes());
                v.extend_from_slice(&(s.len() as u64).to_le_bytes());
                v
            }).collect();
            match op {
                0 => {
                    let n = rng.random_range(1..6);
                    let p: Vec<f64> = (0..n).map(|_| rng.random_range(1e-3..5.0)).collect();
                    ids.extend(shards[k].add_batch(vec![step; n], &p).unwrap());
                }
                1 if !ids.is_empty() => {
                    let pick: Vec<ItemId> = (0..4).map(|_| ids[rng.random_range(0..ids.len())]).filter(|i| i.shard == k).collect();
                    let p: Vec<f64> = pick.iter().map(|_| rng.random_range(0.0..5.0)).collect();
                    shards[k].update_priorities(&pick, &p);
                }
                _ => {
                    if shards.iter().map(|s| s.len()).sum::<usize>() >= 4 {
                        let b = sample(&shards, 4, 0.5, &mut rng).unwrap();
                        prop_assert!(b.weights.iter().all(|w| *w > 0.0 && *w <= 1.0));
                        prop_assert!(b.weights.contains(&1.0));
                    }
                }
            }
            for (j, s) in shards.iter().enumerate() {
                let rel = (s.total() - s.recomputed_total()).abs() / s.recomputed_total().max(1e-300);
                prop_assert!(rel < 1e-6);
                if j != k {
                    let mut v = Vec::new();
                    v.extend_from_slice(&s.total().to_le_bytes());
                    v.extend_from_slice(&(s.len() as u64).to_le_bytes());
                    prop_assert_eq!(&v, &before[j]);
                }
            }
        }
    }
}
