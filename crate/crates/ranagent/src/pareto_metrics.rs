//! Front construction and front-quality metrics. All objectives are maximized.

use crate::exec::Exec;
use crate::morl_env::Env;
use crate::simplex::Preference;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

pub const EPS_MATCH: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("point {0:?} does not dominate the reference point")]
    RefNotDominated(Vec<f64>),
    #[error("need at least two points")]
    TooFewPoints,
}

/// `a` weakly better everywhere and strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
}

/// Non-dominated points, first occurrence of exact duplicates kept once.
pub fn pareto_filter(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if points.iter().any(|q| dominates(q, p)) {
            continue;
        }
        if points[..i].iter().any(|q| q == p) {
            continue;
        }
        out.push(p.clone());
    }
    out
}

fn cross(o: &[f64], a: &[f64], b: &[f64]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex coverage set of a Pareto-filtered front. Points on a supporting
/// facet (collinear) are kept.
pub fn ccs(front: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if front.len() <= 1 {
        return front.to_vec();
    }
    let m = front[0].len();
    if m == 2 {
        ccs_2d(front)
    } else {
        front.iter().filter(|p| support_value(p, front) >= -1e-9 * scale(front)).cloned().collect()
    }
}

fn scale(front: &[Vec<f64>]) -> f64 {
    front.iter().flatten().fold(1.0f64, |a, x| a.max(x.abs()))
}

fn ccs_2d(front: &[Vec<f64>]) -> Vec<Vec<f64>> {
    // On a 2-D Pareto front sorted by x ascending, y is descending; the CCS is
    // the upper hull, keeping points that lie on a hull edge.
    let mut pts = front.to_vec();
    pts.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap().then(b[1].partial_cmp(&a[1]).unwrap()));
    let tol = 1e-12 * scale(front).powi(2);
    let mut hull: Vec<Vec<f64>> = Vec::new();
    for p in pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], &p) > tol {
            hull.pop();
        }
        hull.push(p);
    }
    hull
}

/// `max_ω min_q ω·(p - q)` over the simplex, i.e. how far `p` is from being
/// the maximizer for its best preference. Zero iff `p` is in the CCS.
pub fn support_value(p: &[f64], front: &[Vec<f64>]) -> f64 {
    let m = p.len();
    let cols: Vec<Vec<f64>> = front.iter().map(|q| p.iter().zip(q).map(|(a, b)| a - b).collect()).collect();
    let lo = cols.iter().flatten().cloned().fold(0.0f64, f64::min);
    let k = 1.0 - lo;
    // Game value via LP: maximize Σy s.t. Σ_q (D[q][j]+K) y_q ≤ 1 for every objective j, y ≥ 0.
    let a: Vec<Vec<f64>> = (0..m).map(|j| cols.iter().map(|c| c[j] + k).collect()).collect();
    let c = vec![1.0; cols.len()];
    let b = vec![1.0; m];
    let opt = lp_max_le(&a, &b, &c);
    1.0 / opt - k
}

/// Dense tableau simplex for `max cᵀx` subject to `Ax ≤ b`, `x ≥ 0`, `b ≥ 0`,
/// with Bland's rule. Returns the optimal objective (problem assumed bounded).
pub fn lp_max_le(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> f64 {
    let rows = a.len();
    let n = c.len();
    let width = n + rows + 1;
    let mut t = vec![vec![0.0; width]; rows + 1];
    for i in 0..rows {
        t[i][..n].copy_from_slice(&a[i]);
        t[i][n + i] = 1.0;
        t[i][width - 1] = b[i];
    }
    for j in 0..n {
        t[rows][j] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + rows).collect();
    let eps = 1e-12;
    for _ in 0..10_000 {
        let Some(col) = (0..width - 1).find(|&j| t[rows][j] < -eps) else { break };
        let mut best: Option<(f64, usize)> = None;
        for i in 0..rows {
            if t[i][col] > eps {
                let ratio = t[i][width - 1] / t[i][col];
                match best {
                    Some((r, bi)) if ratio > r + eps || (ratio >= r - eps && basis[i] > basis[bi]) => {}
                    _ => best = Some((ratio, i)),
                }
            }
        }
        let Some((_, row)) = best else { return f64::INFINITY };
        let piv = t[row][col];
        for v in t[row].iter_mut() {
            *v /= piv;
        }
        let prow = t[row].clone();
        for (i, r) in t.iter_mut().enumerate() {
            if i != row && r[col] != 0.0 {
                let f = r[col];
                for (x, p) in r.iter_mut().zip(&prow) {
                    *x -= f * p;
                }
            }
        }
        basis[row] = col;
    }
    t[rows][width - 1]
}

/// Fraction-matched F1 with ℓ∞ ε-ball matching.
pub fn crf1(recovered: &[Vec<f64>], truth: &[Vec<f64>], eps: f64) -> f64 {
    let close = |a: &Vec<f64>, b: &Vec<f64>| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= eps);
    if recovered.is_empty() || truth.is_empty() {
        return 0.0;
    }
    let p = recovered.iter().filter(|r| truth.iter().any(|t| close(r, t))).count() as f64 / recovered.len() as f64;
    let r = truth.iter().filter(|t| recovered.iter().any(|x| close(x, t))).count() as f64 / truth.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Hypervolume {
    pub value: f64,
    /// Zero for exact computations.
    pub std_err: f64,
}

pub const HV_SAMPLES: usize = 1 << 20;

pub fn hypervolume(front: &[Vec<f64>], reference: &[f64]) -> Result<Hypervolume, MetricsError> {
    hypervolume_with(front, reference, HV_SAMPLES, 0x4856, Exec::best())
}

/// Exact sweep for two objectives, seeded Monte Carlo otherwise.
pub fn hypervolume_with(
    front: &[Vec<f64>],
    reference: &[f64],
    samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<Hypervolume, MetricsError> {
    if let Some(p) = front.iter().find(|p| p.iter().zip(reference).any(|(x, r)| x < r)) {
        return Err(MetricsError::RefNotDominated(p.clone()));
    }
    if front.is_empty() {
        return Ok(Hypervolume { value: 0.0, std_err: 0.0 });
    }
    if reference.len() == 2 {
        return Ok(Hypervolume { value: hv_2d(front, reference), std_err: 0.0 });
    }
    Ok(hv_monte_carlo(front, reference, samples, seed, exec))
}

fn hv_2d(front: &[Vec<f64>], r: &[f64]) -> f64 {
    let mut pts = pareto_filter(front);
    pts.sort_by(|a, b| b[0].partial_cmp(&a[0]).unwrap());
    let mut area = 0.0;
    let mut y_top = r[1];
    for p in pts {
        if p[1] > y_top {
            area += (p[0] - r[0]) * (p[1] - y_top);
            y_top = p[1];
        }
    }
    area
}

pub fn hv_monte_carlo(front: &[Vec<f64>], r: &[f64], samples: usize, seed: u64, exec: Exec) -> Hypervolume {
    let m = r.len();
    let hi: Vec<f64> = (0..m).map(|j| front.iter().map(|p| p[j]).fold(r[j], f64::max)).collect();
    let box_vol: f64 = (0..m).map(|j| hi[j] - r[j]).product();
    if box_vol == 0.0 {
        return Hypervolume { value: 0.0, std_err: 0.0 };
    }
    let chunks = 64;
    let per = samples.div_ceil(chunks);
    let hits: Vec<usize> = exec.map_range(chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut x = vec![0.0; m];
        let mut h = 0;
        for _ in 0..per {
            for j in 0..m {
                x[j] = r[j] + rng.random::<f64>() * (hi[j] - r[j]);
            }
            if front.iter().any(|p| p.iter().zip(&x).all(|(a, b)| a >= b)) {
                h += 1;
            }
        }
        h
    });
    let n = (per * chunks) as f64;
    let f = hits.iter().sum::<usize>() as f64 / n;
    Hypervolume { value: f * box_vol, std_err: box_vol * (f * (1.0 - f) / n).sqrt() }
}

/// Mean over objectives of the mean squared gap between consecutive sorted values.
pub fn sparsity(front: &[Vec<f64>]) -> Result<f64, MetricsError> {
    if front.len() < 2 {
        return Err(MetricsError::TooFewPoints);
    }
    let m = front[0].len();
    let n = front.len();
    let mut total = 0.0;
    for j in 0..m {
        let mut v: Vec<f64> = front.iter().map(|p| p[j]).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        total += v.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / (n - 1) as f64;
    }
    Ok(total / m as f64)
}

/// Componentwise minimum over the front minus one.
pub fn default_reference(front: &[Vec<f64>]) -> Vec<f64> {
    let m = front[0].len();
    (0..m).map(|j| front.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min) - 1.0).collect()
}

/// Evaluation preferences: evenly spaced for two objectives, Dirichlet(1) draws otherwise.
pub fn eval_preferences(m: usize, n: usize, seed: u64) -> Vec<Preference> {
    if m == 2 {
        if n == 1 {
            return vec![Preference::pair(0.5)];
        }
        return (0..n).map(|i| Preference::pair(i as f64 / (n - 1) as f64)).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| crate::simplex::sample_uniform(m, &mut rng)).collect()
}

/// Greedy rollout of `policy(state, ω)` from a fresh environment; discounted return.
pub fn rollout<P>(policy: &P, env: &mut dyn Env, w: &Preference, seed: u64) -> Vec<f64>
where
    P: Fn(&[f64], &Preference) -> usize + ?Sized,
{
    let spec = env.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = env.reset(&mut rng);
    let mut rewards = Vec::new();
    for _ in 0..spec.horizon.max(1) {
        let a = policy(&s, w);
        let tr = env.step(a, &mut rng).expect("policy returns valid actions");
        rewards.push(tr.reward);
        s = tr.next_state;
        if tr.done {
            break;
        }
    }
    crate::morl_env::discounted_return(&rewards, spec.gamma)
}

/// Roll out the greedy policy for each preference and Pareto-filter the returns.
pub fn recover_front<P, F>(policy: &P, make_env: &F, prefs: &[Preference], exec: Exec) -> Vec<Vec<f64>>
where
    P: Fn(&[f64], &Preference) -> usize + Sync + ?Sized,
    F: Fn() -> Box<dyn Env> + Sync,
{
    let returns = exec.map(prefs, |w| {
        let mut env = make_env();
        rollout(policy, env.as_mut(), w, 0)
    });
    dedup(&pareto_filter(&returns), EPS_MATCH)
}

fn dedup(points: &[Vec<f64>], eps: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for p in points {
        if !out.iter().any(|q| q.iter().zip(p).all(|(a, b)| (a - b).abs() <= eps)) {
            out.push(p.clone());
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub env: String,
    pub seed: u64,
    pub crf1: f64,
    pub hypervolume: f64,
    pub hypervolume_std_err: f64,
    pub ref_point: Vec<f64>,
    pub sparsity: Option<f64>,
    pub n_prefs: usize,
    pub recovered: usize,
    pub truth: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_examples() {
        let pts = vec![vec![1.0, 1.0], vec![2.0, 0.0], vec![0.0, 2.0], vec![0.5, 0.5]];
        assert_eq!(pareto_filter(&pts).len(), 3);
        assert_eq!(pareto_filter(&pts[..1]), pts[..1].to_vec());
    }

    #[test]
    fn concave_middle_dropped() {
        let f = vec![vec![0.0, 1.0], vec![0.4, 0.4], vec![1.0, 0.0]];
        assert_eq!(ccs(&f), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let line = vec![vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.0]];
        assert_eq!(ccs(&line).len(), 3);
    }

    #[test]
    fn lp_small() {
        // max x + y s.t. x + 2y <= 4, 3x + y <= 6 -> (1.6, 1.2), 2.8
        let v = lp_max_le(&[vec![1.0, 2.0], vec![3.0, 1.0]], &[4.0, 6.0], &[1.0, 1.0]);
        assert!((v - 2.8).abs() < 1e-12);
    }

    #[test]
    fn hv_examples() {
        assert_eq!(hypervolume(&[vec![3.0, 4.0]], &[0.0, 0.0]).unwrap().value, 12.0);
        assert_eq!(hypervolume(&[vec![1.0, 3.0], vec![3.0, 1.0]], &[0.0, 0.0]).unwrap().value, 5.0);
        assert!(matches!(hypervolume(&[vec![-1.0, 3.0]], &[0.0, 0.0]), Err(MetricsError::RefNotDominated(_))));
    }

    #[test]
    fn crf1_half() {
        let t = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!((crf1(&t[..1], &t, 1e-6) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(crf1(&t, &t, 1e-6), 1.0);
    }
}
