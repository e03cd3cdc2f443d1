//! Preference simplex: projection, Dirichlet draws and lattice strata.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SUM_TOL: f64 = 1e-9;
pub const FACET_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SimplexError {
    #[error("dirichlet concentration must be positive and finite, got {0:?}")]
    BadAlpha(Vec<f64>),
    #[error("not a simplex point: {0:?}")]
    NotOnSimplex(Vec<f64>),
    #[error("empty dimension")]
    Empty,
}

/// A point of the probability simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Preference(Vec<f64>);

impl Preference {
    pub fn new(w: Vec<f64>) -> Result<Self, SimplexError> {
        if w.is_empty() {
            return Err(SimplexError::Empty);
        }
        let s: f64 = w.iter().sum();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || (s - 1.0).abs() > SUM_TOL {
            return Err(SimplexError::NotOnSimplex(w));
        }
        Ok(Preference(w))
    }

    /// Two-objective preference `[w1, 1 - w1]`.
    pub fn pair(w1: f64) -> Self {
        let w1 = w1.clamp(0.0, 1.0);
        Preference(vec![w1, 1.0 - w1])
    }

    pub fn uniform(m: usize) -> Self {
        Preference(vec![1.0 / m as f64; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.0.iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

impl std::ops::Index<usize> for Preference {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Clamp tiny negatives and renormalize so the sum is exactly representable as 1.
fn renormalize(mut w: Vec<f64>) -> Vec<f64> {
    for x in w.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        for x in w.iter_mut() {
            *x /= s;
        }
    } else {
        let m = w.len() as f64;
        w.iter_mut().for_each(|x| *x = 1.0 / m);
    }
    w
}

/// Euclidean projection onto the simplex by sort-and-threshold.
pub fn project_to_simplex(u: &[f64]) -> Preference {
    assert!(!u.is_empty(), "projection of an empty vector");
    let mut s: Vec<f64> = u.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).expect("NaN in projection input"));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &sj) in s.iter().enumerate() {
        cum += sj;
        let t = (cum - 1.0) / (j as f64 + 1.0);
        if sj - t > 0.0 {
            theta = t;
        }
    }
    let w: Vec<f64> = u.iter().map(|x| (x - theta).max(0.0)).collect();
    Preference(renormalize(w))
}

pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<Preference, SimplexError> {
    if alpha.is_empty() {
        return Err(SimplexError::Empty);
    }
    if alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(SimplexError::BadAlpha(alpha.to_vec()));
    }
    let mut g = Vec::with_capacity(alpha.len());
    for &a in alpha {
        let d = Gamma::new(a, 1.0).map_err(|_| SimplexError::BadAlpha(alpha.to_vec()))?;
        g.push(d.sample(rng));
    }
    Ok(Preference(renormalize(g)))
}

/// Uniform draw from the simplex, `Dir(1_m)`.
pub fn sample_uniform<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Preference {
    sample_dirichlet(&vec![1.0; m], rng).expect("unit concentration is valid")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stratum {
    pub index: usize,
    pub vertices: Vec<Vec<f64>>,
}

impl Stratum {
    pub fn dim(&self) -> usize {
        self.vertices.len()
    }

    /// Barycentric coordinates of `p` with respect to the vertices.
    pub fn barycentric(&self, p: &[f64]) -> Vec<f64> {
        let m = self.dim();
        // Solve sum_r z_r v_r = p on the first m-1 coordinates plus sum z = 1.
        let mut a = vec![vec![0.0; m + 1]; m];
        for i in 0..m - 1 {
            for r in 0..m {
                a[i][r] = self.vertices[r][i];
            }
            a[i][m] = p[i];
        }
        for r in 0..m {
            a[m - 1][r] = 1.0;
        }
        a[m - 1][m] = 1.0;
        solve_augmented(a)
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        self.barycentric(p).iter().all(|z| *z >= -tol)
    }

    pub fn centroid(&self) -> Vec<f64> {
        let m = self.dim() as f64;
        (0..self.dim())
            .map(|i| self.vertices.iter().map(|v| v[i]).sum::<f64>() / m)
            .collect()
    }
}

fn solve_augmented(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap())
            .unwrap();
        a.swap(c, piv);
        let d = a[c][c];
        for k in c..=n {
            a[c][k] /= d;
        }
        for i in 0..n {
            if i != c {
                let f = a[i][c];
                if f != 0.0 {
                    for k in c..=n {
                        a[i][k] -= f * a[c][k];
                    }
                }
            }
        }
    }
    a.into_iter().map(|row| row[n]).collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// Equal-volume strata of the simplex at lattice resolution `l`.
///
/// Cells are the Kuhn simplices of the cumulative-sum coordinates
/// `y_j = l * (w_1 + ... + w_j)` that fit inside `0 <= y_1 <= ... <= y_{m-1} <= l`,
/// which gives exactly `l^(m-1)` cells. For `m = 2` these are the intervals
/// `[k/l, (k+1)/l]` of the first coordinate in increasing order. `perm`
/// relabels simplex coordinates; the identity is the default.
pub fn build_strata(m: usize, l: usize, perm: &[usize]) -> Vec<Stratum> {
    assert!(m >= 1 && l >= 1, "need m >= 1 and l >= 1");
    assert_eq!(perm.len(), m, "permutation length");
    if m == 1 {
        return vec![Stratum { index: 0, vertices: vec![vec![1.0]] }];
    }
    let d = m - 1;
    let perms = permutations(d);
    let mut out = Vec::new();
    let mut corner = vec![0usize; d];
    loop {
        if corner.windows(2).all(|w| w[0] <= w[1]) {
            for sigma in &perms {
                // Coordinate sigma[0] gets the largest fractional part.
                let rank: Vec<usize> = {
                    let mut r = vec![0; d];
                    for (pos, &c) in sigma.iter().enumerate() {
                        r[c] = pos;
                    }
                    r
                };
                let ok = (0..d.saturating_sub(1))
                    .all(|j| corner[j] < corner[j + 1] || rank[j + 1] < rank[j]);
                if !ok {
                    continue;
                }
                let mut y: Vec<f64> = corner.iter().map(|&c| c as f64).collect();
                let mut verts = vec![cum_to_simplex(&y, l, perm)];
                for &c in sigma {
                    y[c] += 1.0;
                    verts.push(cum_to_simplex(&y, l, perm));
                }
                out.push(Stratum { index: out.len(), vertices: verts });
            }
        }
        // Next corner in lexicographic order over [0, l-1]^d.
        let mut i = d;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            corner[i] += 1;
            if corner[i] < l {
                break;
            }
            corner[i] = 0;
        }
    }
}

fn cum_to_simplex(y: &[f64], l: usize, perm: &[usize]) -> Vec<f64> {
    let lf = l as f64;
    let m = y.len() + 1;
    let mut x = vec![0.0; m];
    let mut prev = 0.0;
    for j in 0..m - 1 {
        x[j] = (y[j] - prev) / lf;
        prev = y[j];
    }
    x[m - 1] = (lf - prev) / lf;
    let mut out = vec![0.0; m];
    for (j, &p) in perm.iter().enumerate() {
        out[p] = x[j];
    }
    out
}

pub fn identity_perm(m: usize) -> Vec<usize> {
    (0..m).collect()
}

/// Uniform draw inside a stratum via Dirichlet barycentric weights.
pub fn sample_stratum<R: Rng + ?Sized>(stratum: &Stratum, rng: &mut R) -> Preference {
    let z = sample_uniform(stratum.dim(), rng);
    map_barycentric(stratum, z.as_slice())
}

pub fn map_barycentric(stratum: &Stratum, z: &[f64]) -> Preference {
    let m = stratum.dim();
    let mut w = vec![0.0; m];
    for (zr, v) in z.iter().zip(&stratum.vertices) {
        for i in 0..m {
            w[i] += zr * v[i];
        }
    }
    Preference(renormalize(w))
}

/// Strata owned by `actor` out of `n_actors`.
///
/// Fewer actors than strata: contiguous blocks whose sizes differ by at most one.
/// More actors than strata: actor `u` shares stratum `u mod |strata|`.
pub fn assign_strata(actor: usize, n_actors: usize, n_strata: usize) -> Vec<usize> {
    assert!(n_strata > 0 && n_actors > 0 && actor < n_actors);
    if n_actors >= n_strata {
        return vec![actor % n_strata];
    }
    let base = n_strata / n_actors;
    let extra = n_strata % n_actors;
    let start = actor * base + actor.min(extra);
    let len = base + usize::from(actor < extra);
    (start..start + len).collect()
}

/// Sampler for one actor: cycles over its strata episode by episode.
#[derive(Clone, Debug)]
pub struct StratumSampler {
    strata: Vec<Stratum>,
    next: usize,
}

impl StratumSampler {
    pub fn new(all: &[Stratum], owned: &[usize]) -> Self {
        let strata = owned.iter().map(|&i| all[i].clone()).collect();
        StratumSampler { strata, next: 0 }
    }

    pub fn whole(m: usize) -> Self {
        StratumSampler { strata: build_strata(m, 1, &identity_perm(m)), next: 0 }
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Preference {
        let s = &self.strata[self.next % self.strata.len()];
        self.next = self.next.wrapping_add(1);
        sample_stratum(s, rng)
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }
}
