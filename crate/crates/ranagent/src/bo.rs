//! Gaussian-process surrogates, expected-improvement acquisitions and the
//! PAX-BO loop over products of probability simplices.
//!
//! Everything is oriented for maximization. Constraints are residuals that
//! are feasible when `<= 0`.

use crate::simplex::{project_to_simplex, sample_dirichlet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoError {
    #[error("kernel matrix not positive definite after jitter {0}")]
    SingularKernel(f64),
    #[error("no training data")]
    Empty,
    #[error("observation does not match the pending proposal")]
    StaleObservation,
    #[error("expected {want} constraint values, got {got}")]
    ConstraintCount { want: usize, got: usize },
    #[error("smart reset preconditions unmet (radius {radius}, stuck count {stuck})")]
    NotStuck { radius: f64, stuck: u32 },
}

// ---------------------------------------------------------------------------
// Normal helpers

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

pub fn norm_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

pub fn norm_pdf(x: f64) -> f64 {
    std_normal().pdf(x)
}

/// Mills ratio Φ(-x)/φ(x) for x >= 5 by backward continued fraction.
fn mills(x: f64) -> f64 {
    let mut t = x;
    for k in (1..=80).rev() {
        t = x + k as f64 / t;
    }
    1.0 / t
}

/// ln Φ(x), accurate in the far lower tail.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > -5.0 {
        norm_cdf(x).ln()
    } else {
        -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln() + mills(-x).ln()
    }
}

// ---------------------------------------------------------------------------
// Gaussian process

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    /// RBF lengthscale on normalized inputs.
    pub lengthscale: f64,
    pub signal_var: f64,
    /// Noise variance on the standardized target scale.
    pub noise_var: f64,
}

impl Default for GpHyper {
    fn default() -> Self {
        GpHyper { lengthscale: 0.2, signal_var: 1.0, noise_var: 1e-4 }
    }
}

const MAX_JITTER: f64 = 1e-2;

/// Exact GP posterior with fixed hyperparameters.
#[derive(Clone, Debug)]
pub struct GpModel {
    hyper: GpHyper,
    lo: Vec<f64>,
    scale: Vec<f64>,
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_std: f64,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    /// Diagonal jitter added beyond the noise variance.
    pub jitter: f64,
}

/// Lower Cholesky factor of an n×n row-major matrix, or None if not PD.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn solve_lower(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            x[i] -= l[i * n + k] * x[k];
        }
        x[i] /= l[i * n + i];
    }
    x
}

fn solve_upper_t(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        for k in i + 1..n {
            x[i] -= l[k * n + i] * x[k];
        }
        x[i] /= l[i * n + i];
    }
    x
}

impl GpModel {
    /// Fit with inputs normalized by `bounds` (or the data range) and targets standardized.
    pub fn fit(x: &[Vec<f64>], y: &[f64], hyper: GpHyper, bounds: Option<(&[f64], &[f64])>) -> Result<Self, BoError> {
        if x.is_empty() {
            return Err(BoError::Empty);
        }
        let d = x[0].len();
        let (lo, scale): (Vec<f64>, Vec<f64>) = match bounds {
            Some((lo, hi)) => (lo.to_vec(), lo.iter().zip(hi).map(|(a, b)| if b > a { b - a } else { 1.0 }).collect()),
            None => (0..d)
                .map(|j| {
                    let mn = x.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
                    let mx = x.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
                    (mn, if mx > mn { mx - mn } else { 1.0 })
                })
                .unzip(),
        };
        let n = y.len();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        let xn: Vec<Vec<f64>> = x.iter().map(|p| p.iter().enumerate().map(|(j, v)| (v - lo[j]) / scale[j]).collect()).collect();
        let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = kernel(&hyper, &xn[i], &xn[j]);
            }
            k[i * n + i] += hyper.noise_var;
        }
        let mut jitter = 0.0;
        let chol = loop {
            let mut kj = k.clone();
            for i in 0..n {
                kj[i * n + i] += jitter;
            }
            if let Some(l) = cholesky(&kj, n) {
                break l;
            }
            jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
            if jitter > MAX_JITTER {
                return Err(BoError::SingularKernel(jitter));
            }
        };
        let alpha = solve_upper_t(&chol, n, &solve_lower(&chol, n, &ys));
        Ok(GpModel { hyper, lo, scale, x: xn, y_mean, y_std, chol, alpha, jitter })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Posterior mean and standard deviation in the original target units.
    pub fn predict(&self, q: &[f64]) -> (f64, f64) {
        let qn: Vec<f64> = q.iter().enumerate().map(|(j, v)| (v - self.lo[j]) / self.scale[j]).collect();
        let ks: Vec<f64> = self.x.iter().map(|p| kernel(&self.hyper, p, &qn)).collect();
        let mu: f64 = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = solve_lower(&self.chol, self.x.len(), &ks);
        let var = (self.hyper.signal_var - v.iter().map(|x| x * x).sum::<f64>()).max(0.0);
        (self.y_mean + self.y_std * mu, self.y_std * var.sqrt())
    }

    pub fn y_std(&self) -> f64 {
        self.y_std
    }
}

fn kernel(h: &GpHyper, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    h.signal_var * (-0.5 * d2 / (h.lengthscale * h.lengthscale)).exp()
}

// ---------------------------------------------------------------------------
// Acquisitions

/// Expected improvement of a maximization objective over `f_best`.
pub fn ei(mu: f64, sigma: f64, f_best: f64) -> f64 {
    if sigma <= 0.0 {
        return (mu - f_best).max(0.0);
    }
    let z = (mu - f_best) / sigma;
    sigma * (z * norm_cdf(z) + norm_pdf(z))
}

/// ln EI, finite for any σ > 0 however small the improvement.
pub fn log_ei(mu: f64, sigma: f64, f_best: f64) -> f64 {
    if sigma <= 0.0 {
        let d = mu - f_best;
        return if d > 0.0 { d.ln() } else { f64::NEG_INFINITY };
    }
    let z = (mu - f_best) / sigma;
    let log_h = if z > -5.0 {
        (z * norm_cdf(z) + norm_pdf(z)).ln()
    } else {
        // h(z) = φ(z)(1 + z·R(-z)) with R the Mills ratio.
        let r = mills(-z);
        -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() + (1.0 + z * r).ln()
    };
    sigma.ln() + log_h
}

pub fn probability_of_improvement(mu: f64, sigma: f64, f_best: f64) -> f64 {
    if sigma <= 0.0 {
        return if mu > f_best { 1.0 } else { 0.0 };
    }
    norm_cdf((mu - f_best) / sigma)
}

pub fn ucb(mu: f64, sigma: f64, beta: f64) -> f64 {
    mu + beta.sqrt() * sigma
}

/// Π_i Φ(-μ_i/σ_i) from (μ_i, σ_i) pairs; σ_i = 0 is a hard indicator of μ_i <= 0.
pub fn feasibility_prob(preds: &[(f64, f64)]) -> f64 {
    log_feasibility(preds).exp()
}

pub fn log_feasibility(preds: &[(f64, f64)]) -> f64 {
    preds
        .iter()
        .map(|&(mu, s)| {
            if s <= 0.0 {
                if mu <= 0.0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            } else {
                log_norm_cdf(-mu / s)
            }
        })
        .sum()
}

/// Lower clamp for log-space acquisition values.
pub const LOG_FLOOR: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AcqKind {
    LogEi,
    Pi,
    Ucb { beta: f64 },
}

/// Constraint-aware acquisition. Without a feasible incumbent only the log
/// feasibility probability is used.
pub fn acquisition(x: &[f64], objective: &GpModel, constraints: &[GpModel], f_best: Option<f64>, kind: AcqKind) -> f64 {
    let preds: Vec<(f64, f64)> = constraints.iter().map(|g| g.predict(x)).collect();
    let lf = log_feasibility(&preds);
    let (mu, s) = objective.predict(x);
    let base = match (kind, f_best) {
        (_, None) => 0.0,
        (AcqKind::LogEi, Some(f)) => log_ei(mu, s, f),
        (AcqKind::Pi, Some(f)) => probability_of_improvement(mu, s, f).ln(),
        (AcqKind::Ucb { beta }, Some(_)) => {
            // UCB is not a log quantity; combine multiplicatively with feasibility.
            return (ucb(mu, s, beta) * lf.exp()).max(LOG_FLOOR);
        }
    };
    (base + lf).max(LOG_FLOOR)
}

// ---------------------------------------------------------------------------
// Box-constrained acquisition maximization

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub raw_samples: usize,
    pub restarts: usize,
    /// Pattern-search stopping step relative to the box half-width.
    pub tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { raw_samples: 512, restarts: 10, tol: 1e-5 }
    }
}

/// Maximize `f` over the box `[lo, hi]`: best raw uniform samples seed a
/// coordinate pattern search. The result lies in the box exactly.
pub fn maximize_in_box<F, R>(f: &F, lo: &[f64], hi: &[f64], cfg: &OptimizerConfig, rng: &mut R) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
    R: Rng + ?Sized,
{
    let d = lo.len();
    let mut raw: Vec<(f64, Vec<f64>)> = (0..cfg.raw_samples.max(1))
        .map(|_| {
            let x: Vec<f64> = (0..d).map(|j| if hi[j] > lo[j] { rng.random_range(lo[j]..=hi[j]) } else { lo[j] }).collect();
            (f(&x), x)
        })
        .collect();
    raw.sort_by(|a, b| b.0.total_cmp(&a.0));
    let width = (0..d).map(|j| hi[j] - lo[j]).fold(0.0, f64::max);
    let mut best = raw[0].clone();
    for (v0, x0) in raw.into_iter().take(cfg.restarts.max(1)) {
        let (mut x, mut v) = (x0, v0);
        let mut step = 0.25 * width;
        while step > cfg.tol * width.max(1e-12) {
            let mut improved = false;
            for j in 0..d {
                for dir in [1.0, -1.0] {
                    let mut y = x.clone();
                    y[j] = (y[j] + dir * step).clamp(lo[j], hi[j]);
                    let fy = f(&y);
                    if fy > v {
                        x = y;
                        v = fy;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        if v > best.0 {
            best = (v, x);
        }
    }
    best.1
}

/// Maximize within the ℓ∞ trust region around `center`, intersected with `domain`.
pub fn optimize_acq_in_tr<F, R>(
    center: &[f64],
    radius: f64,
    domain: (&[f64], &[f64]),
    acq: &F,
    cfg: &OptimizerConfig,
    rng: &mut R,
) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
    R: Rng + ?Sized,
{
    let lo: Vec<f64> = center.iter().zip(domain.0).map(|(c, d)| (c - radius).max(*d)).collect();
    let hi: Vec<f64> = center.iter().zip(domain.1).map(|(c, d)| (c + radius).min(*d)).collect();
    // A center outside the domain leaves an empty interval; pin that coordinate.
    let (lo, hi): (Vec<f64>, Vec<f64>) = lo
        .iter()
        .zip(&hi)
        .zip(center)
        .map(|((&l, &h), &c)| if l <= h { (l, h) } else { let p = c.clamp(c - radius, c + radius); (p, p) })
        .unzip();
    maximize_in_box(acq, &lo, &hi, cfg, rng)
}

// ---------------------------------------------------------------------------
// Low-discrepancy initial design

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Halton points 1..=n in `[0,1]^d`, shifted modulo 1 by a seeded rotation (none for seed 0).
pub fn halton(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(d <= PRIMES.len(), "dimension above {}", PRIMES.len());
    let shift: Vec<f64> = if seed == 0 {
        vec![0.0; d]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..d).map(|_| rng.random::<f64>()).collect()
    };
    (1..=n as u64)
        .map(|i| (0..d).map(|j| (radical_inverse(i, PRIMES[j] as u64) + shift[j]).fract()).collect())
        .collect()
}

// ---------------------------------------------------------------------------
// PAX-BO

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaxboConfig {
    pub l0: f64,
    pub l_min: f64,
    pub l_max: f64,
    /// Multiplicative shrink factor.
    pub shrink: f64,
    /// Consecutive successes before expanding.
    pub s_th: u32,
    /// Consecutive failures before shrinking.
    pub f_th: u32,
    /// Consecutive infeasible observations before shrinking.
    pub infeasible_patience: u32,
    /// Improvement tolerance on the standardized objective scale.
    pub eps: f64,
    /// Shrinks at the floor before a smart reset.
    pub reset_window: u32,
    pub reset_candidates: usize,
    pub novelty_beta: f64,
    /// Most recent observations kept for fitting.
    pub window: usize,
    pub n_init: usize,
    pub hyper: GpHyper,
    pub optimizer: OptimizerConfig,
    pub acq: AcqKind,
    /// Without a trust region the acquisition is maximized over the whole domain.
    pub trust_region: bool,
    pub domain_lo: f64,
    pub domain_hi: f64,
    /// Judge success, feasibility and the incumbent by posterior means at the
    /// observed points instead of the raw noisy observations.
    pub noise_aware: bool,
}

impl Default for PaxboConfig {
    fn default() -> Self {
        PaxboConfig {
            l0: 0.15,
            l_min: 0.05,
            l_max: 0.5,
            shrink: 0.7,
            s_th: 3,
            f_th: 5,
            infeasible_patience: 2,
            eps: 1e-3,
            reset_window: 2,
            reset_candidates: 512,
            novelty_beta: 1.0,
            window: 60,
            n_init: 20,
            hyper: GpHyper::default(),
            optimizer: OptimizerConfig::default(),
            acq: AcqKind::LogEi,
            trust_region: true,
            domain_lo: 0.0,
            domain_hi: 1.0,
            noise_aware: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Observation {
    pub u: Vec<f64>,
    pub objective: f64,
    pub constraints: Vec<f64>,
}

impl Observation {
    pub fn feasible(&self) -> bool {
        self.constraints.iter().all(|c| *c <= 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Init,
    Success,
    Fail,
    Expand,
    Shrink,
    Reset,
}

impl Event {
    pub fn as_str(self) -> &'static str {
        match self {
            Event::Init => "init",
            Event::Success => "success",
            Event::Fail => "fail",
            Event::Expand => "expand",
            Event::Shrink => "shrink",
            Event::Reset => "reset",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: usize,
    pub u: Vec<f64>,
    pub w: Vec<Vec<f64>>,
    pub objective: f64,
    pub constraints: Vec<f64>,
    pub f_best: Option<f64>,
    pub radius: f64,
    pub events: Vec<Event>,
}

/// Optimizer state: data window, trust region and counters.
#[derive(Clone, Debug)]
pub struct Paxbo {
    pub cfg: PaxboConfig,
    m: usize,
    services: usize,
    n_constraints: usize,
    data: Vec<Observation>,
    init: Vec<Vec<f64>>,
    pub center: Vec<f64>,
    pub radius: f64,
    pub kappa_s: u32,
    pub kappa_f: u32,
    pub kappa_l: u32,
    kappa_inf: u32,
    f_best: Option<f64>,
    best_u: Option<Vec<f64>>,
    pending: Vec<f64>,
    rng: ChaCha8Rng,
    trace: Vec<TraceRow>,
}

/// Columnwise simplex projection of a stacked `m·S` vector.
pub fn project_columns(u: &[f64], m: usize) -> Vec<Vec<f64>> {
    u.chunks(m).map(|c| project_to_simplex(c).into_vec()).collect()
}

fn frobenius(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn min_max_normalize(z: &[f64]) -> Vec<f64> {
    let lo = z.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    z.iter().map(|v| (v - lo) / (hi - lo + 1e-12)).collect()
}

impl Paxbo {
    pub fn new(cfg: PaxboConfig, m: usize, services: usize, n_constraints: usize, seed: u64) -> Self {
        let d = m * services;
        let init = halton(cfg.n_init.max(1), d, seed)
            .into_iter()
            .map(|p| p.iter().map(|v| cfg.domain_lo + v * (cfg.domain_hi - cfg.domain_lo)).collect())
            .collect::<Vec<Vec<f64>>>();
        let pending = init[0].clone();
        Paxbo {
            center: pending.clone(),
            radius: cfg.l0,
            cfg,
            m,
            services,
            n_constraints,
            data: Vec::new(),
            init,
            kappa_s: 0,
            kappa_f: 0,
            kappa_l: 0,
            kappa_inf: 0,
            f_best: None,
            best_u: None,
            pending,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xB0B0),
            trace: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.m * self.services
    }

    /// Point awaiting evaluation and its projected preferences.
    pub fn proposal(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        (self.pending.clone(), project_columns(&self.pending, self.m))
    }

    pub fn f_best(&self) -> Option<f64> {
        self.f_best
    }

    /// Best feasible point observed so far.
    pub fn incumbent(&self) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
        self.best_u.as_ref().map(|u| (u.clone(), project_columns(u, self.m)))
    }

    /// Observed point with the best posterior-mean objective among those whose
    /// posterior-mean residuals are all ≤ 0. Less sensitive to a lucky noisy
    /// sample than [`Paxbo::incumbent`].
    pub fn recommend(&self) -> Result<Option<(Vec<f64>, Vec<Vec<f64>>)>, BoError> {
        if self.data.is_empty() {
            return Ok(None);
        }
        let (f, g) = self.fit()?;
        let best = self
            .data
            .iter()
            .filter(|o| g.iter().all(|gi| gi.predict(&o.u).0 <= 0.0))
            .map(|o| (f.predict(&o.u).0, &o.u))
            .max_by(|a, b| a.0.total_cmp(&b.0));
        Ok(best.map(|(_, u)| (u.clone(), project_columns(u, self.m))))
    }

    /// Shift constraint `i` of every stored observation by `delta`, as when its
    /// threshold moves. The incumbent is re-derived from the window.
    pub fn shift_constraint(&mut self, i: usize, delta: f64) {
        for o in &mut self.data {
            o.constraints[i] += delta;
        }
        let best = self
            .data
            .iter()
            .filter(|o| o.feasible())
            .max_by(|a, b| a.objective.total_cmp(&b.objective))
            .map(|o| (o.objective, o.u.clone()));
        match best {
            Some((f, u)) => {
                self.f_best = Some(f);
                self.center = u.clone();
                self.best_u = Some(u);
            }
            None => {
                self.f_best = None;
                self.best_u = None;
            }
        }
    }

    pub fn data(&self) -> &[Observation] {
        &self.data
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    /// All observations so far count toward the violation tally.
    pub fn violations(&self) -> usize {
        self.trace.iter().filter(|r| r.constraints.iter().any(|c| *c > 0.0)).count()
    }

    fn domain(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![self.cfg.domain_lo; self.dim()], vec![self.cfg.domain_hi; self.dim()])
    }

    fn fit(&self) -> Result<(GpModel, Vec<GpModel>), BoError> {
        let xs: Vec<Vec<f64>> = self.data.iter().map(|o| o.u.clone()).collect();
        let (lo, hi) = self.domain();
        let b = Some((lo.as_slice(), hi.as_slice()));
        let ys: Vec<f64> = self.data.iter().map(|o| o.objective).collect();
        let f = GpModel::fit(&xs, &ys, self.cfg.hyper, b)?;
        let g = (0..self.n_constraints)
            .map(|i| {
                let c: Vec<f64> = self.data.iter().map(|o| o.constraints[i]).collect();
                GpModel::fit(&xs, &c, self.cfg.hyper, b)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((f, g))
    }

    /// Record the outcome at the pending point and return the next preferences.
    pub fn observe(&mut self, u: &[f64], objective: f64, constraints: &[f64]) -> Result<Vec<Vec<f64>>, BoError> {
        if u != self.pending.as_slice() {
            return Err(BoError::StaleObservation);
        }
        if constraints.len() != self.n_constraints {
            return Err(BoError::ConstraintCount { want: self.n_constraints, got: constraints.len() });
        }
        let obs = Observation { u: u.to_vec(), objective, constraints: constraints.to_vec() };
        let t = self.trace.len() + 1;
        let feasible = obs.feasible();
        self.data.push(obs);
        if self.data.len() > self.cfg.window {
            let extra = self.data.len() - self.cfg.window;
            self.data.drain(..extra);
        }
        let observed = objective;
        let fitted = if self.cfg.noise_aware { Some(self.fit()?) } else { None };
        let (objective, feasible) = match &fitted {
            Some((f, g)) => {
                let feasible_at = |x: &[f64]| g.iter().all(|gi| gi.predict(x).0 <= 0.0);
                let n = self.data.len();
                let prev = self.data[..n - 1]
                    .iter()
                    .filter(|o| feasible_at(&o.u))
                    .map(|o| (f.predict(&o.u).0, &o.u))
                    .max_by(|a, b| a.0.total_cmp(&b.0));
                self.f_best = prev.map(|p| p.0);
                self.best_u = prev.map(|p| p.1.clone());
                (f.predict(u).0, feasible_at(u))
            }
            None => (objective, feasible),
        };
        let mut events = Vec::new();
        let scale = {
            let ys: Vec<f64> = self.data.iter().map(|o| o.objective).collect();
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            let sd = (ys.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ys.len() as f64).sqrt();
            if sd > 1e-12 { sd } else { 1.0 }
        };
        if t <= self.init.len() {
            events.push(Event::Init);
            if feasible && self.f_best.is_none_or(|f| objective > f) {
                self.f_best = Some(objective);
                self.best_u = Some(u.to_vec());
                self.center = u.to_vec();
            }
            if t == self.init.len() && self.f_best.is_none() {
                // No feasible start: center on the least-violating point.
                let best = self
                    .data
                    .iter()
                    .min_by(|a, b| {
                        let va: f64 = a.constraints.iter().map(|c| c.max(0.0)).sum();
                        let vb: f64 = b.constraints.iter().map(|c| c.max(0.0)).sum();
                        va.total_cmp(&vb)
                    })
                    .expect("non-empty");
                self.center = best.u.clone();
            }
        } else {
            let success = feasible && self.f_best.is_none_or(|f| objective >= f + self.cfg.eps * scale);
            if success {
                events.push(Event::Success);
                self.f_best = Some(objective);
                self.best_u = Some(u.to_vec());
                self.center = u.to_vec();
                self.kappa_s += 1;
                self.kappa_f = 0;
                self.kappa_l = 0;
                self.kappa_inf = 0;
                if self.kappa_s >= self.cfg.s_th {
                    self.radius = (2.0 * self.radius).min(self.cfg.l_max);
                    self.kappa_s = 0;
                    self.kappa_f = 0;
                    events.push(Event::Expand);
                }
            } else {
                events.push(Event::Fail);
                self.kappa_f += 1;
                self.kappa_s = 0;
                self.kappa_inf = if feasible { 0 } else { self.kappa_inf + 1 };
                if self.kappa_f >= self.cfg.f_th || self.kappa_inf >= self.cfg.infeasible_patience {
                    self.radius = (self.radius * self.cfg.shrink).max(self.cfg.l_min);
                    self.kappa_s = 0;
                    self.kappa_f = 0;
                    self.kappa_inf = 0;
                    events.push(Event::Shrink);
                    if self.radius <= self.cfg.l_min {
                        self.kappa_l += 1;
                    }
                }
            }
        }
        let (f, g) = match fitted {
            Some(fg) => fg,
            None => self.fit()?,
        };
        if t > self.init.len() && self.radius <= self.cfg.l_min && self.kappa_l >= self.cfg.reset_window {
            self.smart_reset_with(&f, &g)?;
            events.push(Event::Reset);
        }
        self.trace.push(TraceRow {
            t,
            u: u.to_vec(),
            w: project_columns(u, self.m),
            objective: observed,
            constraints: constraints.to_vec(),
            f_best: self.f_best,
            radius: self.radius,
            events,
        });
        self.pending = if t < self.init.len() { self.init[t].clone() } else { self.propose(&f, &g) };
        Ok(project_columns(&self.pending, self.m))
    }

    fn propose(&mut self, f: &GpModel, g: &[GpModel]) -> Vec<f64> {
        let f_best = self.f_best;
        let kind = self.cfg.acq;
        let acq = |x: &[f64]| acquisition(x, f, g, f_best, kind);
        let (lo, hi) = self.domain();
        let opt = self.cfg.optimizer;
        if self.cfg.trust_region {
            let center = self.center.clone();
            optimize_acq_in_tr(&center, self.radius, (&lo, &hi), &acq, &opt, &mut self.rng)
        } else {
            maximize_in_box(&acq, &lo, &hi, &opt, &mut self.rng)
        }
    }

    /// Re-center on the best of `reset_candidates` simplex samples scored by
    /// acquisition × feasibility × novelty^β. Requires being stuck at the floor.
    pub fn smart_reset(&mut self) -> Result<usize, BoError> {
        let (f, g) = self.fit()?;
        self.smart_reset_with(&f, &g)
    }

    fn smart_reset_with(&mut self, f: &GpModel, g: &[GpModel]) -> Result<usize, BoError> {
        if self.radius > self.cfg.l_min || self.kappa_l < self.cfg.reset_window {
            return Err(BoError::NotStuck { radius: self.radius, stuck: self.kappa_l });
        }
        let ones = vec![1.0; self.m];
        let cands: Vec<Vec<f64>> = (0..self.cfg.reset_candidates.max(1))
            .map(|_| {
                (0..self.services)
                    .flat_map(|_| sample_dirichlet(&ones, &mut self.rng).expect("unit concentration").into_vec())
                    .collect()
            })
            .collect();
        let past: Vec<Vec<Vec<f64>>> = self.data.iter().map(|o| project_columns(&o.u, self.m)).collect();
        let j = select_reset(&cands, f, g, self.f_best, self.cfg.acq, &past, self.m, self.cfg.novelty_beta);
        self.center = cands[j].clone();
        self.radius = self.cfg.l0;
        self.kappa_s = 0;
        self.kappa_f = 0;
        self.kappa_l = 0;
        self.kappa_inf = 0;
        Ok(j)
    }

    /// Combined trace CSV: t, u, W, objective, constraints, f*, radius, events.
    pub fn trace_csv(&self, header_note: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(n) = header_note {
            let _ = writeln!(out, "# {n}");
        }
        out.push_str("t,u,w,objective");
        for i in 1..=self.n_constraints {
            let _ = write!(out, ",c{i}");
        }
        out.push_str(",f_best,radius,event\n");
        for r in &self.trace {
            let join = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(";");
            let w: Vec<String> = r.w.iter().map(|c| join(c)).collect();
            let _ = write!(out, "{},{},{},{}", r.t, join(&r.u), w.join("|"), r.objective);
            for c in &r.constraints {
                let _ = write!(out, ",{c}");
            }
            let fb = r.f_best.map_or(String::new(), |f| f.to_string());
            let ev: Vec<&str> = r.events.iter().map(|e| e.as_str()).collect();
            let _ = writeln!(out, ",{fb},{},{}", r.radius, ev.join("+"));
        }
        out
    }
}

/// Index of the best reset candidate; falls back to the highest raw acquisition
/// when every score is zero.
#[allow(clippy::too_many_arguments)]
pub fn select_reset(
    cands: &[Vec<f64>],
    f: &GpModel,
    g: &[GpModel],
    f_best: Option<f64>,
    kind: AcqKind,
    past: &[Vec<Vec<f64>>],
    m: usize,
    beta: f64,
) -> usize {
    let acq: Vec<f64> = cands.iter().map(|c| acquisition(c, f, g, f_best, kind)).collect();
    let feas: Vec<f64> = cands.iter().map(|c| feasibility_prob(&g.iter().map(|gi| gi.predict(c)).collect::<Vec<_>>())).collect();
    let nov: Vec<f64> = cands
        .iter()
        .map(|c| {
            let w = project_columns(c, m);
            past.iter().map(|p| frobenius(&w, p)).fold(f64::INFINITY, f64::min)
        })
        .map(|d| if d.is_finite() { d } else { 1.0 })
        .collect();
    let scores = reset_scores(&acq, &feas, &nov, beta);
    let best = scores.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0))).map(|x| x.0).unwrap_or(0);
    if scores[best] > 0.0 {
        best
    } else {
        acq.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0))).map(|x| x.0).unwrap_or(0)
    }
}

/// score_j = ã_j · p̃_j · d̃_j^β with each factor min-max normalized over the candidates.
pub fn reset_scores(acq: &[f64], feas: &[f64], novelty: &[f64], beta: f64) -> Vec<f64> {
    let a = min_max_normalize(acq);
    let p = min_max_normalize(feas);
    let d = min_max_normalize(novelty);
    (0..acq.len()).map(|j| a[j] * p[j] * d[j].powf(beta)).collect()
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

/// One service, two objectives: maximize `f(ω₁)` subject to `g(ω₁) <= 0`.
/// The unconstrained peak lies in the infeasible region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Synthetic1;

impl Synthetic1 {
    pub fn objective(&self, w1: f64) -> f64 {
        1.0 + w1 + 0.15 * (12.0 * w1).sin()
    }

    pub fn constraint(&self, w1: f64) -> f64 {
        w1 * w1 + 0.2 * w1 - 0.41
    }

    /// Brute-force constrained optimum on a grid of step 1e-3.
    pub fn grid_optimum(&self) -> (f64, f64) {
        (0..=1000)
            .map(|i| i as f64 / 1000.0)
            .filter(|&w| self.constraint(w) <= 0.0)
            .map(|w| (w, self.objective(w)))
            .fold((f64::NAN, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchResult {
    pub seed: u64,
    pub best_feasible: Option<f64>,
    pub evaluations: usize,
    pub violations: usize,
    pub trace_csv: String,
}

/// Run PAX-BO on the synthetic problem for `budget` evaluations.
pub fn run_synthetic(cfg: &PaxboConfig, budget: usize, seed: u64) -> Result<BenchResult, BoError> {
    let prob = Synthetic1;
    let mut bo = Paxbo::new(cfg.clone(), 2, 1, 1, seed);
    for _ in 0..budget {
        let (u, w) = bo.proposal();
        let w1 = w[0][0];
        bo.observe(&u, prob.objective(w1), &[prob.constraint(w1)])?;
    }
    Ok(BenchResult {
        seed,
        best_feasible: bo.f_best(),
        evaluations: budget,
        violations: bo.violations(),
        trace_csv: bo.trace_csv(Some(&format!("synthetic1 seed={seed} tr={}", cfg.trust_region))),
    })
}
