//! Multi-objective episodic environments: Deep Sea Treasure (convex map),
//! Fruit Tree Navigation and a toy HARQ link-adaptation task.

use crate::pareto_metrics::pareto_filter;
use crate::replay::Transition;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("action {action} out of range 0..{n}")]
    InvalidAction { action: usize, n: usize },
    #[error("episode already finished; call reset")]
    Finished,
    #[error("environment cannot be enumerated")]
    NotEnumerable,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomdpSpec {
    pub state_dim: usize,
    pub n_actions: usize,
    pub reward_dim: usize,
    pub gamma: f64,
    pub horizon: usize,
}

pub trait Env: Send {
    fn spec(&self) -> MomdpSpec;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<Transition, EnvError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "env", rename_all = "snake_case")]
pub enum EnvConfig {
    Dst {
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_dst_horizon")]
        horizon: usize,
    },
    Ftn {
        depth: usize,
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    La(LaConfig),
}

fn default_gamma() -> f64 {
    0.99
}

fn default_dst_horizon() -> usize {
    100
}

impl EnvConfig {
    pub fn dst() -> Self {
        EnvConfig::Dst { gamma: default_gamma(), horizon: default_dst_horizon() }
    }

    pub fn ftn(depth: usize) -> Self {
        EnvConfig::Ftn { depth, gamma: default_gamma() }
    }

    pub fn build(&self) -> Box<dyn Env> {
        match self {
            EnvConfig::Dst { gamma, horizon } => Box::new(Dst::new(*gamma, *horizon)),
            EnvConfig::Ftn { depth, gamma } => Box::new(Ftn::new(*depth, *gamma)),
            EnvConfig::La(c) => Box::new(LinkAdaptation::new(c.clone())),
        }
    }

    pub fn name(&self) -> String {
        match self {
            EnvConfig::Dst { .. } => "dst".into(),
            EnvConfig::Ftn { depth, .. } => format!("ftn{depth}"),
            EnvConfig::La(_) => "la".into(),
        }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            EnvConfig::Dst { gamma, .. } | EnvConfig::Ftn { gamma, .. } => *gamma,
            EnvConfig::La(c) => c.gamma,
        }
    }
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Discounted sum of a reward sequence.
pub fn discounted_return(rewards: &[Vec<f64>], gamma: f64) -> Vec<f64> {
    let m = rewards.first().map_or(0, |r| r.len());
    let mut g = vec![0.0; m];
    let mut d = 1.0;
    for r in rewards {
        for j in 0..m {
            g[j] += d * r[j];
        }
        d *= gamma;
    }
    g
}

/// CSV with columns t, s, a, r1..rm, done; state components joined by `;`.
pub fn trace_csv(trace: &[Transition]) -> String {
    let m = trace.first().map_or(0, |t| t.reward.len());
    let mut out = String::from("t,s,a");
    for j in 1..=m {
        let _ = write!(out, ",r{j}");
    }
    out.push_str(",done\n");
    for (t, tr) in trace.iter().enumerate() {
        let s: Vec<String> = tr.state.iter().map(|x| format!("{x}")).collect();
        let _ = write!(out, "{t},{},{}", s.join(";"), tr.action);
        for r in &tr.reward {
            let _ = write!(out, ",{r}");
        }
        let _ = writeln!(out, ",{}", tr.done as u8);
    }
    out
}

// ---------------------------------------------------------------------------
// Deep Sea Treasure

pub const DST_ROWS: usize = 11;
pub const DST_COLS: usize = 11;

/// Convex-front treasure layout, (row, col, value).
pub const DST_TREASURES: [(usize, usize, f64); 10] = [
    (1, 0, 0.7),
    (2, 1, 8.2),
    (3, 2, 11.5),
    (4, 3, 14.0),
    (4, 4, 15.1),
    (4, 5, 16.1),
    (7, 6, 19.6),
    (7, 7, 20.3),
    (9, 8, 22.4),
    (10, 9, 23.7),
];

/// Cells below the treasure staircase are rock.
pub fn dst_is_rock(row: usize, col: usize) -> bool {
    DST_TREASURES.iter().any(|&(r, c, _)| c == col && row > r)
}

pub fn dst_treasure(row: usize, col: usize) -> Option<f64> {
    DST_TREASURES.iter().find(|&&(r, c, _)| r == row && c == col).map(|t| t.2)
}

/// Actions: 0 up, 1 down, 2 left, 3 right. Moves into rock or off-grid stay put.
#[derive(Clone, Debug)]
pub struct Dst {
    gamma: f64,
    horizon: usize,
    pos: (usize, usize),
    t: usize,
    done: bool,
}

impl Dst {
    pub fn new(gamma: f64, horizon: usize) -> Self {
        Dst { gamma, horizon, pos: (0, 0), t: 0, done: false }
    }

    pub fn position(&self) -> (usize, usize) {
        self.pos
    }

    fn encode(&self) -> Vec<f64> {
        one_hot(DST_ROWS * DST_COLS, self.pos.0 * DST_COLS + self.pos.1)
    }

    fn moved(pos: (usize, usize), a: usize) -> (usize, usize) {
        let (r, c) = pos;
        let next = match a {
            0 if r > 0 => (r - 1, c),
            1 if r + 1 < DST_ROWS => (r + 1, c),
            2 if c > 0 => (r, c - 1),
            3 if c + 1 < DST_COLS => (r, c + 1),
            _ => pos,
        };
        if dst_is_rock(next.0, next.1) {
            pos
        } else {
            next
        }
    }
}

impl Env for Dst {
    fn spec(&self) -> MomdpSpec {
        MomdpSpec { state_dim: DST_ROWS * DST_COLS, n_actions: 4, reward_dim: 2, gamma: self.gamma, horizon: self.horizon }
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Vec<f64> {
        self.pos = (0, 0);
        self.t = 0;
        self.done = false;
        self.encode()
    }

    fn step(&mut self, action: usize, _rng: &mut dyn RngCore) -> Result<Transition, EnvError> {
        if action >= 4 {
            return Err(EnvError::InvalidAction { action, n: 4 });
        }
        if self.done {
            return Err(EnvError::Finished);
        }
        let state = self.encode();
        self.pos = Self::moved(self.pos, action);
        self.t += 1;
        let treasure = dst_treasure(self.pos.0, self.pos.1);
        self.done = treasure.is_some() || self.t >= self.horizon;
        Ok(Transition {
            state,
            action,
            reward: vec![treasure.unwrap_or(0.0), -1.0],
            next_state: self.encode(),
            done: self.done,
        })
    }
}

/// Shortest step count from the start to every treasure (BFS; treasures are terminal).
pub fn dst_shortest_paths() -> Vec<(f64, usize)> {
    let mut dist = vec![[usize::MAX; DST_COLS]; DST_ROWS];
    let mut q = VecDeque::from([(0usize, 0usize)]);
    dist[0][0] = 0;
    while let Some(p) = q.pop_front() {
        if dst_treasure(p.0, p.1).is_some() {
            continue;
        }
        for a in 0..4 {
            let n = Dst::moved(p, a);
            if dist[n.0][n.1] == usize::MAX {
                dist[n.0][n.1] = dist[p.0][p.1] + 1;
                q.push_back(n);
            }
        }
    }
    DST_TREASURES.iter().map(|&(r, c, v)| (v, dist[r][c])).collect()
}

/// Discounted return of reaching a treasure of value `v` in `k` steps.
pub fn dst_return(v: f64, k: usize, gamma: f64) -> Vec<f64> {
    let mut rewards = vec![vec![0.0, -1.0]; k];
    rewards[k - 1][0] = v;
    discounted_return(&rewards, gamma)
}

// ---------------------------------------------------------------------------
// Fruit Tree Navigation

pub const FTN_DIM: usize = 6;

/// Leaf fruits for a tree of the given depth: `10·u` with `u` uniform on the
/// positive orthant of the unit sphere, from a fixed per-depth seed.
pub fn ftn_fruits(depth: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4654_4e00 + depth as u64);
    (0..1usize << depth)
        .map(|_| {
            let v: Vec<f64> = (0..FTN_DIM).map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z.abs()
            }).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| 10.0 * x / n).collect()
        })
        .collect()
}

/// Binary tree of the given depth; actions 0 left, 1 right; reward only at leaves.
#[derive(Clone, Debug)]
pub struct Ftn {
    depth: usize,
    gamma: f64,
    fruits: Vec<Vec<f64>>,
    level: usize,
    index: usize,
    done: bool,
}

impl Ftn {
    pub fn new(depth: usize, gamma: f64) -> Self {
        Ftn { depth, gamma, fruits: ftn_fruits(depth), level: 0, index: 0, done: false }
    }

    pub fn fruits(&self) -> &[Vec<f64>] {
        &self.fruits
    }

    fn encode(&self) -> Vec<f64> {
        let nodes = (1usize << (self.depth + 1)) - 1;
        one_hot(nodes, (1usize << self.level) - 1 + self.index)
    }
}

impl Env for Ftn {
    fn spec(&self) -> MomdpSpec {
        MomdpSpec {
            state_dim: (1usize << (self.depth + 1)) - 1,
            n_actions: 2,
            reward_dim: FTN_DIM,
            gamma: self.gamma,
            horizon: self.depth.max(1),
        }
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Vec<f64> {
        self.level = 0;
        self.index = 0;
        self.done = false;
        self.encode()
    }

    /// At depth 0 the root is the leaf; one step collects it.
    fn step(&mut self, action: usize, _rng: &mut dyn RngCore) -> Result<Transition, EnvError> {
        if action >= 2 {
            return Err(EnvError::InvalidAction { action, n: 2 });
        }
        if self.done {
            return Err(EnvError::Finished);
        }
        let state = self.encode();
        if self.depth > 0 {
            self.level += 1;
            self.index = 2 * self.index + action;
        }
        self.done = self.level == self.depth;
        let reward = if self.done { self.fruits[self.index].clone() } else { vec![0.0; FTN_DIM] };
        Ok(Transition { state, action, reward, next_state: self.encode(), done: self.done })
    }
}

// ---------------------------------------------------------------------------
// Toy link adaptation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaConfig {
    /// Spectral efficiency (bits/RE) of each MCS level.
    pub se_levels: Vec<f64>,
    pub max_attempts: usize,
    pub n_re_max: f64,
    /// Logistic slope of the success curve.
    pub k: f64,
    pub channel_mean: f64,
    pub channel_phi: f64,
    pub channel_sigma: f64,
    pub channel_min: f64,
    pub channel_max: f64,
    pub gamma: f64,
}

impl Default for LaConfig {
    fn default() -> Self {
        let (lo, hi, n) = (0.2f64, 5.5f64, 8);
        LaConfig {
            se_levels: (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect(),
            max_attempts: 5,
            n_re_max: 100.0,
            k: 4.0,
            channel_mean: 2.5,
            channel_phi: 0.9,
            channel_sigma: 0.6,
            channel_min: 0.1,
            channel_max: 6.0,
            gamma: 1.0,
        }
    }
}

impl LaConfig {
    pub fn step_channel<R: Rng + ?Sized>(&self, c: f64, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        (self.channel_mean + self.channel_phi * (c - self.channel_mean) + self.channel_sigma * z)
            .clamp(self.channel_min, self.channel_max)
    }

    pub fn draw_channel<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        let sd = self.channel_sigma / (1.0 - self.channel_phi * self.channel_phi).sqrt();
        (self.channel_mean + sd * z).clamp(self.channel_min, self.channel_max)
    }
}

/// Logistic decoding probability for an effective rate `se` on a channel of
/// capacity `capacity` (both bits/RE): `1/(1+exp(k(se-capacity)))`.
pub fn la_success_prob(capacity: f64, se: f64, k: f64) -> f64 {
    1.0 / (1.0 + (k * (se - capacity)).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaEpisodeState {
    /// Capacity the transmitter last observed (one step stale).
    pub observed: f64,
    pub capacity: f64,
    /// 1-based attempt index.
    pub attempt: usize,
    pub tbs: f64,
    pub re_used: Vec<f64>,
    /// Σ capacity·N_RE over past attempts (incremental redundancy).
    pub info: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LaOutcome {
    pub attempts: usize,
    pub failures: usize,
    pub delivered_bits: f64,
    pub re_used: f64,
    pub success: bool,
}

#[derive(Clone, Debug)]
pub struct LinkAdaptation {
    pub cfg: LaConfig,
    st: LaEpisodeState,
    outcome: LaOutcome,
    done: bool,
}

impl LinkAdaptation {
    pub fn new(cfg: LaConfig) -> Self {
        LinkAdaptation {
            st: LaEpisodeState { observed: cfg.channel_mean, capacity: cfg.channel_mean, attempt: 1, tbs: 0.0, re_used: Vec::new(), info: 0.0 },
            cfg,
            outcome: LaOutcome::default(),
            done: false,
        }
    }

    pub fn state(&self) -> &LaEpisodeState {
        &self.st
    }

    pub fn outcome(&self) -> LaOutcome {
        self.outcome
    }

    /// Start a packet on a given channel (used by the workflow to share a channel process).
    pub fn reset_with_channel(&mut self, observed: f64, capacity: f64) -> Vec<f64> {
        self.st = LaEpisodeState { observed, capacity, attempt: 1, tbs: 0.0, re_used: Vec::new(), info: 0.0 };
        self.outcome = LaOutcome::default();
        self.done = false;
        self.encode()
    }

    fn encode(&self) -> Vec<f64> {
        let c = &self.cfg;
        let se_max = c.se_levels.iter().cloned().fold(0.0, f64::max);
        let used: f64 = self.st.re_used.iter().sum();
        vec![
            self.st.observed / c.channel_max,
            (self.st.attempt - 1) as f64 / (c.max_attempts - 1).max(1) as f64,
            self.st.tbs / (se_max * c.n_re_max),
            used / (c.max_attempts as f64 * c.n_re_max),
            self.st.info / (c.channel_max * c.max_attempts as f64 * c.n_re_max),
        ]
    }
}

impl Env for LinkAdaptation {
    fn spec(&self) -> MomdpSpec {
        MomdpSpec {
            state_dim: 5,
            n_actions: self.cfg.se_levels.len(),
            reward_dim: 2,
            gamma: self.cfg.gamma,
            horizon: self.cfg.max_attempts,
        }
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        let observed = self.cfg.draw_channel(rng);
        let capacity = self.cfg.step_channel(observed, rng);
        self.reset_with_channel(observed, capacity)
    }

    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<Transition, EnvError> {
        let n = self.cfg.se_levels.len();
        if action >= n {
            return Err(EnvError::InvalidAction { action, n });
        }
        if self.done {
            return Err(EnvError::Finished);
        }
        let state = self.encode();
        let se = self.cfg.se_levels[action];
        let n_re = if self.st.attempt == 1 {
            self.st.tbs = se * self.cfg.n_re_max;
            self.cfg.n_re_max
        } else {
            (self.st.tbs / se).min(self.cfg.n_re_max)
        };
        self.st.re_used.push(n_re);
        self.st.info += self.st.capacity * n_re;
        let total_re: f64 = self.st.re_used.iter().sum();
        let se_eff = self.st.tbs / total_re;
        let c_eff = self.st.info / total_re;
        let ok = rng.random::<f64>() < la_success_prob(c_eff, se_eff, self.cfg.k);
        self.outcome.attempts += 1;
        self.outcome.re_used += n_re;
        let cost = -n_re / self.cfg.n_re_max;
        let reward = if ok {
            self.outcome.success = true;
            self.outcome.delivered_bits = self.st.tbs;
            vec![self.st.tbs / self.cfg.n_re_max, cost]
        } else {
            self.outcome.failures += 1;
            vec![0.0, cost]
        };
        self.done = ok || self.st.attempt >= self.cfg.max_attempts;
        self.st.attempt += 1;
        self.st.observed = self.st.capacity;
        self.st.capacity = self.cfg.step_channel(self.st.capacity, rng);
        Ok(Transition { state, action, reward, next_state: self.encode(), done: self.done })
    }
}

// ---------------------------------------------------------------------------
// Enumeration

/// Candidate returns of every deterministic policy outcome, before filtering.
pub fn enumerate_returns(cfg: &EnvConfig) -> Result<Vec<Vec<f64>>, EnvError> {
    match cfg {
        EnvConfig::Dst { gamma, .. } => Ok(dst_shortest_paths().into_iter().map(|(v, k)| dst_return(v, k, *gamma)).collect()),
        EnvConfig::Ftn { depth, gamma } => {
            let scale = gamma.powi(depth.saturating_sub(1) as i32);
            Ok(ftn_fruits(*depth).into_iter().map(|f| f.iter().map(|x| x * scale).collect()).collect())
        }
        EnvConfig::La(_) => Err(EnvError::NotEnumerable),
    }
}

/// Exact Pareto front of the discounted returns.
pub fn true_pareto_set(cfg: &EnvConfig) -> Result<Vec<Vec<f64>>, EnvError> {
    Ok(pareto_filter(&enumerate_returns(cfg)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dst_paths_are_manhattan() {
        let got: Vec<usize> = dst_shortest_paths().iter().map(|p| p.1).collect();
        assert_eq!(got, vec![1, 3, 5, 7, 8, 9, 13, 14, 17, 19]);
    }

    #[test]
    fn la_default_levels() {
        let c = LaConfig::default();
        assert_eq!(c.se_levels.len(), 8);
        assert!((c.se_levels[0] - 0.2).abs() < 1e-12 && (c.se_levels[7] - 5.5).abs() < 1e-12);
        assert_eq!(la_success_prob(2.0, 2.0, 4.0), 0.5);
        assert!(la_success_prob(5.0, 0.2, 4.0) > 0.999_999);
    }
}
