//! Actor and learner loops, configuration presets, snapshots, checkpoints and telemetry.

use super::{
    act, epsilon_at, initial_priority, learner_loss, net::clip_grad, refresh_priorities, target_update, Adam,
    DeqlError, EpsSchedule, LossKind, Mlp, PrefBatch, TargetMode,
};
use crate::exec::Exec;
use crate::morl_env::{Env, EnvConfig, MomdpSpec};
use crate::pareto_metrics::{
    ccs, crf1, default_reference, eval_preferences, hypervolume, recover_front, sparsity, MetricsReport, EPS_MATCH,
};
use crate::replay::{self, anneal_beta, BetaSchedule, ItemId, ReplayShard, SampledBatch, ShardServer, Transition};
use crate::simplex::{assign_strata, build_strata, identity_perm, sample_dirichlet, Preference, StratumSampler};
use parking_lot::RwLock;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

/// Settings used only by the single-actor baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EqlSettings {
    /// Preferences drawn per sampled transition.
    pub relabel: usize,
    /// Hard target copy period in gradient steps.
    pub target_period: u64,
    /// Gradient steps over which λ ramps from 0 to 1; `None` ramps over the whole run.
    pub homotopy_updates: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub seed: u64,
    pub hidden: usize,
    /// Number of hidden layers.
    pub layers: usize,
    pub eps: EpsSchedule,
    /// Symmetric Dirichlet concentration for learner preference batches.
    pub dirichlet_alpha: f64,
    /// Transitions per gradient step (B).
    pub batch: usize,
    /// Preferences per gradient step (P).
    pub prefs: usize,
    /// Cosine term weight.
    pub lambda: f64,
    pub target: TargetMode,
    /// Gradient steps between parameter broadcasts to actors.
    pub push_period: u64,
    pub lr: f64,
    pub grad_clip: Option<f64>,
    /// Stored transitions required before the first gradient step.
    pub warmup: usize,
    pub actors: usize,
    pub local_buffer: usize,
    pub shards: usize,
    /// Total replay capacity, split evenly across shards.
    pub capacity: usize,
    pub priority_alpha: f64,
    pub beta0: f64,
    pub beta_horizon: u64,
    pub env_steps: u64,
    /// Environment steps per gradient step.
    pub steps_per_update: u64,
    /// Subdivision level of the preference simplex for actor strata.
    pub strata_level: usize,
    pub eql: EqlSettings,
}

impl TrainConfig {
    /// Full-scale settings (10 actors, 256/512-unit networks, 10⁶ steps).
    pub fn paper(env: EnvConfig) -> Self {
        let hidden = if matches!(env, EnvConfig::Ftn { .. }) { 512 } else { 256 };
        TrainConfig {
            hidden,
            layers: 3,
            eps: EpsSchedule { eps_max: 0.8, eps_min: 0.1, decay_steps: 1_000_000 },
            dirichlet_alpha: 1.0,
            batch: 128,
            prefs: 128,
            lambda: 0.01,
            target: TargetMode::Soft { period: 1, tau: 0.005 },
            push_period: 250,
            lr: 3.5e-4,
            grad_clip: None,
            warmup: 50_000,
            actors: 10,
            local_buffer: 125,
            shards: 1,
            capacity: 500_000,
            priority_alpha: 0.7,
            beta0: 0.4,
            beta_horizon: 20_000,
            env_steps: 1_000_000,
            steps_per_update: 4,
            strata_level: 2,
            eql: EqlSettings { relabel: 128, target_period: 100, homotopy_updates: None },
            seed: 0,
            env,
        }
    }

    /// Reduced settings that run on one laptop core in minutes.
    pub fn desk(env: EnvConfig) -> Self {
        let m = env.build().spec().reward_dim;
        let env_steps = 60_000;
        TrainConfig {
            hidden: 64,
            layers: 3,
            eps: EpsSchedule { eps_max: 0.8, eps_min: 0.1, decay_steps: env_steps / 2 },
            batch: 32,
            prefs: 16,
            // The sparse DST front collapses under a soft target at this budget.
            target: match env {
                EnvConfig::Dst { .. } => TargetMode::Hard { period: 500 },
                _ => TargetMode::Soft { period: 1, tau: 0.005 },
            },
            push_period: 25,
            lr: 1e-3,
            grad_clip: Some(10.0),
            warmup: 1_000,
            actors: 4,
            capacity: 100_000,
            beta_horizon: env_steps / 4,
            env_steps,
            steps_per_update: 4,
            strata_level: if m == 2 { 4 } else { 1 },
            eql: EqlSettings { relabel: 16, target_period: 100, homotopy_updates: None },
            ..Self::paper(env)
        }
    }

    /// Overlay a (possibly partial) JSON object onto this configuration.
    pub fn with_overrides(&self, overrides: &serde_json::Value) -> Result<Self, serde_json::Error> {
        let mut base = serde_json::to_value(self)?;
        merge(&mut base, overrides);
        serde_json::from_value(base)
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }

    pub fn network_sizes(&self, spec: &MomdpSpec) -> Vec<usize> {
        let mut sizes = vec![spec.state_dim + spec.reward_dim];
        sizes.extend(std::iter::repeat_n(self.hidden, self.layers));
        sizes.push(spec.n_actions * spec.reward_dim);
        sizes
    }

    fn beta_schedule(&self) -> BetaSchedule {
        BetaSchedule { beta0: self.beta0, horizon: self.beta_horizon }
    }
}

fn merge(base: &mut serde_json::Value, over: &serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    // A different env variant replaces the whole object.
                    Some(slot) if k != "env" => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

// ---------------------------------------------------------------------------
// Parameter snapshots

/// Immutable parameter set published by the learner.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub version: u64,
    pub online: Mlp,
    pub target: Mlp,
    pub checksum: [u8; 32],
}

impl Snapshot {
    pub fn new(version: u64, online: Mlp, target: Mlp) -> Self {
        let checksum = Self::digest(version, &online, &target);
        Snapshot { version, online, target, checksum }
    }

    fn digest(version: u64, online: &Mlp, target: &Mlp) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(version.to_le_bytes());
        h.update(online.checksum());
        h.update(target.checksum());
        h.finalize().into()
    }

    pub fn verify(&self) -> bool {
        Self::digest(self.version, &self.online, &self.target) == self.checksum
    }
}

/// Latest snapshot; readers clone the `Arc` and never see a partial write.
pub struct ParamBoard {
    slot: RwLock<Arc<Snapshot>>,
}

impl ParamBoard {
    pub fn new(s: Snapshot) -> Self {
        ParamBoard { slot: RwLock::new(Arc::new(s)) }
    }

    pub fn publish(&self, s: Snapshot) {
        *self.slot.write() = Arc::new(s);
    }

    pub fn latest(&self) -> Arc<Snapshot> {
        self.slot.read().clone()
    }
}

// ---------------------------------------------------------------------------
// Actor

/// A batch of locally buffered transitions ready for its shard.
#[derive(Clone, Debug)]
pub struct Flush {
    pub shard: usize,
    pub items: Vec<Transition>,
    pub priorities: Vec<f64>,
}

pub struct Actor {
    pub id: usize,
    env: Box<dyn Env>,
    rng: ChaCha8Rng,
    sampler: StratumSampler,
    shard: usize,
    n_actors: u64,
    spec: MomdpSpec,
    eps: EpsSchedule,
    local_cap: usize,
    local: Vec<Transition>,
    local_p: Vec<f64>,
    state: Vec<f64>,
    pref: Preference,
    pub steps: u64,
    pub episodes: u64,
    snapshot: Arc<Snapshot>,
}

fn actor_seed(seed: u64, id: usize) -> u64 {
    seed ^ (id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl Actor {
    pub fn new(id: usize, cfg: &TrainConfig, snapshot: Arc<Snapshot>) -> Self {
        let env = cfg.env.build();
        let spec = env.spec();
        let m = spec.reward_dim;
        let strata = build_strata(m, cfg.strata_level.max(1), &identity_perm(m));
        let owned = assign_strata(id, cfg.actors, strata.len());
        let mut actor = Actor {
            id,
            env,
            rng: ChaCha8Rng::seed_from_u64(actor_seed(cfg.seed, id)),
            sampler: StratumSampler::new(&strata, &owned),
            shard: id % cfg.shards.max(1),
            n_actors: cfg.actors as u64,
            spec,
            eps: cfg.eps,
            local_cap: cfg.local_buffer.max(1),
            local: Vec::new(),
            local_p: Vec::new(),
            state: Vec::new(),
            pref: Preference::uniform(m),
            steps: 0,
            episodes: 0,
            snapshot,
        };
        actor.begin_episode();
        actor
    }

    pub fn shard(&self) -> usize {
        self.shard
    }

    pub fn snapshot_version(&self) -> u64 {
        self.snapshot.version
    }

    pub fn set_snapshot(&mut self, s: Arc<Snapshot>) {
        self.snapshot = s;
    }

    fn begin_episode(&mut self) {
        self.state = self.env.reset(&mut self.rng);
        self.pref = self.sampler.sample(&mut self.rng);
        self.episodes += 1;
    }

    /// One environment step. Returns a flush when the local buffer fills.
    pub fn step(&mut self) -> Option<Flush> {
        let eps = epsilon_at(&self.eps, self.steps * self.n_actors);
        let snap = self.snapshot.clone();
        let a = act(&snap.online, &self.state, &self.pref, eps, self.spec.n_actions, &mut self.rng);
        self.steps += 1;
        let tr = match self.env.step(a, &mut self.rng) {
            Ok(tr) => tr,
            Err(_) => {
                self.begin_episode();
                return None;
            }
        };
        let w_fresh = self.sampler.sample(&mut self.rng);
        let p = initial_priority(&tr, &w_fresh, &snap.online, &snap.target, self.spec.gamma);
        let done = tr.done;
        self.state = tr.next_state.clone();
        self.local.push(tr);
        self.local_p.push(p);
        if done {
            self.begin_episode();
        }
        if self.local.len() >= self.local_cap {
            return Some(Flush {
                shard: self.shard,
                items: std::mem::take(&mut self.local),
                priorities: std::mem::take(&mut self.local_p),
            });
        }
        None
    }
}

// ---------------------------------------------------------------------------
// Learner

#[derive(Clone, Debug)]
pub struct UpdateStats {
    pub loss: f64,
    pub beta: f64,
    pub ids: Vec<ItemId>,
    pub priorities: Vec<f64>,
    pub grad_norm: f64,
}

pub struct Learner {
    pub online: Mlp,
    pub target: Mlp,
    adam: Adam,
    pub rng: ChaCha8Rng,
    pub updates: u64,
    gamma: f64,
    m: usize,
    batch: usize,
    prefs: usize,
    alpha: f64,
    lambda: f64,
    target_mode: TargetMode,
    clip: Option<f64>,
    beta: BetaSchedule,
}

impl Learner {
    pub fn new(cfg: &TrainConfig, spec: &MomdpSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let online = Mlp::new(&cfg.network_sizes(spec), &mut rng);
        let target = online.clone();
        Learner {
            adam: Adam::new(online.n_params(), cfg.lr),
            online,
            target,
            rng,
            updates: 0,
            gamma: spec.gamma,
            m: spec.reward_dim,
            batch: cfg.batch,
            prefs: cfg.prefs,
            alpha: cfg.dirichlet_alpha,
            lambda: cfg.lambda,
            target_mode: cfg.target,
            clip: cfg.grad_clip,
            beta: cfg.beta_schedule(),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn beta(&self) -> f64 {
        anneal_beta(&self.beta, self.updates)
    }

    /// P independent Dirichlet draws.
    pub fn sample_prefs(&mut self) -> Vec<Preference> {
        let alpha = vec![self.alpha; self.m];
        (0..self.prefs).map(|_| sample_dirichlet(&alpha, &mut self.rng).expect("positive concentration")).collect()
    }

    /// One gradient step on a sampled batch; returns refreshed priorities.
    pub fn update(&mut self, batch: &SampledBatch<Transition>, exec: Exec) -> Result<UpdateStats, DeqlError> {
        let prefs = PrefBatch::Shared(self.sample_prefs());
        let beta = self.beta();
        let out = learner_loss(
            &self.online,
            &self.target,
            &batch.items,
            &batch.weights,
            &prefs,
            self.gamma,
            LossKind::Envelope { lambda: self.lambda },
            exec,
        );
        let mut grad = out.grad;
        let grad_norm = match self.clip {
            Some(c) => clip_grad(&mut grad, c),
            None => grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
        };
        self.adam.step(&mut self.online.params, &grad);
        self.updates += 1;
        if !self.online.is_finite() {
            return Err(DeqlError::NonFinite(self.updates));
        }
        target_update(&mut self.target, &self.online, self.target_mode, self.updates);
        Ok(UpdateStats {
            loss: out.loss,
            beta,
            ids: batch.ids.clone(),
            priorities: refresh_priorities(&out.deltas),
            grad_norm,
        })
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot::new(self.updates, self.online.clone(), self.target.clone())
    }
}

// ---------------------------------------------------------------------------
// Telemetry

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TelemetryRow {
    pub step: u64,
    pub env_steps: u64,
    pub loss: f64,
    pub eps: f64,
    pub beta: f64,
    pub samples_per_sec: f64,
}

pub fn telemetry_csv(rows: &[TelemetryRow]) -> String {
    let mut out = String::from("step,loss,eps,beta,samples_per_sec\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{:.1}", r.step, r.loss, r.eps, r.beta, r.samples_per_sec);
    }
    out
}

struct TelemetryLog {
    every: u64,
    rows: Vec<TelemetryRow>,
    acc: f64,
    n: u64,
    start: Instant,
}

impl TelemetryLog {
    fn new(every: u64) -> Self {
        TelemetryLog { every: every.max(1), rows: Vec::new(), acc: 0.0, n: 0, start: Instant::now() }
    }

    fn record(&mut self, step: u64, env_steps: u64, loss: f64, eps: f64, beta: f64, samples: u64) {
        self.acc += loss;
        self.n += 1;
        if step.is_multiple_of(self.every) {
            let dt = self.start.elapsed().as_secs_f64().max(1e-9);
            self.rows.push(TelemetryRow {
                step,
                env_steps,
                loss: self.acc / self.n as f64,
                eps,
                beta,
                samples_per_sec: samples as f64 / dt,
            });
            self.acc = 0.0;
            self.n = 0;
        }
    }
}

// ---------------------------------------------------------------------------
// Runs

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Actors and learner interleaved on one thread; reproducible.
    Deterministic,
    /// One thread per actor, shards behind mailboxes, learner on the caller's thread.
    Threaded,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub online: Mlp,
    pub target: Mlp,
    pub telemetry: Vec<TelemetryRow>,
    pub env_steps: u64,
    pub updates: u64,
    /// Stored transitions when the first gradient step ran.
    pub first_update_at: Option<u64>,
    pub config_hash: String,
    /// Snapshots that failed checksum verification on the actor side.
    pub torn_snapshots: u64,
}

impl TrainOutcome {
    pub fn checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        Checkpoint {
            config_hash: self.config_hash.clone(),
            config: cfg.clone(),
            updates: self.updates,
            env_steps: self.env_steps,
            online: self.online.clone(),
            target: self.target.clone(),
        }
    }
}

const LOG_EVERY: u64 = 250;

pub fn train_deql(cfg: &TrainConfig, mode: RunMode, exec: Exec) -> Result<TrainOutcome, DeqlError> {
    match mode {
        RunMode::Deterministic => train_interleaved(cfg, exec),
        RunMode::Threaded => train_threaded(cfg, exec),
    }
}

fn make_shards(cfg: &TrainConfig) -> Result<Vec<ReplayShard<Transition>>, DeqlError> {
    let k = cfg.shards.max(1);
    (0..k).map(|i| Ok(ReplayShard::new(i, (cfg.capacity / k).max(1), cfg.priority_alpha)?)).collect()
}

fn train_interleaved(cfg: &TrainConfig, exec: Exec) -> Result<TrainOutcome, DeqlError> {
    let spec = cfg.env.build().spec();
    let mut shards = make_shards(cfg)?;
    let mut learner = Learner::new(cfg, &spec);
    let first = Arc::new(learner.snapshot());
    let mut actors: Vec<Actor> = (0..cfg.actors.max(1)).map(|u| Actor::new(u, cfg, first.clone())).collect();
    let mut log = TelemetryLog::new(LOG_EVERY);
    let mut stored = 0u64;
    let mut env_steps = 0u64;
    let mut first_update_at = None;
    'outer: loop {
        for i in 0..actors.len() {
            if env_steps >= cfg.env_steps {
                break 'outer;
            }
            if let Some(f) = actors[i].step() {
                stored += f.items.len() as u64;
                shards[f.shard].add_batch(f.items, &f.priorities)?;
            }
            env_steps += 1;
            if !env_steps.is_multiple_of(cfg.steps_per_update.max(1)) || (stored as usize) < cfg.warmup.max(cfg.batch) {
                continue;
            }
            let beta = learner.beta();
            let batch = replay::sample(&shards, cfg.batch, beta, &mut learner.rng)?;
            let stats = learner.update(&batch, exec)?;
            first_update_at.get_or_insert(stored);
            replay::update_priorities(&mut shards, &stats.ids, &stats.priorities);
            let eps = epsilon_at(&cfg.eps, env_steps);
            log.record(learner.updates, env_steps, stats.loss, eps, stats.beta, env_steps);
            if learner.updates.is_multiple_of(cfg.push_period.max(1)) {
                let s = Arc::new(learner.snapshot());
                for a in actors.iter_mut() {
                    a.set_snapshot(s.clone());
                }
            }
        }
    }
    Ok(TrainOutcome {
        online: learner.online,
        target: learner.target,
        telemetry: log.rows,
        env_steps,
        updates: learner.updates,
        first_update_at,
        config_hash: cfg.hash(),
        torn_snapshots: 0,
    })
}

fn train_threaded(cfg: &TrainConfig, exec: Exec) -> Result<TrainOutcome, DeqlError> {
    let spec = cfg.env.build().spec();
    let servers: Vec<ShardServer<Transition>> = make_shards(cfg)?.into_iter().map(ShardServer::spawn).collect();
    let mut learner = Learner::new(cfg, &spec);
    let board = Arc::new(ParamBoard::new(learner.snapshot()));
    let env_counter = Arc::new(AtomicU64::new(0));
    let stored = Arc::new(AtomicU64::new(0));
    let torn = Arc::new(AtomicU64::new(0));
    let running = Arc::new(AtomicUsize::new(cfg.actors.max(1)));
    let mut handles = Vec::new();
    for u in 0..cfg.actors.max(1) {
        let mut actor = Actor::new(u, cfg, board.latest());
        let inbox = servers[actor.shard()].inbox();
        let (board, env_counter, stored, torn, running) =
            (board.clone(), env_counter.clone(), stored.clone(), torn.clone(), running.clone());
        let limit = cfg.env_steps;
        handles.push(std::thread::spawn(move || {
            while env_counter.fetch_add(1, Ordering::SeqCst) < limit {
                if let Some(f) = actor.step() {
                    let n = f.items.len() as u64;
                    if !inbox.add_batch(f.items, f.priorities) {
                        break;
                    }
                    stored.fetch_add(n, Ordering::SeqCst);
                }
                let s = board.latest();
                if s.version != actor.snapshot_version() {
                    if s.verify() {
                        actor.set_snapshot(s);
                    } else {
                        torn.fetch_add(1, Ordering::SeqCst);
                    }
                }
            }
            running.fetch_sub(1, Ordering::SeqCst);
        }));
    }
    let mut log = TelemetryLog::new(LOG_EVERY);
    let mut first_update_at = None;
    let per = cfg.steps_per_update.max(1);
    let result = (|| -> Result<(), DeqlError> {
        loop {
            let steps = env_counter.load(Ordering::SeqCst).min(cfg.env_steps);
            let actors_done = running.load(Ordering::SeqCst) == 0;
            let have = stored.load(Ordering::SeqCst);
            let allowed = steps / per;
            let ready = have as usize >= cfg.warmup.max(cfg.batch);
            if learner.updates >= allowed || !ready {
                if actors_done {
                    return Ok(());
                }
                std::thread::yield_now();
                continue;
            }
            let batch = match replay::sample_served(&servers, cfg.batch, learner.beta(), &mut learner.rng) {
                Ok(b) => b,
                Err(replay::ReplayError::InsufficientData { .. }) if !actors_done => continue,
                Err(replay::ReplayError::InsufficientData { .. }) => return Ok(()),
                Err(e) => return Err(e.into()),
            };
            let stats = learner.update(&batch, exec)?;
            first_update_at.get_or_insert(have);
            replay::update_served(&servers, &stats.ids, &stats.priorities);
            log.record(learner.updates, steps, stats.loss, epsilon_at(&cfg.eps, steps), stats.beta, steps);
            if learner.updates.is_multiple_of(cfg.push_period.max(1)) {
                board.publish(learner.snapshot());
            }
        }
    })();
    // Let actors finish before tearing down their shards.
    let env_steps = env_counter.swap(u64::MAX / 2, Ordering::SeqCst).min(cfg.env_steps);
    for h in handles {
        let _ = h.join();
    }
    for s in servers {
        s.stop();
    }
    result?;
    Ok(TrainOutcome {
        online: learner.online,
        target: learner.target,
        telemetry: log.rows,
        env_steps,
        updates: learner.updates,
        first_update_at,
        config_hash: cfg.hash(),
        torn_snapshots: torn.load(Ordering::SeqCst),
    })
}

// ---------------------------------------------------------------------------
// Checkpoints

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub config: TrainConfig,
    pub updates: u64,
    pub env_steps: u64,
    pub online: Mlp,
    pub target: Mlp,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), DeqlError> {
        let json = serde_json::to_string(self).map_err(|e| DeqlError::Checkpoint(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| DeqlError::Checkpoint(e.to_string()))
    }

    /// Load and check that the stored hash matches the stored config.
    pub fn load(path: &Path) -> Result<Self, DeqlError> {
        let text = std::fs::read_to_string(path).map_err(|e| DeqlError::Checkpoint(e.to_string()))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| DeqlError::Checkpoint(e.to_string()))?;
        if ck.config.hash() != ck.config_hash {
            return Err(DeqlError::Checkpoint("config hash mismatch".into()));
        }
        if ck.online.sizes != ck.target.sizes || !ck.online.is_finite() {
            return Err(DeqlError::Checkpoint("malformed parameters".into()));
        }
        Ok(ck)
    }
}

// ---------------------------------------------------------------------------
// Evaluation

pub fn greedy_policy(net: &Mlp) -> impl Fn(&[f64], &Preference) -> usize + Sync + '_ {
    move |s: &[f64], w: &Preference| super::greedy_action(net, s, w)
}

/// Recover a front with greedy rollouts over `n_prefs` evaluation preferences and
/// score it against the exact convex coverage set.
pub fn evaluate(net: &Mlp, env: &EnvConfig, n_prefs: usize, seed: u64, exec: Exec) -> Option<MetricsReport> {
    let truth = ccs(&crate::morl_env::true_pareto_set(env).ok()?);
    let m = truth[0].len();
    let prefs = eval_preferences(m, n_prefs, seed);
    let policy = greedy_policy(net);
    let make_env = || env.build();
    let front = recover_front(&policy, &make_env, &prefs, exec);
    let reference = default_reference(&truth);
    let hv = hypervolume(&front, &reference).unwrap_or(crate::pareto_metrics::Hypervolume { value: 0.0, std_err: 0.0 });
    Some(MetricsReport {
        env: env.name(),
        seed,
        crf1: crf1(&front, &truth, EPS_MATCH),
        hypervolume: hv.value,
        hypervolume_std_err: hv.std_err,
        ref_point: reference,
        sparsity: sparsity(&front).ok(),
        n_prefs,
        recovered: front.len(),
        truth: truth.len(),
    })
}
