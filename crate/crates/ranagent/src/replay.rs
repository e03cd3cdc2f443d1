//! Sharded prioritized replay.
//!
//! Each shard keeps a ring of records and a sum-tree over `p^α`. Sampling
//! picks draws across shards in proportion to their totals `Z_k` (systematic
//! allocation, so the expected count per shard is exactly `B·Z_k/ΣZ`) and then
//! draws within each shard in proportion to `p^α`.

use crossbeam::channel::{unbounded, Receiver, Sender};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use std::io::{Read, Write};
use std::path::Path;
use std::thread::JoinHandle;
use thiserror::Error;

/// Floor added to refreshed priorities.
pub const EPS0: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("{items} items but {priorities} priorities")]
    LengthMismatch { items: usize, priorities: usize },
    #[error("priority {0} is not positive")]
    NonPositivePriority(f64),
    #[error("need {need} stored items, have {have}")]
    InsufficientData { need: usize, have: usize },
    #[error("capacity must be positive")]
    ZeroCapacity,
    #[error("snapshot: {0}")]
    Snapshot(String),
}

/// Multi-objective transition: state, action, reward vector, next state, done.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: Vec<f64>,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Binary encoding for shard snapshots.
pub trait Record: Sized {
    fn encode(&self, out: &mut Vec<u8>);
    fn decode(buf: &mut &[u8]) -> Option<Self>;
}

fn take<const N: usize>(buf: &mut &[u8]) -> Option<[u8; N]> {
    if buf.len() < N {
        return None;
    }
    let (h, t) = buf.split_at(N);
    *buf = t;
    h.try_into().ok()
}

fn put_u64(out: &mut Vec<u8>, x: u64) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn get_u64(buf: &mut &[u8]) -> Option<u64> {
    take::<8>(buf).map(u64::from_le_bytes)
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    put_u64(out, xs.len() as u64);
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn get_f64s(buf: &mut &[u8]) -> Option<Vec<f64>> {
    let n = get_u64(buf)? as usize;
    if buf.len() < n * 8 {
        return None;
    }
    (0..n).map(|_| take::<8>(buf).map(f64::from_le_bytes)).collect()
}

impl Record for Transition {
    fn encode(&self, out: &mut Vec<u8>) {
        put_f64s(out, &self.state);
        put_u64(out, self.action as u64);
        put_f64s(out, &self.reward);
        put_f64s(out, &self.next_state);
        out.push(self.done as u8);
    }

    fn decode(buf: &mut &[u8]) -> Option<Self> {
        Some(Transition {
            state: get_f64s(buf)?,
            action: get_u64(buf)? as usize,
            reward: get_f64s(buf)?,
            next_state: get_f64s(buf)?,
            done: take::<1>(buf)?[0] != 0,
        })
    }
}

impl Record for u64 {
    fn encode(&self, out: &mut Vec<u8>) {
        put_u64(out, *self);
    }

    fn decode(buf: &mut &[u8]) -> Option<Self> {
        get_u64(buf)
    }
}

// ---------------------------------------------------------------------------
// Sum tree

#[derive(Clone, Debug)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.next_power_of_two();
        SumTree { leaves, nodes: vec![0.0; 2 * leaves] }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    /// Parents are recomputed from their children, so no drift accumulates.
    pub fn set(&mut self, i: usize, v: f64) {
        let mut n = self.leaves + i;
        self.nodes[n] = v;
        while n > 1 {
            n /= 2;
            self.nodes[n] = self.nodes[2 * n] + self.nodes[2 * n + 1];
        }
    }

    /// Leaf whose cumulative interval contains `u ∈ [0, total)`.
    pub fn find(&self, mut u: f64) -> usize {
        let mut n = 1;
        while n < self.leaves {
            let left = self.nodes[2 * n];
            if (u < left || self.nodes[2 * n + 1] <= 0.0) && left > 0.0 {
                n *= 2;
            } else {
                u -= left;
                n = 2 * n + 1;
            }
        }
        n - self.leaves
    }
}

// ---------------------------------------------------------------------------
// Shard

/// Identifies one stored item; `serial` detects overwrites.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ItemId {
    pub shard: usize,
    pub slot: usize,
    pub serial: u64,
}

#[derive(Clone, Debug)]
pub struct ReplayShard<T> {
    pub id: usize,
    capacity: usize,
    alpha: f64,
    items: Vec<Option<T>>,
    raw: Vec<f64>,
    serials: Vec<u64>,
    tree: SumTree,
    cursor: usize,
    len: usize,
    next_serial: u64,
    stale: u64,
}

/// Draws from one shard: ids, records and `p^α` of each.
#[derive(Clone, Debug)]
pub struct ShardDraw<T> {
    pub ids: Vec<ItemId>,
    pub items: Vec<T>,
    pub mass: Vec<f64>,
    pub total: f64,
    pub len: usize,
}

impl<T: Clone> ReplayShard<T> {
    pub fn new(id: usize, capacity: usize, alpha: f64) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::ZeroCapacity);
        }
        Ok(ReplayShard {
            id,
            capacity,
            alpha,
            items: vec![None; capacity],
            raw: vec![0.0; capacity],
            serials: vec![0; capacity],
            tree: SumTree::new(capacity),
            cursor: 0,
            len: 0,
            next_serial: 1,
            stale: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Running total `Z_k = Σ p^α`.
    pub fn total(&self) -> f64 {
        self.tree.total()
    }

    pub fn stale_count(&self) -> u64 {
        self.stale
    }

    pub fn priority(&self, slot: usize) -> f64 {
        self.raw[slot]
    }

    /// Σ p^α recomputed from the raw priorities.
    pub fn recomputed_total(&self) -> f64 {
        (0..self.len).map(|i| self.raw[i].powf(self.alpha)).sum()
    }

    pub fn add_batch(&mut self, items: Vec<T>, priorities: &[f64]) -> Result<Vec<ItemId>, ReplayError> {
        if items.len() != priorities.len() {
            return Err(ReplayError::LengthMismatch { items: items.len(), priorities: priorities.len() });
        }
        if let Some(&p) = priorities.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
            return Err(ReplayError::NonPositivePriority(p));
        }
        let mut ids = Vec::with_capacity(items.len());
        for (item, &p) in items.into_iter().zip(priorities) {
            let slot = self.cursor;
            self.items[slot] = Some(item);
            self.raw[slot] = p;
            self.serials[slot] = self.next_serial;
            self.tree.set(slot, p.powf(self.alpha));
            ids.push(ItemId { shard: self.id, slot, serial: self.next_serial });
            self.next_serial += 1;
            self.cursor = (self.cursor + 1) % self.capacity;
            self.len = (self.len + 1).min(self.capacity);
        }
        Ok(ids)
    }

    /// Refresh priorities; ids whose slot was overwritten are skipped and counted.
    /// Returns the number skipped by this call.
    pub fn update_priorities(&mut self, ids: &[ItemId], priorities: &[f64]) -> u64 {
        let mut skipped = 0;
        for (id, &p) in ids.iter().zip(priorities) {
            if id.shard != self.id || id.slot >= self.len || self.serials[id.slot] != id.serial {
                skipped += 1;
                continue;
            }
            let p = if p.is_finite() { p.max(EPS0) } else { EPS0 };
            self.raw[id.slot] = p;
            self.tree.set(id.slot, p.powf(self.alpha));
        }
        self.stale += skipped;
        skipped
    }

    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> ShardDraw<T> {
        let total = self.total();
        let mut d = ShardDraw { ids: Vec::new(), items: Vec::new(), mass: Vec::new(), total, len: self.len };
        if self.len == 0 || total <= 0.0 {
            return d;
        }
        for _ in 0..n {
            let u = rng.random::<f64>() * total;
            let slot = self.tree.find(u).min(self.len - 1);
            d.ids.push(ItemId { shard: self.id, slot, serial: self.serials[slot] });
            d.items.push(self.items[slot].clone().expect("slot below len is filled"));
            d.mass.push(self.tree.get(slot));
        }
        d
    }
}

// ---------------------------------------------------------------------------
// Sampling across shards

#[derive(Clone, Debug)]
pub struct SampledBatch<T> {
    pub items: Vec<T>,
    pub ids: Vec<ItemId>,
    pub weights: Vec<f64>,
    /// Combined per-draw probability of each item.
    pub probs: Vec<f64>,
}

/// Per-shard counts with expectation exactly `B·Z_k/ΣZ` (one uniform offset,
/// B evenly spaced points over the cumulative totals).
pub fn allocate<R: Rng + ?Sized>(totals: &[f64], b: usize, rng: &mut R) -> Vec<usize> {
    let sum: f64 = totals.iter().sum();
    let mut counts = vec![0; totals.len()];
    if b == 0 || sum <= 0.0 {
        return counts;
    }
    let u: f64 = rng.random();
    let mut k = 0;
    let mut edge = totals[0];
    for j in 0..b {
        let x = (u + j as f64) * sum / b as f64;
        while x >= edge && k + 1 < totals.len() {
            k += 1;
            edge += totals[k];
        }
        // Skip empty shards that sit on the boundary.
        while totals[k] <= 0.0 && k + 1 < totals.len() {
            k += 1;
            edge += totals[k];
        }
        counts[k] += 1;
    }
    counts
}

/// Importance weights `(N·P)^{-β}`, normalised by the batch maximum.
pub fn importance_weights(probs: &[f64], n_stored: usize, beta: f64) -> Vec<f64> {
    let raw: Vec<f64> = probs.iter().map(|p| (n_stored as f64 * p).powf(-beta)).collect();
    let max = raw.iter().cloned().fold(0.0, f64::max);
    raw.iter().map(|w| if max > 0.0 { w / max } else { 1.0 }).collect()
}

fn assemble<T>(draws: Vec<ShardDraw<T>>, beta: f64) -> SampledBatch<T> {
    let sum: f64 = draws.iter().map(|d| d.total).sum();
    let n: usize = draws.iter().map(|d| d.len).sum();
    let mut out = SampledBatch { items: Vec::new(), ids: Vec::new(), weights: Vec::new(), probs: Vec::new() };
    for d in draws {
        out.probs.extend(d.mass.iter().map(|m| m / sum));
        out.items.extend(d.items);
        out.ids.extend(d.ids);
    }
    out.weights = importance_weights(&out.probs, n, beta);
    out
}

pub fn sample<T: Clone, R: Rng + ?Sized>(
    shards: &[ReplayShard<T>],
    b: usize,
    beta: f64,
    rng: &mut R,
) -> Result<SampledBatch<T>, ReplayError> {
    let have: usize = shards.iter().map(|s| s.len()).sum();
    if have < b || have == 0 {
        return Err(ReplayError::InsufficientData { need: b.max(1), have });
    }
    let totals: Vec<f64> = shards.iter().map(|s| s.total()).collect();
    let counts = allocate(&totals, b, rng);
    let draws = shards.iter().zip(&counts).map(|(s, &c)| s.draw(c, rng)).collect();
    Ok(assemble(draws, beta))
}

/// Route refreshed priorities to their shards. Returns the number of stale ids.
pub fn update_priorities<T: Clone>(shards: &mut [ReplayShard<T>], ids: &[ItemId], priorities: &[f64]) -> u64 {
    let mut skipped = 0;
    for shard in shards.iter_mut() {
        let (i, p): (Vec<ItemId>, Vec<f64>) =
            ids.iter().zip(priorities).filter(|(id, _)| id.shard == shard.id).map(|(i, p)| (*i, *p)).unzip();
        if !i.is_empty() {
            skipped += shard.update_priorities(&i, &p);
        }
    }
    skipped + ids.iter().filter(|id| id.shard >= shards.len()).count() as u64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaSchedule {
    pub beta0: f64,
    pub horizon: u64,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule { beta0: 0.4, horizon: 10_000 }
    }
}

pub fn anneal_beta(s: &BetaSchedule, t: u64) -> f64 {
    if s.horizon == 0 {
        return 1.0;
    }
    let f = (t as f64 / s.horizon as f64).min(1.0);
    s.beta0 + (1.0 - s.beta0) * f
}

// ---------------------------------------------------------------------------
// Snapshots

const MAGIC: &[u8; 4] = b"RPL1";

impl<T: Clone + Record> ReplayShard<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        for x in [self.id, self.capacity, self.cursor, self.len] {
            put_u64(&mut out, x as u64);
        }
        out.extend_from_slice(&self.alpha.to_le_bytes());
        put_u64(&mut out, self.next_serial);
        put_u64(&mut out, self.stale);
        for slot in 0..self.len {
            put_u64(&mut out, self.serials[slot]);
            out.extend_from_slice(&self.raw[slot].to_le_bytes());
            let mut rec = Vec::new();
            self.items[slot].as_ref().expect("filled").encode(&mut rec);
            put_u64(&mut out, rec.len() as u64);
            out.extend_from_slice(&rec);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ReplayError> {
        let bad = |m: &str| ReplayError::Snapshot(m.to_string());
        let mut buf = bytes;
        if take::<4>(&mut buf).as_ref() != Some(MAGIC) {
            return Err(bad("bad magic"));
        }
        let mut hdr = [0usize; 4];
        for h in hdr.iter_mut() {
            *h = get_u64(&mut buf).ok_or_else(|| bad("truncated header"))? as usize;
        }
        let [id, capacity, cursor, len] = hdr;
        let alpha = take::<8>(&mut buf).map(f64::from_le_bytes).ok_or_else(|| bad("truncated header"))?;
        let next_serial = get_u64(&mut buf).ok_or_else(|| bad("truncated header"))?;
        let stale = get_u64(&mut buf).ok_or_else(|| bad("truncated header"))?;
        if len > capacity || cursor >= capacity.max(1) {
            return Err(bad("inconsistent header"));
        }
        let mut shard = ReplayShard::new(id, capacity, alpha)?;
        for slot in 0..len {
            let serial = get_u64(&mut buf).ok_or_else(|| bad("truncated record"))?;
            let p = take::<8>(&mut buf).map(f64::from_le_bytes).ok_or_else(|| bad("truncated record"))?;
            let n = get_u64(&mut buf).ok_or_else(|| bad("truncated record"))? as usize;
            if buf.len() < n {
                return Err(bad("truncated record"));
            }
            let mut rec = &buf[..n];
            let item = T::decode(&mut rec).ok_or_else(|| bad("undecodable record"))?;
            buf = &buf[n..];
            shard.items[slot] = Some(item);
            shard.raw[slot] = p;
            shard.serials[slot] = serial;
            shard.tree.set(slot, p.powf(alpha));
        }
        shard.cursor = cursor;
        shard.len = len;
        shard.next_serial = next_serial;
        shard.stale = stale;
        Ok(shard)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()
    }

    pub fn load(path: &Path) -> Result<Self, ReplayError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| ReplayError::Snapshot(e.to_string()))?;
        Self::from_bytes(&bytes)
    }
}

// ---------------------------------------------------------------------------
// Mailbox-served shards for the threaded mode

enum Msg<T> {
    Add(Vec<T>, Vec<f64>),
    Draw { n: usize, seed: u64, reply: Sender<ShardDraw<T>> },
    Totals(Sender<(f64, usize)>),
    Update(Vec<ItemId>, Vec<f64>),
    Stop(Sender<ReplayShard<T>>),
}

/// A shard owned by its own thread; all access goes through messages.
pub struct ShardServer<T> {
    tx: Sender<Msg<T>>,
    handle: Option<JoinHandle<()>>,
}

/// Cheap handle actors use to push batches.
#[derive(Clone)]
pub struct ShardInbox<T> {
    tx: Sender<Msg<T>>,
}

impl<T> ShardInbox<T> {
    /// Returns false once the server has stopped.
    pub fn add_batch(&self, items: Vec<T>, priorities: Vec<f64>) -> bool {
        self.tx.send(Msg::Add(items, priorities)).is_ok()
    }
}

impl<T: Clone + Send + 'static> ShardServer<T> {
    pub fn spawn(shard: ReplayShard<T>) -> Self {
        let (tx, rx): (Sender<Msg<T>>, Receiver<Msg<T>>) = unbounded();
        let handle = std::thread::spawn(move || {
            let mut shard = shard;
            for msg in rx {
                match msg {
                    // Malformed batches from an actor are dropped.
                    Msg::Add(items, p) => {
                        let _ = shard.add_batch(items, &p);
                    }
                    Msg::Draw { n, seed, reply } => {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        let _ = reply.send(shard.draw(n, &mut rng));
                    }
                    Msg::Totals(reply) => {
                        let _ = reply.send((shard.total(), shard.len()));
                    }
                    Msg::Update(ids, p) => {
                        shard.update_priorities(&ids, &p);
                    }
                    Msg::Stop(reply) => {
                        let _ = reply.send(shard);
                        return;
                    }
                }
            }
        });
        ShardServer { tx, handle: Some(handle) }
    }

    pub fn inbox(&self) -> ShardInbox<T> {
        ShardInbox { tx: self.tx.clone() }
    }

    pub fn stop(mut self) -> ReplayShard<T> {
        let (tx, rx) = unbounded();
        self.tx.send(Msg::Stop(tx)).expect("shard thread alive");
        let shard = rx.recv().expect("shard returned");
        if let Some(h) = self.handle.take() {
            h.join().expect("shard thread");
        }
        shard
    }
}

/// Learner-side view over served shards.
pub fn sample_served<T: Clone + Send + 'static, R: Rng + ?Sized>(
    servers: &[ShardServer<T>],
    b: usize,
    beta: f64,
    rng: &mut R,
) -> Result<SampledBatch<T>, ReplayError> {
    let replies: Vec<_> = servers
        .iter()
        .map(|s| {
            let (tx, rx) = unbounded();
            s.tx.send(Msg::Totals(tx)).expect("shard thread alive");
            rx
        })
        .collect();
    let stats: Vec<(f64, usize)> = replies.into_iter().map(|r| r.recv().expect("totals")).collect();
    let have: usize = stats.iter().map(|s| s.1).sum();
    if have < b || have == 0 {
        return Err(ReplayError::InsufficientData { need: b.max(1), have });
    }
    let totals: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let counts = allocate(&totals, b, rng);
    let pending: Vec<_> = servers
        .iter()
        .zip(&counts)
        .map(|(s, &n)| {
            let (tx, rx) = unbounded();
            s.tx.send(Msg::Draw { n, seed: rng.random(), reply: tx }).expect("shard thread alive");
            rx
        })
        .collect();
    let draws = pending.into_iter().map(|r| r.recv().expect("draw")).collect();
    Ok(assemble(draws, beta))
}

pub fn update_served<T>(servers: &[ShardServer<T>], ids: &[ItemId], priorities: &[f64]) {
    for (k, s) in servers.iter().enumerate() {
        let (i, p): (Vec<ItemId>, Vec<f64>) =
            ids.iter().zip(priorities).filter(|(id, _)| id.shard == k).map(|(i, p)| (*i, *p)).unzip();
        if !i.is_empty() {
            let _ = s.tx.send(Msg::Update(i, p));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_overwrites_oldest() {
        let mut s = ReplayShard::new(0, 3, 1.0).unwrap();
        s.add_batch(vec![1u64, 2, 3], &[1.0, 1.0, 1.0]).unwrap();
        let ids = s.add_batch(vec![4u64], &[5.0]).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(ids[0].slot, 0);
        assert_eq!(s.total(), 7.0);
    }

    #[test]
    fn errors() {
        let mut s = ReplayShard::new(0, 3, 1.0).unwrap();
        assert!(matches!(s.add_batch(vec![1u64], &[]), Err(ReplayError::LengthMismatch { .. })));
        assert!(matches!(s.add_batch(vec![1u64], &[0.0]), Err(ReplayError::NonPositivePriority(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample(&[s], 1, 0.4, &mut rng), Err(ReplayError::InsufficientData { .. })));
    }

    #[test]
    fn beta_schedule() {
        let s = BetaSchedule { beta0: 0.4, horizon: 1000 };
        assert_eq!(anneal_beta(&s, 0), 0.4);
        assert_eq!(anneal_beta(&s, 1000), 1.0);
        assert!((anneal_beta(&s, 500) - 0.7).abs() < 1e-12);
        assert_eq!(anneal_beta(&s, 5000), 1.0);
    }

    #[test]
    fn allocation_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let totals = [1.0, 0.0, 3.0, 2.5];
        let mut acc = [0usize; 4];
        let reps = 20_000;
        for _ in 0..reps {
            let c = allocate(&totals, 7, &mut rng);
            assert_eq!(c.iter().sum::<usize>(), 7);
            assert_eq!(c[1], 0);
            for k in 0..4 {
                acc[k] += c[k];
            }
        }
        for k in 0..4 {
            let expect = 7.0 * totals[k] / 6.5;
            assert!((acc[k] as f64 / reps as f64 - expect).abs() < 0.02, "{k}");
        }
    }
}
