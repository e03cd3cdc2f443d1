//! Preference-conditioned vector Q-learning with envelope backups: network
//! operations, the batched learner loss, and the training loops (distributed
//! actor/learner and the single-actor baseline).

pub mod eql;
pub mod net;
pub mod train;

use crate::exec::Exec;
use crate::replay::{Transition, EPS0};
use crate::simplex::Preference;
pub use net::{Adam, Mlp};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeqlError {
    #[error("input has {got} features, network expects {want}")]
    ShapeMismatch { got: usize, want: usize },
    #[error("non-finite parameters after update {0}")]
    NonFinite(u64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Replay(#[from] crate::replay::ReplayError),
}

/// Network input: state features followed by the preference.
pub fn input_row(s: &[f64], w: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(s.len() + w.len());
    x.extend_from_slice(s);
    x.extend_from_slice(w);
    x
}

/// Q(s, ·, ω) as a flat |A|×m row-major matrix.
pub fn q_forward(net: &Mlp, s: &[f64], w: &Preference) -> Result<Vec<f64>, DeqlError> {
    let got = s.len() + w.dim();
    if got != net.input_dim() {
        return Err(DeqlError::ShapeMismatch { got, want: net.input_dim() });
    }
    Ok(net.forward_one(&input_row(s, w.as_slice())))
}

/// Per-action ωᵀQ.
pub fn scalarize(q: &[f64], w: &[f64]) -> Vec<f64> {
    let m = w.len();
    q.chunks_exact(m).map(|row| row.iter().zip(w).map(|(a, b)| a * b).sum()).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_action(net: &Mlp, s: &[f64], w: &Preference) -> usize {
    let q = net.forward_one(&input_row(s, w.as_slice()));
    argmax(&scalarize(&q, w.as_slice()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsSchedule {
    pub eps_max: f64,
    pub eps_min: f64,
    pub decay_steps: u64,
}

pub fn epsilon_at(s: &EpsSchedule, t: u64) -> f64 {
    if s.decay_steps == 0 {
        return s.eps_min;
    }
    (s.eps_max - (s.eps_max - s.eps_min) * t as f64 / s.decay_steps as f64).max(s.eps_min)
}

pub fn act<R: Rng + ?Sized>(net: &Mlp, s: &[f64], w: &Preference, eps: f64, n_actions: usize, rng: &mut R) -> usize {
    if rng.random::<f64>() < eps {
        rng.random_range(0..n_actions)
    } else {
        greedy_action(net, s, w)
    }
}

/// Scalar double-DQN TD error under a fresh preference, plus the floor.
pub fn initial_priority(tr: &Transition, w: &Preference, online: &Mlp, target: &Mlp, gamma: f64) -> f64 {
    let ws = w.as_slice();
    let m = ws.len();
    let q = online.forward_one(&input_row(&tr.state, ws));
    let q_sa: f64 = ws.iter().zip(&q[tr.action * m..(tr.action + 1) * m]).map(|(a, b)| a * b).sum();
    let r: f64 = ws.iter().zip(&tr.reward).map(|(a, b)| a * b).sum();
    let boot = if tr.done {
        0.0
    } else {
        let qn = online.forward_one(&input_row(&tr.next_state, ws));
        let a_star = argmax(&scalarize(&qn, ws));
        let qt = target.forward_one(&input_row(&tr.next_state, ws));
        ws.iter().zip(&qt[a_star * m..(a_star + 1) * m]).map(|(a, b)| a * b).sum()
    };
    (r + gamma * boot - q_sa).abs() + EPS0
}

/// Argmax over actions × candidate preferences of `w_queryᵀ Q(s', a', ω')`.
/// `q_cands[k]` is Q(s', ·, W[k]); ties go to the lowest action, then the lowest k.
pub fn envelope_select_from(q_cands: &[&[f64]], w_query: &[f64]) -> (usize, usize) {
    let m = w_query.len();
    let n_actions = q_cands[0].len() / m;
    let mut best = (0, 0);
    let mut best_v = f64::NEG_INFINITY;
    for a in 0..n_actions {
        for (k, q) in q_cands.iter().enumerate() {
            let v: f64 = w_query.iter().zip(&q[a * m..(a + 1) * m]).map(|(x, y)| x * y).sum();
            if v > best_v {
                best_v = v;
                best = (a, k);
            }
        }
    }
    best
}

pub fn envelope_select(net: &Mlp, s_next: &[f64], w_query: &Preference, cands: &[Preference]) -> (usize, usize) {
    let qs: Vec<Vec<f64>> = cands.iter().map(|c| net.forward_one(&input_row(s_next, c.as_slice()))).collect();
    let refs: Vec<&[f64]> = qs.iter().map(|q| q.as_slice()).collect();
    envelope_select_from(&refs, w_query.as_slice())
}

/// y = r + γ(1-done)·Q(s', a*, ω*; θ⁻).
pub fn envelope_target(r: &[f64], done: bool, s_next: &[f64], a: usize, w_star: &Preference, target: &Mlp, gamma: f64) -> Vec<f64> {
    if done || gamma == 0.0 {
        return r.to_vec();
    }
    let m = r.len();
    let q = target.forward_one(&input_row(s_next, w_star.as_slice()));
    r.iter().zip(&q[a * m..(a + 1) * m]).map(|(ri, qi)| ri + gamma * qi).collect()
}

/// p(i) = max_j |δ_ij| + ε₀.
pub fn refresh_priorities(deltas: &[Vec<f64>]) -> Vec<f64> {
    deltas.iter().map(|row| row.iter().fold(0.0f64, |a, d| a.max(d.abs())) + EPS0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TargetMode {
    Hard { period: u64 },
    Soft { period: u64, tau: f64 },
}

/// Apply the target update if `step` is on the period.
pub fn target_update(target: &mut Mlp, online: &Mlp, mode: TargetMode, step: u64) {
    match mode {
        TargetMode::Hard { period } if step.is_multiple_of(period.max(1)) => target.soft_update(online, 1.0),
        TargetMode::Soft { period, tau } if step.is_multiple_of(period.max(1)) => target.soft_update(online, tau),
        _ => {}
    }
}

// ---------------------------------------------------------------------------
// Learner loss

/// Preferences paired with each transition: query set and envelope candidates coincide.
#[derive(Clone, Debug)]
pub enum PrefBatch {
    /// One set for the whole batch (Cartesian product).
    Shared(Vec<Preference>),
    /// A separate set per transition (hindsight relabeling per sample).
    PerItem(Vec<Vec<Preference>>),
}

impl PrefBatch {
    pub fn get(&self, i: usize) -> &[Preference] {
        match self {
            PrefBatch::Shared(p) => p,
            PrefBatch::PerItem(p) => &p[i],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// ‖y-Q‖² + λ(1 - cos(ω, Q)).
    Envelope { lambda: f64 },
    /// (1-λ)|ωᵀ(y-Q)| + λ‖y-Q‖².
    Homotopy { lambda: f64 },
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Scalarized residuals δ_ij = ω_jᵀ(y_ij - Q_ij) per transition.
    pub deltas: Vec<Vec<f64>>,
    /// Targets y_ij, kept for inspection.
    pub targets: Vec<Vec<Vec<f64>>>,
}

/// Loss of one (prediction, target) pair and its gradient with respect to the prediction.
pub fn pair_loss(q: &[f64], y: &[f64], w: &[f64], kind: LossKind) -> (f64, Vec<f64>) {
    let m = q.len();
    let diff: Vec<f64> = (0..m).map(|j| y[j] - q[j]).collect();
    let sq: f64 = diff.iter().map(|d| d * d).sum();
    match kind {
        LossKind::Envelope { lambda } => {
            let mut g: Vec<f64> = diff.iter().map(|d| -2.0 * d).collect();
            let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            let cos = if qn > 0.0 { w.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / (wn * qn) } else { 0.0 };
            if lambda != 0.0 && qn > 0.0 {
                let wq: f64 = w.iter().zip(q).map(|(a, b)| a * b).sum();
                for j in 0..m {
                    let dcos = w[j] / (wn * qn) - wq * q[j] / (wn * qn * qn * qn);
                    g[j] -= lambda * dcos;
                }
            }
            (sq + lambda * (1.0 - cos), g)
        }
        LossKind::Homotopy { lambda } => {
            let db: f64 = w.iter().zip(&diff).map(|(a, b)| a * b).sum();
            let s = if db > 0.0 {
                1.0
            } else if db < 0.0 {
                -1.0
            } else {
                0.0
            };
            let g = (0..m).map(|j| -2.0 * lambda * diff[j] - (1.0 - lambda) * s * w[j]).collect();
            ((1.0 - lambda) * db.abs() + lambda * sq, g)
        }
    }
}

/// Batched envelope loss with analytic gradient for `online`.
///
/// Targets use envelope selection with `online` and evaluation with `target`;
/// they are treated as constants. The loss is the IS-weighted mean over all
/// (transition, preference) pairs.
pub fn learner_loss(
    online: &Mlp,
    target: &Mlp,
    batch: &[Transition],
    is_weights: &[f64],
    prefs: &PrefBatch,
    gamma: f64,
    kind: LossKind,
    exec: Exec,
) -> LossOutput {
    let m = batch[0].reward.len();
    let n_actions = online.output_dim() / m;
    // Next-state rows for every candidate preference of non-terminal items.
    let mut next_rows = Vec::new();
    let mut next_off = vec![usize::MAX; batch.len()];
    let mut n_next = 0;
    for (i, tr) in batch.iter().enumerate() {
        if tr.done || gamma == 0.0 {
            continue;
        }
        next_off[i] = n_next;
        for w in prefs.get(i) {
            next_rows.extend_from_slice(&tr.next_state);
            next_rows.extend_from_slice(w.as_slice());
            n_next += 1;
        }
    }
    let out = online.output_dim();
    let (qn_online, qn_target) = if n_next > 0 {
        (online.forward(&next_rows, exec), target.forward(&next_rows, exec))
    } else {
        (Vec::new(), Vec::new())
    };
    // Targets y_ij.
    let targets: Vec<Vec<Vec<f64>>> = batch
        .iter()
        .enumerate()
        .map(|(i, tr)| {
            let ws = prefs.get(i);
            ws.iter()
                .map(|wq| {
                    if next_off[i] == usize::MAX {
                        return tr.reward.clone();
                    }
                    let cands: Vec<&[f64]> = (0..ws.len())
                        .map(|k| &qn_online[(next_off[i] + k) * out..(next_off[i] + k + 1) * out])
                        .collect();
                    let (a, k) = envelope_select_from(&cands, wq.as_slice());
                    let qt = &qn_target[(next_off[i] + k) * out..(next_off[i] + k + 1) * out];
                    (0..m).map(|j| tr.reward[j] + gamma * qt[a * m + j]).collect()
                })
                .collect()
        })
        .collect();
    let _ = n_actions;
    // Pairs (i, j) flattened in order; chunked for the forward/backward pass.
    let pairs: Vec<(usize, usize)> =
        (0..batch.len()).flat_map(|i| (0..prefs.get(i).len()).map(move |j| (i, j))).collect();
    let norm = pairs.len() as f64;
    let chunks: Vec<&[(usize, usize)]> = pairs.chunks(net::CHUNK_ROWS).collect();
    let parts = exec.map(&chunks, |chunk| {
        let d = online.input_dim();
        let mut x = Vec::with_capacity(chunk.len() * d);
        for &(i, j) in chunk.iter() {
            x.extend_from_slice(&batch[i].state);
            x.extend_from_slice(prefs.get(i)[j].as_slice());
        }
        let (q, cache) = online.forward_cached(&x, chunk.len());
        let mut gy = vec![0.0; chunk.len() * out];
        let mut loss = 0.0;
        let mut deltas = Vec::with_capacity(chunk.len());
        for (r, &(i, j)) in chunk.iter().enumerate() {
            let a = batch[i].action;
            let qa = &q[r * out + a * m..r * out + (a + 1) * m];
            let y = &targets[i][j];
            let w = prefs.get(i)[j].as_slice();
            let (l, g) = pair_loss(qa, y, w, kind);
            let scale = is_weights[i] / norm;
            loss += scale * l;
            for k in 0..m {
                gy[r * out + a * m + k] = scale * g[k];
            }
            deltas.push(w.iter().zip(y.iter().zip(qa)).map(|(wk, (yk, qk))| wk * (yk - qk)).sum::<f64>());
        }
        let mut grad = vec![0.0; online.n_params()];
        online.backward(&cache, &gy, &mut grad);
        (loss, grad, deltas)
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0; online.n_params()];
    let mut flat = Vec::with_capacity(pairs.len());
    for (l, g, d) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        flat.extend(d);
    }
    let mut deltas: Vec<Vec<f64>> = batch.iter().map(|_| Vec::new()).collect();
    for (&(i, _), d) in pairs.iter().zip(flat) {
        deltas[i].push(d);
    }
    LossOutput { loss, grad, deltas, targets }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalarize_examples() {
        assert_eq!(scalarize(&[1.0, 2.0, 3.0, 4.0], &[1.0, 0.0]), vec![1.0, 3.0]);
        assert_eq!(scalarize(&[2.0, 4.0], &[0.5, 0.5]), vec![3.0]);
    }

    #[test]
    fn eps_schedule() {
        let s = EpsSchedule { eps_max: 0.8, eps_min: 0.1, decay_steps: 1000 };
        assert_eq!(epsilon_at(&s, 0), 0.8);
        assert!((epsilon_at(&s, 500) - 0.45).abs() < 1e-12);
        assert_eq!(epsilon_at(&s, 1000), 0.1);
        assert_eq!(epsilon_at(&s, 5000), 0.1);
    }

    #[test]
    fn pair_loss_examples() {
        let (l, _) = pair_loss(&[0.0, 0.0], &[3.0, 4.0], &[0.5, 0.5], LossKind::Envelope { lambda: 0.0 });
        assert_eq!(l, 25.0);
        // Zero-norm prediction: cosine taken as 0, loss gets λ and no cosine gradient.
        let (l, g) = pair_loss(&[0.0, 0.0], &[0.0, 0.0], &[0.5, 0.5], LossKind::Envelope { lambda: 0.3 });
        assert_eq!(l, 0.3);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn priorities() {
        assert_eq!(refresh_priorities(&[vec![-2.0, 1.0, 0.5]]), vec![2.0 + EPS0]);
        assert_eq!(refresh_priorities(&[vec![0.0, 0.0]]), vec![EPS0]);
        assert_eq!(refresh_priorities(&[vec![-0.25]]), vec![0.25 + EPS0]);
    }

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(envelope_select_from(&[&[1.0, 1.0], &[1.0, 1.0]], &[0.5, 0.5]), (0, 0));
    }
}
