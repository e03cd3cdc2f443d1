//! Single-actor envelope Q-learning baseline: one buffer, a preference drawn
//! per environment step, K relabeled preferences per sampled transition and
//! the homotopy loss with λ rising from 0 to 1.
//!
//! Transitions enter the buffer at a constant maximal priority that is never
//! refreshed, so sampling stays uniform over the stored items.

use super::train::{TelemetryRow, TrainConfig, TrainOutcome};
use super::{act, epsilon_at, learner_loss, net::clip_grad, target_update, Adam, DeqlError, LossKind, Mlp, PrefBatch, TargetMode};
use crate::exec::Exec;
use crate::replay::{self, ReplayShard};
use crate::simplex::sample_dirichlet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const P_MAX: f64 = 1.0;

/// λ after `update` of `horizon` gradient steps.
pub fn homotopy_lambda(update: u64, horizon: u64) -> f64 {
    if horizon == 0 {
        return 1.0;
    }
    (update as f64 / horizon as f64).min(1.0)
}

pub fn train_eql(cfg: &TrainConfig, exec: Exec) -> Result<TrainOutcome, DeqlError> {
    let mut env = cfg.env.build();
    let spec = env.spec();
    let m = spec.reward_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut online = Mlp::new(&cfg.network_sizes(&spec), &mut rng);
    let mut target = online.clone();
    let mut adam = Adam::new(online.n_params(), cfg.lr);
    let mut buffer = ReplayShard::new(0, cfg.capacity.max(1), 0.0)?;
    let alpha = vec![cfg.dirichlet_alpha; m];
    let per = cfg.steps_per_update.max(1);
    let horizon = cfg.eql.homotopy_updates.unwrap_or(cfg.env_steps / per);
    let mode = TargetMode::Hard { period: cfg.eql.target_period.max(1) };
    let mut state = env.reset(&mut rng);
    let mut updates = 0u64;
    let mut first_update_at = None;
    let mut telemetry = Vec::new();
    let mut loss_acc = 0.0;
    let start = std::time::Instant::now();
    for t in 1..=cfg.env_steps {
        let w = sample_dirichlet(&alpha, &mut rng).expect("positive concentration");
        let eps = epsilon_at(&cfg.eps, t - 1);
        let a = act(&online, &state, &w, eps, spec.n_actions, &mut rng);
        match env.step(a, &mut rng) {
            Ok(tr) => {
                state = if tr.done { env.reset(&mut rng) } else { tr.next_state.clone() };
                buffer.add_batch(vec![tr], &[P_MAX])?;
            }
            Err(_) => state = env.reset(&mut rng),
        }
        if t % per != 0 || buffer.len() < cfg.warmup.max(cfg.batch) {
            continue;
        }
        let batch = replay::sample(std::slice::from_ref(&buffer), cfg.batch, 0.0, &mut rng)?;
        let relabel: Vec<Vec<_>> = (0..cfg.batch)
            .map(|_| (0..cfg.eql.relabel.max(1)).map(|_| sample_dirichlet(&alpha, &mut rng).expect("alpha")).collect())
            .collect();
        let lambda = homotopy_lambda(updates, horizon);
        let out = learner_loss(
            &online,
            &target,
            &batch.items,
            &vec![1.0; batch.items.len()],
            &PrefBatch::PerItem(relabel),
            spec.gamma,
            LossKind::Homotopy { lambda },
            exec,
        );
        let mut grad = out.grad;
        if let Some(c) = cfg.grad_clip {
            clip_grad(&mut grad, c);
        }
        adam.step(&mut online.params, &grad);
        updates += 1;
        if !online.is_finite() {
            return Err(DeqlError::NonFinite(updates));
        }
        first_update_at.get_or_insert(buffer.len() as u64);
        target_update(&mut target, &online, mode, updates);
        loss_acc += out.loss;
        if updates.is_multiple_of(250) {
            telemetry.push(TelemetryRow {
                step: updates,
                env_steps: t,
                loss: loss_acc / 250.0,
                eps,
                beta: 0.0,
                samples_per_sec: t as f64 / start.elapsed().as_secs_f64().max(1e-9),
            });
            loss_acc = 0.0;
        }
    }
    Ok(TrainOutcome {
        online,
        target,
        telemetry,
        env_steps: cfg.env_steps,
        updates,
        first_update_at,
        config_hash: cfg.hash(),
        torn_snapshots: 0,
    })
}
