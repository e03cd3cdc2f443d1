//! Closed-loop wiring of interpreter, optimizer and controller over the toy
//! link-adaptation environment.
//!
//! One optimizer tick runs `episodes_per_tick` packets per service with the
//! controller acting greedily under that service's preference. The tick's
//! KPI summary feeds PAX-BO and, when enabled, the interpreter. Threshold
//! updates from the interpreter reach the optimizer through the OTM slot at
//! the next decode.

use crate::bo::{BoError, GpHyper, OptimizerConfig, Paxbo, PaxboConfig};
use crate::deql::{greedy_action, Mlp};
use crate::exec::Exec;
use crate::interpreter::{Effect, Interpreter, InterpreterConfig, InterpreterError};
use crate::morl_env::{Env, EnvError, LaConfig, LaOutcome, LinkAdaptation};
use crate::otm::{parse_otm, Aggregation, Kpi, Operator, Otm, OtmError, Service};
use crate::simplex::Preference;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("service {0} has no binding")]
    UnboundService(Service),
    #[error("KPI {0} cannot be measured on the link-adaptation environment")]
    UnsupportedKpi(Kpi),
    #[error("episodes per tick must be at least 1")]
    ZeroCadence,
    #[error("expected {want} preference columns, got {got}")]
    PreferenceCount { want: usize, got: usize },
    #[error(transparent)]
    Bo(#[from] BoError),
    #[error(transparent)]
    Interpreter(#[from] InterpreterError),
    #[error(transparent)]
    Otm(#[from] OtmError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// One OTM service mapped onto a channel population and its current preference.
#[derive(Clone, Debug, PartialEq)]
pub struct ServiceBinding {
    pub service: Service,
    pub pref: Preference,
    pub channel: LaConfig,
    /// Users per tick; per-user KPIs average over an equal share of the tick's packets.
    pub users: usize,
}

impl ServiceBinding {
    pub fn new(service: Service, channel: LaConfig) -> Self {
        ServiceBinding { service, pref: Preference::uniform(2), channel, users: 1 }
    }
}

/// Conversion from environment units to KPI units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KpiScale {
    /// Multiplier from delivered bits per transmission slot to the rate unit.
    pub rate_scale: f64,
    /// Attempts within which a packet counts as reliably delivered.
    pub latency_budget: usize,
}

impl Default for KpiScale {
    fn default() -> Self {
        KpiScale { rate_scale: 1.0, latency_budget: 2 }
    }
}

/// Per-packet value of `kpi`.
pub fn episode_kpi(o: &LaOutcome, kpi: Kpi, scale: &KpiScale, n_re_max: f64) -> Result<f64, WorkflowError> {
    let attempts = o.attempts.max(1) as f64;
    Ok(match kpi {
        Kpi::Throughput | Kpi::TptMinMbps => scale.rate_scale * o.delivered_bits / attempts / n_re_max,
        Kpi::Reliability => f64::from(u8::from(o.success && o.attempts <= scale.latency_budget)),
        Kpi::PacketLoss => f64::from(u8::from(!(o.success && o.attempts <= scale.latency_budget))),
        Kpi::Bler => o.failures as f64 / attempts,
        Kpi::SpectralEfficiency => {
            if o.re_used > 0.0 {
                o.delivered_bits / o.re_used
            } else {
                0.0
            }
        }
        other => return Err(WorkflowError::UnsupportedKpi(other)),
    })
}

/// Packet outcomes of one service during one tick.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ServiceWindow {
    pub service: Service,
    pub users: usize,
    pub n_re_max: f64,
    pub outcomes: Vec<LaOutcome>,
}

impl ServiceWindow {
    /// Per-user means of the packet KPI; packets are split into contiguous equal groups.
    pub fn user_samples(&self, kpi: Kpi, scale: &KpiScale) -> Result<Vec<f64>, WorkflowError> {
        let per: Vec<f64> = self.outcomes.iter().map(|o| episode_kpi(o, kpi, scale, self.n_re_max)).collect::<Result<_, _>>()?;
        let users = self.users.clamp(1, per.len().max(1));
        let chunk = per.len().div_ceil(users).max(1);
        Ok(per.chunks(chunk).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect())
    }

    pub fn kpi(&self, kpi: Kpi, aggregation: Aggregation, scale: &KpiScale) -> Result<f64, WorkflowError> {
        Ok(aggregation.apply(&self.user_samples(kpi, scale)?))
    }
}

/// KPI summary of one optimizer tick, in binding order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TelemetryWindow {
    pub tick: usize,
    pub services: Vec<ServiceWindow>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObjectiveTerm {
    pub kpi: Kpi,
    pub aggregation: Aggregation,
    pub maximize: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstraintTerm {
    pub id: String,
    /// Index into the bindings.
    pub binding: usize,
    pub kpi: Kpi,
    pub aggregation: Aggregation,
    pub operator: Operator,
    pub threshold: f64,
}

impl ConstraintTerm {
    /// Residual `<= 0` when satisfied.
    pub fn residual(&self, y: f64) -> f64 {
        self.operator.sense() * (self.threshold - y)
    }
}

/// Objective summed over every bound service, plus per-service constraints.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Problem {
    pub objective: ObjectiveTerm,
    pub constraints: Vec<ConstraintTerm>,
    pub services: Vec<Service>,
}

impl Problem {
    pub fn objective_value(&self, w: &TelemetryWindow, scale: &KpiScale) -> Result<f64, WorkflowError> {
        let mut total = 0.0;
        for s in &w.services {
            total += s.kpi(self.objective.kpi, self.objective.aggregation, scale)?;
        }
        Ok(if self.objective.maximize { total } else { -total })
    }

    pub fn constraint_value(&self, i: usize, w: &TelemetryWindow, scale: &KpiScale) -> Result<f64, WorkflowError> {
        let c = &self.constraints[i];
        w.services[c.binding].kpi(c.kpi, c.aggregation, scale)
    }

    pub fn residuals(&self, w: &TelemetryWindow, scale: &KpiScale) -> Result<Vec<f64>, WorkflowError> {
        (0..self.constraints.len()).map(|i| Ok(self.constraints[i].residual(self.constraint_value(i, w, scale)?))).collect()
    }
}

/// Objective and residual constraints for the bound services.
pub fn decode_otm_to_problem(otm: &Otm, bindings: &[ServiceBinding]) -> Result<Problem, WorkflowError> {
    let find = |s: Service| bindings.iter().position(|b| b.service == s).ok_or(WorkflowError::UnboundService(s));
    find(otm.objective.service)?;
    let constraints = otm
        .constraints
        .iter()
        .map(|c| {
            Ok(ConstraintTerm {
                id: c.id.clone(),
                binding: find(c.service)?,
                kpi: c.kpi,
                aggregation: c.aggregation,
                operator: c.operator,
                threshold: c.threshold,
            })
        })
        .collect::<Result<Vec<_>, WorkflowError>>()?;
    Ok(Problem {
        objective: ObjectiveTerm {
            kpi: otm.objective.kpi,
            aggregation: otm.objective.aggregation,
            maximize: otm.objective.maximize,
        },
        constraints,
        services: bindings.iter().map(|b| b.service).collect(),
    })
}

// ---------------------------------------------------------------------------
// Controller side

/// Something that picks link-adaptation actions for a preference.
pub trait Controller: Sync {
    fn act(&self, s: &[f64], w: &Preference) -> usize;
}

impl Controller for Mlp {
    fn act(&self, s: &[f64], w: &Preference) -> usize {
        greedy_action(self, s, w)
    }
}

/// Fixed MCS regardless of state.
#[derive(Clone, Copy, Debug)]
pub struct FixedMcs(pub usize);

impl Controller for FixedMcs {
    fn act(&self, _s: &[f64], _w: &Preference) -> usize {
        self.0
    }
}

/// Run `n` packets on `cfg` under preference `w`.
pub fn run_packets<C: Controller + ?Sized>(ctl: &C, cfg: &LaConfig, w: &Preference, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<LaOutcome>, WorkflowError> {
    let mut env = LinkAdaptation::new(cfg.clone());
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut s = env.reset(rng);
        loop {
            let tr = env.step(ctl.act(&s, w), rng)?;
            if tr.done {
                break;
            }
            s = tr.next_state;
        }
        out.push(env.outcome());
    }
    Ok(out)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One tick of packets for every binding. Each service draws from its own stream.
pub fn run_tick<C: Controller + ?Sized>(
    ctl: &C,
    bindings: &[ServiceBinding],
    episodes: usize,
    tick: usize,
    seed: u64,
    exec: Exec,
) -> Result<TelemetryWindow, WorkflowError> {
    let s_count = bindings.len() as u64;
    let services = exec
        .map_range(bindings.len(), |i| {
            let b = &bindings[i];
            let mut rng = stream_rng(seed, tick as u64 * s_count + i as u64);
            run_packets(ctl, &b.channel, &b.pref, episodes, &mut rng).map(|outcomes| ServiceWindow {
                service: b.service,
                users: b.users,
                n_re_max: b.channel.n_re_max,
                outcomes,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TelemetryWindow { tick, services })
}

// ---------------------------------------------------------------------------
// Loops

#[derive(Clone, Debug, PartialEq)]
pub struct WorkflowConfig {
    /// Optimizer cadence E, in packets per service.
    pub episodes_per_tick: usize,
    pub ticks: usize,
    pub scale: KpiScale,
    pub paxbo: PaxboConfig,
    /// Intent management loop; `None` keeps requirements rigid.
    pub interpreter: Option<InterpreterConfig>,
    pub seed: u64,
    pub exec: Exec,
}

impl WorkflowConfig {
    pub fn desk(seed: u64) -> Self {
        WorkflowConfig {
            episodes_per_tick: 200,
            ticks: 120,
            scale: KpiScale::default(),
            paxbo: PaxboConfig {
                hyper: GpHyper { noise_var: 0.05, ..GpHyper::default() },
                optimizer: OptimizerConfig { raw_samples: 256, restarts: 5, tol: 1e-4 },
                noise_aware: true,
                ..PaxboConfig::default()
            },
            interpreter: None,
            seed,
            exec: Exec::best(),
        }
    }
}

/// Holder of the live OTM and every snapshot it has gone through.
#[derive(Clone, Debug)]
pub struct OtmSlot {
    snapshots: Vec<Otm>,
}

impl OtmSlot {
    pub fn new(otm: Otm) -> Self {
        OtmSlot { snapshots: vec![otm] }
    }

    pub fn current(&self) -> &Otm {
        self.snapshots.last().expect("slot holds at least the initial document")
    }

    pub fn install(&mut self, otm: Otm) {
        self.snapshots.push(otm);
    }

    pub fn snapshots(&self) -> &[Otm] {
        &self.snapshots
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TickRecord {
    pub tick: usize,
    pub w: Vec<Vec<f64>>,
    pub objective: f64,
    /// Raw constraint KPI values, one per constraint.
    pub constraint_kpis: Vec<f64>,
    pub residuals: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub radius: f64,
    pub events: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct WorkflowTrace {
    pub ticks: Vec<TickRecord>,
    pub snapshots: Vec<Otm>,
    pub audit: Vec<String>,
    /// Best feasible preferences observed, per service.
    pub incumbent: Option<Vec<Vec<f64>>>,
    /// Best preferences under the final posterior means, per service.
    pub recommended: Option<Vec<Vec<f64>>>,
    pub bo_trace_csv: String,
}

impl WorkflowTrace {
    /// Mean primary objective over ticks `from..`.
    pub fn objective_mean(&self, from: usize) -> f64 {
        let xs: Vec<f64> = self.ticks.iter().skip(from).map(|t| t.objective).collect();
        xs.iter().sum::<f64>() / xs.len().max(1) as f64
    }

    /// Adaptation records in the final document.
    pub fn adaptations(&self) -> usize {
        self.snapshots.last().map_or(0, |o| o.metadata.adaptation_log.len())
    }

    /// tick, objective, per-service ω₁, constraint KPIs, thresholds, radius, events.
    pub fn csv(&self, services: &[Service], header_note: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(n) = header_note {
            let _ = writeln!(out, "# {n}");
        }
        out.push_str("tick,objective");
        for s in services {
            let _ = write!(out, ",w1_{s}");
        }
        let n_c = self.ticks.first().map_or(0, |t| t.residuals.len());
        for i in 0..n_c {
            let _ = write!(out, ",kpi_c{i},threshold_c{i}");
        }
        out.push_str(",radius,event\n");
        for t in &self.ticks {
            let _ = write!(out, "{},{}", t.tick, t.objective);
            for w in &t.w {
                let _ = write!(out, ",{}", w[0]);
            }
            for i in 0..n_c {
                let _ = write!(out, ",{},{}", t.constraint_kpis[i], t.thresholds[i]);
            }
            let _ = writeln!(out, ",{},{}", t.radius, t.events.join("+"));
        }
        out
    }
}

/// Feed one tick summary of the monitored constraint to the interpreter and
/// move any resulting snapshot into the slot. Returns the threshold change.
pub fn management_loop(interp: &mut Interpreter, slot: &mut OtmSlot, y: f64, aux: f64, log: &mut Vec<String>, events: &mut Vec<String>) -> Result<f64, WorkflowError> {
    let before = interp.threshold();
    for e in interp.step(y, aux)? {
        match e {
            Effect::AlertStart { episode, .. } => events.push(format!("alert_start:{episode}")),
            Effect::AlertEnd { episode, .. } => events.push(format!("alert_end:{episode}")),
            Effect::Actuation(rec) => {
                events.push(format!("threshold:{}", rec.new_threshold));
                log.push(rec.to_line());
            }
            Effect::Snapshot(o) => slot.install(*o),
            Effect::Advisory { .. } | Effect::Blocked(_) => {}
        }
    }
    Ok(interp.threshold() - before)
}

/// Run the intent fulfillment loop for `cfg.ticks` ticks, with the
/// management loop alongside when `cfg.interpreter` is set.
pub fn fulfillment_loop<C: Controller + ?Sized>(
    otm: &Otm,
    ctl: &C,
    bindings: &[ServiceBinding],
    cfg: &WorkflowConfig,
) -> Result<WorkflowTrace, WorkflowError> {
    if cfg.episodes_per_tick == 0 {
        return Err(WorkflowError::ZeroCadence);
    }
    let mut bindings = bindings.to_vec();
    let mut slot = OtmSlot::new(otm.clone());
    let mut problem = decode_otm_to_problem(slot.current(), &bindings)?;
    let mut bo = Paxbo::new(cfg.paxbo.clone(), 2, bindings.len(), problem.constraints.len(), cfg.seed);
    let mut interp = match &cfg.interpreter {
        Some(c) => Some(Interpreter::new(c.clone(), otm.clone())?),
        None => None,
    };
    let monitored = cfg
        .interpreter
        .as_ref()
        .and_then(|c| problem.constraints.iter().position(|k| k.id == c.constraint_id));
    let mut audit = Vec::new();
    let mut ticks = Vec::with_capacity(cfg.ticks);
    for tick in 0..cfg.ticks {
        let (u, w) = bo.proposal();
        if w.len() != bindings.len() {
            return Err(WorkflowError::PreferenceCount { want: bindings.len(), got: w.len() });
        }
        for (b, col) in bindings.iter_mut().zip(&w) {
            b.pref = Preference::new(col.clone()).expect("projected columns lie on the simplex");
        }
        let window = run_tick(ctl, &bindings, cfg.episodes_per_tick, tick, cfg.seed, cfg.exec)?;
        let objective = problem.objective_value(&window, &cfg.scale)?;
        let constraint_kpis: Vec<f64> =
            (0..problem.constraints.len()).map(|i| problem.constraint_value(i, &window, &cfg.scale)).collect::<Result<_, _>>()?;
        let residuals: Vec<f64> = problem.constraints.iter().zip(&constraint_kpis).map(|(c, y)| c.residual(*y)).collect();
        bo.observe(&u, objective, &residuals)?;
        let mut events: Vec<String> =
            bo.trace().last().map(|r| r.events.iter().map(|e| e.as_str().to_string()).collect()).unwrap_or_default();
        if let (Some(it), Some(i)) = (interp.as_mut(), monitored) {
            let c = &problem.constraints[i];
            let aux = window.services[c.binding].kpi(Kpi::Bler, Aggregation::Mean, &cfg.scale)?;
            let delta = management_loop(it, &mut slot, constraint_kpis[i], aux, &mut audit, &mut events)?;
            if delta != 0.0 {
                let sense = c.operator.sense();
                problem = decode_otm_to_problem(slot.current(), &bindings)?;
                bo.shift_constraint(i, sense * delta);
            }
        }
        ticks.push(TickRecord {
            tick,
            w,
            objective,
            constraint_kpis,
            residuals,
            thresholds: problem.constraints.iter().map(|c| c.threshold).collect(),
            radius: bo.radius,
            events,
        });
    }
    Ok(WorkflowTrace {
        ticks,
        snapshots: slot.snapshots().to_vec(),
        audit,
        incumbent: bo.incumbent().map(|(_, w)| w),
        recommended: bo.recommend()?.map(|(_, w)| w),
        bo_trace_csv: bo.trace_csv(None),
    })
}

// ---------------------------------------------------------------------------
// Scenarios

/// A ready-to-run workflow: intent document, bindings and loop settings.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub otm: Otm,
    pub bindings: Vec<ServiceBinding>,
    pub cfg: WorkflowConfig,
}

impl Scenario {
    pub fn run<C: Controller + ?Sized>(&self, ctl: &C) -> Result<WorkflowTrace, WorkflowError> {
        fulfillment_loop(&self.otm, ctl, &self.bindings, &self.cfg)
    }
}

/// Reliability threshold for the toy two-service intent. Fifty packets per
/// tick cannot resolve four nines.
pub const TOY_RELIABILITY: f64 = 0.98;

/// Throughput service plus a reliability-bound service on a weaker channel.
pub fn reliability_scenario(seed: u64) -> Scenario {
    let otm = parse_otm(&format!(
        r#"{{
  "version": "1.0",
  "objective": {{"service": "mbb", "kpi": "throughput", "aggregation": "mean", "unit": "bits/RE", "maximize": true}},
  "constraints": [
    {{"id": "R1", "service": "rel", "kpi": "reliability", "operator": "ge", "threshold": {TOY_RELIABILITY}, "aggregation": "mean", "unit": "", "scope": "per_user_window"}}
  ],
  "metadata": {{"timescale": "50_packets", "adaptation_log": []}}
}}"#
    ))
    .expect("built-in document parses");
    let mut cfg = WorkflowConfig::desk(seed);
    cfg.scale = KpiScale { rate_scale: 1.0, latency_budget: 2 };
    Scenario {
        name: "reliability".into(),
        otm,
        bindings: vec![ServiceBinding::new(Service::Mbb, LaConfig::default()), ServiceBinding::new(Service::Rel, LaConfig::default())],
        cfg,
    }
}

/// Minimum streaming rate the flexible scenario starts from.
pub const STREAMING_MIN_RATE: f64 = 7.0;
/// Best achievable expected streaming rate after calibration; below the
/// initial threshold but within one episode's relaxation budget.
pub const STREAMING_CEILING: f64 = 6.7;

/// Cell-edge channel used for the streaming users.
pub fn edge_channel() -> LaConfig {
    LaConfig { channel_mean: 1.2, ..LaConfig::default() }
}

/// Cell throughput objective with a minimum streaming rate that the
/// cell-edge group cannot meet.
pub fn qos_scenario(seed: u64, flexible: bool, rate_scale: f64) -> Scenario {
    let otm = parse_otm(&format!(
        r#"{{
  "version": "1.0",
  "objective": {{"service": "mbb", "kpi": "throughput", "aggregation": "mean", "unit": "Mbps", "maximize": true}},
  "constraints": [
    {{"id": "C3", "service": "streaming", "kpi": "tpt_min_mbps", "operator": "ge", "threshold": {STREAMING_MIN_RATE:.2}, "aggregation": "min", "unit": "Mbps", "scope": "per_user_window"}}
  ],
  "metadata": {{"timescale": "50_packets", "episode": "alert_000", "adaptation_log": []}}
}}"#
    ))
    .expect("built-in document parses");
    let mut cfg = WorkflowConfig::desk(seed);
    cfg.scale = KpiScale { rate_scale, latency_budget: 2 };
    if flexible {
        cfg.interpreter = Some(InterpreterConfig::new("C3"));
    }
    let mut streaming = ServiceBinding::new(Service::Streaming, edge_channel());
    streaming.users = 5;
    Scenario {
        name: if flexible { "qos-flexible".into() } else { "qos-rigid".into() },
        otm,
        bindings: vec![ServiceBinding::new(Service::Mbb, LaConfig::default()), streaming],
        cfg,
    }
}

/// Rate scale at which the controller's best expected streaming min-rate over
/// an ω₁ grid equals `ceiling`.
pub fn calibrate_rate_scale<C: Controller + ?Sized>(ctl: &C, ceiling: f64, seed: u64, exec: Exec) -> Result<f64, WorkflowError> {
    let mut b = ServiceBinding::new(Service::Streaming, edge_channel());
    b.users = 5;
    let unit = KpiScale { rate_scale: 1.0, latency_budget: 2 };
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let best = exec
        .map(&grid, |&w1| -> Result<f64, WorkflowError> {
            let mut bb = b.clone();
            bb.pref = Preference::pair(w1);
            let mut acc = 0.0;
            for tick in 0..20 {
                let w = run_tick(ctl, std::slice::from_ref(&bb), 50, tick, seed, Exec::Sequential)?;
                acc += w.services[0].kpi(Kpi::TptMinMbps, Aggregation::Min, &unit)?;
            }
            Ok(acc / 20.0)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(if best > 0.0 { ceiling / best } else { 1.0 })
}

// ---------------------------------------------------------------------------
// Preference sweep

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub w1: f64,
    /// Failed transmissions over all transmissions.
    pub failure_rate: f64,
    pub bits_per_packet: f64,
    pub bits_per_slot: f64,
    pub reliability: f64,
    pub re_per_packet: f64,
    /// Standard error of `failure_rate` (ratio estimator over packets).
    pub failure_rate_se: f64,
    pub bits_per_packet_se: f64,
}

/// Evaluate the controller at each ω₁ with common random numbers.
pub fn omega_sweep<C: Controller + ?Sized>(ctl: &C, cfg: &LaConfig, grid: &[f64], packets: usize, seed: u64, exec: Exec) -> Result<Vec<SweepPoint>, WorkflowError> {
    let scale = KpiScale::default();
    exec.map(grid, |&w1| {
        let mut rng = stream_rng(seed, 0);
        let out = run_packets(ctl, cfg, &Preference::pair(w1), packets, &mut rng)?;
        let n = out.len() as f64;
        let attempts: usize = out.iter().map(|o| o.attempts).sum();
        let failures: usize = out.iter().map(|o| o.failures).sum();
        let bits: f64 = out.iter().map(|o| o.delivered_bits).sum();
        let rel: f64 = out.iter().map(|o| episode_kpi(o, Kpi::Reliability, &scale, cfg.n_re_max).expect("supported")).sum();
        let fr = failures as f64 / attempts.max(1) as f64;
        let mean_attempts = attempts as f64 / n;
        let dn = (n - 1.0).max(1.0);
        let ratio_var = out.iter().map(|o| (o.failures as f64 - fr * o.attempts as f64).powi(2)).sum::<f64>() / (n * dn);
        let bits_var = out.iter().map(|o| (o.delivered_bits - bits / n).powi(2)).sum::<f64>() / (n * dn);
        Ok(SweepPoint {
            w1,
            failure_rate: fr,
            bits_per_packet: bits / n,
            bits_per_slot: bits / attempts.max(1) as f64,
            reliability: rel / n,
            re_per_packet: out.iter().map(|o| o.re_used).sum::<f64>() / n,
            failure_rate_se: ratio_var.sqrt() / mean_attempts.max(1e-300),
            bits_per_packet_se: bits_var.sqrt(),
        })
    })
    .into_iter()
    .collect()
}

/// True when `xs` never decreases by more than `tol`.
pub fn is_nondecreasing(xs: &[f64], tol: f64) -> bool {
    xs.windows(2).all(|p| p[1] >= p[0] - tol)
}

/// True when `xs` rises then falls, each leg allowed `tol` of backtracking.
pub fn is_unimodal(xs: &[f64], tol: f64) -> bool {
    let Some(peak) = xs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|p| p.0) else {
        return true;
    };
    is_nondecreasing(&xs[..=peak], tol) && xs[peak..].windows(2).all(|p| p[1] <= p[0] + tol)
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("w1,failure_rate,bits_per_packet,bits_per_slot,reliability,re_per_packet,failure_rate_se,bits_per_packet_se\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            p.w1, p.failure_rate, p.bits_per_packet, p.bits_per_slot, p.reliability, p.re_per_packet, p.failure_rate_se, p.bits_per_packet_se
        );
    }
    out
}
