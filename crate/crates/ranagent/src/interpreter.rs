//! Supervisory interpreter: sliding-window monitor with hysteresis alerts, a
//! rule-based advisor and a guard-railed threshold adaptor.
//!
//! One `Interpreter` watches one OTM constraint. Each call to [`Interpreter::step`]
//! pushes one aggregated KPI sample, may open or close an alert episode, and
//! while alerted may move the constraint threshold by a bounded step. Every
//! threshold move produces a new OTM snapshot and an audit record.

use crate::otm::{
    apply_threshold_update, Aggregation, DomainBounds, Kpi, Operator, Otm, OtmError, ThresholdChange,
    ThresholdUpdate,
};
use serde::Serialize;
use serde_json::json;
use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Residual budgets below this are treated as spent.
const BUDGET_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterpreterError {
    #[error("empty window")]
    EmptyWindow,
    #[error("alert-on ratio {on} must exceed alert-off ratio {off}")]
    BadThresholds { on: f64, off: f64 },
    #[error("window size must be at least 1")]
    ZeroWindow,
    #[error("constraint {0} not found in the template")]
    UnknownConstraint(String),
    #[error(transparent)]
    Otm(#[from] OtmError),
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum GuardError {
    #[error("cooldown active")]
    CooldownActive,
    #[error("adaptation budget exhausted")]
    BudgetExhausted,
}

// ---------------------------------------------------------------------------
// Monitor

#[derive(Clone, Debug)]
pub struct Monitor {
    cap: usize,
    ring: VecDeque<f64>,
    threshold: f64,
    sense: f64,
    sum_y: f64,
    sum_short: f64,
    sum_slack: f64,
    n_viol: usize,
    // Monotone deques of (sample index, value) for the window min and max.
    mins: VecDeque<(u64, f64)>,
    maxs: VecDeque<(u64, f64)>,
    pushed: u64,
    alert: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowStats {
    pub violation_ratio: f64,
    pub violations: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub shortfall_avg: f64,
    pub slack_avg: f64,
    /// Index of the oldest and newest sample in the window.
    pub start: u64,
    pub end: u64,
    pub w: usize,
    pub count: usize,
    pub threshold: f64,
    pub sense: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum AlertEvent {
    AlertStart,
    AlertEnd,
}

impl Monitor {
    pub fn new(w: usize, threshold: f64, operator: Operator) -> Result<Self, InterpreterError> {
        if w == 0 {
            return Err(InterpreterError::ZeroWindow);
        }
        Ok(Monitor {
            cap: w,
            ring: VecDeque::with_capacity(w),
            threshold,
            sense: operator.sense(),
            sum_y: 0.0,
            sum_short: 0.0,
            sum_slack: 0.0,
            n_viol: 0,
            mins: VecDeque::new(),
            maxs: VecDeque::new(),
            pushed: 0,
            alert: false,
        })
    }

    fn margin(&self, y: f64) -> f64 {
        self.sense * (y - self.threshold)
    }

    fn add_terms(&mut self, y: f64, sign: f64) {
        let m = self.margin(y);
        self.sum_y += sign * y;
        if m < 0.0 {
            self.sum_short += sign * -m;
            if sign > 0.0 {
                self.n_viol += 1;
            } else {
                self.n_viol -= 1;
            }
        } else {
            self.sum_slack += sign * m;
        }
    }

    pub fn push_sample(&mut self, y: f64) {
        if self.ring.len() == self.cap {
            let old = self.ring.pop_front().expect("full ring");
            self.add_terms(old, -1.0);
        }
        self.ring.push_back(y);
        self.add_terms(y, 1.0);
        let idx = self.pushed;
        self.pushed += 1;
        let first = self.pushed - self.ring.len() as u64;
        while self.mins.back().is_some_and(|&(_, v)| v >= y) {
            self.mins.pop_back();
        }
        self.mins.push_back((idx, y));
        while self.mins.front().is_some_and(|&(i, _)| i < first) {
            self.mins.pop_front();
        }
        while self.maxs.back().is_some_and(|&(_, v)| v <= y) {
            self.maxs.pop_back();
        }
        self.maxs.push_back((idx, y));
        while self.maxs.front().is_some_and(|&(i, _)| i < first) {
            self.maxs.pop_front();
        }
    }

    /// Change the threshold and rebuild the margin sums (one pass over the ring).
    pub fn set_threshold(&mut self, b: f64) {
        self.threshold = b;
        self.rebuild();
    }

    fn rebuild(&mut self) {
        self.sum_y = 0.0;
        self.sum_short = 0.0;
        self.sum_slack = 0.0;
        self.n_viol = 0;
        let ring: Vec<f64> = self.ring.iter().copied().collect();
        for y in ring {
            self.add_terms(y, 1.0);
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn sense(&self) -> f64 {
        self.sense
    }

    pub fn alerted(&self) -> bool {
        self.alert
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = &f64> {
        self.ring.iter()
    }

    /// Ratios are taken over the window capacity W; the mean over the samples held.
    pub fn window_stats(&self) -> Result<WindowStats, InterpreterError> {
        if self.ring.is_empty() {
            return Err(InterpreterError::EmptyWindow);
        }
        let w = self.cap as f64;
        let n = self.ring.len();
        Ok(WindowStats {
            violation_ratio: self.n_viol as f64 / w,
            violations: self.n_viol,
            mean: self.sum_y / n as f64,
            min: self.mins.front().expect("non-empty").1,
            max: self.maxs.front().expect("non-empty").1,
            shortfall_avg: (self.sum_short / w).max(0.0),
            slack_avg: (self.sum_slack / w).max(0.0),
            start: self.pushed - n as u64,
            end: self.pushed - 1,
            w: self.cap,
            count: n,
            threshold: self.threshold,
            sense: self.sense,
        })
    }

    /// Window statistics recomputed from scratch; reference for the incremental path.
    pub fn batch_stats(&self) -> Result<WindowStats, InterpreterError> {
        if self.ring.is_empty() {
            return Err(InterpreterError::EmptyWindow);
        }
        let w = self.cap as f64;
        let margins: Vec<f64> = self.ring.iter().map(|&y| self.margin(y)).collect();
        let n = self.ring.len();
        let violations = margins.iter().filter(|m| **m < 0.0).count();
        Ok(WindowStats {
            violation_ratio: violations as f64 / w,
            violations,
            mean: self.ring.iter().sum::<f64>() / n as f64,
            min: self.ring.iter().cloned().fold(f64::INFINITY, f64::min),
            max: self.ring.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            shortfall_avg: margins.iter().map(|m| (-m).max(0.0)).sum::<f64>() / w,
            slack_avg: margins.iter().map(|m| m.max(0.0)).sum::<f64>() / w,
            start: self.pushed - n as u64,
            end: self.pushed - 1,
            w: self.cap,
            count: n,
            threshold: self.threshold,
            sense: self.sense,
        })
    }

    pub fn alert_transition(&mut self, rho_on: f64, rho_off: f64) -> Result<Option<AlertEvent>, InterpreterError> {
        if rho_on <= rho_off {
            return Err(InterpreterError::BadThresholds { on: rho_on, off: rho_off });
        }
        let vr = self.window_stats()?.violation_ratio;
        if !self.alert && vr > rho_on {
            self.alert = true;
            Ok(Some(AlertEvent::AlertStart))
        } else if self.alert && vr < rho_off {
            self.alert = false;
            Ok(Some(AlertEvent::AlertEnd))
        } else {
            Ok(None)
        }
    }
}

// ---------------------------------------------------------------------------
// Advisor

/// Round half up at `decimals` places.
pub fn round_half_up(x: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    let r = (x * f + 0.5).floor() / f;
    // Undo representation noise such as 6.92 * 100 = 691.9999999999999.
    let near = (x * f).round() / f;
    if (x - near).abs() < 1e-9 {
        near
    } else {
        r
    }
}

/// Violation ratio as reported in payloads and rationales: one decimal of
/// resolution written with two digits, so a 7-of-12 window reads 0.60.
pub fn report_ratio(vr: f64) -> f64 {
    round_half_up(vr, 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Increase,
    Decrease,
    NoChange,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuxPosture {
    /// Key used in payloads, e.g. `bler`.
    pub name: String,
    /// Label used in justifications, e.g. `BLER`.
    pub label: String,
    pub avg: f64,
    pub target_hint: f64,
}

impl AuxPosture {
    pub fn aggressive(&self) -> bool {
        self.avg > self.target_hint
    }

    pub fn posture(&self) -> &'static str {
        if self.aggressive() {
            "aggressive"
        } else {
            "conservative"
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RulePolicy {
    pub rho_on: f64,
    pub rho_off: f64,
}

impl Default for RulePolicy {
    fn default() -> Self {
        RulePolicy { rho_on: 0.55, rho_off: 0.45 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Advisory {
    pub action: Action,
    pub justification: String,
}

/// Direction that loosens the constraint: lower a lower bound, raise an upper bound.
fn relax_direction(sense: f64) -> Action {
    if sense > 0.0 {
        Action::Decrease
    } else {
        Action::Increase
    }
}

fn tighten_direction(sense: f64) -> Action {
    if sense > 0.0 {
        Action::Increase
    } else {
        Action::Decrease
    }
}

pub fn advise(stats: &WindowStats, aux: &AuxPosture, policy: &RulePolicy) -> Advisory {
    let vr = report_ratio(stats.violation_ratio);
    let mean = round_half_up(stats.mean, 2);
    let b = round_half_up(stats.threshold, 2);
    let below = stats.mean < stats.threshold;
    let rel = if below { '<' } else if stats.mean > stats.threshold { '>' } else { '=' };
    let violated = stats.violation_ratio > policy.rho_on;
    let slack = stats.violation_ratio < policy.rho_off && stats.slack_avg > stats.shortfall_avg;
    let facts = format!("VR={vr:.2}; avg={mean:.2}{rel}b={b:.2}; {} posture {}", aux.label, aux.posture());
    if violated && aux.aggressive() {
        Advisory {
            action: relax_direction(stats.sense),
            justification: format!("{facts}; relax b to stabilize HARQ."),
        }
    } else if slack && !aux.aggressive() {
        Advisory {
            action: tighten_direction(stats.sense),
            justification: format!("{facts}; tighten b toward the original target."),
        }
    } else {
        Advisory { action: Action::NoChange, justification: format!("{facts}; no rule applies.") }
    }
}

// ---------------------------------------------------------------------------
// Adaptor

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GuardrailConfig {
    pub deadband: f64,
    pub gain_up: f64,
    pub gain_down: f64,
    /// Per-update step; also the smoothing cap.
    pub step: f64,
    /// Budget of total absolute change per alert episode.
    pub budget: f64,
    pub b_min: f64,
    pub b_max: f64,
    pub cooldown: u32,
}

impl Default for GuardrailConfig {
    fn default() -> Self {
        GuardrailConfig {
            deadband: 0.05,
            gain_up: 1.0,
            gain_down: 1.0,
            step: 0.08,
            budget: 0.40,
            b_min: 5.00,
            b_max: 9.00,
            cooldown: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Guardrails {
    pub cfg: GuardrailConfig,
    pub budget_left: f64,
    pub cooldown_left: u32,
}

impl Guardrails {
    pub fn new(cfg: GuardrailConfig) -> Self {
        Guardrails { budget_left: cfg.budget, cooldown_left: 0, cfg }
    }

    /// Fresh budget and no cooldown, at the start of an alert episode.
    pub fn reset_episode(&mut self) {
        self.budget_left = self.cfg.budget;
        self.cooldown_left = 0;
    }

    pub fn tick(&mut self) {
        self.cooldown_left = self.cooldown_left.saturating_sub(1);
    }
}

/// Raw proportional step from the deadband/gain rule, before guardrails.
pub fn compute_step(action: Action, stats: &WindowStats, cfg: &GuardrailConfig, b: f64) -> f64 {
    match action {
        Action::Decrease => cfg.gain_down * ((b - stats.mean) - cfg.deadband).max(0.0),
        Action::Increase => cfg.gain_up * ((stats.mean - b) - cfg.deadband).max(0.0),
        Action::NoChange => 0.0,
    }
}

fn cap(x: f64, limit: f64) -> f64 {
    if limit < x && x - limit > 1e-12 {
        limit
    } else {
        x
    }
}

/// Apply caps, bounds, budget and cooldown. Returns the applied magnitude
/// (zero when the threshold already sits at the bound), the updated
/// guardrails and the new threshold.
pub fn apply_guardrails(
    request: f64,
    guard: &Guardrails,
    b: f64,
    direction: Action,
) -> Result<(f64, Guardrails, f64), GuardError> {
    assert!(direction != Action::NoChange, "guardrails need a direction");
    if guard.cooldown_left > 0 {
        return Err(GuardError::CooldownActive);
    }
    if guard.budget_left <= BUDGET_EPS {
        return Err(GuardError::BudgetExhausted);
    }
    let cfg = &guard.cfg;
    if request <= 0.0 {
        return Ok((0.0, guard.clone(), b));
    }
    let room = match direction {
        Action::Decrease => (b - cfg.b_min).max(0.0),
        _ => (cfg.b_max - b).max(0.0),
    };
    let mut d = request.max(cfg.step);
    d = cap(d, cfg.step);
    d = cap(d, guard.budget_left);
    let d_before_room = d;
    d = cap(d, room);
    let hit_bound = d < d_before_room;
    if d <= 0.0 {
        return Ok((0.0, guard.clone(), b));
    }
    let new_b = if hit_bound {
        if direction == Action::Decrease {
            cfg.b_min
        } else {
            cfg.b_max
        }
    } else if direction == Action::Decrease {
        b - d
    } else {
        b + d
    }
    .clamp(cfg.b_min, cfg.b_max);
    let mut g = guard.clone();
    g.budget_left -= d;
    if g.budget_left <= BUDGET_EPS {
        g.budget_left = 0.0;
    }
    g.cooldown_left = cfg.cooldown;
    Ok((d, g, new_b))
}

// ---------------------------------------------------------------------------
// Payloads and audit records

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditRecord {
    pub kpi: Kpi,
    pub aggregation: Aggregation,
    pub old_threshold: f64,
    pub new_threshold: f64,
    pub delta: f64,
    pub episode: String,
    pub rationale: String,
}

impl AuditRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Monitor-to-advisor summary in the telemetry payload layout.
pub fn telemetry_payload(stats: &WindowStats, kpi: Kpi, unit: &str, aux: &AuxPosture, bin_width: u64) -> serde_json::Value {
    let mut radio = serde_json::Map::new();
    radio.insert(
        aux.name.clone(),
        json!({"avg": round_half_up(aux.avg, 2), "target_hint": round_half_up(aux.target_hint, 2)}),
    );
    json!({
        "window": {
            "start": stats.start * bin_width,
            "end": (stats.end + 1) * bin_width - 1,
            "W": stats.w,
            "violation_ratio": report_ratio(stats.violation_ratio),
        },
        "constraint_metric": {
            "name": kpi.as_str(),
            "avg": round_half_up(stats.mean, 2),
            "min": round_half_up(stats.min, 2),
            "monitor_threshold": round_half_up(stats.threshold, 2),
            "unit": unit,
        },
        "radio_kpis": radio,
    })
}

/// Append-only line-delimited audit log.
#[derive(Debug, Default)]
pub struct AuditLog {
    lines: Vec<String>,
    file: Option<std::fs::File>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        AuditLog::default()
    }

    pub fn to_file(path: &Path) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AuditLog { lines: Vec::new(), file: Some(file) })
    }

    pub fn append(&mut self, rec: &AuditRecord) -> std::io::Result<()> {
        let line = rec.to_line();
        if let Some(f) = self.file.as_mut() {
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        self.lines.push(line);
        Ok(())
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }
}

/// ISO-8601 UTC string for seconds since the Unix epoch.
pub fn iso8601(secs: i64) -> String {
    let days = secs.div_euclid(86_400);
    let rem = secs.rem_euclid(86_400);
    // Civil-from-days (proleptic Gregorian).
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = yoe + era * 400 + i64::from(m <= 2);
    format!("{y:04}-{m:02}-{d:02}T{:02}:{:02}:{:02}Z", rem / 3600, rem % 3600 / 60, rem % 60)
}

// ---------------------------------------------------------------------------
// Loop

#[derive(Clone, Debug, PartialEq)]
pub struct InterpreterConfig {
    pub constraint_id: String,
    pub w: usize,
    pub rho_on: f64,
    pub rho_off: f64,
    pub guard: GuardrailConfig,
    pub bounds: DomainBounds,
    pub aux_name: String,
    pub aux_label: String,
    pub aux_target_hint: f64,
    /// Seconds per sample, used for payload windows and timestamps.
    pub bin_width: u64,
    /// Unix seconds of sample 0.
    pub epoch: i64,
    /// Recorded as the constraint's modifier when set.
    pub modified_by: Option<String>,
}

impl InterpreterConfig {
    pub fn new(constraint_id: &str) -> Self {
        InterpreterConfig {
            constraint_id: constraint_id.to_string(),
            w: 12,
            rho_on: 0.55,
            rho_off: 0.45,
            guard: GuardrailConfig::default(),
            bounds: DomainBounds::none(),
            aux_name: "bler".into(),
            aux_label: "BLER".into(),
            aux_target_hint: 0.10,
            bin_width: 10,
            epoch: 1_758_536_400, // 2025-09-22T10:20:00Z
            modified_by: Some("rule_advisor".into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Effect {
    AlertStart { episode: String, t: u64 },
    AlertEnd { episode: String, t: u64 },
    Advisory { payload: serde_json::Value, advisory: Advisory },
    Blocked(GuardError),
    Actuation(AuditRecord),
    Snapshot(Box<Otm>),
}

#[derive(Clone, Debug)]
pub struct Interpreter {
    pub cfg: InterpreterConfig,
    monitor: Monitor,
    aux: VecDeque<f64>,
    guard: Guardrails,
    otm: Otm,
    kpi: Kpi,
    aggregation: Aggregation,
    unit: String,
    episode: Option<String>,
    next_episode: u32,
    t: u64,
}

fn trailing_number(s: &str) -> Option<u32> {
    let digits: String = s.chars().rev().take_while(|c| c.is_ascii_digit()).collect();
    digits.chars().rev().collect::<String>().parse().ok()
}

impl Interpreter {
    pub fn new(cfg: InterpreterConfig, otm: Otm) -> Result<Self, InterpreterError> {
        if cfg.rho_on <= cfg.rho_off {
            return Err(InterpreterError::BadThresholds { on: cfg.rho_on, off: cfg.rho_off });
        }
        let c = otm
            .constraint(&cfg.constraint_id)
            .ok_or_else(|| InterpreterError::UnknownConstraint(cfg.constraint_id.clone()))?
            .clone();
        let monitor = Monitor::new(cfg.w, c.threshold, c.operator)?;
        let next_episode = otm
            .metadata
            .episode
            .as_ref()
            .and_then(|e| trailing_number(&e.id))
            .map_or(1, |n| n + 1);
        Ok(Interpreter {
            guard: Guardrails::new(cfg.guard.clone()),
            aux: VecDeque::with_capacity(cfg.w),
            monitor,
            kpi: c.kpi,
            aggregation: c.aggregation,
            unit: c.unit,
            otm,
            episode: None,
            next_episode,
            t: 0,
            cfg,
        })
    }

    pub fn otm(&self) -> &Otm {
        &self.otm
    }

    pub fn threshold(&self) -> f64 {
        self.monitor.threshold()
    }

    pub fn monitor(&self) -> &Monitor {
        &self.monitor
    }

    pub fn guardrails(&self) -> &Guardrails {
        &self.guard
    }

    pub fn alerted(&self) -> bool {
        self.monitor.alerted()
    }

    fn aux_posture(&self) -> AuxPosture {
        let avg = if self.aux.is_empty() { 0.0 } else { self.aux.iter().sum::<f64>() / self.aux.len() as f64 };
        AuxPosture {
            name: self.cfg.aux_name.clone(),
            label: self.cfg.aux_label.clone(),
            avg,
            target_hint: self.cfg.aux_target_hint,
        }
    }

    fn timestamp(&self) -> String {
        iso8601(self.cfg.epoch + (self.t as i64) * self.cfg.bin_width as i64)
    }

    /// One iteration: monitor, maybe alert, advise, maybe actuate, maybe close the episode.
    pub fn step(&mut self, y: f64, aux_sample: f64) -> Result<Vec<Effect>, InterpreterError> {
        let mut effects = Vec::new();
        self.guard.tick();
        self.monitor.push_sample(y);
        if self.aux.len() == self.cfg.w {
            self.aux.pop_front();
        }
        self.aux.push_back(aux_sample);
        let stats = self.monitor.window_stats()?;
        let was_alert = self.monitor.alerted();
        let event = if !was_alert {
            self.monitor.alert_transition(self.cfg.rho_on, self.cfg.rho_off)?
        } else {
            None
        };
        if event == Some(AlertEvent::AlertStart) {
            let id = format!("alert_{:03}", self.next_episode);
            self.next_episode += 1;
            self.guard.reset_episode();
            effects.push(Effect::AlertStart { episode: id.clone(), t: self.t });
            self.episode = Some(id);
        }
        if self.monitor.alerted() {
            let aux = self.aux_posture();
            let payload = telemetry_payload(&stats, self.kpi, &self.unit, &aux, self.cfg.bin_width);
            let advisory = advise(&stats, &aux, &RulePolicy { rho_on: self.cfg.rho_on, rho_off: self.cfg.rho_off });
            effects.push(Effect::Advisory { payload, advisory: advisory.clone() });
            if advisory.action != Action::NoChange {
                let b = self.monitor.threshold();
                let raw = compute_step(advisory.action, &stats, &self.guard.cfg, b);
                if raw > 0.0 {
                    match apply_guardrails(raw, &self.guard, b, advisory.action) {
                        Err(e) => effects.push(Effect::Blocked(e)),
                        Ok((d, g, new_b)) if d > 0.0 => {
                            let delta = if advisory.action == Action::Decrease { -d } else { d };
                            let episode = self.episode.clone().expect("alerted implies an episode");
                            let update = ThresholdUpdate {
                                constraint_id: self.cfg.constraint_id.clone(),
                                change: if new_b == b + delta {
                                    ThresholdChange::Delta(delta)
                                } else {
                                    ThresholdChange::Absolute(new_b)
                                },
                                rationale: advisory.justification.clone(),
                                episode: episode.clone(),
                                timestamp: Some(self.timestamp()),
                                modified_by: self.cfg.modified_by.clone(),
                            };
                            let next = apply_threshold_update(&self.otm, &update, &self.cfg.bounds)?;
                            let rec = next.metadata.adaptation_log.last().expect("record appended").clone();
                            self.guard = g;
                            self.monitor.set_threshold(rec.new_threshold);
                            self.otm = next;
                            effects.push(Effect::Actuation(AuditRecord {
                                kpi: self.kpi,
                                aggregation: self.aggregation,
                                old_threshold: rec.old_threshold,
                                new_threshold: rec.new_threshold,
                                delta: rec.delta,
                                episode,
                                rationale: rec.rationale,
                            }));
                            effects.push(Effect::Snapshot(Box::new(self.otm.clone())));
                        }
                        Ok(_) => {}
                    }
                }
            }
            if was_alert || event.is_some() {
                if let Some(AlertEvent::AlertEnd) = self.monitor.alert_transition(self.cfg.rho_on, self.cfg.rho_off)? {
                    let id = self.episode.take().expect("episode open");
                    effects.push(Effect::AlertEnd { episode: id, t: self.t });
                }
            }
        }
        self.t += 1;
        Ok(effects)
    }
}
