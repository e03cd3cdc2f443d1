use ranagent::bo::PaxboConfig;
use ranagent::exec::Exec;
use ranagent::interpreter::{GuardrailConfig, InterpreterConfig};
use ranagent::morl_env::{LaConfig, LaOutcome};
use ranagent::otm::{parse_otm, validate_otm, Aggregation, DomainBounds, Kpi, Operator, Service};
use ranagent::simplex::Preference;
use ranagent::workflow::*;

/// MCS index grows with ω₁, so the stub is conservative at ω₁ = 0.
struct PrefMcs;

impl Controller for PrefMcs {
    fn act(&self, _s: &[f64], w: &Preference) -> usize {
        (w.as_slice()[0] * 7.0).round() as usize
    }
}

/// Channel on which the lowest MCS always succeeds at the first attempt.
fn still_channel() -> LaConfig {
    LaConfig { channel_sigma: 0.0, k: 1000.0, ..LaConfig::default() }
}

fn outcome(attempts: usize, failures: usize, bits: f64, success: bool) -> LaOutcome {
    LaOutcome { attempts, failures, delivered_bits: bits, re_used: 100.0 * attempts as f64, success }
}

fn fast_cfg(seed: u64) -> WorkflowConfig {
    let mut cfg = WorkflowConfig::desk(seed);
    cfg.episodes_per_tick = 10;
    cfg.paxbo.n_init = 4;
    cfg.paxbo.optimizer.raw_samples = 32;
    cfg.paxbo.optimizer.restarts = 2;
    cfg.exec = Exec::Sequential;
    cfg
}

#[test]
fn two_service_intent_decodes_to_sum_and_one_residual() {
    let sc = reliability_scenario(0);
    assert!(validate_otm(&sc.otm, &DomainBounds::default()).is_valid());
    let p = decode_otm_to_problem(&sc.otm, &sc.bindings).unwrap();
    assert_eq!(p.services, vec![Service::Mbb, Service::Rel]);
    assert_eq!(p.objective.kpi, Kpi::Throughput);
    assert_eq!(p.constraints.len(), 1);
    let c = &p.constraints[0];
    assert_eq!((c.binding, c.kpi, c.operator), (1, Kpi::Reliability, Operator::Ge));
    assert!((c.residual(TOY_RELIABILITY + 0.01) + 0.01).abs() < 1e-12);
    assert!((c.residual(TOY_RELIABILITY - 0.05) - 0.05).abs() < 1e-12);
    // Objective adds both services' throughput.
    let mk = |service, bits: f64| ServiceWindow { service, users: 1, n_re_max: 100.0, outcomes: vec![outcome(1, 0, bits, true)] };
    let w = TelemetryWindow { tick: 0, services: vec![mk(Service::Mbb, 300.0), mk(Service::Rel, 100.0)] };
    assert!((p.objective_value(&w, &KpiScale::default()).unwrap() - 4.0).abs() < 1e-12);
}

#[test]
fn objective_only_and_unbound_service() {
    let otm = parse_otm(
        r#"{"version":"1.0","objective":{"service":"mbb","kpi":"throughput","aggregation":"mean","unit":"Mbps","maximize":true},"constraints":[],"metadata":{"adaptation_log":[]}}"#,
    )
    .unwrap();
    let b = vec![ServiceBinding::new(Service::Mbb, LaConfig::default())];
    assert!(decode_otm_to_problem(&otm, &b).unwrap().constraints.is_empty());
    let sc = reliability_scenario(0);
    let err = decode_otm_to_problem(&sc.otm, &b).unwrap_err();
    assert!(matches!(err, WorkflowError::UnboundService(Service::Rel)));
}

#[test]
fn episode_kpis_by_hand() {
    let s = KpiScale { rate_scale: 2.0, latency_budget: 2 };
    let o = outcome(3, 2, 150.0, true);
    assert!((episode_kpi(&o, Kpi::Throughput, &s, 100.0).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(episode_kpi(&o, Kpi::Reliability, &s, 100.0).unwrap(), 0.0);
    assert_eq!(episode_kpi(&o, Kpi::PacketLoss, &s, 100.0).unwrap(), 1.0);
    assert!((episode_kpi(&o, Kpi::Bler, &s, 100.0).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((episode_kpi(&o, Kpi::SpectralEfficiency, &s, 100.0).unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(episode_kpi(&outcome(2, 1, 10.0, true), Kpi::Reliability, &s, 100.0).unwrap(), 1.0);
    assert!(matches!(episode_kpi(&o, Kpi::LatencyMs, &s, 100.0), Err(WorkflowError::UnsupportedKpi(Kpi::LatencyMs))));
}

#[test]
fn per_user_min_aggregation() {
    let w = ServiceWindow {
        service: Service::Streaming,
        users: 2,
        n_re_max: 100.0,
        outcomes: vec![outcome(1, 0, 400.0, true), outcome(1, 0, 200.0, true), outcome(2, 1, 100.0, true), outcome(1, 0, 100.0, true)],
    };
    let s = KpiScale::default();
    assert_eq!(w.user_samples(Kpi::TptMinMbps, &s).unwrap(), vec![3.0, 0.75]);
    assert_eq!(w.kpi(Kpi::TptMinMbps, Aggregation::Min, &s).unwrap(), 0.75);
    assert_eq!(w.kpi(Kpi::TptMinMbps, Aggregation::Mean, &s).unwrap(), 1.875);
}

#[test]
fn constant_kpi_stub_converges() {
    let sc = reliability_scenario(3);
    let bindings: Vec<ServiceBinding> = sc.bindings.iter().map(|b| ServiceBinding { channel: still_channel(), ..b.clone() }).collect();
    let mut cfg = fast_cfg(3);
    cfg.ticks = 60;
    cfg.paxbo.reset_window = u32::MAX;
    let t = fulfillment_loop(&sc.otm, &FixedMcs(0), &bindings, &cfg).unwrap();
    let first = t.ticks[0].objective;
    assert!(t.ticks.iter().all(|r| r.objective == first && r.constraint_kpis == vec![1.0]));
    let floor = t.ticks.iter().position(|r| r.radius <= cfg.paxbo.l_min + 1e-12).expect("reaches the floor");
    assert!(t.ticks[floor..].iter().all(|r| r.radius <= cfg.paxbo.l_min + 1e-12));
    assert!(!t.ticks.iter().any(|r| r.events.iter().any(|e| e == "reset")));
    // Every later proposal stays in the floor box around a fixed center.
    let tail: Vec<&Vec<Vec<f64>>> = t.ticks[floor + 1..].iter().map(|r| &r.w).collect();
    for a in &tail {
        for b in &tail {
            for (ca, cb) in a.iter().zip(b.iter()) {
                assert!((ca[0] - cb[0]).abs() <= 2.0 * cfg.paxbo.l_min + 1e-9);
            }
        }
    }
}

#[test]
fn stalled_stub_resets_only_after_the_window() {
    let sc = reliability_scenario(3);
    let bindings: Vec<ServiceBinding> = sc.bindings.iter().map(|b| ServiceBinding { channel: still_channel(), ..b.clone() }).collect();
    let mut cfg = fast_cfg(3);
    cfg.ticks = 60;
    let t = fulfillment_loop(&sc.otm, &FixedMcs(0), &bindings, &cfg).unwrap();
    let resets: Vec<usize> = t.ticks.iter().filter(|r| r.events.iter().any(|e| e == "reset")).map(|r| r.tick).collect();
    assert!(!resets.is_empty());
    let mut prev = 0;
    for r in resets {
        assert!(t.ticks[r - 1].radius <= cfg.paxbo.l_min + 1e-12);
        let shrinks = t.ticks[prev + 1..=r].iter().filter(|x| x.events.iter().any(|e| e == "shrink")).count();
        assert!(shrinks >= cfg.paxbo.reset_window as usize);
        assert_eq!(t.ticks[r].radius, cfg.paxbo.l0);
        prev = r;
    }
}

/// MCS 6 fails once on `still_channel` and then decodes, so BLER is 0.5.
fn scale_for(rate: f64) -> f64 {
    rate / (LaConfig::default().se_levels[6] / 2.0)
}

fn qos_stub(rate_scale: f64, guard: Option<GuardrailConfig>, ticks: usize) -> WorkflowTrace {
    let mut sc = qos_scenario(5, true, rate_scale);
    for b in &mut sc.bindings {
        b.channel = still_channel();
    }
    let mut cfg = fast_cfg(5);
    cfg.ticks = ticks;
    cfg.scale = sc.cfg.scale;
    let mut ic = InterpreterConfig::new("C3");
    if let Some(g) = guard {
        ic.guard = g;
    }
    cfg.interpreter = Some(ic);
    fulfillment_loop(&sc.otm, &FixedMcs(6), &sc.bindings, &cfg).unwrap()
}

#[test]
fn infeasible_regime_relaxes_within_guardrails() {
    let t = qos_stub(scale_for(6.0), None, 40);
    assert!((t.ticks[0].constraint_kpis[0] - 6.0).abs() < 1e-9);
    let th: Vec<f64> = t.ticks.iter().map(|r| r.thresholds[0]).collect();
    assert!(th.windows(2).all(|p| p[1] <= p[0] && p[0] - p[1] <= 0.08 + 1e-12));
    assert!((th[0] - th[th.len() - 1]) <= 0.40 + 1e-9);
    let changes: Vec<usize> = th.windows(2).enumerate().filter(|(_, p)| p[1] != p[0]).map(|(i, _)| i + 1).collect();
    assert!(!changes.is_empty());
    assert!(changes.windows(2).all(|p| p[1] - p[0] >= 2));
    assert_eq!(t.snapshots.len(), 1 + t.adaptations());
    assert_eq!(t.audit.len(), t.adaptations());
    assert_eq!(t.snapshots.last().unwrap().constraints[0].threshold, th[th.len() - 1]);
}

#[test]
fn floor_is_never_crossed() {
    let guard = GuardrailConfig { budget: 100.0, ..GuardrailConfig::default() };
    let t = qos_stub(scale_for(4.0), Some(guard), 80);
    let th: Vec<f64> = t.ticks.iter().map(|r| r.thresholds[0]).collect();
    assert!(th.iter().all(|b| *b >= 5.0));
    assert_eq!(*th.last().unwrap(), 5.0);
    assert_eq!(t.snapshots.len(), 1 + t.adaptations());
}

#[test]
fn feasible_regime_never_adapts() {
    let t = qos_stub(scale_for(10.0), None, 30);
    assert!(t.ticks.iter().all(|r| r.thresholds[0] == 7.0));
    assert_eq!(t.adaptations(), 0);
    assert_eq!(t.snapshots.len(), 1);
    assert!(t.incumbent.is_some());
}

#[test]
fn cadence_must_be_positive() {
    let sc = reliability_scenario(0);
    let mut cfg = fast_cfg(0);
    cfg.episodes_per_tick = 0;
    assert!(matches!(fulfillment_loop(&sc.otm, &PrefMcs, &sc.bindings, &cfg), Err(WorkflowError::ZeroCadence)));
}

#[test]
fn runs_are_deterministic_across_exec_modes() {
    let sc = reliability_scenario(11);
    let mut cfg = fast_cfg(11);
    cfg.ticks = 12;
    let a = fulfillment_loop(&sc.otm, &PrefMcs, &sc.bindings, &cfg).unwrap();
    cfg.exec = Exec::Parallel;
    let b = fulfillment_loop(&sc.otm, &PrefMcs, &sc.bindings, &cfg).unwrap();
    let services = [Service::Mbb, Service::Rel];
    assert_eq!(a.csv(&services, None), b.csv(&services, None));
    assert_eq!(a.bo_trace_csv, b.bo_trace_csv);
    let csv = a.csv(&services, Some("run"));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# run"));
    assert_eq!(lines.next(), Some("tick,objective,w1_mbb,w1_rel,kpi_c0,threshold_c0,radius,event"));
    assert_eq!(lines.count(), 12);
}

#[test]
fn stub_sweep_is_monotone() {
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let pts = omega_sweep(&PrefMcs, &LaConfig::default(), &grid, 2000, 4, Exec::Sequential).unwrap();
    let fail: Vec<f64> = pts.iter().map(|p| p.failure_rate).collect();
    let bits: Vec<f64> = pts.iter().map(|p| p.bits_per_packet).collect();
    assert!(is_nondecreasing(&fail, 0.0), "{fail:?}");
    assert!(is_unimodal(&bits, 0.0), "{bits:?}");
    assert!(sweep_csv(&pts).starts_with("w1,failure_rate,"));
}

#[test]
fn shape_checks() {
    assert!(is_nondecreasing(&[0.0, 0.0, 1.0], 0.0));
    assert!(!is_nondecreasing(&[0.0, 1.0, 0.5], 0.1));
    assert!(is_nondecreasing(&[0.0, 1.0, 0.95], 0.1));
    assert!(is_unimodal(&[1.0, 2.0, 3.0, 2.0, 1.0], 0.0));
    assert!(is_unimodal(&[1.0, 2.0, 3.0], 0.0));
    assert!(!is_unimodal(&[1.0, 3.0, 1.0, 3.0, 1.0], 0.0));
    assert!(is_unimodal(&[], 0.0));
}

#[test]
fn threshold_shift_moves_stored_residuals() {
    use ranagent::bo::Paxbo;
    let mut bo = Paxbo::new(PaxboConfig { n_init: 3, ..PaxboConfig::default() }, 2, 1, 1, 0);
    for (o, c) in [(1.0, 0.1), (2.0, 0.3), (0.5, -0.2)] {
        let (u, _) = bo.proposal();
        bo.observe(&u, o, &[c]).unwrap();
    }
    assert_eq!(bo.f_best(), Some(0.5));
    bo.shift_constraint(0, -0.25);
    assert_eq!(bo.f_best(), Some(1.0));
    let (u, _) = bo.incumbent().unwrap();
    assert_eq!(u, bo.data()[0].u);
}
