use proptest::prelude::*;
use ranagent::otm::*;
use serde_json::Value;

fn fixture(name: &str) -> String {
    let path = format!("{}/../../fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn listings_parse_and_validate() {
    for name in ["otm_multi_before.json", "otm_multi_after.json"] {
        let otm = parse_otm(&fixture(name)).unwrap();
        assert_eq!(otm.constraints.len(), 3);
        let report = validate_otm(&otm, &DomainBounds::default());
        assert!(report.is_valid(), "{name}: {report}");
    }
}

#[test]
fn round_trip_is_identity() {
    let otm = parse_otm(&fixture("otm_multi_after.json")).unwrap();
    let again = parse_otm(&otm.to_json()).unwrap();
    assert_eq!(otm, again);
    assert_eq!(otm.to_json(), again.to_json());
}

#[test]
fn single_update_reproduces_after_listing() {
    let before = parse_otm(&fixture("otm_multi_before.json")).unwrap();
    let after = parse_otm(&fixture("otm_multi_after.json")).unwrap();
    let update = ThresholdUpdate {
        constraint_id: "C3".into(),
        change: ThresholdChange::Absolute(6.92),
        rationale: "VR=0.60; avg=6.92<b=7.00; BLER posture aggressive; relax b to stabilize HARQ.".into(),
        episode: "alert_002".into(),
        timestamp: Some("2025-09-22T10:28:00Z".into()),
        modified_by: None,
    };
    let got = apply_threshold_update(&before, &update, &DomainBounds::default()).unwrap();
    assert_eq!(got.metadata.adaptation_log[0].delta, -0.08);
    assert_eq!(without_timestamps(&got), without_timestamps(&after));
    let by_delta = ThresholdUpdate { change: ThresholdChange::Delta(-0.08), ..update };
    let got2 = apply_threshold_update(&before, &by_delta, &DomainBounds::default()).unwrap();
    assert_eq!(without_timestamps(&got2), without_timestamps(&after));
}

#[test]
fn validation_rules_fire() {
    let mut otm = parse_otm(&fixture("otm_multi_before.json")).unwrap();
    otm.constraints[1].unit = String::new();
    otm.constraints[2].operator = Operator::Le;
    otm.constraints[0].threshold = 1.5;
    let r = validate_otm(&otm, &DomainBounds::default().with(Kpi::Bler, 0.0, 1.0));
    assert!(r.has(Rule::UnitAggregation));
    assert!(r.has(Rule::Directionality));
    assert!(r.has(Rule::Bounds));
}

fn required_paths(v: &Value) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for k in ["version", "objective", "constraints", "metadata"] {
        out.push(vec![k.to_string()]);
    }
    for k in ["service", "kpi", "aggregation", "unit", "maximize"] {
        out.push(vec!["objective".into(), k.into()]);
    }
    let n = v["constraints"].as_array().unwrap().len();
    for i in 0..n {
        for k in ["id", "service", "kpi", "operator", "threshold", "aggregation", "unit"] {
            out.push(vec!["constraints".into(), i.to_string(), k.into()]);
        }
    }
    out
}

fn delete(v: &mut Value, path: &[String]) {
    let (last, head) = path.split_last().unwrap();
    let mut cur = v;
    for p in head {
        cur = match cur {
            Value::Array(a) => &mut a[p.parse::<usize>().unwrap()],
            other => &mut other[p.as_str()],
        };
    }
    cur.as_object_mut().unwrap().remove(last);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn missing_required_field_is_reported_at_its_path(pick in 0usize..1000) {
        let doc: Value = serde_json::from_str(&fixture("otm_multi_before.json")).unwrap();
        let paths = required_paths(&doc);
        let path = &paths[pick % paths.len()];
        let mut broken = doc.clone();
        delete(&mut broken, path);
        match otm_from_value(&broken) {
            Err(OtmError::Schema { path: p, .. }) => {
                prop_assert_eq!(p, format!("/{}", path.join("/")));
            }
            other => prop_assert!(false, "expected schema error, got {:?}", other),
        }
    }

    #[test]
    fn reserialization_is_stable(th in 0.5f64..50.0, idx in 0usize..3) {
        let mut otm = parse_otm(&fixture("otm_multi_before.json")).unwrap();
        otm.constraints[idx].threshold = th;
        let again = parse_otm(&otm.to_json()).unwrap();
        prop_assert_eq!(&otm, &again);
    }
}

#[test]
fn sequential_updates_chain() {
    let mut otm = parse_otm(&fixture("otm_multi_before.json")).unwrap();
    for (i, ep) in ["alert_002", "alert_003"].iter().enumerate() {
        let u = ThresholdUpdate {
            constraint_id: "C3".into(),
            change: ThresholdChange::Delta(-0.08),
            rationale: format!("step {i}"),
            episode: ep.to_string(),
            timestamp: None,
            modified_by: None,
        };
        otm = apply_threshold_update(&otm, &u, &DomainBounds::default()).unwrap();
    }
    let log = &otm.metadata.adaptation_log;
    assert_eq!(log.len(), 2);
    assert_eq!((log[0].old_threshold, log[0].new_threshold), (7.0, 6.92));
    assert_eq!((log[1].old_threshold, log[1].new_threshold), (6.92, 6.84));
    for r in log {
        assert_eq!(r.old_threshold + r.delta, r.new_threshold);
    }
    assert_eq!(otm.constraint("C3").unwrap().threshold, 6.84);
}
