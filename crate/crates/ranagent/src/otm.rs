//! Optimization Template Model: the versioned JSON contract between the
//! interpreter and the optimizer.
//!
//! Parsing is strict: unknown fields and unknown vocabulary are schema errors
//! reported with a JSON-pointer path. Serialization uses a fixed field order
//! (objective, constraints, metadata, version) so that logs diff cleanly.
//! Provenance fields are accepted under both spellings
//! (`origin`/`created_by`, `adapted_by`/`modified_by`) and written as
//! `created_by`/`modified_by`.

use serde::ser::{Serialize, SerializeMap, Serializer};
use serde_json::{Map, Value};
use std::collections::{BTreeMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OtmError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("schema error at {path}: {msg}")]
    Schema { path: String, msg: String },
    #[error("unknown constraint {0}")]
    UnknownConstraint(String),
    #[error("threshold {value} for {id} outside [{lo}, {hi}]")]
    OutOfBounds { id: String, value: f64, lo: f64, hi: f64 },
}

fn schema(path: &str, msg: impl Into<String>) -> OtmError {
    OtmError::Schema { path: if path.is_empty() { "/".into() } else { path.into() }, msg: msg.into() }
}

macro_rules! vocab {
    ($(#[$m:meta])* $name:ident { $($var:ident => $s:literal),* $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name { $($var),* }
        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),*];
            pub fn as_str(self) -> &'static str {
                match self { $($name::$var => $s),* }
            }
            pub fn parse(s: &str) -> Option<Self> {
                match s { $($s => Some($name::$var),)* _ => None }
            }
        }
        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }
        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

vocab!(Service {
    Mbb => "mbb", Urllc => "urllc", Rel => "rel", Gaming => "gaming", Streaming => "streaming",
    Slice => "slice", Mmtc => "mmtc", Web => "web", Voice => "voice",
});

vocab!(
    /// Canonical KPI keys. Directionality is fixed per key.
    Kpi {
        Throughput => "throughput", Reliability => "reliability", Latency => "latency",
        Bler => "bler", Jitter => "jitter", LatencyMs => "latency_ms", TptMinMbps => "tpt_min_mbps",
        SpectralEfficiency => "spectral_efficiency", PacketLoss => "packet_loss",
    }
);

vocab!(Scope {
    PerUser => "per_user", PerCell => "per_cell", PerSlice => "per_slice",
    PerUserGroup => "per_user_group", PerCellGroup => "per_cell_group",
    PerUserWindow => "per_user_window", PerCellWindow => "per_cell_window",
});

vocab!(Aggregation { Mean => "mean", Min => "min", Max => "max", P95 => "p95", Sum => "sum" });

vocab!(Operator { Lt => "lt", Le => "le", Ge => "ge", Gt => "gt" });

impl Kpi {
    pub fn higher_is_better(self) -> bool {
        matches!(self, Kpi::Throughput | Kpi::Reliability | Kpi::TptMinMbps | Kpi::SpectralEfficiency)
    }

    pub fn dimensionless(self) -> bool {
        matches!(self, Kpi::Reliability | Kpi::Bler | Kpi::PacketLoss | Kpi::SpectralEfficiency)
    }
}

impl Operator {
    pub fn is_lower_bound(self) -> bool {
        matches!(self, Operator::Ge | Operator::Gt)
    }

    /// Margin sign: +1 for lower bounds, -1 for upper bounds.
    pub fn sense(self) -> f64 {
        if self.is_lower_bound() {
            1.0
        } else {
            -1.0
        }
    }
}

impl Aggregation {
    pub fn apply(self, xs: &[f64]) -> f64 {
        assert!(!xs.is_empty(), "aggregation of an empty sample");
        match self {
            Aggregation::Mean => xs.iter().sum::<f64>() / xs.len() as f64,
            Aggregation::Sum => xs.iter().sum(),
            Aggregation::Min => xs.iter().cloned().fold(f64::INFINITY, f64::min),
            Aggregation::Max => xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            Aggregation::P95 => {
                let mut v = xs.to_vec();
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                // Nearest-rank percentile.
                let rank = (0.95 * v.len() as f64).ceil() as usize;
                v[rank.clamp(1, v.len()) - 1]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveSpec {
    pub service: Service,
    pub kpi: Kpi,
    pub scope: Option<Scope>,
    pub aggregation: Aggregation,
    pub unit: String,
    pub maximize: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSpec {
    pub id: String,
    pub service: Service,
    pub kpi: Kpi,
    pub scope: Option<Scope>,
    pub aggregation: Aggregation,
    pub unit: String,
    pub operator: Operator,
    pub threshold: f64,
    pub modified: Option<bool>,
    pub created_by: Option<String>,
    pub modified_by: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct OtmInfo {
    pub id: Option<String>,
    pub created_by: Option<String>,
    pub timestamp: Option<String>,
    pub timescale: Option<String>,
}

impl OtmInfo {
    fn is_empty(&self) -> bool {
        self.id.is_none() && self.created_by.is_none() && self.timestamp.is_none() && self.timescale.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeInfo {
    pub id: String,
    pub episode_type: Option<String>,
    pub modified_by: Option<String>,
    pub timestamp: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptationRecord {
    pub constraint_id: String,
    pub old_threshold: f64,
    pub new_threshold: f64,
    pub delta: f64,
    pub rationale: String,
    pub episode: Option<String>,
    pub timestamp: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct OtmMetadata {
    pub otm: OtmInfo,
    pub episode: Option<EpisodeInfo>,
    pub adaptation_log: Vec<AdaptationRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Otm {
    pub version: String,
    pub objective: ObjectiveSpec,
    pub constraints: Vec<ConstraintSpec>,
    pub metadata: OtmMetadata,
}

impl Otm {
    pub fn constraint(&self, id: &str) -> Option<&ConstraintSpec> {
        self.constraints.iter().find(|c| c.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("otm serializes")
    }

    pub fn to_json_compact(&self) -> String {
        serde_json::to_string(self).expect("otm serializes")
    }

    /// Services mentioned anywhere in the document, objective first.
    pub fn services(&self) -> Vec<Service> {
        let mut out = vec![self.objective.service];
        for c in &self.constraints {
            if !out.contains(&c.service) {
                out.push(c.service);
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Serialization

/// Writes map entries in call order, skipping absent optionals.
struct Ordered<M: SerializeMap>(M);

impl<M: SerializeMap> Ordered<M> {
    fn put<T: Serialize + ?Sized>(&mut self, k: &str, v: &T) -> Result<(), M::Error> {
        self.0.serialize_entry(k, v)
    }
    fn opt<T: Serialize>(&mut self, k: &str, v: &Option<T>) -> Result<(), M::Error> {
        match v {
            Some(v) => self.0.serialize_entry(k, v),
            None => Ok(()),
        }
    }
    fn end(self) -> Result<M::Ok, M::Error> {
        self.0.end()
    }
}

fn ordered<S: Serializer>(s: S) -> Result<Ordered<S::SerializeMap>, S::Error> {
    Ok(Ordered(s.serialize_map(None)?))
}

impl Serialize for ObjectiveSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut e = ordered(s)?;
        e.put("service", &self.service)?;
        e.put("kpi", &self.kpi)?;
        e.opt("scope", &self.scope)?;
        e.put("aggregation", &self.aggregation)?;
        e.put("unit", &self.unit)?;
        e.put("maximize", &self.maximize)?;
        e.end()
    }
}

impl Serialize for ConstraintSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut e = ordered(s)?;
        e.put("id", &self.id)?;
        e.put("service", &self.service)?;
        e.put("kpi", &self.kpi)?;
        e.opt("scope", &self.scope)?;
        e.put("aggregation", &self.aggregation)?;
        e.put("unit", &self.unit)?;
        e.put("operator", &self.operator)?;
        e.put("threshold", &self.threshold)?;
        e.opt("modified", &self.modified)?;
        e.opt("created_by", &self.created_by)?;
        e.opt("modified_by", &self.modified_by)?;
        e.end()
    }
}

impl Serialize for AdaptationRecord {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut e = ordered(s)?;
        e.put("id", &self.constraint_id)?;
        e.put("old_threshold", &self.old_threshold)?;
        e.put("new_threshold", &self.new_threshold)?;
        e.put("delta", &self.delta)?;
        e.put("rationale", &self.rationale)?;
        e.opt("episode", &self.episode)?;
        e.opt("timestamp", &self.timestamp)?;
        e.end()
    }
}

impl Serialize for OtmInfo {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut e = ordered(s)?;
        e.opt("id", &self.id)?;
        e.opt("created_by", &self.created_by)?;
        e.opt("timestamp", &self.timestamp)?;
        e.opt("timescale", &self.timescale)?;
        e.end()
    }
}

impl Serialize for EpisodeInfo {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut e = ordered(s)?;
        e.put("id", &self.id)?;
        e.opt("episode_type", &self.episode_type)?;
        e.opt("modified_by", &self.modified_by)?;
        e.opt("timestamp", &self.timestamp)?;
        e.end()
    }
}

impl Serialize for OtmMetadata {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut e = ordered(s)?;
        if !self.otm.is_empty() {
            e.put("otm", &self.otm)?;
        }
        e.opt("episode", &self.episode)?;
        e.put("adaptation_log", &self.adaptation_log)?;
        e.end()
    }
}

impl Serialize for Otm {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut e = ordered(s)?;
        e.put("objective", &self.objective)?;
        e.put("constraints", &self.constraints)?;
        e.put("metadata", &self.metadata)?;
        e.put("version", &self.version)?;
        e.end()
    }
}

// ---------------------------------------------------------------------------
// Parsing

struct Obj<'a> {
    path: String,
    map: &'a Map<String, Value>,
    seen: HashSet<&'static str>,
}

impl<'a> Obj<'a> {
    fn new(v: &'a Value, path: &str) -> Result<Self, OtmError> {
        match v {
            Value::Object(map) => Ok(Obj { path: path.to_string(), map, seen: HashSet::new() }),
            _ => Err(schema(path, "expected an object")),
        }
    }

    fn child(&self, key: &str) -> String {
        format!("{}/{}", self.path, key)
    }

    /// First present key among `names` (aliases); all aliases are marked as known.
    fn get(&mut self, names: &[&'static str]) -> Result<Option<(&'static str, &'a Value)>, OtmError> {
        let mut found = None;
        for &n in names {
            self.seen.insert(n);
            if let Some(v) = self.map.get(n) {
                if found.is_some() {
                    return Err(schema(&self.child(n), "field given under two spellings"));
                }
                found = Some((n, v));
            }
        }
        Ok(found)
    }

    fn req(&mut self, names: &[&'static str]) -> Result<(String, &'a Value), OtmError> {
        match self.get(names)? {
            Some((n, v)) => Ok((self.child(n), v)),
            None => Err(schema(&self.child(names[0]), "missing required field")),
        }
    }

    fn req_str(&mut self, names: &[&'static str]) -> Result<(String, String), OtmError> {
        let (p, v) = self.req(names)?;
        match v {
            Value::String(s) => Ok((p, s.clone())),
            _ => Err(schema(&p, "expected a string")),
        }
    }

    fn opt_str(&mut self, names: &[&'static str]) -> Result<Option<String>, OtmError> {
        match self.get(names)? {
            None => Ok(None),
            Some((_, Value::String(s))) => Ok(Some(s.clone())),
            Some((n, _)) => Err(schema(&self.child(n), "expected a string")),
        }
    }

    fn req_num(&mut self, names: &[&'static str]) -> Result<f64, OtmError> {
        let (p, v) = self.req(names)?;
        v.as_f64().ok_or_else(|| schema(&p, "expected a number"))
    }

    fn req_bool(&mut self, names: &[&'static str]) -> Result<bool, OtmError> {
        let (p, v) = self.req(names)?;
        v.as_bool().ok_or_else(|| schema(&p, "expected a boolean"))
    }

    fn opt_bool(&mut self, names: &[&'static str]) -> Result<Option<bool>, OtmError> {
        match self.get(names)? {
            None => Ok(None),
            Some((n, v)) => v.as_bool().map(Some).ok_or_else(|| schema(&self.child(n), "expected a boolean")),
        }
    }

    fn req_enum<T>(&mut self, names: &[&'static str], parse: fn(&str) -> Option<T>) -> Result<T, OtmError> {
        let (p, s) = self.req_str(names)?;
        parse(&s).ok_or_else(|| schema(&p, format!("unknown value {s:?}")))
    }

    fn opt_enum<T>(&mut self, names: &[&'static str], parse: fn(&str) -> Option<T>) -> Result<Option<T>, OtmError> {
        match self.get(names)? {
            None => Ok(None),
            Some((n, Value::String(s))) => parse(s)
                .map(Some)
                .ok_or_else(|| schema(&self.child(n), format!("unknown value {s:?}"))),
            Some((n, _)) => Err(schema(&self.child(n), "expected a string")),
        }
    }

    fn finish(self) -> Result<(), OtmError> {
        let mut extra: Vec<&String> = self.map.keys().filter(|k| !self.seen.contains(k.as_str())).collect();
        extra.sort();
        match extra.first() {
            Some(k) => Err(schema(&self.child(k), "unknown field")),
            None => Ok(()),
        }
    }
}

fn parse_objective(v: &Value, path: &str) -> Result<ObjectiveSpec, OtmError> {
    let mut o = Obj::new(v, path)?;
    let out = ObjectiveSpec {
        service: o.req_enum(&["service"], Service::parse)?,
        kpi: o.req_enum(&["kpi"], Kpi::parse)?,
        scope: o.opt_enum(&["scope"], Scope::parse)?,
        aggregation: o.req_enum(&["aggregation"], Aggregation::parse)?,
        unit: o.req_str(&["unit"])?.1,
        maximize: o.req_bool(&["maximize"])?,
    };
    o.finish()?;
    Ok(out)
}

fn parse_constraint(v: &Value, path: &str) -> Result<ConstraintSpec, OtmError> {
    let mut o = Obj::new(v, path)?;
    let out = ConstraintSpec {
        id: o.req_str(&["id"])?.1,
        service: o.req_enum(&["service"], Service::parse)?,
        kpi: o.req_enum(&["kpi"], Kpi::parse)?,
        scope: o.opt_enum(&["scope"], Scope::parse)?,
        aggregation: o.req_enum(&["aggregation"], Aggregation::parse)?,
        unit: o.req_str(&["unit"])?.1,
        operator: o.req_enum(&["operator"], Operator::parse)?,
        threshold: o.req_num(&["threshold"])?,
        modified: o.opt_bool(&["modified"])?,
        created_by: o.opt_str(&["created_by", "origin"])?,
        modified_by: o.opt_str(&["modified_by", "adapted_by"])?,
    };
    o.finish()?;
    Ok(out)
}

fn parse_record(v: &Value, path: &str) -> Result<AdaptationRecord, OtmError> {
    let mut o = Obj::new(v, path)?;
    let out = AdaptationRecord {
        constraint_id: o.req_str(&["id", "constraint_id"])?.1,
        old_threshold: o.req_num(&["old_threshold"])?,
        new_threshold: o.req_num(&["new_threshold"])?,
        delta: o.req_num(&["delta"])?,
        rationale: o.req_str(&["rationale"])?.1,
        episode: o.opt_str(&["episode"])?,
        timestamp: o.opt_str(&["timestamp"])?,
    };
    o.finish()?;
    Ok(out)
}

fn parse_episode(v: &Value, path: &str) -> Result<EpisodeInfo, OtmError> {
    if let Value::String(s) = v {
        return Ok(EpisodeInfo { id: s.clone(), episode_type: None, modified_by: None, timestamp: None });
    }
    let mut o = Obj::new(v, path)?;
    let out = EpisodeInfo {
        id: o.req_str(&["id"])?.1,
        episode_type: o.opt_str(&["episode_type"])?,
        modified_by: o.opt_str(&["modified_by", "adapted_by"])?,
        timestamp: o.opt_str(&["timestamp"])?,
    };
    o.finish()?;
    Ok(out)
}

fn parse_metadata(v: &Value, path: &str) -> Result<OtmMetadata, OtmError> {
    let mut o = Obj::new(v, path)?;
    // Flat layout (timescale/timestamp at this level) and nested `otm` block are both accepted.
    let mut info = OtmInfo {
        id: None,
        created_by: None,
        timestamp: o.opt_str(&["timestamp"])?,
        timescale: o.opt_str(&["timescale"])?,
    };
    if let Some((n, block)) = o.get(&["otm"])? {
        let p = o.child(n);
        let mut b = Obj::new(block, &p)?;
        let nested = OtmInfo {
            id: b.opt_str(&["id"])?,
            created_by: b.opt_str(&["created_by", "origin"])?,
            timestamp: b.opt_str(&["timestamp"])?,
            timescale: b.opt_str(&["timescale"])?,
        };
        b.finish()?;
        if (info.timestamp.is_some() && nested.timestamp.is_some())
            || (info.timescale.is_some() && nested.timescale.is_some())
        {
            return Err(schema(&p, "timestamp/timescale given both inside and outside the otm block"));
        }
        info = OtmInfo {
            id: nested.id,
            created_by: nested.created_by,
            timestamp: info.timestamp.or(nested.timestamp),
            timescale: info.timescale.or(nested.timescale),
        };
    }
    let episode = match o.get(&["episode"])? {
        Some((n, ev)) => Some(parse_episode(ev, &o.child(n))?),
        None => None,
    };
    let (lp, lv) = o.req(&["adaptation_log"])?;
    let items = lv.as_array().ok_or_else(|| schema(&lp, "expected an array"))?;
    let adaptation_log = items
        .iter()
        .enumerate()
        .map(|(i, r)| parse_record(r, &format!("{lp}/{i}")))
        .collect::<Result<Vec<_>, _>>()?;
    o.finish()?;
    Ok(OtmMetadata { otm: info, episode, adaptation_log })
}

pub fn parse_otm(document: &str) -> Result<Otm, OtmError> {
    let v: Value = serde_json::from_str(document).map_err(|e| OtmError::Syntax(e.to_string()))?;
    otm_from_value(&v)
}

pub fn otm_from_value(v: &Value) -> Result<Otm, OtmError> {
    let mut o = Obj::new(v, "")?;
    let (vp, version) = o.req(&["version"])?;
    let version = version.as_str().ok_or_else(|| schema(&vp, "expected a string"))?.to_string();
    let (op, ov) = o.req(&["objective"])?;
    let objective = parse_objective(ov, &op)?;
    let (cp, cv) = o.req(&["constraints"])?;
    let arr = cv.as_array().ok_or_else(|| schema(&cp, "expected an array"))?;
    let mut constraints = Vec::with_capacity(arr.len());
    let mut ids = HashSet::new();
    for (i, c) in arr.iter().enumerate() {
        let p = format!("{cp}/{i}");
        let c = parse_constraint(c, &p)?;
        if !ids.insert(c.id.clone()) {
            return Err(schema(&format!("{p}/id"), format!("duplicate constraint id {:?}", c.id)));
        }
        constraints.push(c);
    }
    let (mp, mv) = o.req(&["metadata"])?;
    let metadata = parse_metadata(mv, &mp)?;
    o.finish()?;
    Ok(Otm { version, objective, constraints, metadata })
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Clone, Debug, PartialEq)]
pub struct DomainBounds {
    bounds: BTreeMap<Kpi, (f64, f64)>,
}

impl Default for DomainBounds {
    fn default() -> Self {
        let mut b = BTreeMap::new();
        b.insert(Kpi::Reliability, (0.0, 1.0));
        b.insert(Kpi::PacketLoss, (0.0, 1.0));
        b.insert(Kpi::Latency, (0.0, 10_000.0));
        b.insert(Kpi::LatencyMs, (0.0, 10_000.0));
        b.insert(Kpi::Jitter, (0.0, 10_000.0));
        DomainBounds { bounds: b }
    }
}

impl DomainBounds {
    pub fn none() -> Self {
        DomainBounds { bounds: BTreeMap::new() }
    }

    pub fn with(mut self, kpi: Kpi, lo: f64, hi: f64) -> Self {
        self.bounds.insert(kpi, (lo, hi));
        self
    }

    pub fn get(&self, kpi: Kpi) -> Option<(f64, f64)> {
        self.bounds.get(&kpi).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    UnitAggregation,
    Directionality,
    Bounds,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Finding {
    pub rule: Rule,
    pub path: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has(&self, rule: Rule) -> bool {
        self.findings.iter().any(|f| f.rule == rule)
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.findings.is_empty() {
            return writeln!(f, "valid");
        }
        for x in &self.findings {
            writeln!(f, "{:?} {}: {}", x.rule, x.path, x.message)?;
        }
        Ok(())
    }
}

fn check_unit(kpi: Kpi, unit: &str, path: String, out: &mut Vec<Finding>) {
    if unit.trim().is_empty() && !kpi.dimensionless() {
        out.push(Finding { rule: Rule::UnitAggregation, path, message: format!("kpi {kpi} needs a unit") });
    }
}

pub fn validate_otm(otm: &Otm, bounds: &DomainBounds) -> ValidationReport {
    let mut findings = Vec::new();
    check_unit(otm.objective.kpi, &otm.objective.unit, "/objective/unit".into(), &mut findings);
    for (i, c) in otm.constraints.iter().enumerate() {
        let p = format!("/constraints/{i}");
        check_unit(c.kpi, &c.unit, format!("{p}/unit"), &mut findings);
        if c.kpi.higher_is_better() != c.operator.is_lower_bound() {
            findings.push(Finding {
                rule: Rule::Directionality,
                path: format!("{p}/operator"),
                message: format!(
                    "operator {} bounds {} on the wrong side ({} is {} is better)",
                    c.operator,
                    c.kpi,
                    c.kpi,
                    if c.kpi.higher_is_better() { "higher" } else { "lower" }
                ),
            });
        }
        if let Some((lo, hi)) = bounds.get(c.kpi) {
            if !(lo..=hi).contains(&c.threshold) {
                findings.push(Finding {
                    rule: Rule::Bounds,
                    path: format!("{p}/threshold"),
                    message: format!("threshold {} outside [{lo}, {hi}]", c.threshold),
                });
            }
        }
    }
    ValidationReport { findings }
}

// ---------------------------------------------------------------------------
// Updates

#[derive(Clone, Debug, PartialEq)]
pub enum ThresholdChange {
    /// Signed step applied to the current threshold.
    Delta(f64),
    /// Absolute target; the recorded delta is snapped to 12 decimals when that
    /// still reproduces the target exactly.
    Absolute(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdUpdate {
    pub constraint_id: String,
    pub change: ThresholdChange,
    pub rationale: String,
    pub episode: String,
    pub timestamp: Option<String>,
    pub modified_by: Option<String>,
}

fn snap_delta(old: f64, new: f64) -> f64 {
    let raw = new - old;
    let snapped = (raw * 1e12).round() / 1e12;
    if old + snapped == new {
        snapped
    } else {
        raw
    }
}

/// Return a new snapshot with one threshold changed and one log record appended.
pub fn apply_threshold_update(otm: &Otm, update: &ThresholdUpdate, bounds: &DomainBounds) -> Result<Otm, OtmError> {
    let idx = otm
        .constraints
        .iter()
        .position(|c| c.id == update.constraint_id)
        .ok_or_else(|| OtmError::UnknownConstraint(update.constraint_id.clone()))?;
    let c = &otm.constraints[idx];
    let old = c.threshold;
    let (new, delta) = match update.change {
        ThresholdChange::Delta(d) => (old + d, d),
        ThresholdChange::Absolute(t) => (t, snap_delta(old, t)),
    };
    if let Some((lo, hi)) = bounds.get(c.kpi) {
        if !(lo..=hi).contains(&new) {
            return Err(OtmError::OutOfBounds { id: c.id.clone(), value: new, lo, hi });
        }
    }
    let mut next = otm.clone();
    let nc = &mut next.constraints[idx];
    nc.threshold = new;
    nc.modified = Some(true);
    if update.modified_by.is_some() {
        nc.modified_by = update.modified_by.clone();
    }
    next.metadata.adaptation_log.push(AdaptationRecord {
        constraint_id: update.constraint_id.clone(),
        old_threshold: old,
        new_threshold: new,
        delta,
        rationale: update.rationale.clone(),
        episode: Some(update.episode.clone()),
        timestamp: update.timestamp.clone(),
    });
    if update.timestamp.is_some() {
        next.metadata.otm.timestamp = update.timestamp.clone();
    }
    let prev = next.metadata.episode.take();
    next.metadata.episode = Some(EpisodeInfo {
        id: update.episode.clone(),
        episode_type: prev.as_ref().and_then(|e| e.episode_type.clone()),
        modified_by: update.modified_by.clone().or_else(|| prev.as_ref().and_then(|e| e.modified_by.clone())),
        timestamp: update.timestamp.clone(),
    });
    Ok(next)
}

/// Copy with every timestamp and per-update provenance cleared, for comparing
/// documents "modulo timestamp".
pub fn without_timestamps(otm: &Otm) -> Otm {
    let mut o = otm.clone();
    o.metadata.otm.timestamp = None;
    if let Some(e) = o.metadata.episode.as_mut() {
        e.timestamp = None;
    }
    for r in o.metadata.adaptation_log.iter_mut() {
        r.timestamp = None;
        r.episode = None;
    }
    for c in o.constraints.iter_mut() {
        c.modified = None;
    }
    o
}

// ---------------------------------------------------------------------------
// Intent translation

#[derive(Debug, Error, Clone, PartialEq)]
#[error("no template matches intent {0:?}")]
pub struct TranslationError(pub String);

#[derive(Clone, Debug, PartialEq)]
pub enum Fragment {
    Objective(ObjectiveSpec),
    /// Constraint template; the threshold is read from the intent text as the
    /// number preceding `unit_token` and multiplied by `scale`.
    Constraint { template: ConstraintSpec, unit_token: String, scale: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemplateRule {
    /// Every keyword must occur (case-insensitive).
    pub keywords: Vec<String>,
    pub fragment: Fragment,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemplateCatalog {
    pub rules: Vec<TemplateRule>,
    pub created_by: String,
}

fn kw(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl Default for TemplateCatalog {
    fn default() -> Self {
        let cell_tput = ObjectiveSpec {
            service: Service::Mbb,
            kpi: Kpi::Throughput,
            scope: Some(Scope::PerCell),
            aggregation: Aggregation::Mean,
            unit: "Mbps".into(),
            maximize: true,
        };
        let reliability = ConstraintSpec {
            id: "C1".into(),
            service: Service::Urllc,
            kpi: Kpi::Reliability,
            scope: Some(Scope::PerUser),
            aggregation: Aggregation::Mean,
            unit: "".into(),
            operator: Operator::Ge,
            threshold: 0.0,
            modified: None,
            created_by: None,
            modified_by: None,
        };
        let min_rate = ConstraintSpec {
            id: "C1".into(),
            service: Service::Streaming,
            kpi: Kpi::Throughput,
            scope: Some(Scope::PerUser),
            aggregation: Aggregation::Min,
            unit: "Mbps".into(),
            operator: Operator::Ge,
            threshold: 0.0,
            modified: None,
            created_by: None,
            modified_by: None,
        };
        TemplateCatalog {
            created_by: "template_translator".into(),
            rules: vec![
                TemplateRule { keywords: kw(&["maximize", "throughput"]), fragment: Fragment::Objective(cell_tput) },
                TemplateRule {
                    keywords: kw(&["reliability", "%"]),
                    fragment: Fragment::Constraint { template: reliability, unit_token: "%".into(), scale: 0.01 },
                },
                TemplateRule {
                    keywords: kw(&["minimum", "rate", "mbps"]),
                    fragment: Fragment::Constraint { template: min_rate, unit_token: "mbps".into(), scale: 1.0 },
                },
            ],
        }
    }
}

/// Number immediately preceding `unit` (optionally separated by whitespace).
fn number_before(text: &str, unit: &str) -> Option<f64> {
    let lower = text.to_lowercase();
    let pos = lower.find(unit)?;
    let head = lower[..pos].trim_end();
    let start = head
        .char_indices()
        .rev()
        .take_while(|(_, c)| c.is_ascii_digit() || *c == '.')
        .last()
        .map(|(i, _)| i)?;
    head[start..].parse().ok()
}

pub fn translate_intent(intent: &str, catalog: &TemplateCatalog) -> Result<Otm, TranslationError> {
    let lower = intent.to_lowercase();
    let mut objective = None;
    let mut constraints: Vec<ConstraintSpec> = Vec::new();
    for rule in &catalog.rules {
        if !rule.keywords.iter().all(|k| lower.contains(&k.to_lowercase())) {
            continue;
        }
        match &rule.fragment {
            Fragment::Objective(o) => {
                if objective.is_none() {
                    objective = Some(o.clone());
                }
            }
            Fragment::Constraint { template, unit_token, scale } => {
                let Some(x) = number_before(intent, unit_token) else { continue };
                let mut c = template.clone();
                c.id = format!("C{}", constraints.len() + 1);
                c.threshold = x * scale;
                c.created_by = Some(catalog.created_by.clone());
                constraints.push(c);
            }
        }
    }
    let objective = objective.ok_or_else(|| TranslationError(intent.to_string()))?;
    Ok(Otm {
        version: "1.0".into(),
        objective,
        constraints,
        metadata: OtmMetadata {
            otm: OtmInfo { created_by: Some(catalog.created_by.clone()), ..Default::default() },
            episode: None,
            adaptation_log: Vec::new(),
        },
    })
}
