//! Scenario files, scripted runs and run reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::catalog::{CatalogError, Catalogue};
use crate::hag::{AccessPathConfig, HagStats, Policy};
use crate::mano::{AuditEvent, ManoConfig, NsState, PlacementConstraints};
use crate::sdn::{MeasureConfig, TopologyConfig};
use crate::sim::{ms, SimTime};
use crate::telemetry::{Aggregation, Metric, QueryResult, SupervisorEvent};
use crate::vim::VimConfig;
use crate::world::{parse_ns_ref, KpiTargets, PathConfig, TelemetrySettings, World, WorldConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub seed: u64,
    /// Relative paths resolve against the scenario file's directory.
    pub catalogue_dir: PathBuf,
    #[serde(default)]
    pub mano: ManoConfig,
    pub vims: Vec<VimConfig>,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub access_paths: Vec<AccessPathConfig>,
    #[serde(default)]
    pub paths: Vec<PathConfig>,
    #[serde(default)]
    pub kpi_targets: KpiTargets,
    #[serde(default)]
    pub telemetry: TelemetrySettings,
    #[serde(default)]
    pub halt_on_error: bool,
    /// Run length; defaults to one second past the last script step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
    #[serde(default)]
    pub script: Vec<ScriptStep>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expect {
    #[default]
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStep {
    pub at_ms: u64,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub expect: Expect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Relation {
    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Relation::Lt => a < b,
            Relation::Le => a <= b,
            Relation::Gt => a > b,
            Relation::Ge => a >= b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    Instantiate {
        nsd: String,
        alias: String,
        #[serde(default)]
        constraints: PlacementConstraints,
    },
    Migrate {
        ns: String,
        vnf: String,
        to: String,
    },
    Scale {
        ns: String,
        vnf: String,
        delta: i32,
    },
    Terminate {
        ns: String,
    },
    Measure {
        path: String,
    },
    AssertState {
        ns: String,
        state: NsState,
    },
    /// Compare one field of two earlier labelled measurements.
    Compare {
        metric: Metric,
        left: String,
        relation: Relation,
        right: String,
    },
    SetLink {
        link: String,
        up: bool,
    },
    HagOpen {
        session: String,
        paths: Vec<String>,
        policy: Policy,
    },
    HagSend {
        session: String,
        bytes: u64,
    },
    HagPath {
        session: String,
        path: String,
        up: bool,
    },
    HagStats {
        session: String,
    },
    /// Check an earlier measurement or session against the KPI targets.
    KpiCheck {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        measurement: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session: Option<String>,
    },
    CrashCollector {
        collector: String,
    },
    Query {
        source: String,
        metric: Metric,
        aggregation: Aggregation,
        from_ms: u64,
        to_ms: u64,
    },
}

impl Action {
    pub fn kind(&self) -> &'static str {
        match self {
            Action::Instantiate { .. } => "instantiate",
            Action::Migrate { .. } => "migrate",
            Action::Scale { .. } => "scale",
            Action::Terminate { .. } => "terminate",
            Action::Measure { .. } => "measure",
            Action::AssertState { .. } => "assert_state",
            Action::Compare { .. } => "compare",
            Action::SetLink { .. } => "set_link",
            Action::HagOpen { .. } => "hag_open",
            Action::HagSend { .. } => "hag_send",
            Action::HagPath { .. } => "hag_path",
            Action::HagStats { .. } => "hag_stats",
            Action::KpiCheck { .. } => "kpi_check",
            Action::CrashCollector { .. } => "crash_collector",
            Action::Query { .. } => "query",
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("schema error at {path}: {message}")]
    SchemaError { path: String, message: String },
    #[error("dangling reference: {what} {reference:?}")]
    DanglingReference { what: String, reference: String },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("catalogue: {0}")]
    Catalog(#[from] CatalogError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn dangling(what: &str, reference: &str) -> ScenarioError {
    ScenarioError::DanglingReference {
        what: what.into(),
        reference: reference.into(),
    }
}

/// A validated scenario together with its catalogue.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub catalogue: Catalogue,
    pub base_dir: PathBuf,
}

impl Scenario {
    pub fn world_config(&self) -> WorldConfig {
        let c = &self.config;
        WorldConfig {
            seed: c.seed,
            mano: c.mano.clone(),
            vims: c.vims.clone(),
            topology: c.topology.clone(),
            access_paths: c.access_paths.clone(),
            paths: c.paths.clone(),
            telemetry: c.telemetry.clone(),
        }
    }

    pub fn world(&self) -> Result<World, ScenarioError> {
        World::new(&self.world_config(), self.catalogue.clone()).map_err(|e| ScenarioError::Invalid(e.to_string()))
    }
}

pub fn parse_scenario(bytes: &[u8]) -> Result<ScenarioConfig, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ScenarioError::SchemaError {
            path: if path == "." { "$".into() } else { path },
            message: e.into_inner().to_string(),
        }
    })
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let config = parse_scenario(&bytes)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let dir = base_dir.join(&config.catalogue_dir);
    let catalogue = Catalogue::load_dir(&dir)?;
    validate(&config, &catalogue)?;
    Ok(Scenario {
        config,
        catalogue,
        base_dir,
    })
}

fn unique<'a>(what: &str, ids: impl Iterator<Item = &'a str>) -> Result<BTreeSet<&'a str>, ScenarioError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(ScenarioError::SchemaError {
                path: what.into(),
                message: format!("duplicate id {id:?}"),
            });
        }
    }
    Ok(seen)
}

/// Cross-reference checks that the JSON schema alone cannot express.
pub fn validate(c: &ScenarioConfig, catalogue: &Catalogue) -> Result<(), ScenarioError> {
    let switches = unique("topology.switches", c.topology.switches.iter().map(|s| s.id.as_str()))?;
    let links = unique("topology.links", c.topology.links.iter().map(|l| l.id.as_str()))?;
    let endpoints = unique("topology.endpoints", c.topology.endpoints.iter().map(|e| e.id.as_str()))?;
    let vims = unique("vims", c.vims.iter().map(|v| v.id.as_str()))?;
    let access = unique("access_paths", c.access_paths.iter().map(|a| a.path_id.as_str()))?;
    let paths = unique("paths", c.paths.iter().map(|p| p.id.as_str()))?;

    for l in &c.topology.links {
        for end in [&l.a, &l.b] {
            if !switches.contains(end.as_str()) {
                return Err(dangling("switch in link", end));
            }
        }
    }
    for e in &c.topology.endpoints {
        if !switches.contains(e.switch.as_str()) {
            return Err(dangling("switch of endpoint", &e.switch));
        }
    }
    for v in &c.vims {
        if let Some(sw) = &v.switch {
            if !switches.contains(sw.as_str()) {
                return Err(dangling("switch of vim", sw));
            }
        }
    }

    // alias -> nsd, in script order
    let mut aliases: BTreeMap<&str, &str> = BTreeMap::new();
    for s in &c.script {
        if let Action::Instantiate { nsd, alias, .. } = &s.action {
            aliases.insert(alias.as_str(), nsd.as_str());
        }
    }
    let endpoint_ok = |r: &str| match parse_ns_ref(r) {
        Some((ns, vnf)) => aliases
            .get(ns)
            .and_then(|nsd| catalogue.nsd(nsd))
            .is_some_and(|d| d.vnfs.iter().any(|v| v == vnf)),
        None => endpoints.contains(r),
    };
    for p in &c.paths {
        for r in [&p.src, &p.dst] {
            if !endpoint_ok(r) {
                return Err(dangling("path endpoint", r));
            }
        }
    }

    let mut collectors: BTreeSet<String> = c
        .paths
        .iter()
        .map(|p| format!("sdn-{}", p.id))
        .chain(c.vims.iter().map(|v| format!("vim-{}", v.id)))
        .collect();
    for s in &c.script {
        if let Action::HagOpen { session, .. } = &s.action {
            collectors.insert(format!("hag-{session}"));
        }
    }
    for crash in &c.telemetry.crashes {
        if !collectors.contains(&crash.collector) {
            return Err(dangling("collector", &crash.collector));
        }
    }

    let mut defined: BTreeSet<&str> = BTreeSet::new();
    let mut sessions: BTreeSet<&str> = BTreeSet::new();
    let mut labels: BTreeMap<&str, &str> = BTreeMap::new();
    let mut prev_at = 0;
    for (i, s) in c.script.iter().enumerate() {
        if s.at_ms < prev_at {
            return Err(ScenarioError::SchemaError {
                path: format!("script[{i}].at_ms"),
                message: "script steps must be in time order".into(),
            });
        }
        prev_at = s.at_ms;
        let ns_ok = |ns: &str| defined.contains(ns);
        match &s.action {
            Action::Instantiate { nsd, alias, constraints } => {
                if catalogue.nsd(nsd).is_none() {
                    return Err(dangling("nsd", nsd));
                }
                if !defined.insert(alias) {
                    return Err(ScenarioError::SchemaError {
                        path: format!("script[{i}].action.alias"),
                        message: format!("alias {alias:?} defined twice"),
                    });
                }
                for v in constraints.pin.values() {
                    if !vims.contains(v.as_str()) {
                        return Err(dangling("vim", v));
                    }
                }
            }
            Action::Migrate { ns, to, .. } => {
                if !ns_ok(ns) {
                    return Err(dangling("ns alias", ns));
                }
                if !vims.contains(to.as_str()) {
                    return Err(dangling("vim", to));
                }
            }
            Action::Scale { ns, .. } | Action::Terminate { ns } | Action::AssertState { ns, .. } => {
                if !ns_ok(ns) {
                    return Err(dangling("ns alias", ns));
                }
            }
            Action::Measure { path } => {
                if !paths.contains(path.as_str()) {
                    return Err(dangling("path", path));
                }
                if let Some(l) = &s.label {
                    labels.insert(l, "measure");
                }
            }
            Action::Compare { left, right, .. } => {
                for l in [left, right] {
                    if labels.get(l.as_str()) != Some(&"measure") {
                        return Err(dangling("measurement label", l));
                    }
                }
            }
            Action::SetLink { link, .. } => {
                if !links.contains(link.as_str()) {
                    return Err(dangling("link", link));
                }
            }
            Action::HagOpen { session, paths: ps, .. } => {
                for p in ps {
                    if !access.contains(p.as_str()) {
                        return Err(dangling("access path", p));
                    }
                }
                sessions.insert(session);
            }
            Action::HagSend { session, .. } | Action::HagStats { session } => {
                if !sessions.contains(session.as_str()) {
                    return Err(dangling("hag session", session));
                }
            }
            Action::HagPath { session, path, .. } => {
                if !sessions.contains(session.as_str()) {
                    return Err(dangling("hag session", session));
                }
                if !access.contains(path.as_str()) {
                    return Err(dangling("access path", path));
                }
            }
            Action::KpiCheck { measurement, session } => {
                if measurement.is_none() && session.is_none() {
                    return Err(ScenarioError::SchemaError {
                        path: format!("script[{i}].action"),
                        message: "kpi_check needs a measurement or a session".into(),
                    });
                }
                if let Some(m) = measurement {
                    if labels.get(m.as_str()) != Some(&"measure") {
                        return Err(dangling("measurement label", m));
                    }
                }
                if let Some(x) = session {
                    if !sessions.contains(x.as_str()) {
                        return Err(dangling("hag session", x));
                    }
                }
            }
            Action::CrashCollector { collector } => {
                if !collectors.contains(collector) {
                    return Err(dangling("collector", collector));
                }
            }
            Action::Query { .. } => {}
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub index: usize,
    pub at_us: SimTime,
    pub action: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub ok: bool,
    pub expect: Expect,
    pub passed: bool,
    pub detail: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiResult {
    pub subject: String,
    pub kpi: String,
    pub target: f64,
    pub measured: f64,
    pub met: bool,
    /// Only asserted KPIs count towards the exit status.
    pub asserted: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertionSummary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub finished_at_us: SimTime,
    pub halted: bool,
    pub kpi_targets: KpiTargets,
    pub outcomes: Vec<ActionOutcome>,
    pub kpis: Vec<KpiResult>,
    pub assertions: AssertionSummary,
    pub audit: Vec<AuditEvent>,
    pub supervisor: Vec<SupervisorEvent>,
    pub hag: BTreeMap<String, HagStats>,
    pub final_state: Value,
    pub metric_samples: usize,
}

impl RunReport {
    pub fn all_passed(&self) -> bool {
        self.assertions.failed == 0
    }

    pub fn exit_code(&self) -> i32 {
        if self.all_passed() {
            0
        } else {
            1
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }
}

/// Report plus the CSV metric export.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub metrics_csv: String,
}

fn kpis_for_measurement(subject: &str, m: &Value, t: &KpiTargets, asserted: bool) -> Vec<KpiResult> {
    let lat_ms = m["latency_us"].as_f64().unwrap_or(f64::INFINITY) / 1000.0;
    let rate = m["throughput_mbps"].as_f64().unwrap_or(0.0);
    vec![
        KpiResult {
            subject: subject.into(),
            kpi: "e2e_latency_ms".into(),
            target: t.e2e_latency_ms,
            measured: lat_ms,
            met: lat_ms <= t.e2e_latency_ms,
            asserted,
        },
        KpiResult {
            subject: subject.into(),
            kpi: "peak_rate_mbps".into(),
            target: t.peak_rate_mbps,
            measured: rate,
            met: rate >= t.peak_rate_mbps,
            asserted,
        },
    ]
}

fn kpis_for_session(subject: &str, s: &HagStats, t: &KpiTargets, asserted: bool) -> Vec<KpiResult> {
    vec![KpiResult {
        subject: subject.into(),
        kpi: "peak_rate_mbps".into(),
        target: t.peak_rate_mbps,
        measured: s.goodput_mbps,
        met: s.goodput_mbps >= t.peak_rate_mbps,
        asserted,
    }]
}

struct Runner<'a> {
    cfg: &'a ScenarioConfig,
    world: World,
    measurements: BTreeMap<String, Value>,
    kpis: Vec<KpiResult>,
}

impl Runner<'_> {
    fn execute(&mut self, step: &ScriptStep) -> (bool, Option<bool>, Value) {
        let w = &mut self.world;
        let err = |e: &dyn std::fmt::Display| (false, None, json!({ "error": e.to_string() }));
        match &step.action {
            Action::Instantiate {
                nsd,
                alias,
                constraints,
            } => match w.instantiate(nsd, constraints, Some(alias)) {
                Ok(id) => (true, None, json!({ "instance": id })),
                Err(e) => err(&e),
            },
            Action::Migrate { ns, vnf, to } => match w.migrate(ns, vnf, to) {
                Ok(()) => (true, None, json!({ "instance": w.resolve_ns(ns) })),
                Err(e) => err(&e),
            },
            Action::Scale { ns, vnf, delta } => match w.scale(ns, vnf, *delta) {
                Ok(()) => (true, None, json!({ "instance": w.resolve_ns(ns) })),
                Err(e) => err(&e),
            },
            Action::Terminate { ns } => match w.terminate(ns) {
                Ok(state) => (true, None, json!({ "state": state })),
                Err(e) => err(&e),
            },
            Action::Measure { path } => match w.measure(path, &MeasureConfig::default()) {
                Ok(m) => {
                    let v = serde_json::to_value(&m).expect("serializable");
                    let key = step.label.clone().unwrap_or_else(|| path.clone());
                    self.kpis
                        .extend(kpis_for_measurement(&key, &v, &self.cfg.kpi_targets, false));
                    self.measurements.insert(key, v.clone());
                    (true, None, v)
                }
                Err(e) => err(&e),
            },
            Action::AssertState { ns, state } => match w.ns_view(ns) {
                Ok(v) => (
                    true,
                    Some(v.instance.state == *state),
                    json!({ "expected": state, "actual": v.instance.state }),
                ),
                Err(e) => (false, Some(false), json!({ "error": e.to_string() })),
            },
            Action::Compare {
                metric,
                left,
                relation,
                right,
            } => {
                let get = |l: &str| self.measurements.get(l).and_then(|m| m[metric.as_str()].as_f64());
                match (get(left), get(right)) {
                    (Some(a), Some(b)) => (
                        true,
                        Some(relation.holds(a, b)),
                        json!({ "left": a, "right": b, "relation": relation }),
                    ),
                    _ => (false, Some(false), json!({ "error": "missing measurement" })),
                }
            }
            Action::SetLink { link, up } => match w.set_link(link, *up) {
                Ok(()) => (true, None, json!({ "link": link, "up": up })),
                Err(e) => err(&e),
            },
            Action::HagOpen {
                session,
                paths,
                policy,
            } => match w.hag_open(Some(session), paths, *policy) {
                Ok(id) => (true, None, json!({ "session": id })),
                Err(e) => err(&e),
            },
            Action::HagSend { session, bytes } => match w.hag_send(session, *bytes) {
                Ok(r) => (true, None, serde_json::to_value(r).expect("serializable")),
                Err(e) => err(&e),
            },
            Action::HagPath { session, path, up } => match w.hag_path(session, path, *up) {
                Ok(()) => (true, None, json!({ "path": path, "up": up })),
                Err(e) => err(&e),
            },
            Action::HagStats { session } => match w.hag_stats(session) {
                Ok(s) => {
                    let key = step.label.clone().unwrap_or_else(|| session.clone());
                    self.kpis.extend(kpis_for_session(&key, &s, &self.cfg.kpi_targets, false));
                    (true, None, serde_json::to_value(s).expect("serializable"))
                }
                Err(e) => err(&e),
            },
            Action::KpiCheck { measurement, session } => {
                let t = self.cfg.kpi_targets;
                let mut results = Vec::new();
                if let Some(m) = measurement {
                    match self.measurements.get(m) {
                        Some(v) => results.extend(kpis_for_measurement(m, v, &t, true)),
                        None => return (false, Some(false), json!({ "error": "missing measurement" })),
                    }
                }
                if let Some(s) = session {
                    match w.hag_stats(s) {
                        Ok(st) => results.extend(kpis_for_session(s, &st, &t, true)),
                        Err(e) => return (false, Some(false), json!({ "error": e.to_string() })),
                    }
                }
                let met = results.iter().all(|k| k.met);
                let detail = serde_json::to_value(&results).expect("serializable");
                self.kpis.extend(results);
                (true, Some(met), detail)
            }
            Action::CrashCollector { collector } => match w.crash_collector(collector) {
                Ok(()) => (true, None, json!({ "collector": collector })),
                Err(e) => err(&e),
            },
            Action::Query {
                source,
                metric,
                aggregation,
                from_ms,
                to_ms,
            } => match w.query_internal(source, *metric, ms(*from_ms), ms(*to_ms), *aggregation) {
                Ok(QueryResult::Scalar(v)) => (true, None, json!({ "value": v })),
                Ok(QueryResult::Series(p)) => (true, None, json!({ "points": p.len() })),
                Err(e) => err(&e),
            },
        }
    }
}

/// Execute the script at its virtual times and collect the report.
pub fn run(scenario: &Scenario, seed: Option<u64>) -> Result<RunOutput, ScenarioError> {
    let mut cfg = scenario.config.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let with_seed = Scenario {
        config: cfg.clone(),
        catalogue: scenario.catalogue.clone(),
        base_dir: scenario.base_dir.clone(),
    };
    let mut runner = Runner {
        cfg: &cfg,
        world: with_seed.world()?,
        measurements: BTreeMap::new(),
        kpis: Vec::new(),
    };
    let end = ms(cfg
        .duration_ms
        .unwrap_or_else(|| cfg.script.last().map_or(0, |s| s.at_ms) + 1_000));

    let mut outcomes = Vec::new();
    let mut summary = AssertionSummary::default();
    let mut halted = false;
    for (index, step) in cfg.script.iter().enumerate() {
        runner.world.advance_to(ms(step.at_ms));
        let (ok, assertion, detail) = runner.execute(step);
        let passed = match assertion {
            Some(a) => a && step.expect == Expect::Ok,
            None => ok == (step.expect == Expect::Ok),
        };
        summary.total += 1;
        if passed {
            summary.passed += 1;
        } else {
            summary.failed += 1;
        }
        outcomes.push(ActionOutcome {
            index,
            at_us: runner.world.now(),
            action: step.action.kind().into(),
            label: step.label.clone(),
            ok,
            expect: step.expect,
            passed,
            detail,
        });
        if !passed && cfg.halt_on_error {
            halted = true;
            break;
        }
    }
    if !halted {
        runner.world.advance_to(end);
    }

    let w = &runner.world;
    let hag = w
        .sessions()
        .keys()
        .map(|k| (k.clone(), w.hag_stats(k).expect("listed")))
        .collect();
    let metrics_csv = w.metrics_csv();
    let report = RunReport {
        scenario: cfg.id.clone(),
        seed: cfg.seed,
        finished_at_us: w.now(),
        halted,
        kpi_targets: cfg.kpi_targets,
        outcomes,
        kpis: runner.kpis.clone(),
        assertions: summary,
        audit: w.mano().audit().to_vec(),
        supervisor: w.supervisor_events().to_vec(),
        hag,
        final_state: w.snapshot(),
        metric_samples: w.telemetry().metrics().len(),
    };
    Ok(RunOutput { report, metrics_csv })
}
