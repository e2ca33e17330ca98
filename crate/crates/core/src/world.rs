//! The assembled system: orchestrator, fabric, telemetry, supervisor and
//! gateway sessions, all advanced together on one virtual clock.
//!
//! Scripted runs and the HTTP API both drive a [`World`], so every script
//! action has an API equivalent producing the same state transition.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::catalog::Catalogue;
use crate::hag::{AccessPathConfig, HagError, HagSession, HagStats, Policy, SendReceipt};
use crate::mano::{AuditEvent, Mano, ManoConfig, ManoError, NsInstance, NsState, PlacementConstraints};
use crate::sdn::{Fabric, MeasureConfig, PathMeasurement, SdnError, TopologyConfig, TopologyLink};
use crate::sim::{ms, SimTime};
use crate::telemetry::{
    Aggregation, ApiToken, AuthStatus, IngestReport, Metric, MetricSample, MetricSource, QueryResult, Supervisor,
    SupervisorEvent, Telemetry, TelemetryError,
};
use crate::vim::{CapabilityReport, VimConfig};

/// Endpoint reference in a measured path: a topology endpoint id, or
/// `ns:<instance or alias>/<vnf>` for the first replica of a deployed VNF.
pub type EndpointRef = String;

pub fn parse_ns_ref(r: &str) -> Option<(&str, &str)> {
    r.strip_prefix("ns:")?.split_once('/')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    pub id: String,
    pub src: EndpointRef,
    pub dst: EndpointRef,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KpiTargets {
    pub peak_rate_mbps: f64,
    pub e2e_latency_ms: f64,
}

impl Default for KpiTargets {
    fn default() -> Self {
        Self {
            peak_rate_mbps: 10_000.0,
            e2e_latency_ms: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectorCrash {
    pub collector: String,
    pub at_ms: u64,
}

fn default_sdn_poll() -> u64 {
    1_000
}

fn default_vim_poll() -> u64 {
    5_000
}

fn collector_measure() -> MeasureConfig {
    MeasureConfig {
        probes: 5,
        probe_interval_us: 1_000,
        probe_bytes: 64,
        burst_us: 2_000,
        burst_packet_bytes: 1500,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetrySettings {
    #[serde(default = "default_sdn_poll")]
    pub sdn_poll_ms: u64,
    #[serde(default = "default_vim_poll")]
    pub vim_poll_ms: u64,
    #[serde(default = "default_sdn_poll")]
    pub hag_poll_ms: u64,
    /// Probe settings used by the periodic SDN collectors.
    #[serde(default = "collector_measure")]
    pub measure: MeasureConfig,
    #[serde(default)]
    pub crashes: Vec<CollectorCrash>,
}

impl Default for TelemetrySettings {
    fn default() -> Self {
        Self {
            sdn_poll_ms: default_sdn_poll(),
            vim_poll_ms: default_vim_poll(),
            hag_poll_ms: default_sdn_poll(),
            measure: collector_measure(),
            crashes: Vec::new(),
        }
    }
}

/// Everything a [`World`] needs besides the catalogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub seed: u64,
    pub mano: ManoConfig,
    pub vims: Vec<VimConfig>,
    pub topology: TopologyConfig,
    pub access_paths: Vec<AccessPathConfig>,
    pub paths: Vec<PathConfig>,
    pub telemetry: TelemetrySettings,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error(transparent)]
    Mano(#[from] ManoError),
    #[error(transparent)]
    Sdn(#[from] SdnError),
    #[error(transparent)]
    Hag(#[from] HagError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error("unknown path {0}")]
    UnknownPath(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown collector {0}")]
    UnknownCollector(String),
    #[error("endpoint {0} is not deployed")]
    NotDeployed(String),
    #[error("duplicate id {0}")]
    Duplicate(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedKind {
    Audit,
    Metric,
    Supervisor,
}

/// One entry of the server-pushed event stream. Ids are dense and monotone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedEvent {
    pub id: u64,
    pub at: SimTime,
    pub kind: FeedKind,
    pub data: Value,
}

const FEED_CAPACITY: usize = 100_000;

#[derive(Debug, Clone, Default)]
struct Feed {
    events: VecDeque<FeedEvent>,
    next_id: u64,
}

impl Feed {
    fn push(&mut self, at: SimTime, kind: FeedKind, data: Value) {
        self.next_id += 1;
        self.events.push_back(FeedEvent {
            id: self.next_id,
            at,
            kind,
            data,
        });
        if self.events.len() > FEED_CAPACITY {
            self.events.pop_front();
        }
    }

    fn since(&self, after: u64) -> Vec<FeedEvent> {
        let first = self.events.front().map_or(0, |e| e.id);
        let skip = (after + 1).saturating_sub(first) as usize;
        self.events.iter().skip(skip).cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NsView {
    pub instance: NsInstance,
    pub audit: Vec<AuditEvent>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TopologyView {
    pub now: SimTime,
    pub vims: Vec<CapabilityReport>,
    pub switches: Vec<SwitchView>,
    pub links: Vec<TopologyLink>,
    pub endpoints: Vec<crate::sdn::EndpointInfo>,
    pub access_paths: Vec<AccessPathConfig>,
    pub paths: Vec<PathConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchView {
    pub id: String,
    pub mode: crate::sdn::ForwardMode,
    pub ports: usize,
    pub flow_rules: usize,
    pub mac_entries: usize,
}

struct Probe<'a> {
    mano: &'a Mano,
    hag: &'a BTreeMap<String, HagSession>,
    paths: &'a BTreeMap<String, PathConfig>,
    aliases: &'a BTreeMap<String, String>,
    measure: MeasureConfig,
    captured: Vec<MetricSample>,
}

impl Probe<'_> {
    fn sdn(&self, path_id: &str, now: SimTime) -> Vec<MetricSample> {
        let Some(p) = self.paths.get(path_id) else { return Vec::new() };
        let (Some(src), Some(dst)) = (
            resolve_endpoint(self.mano, self.aliases, &p.src),
            resolve_endpoint(self.mano, self.aliases, &p.dst),
        ) else {
            return Vec::new();
        };
        let fabric = self.mano.fabric();
        let Ok(m) = fabric.measure(&src, &dst, now, &self.measure) else {
            return Vec::new();
        };
        let source = format!("sdn:{path_id}");
        let mut out = vec![
            MetricSample::new(&source, Metric::LatencyUs, m.latency_us, now),
            MetricSample::new(&source, Metric::JitterUs, m.jitter_us, now),
            MetricSample::new(&source, Metric::LossRate, m.loss_rate, now),
            MetricSample::new(&source, Metric::ThroughputMbps, m.throughput_mbps, now),
        ];
        if let Ok(bw) = fabric.path_bandwidth(&src, &dst) {
            if bw.is_finite() {
                out.push(MetricSample::new(&source, Metric::BandwidthMbps, bw, now));
            }
        }
        out
    }

    fn vim(&self, vim_id: &str, now: SimTime) -> Vec<MetricSample> {
        let Ok(v) = self.mano.vims().get(vim_id) else { return Vec::new() };
        let used: crate::catalog::Demand = v.nodes().map(|n| n.used).sum();
        let source = format!("vim:{vim_id}");
        vec![
            MetricSample::new(&source, Metric::VcpuUsed, used.vcpu as f64, now),
            MetricSample::new(&source, Metric::MemoryUsedMb, used.memory_mb as f64, now),
        ]
    }
}

impl MetricSource for Probe<'_> {
    fn collect(&mut self, source: &str, now: SimTime) -> Vec<MetricSample> {
        let out = if let Some(id) = source.strip_prefix("sdn:") {
            self.sdn(id, now)
        } else if let Some(id) = source.strip_prefix("vim:") {
            self.vim(id, now)
        } else if let Some(id) = source.strip_prefix("hag:") {
            self.hag.get(id).map(HagSession::samples).unwrap_or_default()
        } else {
            Vec::new()
        };
        self.captured.extend(out.iter().cloned());
        out
    }
}

fn resolve_endpoint(mano: &Mano, aliases: &BTreeMap<String, String>, r: &str) -> Option<String> {
    match parse_ns_ref(r) {
        Some((ns, vnf)) => {
            let id = aliases.get(ns).map_or(ns, String::as_str);
            mano.endpoints_of(id, vnf).into_iter().next()
        }
        None => mano.fabric().endpoint(r).map(|e| e.id.clone()),
    }
}

#[derive(Debug)]
pub struct World {
    seed: u64,
    mano: Mano,
    telemetry: Telemetry,
    supervisor: Supervisor,
    hag: BTreeMap<String, HagSession>,
    access_paths: Vec<AccessPathConfig>,
    paths: BTreeMap<String, PathConfig>,
    aliases: BTreeMap<String, String>,
    settings: TelemetrySettings,
    now: SimTime,
    feed: Feed,
    audit_seen: usize,
    supervisor_seen: usize,
    next_session: u64,
}

impl World {
    pub fn new(cfg: &WorldConfig, catalogue: Catalogue) -> Result<Self, WorldError> {
        let fabric = Fabric::from_config(&cfg.topology, cfg.seed)?;
        let mano = Mano::new(catalogue, &cfg.vims, fabric, cfg.mano.clone())?;
        let telemetry = Telemetry::new(cfg.seed);
        let mut supervisor = Supervisor::new(cfg.seed);
        let s = &cfg.telemetry;
        let reg = |sup: &mut Supervisor, id: String, src: String, every: u64| {
            sup.register(&id, &src, ms(every), 0)
                .map_err(|e| WorldError::InvalidRequest(e.to_string()))
        };
        for p in &cfg.paths {
            reg(&mut supervisor, format!("sdn-{}", p.id), format!("sdn:{}", p.id), s.sdn_poll_ms)?;
        }
        for v in &cfg.vims {
            reg(&mut supervisor, format!("vim-{}", v.id), format!("vim:{}", v.id), s.vim_poll_ms)?;
        }
        for c in &s.crashes {
            supervisor
                .inject_crash(&c.collector, ms(c.at_ms))
                .map_err(|_| WorldError::UnknownCollector(c.collector.clone()))?;
        }
        let mut w = Self {
            seed: cfg.seed,
            mano,
            telemetry,
            supervisor,
            hag: BTreeMap::new(),
            access_paths: cfg.access_paths.clone(),
            paths: cfg.paths.iter().map(|p| (p.id.clone(), p.clone())).collect(),
            aliases: BTreeMap::new(),
            settings: cfg.telemetry.clone(),
            now: 0,
            feed: Feed::default(),
            audit_seen: 0,
            supervisor_seen: 0,
            next_session: 1,
        };
        w.sync_feed(Vec::new());
        Ok(w)
    }

    /// Persist telemetry to `dir`, replaying whatever is already there.
    pub fn with_journal(mut self, dir: impl AsRef<std::path::Path>) -> Result<Self, WorldError> {
        self.telemetry = Telemetry::new(self.seed).with_journal(dir)?;
        Ok(self)
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mano(&self) -> &Mano {
        &self.mano
    }

    pub fn mano_mut(&mut self) -> &mut Mano {
        &mut self.mano
    }

    pub fn telemetry(&self) -> &Telemetry {
        &self.telemetry
    }

    pub fn supervisor(&self) -> &Supervisor {
        &self.supervisor
    }

    pub fn supervisor_events(&self) -> &[SupervisorEvent] {
        self.supervisor.events()
    }

    pub fn sessions(&self) -> &BTreeMap<String, HagSession> {
        &self.hag
    }

    pub fn paths(&self) -> impl Iterator<Item = &PathConfig> {
        self.paths.values()
    }

    pub fn aliases(&self) -> &BTreeMap<String, String> {
        &self.aliases
    }

    /// Resolve an alias to an instance id; unknown names pass through.
    pub fn resolve_ns<'a>(&'a self, name: &'a str) -> &'a str {
        self.aliases.get(name).map_or(name, String::as_str)
    }

    pub fn resolve_endpoint(&self, r: &str) -> Option<String> {
        resolve_endpoint(&self.mano, &self.aliases, r)
    }

    fn step(&mut self, t: SimTime) {
        self.now = self.now.max(t);
        let now = self.now;
        for s in self.hag.values_mut() {
            s.advance_to(now);
        }
        self.mano.poll(now);
        let mut probe = Probe {
            mano: &self.mano,
            hag: &self.hag,
            paths: &self.paths,
            aliases: &self.aliases,
            measure: self.settings.measure,
            captured: Vec::new(),
        };
        self.supervisor.advance_to(now, &mut probe, &mut self.telemetry);
        let captured = probe.captured;
        self.sync_feed(captured);
    }

    fn sync_feed(&mut self, samples: Vec<MetricSample>) {
        let audit = &self.mano.audit()[self.audit_seen..];
        for e in audit {
            self.feed.push(e.at, FeedKind::Audit, serde_json::to_value(e).expect("serializable"));
        }
        self.audit_seen += audit.len();
        let sup = &self.supervisor.events()[self.supervisor_seen..];
        for e in sup {
            self.feed
                .push(e.timestamp, FeedKind::Supervisor, serde_json::to_value(e).expect("serializable"));
        }
        self.supervisor_seen += sup.len();
        for s in samples {
            self.feed
                .push(s.timestamp, FeedKind::Metric, serde_json::to_value(&s).expect("serializable"));
        }
    }

    /// Advance every component to `until`, stopping at each lifecycle and
    /// collector deadline on the way.
    pub fn advance_to(&mut self, until: SimTime) {
        if until < self.now {
            return;
        }
        self.step(self.now);
        loop {
            let mut t = until;
            if let Some(w) = self.mano.next_wakeup().filter(|&w| w > self.now) {
                t = t.min(w);
            }
            if let Some(s) = self.supervisor.next_event_time().filter(|&s| s > self.now) {
                t = t.min(s);
            }
            self.step(t);
            if t >= until {
                break;
            }
        }
    }

    pub fn instantiate(
        &mut self,
        nsd: &str,
        constraints: &PlacementConstraints,
        alias: Option<&str>,
    ) -> Result<String, WorldError> {
        if let Some(a) = alias {
            if self.aliases.contains_key(a) {
                return Err(WorldError::Duplicate(a.into()));
            }
        }
        let id = self.mano.instantiate(nsd, constraints, self.now);
        self.sync_feed(Vec::new());
        let id = id?;
        if let Some(a) = alias {
            self.aliases.insert(a.into(), id.clone());
        }
        Ok(id)
    }

    pub fn migrate(&mut self, ns: &str, vnf: &str, target_vim: &str) -> Result<(), WorldError> {
        let id = self.resolve_ns(ns).to_string();
        let r = self.mano.migrate(&id, vnf, target_vim, self.now);
        self.sync_feed(Vec::new());
        Ok(r?)
    }

    pub fn scale(&mut self, ns: &str, vnf: &str, delta: i32) -> Result<(), WorldError> {
        let id = self.resolve_ns(ns).to_string();
        let r = self.mano.scale(&id, vnf, delta, self.now);
        self.sync_feed(Vec::new());
        Ok(r?)
    }

    pub fn terminate(&mut self, ns: &str) -> Result<NsState, WorldError> {
        let id = self.resolve_ns(ns).to_string();
        let r = self.mano.terminate(&id, self.now);
        self.sync_feed(Vec::new());
        Ok(r?)
    }

    pub fn ns_view(&self, ns: &str) -> Result<NsView, WorldError> {
        let id = self.resolve_ns(ns);
        let instance = self
            .mano
            .instance(id)
            .ok_or_else(|| ManoError::UnknownInstance(id.into()))?
            .clone();
        let audit = self.mano.audit_for(id).into_iter().cloned().collect();
        Ok(NsView { instance, audit })
    }

    pub fn measure(&self, path_id: &str, cfg: &MeasureConfig) -> Result<PathMeasurement, WorldError> {
        let p = self
            .paths
            .get(path_id)
            .ok_or_else(|| WorldError::UnknownPath(path_id.into()))?;
        let src = self
            .resolve_endpoint(&p.src)
            .ok_or_else(|| WorldError::NotDeployed(p.src.clone()))?;
        let dst = self
            .resolve_endpoint(&p.dst)
            .ok_or_else(|| WorldError::NotDeployed(p.dst.clone()))?;
        let mut m = self.mano.fabric().measure(&src, &dst, self.now, cfg)?;
        m.path_id = path_id.to_string();
        Ok(m)
    }

    pub fn set_link(&mut self, link: &str, up: bool) -> Result<(), WorldError> {
        Ok(self.mano.fabric_mut().set_link_up(link, up)?)
    }

    pub fn crash_collector(&mut self, collector: &str) -> Result<(), WorldError> {
        self.supervisor
            .inject_crash(collector, self.now)
            .map_err(|_| WorldError::UnknownCollector(collector.into()))
    }

    pub fn hag_open(
        &mut self,
        session: Option<&str>,
        path_ids: &[String],
        policy: Policy,
    ) -> Result<String, WorldError> {
        let id = match session {
            Some(s) => s.to_string(),
            None => loop {
                let c = format!("hag-{}", self.next_session);
                self.next_session += 1;
                if !self.hag.contains_key(&c) {
                    break c;
                }
            },
        };
        if self.hag.contains_key(&id) {
            return Err(WorldError::Duplicate(id));
        }
        let mut paths = Vec::new();
        for pid in path_ids {
            let p = self
                .access_paths
                .iter()
                .find(|a| &a.path_id == pid)
                .ok_or_else(|| HagError::UnknownPath(pid.clone()))?;
            paths.push(p.clone());
        }
        let seed = self.seed ^ crate::sim::fnv1a(id.as_bytes());
        let s = HagSession::open(&id, &paths, policy, seed, self.now)?.without_transmission_log();
        self.hag.insert(id.clone(), s);
        self.supervisor
            .register(&format!("hag-{id}"), &format!("hag:{id}"), ms(self.settings.hag_poll_ms), self.now)
            .map_err(|e| WorldError::InvalidRequest(e.to_string()))?;
        self.sync_feed(Vec::new());
        Ok(id)
    }

    fn session_mut(&mut self, id: &str) -> Result<&mut HagSession, WorldError> {
        self.hag.get_mut(id).ok_or_else(|| WorldError::UnknownSession(id.into()))
    }

    pub fn hag_send(&mut self, session: &str, bytes: u64) -> Result<SendReceipt, WorldError> {
        let now = self.now;
        Ok(self.session_mut(session)?.send(bytes, now)?)
    }

    pub fn hag_path(&mut self, session: &str, path: &str, up: bool) -> Result<(), WorldError> {
        let now = self.now;
        match self.session_mut(session)?.set_path(path, up, now) {
            Ok(_) | Err(HagError::LastPathDown) => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn hag_stats(&self, session: &str) -> Result<HagStats, WorldError> {
        self.hag
            .get(session)
            .map(HagSession::stats)
            .ok_or_else(|| WorldError::UnknownSession(session.into()))
    }

    pub fn signup(&mut self, client: &str) -> Result<ApiToken, WorldError> {
        Ok(self.telemetry.signup(client, self.now)?)
    }

    pub fn authenticate(&self, bearer: &str) -> AuthStatus {
        self.telemetry.authenticate(bearer, self.now)
    }

    pub fn ingest(&mut self, samples: &[MetricSample]) -> IngestReport {
        let report = self.telemetry.ingest(samples);
        self.sync_feed(Vec::new());
        report
    }

    pub fn query(
        &self,
        bearer: Option<&str>,
        source: &str,
        metric: Metric,
        t0: SimTime,
        t1: SimTime,
        agg: Aggregation,
    ) -> Result<QueryResult, WorldError> {
        Ok(self.telemetry.query(bearer, source, metric, t0, t1, agg, self.now)?)
    }

    /// Query without a token, for in-process consumers such as reports.
    pub fn query_internal(
        &self,
        source: &str,
        metric: Metric,
        t0: SimTime,
        t1: SimTime,
        agg: Aggregation,
    ) -> Result<QueryResult, WorldError> {
        Ok(self.telemetry.aggregate(source, metric, t0, t1, agg)?)
    }

    pub fn feed_since(&self, after: u64) -> Vec<FeedEvent> {
        self.feed.since(after)
    }

    pub fn last_event_id(&self) -> u64 {
        self.feed.next_id
    }

    pub fn topology(&self) -> TopologyView {
        let fabric = self.mano.fabric();
        TopologyView {
            now: self.now,
            vims: self.mano.vims().iter().map(|v| v.report()).collect(),
            switches: fabric
                .switches()
                .map(|s| SwitchView {
                    id: s.switch_id.clone(),
                    mode: s.mode,
                    ports: s.ports.len(),
                    flow_rules: s.flow_table.len(),
                    mac_entries: s.mac_table.len(),
                })
                .collect(),
            links: fabric.link_configs().cloned().collect(),
            endpoints: fabric.endpoints().cloned().collect(),
            access_paths: self.access_paths.clone(),
            paths: self.paths.values().cloned().collect(),
        }
    }

    /// Summary of instance states, used by reports.
    pub fn instance_states(&self) -> BTreeMap<String, NsState> {
        self.mano.instances().map(|i| (i.instance_id.clone(), i.state)).collect()
    }

    /// Every stored metric point as CSV, ordered by source, metric and time.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("source,metric,timestamp_us,value\n");
        for ((source, metric), points) in self.telemetry.metrics().streams() {
            for p in points {
                out.push_str(&format!("{source},{metric},{},{}\n", p.timestamp, p.value));
            }
        }
        out
    }

    pub fn snapshot(&self) -> Value {
        json!({
            "now": self.now,
            "instances": self.instance_states(),
            "vim_used": self.mano.vim_used(),
            "running_demand": self.mano.running_demand(),
            "installed_rules": self.mano.fabric().installed_rules(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{NsDescriptor, VnfDescriptor};
    use crate::sdn::{EndpointConfig, SwitchConfig};
    use crate::sim::secs;
    use crate::vim::{NodeConfig, SiteClass};

    fn world() -> World {
        let mut cat = Catalogue::new();
        cat.register_vnfd(VnfDescriptor::new("cache", 2, 1024, 10).with_ports(["eth0"]))
            .unwrap();
        cat.register_nsd(NsDescriptor::new("cache-ns", ["cache"])).unwrap();
        let cfg = WorldConfig {
            seed: 5,
            mano: ManoConfig::default(),
            vims: vec![
                VimConfig::standard("region", SiteClass::Regional, vec![NodeConfig::new("r1", 8, 8192, 100)])
                    .at_switch("core"),
                VimConfig::restricted("edge", SiteClass::Edge, vec![NodeConfig::new("e1", 4, 8192, 100)])
                    .at_switch("edge"),
            ],
            topology: TopologyConfig {
                switches: vec![
                    SwitchConfig {
                        id: "core".into(),
                        mode: Default::default(),
                    },
                    SwitchConfig {
                        id: "edge".into(),
                        mode: Default::default(),
                    },
                ],
                links: vec![TopologyLink::new("l1", "core", "edge", 500, 10_000.0)],
                endpoints: vec![EndpointConfig {
                    id: "ue".into(),
                    switch: "edge".into(),
                    mac: None,
                    access: None,
                }],
            },
            access_paths: vec![
                AccessPathConfig::new("nr", crate::hag::Technology::Nr3500Mhz, 2_000, 100.0),
                AccessPathConfig::new("wifi", crate::hag::Technology::Wifi, 5_000, 50.0),
            ],
            paths: vec![PathConfig {
                id: "ue-cache".into(),
                src: "ue".into(),
                dst: "ns:c/cache".into(),
            }],
            telemetry: TelemetrySettings::default(),
        };
        World::new(&cfg, cat).unwrap()
    }

    fn regional() -> PlacementConstraints {
        PlacementConstraints {
            pin: [("cache".to_string(), "region".to_string())].into(),
            ..Default::default()
        }
    }

    #[test]
    fn lifecycle_through_the_world() {
        let mut w = world();
        let id = w.instantiate("cache-ns", &regional(), Some("c")).unwrap();
        assert_eq!(w.ns_view("c").unwrap().instance.instance_id, id);
        w.advance_to(secs(3));
        assert_eq!(w.ns_view(&id).unwrap().instance.state, NsState::Running);
        let m = w.measure("ue-cache", &MeasureConfig::default()).unwrap();
        assert!(m.latency_us > 0.0);
        assert_eq!(w.terminate("c").unwrap(), NsState::Terminated);
    }

    #[test]
    fn collectors_feed_telemetry_and_the_event_stream() {
        let mut w = world();
        w.instantiate("cache-ns", &regional(), Some("c")).unwrap();
        w.advance_to(secs(10));
        let q = w
            .query_internal("sdn:ue-cache", Metric::LatencyUs, 0, secs(10), Aggregation::Raw)
            .unwrap();
        let QueryResult::Series(points) = q else { panic!() };
        assert!(points.len() >= 8, "{}", points.len());
        let vim = w
            .query_internal("vim:region", Metric::VcpuUsed, 0, secs(10), Aggregation::Max)
            .unwrap();
        assert!(matches!(vim, QueryResult::Scalar(v) if v > 0.0));

        let all = w.feed_since(0);
        assert!(all.windows(2).all(|p| p[1].id == p[0].id + 1));
        assert!(all.iter().any(|e| e.kind == FeedKind::Audit));
        assert!(all.iter().any(|e| e.kind == FeedKind::Metric));
        let tail = w.feed_since(all[all.len() / 2].id);
        assert_eq!(tail.first().unwrap().id, all[all.len() / 2].id + 1);
    }

    #[test]
    fn hag_session_is_driven_by_the_world_clock() {
        let mut w = world();
        let id = w
            .hag_open(None, &["nr".into(), "wifi".into()], Policy::MinRtt)
            .unwrap();
        w.hag_send(&id, 1_000_000).unwrap();
        w.advance_to(secs(2));
        let st = w.hag_stats(&id).unwrap();
        assert_eq!(st.bytes_delivered, 1_000_000);
        let q = w
            .query_internal(&format!("hag:{id}"), Metric::ThroughputMbps, 0, secs(2), Aggregation::Max)
            .unwrap();
        assert!(matches!(q, QueryResult::Scalar(v) if v > 0.0));
        assert!(matches!(
            w.hag_open(Some(&id), &["nr".into()], Policy::RoundRobin),
            Err(WorldError::Duplicate(_))
        ));
    }

    #[test]
    fn same_seed_same_metrics() {
        let run = || {
            let mut w = world();
            w.instantiate("cache-ns", &regional(), Some("c")).unwrap();
            w.advance_to(secs(6));
            w.metrics_csv()
        };
        assert_eq!(run(), run());
    }
}
