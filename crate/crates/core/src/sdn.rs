//! Simulated SDN controller and L2 switch fabric.
//!
//! Switches run in one of two modes. In `mac_learning` they learn source
//! MACs per ingress port and flood unknown destinations; in `static_flows`
//! only installed flow rules forward anything. Flow rules are consulted first
//! in both modes, so slice and steering rules work either way.
//!
//! Slices reserve bandwidth on each directional link of a path. Each link
//! runs deficit round robin over its slice queues with a quantum proportional
//! to the slice guarantee; the unreserved share goes to best-effort traffic,
//! or to the highest-priority backlogged slice while best effort is idle.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::sim::{secs, Link, LinkSpec, Packet, SimClock, SimTime, TxOutcome};

pub type PortId = u32;
pub type RuleId = u64;

/// MAC entries older than this are ignored and relearned.
pub const MAC_AGING: SimTime = secs(300);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddr(pub u64);

impl MacAddr {
    pub const BROADCAST: MacAddr = MacAddr(0xffff_ffff_ffff);

    /// Locally administered unicast address derived from a small index.
    pub fn local(index: u64) -> MacAddr {
        MacAddr(0x0200_0000_0000 | (index & 0xff_ffff_ffff))
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0.to_be_bytes();
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[2], b[3], b[4], b[5], b[6], b[7]
        )
    }
}

impl FromStr for MacAddr {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 6 {
            return Err(format!("bad mac {s:?}"));
        }
        let mut v = 0u64;
        for p in parts {
            let byte = u8::from_str_radix(p, 16).map_err(|_| format!("bad mac {s:?}"))?;
            v = (v << 8) | u64::from(byte);
        }
        Ok(MacAddr(v))
    }
}

impl Serialize for MacAddr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub src: MacAddr,
    pub dst: MacAddr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_tag: Option<u32>,
}

impl Frame {
    pub fn new(src: MacAddr, dst: MacAddr) -> Self {
        Self {
            src,
            dst,
            slice_tag: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardMode {
    #[default]
    MacLearning,
    StaticFlows,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_port: Option<PortId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_mac: Option<MacAddr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_mac: Option<MacAddr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_tag: Option<u32>,
}

impl FlowMatch {
    pub fn dst(mac: MacAddr) -> Self {
        Self {
            dst_mac: Some(mac),
            ..Self::default()
        }
    }

    pub fn tag(tag: u32) -> Self {
        Self {
            slice_tag: Some(tag),
            ..Self::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.in_port.is_none() && self.src_mac.is_none() && self.dst_mac.is_none() && self.slice_tag.is_none()
    }

    pub fn matches(&self, in_port: PortId, frame: &Frame) -> bool {
        self.in_port.is_none_or(|p| p == in_port)
            && self.src_mac.is_none_or(|m| m == frame.src)
            && self.dst_mac.is_none_or(|m| m == frame.dst)
            && self.slice_tag.is_none_or(|t| Some(t) == frame.slice_tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum FlowAction {
    Output { port: PortId },
    Drop,
    Enqueue { port: PortId, queue: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRule {
    pub id: RuleId,
    pub priority: i32,
    #[serde(rename = "match")]
    pub matcher: FlowMatch,
    pub action: FlowAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PortAttachment {
    Link {
        link_id: String,
        peer_switch: String,
        peer_port: PortId,
    },
    Endpoint {
        endpoint: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacEntry {
    pub port: PortId,
    pub learned_at: SimTime,
}

#[derive(Debug, Clone, Serialize)]
pub struct Switch {
    pub switch_id: String,
    pub mode: ForwardMode,
    pub ports: BTreeMap<PortId, PortAttachment>,
    pub mac_table: BTreeMap<MacAddr, MacEntry>,
    /// Sorted by descending priority, then by installation order.
    pub flow_table: Vec<FlowRule>,
}

/// What a switch did with one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardDecision {
    pub ports: Vec<PortId>,
    pub flooded: bool,
    pub rule: Option<RuleId>,
}

impl Switch {
    pub fn new(id: impl Into<String>, mode: ForwardMode) -> Self {
        Self {
            switch_id: id.into(),
            mode,
            ports: BTreeMap::new(),
            mac_table: BTreeMap::new(),
            flow_table: Vec::new(),
        }
    }

    fn next_free_port(&self) -> PortId {
        self.ports.keys().next_back().map_or(1, |p| p + 1)
    }

    fn lookup_rule(&self, in_port: PortId, frame: &Frame) -> Option<&FlowRule> {
        self.flow_table.iter().find(|r| r.matcher.matches(in_port, frame))
    }

    fn insert_rule(&mut self, rule: FlowRule) {
        // stable: after every rule with priority >= the new one
        let pos = self
            .flow_table
            .iter()
            .position(|r| r.priority < rule.priority)
            .unwrap_or(self.flow_table.len());
        self.flow_table.insert(pos, rule);
    }

    pub fn forward(&mut self, in_port: PortId, frame: &Frame, now: SimTime) -> ForwardDecision {
        let none = ForwardDecision {
            ports: Vec::new(),
            flooded: false,
            rule: None,
        };
        if !self.ports.contains_key(&in_port) {
            return none;
        }
        if self.mode == ForwardMode::MacLearning && frame.src != MacAddr::BROADCAST {
            self.mac_table.insert(
                frame.src,
                MacEntry {
                    port: in_port,
                    learned_at: now,
                },
            );
        }
        if let Some(rule) = self.lookup_rule(in_port, frame) {
            let ports = match rule.action {
                FlowAction::Output { port } | FlowAction::Enqueue { port, .. } => vec![port],
                FlowAction::Drop => Vec::new(),
            };
            return ForwardDecision {
                ports,
                flooded: false,
                rule: Some(rule.id),
            };
        }
        match self.mode {
            ForwardMode::StaticFlows => none,
            ForwardMode::MacLearning => {
                let known = self
                    .mac_table
                    .get(&frame.dst)
                    .filter(|e| now.saturating_sub(e.learned_at) < MAC_AGING);
                match known {
                    Some(e) if e.port == in_port => none,
                    Some(e) => ForwardDecision {
                        ports: vec![e.port],
                        flooded: false,
                        rule: None,
                    },
                    None => ForwardDecision {
                        ports: self.ports.keys().copied().filter(|p| *p != in_port).collect(),
                        flooded: true,
                        rule: None,
                    },
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SdnError {
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error("link {link}: slice needs {requested} Mbps, only {available} Mbps unreserved")]
    CapacityExceeded {
        link: String,
        requested: String,
        available: String,
    },
    #[error("no path: {0}")]
    NoPath(String),
    #[error("switch {switch} port {port} already in use")]
    PortInUse { switch: String, port: PortId },
    #[error("unknown switch {0}")]
    UnknownSwitch(String),
    #[error("unknown endpoint {0}")]
    UnknownEndpoint(String),
    #[error("unknown rule {0}")]
    UnknownRule(RuleId),
    #[error("unknown link {0}")]
    UnknownLink(String),
    #[error("duplicate id {0}")]
    Duplicate(String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchConfig {
    pub id: String,
    #[serde(default)]
    pub mode: ForwardMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyLink {
    pub id: String,
    pub a: String,
    pub b: String,
    pub latency_us: u64,
    #[serde(default)]
    pub jitter_us: u64,
    #[serde(default)]
    pub loss_prob: f64,
    pub capacity_mbps: f64,
    #[serde(default = "yes")]
    pub up: bool,
}

fn yes() -> bool {
    true
}

impl TopologyLink {
    pub fn new(id: &str, a: &str, b: &str, latency_us: u64, capacity_mbps: f64) -> Self {
        Self {
            id: id.into(),
            a: a.into(),
            b: b.into(),
            latency_us,
            jitter_us: 0,
            loss_prob: 0.0,
            capacity_mbps,
            up: true,
        }
    }

    pub fn spec(&self) -> LinkSpec {
        LinkSpec {
            id: self.id.clone(),
            latency_us: self.latency_us,
            jitter_us: self.jitter_us,
            loss_prob: self.loss_prob,
            capacity_mbps: self.capacity_mbps,
            up: self.up,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub id: String,
    pub switch: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mac: Option<MacAddr>,
    /// Attachment link characteristics; omitted means an ideal attachment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub access: Option<AccessSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessSpec {
    pub latency_us: u64,
    #[serde(default)]
    pub jitter_us: u64,
    #[serde(default)]
    pub loss_prob: f64,
    pub capacity_mbps: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub switches: Vec<SwitchConfig>,
    #[serde(default)]
    pub links: Vec<TopologyLink>,
    #[serde(default)]
    pub endpoints: Vec<EndpointConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceProfile {
    pub slice_id: String,
    pub guaranteed_mbps: f64,
    pub priority: i32,
    pub slice_tag: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMeasurement {
    pub path_id: String,
    pub latency_us: f64,
    pub jitter_us: f64,
    pub loss_rate: f64,
    pub throughput_mbps: f64,
    pub measured_at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureConfig {
    pub probes: u32,
    pub probe_interval_us: u64,
    pub probe_bytes: u32,
    /// Length of the saturating burst; zero skips the throughput phase.
    pub burst_us: u64,
    pub burst_packet_bytes: u32,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            probes: 20,
            probe_interval_us: 10_000,
            probe_bytes: 64,
            burst_us: secs(1),
            burst_packet_bytes: 1500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AtoB,
    BtoA,
}

#[derive(Debug, Clone)]
struct FabricLink {
    cfg: TopologyLink,
    ab: Link,
    ba: Link,
    reservations: BTreeMap<Direction, Vec<SliceProfile>>,
}

impl FabricLink {
    fn reserved(&self, dir: Direction) -> f64 {
        self.reservations
            .get(&dir)
            .map_or(0.0, |v| v.iter().map(|s| s.guaranteed_mbps).sum())
    }

    fn direction_from(&self, switch: &str) -> Direction {
        if self.cfg.a == switch {
            Direction::AtoB
        } else {
            Direction::BtoA
        }
    }

    fn link(&self, dir: Direction) -> &Link {
        match dir {
            Direction::AtoB => &self.ab,
            Direction::BtoA => &self.ba,
        }
    }

    fn set_up(&mut self, up: bool) {
        self.cfg.up = up;
        self.ab.set_up(up);
        self.ba.set_up(up);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EndpointInfo {
    pub id: String,
    pub mac: MacAddr,
    pub switch: String,
    pub port: PortId,
    #[serde(skip)]
    access: Option<(Link, Link)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub switches: Vec<String>,
    pub links: Vec<String>,
    pub latency_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleOp {
    Install,
    Remove,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleLogEntry {
    pub batch: u64,
    pub at: SimTime,
    pub op: RuleOp,
    pub switch: String,
    pub rule: FlowRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstalledSlice {
    pub profile: SliceProfile,
    pub path: Vec<String>,
    pub links: Vec<(String, Direction)>,
    pub rules: Vec<(String, RuleId)>,
}

/// Where a frame went after crossing the fabric.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Delivery {
    /// Endpoints whose port the frame reached.
    pub reached: BTreeSet<String>,
    /// Endpoints that accepted it (destination MAC or broadcast).
    pub accepted: BTreeSet<String>,
    pub floods: usize,
}

pub const SLICE_RULE_PRIORITY: i32 = 1_000;

#[derive(Debug, Clone)]
pub struct Fabric {
    seed: u64,
    switches: BTreeMap<String, Switch>,
    links: BTreeMap<String, FabricLink>,
    endpoints: BTreeMap<String, EndpointInfo>,
    slices: BTreeMap<String, InstalledSlice>,
    rule_owner: BTreeMap<RuleId, String>,
    rule_log: Vec<RuleLogEntry>,
    next_rule: RuleId,
    next_batch: u64,
    next_mac: u64,
}

impl Fabric {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            switches: BTreeMap::new(),
            links: BTreeMap::new(),
            endpoints: BTreeMap::new(),
            slices: BTreeMap::new(),
            rule_owner: BTreeMap::new(),
            rule_log: Vec::new(),
            next_rule: 1,
            next_batch: 0,
            next_mac: 1,
        }
    }

    pub fn from_config(cfg: &TopologyConfig, seed: u64) -> Result<Self, SdnError> {
        let mut f = Self::new(seed);
        for s in &cfg.switches {
            f.add_switch(&s.id, s.mode)?;
        }
        for l in &cfg.links {
            f.add_link(l.clone())?;
        }
        for e in &cfg.endpoints {
            f.attach_endpoint(e)?;
        }
        Ok(f)
    }

    pub fn add_switch(&mut self, id: &str, mode: ForwardMode) -> Result<(), SdnError> {
        if self.switches.contains_key(id) {
            return Err(SdnError::Duplicate(id.into()));
        }
        self.switches.insert(id.into(), Switch::new(id, mode));
        Ok(())
    }

    pub fn add_link(&mut self, cfg: TopologyLink) -> Result<(), SdnError> {
        if self.links.contains_key(&cfg.id) {
            return Err(SdnError::Duplicate(cfg.id));
        }
        if cfg.a == cfg.b {
            return Err(SdnError::InvalidTopology(format!("link {} is a self-loop", cfg.id)));
        }
        for s in [&cfg.a, &cfg.b] {
            if !self.switches.contains_key(s) {
                return Err(SdnError::UnknownSwitch(s.clone()));
            }
        }
        let spec = cfg.spec();
        let ab = Link::new(LinkSpec { id: format!("{}>", cfg.id), ..spec.clone() }, self.seed)
            .map_err(|e| SdnError::InvalidTopology(e.to_string()))?;
        let ba = Link::new(LinkSpec { id: format!("{}<", cfg.id), ..spec }, self.seed)
            .map_err(|e| SdnError::InvalidTopology(e.to_string()))?;
        let a_port = self.switches[&cfg.a].next_free_port();
        let b_port = self.switches[&cfg.b].next_free_port();
        self.switches.get_mut(&cfg.a).expect("checked").ports.insert(
            a_port,
            PortAttachment::Link {
                link_id: cfg.id.clone(),
                peer_switch: cfg.b.clone(),
                peer_port: b_port,
            },
        );
        self.switches.get_mut(&cfg.b).expect("checked").ports.insert(
            b_port,
            PortAttachment::Link {
                link_id: cfg.id.clone(),
                peer_switch: cfg.a.clone(),
                peer_port: a_port,
            },
        );
        self.links.insert(
            cfg.id.clone(),
            FabricLink {
                cfg,
                ab,
                ba,
                reservations: BTreeMap::new(),
            },
        );
        Ok(())
    }

    fn fresh_mac(&mut self) -> MacAddr {
        loop {
            let mac = MacAddr::local(self.next_mac);
            self.next_mac += 1;
            if self.endpoints.values().all(|e| e.mac != mac) {
                return mac;
            }
        }
    }

    pub fn attach_endpoint(&mut self, cfg: &EndpointConfig) -> Result<MacAddr, SdnError> {
        let port = self
            .switches
            .get(&cfg.switch)
            .ok_or_else(|| SdnError::UnknownSwitch(cfg.switch.clone()))?
            .next_free_port();
        self.plug(cfg, port)
    }

    /// Attach a new endpoint to a specific free port at runtime.
    pub fn hot_plug(
        &mut self,
        switch: &str,
        port: PortId,
        endpoint: &str,
        mac: Option<MacAddr>,
    ) -> Result<MacAddr, SdnError> {
        let sw = self
            .switches
            .get(switch)
            .ok_or_else(|| SdnError::UnknownSwitch(switch.into()))?;
        if sw.ports.contains_key(&port) {
            return Err(SdnError::PortInUse {
                switch: switch.into(),
                port,
            });
        }
        self.plug(
            &EndpointConfig {
                id: endpoint.into(),
                switch: switch.into(),
                mac,
                access: None,
            },
            port,
        )
    }

    fn plug(&mut self, cfg: &EndpointConfig, port: PortId) -> Result<MacAddr, SdnError> {
        if self.endpoints.contains_key(&cfg.id) {
            return Err(SdnError::Duplicate(cfg.id.clone()));
        }
        if let Some(m) = cfg.mac {
            if self.endpoints.values().any(|e| e.mac == m) {
                return Err(SdnError::Duplicate(m.to_string()));
            }
        }
        let mac = match cfg.mac {
            Some(m) => m,
            None => self.fresh_mac(),
        };
        let access = match &cfg.access {
            Some(a) => {
                let spec = LinkSpec {
                    id: format!("access/{}", cfg.id),
                    latency_us: a.latency_us,
                    jitter_us: a.jitter_us,
                    loss_prob: a.loss_prob,
                    capacity_mbps: a.capacity_mbps,
                    up: true,
                };
                let up = Link::new(LinkSpec { id: format!("{}>", spec.id), ..spec.clone() }, self.seed)
                    .map_err(|e| SdnError::InvalidTopology(e.to_string()))?;
                let down = Link::new(LinkSpec { id: format!("{}<", spec.id), ..spec }, self.seed)
                    .map_err(|e| SdnError::InvalidTopology(e.to_string()))?;
                Some((up, down))
            }
            None => None,
        };
        self.switches
            .get_mut(&cfg.switch)
            .ok_or_else(|| SdnError::UnknownSwitch(cfg.switch.clone()))?
            .ports
            .insert(
                port,
                PortAttachment::Endpoint {
                    endpoint: cfg.id.clone(),
                },
            );
        self.endpoints.insert(
            cfg.id.clone(),
            EndpointInfo {
                id: cfg.id.clone(),
                mac,
                switch: cfg.switch.clone(),
                port,
                access,
            },
        );
        Ok(mac)
    }

    /// Attach an endpoint at the next free port of `switch`. Unlike
    /// [`Fabric::hot_plug`] the MAC may be shared with an endpoint that is
    /// about to be detached, as during VM migration.
    pub fn attach(&mut self, endpoint: &str, switch: &str, mac: MacAddr) -> Result<PortId, SdnError> {
        if self.endpoints.contains_key(endpoint) {
            return Err(SdnError::Duplicate(endpoint.into()));
        }
        let sw = self
            .switches
            .get_mut(switch)
            .ok_or_else(|| SdnError::UnknownSwitch(switch.into()))?;
        let port = sw.next_free_port();
        sw.ports.insert(
            port,
            PortAttachment::Endpoint {
                endpoint: endpoint.into(),
            },
        );
        self.endpoints.insert(
            endpoint.into(),
            EndpointInfo {
                id: endpoint.into(),
                mac,
                switch: switch.into(),
                port,
                access: None,
            },
        );
        Ok(port)
    }

    /// Remove an endpoint, its port, and MAC entries that pointed at the port.
    pub fn detach(&mut self, endpoint: &str) -> Result<(), SdnError> {
        let ep = self
            .endpoints
            .remove(endpoint)
            .ok_or_else(|| SdnError::UnknownEndpoint(endpoint.into()))?;
        let sw = self.switches.get_mut(&ep.switch).expect("endpoint switch exists");
        sw.ports.remove(&ep.port);
        sw.mac_table.retain(|_, e| e.port != ep.port);
        Ok(())
    }

    pub fn allocate_mac(&mut self) -> MacAddr {
        self.fresh_mac()
    }

    /// Broadcast a frame from `endpoint` so learning switches update their tables.
    pub fn announce(&mut self, endpoint: &str, now: SimTime) -> Result<Delivery, SdnError> {
        let mac = self
            .endpoint(endpoint)
            .ok_or_else(|| SdnError::UnknownEndpoint(endpoint.into()))?
            .mac;
        self.send_frame(endpoint, Frame::new(mac, MacAddr::BROADCAST), now)
    }

    /// First-hop port on `from` towards `to` along the current route, or
    /// `None` when `from == to` or no route exists.
    pub fn next_hop_port(&self, from: &str, to: &str) -> Option<PortId> {
        let route = self.route(from, to)?;
        let next = route.switches.get(1)?;
        self.port_towards(from, next, true).map(|p| p.0)
    }

    pub fn switch(&self, id: &str) -> Option<&Switch> {
        self.switches.get(id)
    }

    pub fn switches(&self) -> impl Iterator<Item = &Switch> {
        self.switches.values()
    }

    pub fn endpoint(&self, id: &str) -> Option<&EndpointInfo> {
        self.endpoints.get(id)
    }

    pub fn endpoints(&self) -> impl Iterator<Item = &EndpointInfo> {
        self.endpoints.values()
    }

    pub fn link_config(&self, id: &str) -> Option<&TopologyLink> {
        self.links.get(id).map(|l| &l.cfg)
    }

    pub fn link_configs(&self) -> impl Iterator<Item = &TopologyLink> {
        self.links.values().map(|l| &l.cfg)
    }

    pub fn slices(&self) -> impl Iterator<Item = &InstalledSlice> {
        self.slices.values()
    }

    pub fn rule_log(&self) -> &[RuleLogEntry] {
        &self.rule_log
    }

    pub fn set_mode(&mut self, mode: ForwardMode) {
        for s in self.switches.values_mut() {
            s.mode = mode;
        }
    }

    pub fn set_link_up(&mut self, link_id: &str, up: bool) -> Result<(), SdnError> {
        self.links
            .get_mut(link_id)
            .ok_or_else(|| SdnError::UnknownLink(link_id.into()))?
            .set_up(up);
        Ok(())
    }

    pub fn installed_rules(&self) -> usize {
        self.switches.values().map(|s| s.flow_table.len()).sum()
    }

    fn validate_rule(&self, switch: &str, m: &FlowMatch, action: &FlowAction) -> Result<(), SdnError> {
        let sw = self
            .switches
            .get(switch)
            .ok_or_else(|| SdnError::UnknownSwitch(switch.into()))?;
        if m.is_empty() {
            return Err(SdnError::InvalidRule("at least one match field is required".into()));
        }
        if let Some(p) = m.in_port {
            if !sw.ports.contains_key(&p) {
                return Err(SdnError::InvalidRule(format!("in_port {p} does not exist on {switch}")));
            }
        }
        match *action {
            FlowAction::Output { port } => {
                if !sw.ports.contains_key(&port) {
                    return Err(SdnError::InvalidRule(format!("port {port} does not exist on {switch}")));
                }
            }
            FlowAction::Enqueue { port, queue } => {
                let Some(PortAttachment::Link { link_id, .. }) = sw.ports.get(&port) else {
                    return Err(SdnError::InvalidRule(format!("port {port} on {switch} is not a link port")));
                };
                let fl = &self.links[link_id];
                let dir = fl.direction_from(switch);
                let exists = fl
                    .reservations
                    .get(&dir)
                    .is_some_and(|v| v.iter().any(|s| s.slice_tag == queue));
                if !exists {
                    return Err(SdnError::InvalidRule(format!("queue {queue} does not exist on link {link_id}")));
                }
            }
            FlowAction::Drop => {}
        }
        Ok(())
    }

    fn begin_batch(&mut self) -> u64 {
        let b = self.next_batch;
        self.next_batch += 1;
        b
    }

    fn install_in_batch(
        &mut self,
        batch: u64,
        switch: &str,
        priority: i32,
        matcher: FlowMatch,
        action: FlowAction,
        now: SimTime,
    ) -> Result<RuleId, SdnError> {
        self.validate_rule(switch, &matcher, &action)?;
        let rule = FlowRule {
            id: self.next_rule,
            priority,
            matcher,
            action,
        };
        self.next_rule += 1;
        self.rule_log.push(RuleLogEntry {
            batch,
            at: now,
            op: RuleOp::Install,
            switch: switch.into(),
            rule: rule.clone(),
        });
        self.rule_owner.insert(rule.id, switch.into());
        let id = rule.id;
        self.switches.get_mut(switch).expect("validated").insert_rule(rule);
        Ok(id)
    }

    fn remove_in_batch(&mut self, batch: u64, rule_id: RuleId, now: SimTime) -> Result<(), SdnError> {
        let switch = self
            .rule_owner
            .remove(&rule_id)
            .ok_or(SdnError::UnknownRule(rule_id))?;
        let sw = self.switches.get_mut(&switch).expect("owner switch exists");
        let pos = sw
            .flow_table
            .iter()
            .position(|r| r.id == rule_id)
            .expect("owned rule is installed");
        let rule = sw.flow_table.remove(pos);
        self.rule_log.push(RuleLogEntry {
            batch,
            at: now,
            op: RuleOp::Remove,
            switch,
            rule,
        });
        Ok(())
    }

    pub fn install_flow(
        &mut self,
        switch: &str,
        priority: i32,
        matcher: FlowMatch,
        action: FlowAction,
        now: SimTime,
    ) -> Result<RuleId, SdnError> {
        let batch = self.begin_batch();
        self.install_in_batch(batch, switch, priority, matcher, action, now)
    }

    pub fn remove_flow(&mut self, rule_id: RuleId, now: SimTime) -> Result<(), SdnError> {
        let batch = self.begin_batch();
        self.remove_in_batch(batch, rule_id, now)
    }

    /// Install and remove a set of rules as one atomic step. Validation
    /// happens up front so that either everything applies or nothing does.
    pub fn apply_batch(
        &mut self,
        installs: &[(String, i32, FlowMatch, FlowAction)],
        removes: &[RuleId],
        now: SimTime,
    ) -> Result<Vec<RuleId>, SdnError> {
        for (sw, _, m, a) in installs {
            self.validate_rule(sw, m, a)?;
        }
        for r in removes {
            if !self.rule_owner.contains_key(r) {
                return Err(SdnError::UnknownRule(*r));
            }
        }
        let batch = self.begin_batch();
        let mut ids = Vec::with_capacity(installs.len());
        for (sw, prio, m, a) in installs {
            ids.push(self.install_in_batch(batch, sw, *prio, m.clone(), *a, now)?);
        }
        for r in removes {
            self.remove_in_batch(batch, *r, now)?;
        }
        Ok(ids)
    }

    pub fn has_rule(&self, rule_id: RuleId) -> bool {
        self.rule_owner.contains_key(&rule_id)
    }

    /// Port on `from` that leads over a link to `to`, with the link id.
    fn port_towards(&self, from: &str, to: &str, up_only: bool) -> Option<(PortId, String)> {
        self.switches.get(from)?.ports.iter().find_map(|(p, att)| match att {
            PortAttachment::Link {
                link_id,
                peer_switch,
                ..
            } if peer_switch == to && (!up_only || self.links[link_id].cfg.up) => Some((*p, link_id.clone())),
            _ => None,
        })
    }

    /// Shortest-latency route between two switches over up links.
    /// Ties resolve towards lexicographically smaller switch ids.
    pub fn route(&self, from: &str, to: &str) -> Option<Route> {
        if !self.switches.contains_key(from) || !self.switches.contains_key(to) {
            return None;
        }
        let mut dist: BTreeMap<&str, u64> = BTreeMap::new();
        let mut prev: BTreeMap<&str, (&str, &str)> = BTreeMap::new();
        let mut heap = BinaryHeap::new();
        dist.insert(from, 0);
        heap.push(std::cmp::Reverse((0u64, from)));
        while let Some(std::cmp::Reverse((d, u))) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            if u == to {
                break;
            }
            for att in self.switches[u].ports.values() {
                let PortAttachment::Link {
                    link_id,
                    peer_switch,
                    ..
                } = att
                else {
                    continue;
                };
                let l = &self.links[link_id];
                if !l.cfg.up {
                    continue;
                }
                let nd = d + l.cfg.latency_us;
                let v = peer_switch.as_str();
                if dist.get(v).is_none_or(|&old| nd < old) {
                    dist.insert(v, nd);
                    prev.insert(v, (u, link_id.as_str()));
                    heap.push(std::cmp::Reverse((nd, v)));
                }
            }
        }
        let latency_us = *dist.get(to)?;
        let mut switches = vec![to.to_string()];
        let mut links = Vec::new();
        let mut cur = to;
        while cur != from {
            let (p, l) = prev[cur];
            links.push(l.to_string());
            switches.push(p.to_string());
            cur = p;
        }
        switches.reverse();
        links.reverse();
        Some(Route {
            switches,
            links,
            latency_us,
        })
    }

    /// Send one frame from an endpoint into the fabric and follow it to every
    /// endpoint port it reaches.
    pub fn send_frame(&mut self, from_endpoint: &str, frame: Frame, now: SimTime) -> Result<Delivery, SdnError> {
        let ep = self
            .endpoints
            .get(from_endpoint)
            .ok_or_else(|| SdnError::UnknownEndpoint(from_endpoint.into()))?;
        let mut delivery = Delivery::default();
        let mut work = VecDeque::from([(ep.switch.clone(), ep.port)]);
        let mut visited = BTreeSet::new();
        while let Some((sw_id, in_port)) = work.pop_front() {
            if !visited.insert((sw_id.clone(), in_port)) {
                continue;
            }
            let sw = self.switches.get_mut(&sw_id).expect("switch exists");
            let decision = sw.forward(in_port, &frame, now);
            if decision.flooded {
                delivery.floods += 1;
            }
            for port in decision.ports {
                match self.switches[&sw_id].ports.get(&port) {
                    Some(PortAttachment::Endpoint { endpoint }) => {
                        if endpoint == from_endpoint {
                            continue;
                        }
                        delivery.reached.insert(endpoint.clone());
                        let mac = self.endpoints[endpoint].mac;
                        if frame.dst == mac || frame.dst == MacAddr::BROADCAST {
                            delivery.accepted.insert(endpoint.clone());
                        }
                    }
                    Some(PortAttachment::Link {
                        link_id,
                        peer_switch,
                        peer_port,
                    }) if self.links[link_id].cfg.up => {
                        work.push_back((peer_switch.clone(), *peer_port));
                    }
                    Some(PortAttachment::Link { .. }) => {}
                    None => {}
                }
            }
        }
        Ok(delivery)
    }

    /// Request/reply exchange between two endpoints; true if both legs are accepted.
    pub fn ping(&mut self, a: &str, b: &str, now: SimTime) -> Result<bool, SdnError> {
        let ma = self.endpoint(a).ok_or_else(|| SdnError::UnknownEndpoint(a.into()))?.mac;
        let mb = self.endpoint(b).ok_or_else(|| SdnError::UnknownEndpoint(b.into()))?.mac;
        let there = self.send_frame(a, Frame::new(ma, mb), now)?;
        if !there.accepted.contains(b) {
            return Ok(false);
        }
        let back = self.send_frame(b, Frame::new(mb, ma), now)?;
        Ok(back.accepted.contains(a))
    }

    /// Reserve `profile` along `path` (ordered switch ids) and install the
    /// classification rules that steer tagged frames into the slice queues.
    pub fn apply_slice(&mut self, profile: SliceProfile, path: &[String], now: SimTime) -> Result<Vec<RuleId>, SdnError> {
        if self.slices.contains_key(&profile.slice_id) {
            return Err(SdnError::Duplicate(profile.slice_id));
        }
        if profile.guaranteed_mbps.is_nan() || profile.guaranteed_mbps <= 0.0 {
            return Err(SdnError::InvalidRule("guaranteed_mbps must be positive".into()));
        }
        if path.is_empty() {
            return Err(SdnError::NoPath("empty path".into()));
        }
        let mut hops = Vec::new();
        for w in path.windows(2) {
            if !self.switches.contains_key(&w[0]) {
                return Err(SdnError::UnknownSwitch(w[0].clone()));
            }
            let (port, link_id) = self
                .port_towards(&w[0], &w[1], true)
                .ok_or_else(|| SdnError::NoPath(format!("no up link from {} to {}", w[0], w[1])))?;
            let fl = &self.links[&link_id];
            let dir = fl.direction_from(&w[0]);
            let available = fl.cfg.capacity_mbps - fl.reserved(dir);
            if profile.guaranteed_mbps > available + 1e-9 {
                return Err(SdnError::CapacityExceeded {
                    link: link_id,
                    requested: format!("{}", profile.guaranteed_mbps),
                    available: format!("{available}"),
                });
            }
            hops.push((w[0].clone(), port, link_id, dir));
        }
        if let Some(last) = path.last() {
            if !self.switches.contains_key(last) {
                return Err(SdnError::UnknownSwitch(last.clone()));
            }
        }
        for (_, _, link_id, dir) in &hops {
            self.links
                .get_mut(link_id)
                .expect("checked")
                .reservations
                .entry(*dir)
                .or_default()
                .push(profile.clone());
        }
        let installs: Vec<_> = hops
            .iter()
            .map(|(sw, port, _, _)| {
                (
                    sw.clone(),
                    SLICE_RULE_PRIORITY + profile.priority,
                    FlowMatch::tag(profile.slice_tag),
                    FlowAction::Enqueue {
                        port: *port,
                        queue: profile.slice_tag,
                    },
                )
            })
            .collect();
        let ids = self.apply_batch(&installs, &[], now)?;
        self.slices.insert(
            profile.slice_id.clone(),
            InstalledSlice {
                links: hops.iter().map(|(_, _, l, d)| (l.clone(), *d)).collect(),
                rules: hops.iter().map(|h| h.0.clone()).zip(ids.iter().copied()).collect(),
                path: path.to_vec(),
                profile,
            },
        );
        Ok(ids)
    }

    pub fn remove_slice(&mut self, slice_id: &str, now: SimTime) -> Result<(), SdnError> {
        let slice = self
            .slices
            .remove(slice_id)
            .ok_or_else(|| SdnError::NoPath(format!("unknown slice {slice_id}")))?;
        for (link_id, dir) in &slice.links {
            if let Some(v) = self.links.get_mut(link_id).and_then(|l| l.reservations.get_mut(dir)) {
                v.retain(|s| s.slice_id != slice_id);
            }
        }
        let live: Vec<RuleId> = slice.rules.iter().map(|r| r.1).filter(|r| self.has_rule(*r)).collect();
        self.apply_batch(&[], &live, now)?;
        Ok(())
    }

    /// A DRR-scheduled copy of one direction of a link with its slice queues.
    pub fn sliced_link(&self, link_id: &str, from_switch: &str) -> Result<SlicedLink, SdnError> {
        let fl = self
            .links
            .get(link_id)
            .ok_or_else(|| SdnError::UnknownLink(link_id.into()))?;
        let dir = fl.direction_from(from_switch);
        let slices = fl.reservations.get(&dir).cloned().unwrap_or_default();
        Ok(SlicedLink::new(fl.link(dir).clone(), &slices))
    }

    /// Directional links (cloned) from one endpoint to another.
    fn path_links(&self, src: &str, dst: &str) -> Result<Vec<Link>, SdnError> {
        let s = self.endpoints.get(src).ok_or_else(|| SdnError::UnknownEndpoint(src.into()))?;
        let d = self.endpoints.get(dst).ok_or_else(|| SdnError::UnknownEndpoint(dst.into()))?;
        let route = self
            .route(&s.switch, &d.switch)
            .ok_or_else(|| SdnError::NoPath(format!("{src} -> {dst}")))?;
        let mut links = Vec::new();
        if let Some((up, _)) = &s.access {
            links.push(up.clone());
        }
        for (i, l) in route.links.iter().enumerate() {
            let fl = &self.links[l];
            links.push(fl.link(fl.direction_from(&route.switches[i])).clone());
        }
        if let Some((_, down)) = &d.access {
            links.push(down.clone());
        }
        Ok(links)
    }

    /// Propagation latency from one endpoint to another along the current
    /// route, including attachment links.
    pub fn path_latency(&self, src: &str, dst: &str) -> Result<u64, SdnError> {
        Ok(self.path_links(src, dst)?.iter().map(|l| l.spec().latency_us).sum())
    }

    /// Bottleneck capacity of the current route, including attachment links.
    pub fn path_bandwidth(&self, src: &str, dst: &str) -> Result<f64, SdnError> {
        Ok(self
            .path_links(src, dst)?
            .iter()
            .map(|l| l.spec().capacity_mbps)
            .fold(f64::INFINITY, f64::min))
    }

    /// Active probing between two endpoints, run on a snapshot of the path so
    /// that measuring never perturbs fabric state.
    pub fn measure(&self, src: &str, dst: &str, now: SimTime, cfg: &MeasureConfig) -> Result<PathMeasurement, SdnError> {
        let links = self.path_links(src, dst)?;
        Ok(measure_links(links, &format!("{src}->{dst}"), now, cfg))
    }
}

/// Send `packet` hop by hop across `links` starting at `at`.
fn traverse(links: &mut [Link], packet: &Packet, mut at: SimTime) -> Option<SimTime> {
    for link in links.iter_mut() {
        at = link.transmit(packet, at).delivered_at()?;
    }
    Some(at)
}

/// Probe a sequence of directional links. Links see strictly time-ordered
/// transmissions because each packet is followed to completion and links
/// never reorder.
pub fn measure_links(mut links: Vec<Link>, path_id: &str, now: SimTime, cfg: &MeasureConfig) -> PathMeasurement {
    let mut delays = Vec::new();
    let mut sent = 0u64;
    let mut t = now;
    for i in 0..cfg.probes {
        let p = Packet::new(u64::from(i), cfg.probe_bytes.max(1), t).expect("positive size");
        sent += 1;
        if let Some(at) = traverse(&mut links, &p, t) {
            delays.push((at - t) as f64);
        }
        t += cfg.probe_interval_us;
    }
    let loss_rate = if sent == 0 { 0.0 } else { 1.0 - delays.len() as f64 / sent as f64 };
    let latency = if delays.is_empty() {
        0.0
    } else {
        delays.iter().sum::<f64>() / delays.len() as f64
    };
    let jitter = if delays.is_empty() {
        0.0
    } else {
        delays.iter().map(|d| (d - latency).abs()).sum::<f64>() / delays.len() as f64
    };

    let mut throughput = 0.0;
    if cfg.burst_us > 0 && !links.is_empty() {
        let start = t;
        let offset = latency.round() as u64;
        let window = (start + offset, start + offset + cfg.burst_us);
        let mut bytes = 0u64;
        let mut seq = u64::from(cfg.probes);
        loop {
            let send_at = links[0].busy_until().max(start);
            if send_at >= window.1 {
                break;
            }
            let p = Packet::new(seq, cfg.burst_packet_bytes.max(1), send_at).expect("positive size");
            seq += 1;
            if let Some(at) = traverse(&mut links, &p, send_at) {
                if at >= window.0 && at < window.1 {
                    bytes += u64::from(p.size_bytes);
                }
            }
        }
        throughput = bytes as f64 * 8.0 / cfg.burst_us as f64;
    }

    PathMeasurement {
        path_id: path_id.to_string(),
        latency_us: latency,
        jitter_us: jitter,
        loss_rate,
        throughput_mbps: throughput,
        measured_at: now,
    }
}

/// Bytes of quantum granted per Mbps of guarantee in each DRR round.
const QUANTUM_BYTES_PER_MBPS: f64 = 150.0;
const DEFAULT_QUEUE_LIMIT: usize = 1_000;

#[derive(Debug, Clone)]
struct SliceQueue {
    tag: Option<u32>,
    priority: i32,
    quantum: u64,
    deficit: u64,
    queue: VecDeque<Packet>,
    enqueued: u64,
    tail_drops: u64,
}

/// One direction of a link with DRR scheduling over slice queues. Queue 0 is
/// best effort (untagged or unknown tags).
#[derive(Debug, Clone)]
pub struct SlicedLink {
    link: Link,
    queues: Vec<SliceQueue>,
    cursor: usize,
    fresh_visit: bool,
    queue_limit: usize,
}

impl SlicedLink {
    pub fn new(link: Link, slices: &[SliceProfile]) -> Self {
        let capacity = link.spec().capacity_mbps;
        let reserved: f64 = slices.iter().map(|s| s.guaranteed_mbps).sum();
        let mut queues: Vec<SliceQueue> = slices
            .iter()
            .map(|s| SliceQueue {
                tag: Some(s.slice_tag),
                priority: s.priority,
                quantum: (s.guaranteed_mbps * QUANTUM_BYTES_PER_MBPS).round().max(1.0) as u64,
                deficit: 0,
                queue: VecDeque::new(),
                enqueued: 0,
                tail_drops: 0,
            })
            .collect();
        // Visit higher-priority slices first within a round.
        queues.sort_by_key(|q| std::cmp::Reverse(q.priority));
        queues.insert(
            0,
            SliceQueue {
                tag: None,
                priority: i32::MIN,
                quantum: ((capacity - reserved).max(0.0) * QUANTUM_BYTES_PER_MBPS).round() as u64,
                deficit: 0,
                queue: VecDeque::new(),
                enqueued: 0,
                tail_drops: 0,
            },
        );
        Self {
            link,
            queues,
            cursor: 0,
            fresh_visit: true,
            queue_limit: DEFAULT_QUEUE_LIMIT,
        }
    }

    pub fn with_queue_limit(mut self, limit: usize) -> Self {
        self.queue_limit = limit;
        self
    }

    pub fn link(&self) -> &Link {
        &self.link
    }

    fn queue_index(&self, tag: Option<u32>) -> usize {
        tag.and_then(|t| self.queues.iter().position(|q| q.tag == Some(t)))
            .unwrap_or(0)
    }

    /// Enqueue a packet; false if tail-dropped.
    pub fn enqueue(&mut self, packet: Packet) -> bool {
        let i = self.queue_index(packet.slice_tag);
        let q = &mut self.queues[i];
        if q.queue.len() >= self.queue_limit {
            q.tail_drops += 1;
            return false;
        }
        q.enqueued += 1;
        q.queue.push_back(packet);
        true
    }

    pub fn backlog(&self) -> usize {
        self.queues.iter().map(|q| q.queue.len()).sum()
    }

    fn next_packet(&mut self) -> Option<Packet> {
        if self.backlog() == 0 {
            return None;
        }
        let n = self.queues.len();
        // Only zero-quantum queues are backlogged: serve them directly.
        if self.queues.iter().all(|q| q.queue.is_empty() || q.quantum == 0) {
            return self.queues.iter_mut().find_map(|q| q.queue.pop_front());
        }
        loop {
            let i = self.cursor;
            if self.queues[i].queue.is_empty() {
                self.queues[i].deficit = 0;
                if i == 0 && self.fresh_visit {
                    // Idle best-effort share goes to the highest-priority backlogged slice.
                    let donation = self.queues[0].quantum;
                    if let Some(top) = self.queues[1..].iter_mut().find(|q| !q.queue.is_empty()) {
                        top.deficit += donation;
                    }
                }
                self.cursor = (i + 1) % n;
                self.fresh_visit = true;
                continue;
            }
            if self.fresh_visit {
                self.queues[i].deficit += self.queues[i].quantum;
                self.fresh_visit = false;
            }
            let head = u64::from(self.queues[i].queue[0].size_bytes);
            if head <= self.queues[i].deficit {
                let q = &mut self.queues[i];
                q.deficit -= head;
                let p = q.queue.pop_front().expect("non-empty");
                if q.queue.is_empty() {
                    q.deficit = 0;
                }
                return Some(p);
            }
            self.cursor = (i + 1) % n;
            self.fresh_visit = true;
        }
    }

    /// If the link is idle at `now`, put the next scheduled packet on the wire.
    pub fn pump(&mut self, now: SimTime) -> Option<(Packet, TxOutcome)> {
        if !self.link.is_idle(now) {
            return None;
        }
        let p = self.next_packet()?;
        let outcome = self.link.transmit(&p, now);
        Some((p, outcome))
    }
}

/// Offered load for [`run_slice_load`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceLoad {
    pub slice_tag: Option<u32>,
    pub rate_mbps: f64,
    pub packet_bytes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRunReport {
    pub duration_us: SimTime,
    /// Goodput per offered load, in the order the loads were given.
    pub goodput_mbps: Vec<f64>,
    pub total_mbps: f64,
    /// (delivery time, load index, bytes) for every delivered packet.
    #[serde(skip)]
    pub deliveries: Vec<(SimTime, usize, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SliceEvent {
    Arrival(usize),
    LinkFree,
}

/// Drive constant-rate sources through a sliced link for `duration` of
/// virtual time and report delivered goodput per source.
pub fn run_slice_load(mut link: SlicedLink, loads: &[SliceLoad], duration: SimTime, seed: u64) -> SliceRunReport {
    let mut clock = SimClock::new(seed);
    // Arrival k of source i is at round(k * gap), so rounding never drifts.
    let gaps: Vec<f64> = loads
        .iter()
        .map(|l| (f64::from(l.packet_bytes) * 8.0 / l.rate_mbps).max(1.0))
        .collect();
    let mut sent = vec![0u64; loads.len()];
    for (i, _) in loads.iter().enumerate() {
        clock.schedule(SliceEvent::Arrival(i), 0).expect("t=0");
    }
    let mut tag_to_load = BTreeMap::new();
    for (i, l) in loads.iter().enumerate() {
        tag_to_load.entry(l.slice_tag).or_insert(i);
    }
    let mut seq = 0u64;
    let mut delivered = vec![0u64; loads.len()];
    let mut deliveries = Vec::new();
    let mut link_free_pending = false;
    while let Some(f) = clock.next_until(duration) {
        let now = f.at;
        match f.event {
            SliceEvent::Arrival(i) => {
                let l = loads[i];
                let mut p = Packet::new(seq, l.packet_bytes, now).expect("positive size");
                p.src = i as u32;
                p.slice_tag = l.slice_tag;
                seq += 1;
                link.enqueue(p);
                sent[i] += 1;
                let next = ((sent[i] as f64 * gaps[i]).round() as SimTime).max(now + 1);
                clock.schedule(SliceEvent::Arrival(i), next).expect("in the future");
            }
            SliceEvent::LinkFree => link_free_pending = false,
        }
        while let Some((p, outcome)) = link.pump(now) {
            if let TxOutcome::Delivered { at } = outcome {
                if at <= duration {
                    let i = p.src as usize;
                    delivered[i] += u64::from(p.size_bytes);
                    deliveries.push((at, i, p.size_bytes));
                }
            }
        }
        if !link_free_pending && link.backlog() > 0 {
            let free_at = link.link().busy_until().max(now);
            clock.schedule(SliceEvent::LinkFree, free_at).expect("not in the past");
            link_free_pending = true;
        }
    }
    let goodput_mbps: Vec<f64> = delivered
        .iter()
        .map(|b| *b as f64 * 8.0 / duration as f64)
        .collect();
    SliceRunReport {
        duration_us: duration,
        total_mbps: goodput_mbps.iter().sum(),
        goodput_mbps,
        deliveries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ms;

    fn ep(id: &str, switch: &str, mac: u64) -> EndpointConfig {
        EndpointConfig {
            id: id.into(),
            switch: switch.into(),
            mac: Some(MacAddr::local(mac)),
            access: None,
        }
    }

    fn single_switch(mode: ForwardMode) -> Fabric {
        let cfg = TopologyConfig {
            switches: vec![SwitchConfig { id: "s1".into(), mode }],
            links: vec![],
            endpoints: vec![ep("a", "s1", 1), ep("b", "s1", 2), ep("c", "s1", 3)],
        };
        Fabric::from_config(&cfg, 1).unwrap()
    }

    #[test]
    fn mac_roundtrips_through_text() {
        let m = MacAddr::local(0x1234);
        assert_eq!(m.to_string(), "02:00:00:00:12:34");
        assert_eq!(m.to_string().parse::<MacAddr>().unwrap(), m);
        assert!("zz".parse::<MacAddr>().is_err());
    }

    #[test]
    fn learning_floods_then_unicasts() {
        let mut f = single_switch(ForwardMode::MacLearning);
        let (a, b) = (MacAddr::local(1), MacAddr::local(2));
        let d = f.send_frame("a", Frame::new(a, b), 0).unwrap();
        assert_eq!(d.floods, 1);
        assert_eq!(d.reached, ["b", "c"].map(String::from).into());
        assert!(f.switch("s1").unwrap().mac_table.contains_key(&a));
        let back = f.send_frame("b", Frame::new(b, a), 1).unwrap();
        assert_eq!(back.floods, 0);
        assert_eq!(back.reached, ["a"].map(String::from).into());
    }

    #[test]
    fn static_mode_drops_without_rules() {
        let mut f = single_switch(ForwardMode::StaticFlows);
        let d = f
            .send_frame("a", Frame::new(MacAddr::local(1), MacAddr::local(2)), 0)
            .unwrap();
        assert!(d.reached.is_empty());
    }

    #[test]
    fn installed_rule_delivers_without_mac_table() {
        let mut f = single_switch(ForwardMode::StaticFlows);
        let port_b = f.endpoint("b").unwrap().port;
        let id = f
            .install_flow("s1", 10, FlowMatch::dst(MacAddr::local(2)), FlowAction::Output { port: port_b }, 0)
            .unwrap();
        let d = f
            .send_frame("a", Frame::new(MacAddr::local(1), MacAddr::local(2)), 0)
            .unwrap();
        assert_eq!(d.accepted, ["b"].map(String::from).into());
        f.remove_flow(id, 1).unwrap();
        let d = f
            .send_frame("a", Frame::new(MacAddr::local(1), MacAddr::local(2)), 2)
            .unwrap();
        assert!(d.reached.is_empty());
        assert_eq!(f.remove_flow(id, 3), Err(SdnError::UnknownRule(id)));
    }

    #[test]
    fn higher_priority_rule_wins_and_ties_go_to_earliest() {
        let mut f = single_switch(ForwardMode::StaticFlows);
        let (pb, pc) = (f.endpoint("b").unwrap().port, f.endpoint("c").unwrap().port);
        let dst = FlowMatch::dst(MacAddr::local(2));
        f.install_flow("s1", 10, dst.clone(), FlowAction::Output { port: pc }, 0).unwrap();
        f.install_flow("s1", 20, dst.clone(), FlowAction::Output { port: pb }, 0).unwrap();
        let frame = Frame::new(MacAddr::local(1), MacAddr::local(2));
        assert_eq!(f.send_frame("a", frame, 0).unwrap().reached, ["b"].map(String::from).into());
        // equal priority: the earlier rule keeps winning
        f.install_flow("s1", 20, dst, FlowAction::Drop, 0).unwrap();
        assert_eq!(f.send_frame("a", frame, 0).unwrap().reached, ["b"].map(String::from).into());
    }

    #[test]
    fn invalid_rules_are_rejected() {
        let mut f = single_switch(ForwardMode::StaticFlows);
        assert!(matches!(
            f.install_flow("s1", 1, FlowMatch::default(), FlowAction::Drop, 0),
            Err(SdnError::InvalidRule(_))
        ));
        assert!(matches!(
            f.install_flow("s1", 1, FlowMatch::tag(1), FlowAction::Output { port: 99 }, 0),
            Err(SdnError::InvalidRule(_))
        ));
        assert!(matches!(
            f.install_flow("s1", 1, FlowMatch::tag(1), FlowAction::Enqueue { port: 1, queue: 1 }, 0),
            Err(SdnError::InvalidRule(_))
        ));
        assert_eq!(f.installed_rules(), 0);
    }

    #[test]
    fn hot_plug_behaviour_by_mode() {
        let mut f = single_switch(ForwardMode::MacLearning);
        f.hot_plug("s1", 10, "cam", Some(MacAddr::local(10))).unwrap();
        assert!(f.ping("cam", "a", 0).unwrap());
        assert_eq!(
            f.hot_plug("s1", 10, "cam2", None),
            Err(SdnError::PortInUse {
                switch: "s1".into(),
                port: 10
            })
        );

        let mut f = single_switch(ForwardMode::StaticFlows);
        f.hot_plug("s1", 10, "cam", Some(MacAddr::local(10))).unwrap();
        assert!(!f.ping("cam", "a", 0).unwrap());
        let pa = f.endpoint("a").unwrap().port;
        f.install_flow("s1", 1, FlowMatch::dst(MacAddr::local(1)), FlowAction::Output { port: pa }, 0)
            .unwrap();
        f.install_flow("s1", 1, FlowMatch::dst(MacAddr::local(10)), FlowAction::Output { port: 10 }, 0)
            .unwrap();
        assert!(f.ping("cam", "a", 0).unwrap());
    }

    #[test]
    fn mac_entries_age_out() {
        let mut f = single_switch(ForwardMode::MacLearning);
        let (a, b) = (MacAddr::local(1), MacAddr::local(2));
        f.send_frame("a", Frame::new(a, b), 0).unwrap();
        assert_eq!(f.send_frame("b", Frame::new(b, a), MAC_AGING - 1).unwrap().floods, 0);
        // b was learned at MAC_AGING - 1, a at 0: a has now expired
        assert_eq!(f.send_frame("c", Frame::new(MacAddr::local(3), a), MAC_AGING).unwrap().floods, 1);
    }

    fn line(capacity: f64) -> Fabric {
        let cfg = TopologyConfig {
            switches: vec![
                SwitchConfig { id: "s1".into(), mode: ForwardMode::MacLearning },
                SwitchConfig { id: "s2".into(), mode: ForwardMode::MacLearning },
            ],
            links: vec![TopologyLink::new("l", "s1", "s2", ms(10), capacity)],
            endpoints: vec![ep("a", "s1", 1), ep("b", "s2", 2)],
        };
        Fabric::from_config(&cfg, 9).unwrap()
    }

    fn slice(id: &str, mbps: f64, tag: u32) -> SliceProfile {
        SliceProfile {
            slice_id: id.into(),
            guaranteed_mbps: mbps,
            priority: 0,
            slice_tag: tag,
        }
    }

    #[test]
    fn slice_admission_respects_capacity() {
        let mut f = line(100.0);
        let path = vec!["s1".to_string(), "s2".to_string()];
        let rules = f.apply_slice(slice("gold", 60.0, 1), &path, 0).unwrap();
        assert_eq!(rules.len(), 1);
        assert!(matches!(
            f.apply_slice(slice("silver", 50.0, 2), &path, 0),
            Err(SdnError::CapacityExceeded { .. })
        ));
        // reverse direction has its own budget
        let back = vec!["s2".to_string(), "s1".to_string()];
        f.apply_slice(slice("up", 50.0, 3), &back, 0).unwrap();
        f.remove_slice("gold", 1).unwrap();
        f.apply_slice(slice("silver", 50.0, 2), &path, 2).unwrap();
    }

    #[test]
    fn slice_over_down_link_has_no_path() {
        let mut f = line(100.0);
        f.set_link_up("l", false).unwrap();
        assert!(matches!(
            f.apply_slice(slice("s", 10.0, 1), &["s1".into(), "s2".into()], 0),
            Err(SdnError::NoPath(_))
        ));
    }

    #[test]
    fn tagged_frames_follow_slice_rule() {
        let mut f = line(100.0);
        f.set_mode(ForwardMode::StaticFlows);
        f.apply_slice(slice("s", 10.0, 7), &["s1".into(), "s2".into()], 0).unwrap();
        let pb = f.endpoint("b").unwrap().port;
        f.install_flow("s2", 1, FlowMatch::dst(MacAddr::local(2)), FlowAction::Output { port: pb }, 0)
            .unwrap();
        let mut frame = Frame::new(MacAddr::local(1), MacAddr::local(2));
        assert!(f.send_frame("a", frame, 0).unwrap().accepted.is_empty());
        frame.slice_tag = Some(7);
        assert_eq!(f.send_frame("a", frame, 0).unwrap().accepted, ["b"].map(String::from).into());
    }

    #[test]
    fn measure_idle_link_latency_exact() {
        let f = line(100.0);
        let cfg = MeasureConfig {
            burst_us: 0,
            ..MeasureConfig::default()
        };
        let m = f.measure("a", "b", 0, &cfg).unwrap();
        // 64-byte probes serialize in 5.12us, rounded up to the next microsecond
        assert_eq!(m.latency_us, (ms(10) + 6) as f64);
        assert_eq!(m.jitter_us, 0.0);
        assert_eq!(m.loss_rate, 0.0);
    }

    #[test]
    fn measure_throughput_on_idle_link() {
        let f = line(100.0);
        let m = f.measure("a", "b", 0, &MeasureConfig::default()).unwrap();
        assert!(m.throughput_mbps >= 95.0, "{}", m.throughput_mbps);
        assert!(m.throughput_mbps <= 100.0, "{}", m.throughput_mbps);
    }

    #[test]
    fn measure_without_route_fails() {
        let mut f = line(100.0);
        f.set_link_up("l", false).unwrap();
        assert!(matches!(
            f.measure("a", "b", 0, &MeasureConfig::default()),
            Err(SdnError::NoPath(_))
        ));
    }

    #[test]
    fn drr_single_backlogged_slice_gets_whole_link() {
        let f = {
            let mut f = line(100.0);
            f.apply_slice(slice("s", 30.0, 1), &["s1".into(), "s2".into()], 0).unwrap();
            f
        };
        let link = f.sliced_link("l", "s1").unwrap();
        let r = run_slice_load(
            link,
            &[SliceLoad {
                slice_tag: Some(1),
                rate_mbps: 150.0,
                packet_bytes: 1500,
            }],
            secs(2),
            1,
        );
        assert!(r.goodput_mbps[0] > 98.0, "{:?}", r.goodput_mbps);
    }

    #[test]
    fn unreserved_share_goes_to_best_effort_when_backlogged() {
        let mut f = line(100.0);
        f.apply_slice(slice("s", 60.0, 1), &["s1".into(), "s2".into()], 0).unwrap();
        let link = f.sliced_link("l", "s1").unwrap();
        let load = |tag| SliceLoad {
            slice_tag: tag,
            rate_mbps: 100.0,
            packet_bytes: 1500,
        };
        let r = run_slice_load(link, &[load(Some(1)), load(None)], secs(5), 1);
        assert!((r.goodput_mbps[0] - 60.0).abs() < 3.0, "{:?}", r.goodput_mbps);
        assert!((r.goodput_mbps[1] - 40.0).abs() < 3.0, "{:?}", r.goodput_mbps);
    }

    #[test]
    fn idle_best_effort_share_goes_to_higher_priority_slice() {
        let mut f = line(100.0);
        let path = ["s1".to_string(), "s2".to_string()];
        let mut hi = slice("hi", 30.0, 1);
        hi.priority = 5;
        f.apply_slice(hi, &path, 0).unwrap();
        f.apply_slice(slice("lo", 30.0, 2), &path, 0).unwrap();
        let link = f.sliced_link("l", "s1").unwrap();
        let load = |tag| SliceLoad {
            slice_tag: Some(tag),
            rate_mbps: 100.0,
            packet_bytes: 1500,
        };
        let r = run_slice_load(link, &[load(1), load(2)], secs(5), 1);
        assert!(r.goodput_mbps[0] > r.goodput_mbps[1] + 20.0, "{:?}", r.goodput_mbps);
        assert!(r.goodput_mbps[1] >= 0.95 * 30.0, "{:?}", r.goodput_mbps);
    }

    #[test]
    fn route_prefers_lower_latency() {
        let cfg = TopologyConfig {
            switches: ["a", "b", "c"]
                .iter()
                .map(|s| SwitchConfig {
                    id: s.to_string(),
                    mode: ForwardMode::MacLearning,
                })
                .collect(),
            links: vec![
                TopologyLink::new("ab", "a", "b", 100, 10.0),
                TopologyLink::new("bc", "b", "c", 100, 10.0),
                TopologyLink::new("ac", "a", "c", 500, 10.0),
            ],
            endpoints: vec![],
        };
        let mut f = Fabric::from_config(&cfg, 1).unwrap();
        let r = f.route("a", "c").unwrap();
        assert_eq!(r.switches, ["a", "b", "c"]);
        assert_eq!(r.latency_us, 200);
        f.set_link_up("bc", false).unwrap();
        assert_eq!(f.route("a", "c").unwrap().links, ["ac"]);
        assert_eq!(f.route("a", "a").unwrap().latency_us, 0);
    }
}
