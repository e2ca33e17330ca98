//! Hybrid access gateway: one byte stream spread over several access paths.
//!
//! Each path is a simulated [`Link`] carrying data towards the UE; ACKs come
//! back after the path's propagation latency and are never lost. A subflow is
//! a reliable channel: a segment that is not acknowledged within
//! `2 × srtt` is sent again on the same path. When a path goes down every
//! segment still outstanding on it moves to the front of the send queue and
//! is picked up by whichever path the policy selects next.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{LinkSpec, Link, Packet, SimClock, SimTime, TxOutcome};
use crate::telemetry::{Metric, MetricSample};

pub const MSS: u32 = 1400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Technology {
    #[serde(rename = "5g_3500mhz")]
    Nr3500Mhz,
    #[serde(rename = "5g_28ghz")]
    Nr28Ghz,
    #[serde(rename = "4g_700mhz")]
    Lte700Mhz,
    #[serde(rename = "wifi")]
    Wifi,
}

impl Technology {
    pub fn as_str(self) -> &'static str {
        match self {
            Technology::Nr3500Mhz => "5g_3500mhz",
            Technology::Nr28Ghz => "5g_28ghz",
            Technology::Lte700Mhz => "4g_700mhz",
            Technology::Wifi => "wifi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    RoundRobin,
    MinRtt,
    #[serde(alias = "weighted")]
    WeightedCapacity,
}

impl FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "round_robin" => Ok(Policy::RoundRobin),
            "min_rtt" => Ok(Policy::MinRtt),
            "weighted_capacity" | "weighted" => Ok(Policy::WeightedCapacity),
            _ => Err(format!("unknown policy {s:?}")),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::RoundRobin => "round_robin",
            Policy::MinRtt => "min_rtt",
            Policy::WeightedCapacity => "weighted_capacity",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathState {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessPathConfig {
    pub path_id: String,
    pub technology: Technology,
    pub link: LinkSpec,
}

impl AccessPathConfig {
    pub fn new(path_id: &str, technology: Technology, latency_us: u64, capacity_mbps: f64) -> Self {
        Self {
            path_id: path_id.into(),
            technology,
            link: LinkSpec::new(path_id, latency_us, capacity_mbps),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AccessPath {
    pub path_id: String,
    pub technology: Technology,
    pub srtt_us: f64,
    pub state: PathState,
    link: Link,
    epoch: u64,
    in_flight: usize,
    window: usize,
    swrr_current: f64,
    assigned: u64,
    transmissions: u64,
    retransmissions: u64,
    delivered_bytes: u64,
}

impl AccessPath {
    fn new(cfg: &AccessPathConfig, seed: u64) -> Result<Self, HagError> {
        let link = Link::new(cfg.link.clone(), seed).map_err(|e| HagError::InvalidConfig(e.to_string()))?;
        let mut p = Self {
            path_id: cfg.path_id.clone(),
            technology: cfg.technology,
            srtt_us: (2 * cfg.link.latency_us).max(1) as f64,
            state: if cfg.link.up { PathState::Up } else { PathState::Down },
            link,
            epoch: 0,
            in_flight: 0,
            window: 1,
            swrr_current: 0.0,
            assigned: 0,
            transmissions: 0,
            retransmissions: 0,
            delivered_bytes: 0,
        };
        p.recompute_window();
        Ok(p)
    }

    pub fn capacity_mbps(&self) -> f64 {
        self.link.spec().capacity_mbps
    }

    pub fn latency_us(&self) -> u64 {
        self.link.spec().latency_us
    }

    pub fn rto_us(&self) -> SimTime {
        (2.0 * self.srtt_us).ceil() as SimTime
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight
    }

    fn is_up(&self) -> bool {
        self.state == PathState::Up
    }

    fn has_space(&self) -> bool {
        self.is_up() && self.in_flight < self.window
    }

    // Bandwidth-delay product in segments, plus one so the pipe never drains
    // while the next ACK is on its way.
    fn recompute_window(&mut self) {
        let bdp_bytes = self.capacity_mbps() * self.srtt_us / 8.0;
        self.window = (bdp_bytes / f64::from(MSS)).ceil() as usize + 1;
    }

    fn weight(&self) -> f64 {
        self.capacity_mbps() / self.srtt_us
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HagError {
    #[error("no access path is up")]
    NoPathsUp,
    #[error("every up path has a full window")]
    AllWindowsFull,
    #[error("session is closed")]
    SessionClosed,
    #[error("last path went down; session stalls until a path returns")]
    LastPathDown,
    #[error("unknown path {0}")]
    UnknownPath(String),
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("time {0} is before the session clock")]
    Past(SimTime),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Active,
    Stalled,
    Closed,
}

/// One transmission of a segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub seq: u64,
    pub offset: u64,
    pub size_bytes: u32,
    pub path_id: String,
    pub sent_at: SimTime,
}

/// In-order bytes released to the application.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Release {
    pub at: SimTime,
    pub seq: u64,
    pub offset: u64,
    pub len: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SendReceipt {
    pub first_seq: u64,
    pub segments: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone)]
struct Outstanding {
    offset: u64,
    size: u32,
    path: usize,
    epoch: u64,
    attempt: u32,
    sent_at: SimTime,
    enqueued_at: SimTime,
}

#[derive(Debug, Clone, Copy)]
struct Waiting {
    seq: u64,
    offset: u64,
    size: u32,
    enqueued_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum HagEvent {
    Deliver { path: usize, epoch: u64, seq: u64, offset: u64, size: u32 },
    Ack { path: usize, epoch: u64, seq: u64 },
    Timeout { seq: u64, attempt: u32 },
}

#[derive(Debug, Clone, Copy)]
struct Buffered {
    offset: u64,
    size: u32,
    arrived_at: SimTime,
    enqueued_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStats {
    pub path_id: String,
    pub technology: Technology,
    pub state: PathState,
    pub srtt_us: f64,
    pub window_segments: usize,
    pub segments_assigned: u64,
    pub transmissions: u64,
    pub retransmissions: u64,
    pub delivered_bytes: u64,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HagStats {
    pub session_id: String,
    pub policy: Policy,
    pub state: SessionState,
    pub now: SimTime,
    pub bytes_queued: u64,
    pub bytes_delivered: u64,
    pub goodput_mbps: f64,
    pub duplicates_discarded: u64,
    pub mean_reorder_delay_us: f64,
    pub max_reorder_delay_us: SimTime,
    pub mean_segment_latency_us: f64,
    pub paths: Vec<PathStats>,
}

#[derive(Debug, Clone)]
pub struct HagSession {
    session_id: String,
    policy: Policy,
    paths: Vec<AccessPath>,
    clock: SimClock<HagEvent>,
    closed: bool,
    next_seq: u64,
    next_offset: u64,
    backlog: VecDeque<Waiting>,
    resend: VecDeque<Waiting>,
    outstanding: BTreeMap<u64, Outstanding>,
    rr_next: usize,
    transmissions: Vec<Segment>,
    record_transmissions: bool,
    // receiver side
    expected_seq: u64,
    buffer: BTreeMap<u64, Buffered>,
    releases: Vec<Release>,
    bytes_delivered: u64,
    duplicates: u64,
    reorder_delay_sum: u128,
    reorder_delay_max: SimTime,
    latency_sum: u128,
    first_send: Option<SimTime>,
}

impl HagSession {
    /// Open a session. `srtt` starts at twice each path's latency.
    pub fn open(
        session_id: &str,
        paths: &[AccessPathConfig],
        policy: Policy,
        seed: u64,
        now: SimTime,
    ) -> Result<Self, HagError> {
        if paths.is_empty() {
            return Err(HagError::InvalidConfig("paths must not be empty".into()));
        }
        let mut ids: Vec<&str> = paths.iter().map(|p| p.path_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(HagError::InvalidConfig("duplicate path_id".into()));
        }
        let paths = paths
            .iter()
            .map(|p| AccessPath::new(p, seed))
            .collect::<Result<Vec<_>, _>>()?;
        if !paths.iter().any(AccessPath::is_up) {
            return Err(HagError::NoPathsUp);
        }
        let mut clock = SimClock::new(seed);
        clock.finish(now);
        Ok(Self {
            session_id: session_id.into(),
            policy,
            paths,
            clock,
            closed: false,
            next_seq: 0,
            next_offset: 0,
            backlog: VecDeque::new(),
            resend: VecDeque::new(),
            outstanding: BTreeMap::new(),
            rr_next: 0,
            transmissions: Vec::new(),
            record_transmissions: true,
            expected_seq: 0,
            buffer: BTreeMap::new(),
            releases: Vec::new(),
            bytes_delivered: 0,
            duplicates: 0,
            reorder_delay_sum: 0,
            reorder_delay_max: 0,
            latency_sum: 0,
            first_send: None,
        })
    }

    /// Stop keeping the per-transmission log (long saturating runs).
    pub fn without_transmission_log(mut self) -> Self {
        self.record_transmissions = false;
        self
    }

    pub fn id(&self) -> &str {
        &self.session_id
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    pub fn paths(&self) -> &[AccessPath] {
        &self.paths
    }

    pub fn path(&self, path_id: &str) -> Option<&AccessPath> {
        self.paths.iter().find(|p| p.path_id == path_id)
    }

    pub fn state(&self) -> SessionState {
        if self.closed {
            SessionState::Closed
        } else if self.paths.iter().any(AccessPath::is_up) {
            SessionState::Active
        } else {
            SessionState::Stalled
        }
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn transmissions(&self) -> &[Segment] {
        &self.transmissions
    }

    pub fn releases(&self) -> &[Release] {
        &self.releases
    }

    pub fn bytes_delivered(&self) -> u64 {
        self.bytes_delivered
    }

    pub fn bytes_queued(&self) -> u64 {
        self.next_offset
    }

    /// Nothing queued, nothing in flight, nothing buffered.
    pub fn is_drained(&self) -> bool {
        self.backlog.is_empty() && self.resend.is_empty() && self.outstanding.is_empty() && self.buffer.is_empty()
    }

    pub fn next_event_time(&mut self) -> Option<SimTime> {
        self.clock.peek_time()
    }

    fn catch_up(&mut self, now: SimTime) -> Result<(), HagError> {
        if now < self.clock.now() {
            return Err(HagError::Past(now));
        }
        self.advance_to(now);
        Ok(())
    }

    /// Queue `bytes` for transmission, segmented at [`MSS`].
    pub fn send(&mut self, bytes: u64, now: SimTime) -> Result<SendReceipt, HagError> {
        if self.closed {
            return Err(HagError::SessionClosed);
        }
        self.catch_up(now)?;
        let first_seq = self.next_seq;
        let mut left = bytes;
        while left > 0 {
            let size = left.min(u64::from(MSS)) as u32;
            self.backlog.push_back(Waiting {
                seq: self.next_seq,
                offset: self.next_offset,
                size,
                enqueued_at: now,
            });
            left -= u64::from(size);
            self.next_seq += 1;
            self.next_offset += u64::from(size);
        }
        self.pump();
        Ok(SendReceipt {
            first_seq,
            segments: self.next_seq - first_seq,
            bytes,
        })
    }

    /// Pick the path for the next segment under the session policy.
    pub fn select_path(&mut self) -> Result<usize, HagError> {
        if !self.paths.iter().any(AccessPath::is_up) {
            return Err(HagError::NoPathsUp);
        }
        let n = self.paths.len();
        let choice = match self.policy {
            Policy::RoundRobin => (0..n)
                .map(|k| (self.rr_next + k) % n)
                .find(|&i| self.paths[i].has_space())
                .inspect(|&i| self.rr_next = (i + 1) % n),
            Policy::MinRtt => (0..n)
                .filter(|&i| self.paths[i].has_space())
                .min_by(|&a, &b| self.paths[a].srtt_us.total_cmp(&self.paths[b].srtt_us)),
            Policy::WeightedCapacity => {
                // Smooth weighted round robin: every eligible path earns its
                // weight, the richest is served and pays the total.
                let eligible: Vec<usize> = (0..n).filter(|&i| self.paths[i].has_space()).collect();
                if eligible.is_empty() {
                    None
                } else {
                    let total: f64 = eligible.iter().map(|&i| self.paths[i].weight()).sum();
                    for &i in &eligible {
                        let w = self.paths[i].weight();
                        self.paths[i].swrr_current += w;
                    }
                    let best = eligible
                        .iter()
                        .copied()
                        .max_by(|&a, &b| {
                            self.paths[a]
                                .swrr_current
                                .total_cmp(&self.paths[b].swrr_current)
                                .then(b.cmp(&a))
                        })
                        .expect("non-empty");
                    self.paths[best].swrr_current -= total;
                    Some(best)
                }
            }
        };
        choice.ok_or(HagError::AllWindowsFull)
    }

    fn pump(&mut self) {
        if self.closed {
            return;
        }
        while !self.resend.is_empty() || !self.backlog.is_empty() {
            let Ok(path) = self.select_path() else { break };
            let w = match self.resend.pop_front() {
                Some(w) => w,
                None => {
                    self.paths[path].assigned += 1;
                    self.backlog.pop_front().expect("non-empty")
                }
            };
            self.paths[path].in_flight += 1;
            self.transmit(path, w, 0);
        }
    }

    fn transmit(&mut self, path: usize, w: Waiting, attempt: u32) {
        let now = self.clock.now();
        self.first_send.get_or_insert(now);
        let p = &mut self.paths[path];
        p.transmissions += 1;
        if attempt > 0 {
            p.retransmissions += 1;
        }
        let epoch = p.epoch;
        let packet = Packet::new(w.seq, w.size, now).expect("segments are non-empty");
        if let TxOutcome::Delivered { at } = p.link.transmit(&packet, now) {
            self.clock
                .schedule(
                    HagEvent::Deliver {
                        path,
                        epoch,
                        seq: w.seq,
                        offset: w.offset,
                        size: w.size,
                    },
                    at,
                )
                .expect("delivery is in the future");
        }
        let rto = p.rto_us();
        if self.record_transmissions {
            self.transmissions.push(Segment {
                seq: w.seq,
                offset: w.offset,
                size_bytes: w.size,
                path_id: p.path_id.clone(),
                sent_at: now,
            });
        }
        self.outstanding.insert(
            w.seq,
            Outstanding {
                offset: w.offset,
                size: w.size,
                path,
                epoch,
                attempt,
                sent_at: now,
                enqueued_at: w.enqueued_at,
            },
        );
        self.clock.schedule_in(HagEvent::Timeout { seq: w.seq, attempt }, rto.max(1));
    }

    /// Run the session up to and including `until`.
    pub fn advance_to(&mut self, until: SimTime) {
        while let Some(f) = self.clock.next_until(until) {
            let now = f.at;
            match f.event {
                HagEvent::Deliver {
                    path,
                    epoch,
                    seq,
                    offset,
                    size,
                } => {
                    // A path that went down took its in-flight data with it.
                    if self.paths[path].epoch != epoch {
                        continue;
                    }
                    let enqueued_at = self.outstanding.get(&seq).map_or(now, |o| o.enqueued_at);
                    self.receive(seq, offset, size, enqueued_at, now);
                    let back = self.paths[path].latency_us();
                    self.clock.schedule_in(HagEvent::Ack { path, epoch, seq }, back);
                }
                HagEvent::Ack { path, epoch, seq } => {
                    let matches = self
                        .outstanding
                        .get(&seq)
                        .is_some_and(|o| o.path == path && o.epoch == epoch);
                    if !matches || self.paths[path].epoch != epoch {
                        continue;
                    }
                    let o = self.outstanding.remove(&seq).expect("checked");
                    let p = &mut self.paths[path];
                    p.in_flight -= 1;
                    p.delivered_bytes += u64::from(o.size);
                    // Karn: retransmitted segments give ambiguous samples.
                    if o.attempt == 0 {
                        let sample = (now - o.sent_at) as f64;
                        p.srtt_us = (p.srtt_us * 7.0 + sample) / 8.0;
                        p.recompute_window();
                    }
                    self.pump();
                }
                HagEvent::Timeout { seq, attempt } => {
                    let Some(o) = self.outstanding.get(&seq) else { continue };
                    if o.attempt != attempt || !self.paths[o.path].is_up() {
                        continue;
                    }
                    let o = o.clone();
                    let w = Waiting {
                        seq,
                        offset: o.offset,
                        size: o.size,
                        enqueued_at: o.enqueued_at,
                    };
                    self.transmit(o.path, w, attempt + 1);
                }
            }
        }
        self.clock.finish(until);
    }

    fn receive(&mut self, seq: u64, offset: u64, size: u32, enqueued_at: SimTime, now: SimTime) {
        if seq < self.expected_seq || self.buffer.contains_key(&seq) {
            self.duplicates += 1;
            return;
        }
        self.buffer.insert(
            seq,
            Buffered {
                offset,
                size,
                arrived_at: now,
                enqueued_at,
            },
        );
        while let Some(b) = self.buffer.remove(&self.expected_seq) {
            let wait = now - b.arrived_at;
            self.reorder_delay_sum += u128::from(wait);
            self.reorder_delay_max = self.reorder_delay_max.max(wait);
            self.latency_sum += u128::from(now - b.enqueued_at);
            self.releases.push(Release {
                at: now,
                seq: self.expected_seq,
                offset: b.offset,
                len: b.size,
            });
            self.bytes_delivered += u64::from(b.size);
            self.expected_seq += 1;
        }
    }

    /// Bring a path up or down. Taking the last up path down still applies
    /// and returns [`HagError::LastPathDown`]; the session stalls until a
    /// path returns.
    pub fn set_path(&mut self, path_id: &str, up: bool, now: SimTime) -> Result<SessionState, HagError> {
        if self.closed {
            return Err(HagError::SessionClosed);
        }
        self.catch_up(now)?;
        let idx = self
            .paths
            .iter()
            .position(|p| p.path_id == path_id)
            .ok_or_else(|| HagError::UnknownPath(path_id.into()))?;
        let p = &mut self.paths[idx];
        if up {
            if !p.is_up() {
                p.state = PathState::Up;
                p.link.set_up(true);
                p.swrr_current = 0.0;
            }
        } else if p.is_up() {
            p.state = PathState::Down;
            p.link.set_up(false);
            p.epoch += 1;
            p.in_flight = 0;
            let stranded: Vec<u64> = self
                .outstanding
                .iter()
                .filter(|(_, o)| o.path == idx)
                .map(|(s, _)| *s)
                .collect();
            let mut moved: Vec<Waiting> = stranded
                .into_iter()
                .map(|seq| {
                    let o = self.outstanding.remove(&seq).expect("listed");
                    Waiting {
                        seq,
                        offset: o.offset,
                        size: o.size,
                        enqueued_at: o.enqueued_at,
                    }
                })
                .collect();
            moved.extend(self.resend.drain(..));
            moved.sort_by_key(|w| w.seq);
            self.resend = moved.into();
        }
        self.pump();
        match self.state() {
            SessionState::Stalled => Err(HagError::LastPathDown),
            s => Ok(s),
        }
    }

    pub fn close(&mut self, now: SimTime) -> Result<(), HagError> {
        if self.closed {
            return Err(HagError::SessionClosed);
        }
        self.catch_up(now)?;
        self.closed = true;
        Ok(())
    }

    /// Longest gap between consecutive in-order releases that starts at or
    /// after `from` (the gap from `from` itself to the next release counts).
    pub fn max_stall_since(&self, from: SimTime) -> SimTime {
        let mut prev = from;
        let mut worst = 0;
        for r in self.releases.iter().filter(|r| r.at >= from) {
            worst = worst.max(r.at - prev);
            prev = r.at;
        }
        worst
    }

    /// Goodput in Mbps over the released bytes between the first send and `now`.
    pub fn goodput_mbps(&self) -> f64 {
        match (self.first_send, self.releases.last()) {
            (Some(t0), Some(last)) if last.at > t0 => self.bytes_delivered as f64 * 8.0 / (last.at - t0) as f64,
            _ => 0.0,
        }
    }

    pub fn stats(&self) -> HagStats {
        let assigned: u64 = self.paths.iter().map(|p| p.assigned).sum();
        let released = self.releases.len().max(1) as f64;
        HagStats {
            session_id: self.session_id.clone(),
            policy: self.policy,
            state: self.state(),
            now: self.clock.now(),
            bytes_queued: self.next_offset,
            bytes_delivered: self.bytes_delivered,
            goodput_mbps: self.goodput_mbps(),
            duplicates_discarded: self.duplicates,
            mean_reorder_delay_us: self.reorder_delay_sum as f64 / released,
            max_reorder_delay_us: self.reorder_delay_max,
            mean_segment_latency_us: self.latency_sum as f64 / released,
            paths: self
                .paths
                .iter()
                .map(|p| PathStats {
                    path_id: p.path_id.clone(),
                    technology: p.technology,
                    state: p.state,
                    srtt_us: p.srtt_us,
                    window_segments: p.window,
                    segments_assigned: p.assigned,
                    transmissions: p.transmissions,
                    retransmissions: p.retransmissions,
                    delivered_bytes: p.delivered_bytes,
                    share: if assigned == 0 { 0.0 } else { p.assigned as f64 / assigned as f64 },
                })
                .collect(),
        }
    }

    /// Current session metrics as `hag:<session>` telemetry samples.
    pub fn samples(&self) -> Vec<MetricSample> {
        let source = format!("hag:{}", self.session_id);
        let now = self.clock.now();
        let srtt = self
            .paths
            .iter()
            .filter(|p| p.is_up())
            .map(|p| p.srtt_us)
            .fold(f64::INFINITY, f64::min);
        let mut out = vec![MetricSample::new(&source, Metric::ThroughputMbps, self.goodput_mbps(), now)];
        if srtt.is_finite() {
            out.push(MetricSample::new(&source, Metric::LatencyUs, srtt / 2.0, now));
        }
        out.push(MetricSample::new(
            &source,
            Metric::BandwidthMbps,
            self.paths.iter().filter(|p| p.is_up()).map(AccessPath::capacity_mbps).sum(),
            now,
        ));
        out
    }
}
