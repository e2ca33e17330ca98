//! Telemetry aggregation: token management, a per-stream time-series store
//! with an append-only journal, aggregate queries, and supervised collectors.
//!
//! Tokens and metrics live in two unrelated stores. The metric store has no
//! notion of clients at all; the auth gate sits in [`Telemetry`].

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{secs, substream, SimClock, SimTime};

pub const DEFAULT_TOKEN_TTL: SimTime = secs(3600);
pub const SDN_POLL_INTERVAL: SimTime = secs(1);
pub const VIM_POLL_INTERVAL: SimTime = secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    LatencyUs,
    JitterUs,
    LossRate,
    ThroughputMbps,
    BandwidthMbps,
    VcpuUsed,
    MemoryUsedMb,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::LatencyUs,
        Metric::JitterUs,
        Metric::LossRate,
        Metric::ThroughputMbps,
        Metric::BandwidthMbps,
        Metric::VcpuUsed,
        Metric::MemoryUsedMb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::LatencyUs => "latency_us",
            Metric::JitterUs => "jitter_us",
            Metric::LossRate => "loss_rate",
            Metric::ThroughputMbps => "throughput_mbps",
            Metric::BandwidthMbps => "bandwidth_mbps",
            Metric::VcpuUsed => "vcpu_used",
            Metric::MemoryUsedMb => "memory_used_mb",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

/// Source names are `vim:<id>`, `sdn:<path id>` or `hag:<session>`.
pub fn valid_source(s: &str) -> bool {
    ["vim:", "sdn:", "hag:"]
        .iter()
        .any(|p| s.strip_prefix(p).is_some_and(|rest| !rest.is_empty()))
}

/// A sample as submitted. `metric` stays a string so unknown names can be
/// reported per item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub source: String,
    pub metric: String,
    pub value: f64,
    pub timestamp: SimTime,
}

impl MetricSample {
    pub fn new(source: impl Into<String>, metric: Metric, value: f64, timestamp: SimTime) -> Self {
        Self {
            source: source.into(),
            metric: metric.as_str().to_string(),
            value,
            timestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiToken {
    pub token_id: String,
    pub secret: String,
    pub issued_at: SimTime,
    pub expires_at: SimTime,
    pub client_name: String,
}

impl ApiToken {
    /// The bearer string clients pass back on each call.
    pub fn bearer(&self) -> String {
        format!("{}.{}", self.token_id, self.secret)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthStatus {
    Ok,
    Expired,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TelemetryError {
    #[error("malformed sample: {0}")]
    MalformedSample(String),
    #[error("{series}/{metric}: timestamp {timestamp} is before the stream head {head}")]
    OutOfOrder {
        series: String,
        metric: Metric,
        timestamp: SimTime,
        head: SimTime,
    },
    #[error("{series}/{metric}: a different value is already stored at {timestamp}")]
    ConflictingDuplicate {
        series: String,
        metric: Metric,
        timestamp: SimTime,
    },
    #[error("authentication required ({0:?})")]
    AuthRequired(AuthStatus),
    #[error("no points in range")]
    EmptyRange,
    #[error("invalid range: t0 > t1")]
    InvalidRange,
    #[error("journal: {0}")]
    Journal(String),
}

impl From<io::Error> for TelemetryError {
    fn from(e: io::Error) -> Self {
        TelemetryError::Journal(e.to_string())
    }
}

/// Append-only file of length-prefixed JSON records. Each record is a 4-byte
/// big-endian length followed by that many bytes of JSON.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> io::Result<()> {
        let body = serde_json::to_vec(record).map_err(io::Error::other)?;
        let len = u32::try_from(body.len()).map_err(io::Error::other)?;
        let mut buf = Vec::with_capacity(4 + body.len());
        buf.extend_from_slice(&len.to_be_bytes());
        buf.extend_from_slice(&body);
        self.file.write_all(&buf)?;
        self.file.flush()
    }

    /// Read every complete record. A truncated trailing record is ignored.
    pub fn read_all<T: DeserializeOwned>(path: impl AsRef<Path>) -> io::Result<Vec<T>> {
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let mut r = BufReader::new(file);
        let mut out = Vec::new();
        loop {
            let mut len = [0u8; 4];
            match r.read_exact(&mut len) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e),
            }
            let mut body = vec![0u8; u32::from_be_bytes(len) as usize];
            match r.read_exact(&mut body) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e),
            }
            out.push(serde_json::from_slice(&body).map_err(io::Error::other)?);
        }
        Ok(out)
    }
}

/// Client and token records. Knows nothing about metrics.
#[derive(Debug, Default)]
pub struct ManagementStore {
    tokens: BTreeMap<String, ApiToken>,
    journal: Option<Journal>,
}

impl ManagementStore {
    pub fn insert(&mut self, token: ApiToken) -> io::Result<()> {
        if let Some(j) = &mut self.journal {
            j.append(&token)?;
        }
        self.tokens.insert(token.token_id.clone(), token);
        Ok(())
    }

    pub fn get(&self, token_id: &str) -> Option<&ApiToken> {
        self.tokens.get(token_id)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn clients(&self) -> Vec<String> {
        self.tokens.values().map(|t| t.client_name.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub timestamp: SimTime,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Raw,
    Mean,
    Max,
    P95,
}

impl FromStr for Aggregation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Aggregation::Raw),
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            "p95" => Ok(Aggregation::P95),
            _ => Err(format!("unknown aggregation {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueryResult {
    Series(Vec<Point>),
    Scalar(f64),
}

/// Nearest-rank 95th percentile: the value at rank ceil(0.95 n).
pub fn p95(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (95 * v.len()).div_ceil(100);
    Some(v[rank - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestOutcome {
    Stored,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredSample {
    source: String,
    metric: Metric,
    timestamp: SimTime,
    value: f64,
}

/// Time-series points keyed by (source, metric). Knows nothing about tokens.
#[derive(Debug, Default)]
pub struct MetricStore {
    streams: BTreeMap<(String, Metric), Vec<Point>>,
    journal: Option<Journal>,
}

impl MetricStore {
    pub fn insert(&mut self, sample: &MetricSample) -> Result<IngestOutcome, TelemetryError> {
        let metric: Metric = sample.metric.parse().map_err(TelemetryError::MalformedSample)?;
        if !valid_source(&sample.source) {
            return Err(TelemetryError::MalformedSample(format!("invalid source {:?}", sample.source)));
        }
        if !sample.value.is_finite() {
            return Err(TelemetryError::MalformedSample("value must be finite".into()));
        }
        let stream = self.streams.entry((sample.source.clone(), metric)).or_default();
        if let Ok(i) = stream.binary_search_by_key(&sample.timestamp, |p| p.timestamp) {
            return if stream[i].value.to_bits() == sample.value.to_bits() {
                Ok(IngestOutcome::Duplicate)
            } else {
                Err(TelemetryError::ConflictingDuplicate {
                    series: sample.source.clone(),
                    metric,
                    timestamp: sample.timestamp,
                })
            };
        }
        if let Some(last) = stream.last() {
            if sample.timestamp < last.timestamp {
                return Err(TelemetryError::OutOfOrder {
                    series: sample.source.clone(),
                    metric,
                    timestamp: sample.timestamp,
                    head: last.timestamp,
                });
            }
        }
        if let Some(j) = &mut self.journal {
            j.append(&StoredSample {
                source: sample.source.clone(),
                metric,
                timestamp: sample.timestamp,
                value: sample.value,
            })?;
        }
        stream.push(Point {
            timestamp: sample.timestamp,
            value: sample.value,
        });
        Ok(IngestOutcome::Stored)
    }

    /// Points with t0 <= timestamp <= t1, in time order.
    pub fn range(&self, source: &str, metric: Metric, t0: SimTime, t1: SimTime) -> &[Point] {
        let Some(s) = self.streams.get(&(source.to_string(), metric)) else {
            return &[];
        };
        let lo = s.partition_point(|p| p.timestamp < t0);
        let hi = s.partition_point(|p| p.timestamp <= t1);
        &s[lo..hi.max(lo)]
    }

    pub fn len(&self) -> usize {
        self.streams.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn streams(&self) -> impl Iterator<Item = (&(String, Metric), &Vec<Point>)> {
        self.streams.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedSample {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Samples now present in the store (new plus exact duplicates).
    pub accepted: usize,
    pub new_points: usize,
    pub rejected: Vec<RejectedSample>,
}

#[derive(Debug)]
pub struct Telemetry {
    management: ManagementStore,
    metrics: MetricStore,
    token_ttl: SimTime,
    rng: ChaCha8Rng,
    next_token: u64,
}

impl Telemetry {
    pub fn new(seed: u64) -> Self {
        Self {
            management: ManagementStore::default(),
            metrics: MetricStore::default(),
            token_ttl: DEFAULT_TOKEN_TTL,
            rng: substream(seed, "telemetry/tokens"),
            next_token: 1,
        }
    }

    pub fn with_ttl(mut self, ttl: SimTime) -> Self {
        self.token_ttl = ttl;
        self
    }

    /// Persist both stores under `dir`, replaying whatever is already there.
    pub fn with_journal(mut self, dir: impl AsRef<Path>) -> Result<Self, TelemetryError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let tokens: Vec<ApiToken> = Journal::read_all(dir.join("management.journal"))?;
        let samples: Vec<StoredSample> = Journal::read_all(dir.join("metrics.journal"))?;
        for t in tokens {
            self.next_token = self.next_token.max(token_number(&t.token_id) + 1);
            self.management.tokens.insert(t.token_id.clone(), t);
        }
        for s in samples {
            self.metrics
                .streams
                .entry((s.source, s.metric))
                .or_default()
                .push(Point {
                    timestamp: s.timestamp,
                    value: s.value,
                });
        }
        self.management.journal = Some(Journal::open(dir.join("management.journal"))?);
        self.metrics.journal = Some(Journal::open(dir.join("metrics.journal"))?);
        Ok(self)
    }

    pub fn management(&self) -> &ManagementStore {
        &self.management
    }

    pub fn metrics(&self) -> &MetricStore {
        &self.metrics
    }

    pub fn token_ttl(&self) -> SimTime {
        self.token_ttl
    }

    pub fn signup(&mut self, client_name: &str, now: SimTime) -> Result<ApiToken, TelemetryError> {
        let token = ApiToken {
            token_id: format!("tok-{}", self.next_token),
            secret: format!("{:016x}", self.rng.gen::<u64>()),
            issued_at: now,
            expires_at: now + self.token_ttl.max(1),
            client_name: client_name.to_string(),
        };
        self.next_token += 1;
        self.management.insert(token.clone())?;
        Ok(token)
    }

    pub fn authenticate(&self, bearer: &str, now: SimTime) -> AuthStatus {
        let Some((id, secret)) = bearer.split_once('.') else {
            return AuthStatus::Unknown;
        };
        match self.management.get(id) {
            Some(t) if t.secret == secret => {
                if now < t.expires_at {
                    AuthStatus::Ok
                } else {
                    AuthStatus::Expired
                }
            }
            _ => AuthStatus::Unknown,
        }
    }

    pub fn ingest(&mut self, samples: &[MetricSample]) -> IngestReport {
        let mut report = IngestReport::default();
        for (index, s) in samples.iter().enumerate() {
            match self.metrics.insert(s) {
                Ok(IngestOutcome::Stored) => {
                    report.accepted += 1;
                    report.new_points += 1;
                }
                Ok(IngestOutcome::Duplicate) => report.accepted += 1,
                Err(e) => report.rejected.push(RejectedSample {
                    index,
                    reason: e.to_string(),
                }),
            }
        }
        report
    }

    #[allow(clippy::too_many_arguments)]
    pub fn query(
        &self,
        bearer: Option<&str>,
        source: &str,
        metric: Metric,
        t0: SimTime,
        t1: SimTime,
        agg: Aggregation,
        now: SimTime,
    ) -> Result<QueryResult, TelemetryError> {
        match bearer.map(|b| self.authenticate(b, now)) {
            Some(AuthStatus::Ok) => {}
            Some(status) => return Err(TelemetryError::AuthRequired(status)),
            None => return Err(TelemetryError::AuthRequired(AuthStatus::Unknown)),
        }
        self.aggregate(source, metric, t0, t1, agg)
    }

    /// Query without the auth gate, for in-process consumers.
    pub fn aggregate(
        &self,
        source: &str,
        metric: Metric,
        t0: SimTime,
        t1: SimTime,
        agg: Aggregation,
    ) -> Result<QueryResult, TelemetryError> {
        if t0 > t1 {
            return Err(TelemetryError::InvalidRange);
        }
        let points = self.metrics.range(source, metric, t0, t1);
        if agg == Aggregation::Raw {
            return Ok(QueryResult::Series(points.to_vec()));
        }
        if points.is_empty() {
            return Err(TelemetryError::EmptyRange);
        }
        let values: Vec<f64> = points.iter().map(|p| p.value).collect();
        let v = match agg {
            Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregation::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregation::P95 => p95(&values).expect("non-empty"),
            Aggregation::Raw => unreachable!(),
        };
        Ok(QueryResult::Scalar(v))
    }
}

fn token_number(id: &str) -> u64 {
    id.trim_start_matches("tok-").parse().unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectorState {
    Running,
    Crashed,
    Restarting,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectorSpec {
    pub collector_id: String,
    pub source: String,
    pub poll_interval: SimTime,
    pub state: CollectorState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisorEventKind {
    Started,
    Crashed,
    Restarted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisorEvent {
    pub timestamp: SimTime,
    pub collector_id: String,
    pub kind: SupervisorEventKind,
}

/// Whatever a collector polls.
pub trait MetricSource {
    fn collect(&mut self, source: &str, now: SimTime) -> Vec<MetricSample>;
}

impl<F: FnMut(&str, SimTime) -> Vec<MetricSample>> MetricSource for F {
    fn collect(&mut self, source: &str, now: SimTime) -> Vec<MetricSample> {
        self(source, now)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum SupEvent {
    Poll(String),
    Crash(String),
    Restart(String),
}

#[derive(Debug, Clone)]
struct Collector {
    spec: CollectorSpec,
    alive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PollRecord {
    pub at: SimTime,
    pub samples: usize,
}

/// Periodic collectors and the supervisor that restarts them. A crashed
/// collector is noticed when its next poll deadline passes without a poll;
/// it is restarted one interval later and polls immediately on restart, so
/// a crash costs at most one poll cycle.
#[derive(Debug, Clone)]
pub struct Supervisor {
    clock: SimClock<SupEvent>,
    collectors: BTreeMap<String, Collector>,
    events: Vec<SupervisorEvent>,
    polls: BTreeMap<String, Vec<PollRecord>>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SupervisorError {
    #[error("poll_interval must be positive")]
    ZeroInterval,
    #[error("duplicate collector {0}")]
    Duplicate(String),
    #[error("unknown collector {0}")]
    Unknown(String),
    #[error("time {0} is in the past")]
    Past(SimTime),
}

impl Supervisor {
    pub fn new(seed: u64) -> Self {
        Self {
            clock: SimClock::new(seed),
            collectors: BTreeMap::new(),
            events: Vec::new(),
            polls: BTreeMap::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    /// Register a collector; its first poll happens at `start`.
    pub fn register(
        &mut self,
        collector_id: &str,
        source: &str,
        poll_interval: SimTime,
        start: SimTime,
    ) -> Result<(), SupervisorError> {
        if poll_interval == 0 {
            return Err(SupervisorError::ZeroInterval);
        }
        if self.collectors.contains_key(collector_id) {
            return Err(SupervisorError::Duplicate(collector_id.into()));
        }
        self.clock
            .schedule(SupEvent::Poll(collector_id.into()), start)
            .map_err(|_| SupervisorError::Past(start))?;
        self.collectors.insert(
            collector_id.into(),
            Collector {
                spec: CollectorSpec {
                    collector_id: collector_id.into(),
                    source: source.into(),
                    poll_interval,
                    state: CollectorState::Running,
                },
                alive: true,
            },
        );
        self.events.push(SupervisorEvent {
            timestamp: start.max(self.clock.now()),
            collector_id: collector_id.into(),
            kind: SupervisorEventKind::Started,
        });
        Ok(())
    }

    /// Make a collector die silently at `at`.
    pub fn inject_crash(&mut self, collector_id: &str, at: SimTime) -> Result<(), SupervisorError> {
        if !self.collectors.contains_key(collector_id) {
            return Err(SupervisorError::Unknown(collector_id.into()));
        }
        self.clock
            .schedule(SupEvent::Crash(collector_id.into()), at)
            .map_err(|_| SupervisorError::Past(at))?;
        Ok(())
    }

    pub fn collectors(&self) -> impl Iterator<Item = &CollectorSpec> {
        self.collectors.values().map(|c| &c.spec)
    }

    pub fn events(&self) -> &[SupervisorEvent] {
        &self.events
    }

    pub fn polls(&self, collector_id: &str) -> &[PollRecord] {
        self.polls.get(collector_id).map_or(&[], Vec::as_slice)
    }

    pub fn next_event_time(&mut self) -> Option<SimTime> {
        self.clock.peek_time()
    }

    fn poll(&mut self, id: &str, now: SimTime, source: &mut dyn MetricSource, store: &mut Telemetry) {
        let src = self.collectors[id].spec.source.clone();
        let samples = source.collect(&src, now);
        let n = store.ingest(&samples).accepted;
        self.polls.entry(id.into()).or_default().push(PollRecord { at: now, samples: n });
    }

    /// Process every supervisor event up to and including `until`.
    pub fn advance_to(&mut self, until: SimTime, source: &mut dyn MetricSource, store: &mut Telemetry) {
        while let Some(f) = self.clock.next_until(until) {
            let now = f.at;
            match f.event {
                SupEvent::Crash(id) => {
                    if let Some(c) = self.collectors.get_mut(&id) {
                        c.alive = false;
                    }
                }
                SupEvent::Poll(id) => {
                    let c = self.collectors.get_mut(&id).expect("registered");
                    let interval = c.spec.poll_interval;
                    if c.alive {
                        self.poll(&id, now, source, store);
                        self.clock.schedule_in(SupEvent::Poll(id), interval);
                    } else {
                        c.spec.state = CollectorState::Crashed;
                        self.events.push(SupervisorEvent {
                            timestamp: now,
                            collector_id: id.clone(),
                            kind: SupervisorEventKind::Crashed,
                        });
                        c.spec.state = CollectorState::Restarting;
                        self.clock.schedule_in(SupEvent::Restart(id), interval);
                    }
                }
                SupEvent::Restart(id) => {
                    let c = self.collectors.get_mut(&id).expect("registered");
                    c.alive = true;
                    c.spec.state = CollectorState::Running;
                    let interval = c.spec.poll_interval;
                    self.events.push(SupervisorEvent {
                        timestamp: now,
                        collector_id: id.clone(),
                        kind: SupervisorEventKind::Restarted,
                    });
                    self.poll(&id, now, source, store);
                    self.clock.schedule_in(SupEvent::Poll(id), interval);
                }
            }
        }
    }
}
