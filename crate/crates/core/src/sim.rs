//! Deterministic discrete-event substrate: a virtual clock with a stable
//! event queue, seeded random substreams, and links that model latency,
//! jitter, loss and serialization occupancy.
//!
//! Virtual time is integer microseconds. Nothing in here reads the wall clock.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Virtual time in microseconds.
pub type SimTime = u64;

pub const MICROS_PER_MS: SimTime = 1_000;
pub const MICROS_PER_SEC: SimTime = 1_000_000;

pub const fn ms(v: u64) -> SimTime {
    v * MICROS_PER_MS
}

pub const fn secs(v: u64) -> SimTime {
    v * MICROS_PER_SEC
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("cannot schedule at {at}us: clock already at {now}us")]
    PastTime { at: SimTime, now: SimTime },
    #[error("invalid link {id}: {reason}")]
    InvalidLink { id: String, reason: String },
    #[error("packet size must be positive")]
    EmptyPacket,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventId(pub u64);

#[derive(Clone)]
struct Scheduled<E> {
    at: SimTime,
    id: EventId,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.id == other.id
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    // Min-heap on (time, insertion id) so equal timestamps pop in insertion order.
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.cmp(&self.at).then_with(|| other.id.cmp(&self.id))
    }
}

/// An event that fired during [`SimClock::advance`].
#[derive(Debug, Clone, PartialEq)]
pub struct Fired<E> {
    pub at: SimTime,
    pub id: EventId,
    pub event: E,
}

/// Virtual clock plus pending-event queue.
#[derive(Clone)]
pub struct SimClock<E> {
    now: SimTime,
    queue: BinaryHeap<Scheduled<E>>,
    cancelled: BTreeSet<EventId>,
    next_id: u64,
    seed: u64,
}

impl<E> std::fmt::Debug for SimClock<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimClock")
            .field("now", &self.now)
            .field("pending", &self.queue.len())
            .finish()
    }
}

impl<E> SimClock<E> {
    pub fn new(seed: u64) -> Self {
        Self {
            now: 0,
            queue: BinaryHeap::new(),
            cancelled: BTreeSet::new(),
            next_id: 0,
            seed,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of pending (non-cancelled) events.
    pub fn pending(&self) -> usize {
        self.queue.len() - self.cancelled.len()
    }

    pub fn schedule(&mut self, event: E, at: SimTime) -> Result<EventId, SimError> {
        if at < self.now {
            return Err(SimError::PastTime { at, now: self.now });
        }
        let id = EventId(self.next_id);
        self.next_id += 1;
        self.queue.push(Scheduled { at, id, event });
        Ok(id)
    }

    pub fn schedule_in(&mut self, event: E, delay: SimTime) -> EventId {
        let at = self.now.saturating_add(delay);
        self.schedule(event, at).expect("delay is non-negative")
    }

    /// Cancel a pending event. Returns false if it already fired or is unknown.
    pub fn cancel(&mut self, id: EventId) -> bool {
        if self.queue.iter().any(|s| s.id == id) {
            self.cancelled.insert(id)
        } else {
            false
        }
    }

    /// Time of the earliest pending event.
    pub fn peek_time(&mut self) -> Option<SimTime> {
        self.skip_cancelled();
        self.queue.peek().map(|s| s.at)
    }

    fn skip_cancelled(&mut self) {
        while let Some(top) = self.queue.peek() {
            if self.cancelled.remove(&top.id) {
                self.queue.pop();
            } else {
                break;
            }
        }
    }

    /// Pop the next event with time ≤ `until`, moving the clock to its time.
    /// Handlers may schedule further events before calling this again, which
    /// is how reactive simulations are driven.
    pub fn next_until(&mut self, until: SimTime) -> Option<Fired<E>> {
        self.skip_cancelled();
        match self.queue.peek() {
            Some(top) if top.at <= until => {
                let s = self.queue.pop().expect("peeked");
                self.now = self.now.max(s.at);
                Some(Fired {
                    at: s.at,
                    id: s.id,
                    event: s.event,
                })
            }
            _ => None,
        }
    }

    /// Move the clock forward to `until` without firing anything.
    /// Earlier times are ignored; the clock never runs backwards.
    pub fn finish(&mut self, until: SimTime) {
        self.now = self.now.max(until);
    }

    /// Fire every event with time ≤ `until`, in (time, insertion) order, and
    /// leave the clock at `until`.
    pub fn advance(&mut self, until: SimTime) -> Vec<Fired<E>> {
        let mut fired = Vec::new();
        while let Some(f) = self.next_until(until) {
            fired.push(f);
        }
        self.finish(until);
        fired
    }

    /// Independent RNG substream for `stream`, derived from the clock seed.
    pub fn rng_for(&self, stream: &str) -> ChaCha8Rng {
        substream(self.seed, stream)
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded RNG for a named stream. Stable across runs and platforms.
pub fn substream(seed: u64, stream: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ fnv1a(stream.as_bytes())))
}

/// Static description of a link, as it appears in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub id: String,
    pub latency_us: u64,
    #[serde(default)]
    pub jitter_us: u64,
    #[serde(default)]
    pub loss_prob: f64,
    pub capacity_mbps: f64,
    #[serde(default = "default_true")]
    pub up: bool,
}

fn default_true() -> bool {
    true
}

impl LinkSpec {
    pub fn new(id: impl Into<String>, latency_us: u64, capacity_mbps: f64) -> Self {
        Self {
            id: id.into(),
            latency_us,
            jitter_us: 0,
            loss_prob: 0.0,
            capacity_mbps,
            up: true,
        }
    }

    pub fn with_jitter(mut self, jitter_us: u64) -> Self {
        self.jitter_us = jitter_us;
        self
    }

    pub fn with_loss(mut self, loss_prob: f64) -> Self {
        self.loss_prob = loss_prob;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |reason: &str| {
            Err(SimError::InvalidLink {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return bad("loss_prob must lie in [0, 1]");
        }
        if !self.capacity_mbps.is_finite() || self.capacity_mbps <= 0.0 {
            return bad("capacity_mbps must be positive");
        }
        Ok(())
    }

    /// Serialization time of `size_bytes` on this link, in nanoseconds (rounded up).
    pub fn serialization_ns(&self, size_bytes: u32) -> u64 {
        (f64::from(size_bytes) * 8_000.0 / self.capacity_mbps).ceil() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub seq: u64,
    pub size_bytes: u32,
    pub src: u32,
    pub dst: u32,
    pub slice_tag: Option<u32>,
    pub sent_at: SimTime,
}

impl Packet {
    pub fn new(seq: u64, size_bytes: u32, sent_at: SimTime) -> Result<Self, SimError> {
        if size_bytes == 0 {
            return Err(SimError::EmptyPacket);
        }
        Ok(Self {
            seq,
            size_bytes,
            src: 0,
            dst: 0,
            slice_tag: None,
            sent_at,
        })
    }

    pub fn tagged(mut self, slice_tag: u32) -> Self {
        self.slice_tag = Some(slice_tag);
        self
    }

    pub fn between(mut self, src: u32, dst: u32) -> Self {
        self.src = src;
        self.dst = dst;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxOutcome {
    Delivered { at: SimTime },
    Dropped,
}

impl TxOutcome {
    pub fn delivered_at(self) -> Option<SimTime> {
        match self {
            TxOutcome::Delivered { at } => Some(at),
            TxOutcome::Dropped => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub transmitted: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub delivered_bytes: u64,
}

/// A unidirectional FIFO link. A packet occupies the link for its
/// serialization time; packets never overtake each other.
#[derive(Debug, Clone)]
pub struct Link {
    spec: LinkSpec,
    busy_until_ns: u64,
    last_delivery_ns: u64,
    rng: ChaCha8Rng,
    stats: LinkStats,
}

impl Link {
    pub fn new(spec: LinkSpec, seed: u64) -> Result<Self, SimError> {
        spec.validate()?;
        let rng = substream(seed, &format!("link/{}", spec.id));
        Ok(Self {
            spec,
            busy_until_ns: 0,
            last_delivery_ns: 0,
            rng,
            stats: LinkStats::default(),
        })
    }

    pub fn spec(&self) -> &LinkSpec {
        &self.spec
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn is_up(&self) -> bool {
        self.spec.up
    }

    pub fn set_up(&mut self, up: bool) {
        self.spec.up = up;
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    /// Virtual time at which the link finishes serializing everything queued.
    pub fn busy_until(&self) -> SimTime {
        self.busy_until_ns.div_ceil(1_000)
    }

    pub fn is_idle(&self, now: SimTime) -> bool {
        self.busy_until_ns <= now * 1_000
    }

    pub fn transmit(&mut self, packet: &Packet, now: SimTime) -> TxOutcome {
        self.stats.transmitted += 1;
        if !self.spec.up {
            self.stats.dropped += 1;
            return TxOutcome::Dropped;
        }
        let ser_ns = self.spec.serialization_ns(packet.size_bytes);
        let start_ns = self.busy_until_ns.max(now * 1_000);
        self.busy_until_ns = start_ns + ser_ns;

        // Lost packets still occupied the wire.
        if self.spec.loss_prob > 0.0 && self.rng.gen_bool(self.spec.loss_prob) {
            self.stats.dropped += 1;
            return TxOutcome::Dropped;
        }

        let jitter_ns: i64 = if self.spec.jitter_us > 0 {
            let j = self.spec.jitter_us as i64;
            self.rng.gen_range(-j..=j) * 1_000
        } else {
            0
        };
        let raw_ns = (self.busy_until_ns + self.spec.latency_us * 1_000) as i64 + jitter_ns;
        let floor_ns = self.last_delivery_ns + if self.stats.delivered > 0 { ser_ns } else { 0 };
        let at_ns = (raw_ns.max(0) as u64).max(floor_ns);
        self.last_delivery_ns = at_ns;

        let at = at_ns.div_ceil(1_000).max(now + 1);
        self.stats.delivered += 1;
        self.stats.delivered_bytes += u64::from(packet.size_bytes);
        TxOutcome::Delivered { at }
    }
}
