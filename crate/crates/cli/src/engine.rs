//! Single-owner simulation loop. Every request becomes a job executed between
//! clock ticks, so handlers never touch the world concurrently.

use std::time::{Duration, Instant};

use micromano::sim::SimTime;
use micromano::world::World;
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot, watch};

const TICK: Duration = Duration::from_millis(10);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockState {
    pub now_us: SimTime,
    /// Virtual seconds per wall second.
    pub pace: f64,
    pub paused: bool,
}

pub struct Sim {
    pub world: World,
    pace: f64,
    paused: bool,
    anchor_wall: Instant,
    anchor_virtual: SimTime,
}

impl Sim {
    fn rebase(&mut self) {
        self.anchor_wall = Instant::now();
        self.anchor_virtual = self.world.now();
    }

    fn tick(&mut self) {
        if self.paused || self.pace <= 0.0 {
            return;
        }
        let elapsed = self.anchor_wall.elapsed().as_secs_f64() * self.pace;
        let target = self.anchor_virtual + (elapsed * 1e6) as SimTime;
        if target > self.world.now() {
            self.world.advance_to(target);
        }
    }

    pub fn clock(&self) -> ClockState {
        ClockState {
            now_us: self.world.now(),
            pace: self.pace,
            paused: self.paused,
        }
    }

    pub fn set_paused(&mut self, paused: bool) {
        self.tick();
        self.paused = paused;
        self.rebase();
    }

    pub fn set_pace(&mut self, pace: f64) {
        self.tick();
        self.pace = pace.max(0.0);
        self.rebase();
    }

    /// Step virtual time forward regardless of pacing.
    pub fn advance(&mut self, by: SimTime) {
        let to = self.world.now() + by;
        self.world.advance_to(to);
        self.rebase();
    }
}

type Job = Box<dyn FnOnce(&mut Sim) + Send>;

#[derive(Clone)]
pub struct Engine {
    jobs: mpsc::UnboundedSender<Job>,
    events: watch::Receiver<u64>,
}

#[derive(Debug, thiserror::Error)]
#[error("simulation loop stopped")]
pub struct Stopped;

impl Engine {
    /// Spawn the loop on the current runtime. `pace` 0 freezes the clock
    /// until [`Sim::advance`] is called.
    pub fn spawn(world: World, pace: f64, paused: bool) -> Engine {
        let (jobs, mut rx) = mpsc::unbounded_channel::<Job>();
        let (events_tx, events) = watch::channel(world.last_event_id());
        let mut sim = Sim {
            world,
            pace: pace.max(0.0),
            paused,
            anchor_wall: Instant::now(),
            anchor_virtual: 0,
        };
        sim.rebase();
        tokio::spawn(async move {
            let mut ticker = tokio::time::interval(TICK);
            ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                tokio::select! {
                    job = rx.recv() => match job {
                        Some(job) => job(&mut sim),
                        None => break,
                    },
                    _ = ticker.tick() => sim.tick(),
                }
                events_tx.send_if_modified(|last| {
                    let id = sim.world.last_event_id();
                    let changed = *last != id;
                    *last = id;
                    changed
                });
            }
        });
        Engine { jobs, events }
    }

    pub async fn call<R, F>(&self, f: F) -> Result<R, Stopped>
    where
        R: Send + 'static,
        F: FnOnce(&mut Sim) -> R + Send + 'static,
    {
        let (tx, rx) = oneshot::channel();
        self.jobs
            .send(Box::new(move |sim| {
                let _ = tx.send(f(sim));
            }))
            .map_err(|_| Stopped)?;
        rx.await.map_err(|_| Stopped)
    }

    /// Notified with the newest feed id whenever it changes.
    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.events.clone()
    }
}
