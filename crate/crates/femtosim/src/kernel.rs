//! Deterministic discrete-event engine.
//!
//! A time-ordered event queue with stable FIFO tie-breaking, a monotone
//! simulation clock, and a per-run random source with independent substreams.
//!
//! Ordering invariants:
//! - events dequeue in nondecreasing fire time;
//! - equal fire times resolve by ascending insertion sequence;
//! - a cancelled event never fires.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::time::{SimDuration, SimTime};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("event delay must be finite and nonnegative, got {value}")]
    InvalidDelay { value: f64 },
    #[error("stop time {stop} precedes current clock {clock}")]
    StopBeforeClock { stop: SimTime, clock: SimTime },
    #[error("handler failed at t={at} on event #{seq} ({event}): {source}")]
    HandlerFailed {
        at: SimTime,
        seq: u64,
        event: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

/// Handle returned by `schedule`; permits cancellation until the event fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

/// Per-run random source. One master seed; every traffic source derives its
/// own substream so adding a source does not perturb the draws of the others.
#[derive(Debug, Clone)]
pub struct RunRng {
    seed: u64,
}

impl RunRng {
    pub fn new(seed: u64) -> Self {
        RunRng { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive the independent substream identified by `stream`.
    pub fn substream(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// The event container driving one run: clock, queue, and random source.
pub struct RunContext<E> {
    clock: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Reverse<(SimTime, u64)>>,
    live: HashMap<u64, E>,
    rng: RunRng,
}

impl<E> RunContext<E> {
    pub fn new(seed: u64) -> Self {
        RunContext {
            clock: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            live: HashMap::new(),
            rng: RunRng::new(seed),
        }
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn rng(&self) -> &RunRng {
        &self.rng
    }

    pub fn pending(&self) -> usize {
        self.live.len()
    }

    /// Enqueue `payload` to fire `delay` after the current clock.
    pub fn schedule(&mut self, delay: SimDuration, payload: E) -> EventHandle {
        self.schedule_at(self.clock + delay, payload)
    }

    /// Enqueue `payload` at an absolute fire time (not before the clock).
    pub fn schedule_at(&mut self, at: SimTime, payload: E) -> EventHandle {
        debug_assert!(at >= self.clock, "cannot schedule into the past");
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse((at, seq)));
        self.live.insert(seq, payload);
        EventHandle(seq)
    }

    /// Validating front-end for f64-second delays from config or callers.
    pub fn schedule_secs(
        &mut self,
        delay_secs: f64,
        payload: E,
    ) -> Result<EventHandle, KernelError> {
        let delay = SimDuration::from_secs_f64(delay_secs)?;
        Ok(self.schedule(delay, payload))
    }

    /// Suppress a pending event. Returns true iff the event had not yet fired
    /// (or been cancelled) and is now guaranteed never to fire.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.live.remove(&handle.0).is_some()
    }

    /// Pop the next event with fire time <= `stop`, advancing the clock to it.
    /// Returns None when nothing fires at or before `stop`; the clock is then
    /// left for `run_until` to finalize.
    fn pop_ready(&mut self, stop: SimTime) -> Option<(SimTime, u64, E)> {
        while let Some(&Reverse((at, seq))) = self.heap.peek() {
            if at > stop {
                return None;
            }
            self.heap.pop();
            if let Some(payload) = self.live.remove(&seq) {
                self.clock = at;
                return Some((at, seq, payload));
            }
            // tombstone of a cancelled event; skip
        }
        None
    }
}

impl<E: fmt::Debug> RunContext<E> {
    /// Process every event with fire time <= `stop_time`, in (time, seq)
    /// order. Returns true iff the queue was exhausted. On exhaustion the
    /// clock rests at the last processed fire time; otherwise at `stop_time`.
    pub fn run_until<F, Err>(
        &mut self,
        stop_time: SimTime,
        mut handler: F,
    ) -> Result<bool, KernelError>
    where
        F: FnMut(&mut Self, E) -> Result<(), Err>,
        Err: std::error::Error + Send + Sync + 'static,
    {
        if stop_time < self.clock {
            return Err(KernelError::StopBeforeClock {
                stop: stop_time,
                clock: self.clock,
            });
        }
        while let Some((at, seq, payload)) = self.pop_ready(stop_time) {
            let described = format!("{payload:?}");
            if let Err(e) = handler(self, payload) {
                return Err(KernelError::HandlerFailed {
                    at,
                    seq,
                    event: described,
                    source: Box::new(e),
                });
            }
        }
        // Events may remain past stop_time (or live tombstones already popped).
        let exhausted = self
            .heap
            .iter()
            .all(|Reverse((_, seq))| !self.live.contains_key(seq));
        if !exhausted {
            self.clock = stop_time;
        }
        Ok(exhausted)
    }
}
