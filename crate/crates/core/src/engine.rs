//! Deterministic discrete-event engine: clock, event queue, event log.
//!
//! Time is measured in integer minutes since the scenario epoch. The queue
//! holds two flavors of work: *logged events* (simulation facts that land in
//! the append-only [`EventLog`]) and *callbacks* (internal machinery such as
//! agent cycles or escalation sweeps that may themselves emit events). Both
//! are drained in strict (time, scheduling order) so a fixed (config, seed)
//! pair replays to a byte-identical log.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alerts::Severity;
use crate::integrity::ExecVerdict;
use crate::topology::{FlowOutcome, HostId, PayloadClass};

/// Minutes since the scenario epoch.
pub type Minutes = u64;

pub const MINUTES_PER_DAY: Minutes = 24 * 60;

/// Monotonically non-decreasing simulation clock.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimClock {
    now: Minutes,
}

impl SimClock {
    pub fn now(&self) -> Minutes {
        self.now
    }

    /// Minute-of-day component of the current time.
    pub fn minute_of_day(&self) -> Minutes {
        self.now % MINUTES_PER_DAY
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("cannot schedule at t={requested} behind the clock (now={now})")]
    PastTime { requested: Minutes, now: Minutes },
}

/// A logged simulation fact. `seq` is assigned densely at append time, so
/// (time, seq) strictly increases over the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: Minutes,
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Kind-specific payloads for every fact the simulation records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventKind {
    VendorPhish {
        host: HostId,
    },
    CredentialTheft {
        credential: String,
        source: HostId,
    },
    ExecRequest {
        host: HostId,
        binary: String,
        verdict: ExecVerdict,
    },
    ProcessStart {
        host: HostId,
        process: u64,
        name: String,
    },
    MemoryScan {
        host: HostId,
        process: u64,
        scanner: String,
        records_found: u64,
        chunks: u64,
    },
    FileWrite {
        host: HostId,
        path: String,
        writer: String,
        bytes: u64,
        records: u64,
        ciphertext: bool,
    },
    Flow {
        src: HostId,
        dst: HostId,
        channel: String,
        bytes: u64,
        classification: PayloadClass,
        credential: Option<String>,
        records: u64,
        outcome: FlowOutcome,
    },
    AlertRaised {
        alert: String,
        detector: String,
        alert_type: String,
        severity: Severity,
        subject_host: HostId,
    },
    AttackerAction {
        action: String,
        host: Option<HostId>,
    },
    SelfDestruct {
        host: HostId,
        service: String,
    },
    SocAction {
        action: String,
        host: Option<HostId>,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::VendorPhish { .. } => "vendor-phish",
            EventKind::CredentialTheft { .. } => "credential-theft",
            EventKind::ExecRequest { .. } => "exec-request",
            EventKind::ProcessStart { .. } => "process-start",
            EventKind::MemoryScan { .. } => "memory-scan",
            EventKind::FileWrite { .. } => "file-write",
            EventKind::Flow { .. } => "flow",
            EventKind::AlertRaised { .. } => "alert-raised",
            EventKind::AttackerAction { .. } => "attacker-action",
            EventKind::SelfDestruct { .. } => "self-destruct",
            EventKind::SocAction { .. } => "soc-action",
        }
    }
}

/// Append-only, totally ordered record of everything that happened.
#[derive(Debug, Clone, Default, Serialize)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// One event per line, stable field order. This is the golden-file
    /// serialization format.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    fn append(&mut self, time: Minutes, kind: EventKind) -> &Event {
        let seq = self.events.len() as u64;
        self.events.push(Event { time, seq, kind });
        self.events.last().expect("just pushed")
    }
}

/// Scenario logic driven by the engine loop. `on_event` fires after a
/// scheduled event has been appended to the log; `on_callback` runs internal
/// machinery that may emit further events via [`Engine::emit`].
pub trait World<C> {
    fn on_event(&mut self, engine: &mut Engine<C>, event: &Event);
    fn on_callback(&mut self, engine: &mut Engine<C>, callback: C);
}

enum Action<C> {
    Emit(EventKind),
    Callback(C),
}

struct QueueItem<C> {
    time: Minutes,
    order: u64,
    action: Action<C>,
}

impl<C> PartialEq for QueueItem<C> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.order == other.order
    }
}
impl<C> Eq for QueueItem<C> {}
impl<C> PartialOrd for QueueItem<C> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<C> Ord for QueueItem<C> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.order).cmp(&(other.time, other.order))
    }
}

/// Single-threaded event loop. Owns the clock, the pending queue, the log,
/// and the one seeded RNG every module draws from.
pub struct Engine<C> {
    clock: SimClock,
    queue: BinaryHeap<Reverse<QueueItem<C>>>,
    order: u64,
    log: EventLog,
    rng: ChaCha8Rng,
}

impl<C> Engine<C> {
    pub fn new(seed: u64) -> Self {
        Engine {
            clock: SimClock::default(),
            queue: BinaryHeap::new(),
            order: 0,
            log: EventLog::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn clock(&self) -> SimClock {
        self.clock
    }

    pub fn now(&self) -> Minutes {
        self.clock.now
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn into_log(self) -> EventLog {
        self.log
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn push(&mut self, time: Minutes, action: Action<C>) -> Result<(), ScheduleError> {
        if time < self.clock.now {
            return Err(ScheduleError::PastTime {
                requested: time,
                now: self.clock.now,
            });
        }
        let order = self.order;
        self.order += 1;
        self.queue.push(Reverse(QueueItem {
            time,
            order,
            action,
        }));
        Ok(())
    }

    /// Enqueue an event to be logged (and handled) at `time`.
    pub fn schedule_event(&mut self, time: Minutes, kind: EventKind) -> Result<(), ScheduleError> {
        self.push(time, Action::Emit(kind))
    }

    /// Enqueue internal machinery at `time`; callbacks are not logged.
    pub fn schedule_callback(&mut self, time: Minutes, callback: C) -> Result<(), ScheduleError> {
        self.push(time, Action::Callback(callback))
    }

    /// Append a fact to the log at the current clock time.
    pub fn emit(&mut self, kind: EventKind) -> Event {
        self.log.append(self.clock.now, kind).clone()
    }

    /// Time and kind of the next pending queue entry, if any.
    pub fn peek_next(&self) -> Option<Minutes> {
        self.queue.peek().map(|item| item.0.time)
    }

    /// Process every queued item with time ≤ `until` in total order, then
    /// advance the clock to `until`. Returns the slice of events appended
    /// during this run.
    pub fn run_until<W: World<C>>(&mut self, until: Minutes, world: &mut W) -> &[Event] {
        debug_assert!(until >= self.clock.now, "run_until must not rewind time");
        let start = self.log.len();
        while self
            .queue
            .peek()
            .is_some_and(|item| item.0.time <= until)
        {
            let item = self.queue.pop().expect("peeked").0;
            self.clock.now = item.time;
            match item.action {
                Action::Emit(kind) => {
                    let event = self.log.append(item.time, kind).clone();
                    world.on_event(self, &event);
                }
                Action::Callback(callback) => world.on_callback(self, callback),
            }
        }
        if until > self.clock.now {
            self.clock.now = until;
        }
        &self.log.events()[start..]
    }
}
