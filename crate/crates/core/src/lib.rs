//! possim-core — deterministic discrete-event simulation of a merchant
//! payment network under a POS memory-scraper breach.
//!
//! The crate models the full kill chain of a 2013-style retail card breach
//! (vendor phish, lateral movement into the POS segment, in-memory track-2
//! scraping, encrypted staging, multi-phase exfiltration through internal
//! FTP repositories to external drop sites) together with the defenses that
//! would have stopped it: POS binary-integrity enforcement, adaptive and
//! correlated security alerts, zero-trust flow authorization, and
//! acquirer-side tokenization.
//!
//! All randomness flows through a single seeded generator owned by the
//! engine, so any (config, seed) pair replays to a byte-identical event log.

pub mod alerts;
pub mod attack;
pub mod engine;
pub mod integrity;
pub mod payment;
pub mod scenario;
pub mod segmentation;
pub mod topology;

pub use engine::{Engine, Event, EventKind, EventLog, Minutes, ScheduleError, SimClock, World};
pub use topology::{Flow, FlowOutcome, Host, HostId, HostRole, PayloadClass, Process, Topology};
