//! Attacker phase machine and the POS memory-scraper agent: chunked track-2
//! scanning, encrypted staging, office-hours uploads to internal
//! repositories, multi-phase relay to external drops, and self-destruct on
//! out-of-target hosts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Event, EventKind, Minutes, MINUTES_PER_DAY};
use crate::payment::{luhn_valid, TRACK2_MAX_LEN};
use crate::topology::{Flow, FlowOutcome, Host, HostId, HostRole, PayloadClass, Process};

// ---------------------------------------------------------------------------
// Phase machine
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    InitialInfection,
    PosInfection,
    DataCollection,
    Exfiltration,
    Monetization,
}

impl Phase {
    pub fn index(self) -> u8 {
        match self {
            Phase::InitialInfection => 0,
            Phase::PosInfection => 1,
            Phase::DataCollection => 2,
            Phase::Exfiltration => 3,
            Phase::Monetization => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::InitialInfection => "initial-infection",
            Phase::PosInfection => "pos-infection",
            Phase::DataCollection => "data-collection",
            Phase::Exfiltration => "exfiltration",
            Phase::Monetization => "monetization",
        }
    }

    fn next(self) -> Option<Phase> {
        match self {
            Phase::InitialInfection => Some(Phase::PosInfection),
            Phase::PosInfection => Some(Phase::DataCollection),
            Phase::DataCollection => Some(Phase::Exfiltration),
            Phase::Exfiltration => Some(Phase::Monetization),
            Phase::Monetization => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackerState {
    pub phase: Phase,
    pub stolen_credentials: BTreeSet<String>,
    pub controlled_hosts: BTreeSet<HostId>,
}

impl Default for AttackerState {
    fn default() -> Self {
        AttackerState {
            phase: Phase::InitialInfection,
            stolen_credentials: BTreeSet::new(),
            controlled_hosts: BTreeSet::new(),
        }
    }
}

/// What the phase transitions need to know about the world in order to read
/// the log: which hosts sit in the POS segment, which are repositories,
/// which segment is external, and the scraper's service name.
#[derive(Debug, Clone, Default)]
pub struct EvidenceContext {
    pub pos_hosts: BTreeSet<HostId>,
    pub repo_hosts: BTreeSet<HostId>,
    pub external_hosts: BTreeSet<HostId>,
    pub service_name: String,
    pub staging_path: String,
}

/// Facts accumulated from the event log that enable phase transitions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Evidence {
    /// A vendor credential was stolen (phishing succeeded).
    pub vendor_credential_stolen: bool,
    /// A cross-segment flow into the POS segment was delivered.
    pub pos_segment_accessed: bool,
    /// The scraper service started on some POS host.
    pub agent_installed: bool,
    /// The scraper ran at least one memory scan (installed + tested).
    pub agent_tested: bool,
    /// Scraped records were staged to the agent's staging path.
    pub data_staged: bool,
    /// A staged batch was delivered to an internal repository.
    pub repo_holds_data: bool,
    /// Loot was delivered to an external drop host.
    pub drop_holds_data: bool,
}

impl Evidence {
    pub fn observe(&mut self, event: &Event, ctx: &EvidenceContext) {
        match &event.kind {
            EventKind::CredentialTheft { .. } => self.vendor_credential_stolen = true,
            EventKind::Flow {
                src,
                dst,
                outcome: FlowOutcome::Delivered,
                ..
            } => {
                if ctx.pos_hosts.contains(dst) && !ctx.pos_hosts.contains(src) {
                    self.pos_segment_accessed = true;
                }
                if ctx.repo_hosts.contains(dst) && ctx.pos_hosts.contains(src) {
                    self.repo_holds_data = true;
                }
                if ctx.external_hosts.contains(dst) {
                    self.drop_holds_data = true;
                }
            }
            EventKind::ProcessStart { host, name, .. } => {
                if *name == ctx.service_name && ctx.pos_hosts.contains(host) {
                    self.agent_installed = true;
                }
            }
            EventKind::MemoryScan { host, scanner, .. } => {
                if *scanner == ctx.service_name && ctx.pos_hosts.contains(host) {
                    self.agent_tested = true;
                }
            }
            EventKind::FileWrite { path, .. } => {
                if *path == ctx.staging_path {
                    self.data_staged = true;
                }
            }
            _ => {}
        }
    }

    pub fn scan(events: &[Event], ctx: &EvidenceContext) -> Evidence {
        let mut evidence = Evidence::default();
        for event in events {
            evidence.observe(event, ctx);
        }
        evidence
    }
}

/// Advance at most one phase, when the log evidence enables it. Entering
/// PosInfection requires both a stolen vendor credential and a delivered
/// cross-segment flow into the POS segment, so a policy that denies that
/// access pins the attacker in InitialInfection forever.
pub fn advance_phase(state: &AttackerState, events: &[Event], ctx: &EvidenceContext) -> AttackerState {
    advance_phase_with_evidence(state, &Evidence::scan(events, ctx))
}

pub fn advance_phase_with_evidence(state: &AttackerState, evidence: &Evidence) -> AttackerState {
    let enabled = match state.phase {
        Phase::InitialInfection => {
            evidence.vendor_credential_stolen && evidence.pos_segment_accessed
        }
        Phase::PosInfection => evidence.agent_installed && evidence.agent_tested,
        Phase::DataCollection => evidence.data_staged && evidence.repo_holds_data,
        Phase::Exfiltration => evidence.drop_holds_data,
        Phase::Monetization => false,
    };
    if !enabled {
        return state.clone();
    }
    let mut next = state.clone();
    next.phase = state.phase.next().expect("non-terminal phase");
    next
}

// ---------------------------------------------------------------------------
// Scraper agent configuration
// ---------------------------------------------------------------------------

/// Memory-scraper agent configuration: what to call itself, which processes
/// to scrape, how to stage and where to send the take.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScraperConfig {
    pub service_name: String,
    pub target_process_names: Vec<String>,
    pub chunk_size: usize,
    pub staging_path: String,
    pub encryption_key: u64,
    pub encrypt_staged: bool,
    /// Half-open [start, end) window in minutes-of-day.
    pub office_hours: (Minutes, Minutes),
    pub repo_hosts: Vec<HostId>,
    pub drop_hosts: Vec<HostId>,
    pub obfuscated: bool,
    pub target_roles: Vec<HostRole>,
}

impl Default for ScraperConfig {
    fn default() -> Self {
        ScraperConfig {
            service_name: "POSWDS".to_string(),
            target_process_names: vec!["pos.exe".to_string()],
            chunk_size: 10_000_000,
            staging_path: r"C:\WINDOWS\system 32\winxml.dll".to_string(),
            encryption_key: 0x5eed,
            encrypt_staged: true,
            office_hours: (9 * 60, 17 * 60),
            repo_hosts: Vec::new(),
            drop_hosts: Vec::new(),
            obfuscated: true,
            target_roles: vec![HostRole::PosTerminal],
        }
    }
}

impl ScraperConfig {
    pub fn within_office_hours(&self, now: Minutes) -> bool {
        let minute = now % MINUTES_PER_DAY;
        minute >= self.office_hours.0 && minute < self.office_hours.1
    }

    /// Deterministic "closest" repository for a POS host.
    pub fn nearest_repo(&self, host: &HostId) -> Option<&HostId> {
        if self.repo_hosts.is_empty() {
            return None;
        }
        let weight: usize = host.0.bytes().map(|b| b as usize).sum();
        Some(&self.repo_hosts[weight % self.repo_hosts.len()])
    }
}

// ---------------------------------------------------------------------------
// Memory scanning
// ---------------------------------------------------------------------------

/// One harvested card record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StolenRecord {
    pub pan: String,
    pub track2: String,
    pub source_host: HostId,
    pub scrape_time: Minutes,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScanError {
    #[error("process {0} is not a scrape target")]
    NonTargetProcess(String),
}

/// Overlap between adjacent scan chunks: the maximum track-2 length, so a
/// record straddling a chunk boundary is always fully visible in one chunk.
pub const CHUNK_OVERLAP: usize = TRACK2_MAX_LEN;

const FRAME_SEPARATOR: u8 = b'=';
const FRAME_TAIL_DIGITS: usize = 7; // YYMM + 3-digit service code
const PAN_MIN: usize = 13;
const PAN_MAX: usize = 19;

/// Chunk windows over a buffer of `len` bytes: fixed-size windows stepping
/// `chunk - CHUNK_OVERLAP`, so adjacent windows share `CHUNK_OVERLAP` bytes.
pub fn chunk_windows(len: usize, chunk: usize) -> Vec<(usize, usize)> {
    assert!(chunk > CHUNK_OVERLAP, "chunk must exceed the overlap");
    let mut windows = Vec::new();
    if len == 0 {
        return windows;
    }
    let step = chunk - CHUNK_OVERLAP;
    let mut start = 0;
    loop {
        let end = (start + chunk).min(len);
        windows.push((start, end));
        if end == len {
            break;
        }
        start += step;
    }
    windows
}

/// Scan a raw buffer in chunks for framed track-2 data: a maximal digit run
/// of 13–19 digits passing Luhn, immediately followed by `=` and seven
/// digits. Hits are deduplicated by buffer offset.
pub fn scan_bytes(buf: &[u8], chunk: usize, host: &HostId, now: Minutes) -> Vec<StolenRecord> {
    let mut hits: BTreeMap<usize, StolenRecord> = BTreeMap::new();
    for (start, end) in chunk_windows(buf.len(), chunk) {
        scan_window(buf, start, end, host, now, &mut hits);
    }
    hits.into_values().collect()
}

fn scan_window(
    buf: &[u8],
    start: usize,
    end: usize,
    host: &HostId,
    now: Minutes,
    hits: &mut BTreeMap<usize, StolenRecord>,
) {
    let mut i = start;
    while i < end {
        if !buf[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        // Run starting at the window's first byte: if that byte is not the
        // buffer origin, left context is invisible here; the previous
        // (overlapping) window judged it with context.
        if i == start && start > 0 {
            while i < end && buf[i].is_ascii_digit() {
                i += 1;
            }
            continue;
        }
        if i > 0 && buf[i - 1].is_ascii_digit() {
            // Mid-run entry cannot happen: the loop always walks whole runs.
            i += 1;
            continue;
        }
        let run_start = i;
        while i < end && buf[i].is_ascii_digit() {
            i += 1;
        }
        if i == end && end < buf.len() {
            // Run touches the window edge; the next window sees it whole.
            continue;
        }
        let run_len = i - run_start;
        if !(PAN_MIN..=PAN_MAX).contains(&run_len) {
            continue;
        }
        let frame_end = i + 1 + FRAME_TAIL_DIGITS;
        if frame_end > end {
            if frame_end <= buf.len() {
                // Framing spills past the window; defer to the next one.
                continue;
            }
            continue;
        }
        if buf[i] != FRAME_SEPARATOR || !buf[i + 1..frame_end].iter().all(u8::is_ascii_digit) {
            continue;
        }
        let pan = std::str::from_utf8(&buf[run_start..i]).expect("digits are utf8");
        if !luhn_valid(pan) {
            continue;
        }
        let track2 = std::str::from_utf8(&buf[run_start..frame_end]).expect("frame is utf8");
        hits.entry(run_start).or_insert_with(|| StolenRecord {
            pan: pan.to_string(),
            track2: track2.to_string(),
            source_host: host.clone(),
            scrape_time: now,
        });
    }
}

/// Scan a target process's memory. Errors unless the process name matches
/// the agent's target list.
pub fn scan_memory_chunks(
    process: &Process,
    cfg: &ScraperConfig,
    now: Minutes,
) -> Result<Vec<StolenRecord>, ScanError> {
    if !cfg
        .target_process_names
        .iter()
        .any(|n| n == &process.name)
    {
        return Err(ScanError::NonTargetProcess(process.name.clone()));
    }
    Ok(scan_bytes(&process.memory, cfg.chunk_size, &process.owner, now))
}

// ---------------------------------------------------------------------------
// Staging encryption
// ---------------------------------------------------------------------------

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Position-addressed keystream XOR; applying it twice at the same offset
/// decrypts. Appending ciphertext at growing file offsets therefore stays
/// decryptable from offset zero.
pub fn keystream_xor(key: u64, start_offset: usize, data: &mut [u8]) {
    for (i, byte) in data.iter_mut().enumerate() {
        let pos = start_offset + i;
        let block = splitmix64(key ^ (pos as u64 / 8));
        let lane = (pos % 8) * 8;
        *byte ^= ((block >> lane) & 0xff) as u8;
    }
}

fn record_lines(records: &[StolenRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.extend_from_slice(r.track2.as_bytes());
        out.push(b'|');
        out.extend_from_slice(r.source_host.0.as_bytes());
        out.push(b'|');
        out.extend_from_slice(r.scrape_time.to_string().as_bytes());
        out.push(b'\n');
    }
    out
}

fn parse_record_lines(plain: &[u8]) -> Vec<StolenRecord> {
    let mut records = Vec::new();
    for line in plain.split(|&b| b == b'\n') {
        if line.is_empty() {
            continue;
        }
        let Ok(text) = std::str::from_utf8(line) else {
            continue;
        };
        let mut parts = text.split('|');
        let (Some(track2), Some(host), Some(time)) = (parts.next(), parts.next(), parts.next())
        else {
            continue;
        };
        let Some(sep) = track2.find('=') else { continue };
        let Ok(scrape_time) = time.parse::<Minutes>() else {
            continue;
        };
        records.push(StolenRecord {
            pan: track2[..sep].to_string(),
            track2: track2.to_string(),
            source_host: HostId::from(host),
            scrape_time,
        });
    }
    records
}

/// Outcome of staging: how much was appended to the staging file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageWrite {
    pub path: String,
    pub bytes_written: u64,
    pub records: u64,
    pub ciphertext: bool,
}

/// Append scraped records to the staging file, encrypted under the agent
/// key when enabled. Returns `None` for an empty record list (no write).
pub fn stage_records(
    cfg: &ScraperConfig,
    records: &[StolenRecord],
    host: &mut Host,
) -> Option<StageWrite> {
    if records.is_empty() {
        return None;
    }
    let mut payload = record_lines(records);
    let file = host.files.entry(cfg.staging_path.clone()).or_default();
    if cfg.encrypt_staged {
        keystream_xor(cfg.encryption_key, file.len(), &mut payload);
    }
    let bytes_written = payload.len() as u64;
    file.extend_from_slice(&payload);
    Some(StageWrite {
        path: cfg.staging_path.clone(),
        bytes_written,
        records: records.len() as u64,
        ciphertext: cfg.encrypt_staged,
    })
}

/// Decrypt oracle for staged bytes (also parses plaintext staging when
/// encryption is disabled).
pub fn decrypt_staging(cfg: &ScraperConfig, file_bytes: &[u8]) -> Vec<StolenRecord> {
    let mut plain = file_bytes.to_vec();
    if cfg.encrypt_staged {
        keystream_xor(cfg.encryption_key, 0, &mut plain);
    }
    parse_record_lines(&plain)
}

/// Decrypt a loot batch that was ciphered standalone (offset zero).
pub fn decrypt_batch(key: u64, encrypted: bool, batch: &[u8]) -> Vec<StolenRecord> {
    let mut plain = batch.to_vec();
    if encrypted {
        keystream_xor(key, 0, &mut plain);
    }
    parse_record_lines(&plain)
}

// ---------------------------------------------------------------------------
// Upload and relay
// ---------------------------------------------------------------------------

/// A prepared upload: the flow to send plus the payload that moves when the
/// flow is delivered. The payload is re-ciphered standalone so each loot
/// batch decrypts independently of staging-file offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct UploadPayload {
    pub flow: Flow,
    pub content: Vec<u8>,
    pub records: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum UploadOutcome {
    Upload(UploadPayload),
    Deferred,
}

/// Only during office hours, and only with a non-empty staging file, emit
/// one flow toward the nearest repository and clear staging. The caller
/// delivers the flow; if policy denies it the caller re-stages the content.
pub fn upload_staged(cfg: &ScraperConfig, host: &mut Host, now: Minutes) -> UploadOutcome {
    if !cfg.within_office_hours(now) {
        return UploadOutcome::Deferred;
    }
    let Some(repo) = cfg.nearest_repo(&host.id).cloned() else {
        return UploadOutcome::Deferred;
    };
    let staged = match host.files.get(&cfg.staging_path) {
        Some(bytes) if !bytes.is_empty() => bytes.clone(),
        _ => return UploadOutcome::Deferred,
    };
    let records = decrypt_staging(cfg, &staged);
    let mut content = record_lines(&records);
    if cfg.encrypt_staged {
        keystream_xor(cfg.encryption_key, 0, &mut content);
    }
    host.files.remove(&cfg.staging_path);
    let classification = if cfg.encrypt_staged {
        PayloadClass::Ciphertext
    } else {
        PayloadClass::PlaintextPan
    };
    UploadOutcome::Upload(UploadPayload {
        flow: Flow {
            src: host.id.clone(),
            dst: repo,
            channel: "ftp".to_string(),
            bytes: content.len() as u64,
            classification,
            credential: None, // caller fills in the backdoor credential
        },
        content,
        records: records.len() as u64,
    })
}

/// One planned relay flow from a repository to a drop host.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayPlan {
    pub flow: Flow,
    pub batches: Vec<(String, Vec<u8>)>,
    pub records: u64,
}

/// Partition the repository's pending loot batches across the reachable
/// drops, one flow per drop that receives at least one batch. Batches are
/// moved, never duplicated, so external bytes never exceed staged bytes.
pub fn relay_exfil(
    repo: &mut Host,
    batch_prefix: &str,
    drops: &[HostId],
    key: u64,
    encrypted: bool,
) -> Vec<RelayPlan> {
    let batch_paths: Vec<String> = repo
        .files
        .keys()
        .filter(|p| p.starts_with(batch_prefix))
        .cloned()
        .collect();
    if batch_paths.is_empty() || drops.is_empty() {
        return Vec::new();
    }
    let mut per_drop: Vec<Vec<(String, Vec<u8>)>> = vec![Vec::new(); drops.len()];
    for (i, path) in batch_paths.into_iter().enumerate() {
        let content = repo.files.remove(&path).expect("listed above");
        per_drop[i % drops.len()].push((path, content));
    }
    let mut plans = Vec::new();
    for (drop, batches) in drops.iter().zip(per_drop) {
        if batches.is_empty() {
            continue;
        }
        let bytes: u64 = batches.iter().map(|(_, c)| c.len() as u64).sum();
        let records: u64 = batches
            .iter()
            .map(|(_, c)| decrypt_batch(key, encrypted, c).len() as u64)
            .sum();
        plans.push(RelayPlan {
            flow: Flow {
                src: repo.id.clone(),
                dst: drop.clone(),
                channel: "ftp".to_string(),
                bytes,
                classification: if encrypted {
                    PayloadClass::Ciphertext
                } else {
                    PayloadClass::PlaintextPan
                },
                credential: None,
            },
            batches,
            records,
        });
    }
    plans
}

// ---------------------------------------------------------------------------
// Self-destruct
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DestructVerdict {
    Keep,
    Remove,
}

/// The agent avoids unfamiliar environments: anything outside its target
/// role list triggers removal.
pub fn self_destruct_check(cfg: &ScraperConfig, host: &Host) -> DestructVerdict {
    if cfg.target_roles.contains(&host.role) {
        DestructVerdict::Keep
    } else {
        DestructVerdict::Remove
    }
}

// ---------------------------------------------------------------------------
// Binary synthesis
// ---------------------------------------------------------------------------

/// Build the scraper binary image. Unobfuscated builds carry their telltale
/// strings (service name, staging path, targets, repos) in plaintext;
/// obfuscated builds XOR them so signature scanners find nothing.
pub fn scraper_binary(cfg: &ScraperConfig) -> Vec<u8> {
    let mut strings: Vec<String> = vec![cfg.service_name.clone(), cfg.staging_path.clone()];
    strings.extend(cfg.target_process_names.iter().cloned());
    strings.extend(cfg.repo_hosts.iter().map(|h| h.0.clone()));
    binary_image(b"MZ\x90POSSCRAPE", &strings, cfg.obfuscated)
}

/// Build the repository-side exfiltration tool. It hardcodes the backdoor
/// credentials and drop addresses and ships unobfuscated.
pub fn exfil_binary(
    backdoor_credential: &str,
    backdoor_password: &str,
    drops: &[HostId],
    version: u32,
) -> Vec<u8> {
    let mut strings = vec![
        backdoor_credential.to_string(),
        backdoor_password.to_string(),
        format!("exfil-agent/{version}"),
    ];
    strings.extend(drops.iter().map(|h| h.0.clone()));
    binary_image(b"MZ\x90EXFILTOOL", &strings, false)
}

fn binary_image(magic: &[u8], strings: &[String], obfuscated: bool) -> Vec<u8> {
    let mut image = magic.to_vec();
    for s in strings {
        image.push(0);
        if obfuscated {
            image.extend(s.bytes().map(|b| b ^ 0x5a));
        } else {
            image.extend_from_slice(s.as_bytes());
        }
    }
    image.push(0);
    image
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payment::{generate_card, luhn_check_digit};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx() -> EvidenceContext {
        EvidenceContext {
            pos_hosts: [HostId::from("pos-001")].into(),
            repo_hosts: [HostId::from("ftp-01")].into(),
            external_hosts: [HostId::from("drop-miami")].into(),
            service_name: "POSWDS".to_string(),
            staging_path: r"C:\WINDOWS\system 32\winxml.dll".to_string(),
        }
    }

    fn flow_event(seq: u64, src: &str, dst: &str, outcome: FlowOutcome) -> Event {
        Event {
            time: 0,
            seq,
            kind: EventKind::Flow {
                src: HostId::from(src),
                dst: HostId::from(dst),
                channel: "file-share".to_string(),
                bytes: 1,
                classification: PayloadClass::Benign,
                credential: Some("fazio-billing".to_string()),
                records: 0,
                outcome,
            },
        }
    }

    fn theft_event(seq: u64) -> Event {
        Event {
            time: 0,
            seq,
            kind: EventKind::CredentialTheft {
                credential: "fazio-billing".to_string(),
                source: HostId::from("fazio-hvac"),
            },
        }
    }

    // --- phase machine -----------------------------------------------------

    #[test]
    fn credential_theft_alone_leaves_initial_infection() {
        let state = AttackerState::default();
        let next = advance_phase(&state, &[theft_event(0)], &ctx());
        assert_eq!(next.phase, Phase::InitialInfection);
    }

    #[test]
    fn credential_theft_plus_pos_access_enters_pos_infection() {
        let state = AttackerState::default();
        let log = vec![
            theft_event(0),
            flow_event(1, "ariba-billing", "pos-001", FlowOutcome::Delivered),
        ];
        let next = advance_phase(&state, &log, &ctx());
        assert_eq!(next.phase, Phase::PosInfection);
    }

    #[test]
    fn denied_pos_access_does_not_count() {
        let state = AttackerState::default();
        let log = vec![
            theft_event(0),
            flow_event(1, "ariba-billing", "pos-001", FlowOutcome::Denied),
        ];
        let next = advance_phase(&state, &log, &ctx());
        assert_eq!(next.phase, Phase::InitialInfection);
    }

    #[test]
    fn staged_data_and_reachable_repo_enter_exfiltration() {
        let mut state = AttackerState::default();
        state.phase = Phase::DataCollection;
        let log = vec![
            Event {
                time: 0,
                seq: 0,
                kind: EventKind::FileWrite {
                    host: HostId::from("pos-001"),
                    path: ctx().staging_path,
                    writer: "POSWDS".to_string(),
                    bytes: 64,
                    records: 2,
                    ciphertext: true,
                },
            },
            flow_event(1, "pos-001", "ftp-01", FlowOutcome::Delivered),
        ];
        let next = advance_phase(&state, &log, &ctx());
        assert_eq!(next.phase, Phase::Exfiltration);
    }

    #[test]
    fn advances_only_one_phase_per_call() {
        let state = AttackerState::default();
        // Evidence for everything at once.
        let evidence = Evidence {
            vendor_credential_stolen: true,
            pos_segment_accessed: true,
            agent_installed: true,
            agent_tested: true,
            data_staged: true,
            repo_holds_data: true,
            drop_holds_data: true,
        };
        let one = advance_phase_with_evidence(&state, &evidence);
        assert_eq!(one.phase, Phase::PosInfection);
        let two = advance_phase_with_evidence(&one, &evidence);
        assert_eq!(two.phase, Phase::DataCollection);
    }

    #[test]
    fn monetization_is_terminal() {
        let mut state = AttackerState::default();
        state.phase = Phase::Monetization;
        let evidence = Evidence {
            drop_holds_data: true,
            ..Evidence::default()
        };
        assert_eq!(advance_phase_with_evidence(&state, &evidence).phase, Phase::Monetization);
    }

    // --- scanning ----------------------------------------------------------

    /// Whole-buffer brute-force oracle: walks every maximal digit run with
    /// full context, no chunking.
    fn oracle_scan(buf: &[u8]) -> Vec<(usize, String)> {
        let mut hits = Vec::new();
        let mut i = 0;
        while i < buf.len() {
            if !buf[i].is_ascii_digit() {
                i += 1;
                continue;
            }
            let start = i;
            while i < buf.len() && buf[i].is_ascii_digit() {
                i += 1;
            }
            let len = i - start;
            if !(13..=19).contains(&len) {
                continue;
            }
            let frame_end = i + 1 + 7;
            if frame_end > buf.len() || buf[i] != b'=' {
                continue;
            }
            if !buf[i + 1..frame_end].iter().all(u8::is_ascii_digit) {
                continue;
            }
            let pan = std::str::from_utf8(&buf[start..i]).unwrap();
            if luhn_valid(pan) {
                hits.push((start, pan.to_string()));
            }
        }
        hits
    }

    fn framed(pan: &str) -> Vec<u8> {
        format!(";{pan}=2412201999888777").into_bytes()
    }

    #[test]
    fn single_framed_pan_yields_one_record() {
        let mut buf = b"xxheaderxx".to_vec();
        buf.extend(framed("4111111111111111"));
        buf.extend(b"trailer");
        let records = scan_bytes(&buf, 10_000, &HostId::from("pos-001"), 5);
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].pan, "4111111111111111");
        assert_eq!(records[0].scrape_time, 5);
        let oracle = oracle_scan(&buf);
        assert_eq!(oracle.len(), 1);
        assert_eq!(oracle[0].1, "4111111111111111");
    }

    #[test]
    fn twenty_five_megabytes_scan_as_three_chunks() {
        assert_eq!(chunk_windows(25_000_000, 10_000_000).len(), 3);
        assert_eq!(chunk_windows(5, 10_000_000).len(), 1);
        assert_eq!(chunk_windows(0, 10_000_000).len(), 0);
    }

    #[test]
    fn pan_straddling_a_chunk_boundary_is_found_exactly_once() {
        let chunk = 10_000usize;
        let mut buf = vec![b'x'; chunk - 8];
        let track = framed("4111111111111111");
        buf.extend_from_slice(&track);
        buf.extend(vec![b'y'; 200]);
        let records = scan_bytes(&buf, chunk, &HostId::from("pos-001"), 0);
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].pan, "4111111111111111");
        assert_eq!(oracle_scan(&buf).len(), 1);
    }

    #[test]
    fn non_target_process_is_rejected() {
        let process = Process {
            id: 1,
            name: "explorer.exe".to_string(),
            owner: HostId::from("pos-001"),
            memory: Vec::new(),
        };
        let cfg = ScraperConfig::default();
        assert_eq!(
            scan_memory_chunks(&process, &cfg, 0),
            Err(ScanError::NonTargetProcess("explorer.exe".to_string()))
        );
    }

    proptest! {
        /// Chunked scan with overlap must match the whole-buffer oracle on
        /// random buffers spanning up to three chunks, including planted
        /// and boundary-straddling PANs.
        #[test]
        fn chunked_scan_matches_whole_buffer_oracle(seed in 0u64..500) {
            let chunk = 1_000usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let len = rng.random_range(1..(3 * chunk));
            let mut buf: Vec<u8> = (0..len)
                .map(|_| {
                    // Digit-heavy noise provokes long runs and near-frames.
                    let roll: u8 = rng.random_range(0..10);
                    match roll {
                        0..=4 => rng.random_range(b'0'..=b'9'),
                        5 => b'=',
                        _ => rng.random_range(b'a'..=b'z'),
                    }
                })
                .collect();
            // Plant a few real framed PANs at random offsets, one near a
            // chunk boundary when the buffer is long enough.
            let mut offsets = vec![];
            for _ in 0..rng.random_range(0..4usize) {
                offsets.push(rng.random_range(0..len));
            }
            if len > chunk + 40 {
                offsets.push(chunk - rng.random_range(1..30usize));
            }
            for off in offsets {
                let card = generate_card(&mut rng);
                let frame = framed(&card.pan);
                if off + frame.len() <= buf.len() {
                    buf[off..off + frame.len()].copy_from_slice(&frame);
                }
            }
            let chunked: Vec<(usize, String)> = {
                let mut hits = BTreeMap::new();
                for (s, e) in chunk_windows(buf.len(), chunk) {
                    scan_window(&buf, s, e, &HostId::from("h"), 0, &mut hits);
                }
                hits.into_iter().map(|(off, r)| (off, r.pan)).collect()
            };
            prop_assert_eq!(chunked, oracle_scan(&buf));
        }
    }

    // --- staging -----------------------------------------------------------

    fn sample_records(n: usize, seed: u64) -> Vec<StolenRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let card = generate_card(&mut rng);
                StolenRecord {
                    pan: card.pan.clone(),
                    track2: card.track2.clone(),
                    source_host: HostId::from("pos-001"),
                    scrape_time: i as Minutes,
                }
            })
            .collect()
    }

    #[test]
    fn staged_ciphertext_contains_no_luhn_valid_runs() {
        let cfg = ScraperConfig::default();
        let mut host = Host::new("pos-001", "pos", HostRole::PosTerminal);
        let records = sample_records(25, 11);
        let write = stage_records(&cfg, &records, &mut host).expect("staged");
        assert!(write.ciphertext);
        assert_eq!(write.records, 25);
        let file = &host.files[&cfg.staging_path];
        assert!(oracle_scan(file).is_empty(), "ciphertext leaked a framed PAN");
        // Belt and braces: no bare Luhn-valid digit run of 13..=19 at all.
        let mut i = 0;
        while i < file.len() {
            if !file[i].is_ascii_digit() {
                i += 1;
                continue;
            }
            let start = i;
            while i < file.len() && file[i].is_ascii_digit() {
                i += 1;
            }
            let run = std::str::from_utf8(&file[start..i]).unwrap();
            for w in 13..=19usize.min(run.len()) {
                for s in 0..=(run.len() - w) {
                    assert!(!luhn_valid(&run[s..s + w]));
                }
            }
        }
    }

    #[test]
    fn empty_record_list_writes_nothing() {
        let cfg = ScraperConfig::default();
        let mut host = Host::new("pos-001", "pos", HostRole::PosTerminal);
        assert_eq!(stage_records(&cfg, &[], &mut host), None);
        assert!(host.files.is_empty());
    }

    #[test]
    fn decrypt_round_trips_staged_records_across_appends() {
        let cfg = ScraperConfig::default();
        let mut host = Host::new("pos-001", "pos", HostRole::PosTerminal);
        let records = sample_records(10, 12);
        stage_records(&cfg, &records[..6], &mut host).unwrap();
        stage_records(&cfg, &records[6..], &mut host).unwrap();
        let decrypted = decrypt_staging(&cfg, &host.files[&cfg.staging_path]);
        assert_eq!(decrypted, records);
    }

    #[test]
    fn plaintext_staging_exposes_pans_when_encryption_disabled() {
        let cfg = ScraperConfig {
            encrypt_staged: false,
            ..ScraperConfig::default()
        };
        let mut host = Host::new("pos-001", "pos", HostRole::PosTerminal);
        let records = sample_records(5, 13);
        let write = stage_records(&cfg, &records, &mut host).unwrap();
        assert!(!write.ciphertext);
        let file = &host.files[&cfg.staging_path];
        assert_eq!(oracle_scan(file).len(), 5);
    }

    // --- upload ------------------------------------------------------------

    fn agent_cfg() -> ScraperConfig {
        ScraperConfig {
            repo_hosts: vec![HostId::from("ftp-01"), HostId::from("ftp-02")],
            drop_hosts: vec![HostId::from("drop-miami"), HostId::from("drop-brazil")],
            ..ScraperConfig::default()
        }
    }

    #[test]
    fn upload_during_office_hours_emits_ciphertext_flow_and_clears_staging() {
        let cfg = agent_cfg();
        let mut host = Host::new("pos-001", "pos", HostRole::PosTerminal);
        stage_records(&cfg, &sample_records(4, 14), &mut host).unwrap();
        let thirteen_hundred = 13 * 60;
        match upload_staged(&cfg, &mut host, thirteen_hundred) {
            UploadOutcome::Upload(payload) => {
                assert_eq!(payload.flow.classification, PayloadClass::Ciphertext);
                assert!(cfg.repo_hosts.contains(&payload.flow.dst));
                assert_eq!(payload.records, 4);
                assert_eq!(payload.flow.bytes, payload.content.len() as u64);
            }
            UploadOutcome::Deferred => panic!("expected an upload"),
        }
        assert!(!host.files.contains_key(&cfg.staging_path));
    }

    #[test]
    fn upload_outside_office_hours_is_deferred() {
        let cfg = agent_cfg();
        let mut host = Host::new("pos-001", "pos", HostRole::PosTerminal);
        stage_records(&cfg, &sample_records(4, 15), &mut host).unwrap();
        let three_am = 3 * 60;
        assert_eq!(upload_staged(&cfg, &mut host, three_am), UploadOutcome::Deferred);
        assert!(host.files.contains_key(&cfg.staging_path));
    }

    #[test]
    fn upload_with_empty_staging_is_deferred() {
        let cfg = agent_cfg();
        let mut host = Host::new("pos-001", "pos", HostRole::PosTerminal);
        assert_eq!(upload_staged(&cfg, &mut host, 13 * 60), UploadOutcome::Deferred);
    }

    // --- relay -------------------------------------------------------------

    #[test]
    fn relay_splits_batches_across_both_drops() {
        let cfg = agent_cfg();
        let mut repo = Host::new("ftp-01", "storage", HostRole::FileServer);
        for (i, batch) in [b"one".to_vec(), b"two".to_vec(), b"three".to_vec()]
            .into_iter()
            .enumerate()
        {
            repo.files.insert(format!("loot/batch-{i:04}"), batch);
        }
        let plans = relay_exfil(&mut repo, "loot/", &cfg.drop_hosts, cfg.encryption_key, true);
        assert_eq!(plans.len(), 2);
        let total: u64 = plans.iter().map(|p| p.flow.bytes).sum();
        assert_eq!(total, 11); // 3 + 3 + 5 bytes moved, never duplicated
        assert!(repo.files.keys().all(|k| !k.starts_with("loot/")));
    }

    #[test]
    fn relay_with_no_batches_is_empty() {
        let cfg = agent_cfg();
        let mut repo = Host::new("ftp-01", "storage", HostRole::FileServer);
        assert!(relay_exfil(&mut repo, "loot/", &cfg.drop_hosts, cfg.encryption_key, true).is_empty());
    }

    #[test]
    fn office_hours_window_is_half_open() {
        let cfg = ScraperConfig::default();
        assert!(cfg.within_office_hours(9 * 60));
        assert!(cfg.within_office_hours(13 * 60));
        assert!(!cfg.within_office_hours(17 * 60));
        assert!(!cfg.within_office_hours(3 * 60));
        assert!(cfg.within_office_hours(MINUTES_PER_DAY * 40 + 10 * 60));
    }

    // --- self-destruct -----------------------------------------------------

    #[test]
    fn pos_terminal_matching_predicate_is_kept() {
        let cfg = ScraperConfig::default();
        let host = Host::new("pos-001", "pos", HostRole::PosTerminal);
        assert_eq!(self_destruct_check(&cfg, &host), DestructVerdict::Keep);
    }

    #[test]
    fn business_server_outside_predicate_is_removed() {
        let cfg = ScraperConfig::default();
        let host = Host::new("biz-ops-01", "business", HostRole::BusinessServer);
        assert_eq!(self_destruct_check(&cfg, &host), DestructVerdict::Remove);
    }

    // --- binaries ----------------------------------------------------------

    #[test]
    fn obfuscation_hides_indicator_strings() {
        let cfg = ScraperConfig {
            obfuscated: false,
            ..agent_cfg()
        };
        let plain = scraper_binary(&cfg);
        assert!(contains(&plain, b"POSWDS"));
        assert!(contains(&plain, b"winxml.dll"));

        let obfuscated = scraper_binary(&ScraperConfig {
            obfuscated: true,
            ..agent_cfg()
        });
        assert!(!contains(&obfuscated, b"POSWDS"));
        assert!(!contains(&obfuscated, b"winxml"));
    }

    #[test]
    fn exfil_tool_carries_backdoor_credentials_in_plaintext() {
        let bin = exfil_binary("Best1_user", "BackupU$r", &[HostId::from("drop-miami")], 1);
        assert!(contains(&bin, b"Best1_user"));
        assert!(contains(&bin, b"BackupU$r"));
        assert!(contains(&bin, b"drop-miami"));
    }

    fn contains(haystack: &[u8], needle: &[u8]) -> bool {
        haystack.windows(needle.len()).any(|w| w == needle)
    }

    // --- keystream ---------------------------------------------------------

    #[test]
    fn keystream_xor_is_an_involution_at_any_offset() {
        let mut data = b"the quick brown fox".to_vec();
        let original = data.clone();
        keystream_xor(77, 1234, &mut data);
        assert_ne!(data, original);
        keystream_xor(77, 1234, &mut data);
        assert_eq!(data, original);
    }

    #[test]
    fn luhn_check_digit_agrees_with_validation() {
        let body = "411111111111111";
        let digit = luhn_check_digit(body).unwrap();
        assert!(luhn_valid(&format!("{body}{digit}")));
    }
}
