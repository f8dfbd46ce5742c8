//! Merchant network model: segments, hosts, processes and flows.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrity::Certificate;

/// Host identifier. Stable, human-readable, unique within a topology.
#[derive(
    Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct HostId(pub String);

impl From<&str> for HostId {
    fn from(s: &str) -> Self {
        HostId(s.to_string())
    }
}

impl std::fmt::Display for HostId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HostRole {
    PosTerminal,
    BusinessServer,
    FileServer,
    ExternalDrop,
    IntegrityCenter,
    SocConsole,
    Vendor,
}

/// A binary present on a host's disk, with whatever signature it arrived
/// with. Rejected binaries still land on disk; they just never execute.
#[derive(Debug, Clone)]
pub struct InstalledBinary {
    pub name: String,
    pub bytes: Vec<u8>,
    pub signature_state: SignatureState,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SignatureState {
    Unsigned,
    Signed { signer: String },
}

#[derive(Debug, Clone)]
pub struct Process {
    pub id: u64,
    pub name: String,
    pub owner: HostId,
    pub memory: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Host {
    pub id: HostId,
    pub segment: String,
    pub role: HostRole,
    pub installed_binaries: Vec<InstalledBinary>,
    pub processes: BTreeMap<u64, Process>,
    pub root_certs: Vec<Certificate>,
    pub credentials: BTreeSet<String>,
    /// Path → contents. Holds staging files, aggregated loot batches and
    /// merchant transaction stores.
    pub files: BTreeMap<String, Vec<u8>>,
    /// Verify-before-execute enforcement (only meaningful on POS terminals).
    pub enforce_integrity: bool,
}

impl Host {
    pub fn new(id: impl Into<String>, segment: impl Into<String>, role: HostRole) -> Self {
        Host {
            id: HostId(id.into()),
            segment: segment.into(),
            role,
            installed_binaries: Vec::new(),
            processes: BTreeMap::new(),
            root_certs: Vec::new(),
            credentials: BTreeSet::new(),
            files: BTreeMap::new(),
            enforce_integrity: false,
        }
    }

    pub fn process_by_name(&self, name: &str) -> Option<&Process> {
        self.processes.values().find(|p| p.name == name)
    }

    pub fn binary_by_name(&self, name: &str) -> Option<&InstalledBinary> {
        self.installed_binaries.iter().rev().find(|b| b.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PayloadClass {
    PlaintextPan,
    Ciphertext,
    Benign,
}

/// Credentialed inter-host traffic with a payload classification. `bytes`
/// counts payload size; `records` counts card records riding in the payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub src: HostId,
    pub dst: HostId,
    pub channel: String,
    pub bytes: u64,
    pub classification: PayloadClass,
    pub credential: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowOutcome {
    Delivered,
    Denied,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("unknown host {0}")]
    UnknownHost(HostId),
}

/// The network: named segments, hosts, and the symmetric segment adjacency
/// the flat-VLAN policy consults. The active segmentation policy lives here
/// so flow admission has one home.
#[derive(Debug, Clone, Default)]
pub struct Topology {
    pub segments: BTreeSet<String>,
    pub hosts: BTreeMap<HostId, Host>,
    adjacency: BTreeSet<(String, String)>,
    pub policy: crate::segmentation::SegmentationPolicy,
}

impl Topology {
    pub fn add_segment(&mut self, name: impl Into<String>) {
        self.segments.insert(name.into());
    }

    pub fn add_host(&mut self, host: Host) {
        self.hosts.insert(host.id.clone(), host);
    }

    /// Record a symmetric adjacency between two segments.
    pub fn add_adjacency(&mut self, a: &str, b: &str) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.adjacency.insert((lo.to_string(), hi.to_string()));
    }

    pub fn adjacent(&self, a: &str, b: &str) -> bool {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.adjacency.contains(&(lo.to_string(), hi.to_string()))
    }

    pub fn host(&self, id: &HostId) -> Result<&Host, TopologyError> {
        self.hosts.get(id).ok_or_else(|| TopologyError::UnknownHost(id.clone()))
    }

    pub fn host_mut(&mut self, id: &HostId) -> Result<&mut Host, TopologyError> {
        self.hosts
            .get_mut(id)
            .ok_or_else(|| TopologyError::UnknownHost(id.clone()))
    }

    pub fn segment_of(&self, id: &HostId) -> Option<&str> {
        self.hosts.get(id).map(|h| h.segment.as_str())
    }

    pub fn hosts_in_segment<'a>(&'a self, segment: &'a str) -> impl Iterator<Item = &'a Host> {
        self.hosts.values().filter(move |h| h.segment == segment)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacency_is_symmetric() {
        let mut topo = Topology::default();
        topo.add_segment("a");
        topo.add_segment("b");
        topo.add_adjacency("b", "a");
        assert!(topo.adjacent("a", "b"));
        assert!(topo.adjacent("b", "a"));
        assert!(!topo.adjacent("a", "c"));
    }

    #[test]
    fn unknown_host_lookup_errors() {
        let topo = Topology::default();
        let err = topo.host(&HostId::from("nope")).unwrap_err();
        assert_eq!(err, TopologyError::UnknownHost(HostId::from("nope")));
    }
}
