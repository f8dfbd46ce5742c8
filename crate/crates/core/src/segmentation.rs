//! Flow-admission policy engine: flat-VLAN (credential-bypassable) versus
//! zero-trust (explicit authorization matrix, everything monitored), plus
//! per-credential behavioral anomaly detection.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::engine::Minutes;
use crate::topology::{Flow, Host, HostId, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    #[default]
    FlatVlan,
    ZeroTrust,
}

/// One allow entry of the zero-trust authorization matrix. Anything not
/// listed is denied.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AuthzEntry {
    pub credential: String,
    pub src_segment: String,
    pub dst_segment: String,
    pub channel: String,
}

#[derive(Debug, Clone, Default)]
pub struct SegmentationPolicy {
    pub kind: PolicyKind,
    /// Flat-VLAN: cross-segment flows between allowlisted segment pairs pass
    /// without a credential check.
    pub credential_bypass: bool,
    pub authz_matrix: BTreeSet<AuthzEntry>,
    monitor_all: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowDecision {
    Allow,
    Deny,
}

/// Record of one evaluated flow. Under zero trust every attempt produces
/// exactly one of these, delivered or not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MonitorRecord {
    pub time: Minutes,
    pub src: HostId,
    pub dst: HostId,
    pub channel: String,
    pub credential: Option<String>,
    pub decision: FlowDecision,
}

impl SegmentationPolicy {
    pub fn flat_vlan(credential_bypass: bool, monitor_all: bool) -> Self {
        SegmentationPolicy {
            kind: PolicyKind::FlatVlan,
            credential_bypass,
            authz_matrix: BTreeSet::new(),
            monitor_all,
        }
    }

    /// Zero trust always monitors, regardless of the requested flag.
    pub fn zero_trust(authz_matrix: BTreeSet<AuthzEntry>) -> Self {
        SegmentationPolicy {
            kind: PolicyKind::ZeroTrust,
            credential_bypass: false,
            authz_matrix,
            monitor_all: true,
        }
    }

    pub fn monitor_all(&self) -> bool {
        self.monitor_all || self.kind == PolicyKind::ZeroTrust
    }

    /// Decide one flow. Flat-VLAN admits same-segment traffic, allowlisted
    /// segment pairs, and (with the bypass flag) any cross-segment flow
    /// presenting a credential the destination accepts. Zero trust admits
    /// exactly the matrix entries.
    pub fn evaluate_flow(
        &self,
        topo: &Topology,
        flow: &Flow,
        src: &Host,
        dst: &Host,
        now: Minutes,
    ) -> (FlowDecision, Option<MonitorRecord>) {
        let decision = match self.kind {
            PolicyKind::FlatVlan => {
                if src.segment == dst.segment || topo.adjacent(&src.segment, &dst.segment) {
                    FlowDecision::Allow
                } else if self.credential_bypass
                    && flow
                        .credential
                        .as_ref()
                        .is_some_and(|c| dst.credentials.contains(c))
                {
                    FlowDecision::Allow
                } else {
                    FlowDecision::Deny
                }
            }
            PolicyKind::ZeroTrust => match &flow.credential {
                Some(credential) => {
                    let entry = AuthzEntry {
                        credential: credential.clone(),
                        src_segment: src.segment.clone(),
                        dst_segment: dst.segment.clone(),
                        channel: flow.channel.clone(),
                    };
                    if self.authz_matrix.contains(&entry) {
                        FlowDecision::Allow
                    } else {
                        FlowDecision::Deny
                    }
                }
                // Unidentified traffic is never authorized.
                None => FlowDecision::Deny,
            },
        };
        let monitor = self.monitor_all().then(|| MonitorRecord {
            time: now,
            src: flow.src.clone(),
            dst: flow.dst.clone(),
            channel: flow.channel.clone(),
            credential: flow.credential.clone(),
            decision,
        });
        (decision, monitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BehaviorVerdict {
    Normal,
    Anomalous,
}

/// Per-credential history of (destination, channel) pairs. The first
/// `warm_up_count` flows of a credential build its profile; afterwards a
/// previously unseen pair is anomalous (and then learned).
#[derive(Debug, Clone)]
pub struct BehaviorProfile {
    warm_up_count: u64,
    counts: BTreeMap<String, u64>,
    seen: BTreeMap<String, BTreeSet<(HostId, String)>>,
}

impl BehaviorProfile {
    pub const DEFAULT_WARM_UP: u64 = 20;

    pub fn new(warm_up_count: u64) -> Self {
        BehaviorProfile {
            warm_up_count,
            counts: BTreeMap::new(),
            seen: BTreeMap::new(),
        }
    }

    pub fn check_behavior(&mut self, flow: &Flow) -> BehaviorVerdict {
        let Some(credential) = &flow.credential else {
            return BehaviorVerdict::Normal;
        };
        let count = self.counts.entry(credential.clone()).or_insert(0);
        *count += 1;
        let in_warm_up = *count <= self.warm_up_count;
        let pair = (flow.dst.clone(), flow.channel.clone());
        let pairs = self.seen.entry(credential.clone()).or_default();
        let novel = pairs.insert(pair);
        if in_warm_up || !novel {
            BehaviorVerdict::Normal
        } else {
            BehaviorVerdict::Anomalous
        }
    }
}
