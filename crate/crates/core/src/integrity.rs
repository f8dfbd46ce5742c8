//! POS binary-integrity protocol: a central integrity center generates a
//! key pair and self-signed certificate, provisions terminals with the
//! certificate, audits and signs approved binaries, and terminals verify
//! every binary before executing it.
//!
//! The signature scheme is abstract from the protocol's point of view; any
//! unforgeable sign/verify pair satisfies the contract. Ed25519 backs it.

use std::collections::BTreeMap;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::topology::{Host, HostRole, InstalledBinary, Process, SignatureState};

pub type BinaryDigest = [u8; 32];

pub fn digest(bytes: &[u8]) -> BinaryDigest {
    Sha256::digest(bytes).into()
}

/// Signing identity held only by the integrity center. The private half is
/// deliberately not serializable.
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    pub fn public_key(&self) -> VerifyingKey {
        self.signing.verifying_key()
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        self.signing.sign(message)
    }
}

/// Self-signed certificate carrying the center's public key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub subject: String,
    pub public_key: [u8; 32],
    pub self_signature: [u8; 64],
}

impl Certificate {
    fn signed_payload(subject: &str, public_key: &[u8; 32]) -> Vec<u8> {
        let mut payload = Vec::with_capacity(subject.len() + 32);
        payload.extend_from_slice(subject.as_bytes());
        payload.extend_from_slice(public_key);
        payload
    }

    /// True iff the embedded self-signature verifies under the embedded key.
    pub fn verify_self(&self) -> bool {
        let Ok(key) = VerifyingKey::from_bytes(&self.public_key) else {
            return false;
        };
        let payload = Self::signed_payload(&self.subject, &self.public_key);
        key.verify(&payload, &Signature::from_bytes(&self.self_signature))
            .is_ok()
    }
}

/// A binary plus the integrity center's signature over its digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedBinary {
    pub bytes: Vec<u8>,
    pub digest: BinaryDigest,
    pub signature: [u8; 64],
    pub signer_subject: String,
}

impl SignedBinary {
    /// Wire format for golden tests: length-prefixed bytes, digest hex,
    /// signature hex, signer subject (each length-prefixed, u32 LE).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut field = |data: &[u8], out: &mut Vec<u8>| {
            out.extend_from_slice(&(data.len() as u32).to_le_bytes());
            out.extend_from_slice(data);
        };
        field(&self.bytes, &mut out);
        field(hex::encode(self.digest).as_bytes(), &mut out);
        field(hex::encode(self.signature).as_bytes(), &mut out);
        field(self.signer_subject.as_bytes(), &mut out);
        out
    }
}

/// Set of audited digests the center is willing to sign.
#[derive(Debug, Clone, Default)]
pub struct AuditManifest {
    approved: BTreeMap<BinaryDigest, String>,
}

impl AuditManifest {
    pub fn approve(&mut self, bytes: &[u8], label: impl Into<String>) {
        self.approved.insert(digest(bytes), label.into());
    }

    pub fn contains(&self, d: &BinaryDigest) -> bool {
        self.approved.contains_key(d)
    }

    pub fn label(&self, d: &BinaryDigest) -> Option<&str> {
        self.approved.get(d).map(String::as_str)
    }

    pub fn digests(&self) -> impl Iterator<Item = &BinaryDigest> {
        self.approved.keys()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IntegrityError {
    #[error("host role does not accept provisioning")]
    WrongRole,
    #[error("audit rejected binary: {reason}")]
    AuditReject { reason: String },
}

/// Step 1: generate ⟨pk, sk⟩ and a self-signed certificate containing pk.
pub fn generate_identity(subject: &str, rng: &mut impl RngCore) -> (KeyPair, Certificate) {
    let mut secret = [0u8; 32];
    rng.fill_bytes(&mut secret);
    let signing = SigningKey::from_bytes(&secret);
    let public_key = signing.verifying_key().to_bytes();
    let payload = Certificate::signed_payload(subject, &public_key);
    let self_signature = signing.sign(&payload).to_bytes();
    (
        KeyPair { signing },
        Certificate {
            subject: subject.to_string(),
            public_key,
            self_signature,
        },
    )
}

/// Step 2: place the certificate in the terminal's root list. Idempotent.
pub fn provision_terminal(host: &mut Host, cert: &Certificate) -> Result<(), IntegrityError> {
    if host.role != HostRole::PosTerminal {
        return Err(IntegrityError::WrongRole);
    }
    if !host.root_certs.contains(cert) {
        host.root_certs.push(cert.clone());
    }
    Ok(())
}

/// Step 3: sign a binary iff its digest is in the audit manifest.
pub fn audit_and_sign(
    bytes: &[u8],
    manifest: &AuditManifest,
    keypair: &KeyPair,
    subject: &str,
) -> Result<SignedBinary, IntegrityError> {
    let d = digest(bytes);
    if !manifest.contains(&d) {
        return Err(IntegrityError::AuditReject {
            reason: format!("digest {} not in audit manifest", hex::encode(d)),
        });
    }
    let signature = keypair.sign(&d).to_bytes();
    Ok(SignedBinary {
        bytes: bytes.to_vec(),
        digest: d,
        signature,
        signer_subject: subject.to_string(),
    })
}

/// What a terminal is asked to run: a signed binary or raw bytes.
#[derive(Debug, Clone)]
pub enum ExecInput {
    Signed(SignedBinary),
    Raw(Vec<u8>),
}

impl ExecInput {
    pub fn bytes(&self) -> &[u8] {
        match self {
            ExecInput::Signed(sb) => &sb.bytes,
            ExecInput::Raw(bytes) => bytes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecVerdict {
    Executed,
    RejectedUnsigned,
    RejectedTampered,
    RejectedUntrustedSigner,
}

/// Step 5 plus execution: verify the binary against the host's root certs
/// and spawn a process on success. The binary lands on disk either way; a
/// rejection just never runs. With enforcement disabled everything executes.
///
/// Returns the verdict and the spawned process id, if any.
pub fn verify_and_execute(
    host: &mut Host,
    input: &ExecInput,
    process_name: &str,
    next_pid: u64,
) -> (ExecVerdict, Option<u64>) {
    let verdict = if !host.enforce_integrity {
        ExecVerdict::Executed
    } else {
        match input {
            ExecInput::Raw(_) => ExecVerdict::RejectedUnsigned,
            ExecInput::Signed(sb) => verify_signed(host, sb),
        }
    };
    let signature_state = match input {
        ExecInput::Signed(sb) => SignatureState::Signed {
            signer: sb.signer_subject.clone(),
        },
        ExecInput::Raw(_) => SignatureState::Unsigned,
    };
    host.installed_binaries.push(InstalledBinary {
        name: process_name.to_string(),
        bytes: input.bytes().to_vec(),
        signature_state,
    });
    if verdict != ExecVerdict::Executed {
        return (verdict, None);
    }
    host.processes.insert(
        next_pid,
        Process {
            id: next_pid,
            name: process_name.to_string(),
            owner: host.id.clone(),
            memory: Vec::new(),
        },
    );
    (verdict, Some(next_pid))
}

fn verify_signed(host: &Host, sb: &SignedBinary) -> ExecVerdict {
    let Some(cert) = host
        .root_certs
        .iter()
        .find(|c| c.subject == sb.signer_subject)
    else {
        return ExecVerdict::RejectedUntrustedSigner;
    };
    if digest(&sb.bytes) != sb.digest {
        return ExecVerdict::RejectedTampered;
    }
    let Ok(key) = VerifyingKey::from_bytes(&cert.public_key) else {
        return ExecVerdict::RejectedUntrustedSigner;
    };
    match key.verify(&sb.digest, &Signature::from_bytes(&sb.signature)) {
        Ok(()) => ExecVerdict::Executed,
        Err(_) => ExecVerdict::RejectedTampered,
    }
}
