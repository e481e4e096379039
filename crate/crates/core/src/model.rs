//! Session, packet, verdict, and trace vocabulary shared by every other
//! module.
//!
//! All values here are immutable after construction. "Mutation" is modeled
//! as derivation of a new value, which is what makes the evidence log
//! append-only: a derived packet can extend the evidence list but nothing
//! in the codebase can shrink or reorder it.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest;

// ============================================================================
// Identifiers
// ============================================================================

/// Opaque virtual-machine identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VmId(pub String);

impl VmId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Opaque tenant (subscriber organization) identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TenantId(pub String);

impl TenantId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TenantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Session identifier, derived deterministically from `(vm_id, nonce)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl SessionId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Opaque credentials token presented at the firewall layer.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(pub String);

impl Token {
    pub fn new(tok: impl Into<String>) -> Self {
        Self(tok.into())
    }
}

/// Simulated time in integer nanoseconds. Integer arithmetic keeps the
/// determinism contract exact (no float summation-order effects).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_secs_f64(secs: f64) -> Self {
        SimTime((secs * 1e9).round() as u64)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for SimTime {
    fn sum<I: Iterator<Item = SimTime>>(iter: I) -> SimTime {
        iter.fold(SimTime::ZERO, |a, b| a + b)
    }
}

// ============================================================================
// Layers and flags
// ============================================================================

/// The cloud layers, in inspection order. `App` is the terminal
/// application layer; the five before it are the inspection layers.
///
/// The derived `Ord` gives the total order FW < META < VAULT < IPS <
/// ANTIMAL < APP that every trace must respect.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum LayerId {
    Fw,
    Meta,
    Vault,
    Ips,
    Antimal,
    App,
}

impl LayerId {
    /// The five inspection layers, in pipeline order.
    pub const INSPECTION: [LayerId; 5] = [
        LayerId::Fw,
        LayerId::Meta,
        LayerId::Vault,
        LayerId::Ips,
        LayerId::Antimal,
    ];

    pub fn is_inspection(self) -> bool {
        self != LayerId::App
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerId::Fw => "fw",
            LayerId::Meta => "meta",
            LayerId::Vault => "vault",
            LayerId::Ips => "ips",
            LayerId::Antimal => "antimal",
            LayerId::App => "app",
        }
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Permit/deny flag with the 1 = permit, 0 = deny encoding kept on the
/// wire (serialized as the bare integer).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Flag {
    Deny,
    Permit,
}

impl Flag {
    pub fn from_bool(permit: bool) -> Self {
        if permit {
            Flag::Permit
        } else {
            Flag::Deny
        }
    }

    pub fn permitted(self) -> bool {
        self == Flag::Permit
    }

    pub fn as_bit(self) -> u8 {
        match self {
            Flag::Deny => 0,
            Flag::Permit => 1,
        }
    }
}

impl From<Flag> for u8 {
    fn from(f: Flag) -> u8 {
        f.as_bit()
    }
}

impl TryFrom<u8> for Flag {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Flag::Deny),
            1 => Ok(Flag::Permit),
            other => Err(format!("flag must be 0 or 1, got {other}")),
        }
    }
}

// ============================================================================
// Identity, evidence, packets
// ============================================================================

/// Identity claims carried by a session: which VM, which tenant, and the
/// tier the VM resides in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmIdentity {
    pub vm_id: VmId,
    pub tenant_id: TenantId,
    /// Tier index in the hierarchy, >= 1.
    pub tier: u32,
}

impl VmIdentity {
    pub fn new(
        vm_id: impl Into<String>,
        tenant_id: impl Into<String>,
        tier: u32,
    ) -> Result<Self, ModelError> {
        let vm_id = VmId::new(vm_id);
        let tenant_id = TenantId::new(tenant_id);
        if vm_id.0.is_empty() {
            return Err(ModelError::EmptyVmId);
        }
        if tenant_id.0.is_empty() {
            return Err(ModelError::EmptyTenantId);
        }
        if tier < 1 {
            return Err(ModelError::InvalidTier(tier));
        }
        Ok(Self { vm_id, tenant_id, tier })
    }
}

/// What a piece of evidence records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    /// An exploit planted into the session payload.
    ExploitPayload,
    /// An anomaly observed by the IPS layer (session continues).
    AnomalyReport,
    /// A signature hit at the IPS or anti-malware layer.
    DetectionRecord,
}

/// One entry in a session's append-only evidence log, tagged with the
/// inspection layer that observed or produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceEntry {
    pub layer: LayerId,
    pub kind: EvidenceKind,
    pub detail: String,
}

impl EvidenceEntry {
    pub fn new(layer: LayerId, kind: EvidenceKind, detail: impl Into<String>) -> Self {
        debug_assert!(layer.is_inspection(), "evidence layer must be an inspection layer");
        Self { layer, kind, detail: detail.into() }
    }
}

/// Proof of key possession: a recomputable digest over
/// `(key_secret, session_id)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyProof(pub [u8; 32]);

impl KeyProof {
    pub fn to_hex(self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl Serialize for KeyProof {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for KeyProof {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        if s.len() != 64 {
            return Err(serde::de::Error::custom("key proof must be 64 hex chars"));
        }
        let mut out = [0u8; 32];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let hex = std::str::from_utf8(chunk).map_err(serde::de::Error::custom)?;
            out[i] = u8::from_str_radix(hex, 16).map_err(serde::de::Error::custom)?;
        }
        Ok(KeyProof(out))
    }
}

/// Immutable descriptor of one tenant session attempt.
///
/// The evidence list is append-only: [`SessionPacket::append_evidence`]
/// is the only way to extend it and it returns a new packet whose
/// evidence has the prior list as a strict prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPacket {
    pub session_id: SessionId,
    pub vm: VmIdentity,
    pub credentials: Token,
    pub metadata_responses: BTreeMap<String, String>,
    pub key_proof: Option<KeyProof>,
    #[serde(with = "serde_payload")]
    pub payload: Vec<u8>,
    pub evidence: Vec<EvidenceEntry>,
    pub nonce: u64,
}

/// Payloads are abstract byte patterns; serialize them lossily as text for
/// report readability (payload bytes are ASCII in every shipped scenario).
mod serde_payload {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(payload: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&String::from_utf8_lossy(payload))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        Ok(String::deserialize(d)?.into_bytes())
    }
}

impl SessionPacket {
    /// Builds a fresh session packet. The session id is a pure function of
    /// `(vm_id, nonce)`, so construction is reproducible.
    pub fn new_session(
        vm: VmIdentity,
        credentials: Token,
        payload: Vec<u8>,
        nonce: u64,
    ) -> Result<Self, ModelError> {
        if vm.vm_id.0.is_empty() {
            return Err(ModelError::EmptyVmId);
        }
        if vm.tenant_id.0.is_empty() {
            return Err(ModelError::EmptyTenantId);
        }
        let session_id = digest::session_id(&vm.vm_id, nonce);
        Ok(Self {
            session_id,
            vm,
            credentials,
            metadata_responses: BTreeMap::new(),
            key_proof: None,
            payload,
            evidence: Vec::new(),
            nonce,
        })
    }

    /// Returns a packet with `entry` appended to the evidence log. The
    /// receiver is untouched.
    pub fn append_evidence(&self, entry: EvidenceEntry) -> SessionPacket {
        let mut next = self.clone();
        next.evidence.push(entry);
        next
    }

    /// Packet with the metadata form filled in.
    pub fn with_metadata_responses(&self, responses: BTreeMap<String, String>) -> SessionPacket {
        let mut next = self.clone();
        next.metadata_responses = responses;
        next
    }

    /// Packet carrying a key-possession proof.
    pub fn with_key_proof(&self, proof: KeyProof) -> SessionPacket {
        let mut next = self.clone();
        next.key_proof = Some(proof);
        next
    }
}

// ============================================================================
// Verdicts and traces
// ============================================================================

/// One layer's permit/deny decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerVerdict {
    pub layer: LayerId,
    pub flag: Flag,
    pub reason: String,
}

impl LayerVerdict {
    pub fn new(layer: LayerId, flag: Flag, reason: impl Into<String>) -> Self {
        Self { layer, flag, reason: reason.into() }
    }

    pub fn permit(layer: LayerId, reason: impl Into<String>) -> Self {
        Self::new(layer, Flag::Permit, reason)
    }

    pub fn deny(layer: LayerId, reason: impl Into<String>) -> Self {
        Self::new(layer, Flag::Deny, reason)
    }
}

/// Final disposition of a session, or `Pending` while verdicts are still
/// being recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pending,
    Authorized,
    Denied,
}

/// Ordered record of per-layer verdicts for one session.
///
/// Verdict layers are strictly increasing; a deny verdict finalizes the
/// trace and later recording attempts error. `timestamps[k]` is the
/// simulated time at which `verdicts[k]` was rendered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub session_id: SessionId,
    pub verdicts: Vec<LayerVerdict>,
    pub outcome: Outcome,
    pub denial_layer: Option<LayerId>,
    pub timestamps: Vec<SimTime>,
}

impl SessionTrace {
    pub fn new(session_id: SessionId) -> Self {
        Self {
            session_id,
            verdicts: Vec::new(),
            outcome: Outcome::Pending,
            denial_layer: None,
            timestamps: Vec::new(),
        }
    }

    /// Appends a verdict rendered at simulated time `at`.
    ///
    /// Layers must arrive in the exact canonical order with no gaps; a
    /// deny verdict (or a permit at ANTIMAL) finalizes the outcome.
    pub fn record_verdict(
        &self,
        verdict: LayerVerdict,
        at: SimTime,
    ) -> Result<SessionTrace, SequencingError> {
        if self.outcome != Outcome::Pending {
            return Err(SequencingError::AlreadyFinal { outcome: self.outcome });
        }
        let expected = LayerId::INSPECTION[self.verdicts.len()];
        if verdict.layer != expected {
            return Err(SequencingError::OutOfOrder { expected, got: verdict.layer });
        }

        let mut next = self.clone();
        let flag = verdict.flag;
        let layer = verdict.layer;
        next.verdicts.push(verdict);
        next.timestamps.push(at);
        if flag == Flag::Deny {
            next.outcome = Outcome::Denied;
            next.denial_layer = Some(layer);
        } else if layer == LayerId::Antimal {
            next.outcome = Outcome::Authorized;
        }
        Ok(next)
    }

    /// Flag for the given layer, if a verdict was recorded for it.
    pub fn flag_for(&self, layer: LayerId) -> Option<Flag> {
        self.verdicts.iter().find(|v| v.layer == layer).map(|v| v.flag)
    }

    /// Time of the last verdict, `SimTime::ZERO` for an empty trace.
    pub fn completed_at(&self) -> SimTime {
        self.timestamps.last().copied().unwrap_or(SimTime::ZERO)
    }
}

// ============================================================================
// Errors
// ============================================================================

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("vm_id must not be empty")]
    EmptyVmId,
    #[error("tenant_id must not be empty")]
    EmptyTenantId,
    #[error("tier must be >= 1, got {0}")]
    InvalidTier(u32),
}

/// Violation of the strict layer ordering of a trace. This error is a
/// deliberate part of the contract: recording out of order or past
/// finality must fail, never silently reorder.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum SequencingError {
    #[error("expected verdict for layer {expected}, got {got}")]
    OutOfOrder { expected: LayerId, got: LayerId },
    #[error("trace already finalized as {outcome:?}; no further verdicts allowed")]
    AlreadyFinal { outcome: Outcome },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vm() -> VmIdentity {
        VmIdentity::new("VM1", "tenantA", 1).unwrap()
    }

    fn packet() -> SessionPacket {
        SessionPacket::new_session(vm(), Token::new("tok"), Vec::new(), 0).unwrap()
    }

    #[test]
    fn new_session_is_deterministic() {
        let a = SessionPacket::new_session(vm(), Token::new("tok"), Vec::new(), 0).unwrap();
        let b = SessionPacket::new_session(vm(), Token::new("tok"), Vec::new(), 0).unwrap();
        assert_eq!(a.session_id, b.session_id);
        assert!(a.evidence.is_empty());
        assert!(a.metadata_responses.is_empty());
        assert!(a.key_proof.is_none());
    }

    #[test]
    fn nonce_distinguishes_sessions() {
        let p = b"payload".to_vec();
        let a = SessionPacket::new_session(vm(), Token::new("tok"), p.clone(), 7).unwrap();
        let b = SessionPacket::new_session(vm(), Token::new("tok"), p, 8).unwrap();
        assert_ne!(a.session_id, b.session_id);
    }

    #[test]
    fn empty_identifiers_rejected() {
        assert_eq!(VmIdentity::new("", "t", 1), Err(ModelError::EmptyVmId));
        assert_eq!(VmIdentity::new("v", "", 1), Err(ModelError::EmptyTenantId));
        assert_eq!(VmIdentity::new("v", "t", 0), Err(ModelError::InvalidTier(0)));
    }

    #[test]
    fn append_evidence_single() {
        let e1 = EvidenceEntry::new(LayerId::Ips, EvidenceKind::AnomalyReport, "a");
        let p = packet();
        let p2 = p.append_evidence(e1.clone());
        assert!(p.evidence.is_empty());
        assert_eq!(p2.evidence, vec![e1]);
    }

    #[test]
    fn append_evidence_preserves_order() {
        let e1 = EvidenceEntry::new(LayerId::Ips, EvidenceKind::AnomalyReport, "first");
        let e2 = EvidenceEntry::new(LayerId::Antimal, EvidenceKind::DetectionRecord, "second");
        let p = packet().append_evidence(e1.clone());
        let p2 = p.append_evidence(e2.clone());
        assert_eq!(p2.evidence, vec![e1.clone(), e2]);
        // prior list is a strict prefix
        assert_eq!(&p2.evidence[..p.evidence.len()], p.evidence.as_slice());
    }

    #[test]
    fn record_verdict_pending_then_authorized() {
        let trace = SessionTrace::new(packet().session_id);
        let trace = trace
            .record_verdict(LayerVerdict::permit(LayerId::Fw, "ok"), SimTime::ZERO)
            .unwrap();
        assert_eq!(trace.outcome, Outcome::Pending);
        assert_eq!(trace.verdicts.len(), 1);

        let mut t = trace;
        for layer in [LayerId::Meta, LayerId::Vault, LayerId::Ips, LayerId::Antimal] {
            t = t.record_verdict(LayerVerdict::permit(layer, "ok"), SimTime::ZERO).unwrap();
        }
        assert_eq!(t.outcome, Outcome::Authorized);
        assert_eq!(t.denial_layer, None);
    }

    #[test]
    fn record_verdict_rejects_gaps() {
        let trace = SessionTrace::new(packet().session_id)
            .record_verdict(LayerVerdict::permit(LayerId::Fw, "ok"), SimTime::ZERO)
            .unwrap();
        let err = trace
            .record_verdict(LayerVerdict::permit(LayerId::Vault, "skip"), SimTime::ZERO)
            .unwrap_err();
        assert_eq!(
            err,
            SequencingError::OutOfOrder { expected: LayerId::Meta, got: LayerId::Vault }
        );
    }

    #[test]
    fn denial_is_final() {
        let trace = SessionTrace::new(packet().session_id)
            .record_verdict(LayerVerdict::deny(LayerId::Fw, "no entry"), SimTime::ZERO)
            .unwrap();
        assert_eq!(trace.outcome, Outcome::Denied);
        assert_eq!(trace.denial_layer, Some(LayerId::Fw));
        let err = trace
            .record_verdict(LayerVerdict::permit(LayerId::Meta, "late"), SimTime::ZERO)
            .unwrap_err();
        assert!(matches!(err, SequencingError::AlreadyFinal { .. }));
    }

    #[test]
    fn layer_order_is_total() {
        use LayerId::*;
        let order = [Fw, Meta, Vault, Ips, Antimal, App];
        for w in order.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn flag_round_trips_as_bit() {
        assert_eq!(serde_json::to_string(&Flag::Permit).unwrap(), "1");
        assert_eq!(serde_json::to_string(&Flag::Deny).unwrap(), "0");
        assert_eq!(serde_json::from_str::<Flag>("1").unwrap(), Flag::Permit);
        assert!(serde_json::from_str::<Flag>("2").is_err());
    }
}
