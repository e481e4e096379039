//! The five lookup stores consulted by the inspection pipeline: firewall
//! credentials, tenant metadata, the digital vault, and the two signature
//! stores (IPS and anti-malware).
//!
//! Repositories are immutable after load. Every membership decision is a
//! pure function of `(store, query)`, which is what lets distinct
//! sessions be inspected concurrently without coordination.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::digest::{self, KeySecret};
use crate::model::{Flag, KeyProof, SessionId, TenantId, Token, VmId};
use crate::scenario::Scenario;

// ============================================================================
// Firewall
// ============================================================================

/// vm_id -> expected credentials token. Gateway store for every session.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FirewallDb {
    entries: BTreeMap<VmId, Token>,
}

impl FirewallDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_entry(&mut self, vm_id: VmId, token: Token) -> Result<(), RepoError> {
        if self.entries.contains_key(&vm_id) {
            return Err(RepoError::DuplicateVmId(vm_id));
        }
        self.entries.insert(vm_id, token);
        Ok(())
    }

    /// 1 iff the VM has an entry and the presented token matches it.
    /// Absence is a deny verdict, not an error.
    pub fn fw_lookup(&self, vm_id: &VmId, credentials: &Token) -> Flag {
        Flag::from_bool(self.entries.get(vm_id) == Some(credentials))
    }

    /// The registered token, if any. Models an agent using credentials it
    /// legitimately holds.
    pub fn token_for(&self, vm_id: &VmId) -> Option<&Token> {
        self.entries.get(vm_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

// ============================================================================
// Tenant metadata
// ============================================================================

/// tenant_id -> registered personal details, plus the size of the
/// challenge form issued at the metadata layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaDb {
    challenge_size: usize,
    profiles: BTreeMap<TenantId, BTreeMap<String, String>>,
}

impl MetaDb {
    pub fn new(challenge_size: usize) -> Self {
        Self { challenge_size, profiles: BTreeMap::new() }
    }

    pub fn challenge_size(&self) -> usize {
        self.challenge_size
    }

    pub fn insert_profile(
        &mut self,
        tenant_id: TenantId,
        profile: BTreeMap<String, String>,
    ) -> Result<(), RepoError> {
        if profile.len() < self.challenge_size {
            return Err(RepoError::ProfileTooSmall {
                tenant: tenant_id,
                fields: profile.len(),
                challenge_size: self.challenge_size,
            });
        }
        if self.profiles.contains_key(&tenant_id) {
            return Err(RepoError::DuplicateTenant(tenant_id));
        }
        self.profiles.insert(tenant_id, profile);
        Ok(())
    }

    pub fn profile(&self, tenant_id: &TenantId) -> Option<&BTreeMap<String, String>> {
        self.profiles.get(tenant_id)
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    /// The fields the tenant must answer for this session: a pseudo-random
    /// subset of the registered field names, seeded by `(tenant, nonce)`.
    /// Same inputs always yield the same subset; varying the nonce varies
    /// the requested details, as the metadata form does on each execution.
    pub fn challenge_fields(
        &self,
        tenant_id: &TenantId,
        nonce: u64,
    ) -> Result<Vec<String>, RepoError> {
        let profile = self
            .profiles
            .get(tenant_id)
            .ok_or_else(|| RepoError::UnknownTenant(tenant_id.clone()))?;
        let mut names: Vec<&String> = profile.keys().collect();
        let k = self.challenge_size.min(names.len());

        let mut hasher = Sha256::new();
        hasher.update(b"challenge");
        hasher.update(tenant_id.0.as_bytes());
        hasher.update(nonce.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());

        // partial Fisher-Yates: the first k slots are the selection
        for i in 0..k {
            let j = rng.random_range(i..names.len());
            names.swap(i, j);
        }
        Ok(names[..k].iter().map(|s| s.to_string()).collect())
    }

    /// 1 iff every challenged field appears in `responses` with the
    /// registered value. Missing field, wrong value, or unknown tenant all
    /// yield 0 -- the layer has only permit/deny outcomes.
    pub fn meta_verify(
        &self,
        tenant_id: &TenantId,
        responses: &BTreeMap<String, String>,
        challenged: &[String],
    ) -> Flag {
        let Some(profile) = self.profiles.get(tenant_id) else {
            return Flag::Deny;
        };
        let all_match = challenged
            .iter()
            .all(|field| profile.get(field).is_some() && profile.get(field) == responses.get(field));
        Flag::from_bool(all_match)
    }
}

// ============================================================================
// Digital vault
// ============================================================================

/// vm_id -> private key secret. Possession is proven by recomputing the
/// session-bound digest; there is no default-permit path.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VaultDb {
    keys: BTreeMap<VmId, KeySecret>,
}

impl VaultDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_key(&mut self, vm_id: VmId, key: KeySecret) -> Result<(), RepoError> {
        if self.keys.contains_key(&vm_id) {
            return Err(RepoError::DuplicateVmId(vm_id));
        }
        self.keys.insert(vm_id, key);
        Ok(())
    }

    pub fn key_for(&self, vm_id: &VmId) -> Option<&KeySecret> {
        self.keys.get(vm_id)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// 1 iff a key exists for the VM and the proof equals
    /// `digest(key_secret, session_id)`.
    pub fn vault_verify(
        &self,
        vm_id: &VmId,
        key_proof: &KeyProof,
        session_id: &SessionId,
    ) -> Flag {
        match self.keys.get(vm_id) {
            Some(secret) => Flag::from_bool(digest::key_proof(secret, session_id) == *key_proof),
            None => Flag::Deny,
        }
    }
}

// ============================================================================
// Signature stores
// ============================================================================

/// Identifier of one signature pattern.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatternId(pub String);

impl fmt::Display for PatternId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignatureKind {
    Ips,
    Antimalware,
}

/// A set of inert byte patterns matched by substring containment.
///
/// Patterns are scanned in sorted id order, so the match result is
/// independent of insertion order; when several patterns occur in a
/// payload the lexicographically smallest id wins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureDb {
    kind: SignatureKind,
    patterns: BTreeMap<PatternId, Vec<u8>>,
}

impl SignatureDb {
    pub fn new(kind: SignatureKind) -> Self {
        Self { kind, patterns: BTreeMap::new() }
    }

    pub fn kind(&self) -> SignatureKind {
        self.kind
    }

    pub fn insert_pattern(&mut self, id: PatternId, pattern: Vec<u8>) -> Result<(), RepoError> {
        if pattern.is_empty() {
            return Err(RepoError::EmptyPattern(id));
        }
        if self.patterns.contains_key(&id) {
            return Err(RepoError::DuplicatePatternId(id));
        }
        if self.patterns.values().any(|p| *p == pattern) {
            return Err(RepoError::DuplicatePattern(id));
        }
        self.patterns.insert(id, pattern);
        Ok(())
    }

    /// First pattern (in sorted id order) contained in the payload.
    pub fn signature_match(&self, payload: &[u8]) -> Option<&PatternId> {
        self.patterns
            .iter()
            .find(|(_, pattern)| contains(payload, pattern))
            .map(|(id, _)| id)
    }

    pub fn patterns(&self) -> impl Iterator<Item = (&PatternId, &[u8])> {
        self.patterns.iter().map(|(id, p)| (id, p.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

// ============================================================================
// Repository set
// ============================================================================

/// The five stores, loaded once per scenario and shared read-only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepositorySet {
    pub fw: FirewallDb,
    pub meta: MetaDb,
    pub vault: VaultDb,
    pub ips: SignatureDb,
    pub antimal: SignatureDb,
}

impl RepositorySet {
    pub fn empty(challenge_size: usize) -> Self {
        Self {
            fw: FirewallDb::new(),
            meta: MetaDb::new(challenge_size),
            vault: VaultDb::new(),
            ips: SignatureDb::new(SignatureKind::Ips),
            antimal: SignatureDb::new(SignatureKind::Antimalware),
        }
    }
}

/// Query surface the pipeline runs against. `RepositorySet` is the real
/// implementation; tests wrap it to count or trap queries.
pub trait RepositoryQueries {
    fn fw_lookup(&self, vm_id: &VmId, credentials: &Token) -> Flag;
    fn challenge_fields(&self, tenant_id: &TenantId, nonce: u64) -> Result<Vec<String>, RepoError>;
    fn meta_verify(
        &self,
        tenant_id: &TenantId,
        responses: &BTreeMap<String, String>,
        challenged: &[String],
    ) -> Flag;
    fn vault_verify(&self, vm_id: &VmId, key_proof: &KeyProof, session_id: &SessionId) -> Flag;
    fn ips_match(&self, payload: &[u8]) -> Option<PatternId>;
    fn antimal_match(&self, payload: &[u8]) -> Option<PatternId>;
}

impl RepositoryQueries for RepositorySet {
    fn fw_lookup(&self, vm_id: &VmId, credentials: &Token) -> Flag {
        self.fw.fw_lookup(vm_id, credentials)
    }

    fn challenge_fields(&self, tenant_id: &TenantId, nonce: u64) -> Result<Vec<String>, RepoError> {
        self.meta.challenge_fields(tenant_id, nonce)
    }

    fn meta_verify(
        &self,
        tenant_id: &TenantId,
        responses: &BTreeMap<String, String>,
        challenged: &[String],
    ) -> Flag {
        self.meta.meta_verify(tenant_id, responses, challenged)
    }

    fn vault_verify(&self, vm_id: &VmId, key_proof: &KeyProof, session_id: &SessionId) -> Flag {
        self.vault.vault_verify(vm_id, key_proof, session_id)
    }

    fn ips_match(&self, payload: &[u8]) -> Option<PatternId> {
        self.ips.signature_match(payload).cloned()
    }

    fn antimal_match(&self, payload: &[u8]) -> Option<PatternId> {
        self.antimal.signature_match(payload).cloned()
    }
}

/// Populates all five stores from a scenario declaration. Tenant LAN
/// clients get firewall entries and vault keys per VM and one metadata
/// profile per LAN; attackers are provisioned per their archetype.
pub fn load_repositories(scenario: &Scenario) -> Result<RepositorySet, LoadError> {
    crate::scenario::provision(scenario).map(|p| p.repos)
}

// ============================================================================
// Errors
// ============================================================================

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RepoError {
    #[error("duplicate vm_id {0}")]
    DuplicateVmId(VmId),
    #[error("duplicate tenant profile {0}")]
    DuplicateTenant(TenantId),
    #[error("unknown tenant {0}")]
    UnknownTenant(TenantId),
    #[error("tenant {tenant} profile has {fields} fields, challenge needs {challenge_size}")]
    ProfileTooSmall { tenant: TenantId, fields: usize, challenge_size: usize },
    #[error("signature pattern {0} is empty")]
    EmptyPattern(PatternId),
    #[error("duplicate signature id {0}")]
    DuplicatePatternId(PatternId),
    #[error("signature {0} duplicates an existing byte pattern")]
    DuplicatePattern(PatternId),
}

/// Failure to materialize a scenario's repositories.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum LoadError {
    #[error("repository load failed: {0}")]
    Repo(#[from] RepoError),
    #[error("attacker {attacker} targets unknown vm {target}")]
    UnknownTargetVm { attacker: String, target: VmId },
    #[error("attacker {attacker}: {reason}")]
    Attacker { attacker: String, reason: String },
    #[error("invalid declaration: {0}")]
    Declaration(String),
}
