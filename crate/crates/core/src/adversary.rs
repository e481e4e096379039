//! Attacker archetypes and workload forging.
//!
//! Each archetype is constructed so the pipeline must stop it at one
//! known layer (or, for the zero-day case, let it through with an anomaly
//! on record). That prediction is the oracle the simulator is validated
//! against: a forged session that is not denied exactly where its
//! archetype says would be a model bug, not an interesting run.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    EvidenceEntry, EvidenceKind, LayerId, SessionPacket, TenantId, Token, VmId, VmIdentity,
};
use crate::repos::{PatternId, RepositorySet, SignatureKind};

/// The attack postures modeled, ordered by how deep they get.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    /// No registered firewall entry at all; stopped at the gateway.
    External,
    /// Valid credentials but a foreign tenant identity; the metadata
    /// challenge exposes the mismatch.
    Masquerade,
    /// Fully credentialed insider planting an exploit the IPS knows.
    InsiderExploit,
    /// Fully credentialed insider planting a trojan only the
    /// anti-malware store knows.
    MalwareInjector,
    /// Fully credentialed insider with a payload neither store knows;
    /// authorized, but the anomaly goes on record.
    ZeroDay,
}

impl Archetype {
    pub const ALL: [Archetype; 5] = [
        Archetype::External,
        Archetype::Masquerade,
        Archetype::InsiderExploit,
        Archetype::MalwareInjector,
        Archetype::ZeroDay,
    ];

    /// Whether the scenario must register genuine firewall credentials
    /// for this archetype.
    pub fn requires_firewall_grant(self) -> bool {
        self != Archetype::External
    }

    /// Whether the scenario must place a key in the vault for this
    /// archetype's VM.
    pub fn requires_vault_grant(self) -> bool {
        matches!(
            self,
            Archetype::InsiderExploit | Archetype::MalwareInjector | Archetype::ZeroDay
        )
    }

    /// Whether the archetype needs its own registered metadata profile.
    pub fn requires_meta_profile(self) -> bool {
        self != Archetype::External
    }

    pub fn name(self) -> &'static str {
        match self {
            Archetype::External => "external",
            Archetype::Masquerade => "masquerade",
            Archetype::InsiderExploit => "insider_exploit",
            Archetype::MalwareInjector => "malware_injector",
            Archetype::ZeroDay => "zero_day",
        }
    }
}

/// The layer at which the pipeline must stop each archetype; `None`
/// means the session authorizes (zero-day) and only the anomaly report
/// marks it.
pub fn expected_denial_layer(archetype: Archetype) -> Option<LayerId> {
    match archetype {
        Archetype::External => Some(LayerId::Fw),
        Archetype::Masquerade => Some(LayerId::Meta),
        Archetype::InsiderExploit => Some(LayerId::Ips),
        Archetype::MalwareInjector => Some(LayerId::Antimal),
        Archetype::ZeroDay => None,
    }
}

/// One adversary in a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackerProfile {
    pub archetype: Archetype,
    /// The VM the attacker operates from. Its `tenant_id` is the
    /// attacker's own (registered) tenant.
    pub source_vm: VmIdentity,
    /// The victim VM being attacked.
    pub target: VmId,
    /// Tenant identity presented in forged packets when it differs from
    /// the attacker's own (the masquerade case).
    pub claimed_tenant: Option<TenantId>,
    /// Sessions per simulated second.
    pub intensity: f64,
}

impl AttackerProfile {
    pub fn new(
        archetype: Archetype,
        source_vm: VmIdentity,
        target: VmId,
        claimed_tenant: Option<TenantId>,
        intensity: f64,
    ) -> Result<Self, AdversaryError> {
        if !intensity.is_finite() || intensity <= 0.0 {
            return Err(AdversaryError::InvalidIntensity(intensity));
        }
        Ok(Self { archetype, source_vm, target, claimed_tenant, intensity })
    }
}

/// An inert byte pattern an attacker embeds in a payload, together with
/// which signature stores know it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExploitPayload {
    pub pattern: Vec<u8>,
    pub known_to_ips: bool,
    pub known_to_antimal: bool,
}

impl ExploitPayload {
    pub fn new(
        pattern: Vec<u8>,
        known_to_ips: bool,
        known_to_antimal: bool,
    ) -> Result<Self, AdversaryError> {
        if pattern.is_empty() {
            return Err(AdversaryError::EmptyPattern);
        }
        Ok(Self { pattern, known_to_ips, known_to_antimal })
    }
}

const FORGE_ATTEMPTS: usize = 32;

/// Builds one attack session. The packet's membership vector is fixed by
/// the archetype; everything else (nonce, payload filler, pattern pick)
/// comes from the caller's generator, so forging is pure given the
/// generator state.
///
/// `anomaly_threshold` is the IPS anomaly cutoff in bytes; the zero-day
/// payload is sized just past it.
pub fn forge_session<R: Rng>(
    profile: &AttackerProfile,
    repos: &RepositorySet,
    anomaly_threshold: usize,
    rng: &mut R,
) -> Result<SessionPacket, AdversaryError> {
    let vm_id = &profile.source_vm.vm_id;
    let own_tenant = &profile.source_vm.tenant_id;

    let credentials = if profile.archetype.requires_firewall_grant() {
        repos
            .fw
            .token_for(vm_id)
            .cloned()
            .ok_or_else(|| AdversaryError::MissingFirewallGrant { vm: vm_id.clone() })?
    } else {
        Token::new(format!("forged-{:016x}", rng.random::<u64>()))
    };

    let responses: BTreeMap<String, String> = if profile.archetype.requires_meta_profile() {
        repos
            .meta
            .profile(own_tenant)
            .cloned()
            .ok_or_else(|| AdversaryError::MissingMetaProfile { tenant: own_tenant.clone() })?
    } else {
        BTreeMap::new()
    };

    let exploit = choose_exploit(profile.archetype, repos, anomaly_threshold, rng)?;

    let payload = match &exploit {
        Some((_, payload)) => payload.clone(),
        None => format!("recon-{:08x}", rng.random::<u32>()).into_bytes(),
    };

    let claimed = profile.claimed_tenant.clone().unwrap_or_else(|| own_tenant.clone());
    let identity = VmIdentity {
        vm_id: vm_id.clone(),
        tenant_id: claimed,
        tier: profile.source_vm.tier,
    };
    let nonce = rng.random::<u64>();

    let mut packet = SessionPacket::new_session(identity, credentials, payload, nonce)
        .map_err(AdversaryError::Model)?
        .with_metadata_responses(responses);

    if profile.archetype.requires_vault_grant() {
        let key = repos
            .vault
            .key_for(vm_id)
            .ok_or_else(|| AdversaryError::MissingVaultGrant { vm: vm_id.clone() })?;
        packet = packet.with_key_proof(crate::digest::key_proof(key, &packet.session_id));
    } else if let Some(key) = repos.vault.key_for(vm_id) {
        // masquerade agents hold their own vault key even though the
        // session never gets that far
        packet = packet.with_key_proof(crate::digest::key_proof(key, &packet.session_id));
    }

    if exploit.is_some() {
        // the planted exploit is itself part of the session's history and
        // cannot be scrubbed later
        packet = packet.append_evidence(EvidenceEntry::new(
            LayerId::Meta,
            EvidenceKind::ExploitPayload,
            format!("{} planted a {} byte payload", profile.archetype.name(), packet.payload.len()),
        ));
    }

    Ok(packet)
}

/// Exploit designer per archetype: the descriptor plus the payload bytes
/// to send. `None` for archetypes that send benign payloads (external,
/// masquerade).
fn choose_exploit<R: Rng>(
    archetype: Archetype,
    repos: &RepositorySet,
    anomaly_threshold: usize,
    rng: &mut R,
) -> Result<Option<(ExploitPayload, Vec<u8>)>, AdversaryError> {
    match archetype {
        Archetype::External | Archetype::Masquerade => Ok(None),
        Archetype::InsiderExploit => {
            let (_, pattern) = pick_pattern(&repos.ips, rng)
                .ok_or(AdversaryError::EmptySignatureStore { kind: SignatureKind::Ips })?;
            let payload = embed(&pattern, rng);
            Ok(Some((ExploitPayload::new(pattern, true, false)?, payload)))
        }
        Archetype::MalwareInjector => {
            // must hit the anti-malware store without tripping the IPS
            for _ in 0..FORGE_ATTEMPTS {
                let (_, pattern) = pick_pattern(&repos.antimal, rng).ok_or(
                    AdversaryError::EmptySignatureStore { kind: SignatureKind::Antimalware },
                )?;
                let payload = embed(&pattern, rng);
                if repos.ips.signature_match(&payload).is_none() {
                    return Ok(Some((ExploitPayload::new(pattern, false, true)?, payload)));
                }
            }
            Err(AdversaryError::PatternConflict)
        }
        Archetype::ZeroDay => {
            // oversized and unknown to both stores
            for _ in 0..FORGE_ATTEMPTS {
                let len = anomaly_threshold + 1 + rng.random_range(0..32);
                let payload = hex_filler(len, rng);
                if repos.ips.signature_match(&payload).is_none()
                    && repos.antimal.signature_match(&payload).is_none()
                {
                    return Ok(Some((
                        ExploitPayload::new(payload.clone(), false, false)?,
                        payload,
                    )));
                }
            }
            Err(AdversaryError::PatternConflict)
        }
    }
}

fn pick_pattern<R: Rng>(
    db: &crate::repos::SignatureDb,
    rng: &mut R,
) -> Option<(PatternId, Vec<u8>)> {
    let patterns: Vec<(PatternId, Vec<u8>)> =
        db.patterns().map(|(id, p)| (id.clone(), p.to_vec())).collect();
    if patterns.is_empty() {
        return None;
    }
    let idx = rng.random_range(0..patterns.len());
    Some(patterns[idx].clone())
}

/// Wraps a pattern in innocuous filler so the match is a genuine
/// substring hit, not an exact-equality artifact.
fn embed<R: Rng>(pattern: &[u8], rng: &mut R) -> Vec<u8> {
    let mut payload = hex_filler(8, rng);
    payload.extend_from_slice(pattern);
    payload.extend_from_slice(&hex_filler(8, rng));
    payload
}

fn hex_filler<R: Rng>(len: usize, rng: &mut R) -> Vec<u8> {
    const ALPHABET: &[u8; 16] = b"0123456789abcdef";
    (0..len).map(|_| ALPHABET[rng.random_range(0..16)]).collect()
}

#[derive(Debug, Error, PartialEq)]
pub enum AdversaryError {
    #[error("intensity must be > 0, got {0}")]
    InvalidIntensity(f64),
    #[error("exploit pattern must not be empty")]
    EmptyPattern,
    #[error("archetype requires firewall credentials for {vm} but the scenario granted none")]
    MissingFirewallGrant { vm: VmId },
    #[error("archetype requires a metadata profile for {tenant} but the scenario granted none")]
    MissingMetaProfile { tenant: TenantId },
    #[error("archetype requires a vault key for {vm} but the scenario granted none")]
    MissingVaultGrant { vm: VmId },
    #[error("archetype needs at least one {kind:?} signature in the scenario")]
    EmptySignatureStore { kind: SignatureKind },
    #[error("could not forge a payload avoiding the other signature store")]
    PatternConflict,
    #[error(transparent)]
    Model(crate::model::ModelError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expected_denial_layers() {
        assert_eq!(expected_denial_layer(Archetype::External), Some(LayerId::Fw));
        assert_eq!(expected_denial_layer(Archetype::Masquerade), Some(LayerId::Meta));
        assert_eq!(expected_denial_layer(Archetype::InsiderExploit), Some(LayerId::Ips));
        assert_eq!(expected_denial_layer(Archetype::MalwareInjector), Some(LayerId::Antimal));
        assert_eq!(expected_denial_layer(Archetype::ZeroDay), None);
    }

    #[test]
    fn intensity_must_be_positive() {
        let vm = VmIdentity::new("adv1-vm1", "adv1", 1).unwrap();
        let err = AttackerProfile::new(
            Archetype::External,
            vm,
            VmId::new("victim"),
            None,
            0.0,
        )
        .unwrap_err();
        assert_eq!(err, AdversaryError::InvalidIntensity(0.0));
    }

    #[test]
    fn empty_exploit_pattern_rejected() {
        assert_eq!(
            ExploitPayload::new(Vec::new(), true, false),
            Err(AdversaryError::EmptyPattern)
        );
    }

    #[test]
    fn forge_without_grants_is_a_configuration_error() {
        use rand::SeedableRng;
        let repos = RepositorySet::empty(2);
        let vm = VmIdentity::new("adv1-vm1", "adv1", 1).unwrap();
        let profile = AttackerProfile::new(
            Archetype::Masquerade,
            vm,
            VmId::new("victim"),
            Some(TenantId::new("lan1")),
            1.0,
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let err = forge_session(&profile, &repos, 4096, &mut rng).unwrap_err();
        assert_eq!(err, AdversaryError::MissingFirewallGrant { vm: VmId::new("adv1-vm1") });
    }
}
