//! The one fixed digest function used everywhere a deterministic hash is
//! needed: session ids, key-possession proofs, and derived RNG stream
//! seeds.
//!
//! Real connection-level cryptography (IKE, DES/3DES/AES) is out of
//! scope; possession of a vault key is proven by recomputing a SHA-256
//! digest over `(key_secret, session_id)`, which is enough to model the
//! permit/deny decision logic.

use sha2::{Digest, Sha256};

use crate::model::{KeyProof, SessionId, VmId};

/// Secret stored in the digital vault for one VM.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct KeySecret(pub String);

impl KeySecret {
    pub fn new(secret: impl Into<String>) -> Self {
        Self(secret.into())
    }
}

fn sha256(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
        hasher.update([0u8]); // field separator
    }
    hasher.finalize().into()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Session id for `(vm_id, nonce)`: 16 digest bytes, hex encoded.
pub fn session_id(vm_id: &VmId, nonce: u64) -> SessionId {
    let h = sha256(&[b"session", vm_id.0.as_bytes(), &nonce.to_le_bytes()]);
    SessionId(hex(&h[..16]))
}

/// Proof that the caller holds `secret`, bound to one session so proofs
/// cannot be replayed across sessions.
pub fn key_proof(secret: &KeySecret, session_id: &SessionId) -> KeyProof {
    KeyProof(sha256(&[b"key-proof", secret.0.as_bytes(), session_id.0.as_bytes()]))
}

/// 32-byte seed for a named RNG stream, derived from the scenario seed.
/// Each (label, index) pair gets an independent deterministic stream.
pub fn stream_seed(scenario_seed: u64, label: &str, index: u64) -> [u8; 32] {
    sha256(&[b"stream", &scenario_seed.to_le_bytes(), label.as_bytes(), &index.to_le_bytes()])
}

/// Deterministic opaque credential material for `(seed, label, ident)`;
/// used to derive per-VM tokens and vault keys when provisioning.
pub fn opaque_credential(scenario_seed: u64, label: &str, ident: &str) -> String {
    let h = sha256(&[
        b"credential",
        &scenario_seed.to_le_bytes(),
        label.as_bytes(),
        ident.as_bytes(),
    ]);
    hex(&h[..12])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn session_ids_stable_and_distinct() {
        let vm = VmId::new("VM1");
        assert_eq!(session_id(&vm, 3), session_id(&vm, 3));
        assert_ne!(session_id(&vm, 3), session_id(&vm, 4));
        assert_ne!(session_id(&vm, 3), session_id(&VmId::new("VM2"), 3));
    }

    #[test]
    fn thousand_constructions_no_collisions() {
        // brute-force collision scan over seeded (vm_id, nonce) pairs
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..1000 {
            let vm = VmId::new(format!("vm-{}", rng.random::<u32>()));
            let nonce = rng.random::<u64>();
            assert!(seen.insert((vm.clone(), nonce, session_id(&vm, nonce))));
        }
        let ids: std::collections::HashSet<_> =
            seen.iter().map(|(_, _, sid)| sid.clone()).collect();
        assert_eq!(ids.len(), 1000, "session id collision detected");
    }

    #[test]
    fn key_proof_binds_session() {
        let secret = KeySecret::new("k");
        let s1 = SessionId("a".into());
        let s2 = SessionId("b".into());
        assert_eq!(key_proof(&secret, &s1), key_proof(&secret, &s1));
        assert_ne!(key_proof(&secret, &s1), key_proof(&secret, &s2));
        assert_ne!(key_proof(&secret, &s1), key_proof(&KeySecret::new("k2"), &s1));
    }
}
