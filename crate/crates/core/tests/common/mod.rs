//! Shared fixtures for the integration suites.
#![allow(dead_code)]

use std::cell::RefCell;
use std::collections::BTreeMap;

use icsim_core::adversary::Archetype;
use icsim_core::digest::{self, KeySecret};
use icsim_core::model::{Flag, KeyProof, SessionId, SessionPacket, TenantId, Token, VmId, VmIdentity};
use icsim_core::pipeline::MembershipVector;
use icsim_core::repos::{PatternId, RepoError, RepositoryQueries, RepositorySet};
use icsim_core::scenario::{AttackerDecl, Scenario};

pub const IPS_PATTERN: &str = "EXPLOIT-ALPHA";
pub const ANTIMAL_PATTERN: &str = "TROJAN-BETA";

/// One registered VM/tenant plus one pattern per signature store; enough
/// to construct any membership vector.
pub fn vector_repos() -> RepositorySet {
    let mut repos = RepositorySet::empty(2);
    repos.fw.insert_entry(VmId::new("VM1"), Token::new("tok-1")).unwrap();
    repos
        .meta
        .insert_profile(
            TenantId::new("tenantA"),
            BTreeMap::from([
                ("company".to_string(), "acme".to_string()),
                ("department".to_string(), "analytics".to_string()),
                ("location".to_string(), "hq".to_string()),
            ]),
        )
        .unwrap();
    repos.vault.insert_key(VmId::new("VM1"), KeySecret::new("vault-key-1")).unwrap();
    repos
        .ips
        .insert_pattern(PatternId("exploit-alpha".into()), IPS_PATTERN.as_bytes().to_vec())
        .unwrap();
    repos
        .antimal
        .insert_pattern(PatternId("trojan-beta".into()), ANTIMAL_PATTERN.as_bytes().to_vec())
        .unwrap();
    repos
}

/// Builds a packet whose membership vector is exactly `vector` against
/// [`vector_repos`]. Denied components are realized as: wrong token,
/// corrupted responses, wrong-key proof, and embedded signature patterns.
pub fn packet_with_vector(repos: &RepositorySet, vector: MembershipVector, nonce: u64) -> SessionPacket {
    let vm = VmIdentity::new("VM1", "tenantA", 1).unwrap();
    let credentials = if vector.fw { Token::new("tok-1") } else { Token::new("tok-wrong") };

    let profile = repos.meta.profile(&vm.tenant_id).unwrap().clone();
    let responses: BTreeMap<String, String> = if vector.meta {
        profile
    } else {
        profile.into_iter().map(|(k, v)| (k, format!("wrong-{v}"))).collect()
    };

    let mut payload = b"filler-".to_vec();
    if vector.ips {
        payload.extend_from_slice(IPS_PATTERN.as_bytes());
    }
    if vector.antimal {
        payload.extend_from_slice(ANTIMAL_PATTERN.as_bytes());
    }

    let packet = SessionPacket::new_session(vm, credentials, payload, nonce)
        .unwrap()
        .with_metadata_responses(responses);
    let key = if vector.vault { KeySecret::new("vault-key-1") } else { KeySecret::new("stolen") };
    let proof = digest::key_proof(&key, &packet.session_id);
    packet.with_key_proof(proof)
}

fn attacker(id: &str, archetype: Archetype, target: &str) -> AttackerDecl {
    AttackerDecl {
        id: id.into(),
        archetype,
        target: target.into(),
        intensity: 0.1,
        grant_credentials: None,
        grant_vault_key: None,
    }
}

/// Reference scenario with the four denied archetypes.
pub fn four_archetype_scenario() -> Scenario {
    let mut scenario = Scenario::reference();
    scenario.meta.name = "four-archetypes".into();
    scenario.attackers = vec![
        attacker("adv-ext", Archetype::External, "lan1-c0000-vm1"),
        attacker("adv-masq", Archetype::Masquerade, "lan1-c0000-vm2"),
        attacker("adv-ins", Archetype::InsiderExploit, "lan2-c0000-vm1"),
        attacker("adv-mal", Archetype::MalwareInjector, "lan3-c0000-vm1"),
    ];
    scenario
}

/// Reference scenario covering all five archetypes (adds the zero-day).
pub fn all_archetypes_scenario() -> Scenario {
    let mut scenario = four_archetype_scenario();
    scenario.meta.name = "all-archetypes".into();
    scenario.attackers.push(attacker("adv-zd", Archetype::ZeroDay, "lan4-c0000-vm1"));
    scenario
}

/// Small fast scenario for behavioral tests: one LAN, short run.
pub fn mini_scenario() -> Scenario {
    let mut scenario = Scenario::reference();
    scenario.meta.name = "mini".into();
    scenario.meta.duration = 10.0;
    scenario.meta.bin_width = 1.0;
    scenario.lans.truncate(1);
    scenario.lans[0].clients = 20;
    scenario.lans[0].vms_per_client = 2;
    scenario.lans[0].arrival_rate = 0.5;
    scenario.attackers = vec![
        attacker("adv-masq", Archetype::Masquerade, "lan1-c0000-vm1"),
        attacker("adv-ins", Archetype::InsiderExploit, "lan1-c0001-vm1"),
    ];
    scenario.attackers[0].intensity = 0.5;
    scenario.attackers[1].intensity = 0.5;
    scenario
}

/// Tenant traffic suppressed to (statistically) zero: the attackers own
/// the run.
pub fn attacker_only_scenario() -> Scenario {
    let mut scenario = Scenario::reference();
    scenario.meta.name = "attacker-only".into();
    scenario.meta.duration = 30.0;
    scenario.meta.bin_width = 5.0;
    for lan in &mut scenario.lans {
        lan.clients = 1;
        lan.vms_per_client = 1;
        lan.arrival_rate = 1e-9;
    }
    for (i, attacker) in scenario.attackers.iter_mut().enumerate() {
        attacker.target = format!("lan{}-c0000-vm1", i + 1);
        attacker.intensity = 0.5;
    }
    scenario
}

/// Query-counting wrapper used to observe short-circuiting.
pub struct CountingRepos<'a> {
    pub inner: &'a RepositorySet,
    pub fw: RefCell<usize>,
    pub meta: RefCell<usize>,
    pub vault: RefCell<usize>,
    pub ips: RefCell<usize>,
    pub antimal: RefCell<usize>,
}

impl<'a> CountingRepos<'a> {
    pub fn new(inner: &'a RepositorySet) -> Self {
        Self {
            inner,
            fw: RefCell::new(0),
            meta: RefCell::new(0),
            vault: RefCell::new(0),
            ips: RefCell::new(0),
            antimal: RefCell::new(0),
        }
    }

    pub fn counts(&self) -> [usize; 5] {
        [
            *self.fw.borrow(),
            *self.meta.borrow(),
            *self.vault.borrow(),
            *self.ips.borrow(),
            *self.antimal.borrow(),
        ]
    }
}

impl RepositoryQueries for CountingRepos<'_> {
    fn fw_lookup(&self, vm_id: &VmId, credentials: &Token) -> Flag {
        *self.fw.borrow_mut() += 1;
        self.inner.fw_lookup(vm_id, credentials)
    }

    fn challenge_fields(&self, tenant_id: &TenantId, nonce: u64) -> Result<Vec<String>, RepoError> {
        *self.meta.borrow_mut() += 1;
        self.inner.challenge_fields(tenant_id, nonce)
    }

    fn meta_verify(
        &self,
        tenant_id: &TenantId,
        responses: &BTreeMap<String, String>,
        challenged: &[String],
    ) -> Flag {
        self.inner.meta_verify(tenant_id, responses, challenged)
    }

    fn vault_verify(&self, vm_id: &VmId, key_proof: &KeyProof, session_id: &SessionId) -> Flag {
        *self.vault.borrow_mut() += 1;
        self.inner.vault_verify(vm_id, key_proof, session_id)
    }

    fn ips_match(&self, payload: &[u8]) -> Option<PatternId> {
        *self.ips.borrow_mut() += 1;
        self.inner.ips_match(payload)
    }

    fn antimal_match(&self, payload: &[u8]) -> Option<PatternId> {
        *self.antimal.borrow_mut() += 1;
        self.inner.antimal_match(payload)
    }
}
