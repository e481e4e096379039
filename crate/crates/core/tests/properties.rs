//! Property tests for the spec-level invariants: evidence immutability,
//! trace monotonicity, membership purity, oracle agreement, and
//! document round-tripping.

mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use common::{packet_with_vector, vector_repos};
use icsim_core::model::{
    EvidenceEntry, EvidenceKind, Flag, LayerId, LayerVerdict, Outcome, SessionPacket,
    SessionTrace, SimTime, TenantId, Token, VmIdentity,
};
use icsim_core::pipeline::{oracle_decision, run_pipeline, MembershipVector, PipelineConfig};
use icsim_core::repos::{MetaDb, PatternId, SignatureDb, SignatureKind};
use icsim_core::scenario::{parse_scenario, Scenario, Strictness};

fn arb_layer() -> impl Strategy<Value = LayerId> {
    prop_oneof![
        Just(LayerId::Fw),
        Just(LayerId::Meta),
        Just(LayerId::Vault),
        Just(LayerId::Ips),
        Just(LayerId::Antimal),
    ]
}

fn arb_evidence() -> impl Strategy<Value = EvidenceEntry> {
    (arb_layer(), 0..3usize, "[a-z]{0,12}").prop_map(|(layer, kind, detail)| {
        let kind = match kind {
            0 => EvidenceKind::ExploitPayload,
            1 => EvidenceKind::AnomalyReport,
            _ => EvidenceKind::DetectionRecord,
        };
        EvidenceEntry::new(layer, kind, detail)
    })
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    /// Appending evidence never disturbs what is already there: at every
    /// step the prior log is a strict prefix, and the final log equals
    /// the appended sequence exactly (the plain-list oracle).
    #[test]
    fn evidence_log_is_append_only(entries in prop::collection::vec(arb_evidence(), 0..50)) {
        let vm = VmIdentity::new("VM1", "tenantA", 1).unwrap();
        let mut packet =
            SessionPacket::new_session(vm, Token::new("t"), b"p".to_vec(), 0).unwrap();
        let mut oracle: Vec<EvidenceEntry> = Vec::new();
        for entry in &entries {
            let next = packet.append_evidence(entry.clone());
            prop_assert_eq!(&next.evidence[..packet.evidence.len()], packet.evidence.as_slice());
            prop_assert_eq!(next.evidence.len(), packet.evidence.len() + 1);
            oracle.push(entry.clone());
            packet = next;
        }
        prop_assert_eq!(packet.evidence, oracle);
    }

    /// However verdicts are thrown at a trace, the accepted ones always
    /// form a gap-free prefix of the canonical layer order, denial is
    /// final, and outcome bookkeeping matches the flags.
    #[test]
    fn traces_stay_monotone_under_arbitrary_verdicts(
        verdicts in prop::collection::vec((arb_layer(), any::<bool>()), 0..12)
    ) {
        let mut trace = SessionTrace::new(icsim_core::SessionId("s".into()));
        for (i, (layer, permit)) in verdicts.into_iter().enumerate() {
            let verdict = LayerVerdict::new(layer, Flag::from_bool(permit), "p");
            match trace.record_verdict(verdict, SimTime(i as u64)) {
                Ok(next) => trace = next,
                Err(_) => continue, // rejected: out of order or already final
            }
        }
        let layers: Vec<LayerId> = trace.verdicts.iter().map(|v| v.layer).collect();
        prop_assert_eq!(layers.as_slice(), &LayerId::INSPECTION[..layers.len()]);
        match trace.outcome {
            Outcome::Authorized => {
                prop_assert_eq!(trace.verdicts.len(), 5);
                prop_assert!(trace.verdicts.iter().all(|v| v.flag == Flag::Permit));
                prop_assert!(trace.denial_layer.is_none());
            }
            Outcome::Denied => {
                let last = trace.verdicts.last().unwrap();
                prop_assert_eq!(last.flag, Flag::Deny);
                prop_assert_eq!(trace.denial_layer, Some(last.layer));
                prop_assert!(trace.verdicts[..trace.verdicts.len() - 1]
                    .iter()
                    .all(|v| v.flag == Flag::Permit));
            }
            Outcome::Pending => {
                prop_assert!(trace.verdicts.len() < 5);
                prop_assert!(trace.verdicts.iter().all(|v| v.flag == Flag::Permit));
            }
        }
    }

    /// Pipeline and oracle agree over random membership vectors and
    /// nonces (the exhaustive 32-vector suite lives in pipeline_oracle).
    #[test]
    fn pipeline_agrees_with_oracle_on_random_vectors(bits in 0u8..32, nonce in any::<u64>()) {
        let repos = vector_repos();
        let vector = MembershipVector::from_bits(bits);
        let packet = packet_with_vector(&repos, vector, nonce);
        let outcome = run_pipeline(&packet, &repos, &PipelineConfig::default());
        prop_assert_eq!(outcome.final_flag, oracle_decision(vector));
    }

    /// Substring matching agrees with a naive all-pairs oracle and is
    /// insensitive to pattern insertion order.
    #[test]
    fn signature_match_agrees_with_naive_oracle(
        patterns in prop::collection::btree_set("[A-Z]{2,6}", 1..20),
        payload in "[A-Za-z0-9 ]{0,200}",
        shuffle_seed in any::<u64>(),
    ) {
        let patterns: Vec<(String, String)> = patterns
            .into_iter()
            .enumerate()
            .map(|(i, p)| (format!("sig-{i:02}"), p))
            .collect();

        // naive oracle: every containment checked independently, smallest
        // id among the hits wins
        let expected: Option<String> = patterns
            .iter()
            .filter(|(_, p)| payload.contains(p.as_str()))
            .map(|(id, _)| id.clone())
            .min();

        // insertion order randomized
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = patterns.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle_seed));

        let mut db = SignatureDb::new(SignatureKind::Ips);
        for (id, pattern) in &shuffled {
            db.insert_pattern(PatternId(id.clone()), pattern.clone().into_bytes()).unwrap();
        }
        let got = db.signature_match(payload.as_bytes()).map(|id| id.0.clone());
        prop_assert_eq!(got, expected);
    }

    /// The challenge is a pure function of (tenant, nonce), sized by
    /// challenge_size, drawn from the registered fields; distinct nonces
    /// must reach at least two distinct subsets when there is room.
    #[test]
    fn challenges_are_deterministic_and_vary(
        field_count in 3usize..8,
        challenge_size in 1usize..3,
        nonce in any::<u64>(),
    ) {
        let mut db = MetaDb::new(challenge_size);
        let profile: BTreeMap<String, String> =
            (0..field_count).map(|i| (format!("f{i}"), format!("v{i}"))).collect();
        let tenant = TenantId::new("t");
        db.insert_profile(tenant.clone(), profile.clone()).unwrap();

        let a = db.challenge_fields(&tenant, nonce).unwrap();
        let b = db.challenge_fields(&tenant, nonce).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), challenge_size.min(field_count));
        prop_assert!(a.iter().all(|f| profile.contains_key(f)));

        if field_count > challenge_size {
            let mut subsets = std::collections::BTreeSet::new();
            for n in 0..1000u64 {
                let mut fields = db.challenge_fields(&tenant, n).unwrap();
                fields.sort();
                subsets.insert(fields);
                if subsets.len() >= 2 {
                    break;
                }
            }
            prop_assert!(subsets.len() >= 2, "no variation over 1000 nonces");
        }
    }

    /// Scenario documents survive a serialize/parse round trip.
    #[test]
    fn scenario_round_trips_through_toml(
        seed in any::<u64>(),
        duration in 0.0f64..120.0,
        bin_width in 0.5f64..20.0,
        clients in 1u32..50,
        rate in 0.01f64..2.0,
        challenge_size in 1usize..4,
    ) {
        let mut scenario = Scenario::reference();
        scenario.meta.seed = seed;
        scenario.meta.duration = duration;
        scenario.meta.bin_width = bin_width;
        scenario.lans[0].clients = clients;
        scenario.lans[1].arrival_rate = rate;
        scenario.parameters.challenge_size = challenge_size;
        let text = scenario.to_toml_string();
        let (parsed, diags) = parse_scenario(&text, Strictness::Strict)
            .map_err(|d| TestCaseError::fail(format!("{d:?}")))?;
        prop_assert!(diags.is_empty());
        prop_assert_eq!(parsed, scenario);
    }
}

/// Exhaustive cross-check of meta_verify against the subset oracle, on
/// top of the per-module unit version: responses answered correctly on a
/// subset S, challenge C, permit iff C ⊆ S.
#[test]
fn meta_verify_matches_subset_semantics_for_four_fields() {
    let fields = ["a", "b", "c", "d"];
    let mut db = MetaDb::new(1);
    let tenant = TenantId::new("t");
    let profile: BTreeMap<String, String> =
        fields.iter().map(|f| (f.to_string(), format!("{f}-val"))).collect();
    db.insert_profile(tenant.clone(), profile).unwrap();
    for resp_mask in 0u8..16 {
        let responses: BTreeMap<String, String> = fields
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let value = if resp_mask & (1 << i) != 0 {
                    format!("{f}-val")
                } else {
                    format!("{f}-bad")
                };
                (f.to_string(), value)
            })
            .collect();
        for chal_mask in 0u8..16 {
            let challenged: Vec<String> = fields
                .iter()
                .enumerate()
                .filter(|(i, _)| chal_mask & (1 << i) != 0)
                .map(|(_, f)| f.to_string())
                .collect();
            let expected = chal_mask & !resp_mask == 0;
            assert_eq!(
                db.meta_verify(&tenant, &responses, &challenged),
                Flag::from_bool(expected),
                "resp={resp_mask:04b} chal={chal_mask:04b}"
            );
        }
    }
}
