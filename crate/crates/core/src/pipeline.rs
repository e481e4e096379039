//! The five-layer inspection pipeline.
//!
//! A session is inspected in the fixed order FW -> META -> VAULT -> IPS
//! -> ANTIMAL and stops at the first deny. The permit rule is exactly:
//! the packet is a member of the firewall, metadata, and vault stores,
//! and matches neither signature store. [`oracle_decision`] states that
//! rule as a pure truth table so the pipeline can be checked against it
//! independently.
//!
//! Layers may also be evaluated concurrently ([`evaluate_parallel`]):
//! verdicts still commit strictly in layer order and the committed
//! result is identical to sequential evaluation, which is the reference
//! semantics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{
    EvidenceEntry, EvidenceKind, Flag, LayerId, LayerVerdict, Outcome, SessionPacket,
    SessionTrace, SimTime,
};
use crate::repos::RepositoryQueries;

/// Default IPS anomaly cutoff: payloads strictly larger are reported.
pub const DEFAULT_ANOMALY_THRESHOLD: usize = 4096;

/// Pipeline tuning. Disabling a layer makes it auto-permit without
/// consulting its repository (used by overhead-comparison scenarios);
/// the five canonical layers are never reordered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineConfig {
    pub anomaly_threshold: usize,
    pub disabled_layers: BTreeSet<LayerId>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { anomaly_threshold: DEFAULT_ANOMALY_THRESHOLD, disabled_layers: BTreeSet::new() }
    }
}

impl PipelineConfig {
    pub fn is_enabled(&self, layer: LayerId) -> bool {
        !self.disabled_layers.contains(&layer)
    }
}

// ============================================================================
// Membership vector and decision oracle
// ============================================================================

/// Raw store membership of one packet: `true` means the packet is "in"
/// that repository (credentials match, metadata matches, key proof
/// verifies, signature occurs in the payload).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipVector {
    pub fw: bool,
    pub meta: bool,
    pub vault: bool,
    pub ips: bool,
    pub antimal: bool,
}

impl MembershipVector {
    /// Decodes bit `0` = fw .. bit `4` = antimal; handy for exhaustive
    /// enumeration of all 32 vectors.
    pub fn from_bits(bits: u8) -> Self {
        Self {
            fw: bits & 0b00001 != 0,
            meta: bits & 0b00010 != 0,
            vault: bits & 0b00100 != 0,
            ips: bits & 0b01000 != 0,
            antimal: bits & 0b10000 != 0,
        }
    }

    /// Queries each repository independently (no short-circuiting). This
    /// is the observation the pipeline/oracle equivalence property is
    /// stated over.
    pub fn observe<R: RepositoryQueries>(packet: &SessionPacket, repos: &R) -> Self {
        let meta = match repos.challenge_fields(&packet.vm.tenant_id, packet.nonce) {
            Ok(challenged) => repos
                .meta_verify(&packet.vm.tenant_id, &packet.metadata_responses, &challenged)
                .permitted(),
            Err(_) => false,
        };
        Self {
            fw: repos.fw_lookup(&packet.vm.vm_id, &packet.credentials).permitted(),
            meta,
            vault: packet
                .key_proof
                .as_ref()
                .map(|proof| {
                    repos.vault_verify(&packet.vm.vm_id, proof, &packet.session_id).permitted()
                })
                .unwrap_or(false),
            ips: repos.ips_match(&packet.payload).is_some(),
            antimal: repos.antimal_match(&packet.payload).is_some(),
        }
    }
}

/// The permit rule as a pure truth table: permit iff the packet belongs
/// to all three credential stores and neither signature store. Reference
/// function for tests; the pipeline must agree with it on every input.
pub fn oracle_decision(v: MembershipVector) -> Flag {
    Flag::from_bool(v.fw && v.meta && v.vault && !v.ips && !v.antimal)
}

// ============================================================================
// Per-layer inspections
// ============================================================================

/// Gateway check: the firewall must hold a matching entry for the VM.
pub fn inspect_firewall<R: RepositoryQueries>(packet: &SessionPacket, repos: &R) -> LayerVerdict {
    match repos.fw_lookup(&packet.vm.vm_id, &packet.credentials) {
        Flag::Permit => LayerVerdict::permit(LayerId::Fw, "firewall entry matches"),
        Flag::Deny => LayerVerdict::deny(LayerId::Fw, "no firewall entry"),
    }
}

/// Metadata challenge: a nonce-varied subset of the tenant's registered
/// fields must be answered correctly. The challenged field list is part
/// of the verdict reason so it lands in the trace for audit.
pub fn inspect_metadata<R: RepositoryQueries>(
    packet: &SessionPacket,
    repos: &R,
) -> (LayerVerdict, Vec<String>) {
    let tenant = &packet.vm.tenant_id;
    let challenged = match repos.challenge_fields(tenant, packet.nonce) {
        Ok(fields) => fields,
        Err(_) => {
            let verdict =
                LayerVerdict::deny(LayerId::Meta, format!("unknown tenant {tenant}"));
            return (verdict, Vec::new());
        }
    };
    let flag = repos.meta_verify(tenant, &packet.metadata_responses, &challenged);
    let reason = match flag {
        Flag::Permit => format!("challenged [{}]: all match", challenged.join(", ")),
        Flag::Deny => format!("challenged [{}]: response mismatch", challenged.join(", ")),
    };
    (LayerVerdict::new(LayerId::Meta, flag, reason), challenged)
}

/// Vault check: a key must exist for the VM and the session-bound proof
/// must recompute. A packet without a proof is denied outright.
pub fn inspect_vault<R: RepositoryQueries>(packet: &SessionPacket, repos: &R) -> LayerVerdict {
    let Some(proof) = &packet.key_proof else {
        return LayerVerdict::deny(LayerId::Vault, "no key proof presented");
    };
    match repos.vault_verify(&packet.vm.vm_id, proof, &packet.session_id) {
        Flag::Permit => LayerVerdict::permit(LayerId::Vault, "key proof verified"),
        Flag::Deny => LayerVerdict::deny(LayerId::Vault, "key proof rejected"),
    }
}

/// IPS: a signature hit terminates the session and goes on record; an
/// oversized payload that matches nothing is reported as an anomaly but
/// the session continues.
pub fn inspect_ips<R: RepositoryQueries>(
    packet: &SessionPacket,
    repos: &R,
    config: &PipelineConfig,
) -> (LayerVerdict, SessionPacket) {
    if let Some(pattern) = repos.ips_match(&packet.payload) {
        let verdict = LayerVerdict::deny(LayerId::Ips, format!("signature {pattern} matched"));
        let packet = packet.append_evidence(EvidenceEntry::new(
            LayerId::Ips,
            EvidenceKind::DetectionRecord,
            format!("ips signature {pattern} found in payload"),
        ));
        return (verdict, packet);
    }
    if packet.payload.len() > config.anomaly_threshold {
        let verdict = LayerVerdict::permit(LayerId::Ips, "no signature match; anomaly reported");
        let packet = packet.append_evidence(EvidenceEntry::new(
            LayerId::Ips,
            EvidenceKind::AnomalyReport,
            format!(
                "payload of {} bytes exceeds anomaly threshold {}",
                packet.payload.len(),
                config.anomaly_threshold
            ),
        ));
        return (verdict, packet);
    }
    (LayerVerdict::permit(LayerId::Ips, "no signature match"), packet.clone())
}

/// Anti-malware: a signature hit terminates the session; the detection
/// is retained on the packet.
pub fn inspect_antimalware<R: RepositoryQueries>(
    packet: &SessionPacket,
    repos: &R,
) -> (LayerVerdict, SessionPacket) {
    if let Some(pattern) = repos.antimal_match(&packet.payload) {
        let verdict =
            LayerVerdict::deny(LayerId::Antimal, format!("signature {pattern} matched"));
        let packet = packet.append_evidence(EvidenceEntry::new(
            LayerId::Antimal,
            EvidenceKind::DetectionRecord,
            format!("anti-malware signature {pattern} found in payload"),
        ));
        return (verdict, packet);
    }
    (LayerVerdict::permit(LayerId::Antimal, "no signature match"), packet.clone())
}

// ============================================================================
// Full evaluation
// ============================================================================

/// One committed pipeline step. `executed` is false for disabled layers,
/// which auto-permit without touching their repository or costing
/// latency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalStep {
    pub layer: LayerId,
    pub verdict: LayerVerdict,
    pub evidence: Option<EvidenceEntry>,
    pub executed: bool,
}

/// Result of running all layers over one packet: the committed steps (up
/// to and including the first deny), the final packet with accumulated
/// evidence, and the overall flag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evaluation {
    pub steps: Vec<EvalStep>,
    pub packet: SessionPacket,
    pub final_flag: Flag,
}

type LayerResult = (LayerVerdict, Option<EvidenceEntry>);

fn layer_result<R: RepositoryQueries>(
    layer: LayerId,
    packet: &SessionPacket,
    repos: &R,
    config: &PipelineConfig,
) -> LayerResult {
    match layer {
        LayerId::Fw => (inspect_firewall(packet, repos), None),
        LayerId::Meta => (inspect_metadata(packet, repos).0, None),
        LayerId::Vault => (inspect_vault(packet, repos), None),
        LayerId::Ips => {
            let (verdict, after) = inspect_ips(packet, repos, config);
            let evidence = after.evidence.len().checked_sub(packet.evidence.len()).and_then(
                |added| if added > 0 { after.evidence.last().cloned() } else { None },
            );
            (verdict, evidence)
        }
        LayerId::Antimal => {
            let (verdict, after) = inspect_antimalware(packet, repos);
            let evidence = after.evidence.len().checked_sub(packet.evidence.len()).and_then(
                |added| if added > 0 { after.evidence.last().cloned() } else { None },
            );
            (verdict, evidence)
        }
        LayerId::App => unreachable!("the application layer is not an inspection"),
    }
}

fn commit(
    input: &SessionPacket,
    results: impl IntoIterator<Item = (LayerId, Option<LayerResult>)>,
) -> Evaluation {
    let mut packet = input.clone();
    let mut steps = Vec::with_capacity(5);
    let mut denied = false;
    for (layer, result) in results {
        let step = match result {
            Some((verdict, evidence)) => {
                if let Some(entry) = &evidence {
                    packet = packet.append_evidence(entry.clone());
                }
                EvalStep { layer, verdict, evidence, executed: true }
            }
            None => EvalStep {
                layer,
                verdict: LayerVerdict::permit(layer, "layer disabled"),
                evidence: None,
                executed: false,
            },
        };
        let deny = step.verdict.flag == Flag::Deny;
        steps.push(step);
        if deny {
            denied = true;
            break;
        }
    }
    let final_flag = Flag::from_bool(!denied && steps.len() == LayerId::INSPECTION.len());
    Evaluation { steps, packet, final_flag }
}

/// Sequential reference evaluation: layers run strictly in order and no
/// repository beyond the first deny is ever queried.
pub fn evaluate<R: RepositoryQueries>(
    packet: &SessionPacket,
    repos: &R,
    config: &PipelineConfig,
) -> Evaluation {
    let mut results = Vec::with_capacity(5);
    let mut current = packet.clone();
    for layer in LayerId::INSPECTION {
        if !config.is_enabled(layer) {
            results.push((layer, None));
            continue;
        }
        let (verdict, evidence) = layer_result(layer, &current, repos, config);
        if let Some(entry) = &evidence {
            current = current.append_evidence(entry.clone());
        }
        let deny = verdict.flag == Flag::Deny;
        results.push((layer, Some((verdict, evidence))));
        if deny {
            break;
        }
    }
    commit(packet, results)
}

/// Concurrent evaluation: every enabled layer is inspected speculatively
/// in parallel, then verdicts commit strictly in layer order. Committed
/// output is bit-identical to [`evaluate`]; speculative work past the
/// first deny is discarded.
pub fn evaluate_parallel<R: RepositoryQueries + Sync>(
    packet: &SessionPacket,
    repos: &R,
    config: &PipelineConfig,
) -> Evaluation {
    // Layer inspections read the immutable packet fields only (evidence
    // appends never feed back into a verdict), so speculating against the
    // input packet is sound.
    let mut speculative: [Option<LayerResult>; 5] = [None, None, None, None, None];
    let slots: Vec<(usize, LayerId)> = LayerId::INSPECTION
        .iter()
        .enumerate()
        .filter(|(_, l)| config.is_enabled(**l))
        .map(|(i, l)| (i, *l))
        .collect();

    let computed: std::sync::Mutex<Vec<(usize, LayerResult)>> =
        std::sync::Mutex::new(Vec::with_capacity(slots.len()));
    rayon::scope(|scope| {
        for (idx, layer) in &slots {
            let computed = &computed;
            scope.spawn(move |_| {
                let r = layer_result(*layer, packet, repos, config);
                computed.lock().unwrap().push((*idx, r));
            });
        }
    });
    for (idx, result) in computed.into_inner().unwrap() {
        speculative[idx] = Some(result);
    }

    let mut ordered = Vec::with_capacity(5);
    for (idx, layer) in LayerId::INSPECTION.iter().enumerate() {
        if config.is_enabled(*layer) {
            let result = speculative[idx].take().expect("speculative result missing");
            ordered.push((*layer, Some(result)));
        } else {
            ordered.push((*layer, None));
        }
    }
    commit(packet, ordered)
}

// ============================================================================
// Pipeline outcome
// ============================================================================

/// Trace plus final state of one inspected session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionOutcome {
    pub trace: SessionTrace,
    pub final_flag: Flag,
    pub packet: SessionPacket,
}

impl SessionOutcome {
    /// Folds evaluation steps into a trace. `verdict_times[k]` stamps the
    /// k-th step; missing entries reuse the last known time (disabled or
    /// zero-latency layers).
    pub fn assemble(eval: Evaluation, verdict_times: &[SimTime]) -> SessionOutcome {
        let mut trace = SessionTrace::new(eval.packet.session_id.clone());
        let mut last = SimTime::ZERO;
        for (i, step) in eval.steps.iter().enumerate() {
            let at = verdict_times.get(i).copied().unwrap_or(last);
            last = at;
            trace = trace
                .record_verdict(step.verdict.clone(), at)
                .expect("evaluation steps are ordered and gap-free");
        }
        debug_assert_eq!(
            trace.outcome == Outcome::Authorized,
            eval.final_flag == Flag::Permit,
        );
        SessionOutcome { trace, final_flag: eval.final_flag, packet: eval.packet }
    }
}

/// Runs the full pipeline standalone (zero latency: every verdict is
/// stamped at time zero). The simulator drives [`evaluate`] through its
/// own clock instead.
pub fn run_pipeline<R: RepositoryQueries>(
    packet: &SessionPacket,
    repos: &R,
    config: &PipelineConfig,
) -> SessionOutcome {
    SessionOutcome::assemble(evaluate(packet, repos, config), &[])
}
