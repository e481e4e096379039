//! Deterministic simulator and embeddable policy library for a
//! multi-layer, hierarchical inter-cloud security model.
//!
//! Tenant sessions are inspected by five sequential repository-backed
//! layers (firewall, tenant metadata, digital vault, IPS, anti-malware)
//! before they can reach the application layer. VMs live in a tiered
//! hierarchy where lateral (virtual) links never cross tiers and every
//! upward hop is gated by a control node. The simulator generates
//! legitimate and adversarial workloads, drives them through the
//! pipeline with per-layer service times, and emits reproducible
//! time-binned metrics.
//!
//! Modules map onto the moving parts:
//!
//! - [`model`]: sessions, packets, verdicts, traces, the append-only
//!   evidence log.
//! - [`digest`]: the one deterministic digest used for session ids and
//!   key-possession proofs.
//! - [`repos`]: the five lookup stores and their membership semantics.
//! - [`pipeline`]: ordered inspection with first-failure termination and
//!   the decision oracle it must agree with.
//! - [`topology`]: the tiered VM graph, controls, and reachability.
//! - [`adversary`]: attacker archetypes and session forging.
//! - [`scenario`]: the TOML experiment format, validation, provisioning.
//! - [`sim`]: the discrete-event engine and workload generation.
//! - [`metrics`] / [`report`]: per-bin counters and stable emissions.

pub mod adversary;
pub mod digest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod repos;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod topology;

pub use adversary::{expected_denial_layer, forge_session, Archetype, AttackerProfile};
pub use metrics::{Metrics, Origin, OriginCounters};
pub use model::{
    EvidenceEntry, EvidenceKind, Flag, LayerId, LayerVerdict, Outcome, SessionId, SessionPacket,
    SessionTrace, SimTime, TenantId, Token, VmId, VmIdentity,
};
pub use pipeline::{
    oracle_decision, run_pipeline, MembershipVector, PipelineConfig, SessionOutcome,
};
pub use repos::{load_repositories, RepositoryQueries, RepositorySet};
pub use scenario::{
    check_scenario, parse_scenario, provision, validate, Diagnostic, Scenario, Severity,
    Strictness,
};
pub use sim::{
    bin_metrics, generate_workload, layer_latency, run, run_with_mode, EvalMode, RunOutput,
    SessionRecord,
};
pub use topology::{build_hierarchy, HierarchyDecl, TierGraph};
