//! Deterministic discrete-event engine.
//!
//! Session arrivals (memoryless for tenant clients, fixed-cadence for
//! attackers) are pushed onto a global event queue and marched through
//! the pipeline with per-layer service times. The queue pops in
//! nondecreasing time with ties broken on `(session_id, stage)`, so the
//! whole run is a pure function of `(scenario, seed)`: same inputs,
//! byte-identical serialized outputs.
//!
//! Parallel mode precomputes per-session pipeline evaluations on worker
//! threads (sessions are independent; repositories are immutable) and
//! then drives the identical event loop, so its output is byte-identical
//! to sequential mode by construction.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{forge_session, AdversaryError};
use crate::digest;
use crate::metrics::{Metrics, MetricsBin, Origin};
use crate::model::{EvidenceKind, Flag, LayerId, SessionId, SessionPacket, SimTime};
use crate::pipeline::{evaluate, evaluate_parallel, Evaluation, PipelineConfig, SessionOutcome};
use crate::repos::{LoadError, RepositorySet};
use crate::scenario::{
    has_errors, provision, validate, Diagnostic, ProvisionedAttacker, ProvisionedLan, QueueModel,
    Scenario,
};

// ============================================================================
// Events
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    SessionArrival,
    LayerComplete { layer: LayerId },
    AppAccess,
}

/// One processed simulation event, retained in the run's event log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub time: SimTime,
    pub kind: EventKind,
    pub session: SessionId,
}

// stage ordering for equal-time ties: arrival < fw < ... < antimal < app
fn stage_of(kind: EventKind) -> u8 {
    match kind {
        EventKind::SessionArrival => 0,
        EventKind::LayerComplete { layer } => {
            1 + LayerId::INSPECTION.iter().position(|l| *l == layer).unwrap_or(5) as u8
        }
        EventKind::AppAccess => 7,
    }
}

struct QueuedEvent {
    time: SimTime,
    session_id: SessionId,
    stage: u8,
    session_index: usize,
    kind: EventKind,
}

impl PartialEq for QueuedEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueuedEvent {}

impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueuedEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap, we want the earliest first
        (other.time, &other.session_id, other.stage)
            .cmp(&(self.time, &self.session_id, self.stage))
    }
}

// ============================================================================
// Workload generation
// ============================================================================

/// One generated session waiting to enter the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionArrival {
    pub time: SimTime,
    pub origin: Origin,
    pub packet: SessionPacket,
}

/// Tenant workload: memoryless arrivals per client at the LAN's rate.
/// Each session originates from one of the client's VMs and carries the
/// full registered profile plus a valid session-bound key proof; its
/// declared destination is the tenant's metadata server, which is why
/// the metadata layer is always the first stop after the firewall.
pub fn generate_workload(
    lan: &ProvisionedLan,
    duration: SimTime,
    scenario_seed: u64,
) -> Vec<SessionArrival> {
    let mut arrivals = Vec::new();
    let label = format!("lan:{}:client", lan.name);
    for client in &lan.clients {
        let mut rng =
            ChaCha8Rng::from_seed(digest::stream_seed(scenario_seed, &label, client.index as u64));
        if client.vms.is_empty() {
            continue;
        }
        let mut now_ns: u64 = 0;
        loop {
            let u: f64 = rng.random();
            let dt_secs = -(1.0 - u).ln() / lan.arrival_rate;
            let dt_ns = ((dt_secs * 1e9).round() as u64).max(1);
            now_ns = now_ns.saturating_add(dt_ns);
            if now_ns >= duration.0 {
                break;
            }
            let vm = &client.vms[rng.random_range(0..client.vms.len())];
            let nonce: u64 = rng.random();
            let payload = format!("dbq-{:08x}", rng.random::<u32>()).into_bytes();
            let packet = SessionPacket::new_session(
                vm.identity.clone(),
                vm.token.clone(),
                payload,
                nonce,
            )
            .expect("provisioned identities are valid")
            .with_metadata_responses(lan.profile.clone());
            let proof = digest::key_proof(&vm.key, &packet.session_id);
            arrivals.push(SessionArrival {
                time: SimTime(now_ns),
                origin: Origin::Tenant,
                packet: packet.with_key_proof(proof),
            });
        }
    }
    arrivals
}

/// Attacker workload: a fixed cadence of `1 / intensity` seconds starting
/// at time zero (a sustained campaign rather than background traffic), so
/// drop counts show up in every bin the attack spans.
pub fn generate_attacks(
    attacker: &ProvisionedAttacker,
    repos: &RepositorySet,
    anomaly_threshold: usize,
    duration: SimTime,
    scenario_seed: u64,
) -> Result<Vec<SessionArrival>, AdversaryError> {
    let mut rng = ChaCha8Rng::from_seed(digest::stream_seed(
        scenario_seed,
        &format!("attacker:{}", attacker.id),
        0,
    ));
    let mut arrivals = Vec::new();
    let period_secs = 1.0 / attacker.profile.intensity;
    let mut k: u64 = 0;
    loop {
        let at_ns = (k as f64 * period_secs * 1e9).round() as u64;
        if at_ns >= duration.0 {
            break;
        }
        let packet = forge_session(&attacker.profile, repos, anomaly_threshold, &mut rng)?;
        arrivals.push(SessionArrival {
            time: SimTime(at_ns),
            origin: Origin::Attacker,
            packet,
        });
        k += 1;
    }
    Ok(arrivals)
}

/// Configured service time of one layer.
pub fn layer_latency(layer: LayerId, scenario: &Scenario) -> SimTime {
    let secs = match layer {
        LayerId::Fw => scenario.latencies.fw,
        LayerId::Meta => scenario.latencies.meta,
        LayerId::Vault => scenario.latencies.vault,
        LayerId::Ips => scenario.latencies.ips,
        LayerId::Antimal => scenario.latencies.antimal,
        LayerId::App => 0.0,
    };
    SimTime::from_secs_f64(secs)
}

// ============================================================================
// Run output
// ============================================================================

/// Evaluation strategy. Both modes produce byte-identical output; the
/// parallel mode spends wall-clock concurrency on the per-session
/// pipeline work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    Sequential,
    Parallel,
}

/// One completed session: when it arrived, whose it was, and what the
/// pipeline decided.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionRecord {
    pub origin: Origin,
    pub arrival: SimTime,
    pub outcome: SessionOutcome,
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: Metrics,
    pub records: Vec<SessionRecord>,
    pub events: Vec<Event>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario failed validation with {} diagnostic(s)", .0.len())]
    Validation(Vec<Diagnostic>),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("attack forging failed: {0}")]
    Forge(#[from] AdversaryError),
}

// ============================================================================
// Engine
// ============================================================================

struct SessionState {
    session_id: SessionId,
    origin: Origin,
    arrival: SimTime,
    eval: Evaluation,
    step_idx: usize,
    trace: crate::model::SessionTrace,
    done: bool,
}

struct Stations {
    model: QueueModel,
    next_free: [SimTime; 5],
}

impl Stations {
    fn new(model: QueueModel) -> Self {
        Self { model, next_free: [SimTime::ZERO; 5] }
    }

    fn completion(&mut self, layer: LayerId, now: SimTime, latency: SimTime) -> SimTime {
        match self.model {
            QueueModel::InfiniteServer => now + latency,
            QueueModel::SingleServer => {
                let slot = LayerId::INSPECTION.iter().position(|l| *l == layer).unwrap();
                let start = now.max(self.next_free[slot]);
                let completion = start + latency;
                self.next_free[slot] = completion;
                completion
            }
        }
    }
}

/// Runs the scenario with the sequential reference engine.
pub fn run(scenario: &Scenario) -> Result<RunOutput, SimError> {
    run_with_mode(scenario, EvalMode::Sequential)
}

/// Runs the scenario. Validation errors surface before any simulation
/// starts; once the event loop begins the engine cannot fail.
pub fn run_with_mode(scenario: &Scenario, mode: EvalMode) -> Result<RunOutput, SimError> {
    let diags = validate(scenario);
    if has_errors(&diags) {
        return Err(SimError::Validation(diags));
    }

    let world = provision(scenario)?;
    let duration = SimTime::from_secs_f64(scenario.meta.duration);
    let config = PipelineConfig {
        anomaly_threshold: scenario.parameters.anomaly_threshold,
        disabled_layers: scenario.parameters.disabled_layers.iter().copied().collect(),
    };
    let latencies: [SimTime; 5] =
        LayerId::INSPECTION.map(|layer| layer_latency(layer, scenario));

    let mut arrivals: Vec<SessionArrival> = Vec::new();
    for lan in &world.lans {
        arrivals.extend(generate_workload(lan, duration, scenario.meta.seed));
    }
    for attacker in &world.attackers {
        arrivals.extend(generate_attacks(
            attacker,
            &world.repos,
            scenario.parameters.anomaly_threshold,
            duration,
            scenario.meta.seed,
        )?);
    }
    arrivals.sort_by(|a, b| {
        (a.time, &a.packet.session_id).cmp(&(b.time, &b.packet.session_id))
    });

    // Pipeline work is pure per session, so the parallel mode can farm it
    // out up front; the sequential mode computes it when the arrival
    // event fires. The event loop below is identical either way.
    let evals: Vec<Option<Evaluation>> = match mode {
        EvalMode::Sequential => vec![None; arrivals.len()],
        EvalMode::Parallel => arrivals
            .par_iter()
            .map(|a| Some(evaluate_parallel(&a.packet, &world.repos, &config)))
            .collect(),
    };

    let mut queue: BinaryHeap<QueuedEvent> = BinaryHeap::with_capacity(arrivals.len());
    let mut states: Vec<SessionState> = Vec::with_capacity(arrivals.len());
    for (index, (arrival, eval)) in arrivals.iter().zip(evals).enumerate() {
        let eval = eval.unwrap_or_else(|| evaluate(&arrival.packet, &world.repos, &config));
        queue.push(QueuedEvent {
            time: arrival.time,
            session_id: arrival.packet.session_id.clone(),
            stage: stage_of(EventKind::SessionArrival),
            session_index: index,
            kind: EventKind::SessionArrival,
        });
        states.push(SessionState {
            session_id: arrival.packet.session_id.clone(),
            origin: arrival.origin,
            arrival: arrival.time,
            trace: crate::model::SessionTrace::new(arrival.packet.session_id.clone()),
            eval,
            step_idx: 0,
            done: false,
        });
    }

    let mut stations = Stations::new(scenario.parameters.queue_model);
    let mut events: Vec<Event> = Vec::new();

    while let Some(event) = queue.pop() {
        let now = event.time;
        events.push(Event {
            time: now,
            kind: event.kind,
            session: event.session_id.clone(),
        });
        let state = &mut states[event.session_index];
        match event.kind {
            EventKind::SessionArrival => {
                advance(state, event.session_index, now, &mut queue, &mut stations, &latencies);
            }
            EventKind::LayerComplete { layer } => {
                let step = state.eval.steps[state.step_idx].clone();
                debug_assert_eq!(step.layer, layer);
                state.trace = state
                    .trace
                    .record_verdict(step.verdict.clone(), now)
                    .expect("engine records verdicts in canonical order");
                state.step_idx += 1;
                if step.verdict.flag == Flag::Deny {
                    state.done = true;
                } else if layer == LayerId::Antimal {
                    push_app_access(state, event.session_index, now, &mut queue);
                } else {
                    advance(
                        state,
                        event.session_index,
                        now,
                        &mut queue,
                        &mut stations,
                        &latencies,
                    );
                }
            }
            EventKind::AppAccess => {
                state.done = true;
            }
        }
    }

    let mut records: Vec<SessionRecord> = states
        .into_iter()
        .map(|state| {
            debug_assert!(state.done);
            SessionRecord {
                origin: state.origin,
                arrival: state.arrival,
                outcome: SessionOutcome {
                    trace: state.trace,
                    final_flag: state.eval.final_flag,
                    packet: state.eval.packet,
                },
            }
        })
        .collect();
    records.sort_by(|a, b| {
        (a.arrival, &a.outcome.packet.session_id)
            .cmp(&(b.arrival, &b.outcome.packet.session_id))
    });

    let metrics = bin_metrics(&records, scenario.meta.bin_width);
    Ok(RunOutput { metrics, records, events })
}

/// Consumes disabled (auto-permit) steps at the current instant, then
/// either schedules the next executed layer's completion or finishes the
/// session.
fn advance(
    state: &mut SessionState,
    session_index: usize,
    now: SimTime,
    queue: &mut BinaryHeap<QueuedEvent>,
    stations: &mut Stations,
    latencies: &[SimTime; 5],
) {
    loop {
        // a deny step always ends via its LayerComplete event and an
        // antimal permit via AppAccess, so steps cannot run out here
        let step = &state.eval.steps[state.step_idx];
        if step.executed {
            let slot = LayerId::INSPECTION.iter().position(|l| *l == step.layer).unwrap();
            let completion = stations.completion(step.layer, now, latencies[slot]);
            queue.push(QueuedEvent {
                time: completion,
                session_id: state.session_id.clone(),
                stage: stage_of(EventKind::LayerComplete { layer: step.layer }),
                session_index,
                kind: EventKind::LayerComplete { layer: step.layer },
            });
            return;
        }
        // disabled layer: record the auto-permit immediately, no latency
        let verdict = step.verdict.clone();
        let layer = step.layer;
        state.trace = state
            .trace
            .record_verdict(verdict, now)
            .expect("engine records verdicts in canonical order");
        state.step_idx += 1;
        if layer == LayerId::Antimal {
            push_app_access(state, session_index, now, queue);
            return;
        }
    }
}

fn push_app_access(
    state: &SessionState,
    session_index: usize,
    now: SimTime,
    queue: &mut BinaryHeap<QueuedEvent>,
) {
    queue.push(QueuedEvent {
        time: now,
        session_id: state.session_id.clone(),
        stage: stage_of(EventKind::AppAccess),
        session_index,
        kind: EventKind::AppAccess,
    });
}

// ============================================================================
// Binning
// ============================================================================

/// Aggregates session records into per-bin counters keyed by arrival
/// time. Bins are contiguous from zero through the last occupied bin.
pub fn bin_metrics(records: &[SessionRecord], bin_width_secs: f64) -> Metrics {
    let bin_ns = SimTime::from_secs_f64(bin_width_secs).0.max(1);
    let bin_count = records
        .iter()
        .map(|r| (r.arrival.0 / bin_ns) + 1)
        .max()
        .unwrap_or(0) as usize;
    let mut bins: Vec<MetricsBin> = (0..bin_count)
        .map(|i| MetricsBin {
            bin_start: i as f64 * bin_width_secs,
            ..MetricsBin::default()
        })
        .collect();

    for record in records {
        let idx = (record.arrival.0 / bin_ns) as usize;
        let counters = bins[idx].for_origin_mut(record.origin);
        counters.sessions_initiated += 1;
        match record.outcome.trace.outcome {
            crate::model::Outcome::Authorized => {
                counters.sessions_authorized += 1;
                counters.app_accesses += 1;
            }
            crate::model::Outcome::Denied => {
                let layer = record
                    .outcome
                    .trace
                    .denial_layer
                    .expect("denied traces carry their denial layer");
                counters.sessions_denied_by_layer.increment(layer);
                counters.packets_dropped += 1;
            }
            crate::model::Outcome::Pending => {
                unreachable!("the engine finalizes every session")
            }
        }
        counters.anomaly_reports += record
            .outcome
            .packet
            .evidence
            .iter()
            .filter(|e| e.kind == EvidenceKind::AnomalyReport)
            .count() as u64;
    }

    Metrics { bin_width: bin_width_secs, bins }
}
