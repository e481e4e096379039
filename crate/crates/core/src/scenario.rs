//! Scenario documents: the single TOML file that declares an experiment
//! (LANs, attackers, hierarchy, signature stores, latencies, parameters),
//! its validation diagnostics, and the provisioning step that turns a
//! declaration into concrete repositories and VM rosters.
//!
//! Everything a run needs is derived deterministically from the document
//! plus its seed: client VM ids, credentials tokens, and vault keys are
//! all pure functions of `(seed, name)`, so two runs of the same file
//! are the same experiment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::adversary::{Archetype, AttackerProfile};
use crate::digest::{self, KeySecret};
use crate::model::{LayerId, TenantId, Token, VmId, VmIdentity};
use crate::repos::{LoadError, PatternId, RepositorySet};
use crate::topology::{build_hierarchy, HierarchyDecl};

// ============================================================================
// Document structure
// ============================================================================

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub name: String,
    #[serde(default, with = "serde_seed")]
    pub seed: u64,
    /// Simulated seconds.
    pub duration: f64,
    /// Metrics bin width in seconds.
    pub bin_width: f64,
}

/// TOML integers are i64; seeds beyond that range are written (and
/// accepted) as decimal strings so any u64 round-trips.
mod serde_seed {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        if *seed <= i64::MAX as u64 {
            s.serialize_u64(*seed)
        } else {
            s.serialize_str(&seed.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(u64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(seed) => Ok(seed),
            Repr::Str(text) => text.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// One tenant LAN: `clients` clients, each holding `vms_per_client` VMs,
/// each client initiating sessions at `arrival_rate` per second. The
/// profile is the tenant's registered metadata catalogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanDecl {
    pub name: String,
    pub clients: u32,
    pub vms_per_client: u32,
    pub arrival_rate: f64,
    pub profile: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackerDecl {
    pub id: String,
    pub archetype: Archetype,
    /// Victim VM (a provisioned LAN VM id).
    pub target: String,
    /// Sessions per simulated second.
    pub intensity: f64,
    /// Whether the scenario registers genuine firewall credentials for
    /// the attacker VM. Defaults to what the archetype requires.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grant_credentials: Option<bool>,
    /// Whether the scenario places a key in the vault for the attacker
    /// VM. Defaults to what the archetype requires.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grant_vault_key: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureDecl {
    pub id: String,
    pub pattern: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SignatureDecls {
    #[serde(default)]
    pub ips: Vec<SignatureDecl>,
    #[serde(default)]
    pub antimal: Vec<SignatureDecl>,
}

/// Per-layer service times in seconds. Defaults keep the signature
/// layers (IPS, anti-malware) strictly more expensive than the
/// credential checks, matching the overhead the model attributes to
/// deep inspection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latencies {
    #[serde(default = "default_latency_fw")]
    pub fw: f64,
    #[serde(default = "default_latency_meta")]
    pub meta: f64,
    #[serde(default = "default_latency_vault")]
    pub vault: f64,
    #[serde(default = "default_latency_ips")]
    pub ips: f64,
    #[serde(default = "default_latency_antimal")]
    pub antimal: f64,
}

fn default_latency_fw() -> f64 {
    0.001
}
fn default_latency_meta() -> f64 {
    0.002
}
fn default_latency_vault() -> f64 {
    0.002
}
fn default_latency_ips() -> f64 {
    0.005
}
fn default_latency_antimal() -> f64 {
    0.005
}

impl Default for Latencies {
    fn default() -> Self {
        Self {
            fw: default_latency_fw(),
            meta: default_latency_meta(),
            vault: default_latency_vault(),
            ips: default_latency_ips(),
            antimal: default_latency_antimal(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueModel {
    /// No queueing delay: every layer services any number of sessions at
    /// once.
    #[default]
    InfiniteServer,
    /// One server per layer; sessions queue FIFO. For overload studies.
    SingleServer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    /// How many profile fields the metadata form requests per session.
    #[serde(default = "default_challenge_size")]
    pub challenge_size: usize,
    /// IPS anomaly cutoff in bytes.
    #[serde(default = "default_anomaly_threshold")]
    pub anomaly_threshold: usize,
    /// Inspection layers to skip (auto-permit, no latency). The five
    /// canonical layers are never reordered.
    #[serde(default)]
    pub disabled_layers: Vec<LayerId>,
    #[serde(default)]
    pub queue_model: QueueModel,
}

fn default_challenge_size() -> usize {
    2
}

fn default_anomaly_threshold() -> usize {
    crate::pipeline::DEFAULT_ANOMALY_THRESHOLD
}

impl Default for Parameters {
    fn default() -> Self {
        Self {
            challenge_size: default_challenge_size(),
            anomaly_threshold: default_anomaly_threshold(),
            disabled_layers: Vec::new(),
            queue_model: QueueModel::default(),
        }
    }
}

/// A complete experiment declaration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub meta: ScenarioMeta,
    #[serde(default)]
    pub lans: Vec<LanDecl>,
    #[serde(default)]
    pub attackers: Vec<AttackerDecl>,
    #[serde(default = "HierarchyDecl::default_three_tier")]
    pub hierarchy: HierarchyDecl,
    #[serde(default)]
    pub repositories: SignatureDecls,
    #[serde(default)]
    pub latencies: Latencies,
    #[serde(default)]
    pub parameters: Parameters,
}

impl Scenario {
    /// The reference experiment: four tenant LANs of 500 clients with
    /// three VMs each, three adversaries (masquerade, insider exploit,
    /// malware injector), the three-tier hierarchy, and default
    /// latencies.
    pub fn reference() -> Scenario {
        let lans = (1..=4)
            .map(|i| LanDecl {
                name: format!("lan{i}"),
                clients: 500,
                vms_per_client: 3,
                arrival_rate: 0.1,
                profile: BTreeMap::from([
                    ("company".to_string(), format!("lan{i}-corp")),
                    ("department".to_string(), format!("analytics-{i}")),
                    ("location".to_string(), format!("site-{i}")),
                    ("contact".to_string(), format!("ops-{i}")),
                ]),
            })
            .collect();
        Scenario {
            meta: ScenarioMeta {
                name: "reference".into(),
                seed: 7,
                duration: 60.0,
                bin_width: 10.0,
            },
            lans,
            attackers: vec![
                AttackerDecl {
                    id: "adv1".into(),
                    archetype: Archetype::Masquerade,
                    target: "lan1-c0000-vm1".into(),
                    intensity: 0.1,
                    grant_credentials: None,
                    grant_vault_key: None,
                },
                AttackerDecl {
                    id: "adv2".into(),
                    archetype: Archetype::InsiderExploit,
                    target: "lan2-c0000-vm1".into(),
                    intensity: 0.1,
                    grant_credentials: None,
                    grant_vault_key: None,
                },
                AttackerDecl {
                    id: "adv3".into(),
                    archetype: Archetype::MalwareInjector,
                    target: "lan3-c0000-vm1".into(),
                    intensity: 0.1,
                    grant_credentials: None,
                    grant_vault_key: None,
                },
            ],
            hierarchy: HierarchyDecl::default_three_tier(),
            repositories: SignatureDecls {
                ips: vec![
                    SignatureDecl { id: "exploit-sqli-01".into(), pattern: "EXPLOIT-SQLI-01".into() },
                    SignatureDecl { id: "exploit-xss-02".into(), pattern: "EXPLOIT-XSS-02".into() },
                ],
                antimal: vec![
                    SignatureDecl { id: "trojan-keylog-01".into(), pattern: "TROJAN-KEYLOG-01".into() },
                    SignatureDecl { id: "trojan-rat-02".into(), pattern: "TROJAN-RAT-02".into() },
                ],
            },
            latencies: Latencies::default(),
            parameters: Parameters::default(),
        }
    }

    /// Serializes the scenario back to its TOML document form.
    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serialization cannot fail")
    }
}

// ============================================================================
// Diagnostics
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

/// One validation or parse finding.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    /// Which part of the model flagged it: parse, schema, meta, lan,
    /// repositories, topology, adversary, parameters, simulation.
    pub area: &'static str,
    pub message: String,
    pub line: Option<usize>,
}

impl Diagnostic {
    pub fn error(area: &'static str, message: impl Into<String>) -> Self {
        Self { severity: Severity::Error, area, message: message.into(), line: None }
    }

    pub fn warning(area: &'static str, message: impl Into<String>) -> Self {
        Self { severity: Severity::Warning, area, message: message.into(), line: None }
    }

    pub fn at_line(mut self, line: usize) -> Self {
        self.line = Some(line);
        self
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        match self.line {
            Some(line) => write!(f, "{sev}[{}] line {line}: {}", self.area, self.message),
            None => write!(f, "{sev}[{}]: {}", self.area, self.message),
        }
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

/// Strictness of schema checking: unknown keys are errors in strict mode
/// and warnings in lenient mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    #[default]
    Strict,
    Lenient,
}

// ============================================================================
// Parsing
// ============================================================================

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

fn parse_diagnostic(text: &str, err: &toml::de::Error) -> Diagnostic {
    let diag = Diagnostic::error("parse", err.message().to_string());
    match err.span() {
        Some(span) => diag.at_line(line_of_offset(text, span.start)),
        None => diag,
    }
}

/// Parses a scenario document. Unknown keys produce diagnostics per the
/// strictness; malformed documents produce `Err` with at least one parse
/// diagnostic carrying a line number. Never panics.
pub fn parse_scenario(
    text: &str,
    strictness: Strictness,
) -> Result<(Scenario, Vec<Diagnostic>), Vec<Diagnostic>> {
    let table: toml::Table = match toml::from_str(text) {
        Ok(table) => table,
        Err(err) => return Err(vec![parse_diagnostic(text, &err)]),
    };

    let mut diags = Vec::new();
    check_unknown_keys(&table, strictness, &mut diags);
    if has_errors(&diags) {
        return Err(diags);
    }

    match toml::from_str::<Scenario>(text) {
        Ok(scenario) => Ok((scenario, diags)),
        Err(err) => {
            diags.push(parse_diagnostic(text, &err));
            Err(diags)
        }
    }
}

/// Parse plus semantic validation in one step: the `validate` verb.
pub fn check_scenario(text: &str, strictness: Strictness) -> (Option<Scenario>, Vec<Diagnostic>) {
    match parse_scenario(text, strictness) {
        Ok((scenario, mut diags)) => {
            diags.extend(validate(&scenario));
            (Some(scenario), diags)
        }
        Err(diags) => (None, diags),
    }
}

fn check_unknown_keys(table: &toml::Table, strictness: Strictness, diags: &mut Vec<Diagnostic>) {
    let report = |diags: &mut Vec<Diagnostic>, path: String| {
        let message = format!("unknown key `{path}`");
        diags.push(match strictness {
            Strictness::Strict => Diagnostic::error("schema", message),
            Strictness::Lenient => Diagnostic::warning("schema", message),
        });
    };
    let check_table = |diags: &mut Vec<Diagnostic>,
                       table: &toml::Table,
                       allowed: &[&str],
                       prefix: &str| {
        for key in table.keys() {
            if !allowed.contains(&key.as_str()) {
                report(diags, format!("{prefix}{key}"));
            }
        }
    };
    let check_array = |diags: &mut Vec<Diagnostic>,
                       value: Option<&toml::Value>,
                       allowed: &[&str],
                       prefix: &str| {
        if let Some(toml::Value::Array(items)) = value {
            for (i, item) in items.iter().enumerate() {
                if let toml::Value::Table(t) = item {
                    check_table(diags, t, allowed, &format!("{prefix}[{i}]."));
                }
            }
        }
    };

    check_table(
        diags,
        table,
        &["meta", "lans", "attackers", "hierarchy", "repositories", "latencies", "parameters"],
        "",
    );
    if let Some(toml::Value::Table(meta)) = table.get("meta") {
        check_table(diags, meta, &["name", "seed", "duration", "bin_width"], "meta.");
    }
    check_array(
        diags,
        table.get("lans"),
        &["name", "clients", "vms_per_client", "arrival_rate", "profile"],
        "lans",
    );
    check_array(
        diags,
        table.get("attackers"),
        &["id", "archetype", "target", "intensity", "grant_credentials", "grant_vault_key"],
        "attackers",
    );
    if let Some(toml::Value::Table(hierarchy)) = table.get("hierarchy") {
        check_table(diags, hierarchy, &["tiers", "controls", "links"], "hierarchy.");
        check_array(diags, hierarchy.get("tiers"), &["tier", "vms"], "hierarchy.tiers");
        check_array(
            diags,
            hierarchy.get("controls"),
            &["id", "from_tier", "to_tier", "gate_layers"],
            "hierarchy.controls",
        );
        check_array(
            diags,
            hierarchy.get("links"),
            &["kind", "a", "b", "via_control"],
            "hierarchy.links",
        );
    }
    if let Some(toml::Value::Table(repositories)) = table.get("repositories") {
        check_table(diags, repositories, &["ips", "antimal"], "repositories.");
        check_array(diags, repositories.get("ips"), &["id", "pattern"], "repositories.ips");
        check_array(
            diags,
            repositories.get("antimal"),
            &["id", "pattern"],
            "repositories.antimal",
        );
    }
    if let Some(toml::Value::Table(latencies)) = table.get("latencies") {
        check_table(diags, latencies, &["fw", "meta", "vault", "ips", "antimal"], "latencies.");
    }
    if let Some(toml::Value::Table(parameters)) = table.get("parameters") {
        check_table(
            diags,
            parameters,
            &["challenge_size", "anomaly_threshold", "disabled_layers", "queue_model"],
            "parameters.",
        );
    }
}

// ============================================================================
// Validation
// ============================================================================

/// Semantic validation across every module's declaration invariants.
/// Empty result means the scenario is clean; warnings are advisory,
/// errors block a run.
pub fn validate(scenario: &Scenario) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    // meta
    if scenario.meta.name.trim().is_empty() {
        diags.push(Diagnostic::warning("meta", "scenario has no name"));
    }
    if !scenario.meta.duration.is_finite() || scenario.meta.duration < 0.0 {
        diags.push(Diagnostic::error(
            "meta",
            format!("duration must be finite and >= 0, got {}", scenario.meta.duration),
        ));
    } else if scenario.meta.duration == 0.0 {
        diags.push(Diagnostic::warning("meta", "zero duration: the run will generate no sessions"));
    }
    if !scenario.meta.bin_width.is_finite()
        || scenario.meta.bin_width <= 0.0
        || crate::model::SimTime::from_secs_f64(scenario.meta.bin_width).0 == 0
    {
        diags.push(Diagnostic::error(
            "meta",
            format!("bin_width must be at least 1ns, got {}", scenario.meta.bin_width),
        ));
    }

    // parameters
    if scenario.parameters.challenge_size == 0 {
        diags.push(Diagnostic::error("parameters", "challenge_size must be >= 1"));
    }
    let mut seen_disabled = BTreeSet::new();
    for layer in &scenario.parameters.disabled_layers {
        if !layer.is_inspection() {
            diags.push(Diagnostic::error(
                "parameters",
                "only the five inspection layers can be disabled",
            ));
        }
        if !seen_disabled.insert(*layer) {
            diags.push(Diagnostic::warning(
                "parameters",
                format!("layer {layer} disabled more than once"),
            ));
        }
    }

    // latencies
    for (name, value) in [
        ("fw", scenario.latencies.fw),
        ("meta", scenario.latencies.meta),
        ("vault", scenario.latencies.vault),
        ("ips", scenario.latencies.ips),
        ("antimal", scenario.latencies.antimal),
    ] {
        if !value.is_finite() || value < 0.0 {
            diags.push(Diagnostic::error(
                "latencies",
                format!("latency {name} must be finite and >= 0, got {value}"),
            ));
        }
    }

    // lans
    let mut lan_names = BTreeSet::new();
    for lan in &scenario.lans {
        if lan.name.trim().is_empty() {
            diags.push(Diagnostic::error("lan", "LAN name must not be empty"));
            continue;
        }
        if !lan_names.insert(lan.name.as_str()) {
            diags.push(Diagnostic::error("lan", format!("duplicate LAN name {}", lan.name)));
        }
        if !lan.arrival_rate.is_finite() || lan.arrival_rate <= 0.0 {
            diags.push(Diagnostic::error(
                "lan",
                format!("LAN {}: arrival_rate must be > 0", lan.name),
            ));
        }
        if lan.profile.len() < scenario.parameters.challenge_size {
            diags.push(Diagnostic::error(
                "lan",
                format!(
                    "LAN {}: profile has {} fields but challenge_size is {}",
                    lan.name,
                    lan.profile.len(),
                    scenario.parameters.challenge_size
                ),
            ));
        }
        if lan.clients == 0 || lan.vms_per_client == 0 {
            diags.push(Diagnostic::warning(
                "lan",
                format!("LAN {} declares no client VMs", lan.name),
            ));
        }
    }
    if scenario.lans.is_empty() && scenario.attackers.is_empty() {
        diags.push(Diagnostic::warning(
            "simulation",
            "empty scenario: no LANs and no attackers declared",
        ));
    }

    // signature repositories
    validate_signatures(&scenario.repositories, &mut diags);

    // hierarchy
    match build_hierarchy(&scenario.hierarchy) {
        Ok(graph) => {
            let mut controls: Vec<_> = graph.controls().collect();
            controls.sort_by_key(|c| c.from_tier);
            let flattened: Vec<LayerId> =
                controls.iter().flat_map(|c| c.gate_layers.iter().copied()).collect();
            if flattened_out_of_order(&flattened) {
                diags.push(Diagnostic::error(
                    "topology",
                    "control gate layers must appear in canonical inspection order",
                ));
            }
        }
        Err(err) => diags.push(Diagnostic::error("topology", err.to_string())),
    }

    // attackers
    let lan_vm_ids = generated_vm_ids(scenario);
    let mut attacker_ids = BTreeSet::new();
    for attacker in &scenario.attackers {
        if attacker.id.trim().is_empty() {
            diags.push(Diagnostic::error("adversary", "attacker id must not be empty"));
            continue;
        }
        if !attacker_ids.insert(attacker.id.as_str()) {
            diags.push(Diagnostic::error(
                "adversary",
                format!("duplicate attacker id {}", attacker.id),
            ));
        }
        if lan_names.contains(attacker.id.as_str()) {
            diags.push(Diagnostic::error(
                "adversary",
                format!("attacker id {} collides with a LAN name", attacker.id),
            ));
        }
        if !attacker.intensity.is_finite() || attacker.intensity <= 0.0 {
            diags.push(Diagnostic::error(
                "adversary",
                format!("attacker {}: intensity must be > 0", attacker.id),
            ));
        }
        if !lan_vm_ids.contains(attacker.target.as_str()) {
            diags.push(Diagnostic::error(
                "adversary",
                format!(
                    "attacker {} targets {} which is not a provisioned LAN VM",
                    attacker.id, attacker.target
                ),
            ));
        }
        if attacker.archetype.requires_firewall_grant()
            && attacker.grant_credentials == Some(false)
        {
            diags.push(Diagnostic::error(
                "adversary",
                format!(
                    "attacker {}: archetype {} requires granted credentials",
                    attacker.id,
                    attacker.archetype.name()
                ),
            ));
        }
        if attacker.archetype.requires_vault_grant() && attacker.grant_vault_key == Some(false) {
            diags.push(Diagnostic::error(
                "adversary",
                format!(
                    "attacker {}: archetype {} requires a vault key",
                    attacker.id,
                    attacker.archetype.name()
                ),
            ));
        }
        match attacker.archetype {
            Archetype::InsiderExploit if scenario.repositories.ips.is_empty() => {
                diags.push(Diagnostic::error(
                    "adversary",
                    format!(
                        "attacker {}: insider_exploit needs at least one ips signature",
                        attacker.id
                    ),
                ));
            }
            Archetype::MalwareInjector if scenario.repositories.antimal.is_empty() => {
                diags.push(Diagnostic::error(
                    "adversary",
                    format!(
                        "attacker {}: malware_injector needs at least one antimal signature",
                        attacker.id
                    ),
                ));
            }
            _ => {}
        }
    }

    diags
}

fn validate_signatures(decls: &SignatureDecls, diags: &mut Vec<Diagnostic>) {
    for (kind, list) in [("ips", &decls.ips), ("antimal", &decls.antimal)] {
        let mut ids = BTreeSet::new();
        let mut patterns = BTreeSet::new();
        for decl in list {
            if decl.pattern.is_empty() {
                diags.push(Diagnostic::error(
                    "repositories",
                    format!("{kind} signature {} has an empty pattern", decl.id),
                ));
            }
            if !ids.insert(decl.id.as_str()) {
                diags.push(Diagnostic::error(
                    "repositories",
                    format!("duplicate {kind} signature id {}", decl.id),
                ));
            }
            if !patterns.insert(decl.pattern.as_str()) {
                diags.push(Diagnostic::error(
                    "repositories",
                    format!("{kind} signature {} duplicates an existing pattern", decl.id),
                ));
            }
        }
    }
    for am in &decls.antimal {
        for ips in &decls.ips {
            if !ips.pattern.is_empty() && am.pattern.contains(&ips.pattern) {
                diags.push(Diagnostic::warning(
                    "repositories",
                    format!(
                        "antimal pattern {} contains ips pattern {}; malware payloads may trip the IPS first",
                        am.id, ips.id
                    ),
                ));
            }
        }
    }
}

fn flattened_out_of_order(layers: &[LayerId]) -> bool {
    layers.windows(2).any(|w| w[0] >= w[1])
}

fn generated_vm_ids(scenario: &Scenario) -> BTreeSet<String> {
    let mut ids = BTreeSet::new();
    for lan in &scenario.lans {
        for client in 0..lan.clients {
            for vm in 1..=lan.vms_per_client {
                ids.insert(client_vm_name(&lan.name, client, vm));
            }
        }
    }
    ids
}

// ============================================================================
// Provisioning
// ============================================================================

pub fn client_vm_name(lan: &str, client: u32, vm: u32) -> String {
    format!("{lan}-c{client:04}-vm{vm}")
}

pub fn attacker_vm_name(attacker_id: &str) -> String {
    format!("{attacker_id}-vm1")
}

fn derive_token(seed: u64, vm_name: &str) -> Token {
    Token(format!("tok-{}", digest::opaque_credential(seed, "fw-token", vm_name)))
}

fn derive_key(seed: u64, vm_name: &str) -> KeySecret {
    KeySecret(format!("key-{}", digest::opaque_credential(seed, "vault-key", vm_name)))
}

/// One LAN client VM with the credentials it legitimately holds.
#[derive(Debug, Clone, PartialEq)]
pub struct ProvisionedVm {
    pub identity: VmIdentity,
    pub token: Token,
    pub key: KeySecret,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProvisionedClient {
    pub index: u32,
    pub vms: Vec<ProvisionedVm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProvisionedLan {
    pub name: String,
    pub tenant: TenantId,
    pub arrival_rate: f64,
    pub profile: BTreeMap<String, String>,
    pub clients: Vec<ProvisionedClient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProvisionedAttacker {
    pub id: String,
    pub profile: AttackerProfile,
}

/// A scenario materialized: repositories loaded and rosters derived.
#[derive(Debug, Clone, PartialEq)]
pub struct Provisioned {
    pub repos: RepositorySet,
    pub lans: Vec<ProvisionedLan>,
    pub attackers: Vec<ProvisionedAttacker>,
    pub vm_tenants: BTreeMap<VmId, TenantId>,
}

/// Materializes the declaration: populates all five repositories and
/// derives the deterministic VM rosters. Attackers are provisioned per
/// their archetype: non-external agents get registered credentials and
/// their own (distinct) metadata profiles, mirroring adversaries that
/// subscribed like genuine tenants.
pub fn provision(scenario: &Scenario) -> Result<Provisioned, LoadError> {
    let seed = scenario.meta.seed;
    let mut repos = RepositorySet::empty(scenario.parameters.challenge_size);
    let mut vm_tenants: BTreeMap<VmId, TenantId> = BTreeMap::new();
    let mut lans = Vec::with_capacity(scenario.lans.len());

    for lan in &scenario.lans {
        let tenant = TenantId::new(lan.name.clone());
        repos.meta.insert_profile(tenant.clone(), lan.profile.clone())?;
        let mut clients = Vec::with_capacity(lan.clients as usize);
        for client_index in 0..lan.clients {
            let mut vms = Vec::with_capacity(lan.vms_per_client as usize);
            for vm_index in 1..=lan.vms_per_client {
                let vm_name = client_vm_name(&lan.name, client_index, vm_index);
                let identity = VmIdentity::new(vm_name.clone(), lan.name.clone(), 1)
                    .map_err(|e| LoadError::Declaration(e.to_string()))?;
                let token = derive_token(seed, &vm_name);
                let key = derive_key(seed, &vm_name);
                repos.fw.insert_entry(identity.vm_id.clone(), token.clone())?;
                repos.vault.insert_key(identity.vm_id.clone(), key.clone())?;
                vm_tenants.insert(identity.vm_id.clone(), tenant.clone());
                vms.push(ProvisionedVm { identity, token, key });
            }
            clients.push(ProvisionedClient { index: client_index, vms });
        }
        lans.push(ProvisionedLan {
            name: lan.name.clone(),
            tenant,
            arrival_rate: lan.arrival_rate,
            profile: lan.profile.clone(),
            clients,
        });
    }

    for decl in &scenario.repositories.ips {
        repos.ips.insert_pattern(PatternId(decl.id.clone()), decl.pattern.clone().into_bytes())?;
    }
    for decl in &scenario.repositories.antimal {
        repos
            .antimal
            .insert_pattern(PatternId(decl.id.clone()), decl.pattern.clone().into_bytes())?;
    }

    let mut attackers = Vec::with_capacity(scenario.attackers.len());
    for decl in &scenario.attackers {
        let vm_name = attacker_vm_name(&decl.id);
        let source_vm = VmIdentity::new(vm_name.clone(), decl.id.clone(), 1)
            .map_err(|e| LoadError::Declaration(e.to_string()))?;
        let target = VmId::new(decl.target.clone());
        let victim_tenant = vm_tenants
            .get(&target)
            .cloned()
            .ok_or_else(|| LoadError::UnknownTargetVm {
                attacker: decl.id.clone(),
                target: target.clone(),
            })?;

        if decl.grant_credentials.unwrap_or_else(|| decl.archetype.requires_firewall_grant()) {
            repos.fw.insert_entry(source_vm.vm_id.clone(), derive_token(seed, &vm_name))?;
        }
        if decl.archetype.requires_meta_profile() {
            // distinct answers over the victim's field catalogue: the
            // adversary mimics the form but cannot know the real values
            let own_profile: BTreeMap<String, String> = repos
                .meta
                .profile(&victim_tenant)
                .expect("victim tenant was provisioned above")
                .keys()
                .map(|field| (field.clone(), format!("adv:{}:{}", decl.id, field)))
                .collect();
            repos.meta.insert_profile(TenantId::new(decl.id.clone()), own_profile)?;
        }
        if decl.grant_vault_key.unwrap_or(decl.archetype != Archetype::External) {
            repos.vault.insert_key(source_vm.vm_id.clone(), derive_key(seed, &vm_name))?;
        }
        vm_tenants.insert(source_vm.vm_id.clone(), TenantId::new(decl.id.clone()));

        let claimed_tenant =
            (decl.archetype == Archetype::Masquerade).then(|| victim_tenant.clone());
        let profile = AttackerProfile::new(
            decl.archetype,
            source_vm,
            target,
            claimed_tenant,
            decl.intensity,
        )
        .map_err(|e| LoadError::Attacker { attacker: decl.id.clone(), reason: e.to_string() })?;
        attackers.push(ProvisionedAttacker { id: decl.id.clone(), profile });
    }

    Ok(Provisioned { repos, lans, attackers, vm_tenants })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_is_clean() {
        let scenario = Scenario::reference();
        let diags = validate(&scenario);
        assert!(diags.is_empty(), "unexpected diagnostics: {diags:?}");
    }

    #[test]
    fn reference_loads_seven_profiles() {
        // four LAN tenants plus three (non-external) adversaries
        let provisioned = provision(&Scenario::reference()).unwrap();
        assert_eq!(provisioned.repos.meta.len(), 7);
    }

    #[test]
    fn firewall_entries_scale_with_clients() {
        let mut scenario = Scenario::reference();
        scenario.lans.truncate(1);
        scenario.attackers.clear();
        let provisioned = provision(&scenario).unwrap();
        assert_eq!(provisioned.repos.fw.len(), 1500); // 500 clients x 3 VMs
    }

    #[test]
    fn empty_scenario_is_a_warning_with_empty_stores() {
        let scenario = Scenario {
            meta: ScenarioMeta { name: "empty".into(), seed: 0, duration: 1.0, bin_width: 1.0 },
            lans: vec![],
            attackers: vec![],
            hierarchy: HierarchyDecl::default_three_tier(),
            repositories: SignatureDecls::default(),
            latencies: Latencies::default(),
            parameters: Parameters::default(),
        };
        let diags = validate(&scenario);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].severity, Severity::Warning);
        let provisioned = provision(&scenario).unwrap();
        assert!(provisioned.repos.fw.is_empty());
        assert!(provisioned.repos.meta.is_empty());
    }

    #[test]
    fn unknown_target_vm_is_a_load_error_and_a_diagnostic() {
        let mut scenario = Scenario::reference();
        scenario.attackers[0].target = "nowhere-vm9".into();
        assert!(matches!(
            provision(&scenario),
            Err(LoadError::UnknownTargetVm { .. })
        ));
        assert!(validate(&scenario).iter().any(|d| d.area == "adversary"));
    }

    #[test]
    fn missing_grants_yield_adversary_diagnostics() {
        let mut scenario = Scenario::reference();
        scenario.attackers[1].grant_credentials = Some(false); // insider_exploit
        let diags = validate(&scenario);
        assert!(diags.iter().any(|d| {
            d.severity == Severity::Error && d.area == "adversary" && d.message.contains("adv2")
        }));
    }

    #[test]
    fn cross_tier_virtual_link_yields_topology_diagnostic() {
        let mut scenario = Scenario::reference();
        scenario.hierarchy.links = Some(vec![crate::topology::LinkDecl {
            kind: crate::topology::LinkKind::Virtual,
            a: "vm2".into(),
            b: "vm4".into(),
            via_control: None,
        }]);
        let diags = validate(&scenario);
        assert_eq!(
            diags.iter().filter(|d| d.area == "topology").count(),
            1,
            "{diags:?}"
        );
    }

    #[test]
    fn toml_round_trip_preserves_the_scenario() {
        let scenario = Scenario::reference();
        let text = scenario.to_toml_string();
        let (parsed, diags) = parse_scenario(&text, Strictness::Strict).unwrap();
        assert!(diags.is_empty(), "{diags:?}");
        assert_eq!(parsed, scenario);
    }

    #[test]
    fn unknown_keys_error_in_strict_and_warn_in_lenient() {
        let mut text = Scenario::reference().to_toml_string();
        text.push_str("\n[parameters]\nmystery_knob = 3\n");
        // duplicate [parameters] table is a parse error; use a fresh doc
        let text = text.replace("\n[parameters]\nmystery_knob = 3\n", "");
        let text = format!("{text}\nmystery_root_key = 1\n");
        let err = parse_scenario(&text, Strictness::Strict).unwrap_err();
        assert!(err.iter().any(|d| d.message.contains("mystery_root_key")));
        let (_, diags) = parse_scenario(&text, Strictness::Lenient).unwrap();
        assert!(diags.iter().any(|d| d.severity == Severity::Warning));
    }

    #[test]
    fn parse_failures_carry_line_numbers() {
        let text = "[meta]\nname = \"x\"\nduration = \"not-a-number\"\nbin_width = 1.0\n";
        let diags = parse_scenario(text, Strictness::Strict).unwrap_err();
        assert_eq!(diags[0].area, "parse");
        assert_eq!(diags[0].line, Some(3));
    }
}
