//! Stable machine-readable emissions: canonical JSON (sorted keys), the
//! frozen CSV series schema, and the summary report document with its
//! NIST service-model tags.
//!
//! Byte-identical output for identical runs is a contract here, not a
//! nicety: the determinism checks compare these bytes directly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::metrics::{Metrics, Origin, OriginCounters};
use crate::model::LayerId;
use crate::scenario::Scenario;
use crate::sim::SessionRecord;

/// Frozen column order of the per-bin CSV series.
pub const CSV_HEADER: &str = "bin_start,origin,initiated,authorized,denied_fw,denied_meta,denied_vault,denied_ips,denied_antimal,dropped,anomalies,app_accesses";

/// Which NIST service model a control belongs to: firewalls verify VM
/// instance identity down in the infrastructure; the four packet
/// inspection controls live in the platform layer.
pub fn nist_service_model(layer: LayerId) -> &'static str {
    match layer {
        LayerId::Fw => "IaaS",
        LayerId::Meta | LayerId::Vault | LayerId::Ips | LayerId::Antimal => "PaaS",
        LayerId::App => "SaaS",
    }
}

/// Summary report: config echo, NIST mapping, per-origin totals, and the
/// full per-bin series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub config: Scenario,
    pub nist_mapping: BTreeMap<String, String>,
    pub summary: ReportSummary,
    pub series: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub tenant: OriginCounters,
    pub attacker: OriginCounters,
}

/// Builds the report for one run. Summary totals are the conservation
/// sums of the series.
pub fn build_report(scenario: &Scenario, metrics: &Metrics) -> ReportDocument {
    let nist_mapping = LayerId::INSPECTION
        .iter()
        .map(|layer| (layer.name().to_string(), nist_service_model(*layer).to_string()))
        .collect();
    ReportDocument {
        config: scenario.clone(),
        nist_mapping,
        summary: ReportSummary {
            tenant: metrics.totals(Origin::Tenant),
            attacker: metrics.totals(Origin::Attacker),
        },
        series: metrics.clone(),
    }
}

/// Canonical JSON: keys sorted, two-space indent, trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    // serde_json's default map is a BTreeMap, so converting through
    // Value sorts every object's keys
    let value = serde_json::to_value(value).expect("report types serialize infallibly");
    let mut bytes = serde_json::to_vec_pretty(&value).expect("value rendering is infallible");
    bytes.push(b'\n');
    bytes
}

pub fn metrics_json(metrics: &Metrics) -> Vec<u8> {
    to_canonical_json(metrics)
}

pub fn traces_json(records: &[SessionRecord]) -> Vec<u8> {
    to_canonical_json(&records)
}

pub fn report_json(report: &ReportDocument) -> Vec<u8> {
    to_canonical_json(report)
}

/// The per-bin series as CSV: one row per (bin, origin), both origins
/// always present, columns per [`CSV_HEADER`].
pub fn metrics_csv(metrics: &Metrics) -> Vec<u8> {
    let mut out = String::with_capacity(64 * (metrics.bins.len() * 2 + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for bin in &metrics.bins {
        for origin in [Origin::Tenant, Origin::Attacker] {
            let c = bin.for_origin(origin);
            let d = &c.sessions_denied_by_layer;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                bin.bin_start,
                origin.name(),
                c.sessions_initiated,
                c.sessions_authorized,
                d.fw,
                d.meta,
                d.vault,
                d.ips,
                d.antimal,
                c.packets_dropped,
                c.anomaly_reports,
                c.app_accesses,
            ));
        }
    }
    out.into_bytes()
}
