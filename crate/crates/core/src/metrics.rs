//! Time-binned counters: who initiated sessions, who got through, who
//! was stopped where, split by origin (tenant vs. attacker).
//!
//! Every counter of a session lands in the bin of its arrival time, so
//! the conservation identity `initiated = authorized + sum(denied)`
//! holds per bin, per prefix of bins, and for the whole run.

use serde::{Deserialize, Serialize};

use crate::model::LayerId;

/// Who a session belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Tenant,
    Attacker,
}

impl Origin {
    pub fn name(self) -> &'static str {
        match self {
            Origin::Tenant => "tenant",
            Origin::Attacker => "attacker",
        }
    }
}

/// Denials broken down by the layer that issued them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenialCounters {
    pub fw: u64,
    pub meta: u64,
    pub vault: u64,
    pub ips: u64,
    pub antimal: u64,
}

impl DenialCounters {
    pub fn increment(&mut self, layer: LayerId) {
        match layer {
            LayerId::Fw => self.fw += 1,
            LayerId::Meta => self.meta += 1,
            LayerId::Vault => self.vault += 1,
            LayerId::Ips => self.ips += 1,
            LayerId::Antimal => self.antimal += 1,
            LayerId::App => {}
        }
    }

    pub fn get(&self, layer: LayerId) -> u64 {
        match layer {
            LayerId::Fw => self.fw,
            LayerId::Meta => self.meta,
            LayerId::Vault => self.vault,
            LayerId::Ips => self.ips,
            LayerId::Antimal => self.antimal,
            LayerId::App => 0,
        }
    }

    pub fn sum(&self) -> u64 {
        self.fw + self.meta + self.vault + self.ips + self.antimal
    }

    fn absorb(&mut self, other: &DenialCounters) {
        self.fw += other.fw;
        self.meta += other.meta;
        self.vault += other.vault;
        self.ips += other.ips;
        self.antimal += other.antimal;
    }
}

/// Counters for one origin within one bin.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginCounters {
    pub sessions_initiated: u64,
    pub sessions_authorized: u64,
    pub sessions_denied_by_layer: DenialCounters,
    pub packets_dropped: u64,
    pub anomaly_reports: u64,
    pub app_accesses: u64,
}

impl OriginCounters {
    pub fn absorb(&mut self, other: &OriginCounters) {
        self.sessions_initiated += other.sessions_initiated;
        self.sessions_authorized += other.sessions_authorized;
        self.sessions_denied_by_layer.absorb(&other.sessions_denied_by_layer);
        self.packets_dropped += other.packets_dropped;
        self.anomaly_reports += other.anomaly_reports;
        self.app_accesses += other.app_accesses;
    }

    /// initiated = authorized + sum over denial layers.
    pub fn conservation_holds(&self) -> bool {
        self.sessions_initiated
            == self.sessions_authorized + self.sessions_denied_by_layer.sum()
    }
}

/// One time bin.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsBin {
    pub bin_start: f64,
    pub tenant: OriginCounters,
    pub attacker: OriginCounters,
}

impl MetricsBin {
    pub fn for_origin(&self, origin: Origin) -> &OriginCounters {
        match origin {
            Origin::Tenant => &self.tenant,
            Origin::Attacker => &self.attacker,
        }
    }

    pub fn for_origin_mut(&mut self, origin: Origin) -> &mut OriginCounters {
        match origin {
            Origin::Tenant => &mut self.tenant,
            Origin::Attacker => &mut self.attacker,
        }
    }
}

/// The full per-bin series for one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Bin width in seconds.
    pub bin_width: f64,
    pub bins: Vec<MetricsBin>,
}

impl Metrics {
    pub fn totals(&self, origin: Origin) -> OriginCounters {
        let mut total = OriginCounters::default();
        for bin in &self.bins {
            total.absorb(bin.for_origin(origin));
        }
        total
    }

    /// Conservation per bin (and therefore per prefix and in total).
    pub fn conservation_holds(&self) -> bool {
        self.bins.iter().all(|bin| {
            bin.tenant.conservation_holds() && bin.attacker.conservation_holds()
        })
    }
}
