//! The tiered VM hierarchy: virtual links join VMs inside a tier, real
//! links cross tier boundaries and are each gated by a control node.
//!
//! Tiers form a linear chain (tier k connects only to tier k+1), so the
//! containment argument is structural: no sequence of virtual links can
//! raise a session's tier, and the only way up is through the controls.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LayerId, VmId, VmIdentity};

// ============================================================================
// Graph types
// ============================================================================

/// Identifier of a control node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlId(pub String);

impl fmt::Display for ControlId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Gate on the real link between two adjacent tiers, enforcing a subset
/// of the inspection layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlNode {
    pub control_id: ControlId,
    pub gate_layers: Vec<LayerId>,
    pub from_tier: u32,
    pub to_tier: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Virtual,
    Real,
}

/// Connection between two VMs. Virtual links stay inside a tier; real
/// links cross exactly one tier boundary through a control.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub kind: LinkKind,
    pub endpoints: (VmId, VmId),
    pub via_control: Option<ControlId>,
}

/// Validated hierarchy of VMs, controls, and links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TierGraph {
    vms: BTreeMap<VmId, VmIdentity>,
    controls: BTreeMap<ControlId, ControlNode>,
    links: Vec<Link>,
    virtual_adj: BTreeMap<VmId, BTreeSet<VmId>>,
}

impl TierGraph {
    pub fn vms(&self) -> impl Iterator<Item = &VmIdentity> {
        self.vms.values()
    }

    pub fn vm(&self, id: &VmId) -> Option<&VmIdentity> {
        self.vms.get(id)
    }

    pub fn controls(&self) -> impl Iterator<Item = &ControlNode> {
        self.controls.values()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn vm_count(&self) -> usize {
        self.vms.len()
    }

    pub fn control_count(&self) -> usize {
        self.controls.len()
    }

    pub fn max_tier(&self) -> u32 {
        self.vms.values().map(|v| v.tier).max().unwrap_or(0)
    }

    /// VMs of the highest tier; the application layer lives there.
    pub fn application_vms(&self) -> Vec<&VmIdentity> {
        let top = self.max_tier();
        self.vms.values().filter(|v| v.tier == top).collect()
    }

    /// The control gating the `tier -> tier+1` boundary, if declared.
    pub fn boundary_control(&self, from_tier: u32) -> Option<&ControlNode> {
        self.controls.values().find(|c| c.from_tier == from_tier)
    }

    /// True iff `to` can be reached from `from` using only virtual links.
    /// This is the attacker's lateral-movement question: the answer is
    /// always no once a tier boundary is in the way.
    pub fn reachable_without_control(&self, from: &VmId, to: &VmId) -> Result<bool, TopologyError> {
        if !self.vms.contains_key(from) {
            return Err(TopologyError::UnknownVm(from.clone()));
        }
        if !self.vms.contains_key(to) {
            return Err(TopologyError::UnknownVm(to.clone()));
        }
        if from == to {
            return Ok(true); // empty path
        }
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([from.clone()]);
        seen.insert(from.clone());
        while let Some(current) = queue.pop_front() {
            if let Some(neighbors) = self.virtual_adj.get(&current) {
                for next in neighbors {
                    if next == to {
                        return Ok(true);
                    }
                    if seen.insert(next.clone()) {
                        queue.push_back(next.clone());
                    }
                }
            }
        }
        Ok(false)
    }

    /// The controls a session must satisfy to move from `from` to `to`,
    /// in ascending boundary order. Same tier means no controls at all.
    pub fn required_controls(
        &self,
        from: &VmId,
        to: &VmId,
    ) -> Result<Vec<&ControlNode>, TopologyError> {
        let from_vm =
            self.vms.get(from).ok_or_else(|| TopologyError::UnknownVm(from.clone()))?;
        let to_vm = self.vms.get(to).ok_or_else(|| TopologyError::UnknownVm(to.clone()))?;
        let (lo, hi) = if from_vm.tier <= to_vm.tier {
            (from_vm.tier, to_vm.tier)
        } else {
            (to_vm.tier, from_vm.tier)
        };
        let mut controls = Vec::new();
        for boundary in lo..hi {
            let control = self.boundary_control(boundary).ok_or(TopologyError::NoPath {
                from: from.clone(),
                to: to.clone(),
                missing_boundary: boundary,
            })?;
            // the boundary must actually be crossable
            let crossed = self.links.iter().any(|l| {
                l.kind == LinkKind::Real && l.via_control.as_ref() == Some(&control.control_id)
            });
            if !crossed {
                return Err(TopologyError::NoPath {
                    from: from.clone(),
                    to: to.clone(),
                    missing_boundary: boundary,
                });
            }
            controls.push(control);
        }
        Ok(controls)
    }

    /// Re-checks every structural invariant. `build_hierarchy` only
    /// returns graphs for which this passes.
    pub fn check_invariants(&self) -> Result<(), TopologyError> {
        for vm in self.vms.values() {
            if vm.tier < 1 {
                return Err(TopologyError::BadTier(vm.vm_id.clone(), vm.tier));
            }
        }
        for control in self.controls.values() {
            if control.to_tier != control.from_tier + 1 {
                return Err(TopologyError::BadControlSpan {
                    control: control.control_id.clone(),
                    from_tier: control.from_tier,
                    to_tier: control.to_tier,
                });
            }
            if control.gate_layers.is_empty() {
                return Err(TopologyError::EmptyGateLayers(control.control_id.clone()));
            }
        }
        for link in &self.links {
            let a = self
                .vms
                .get(&link.endpoints.0)
                .ok_or_else(|| TopologyError::UnknownVm(link.endpoints.0.clone()))?;
            let b = self
                .vms
                .get(&link.endpoints.1)
                .ok_or_else(|| TopologyError::UnknownVm(link.endpoints.1.clone()))?;
            match link.kind {
                LinkKind::Virtual => {
                    if a.tier != b.tier {
                        return Err(TopologyError::CrossTierVirtualLink {
                            a: a.vm_id.clone(),
                            b: b.vm_id.clone(),
                        });
                    }
                    if link.via_control.is_some() {
                        return Err(TopologyError::VirtualLinkWithControl {
                            a: a.vm_id.clone(),
                            b: b.vm_id.clone(),
                        });
                    }
                }
                LinkKind::Real => {
                    let control_id = link.via_control.as_ref().ok_or_else(|| {
                        TopologyError::InterTierLinkWithoutControl {
                            a: a.vm_id.clone(),
                            b: b.vm_id.clone(),
                        }
                    })?;
                    let control = self
                        .controls
                        .get(control_id)
                        .ok_or_else(|| TopologyError::UnknownControl(control_id.clone()))?;
                    let (lo, hi) = if a.tier <= b.tier { (a.tier, b.tier) } else { (b.tier, a.tier) };
                    if hi != lo + 1 || control.from_tier != lo {
                        return Err(TopologyError::LinkControlMismatch {
                            a: a.vm_id.clone(),
                            b: b.vm_id.clone(),
                            control: control_id.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

// ============================================================================
// Declarations
// ============================================================================

/// Scenario-facing hierarchy declaration. When `links` is omitted the
/// builder generates the default wiring: a complete virtual mesh inside
/// each tier plus complete real bipartite links across each boundary,
/// all via that boundary's control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyDecl {
    pub tiers: Vec<TierDecl>,
    #[serde(default)]
    pub controls: Vec<ControlDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<Vec<LinkDecl>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierDecl {
    pub tier: u32,
    pub vms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDecl {
    pub id: String,
    pub from_tier: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_tier: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate_layers: Option<Vec<LayerId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkDecl {
    pub kind: LinkKind,
    pub a: String,
    pub b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub via_control: Option<String>,
}

impl HierarchyDecl {
    /// The three-tier shape: tier 1 = {vm1, vm2, vm3} in a virtual mesh,
    /// control-a up to {vm4, vm5, vm6}, control-b up to the application
    /// VM. control-a gates metadata inspection; control-b gates the rest
    /// of the stack.
    pub fn default_three_tier() -> Self {
        HierarchyDecl {
            tiers: vec![
                TierDecl { tier: 1, vms: vec!["vm1".into(), "vm2".into(), "vm3".into()] },
                TierDecl { tier: 2, vms: vec!["vm4".into(), "vm5".into(), "vm6".into()] },
                TierDecl { tier: 3, vms: vec!["vm7".into()] },
            ],
            controls: vec![
                ControlDecl {
                    id: "control-a".into(),
                    from_tier: 1,
                    to_tier: None,
                    gate_layers: Some(vec![LayerId::Meta]),
                },
                ControlDecl {
                    id: "control-b".into(),
                    from_tier: 2,
                    to_tier: None,
                    gate_layers: Some(vec![LayerId::Vault, LayerId::Ips, LayerId::Antimal]),
                },
            ],
            links: None,
        }
    }
}

/// Builds and validates a [`TierGraph`] from its declaration.
pub fn build_hierarchy(decl: &HierarchyDecl) -> Result<TierGraph, TopologyError> {
    let mut vms: BTreeMap<VmId, VmIdentity> = BTreeMap::new();
    let mut tier_members: BTreeMap<u32, Vec<VmId>> = BTreeMap::new();
    for tier_decl in &decl.tiers {
        if tier_decl.tier < 1 {
            return Err(TopologyError::BadTierIndex(tier_decl.tier));
        }
        if tier_members.contains_key(&tier_decl.tier) {
            return Err(TopologyError::DuplicateTier(tier_decl.tier));
        }
        let members = tier_members.entry(tier_decl.tier).or_default();
        for name in &tier_decl.vms {
            let vm_id = VmId::new(name.clone());
            if vms.contains_key(&vm_id) {
                return Err(TopologyError::DuplicateVm(vm_id));
            }
            let identity = VmIdentity::new(name.clone(), "cloud", tier_decl.tier)
                .map_err(|_| TopologyError::UnknownVm(vm_id.clone()))?;
            vms.insert(vm_id.clone(), identity);
            members.push(vm_id);
        }
    }

    let boundaries: Vec<u32> = {
        let tiers: Vec<u32> = tier_members.keys().copied().collect();
        tiers.iter().copied().filter(|t| tier_members.contains_key(&(t + 1))).collect()
    };

    let mut controls: BTreeMap<ControlId, ControlNode> = BTreeMap::new();
    let mut boundary_of: BTreeMap<u32, ControlId> = BTreeMap::new();
    for (idx, cd) in decl.controls.iter().enumerate() {
        let control_id = ControlId(cd.id.clone());
        if controls.contains_key(&control_id) {
            return Err(TopologyError::DuplicateControl(control_id));
        }
        let to_tier = cd.to_tier.unwrap_or(cd.from_tier + 1);
        if to_tier != cd.from_tier + 1 {
            return Err(TopologyError::BadControlSpan {
                control: control_id,
                from_tier: cd.from_tier,
                to_tier,
            });
        }
        if !tier_members.contains_key(&cd.from_tier) || !tier_members.contains_key(&to_tier) {
            return Err(TopologyError::ControlOnMissingTier {
                control: control_id,
                from_tier: cd.from_tier,
            });
        }
        if boundary_of.contains_key(&cd.from_tier) {
            return Err(TopologyError::MultipleBoundaryControls { from_tier: cd.from_tier });
        }
        let gate_layers = match &cd.gate_layers {
            Some(layers) => layers.clone(),
            None => default_gate_layers(idx, decl.controls.len()),
        };
        if gate_layers.is_empty() || gate_layers.iter().any(|l| !l.is_inspection()) {
            return Err(TopologyError::EmptyGateLayers(control_id));
        }
        boundary_of.insert(cd.from_tier, control_id.clone());
        controls.insert(
            control_id.clone(),
            ControlNode { control_id, gate_layers, from_tier: cd.from_tier, to_tier },
        );
    }

    let links = match &decl.links {
        Some(link_decls) => {
            let mut links = Vec::with_capacity(link_decls.len());
            for ld in link_decls {
                links.push(Link {
                    kind: ld.kind,
                    endpoints: (VmId::new(ld.a.clone()), VmId::new(ld.b.clone())),
                    via_control: ld.via_control.clone().map(ControlId),
                });
            }
            links
        }
        None => {
            let mut links = Vec::new();
            // full virtual mesh inside each tier
            for members in tier_members.values() {
                for (i, a) in members.iter().enumerate() {
                    for b in members.iter().skip(i + 1) {
                        links.push(Link {
                            kind: LinkKind::Virtual,
                            endpoints: (a.clone(), b.clone()),
                            via_control: None,
                        });
                    }
                }
            }
            // complete bipartite real links across each gated boundary
            for boundary in &boundaries {
                let Some(control_id) = boundary_of.get(boundary) else {
                    return Err(TopologyError::UngatedBoundary(*boundary));
                };
                for a in &tier_members[boundary] {
                    for b in &tier_members[&(boundary + 1)] {
                        links.push(Link {
                            kind: LinkKind::Real,
                            endpoints: (a.clone(), b.clone()),
                            via_control: Some(control_id.clone()),
                        });
                    }
                }
            }
            links
        }
    };

    let mut virtual_adj: BTreeMap<VmId, BTreeSet<VmId>> = BTreeMap::new();
    for link in &links {
        if link.kind == LinkKind::Virtual {
            let (a, b) = &link.endpoints;
            virtual_adj.entry(a.clone()).or_default().insert(b.clone());
            virtual_adj.entry(b.clone()).or_default().insert(a.clone());
        }
    }

    let graph = TierGraph { vms, controls, links, virtual_adj };
    graph.check_invariants()?;
    Ok(graph)
}

fn default_gate_layers(control_index: usize, control_count: usize) -> Vec<LayerId> {
    if control_count == 1 {
        vec![LayerId::Meta, LayerId::Vault, LayerId::Ips, LayerId::Antimal]
    } else if control_index == 0 {
        vec![LayerId::Meta]
    } else if control_index == control_count - 1 {
        vec![LayerId::Vault, LayerId::Ips, LayerId::Antimal]
    } else {
        vec![LayerId::Ips]
    }
}

// ============================================================================
// Errors
// ============================================================================

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("unknown vm {0}")]
    UnknownVm(VmId),
    #[error("unknown control {0}")]
    UnknownControl(ControlId),
    #[error("duplicate vm {0}")]
    DuplicateVm(VmId),
    #[error("duplicate control {0}")]
    DuplicateControl(ControlId),
    #[error("duplicate tier {0}")]
    DuplicateTier(u32),
    #[error("tier index must be >= 1, got {0}")]
    BadTierIndex(u32),
    #[error("vm {0} has invalid tier {1}")]
    BadTier(VmId, u32),
    #[error("virtual link {a} -- {b} crosses tiers")]
    CrossTierVirtualLink { a: VmId, b: VmId },
    #[error("virtual link {a} -- {b} must not reference a control")]
    VirtualLinkWithControl { a: VmId, b: VmId },
    #[error("inter-tier link {a} -- {b} lacks a control")]
    InterTierLinkWithoutControl { a: VmId, b: VmId },
    #[error("link {a} -- {b} does not match the span of control {control}")]
    LinkControlMismatch { a: VmId, b: VmId, control: ControlId },
    #[error("control {control} spans {from_tier} -> {to_tier}; controls gate adjacent tiers")]
    BadControlSpan { control: ControlId, from_tier: u32, to_tier: u32 },
    #[error("control {control} references missing tier {from_tier}")]
    ControlOnMissingTier { control: ControlId, from_tier: u32 },
    #[error("tier boundary {from_tier} has more than one control")]
    MultipleBoundaryControls { from_tier: u32 },
    #[error("tier boundary {0} has no control")]
    UngatedBoundary(u32),
    #[error("control {0} has no gate layers")]
    EmptyGateLayers(ControlId),
    #[error("no gated path from {from} to {to}: boundary {missing_boundary} is not crossable")]
    NoPath { from: VmId, to: VmId, missing_boundary: u32 },
}
