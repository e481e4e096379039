//! Containment properties over randomly generated chain hierarchies,
//! checked against an independent breadth-first-search oracle.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use icsim_core::model::{LayerId, VmId};
use icsim_core::topology::{
    build_hierarchy, ControlDecl, ControlId, HierarchyDecl, LinkKind, TierDecl, TierGraph,
};

/// Random linear-chain hierarchy: 2..=6 tiers, 1..=4 VMs each, one
/// control per boundary, default mesh/bipartite wiring.
fn random_chain(rng: &mut ChaCha8Rng) -> HierarchyDecl {
    let tier_count = rng.random_range(2..=6u32);
    let tiers = (1..=tier_count)
        .map(|tier| TierDecl {
            tier,
            vms: (0..rng.random_range(1..=4u32)).map(|k| format!("t{tier}v{k}")).collect(),
        })
        .collect();
    let layers = [LayerId::Fw, LayerId::Meta, LayerId::Vault, LayerId::Ips, LayerId::Antimal];
    let controls = (1..tier_count)
        .map(|boundary| ControlDecl {
            id: format!("ctl{boundary}"),
            from_tier: boundary,
            to_tier: None,
            gate_layers: Some(vec![layers[rng.random_range(0..layers.len())]]),
        })
        .collect();
    HierarchyDecl { tiers, controls, links: None }
}

/// Independent oracle: BFS over the full link graph (virtual and real),
/// returning the controls of real links along one shortest path.
fn bfs_controls(graph: &TierGraph, from: &VmId, to: &VmId) -> Option<Vec<ControlId>> {
    let mut adjacency: BTreeMap<&VmId, Vec<(&VmId, Option<&ControlId>)>> = BTreeMap::new();
    for link in graph.links() {
        let (a, b) = (&link.endpoints.0, &link.endpoints.1);
        adjacency.entry(a).or_default().push((b, link.via_control.as_ref()));
        adjacency.entry(b).or_default().push((a, link.via_control.as_ref()));
    }
    let mut predecessor: BTreeMap<&VmId, (&VmId, Option<&ControlId>)> = BTreeMap::new();
    let mut seen: BTreeSet<&VmId> = BTreeSet::from([from]);
    let mut queue = VecDeque::from([from]);
    while let Some(current) = queue.pop_front() {
        if current == to {
            let mut controls = Vec::new();
            let mut at = current;
            while at != from {
                let (prev, control) = predecessor[at];
                if let Some(control) = control {
                    controls.push(control.clone());
                }
                at = prev;
            }
            controls.reverse();
            return Some(controls);
        }
        for (next, control) in adjacency.get(current).into_iter().flatten() {
            if seen.insert(next) {
                predecessor.insert(next, (current, *control));
                queue.push_back(next);
            }
        }
    }
    None
}

#[test]
fn containment_holds_on_the_reference_hierarchy() {
    let graph = build_hierarchy(&HierarchyDecl::default_three_tier()).unwrap();
    let vms: Vec<_> = graph.vms().cloned().collect();
    for a in &vms {
        for b in &vms {
            if b.tier > a.tier {
                assert!(
                    !graph.reachable_without_control(&a.vm_id, &b.vm_id).unwrap(),
                    "{} must not reach {} over virtual links",
                    a.vm_id,
                    b.vm_id
                );
                let controls = graph.required_controls(&a.vm_id, &b.vm_id).unwrap();
                assert_eq!(controls.len() as u32, b.tier - a.tier);
            }
        }
    }
}

#[test]
fn containment_holds_on_1000_random_chains() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..1000 {
        let decl = random_chain(&mut rng);
        let graph = build_hierarchy(&decl).unwrap_or_else(|e| panic!("case {case}: {e}"));
        graph.check_invariants().unwrap();

        let vms: Vec<_> = graph.vms().cloned().collect();
        for a in &vms {
            for b in &vms {
                let same_tier = a.tier == b.tier;
                let reachable =
                    graph.reachable_without_control(&a.vm_id, &b.vm_id).unwrap();
                // virtual reachability is exactly same-tier membership
                // (intra-tier meshes are complete by default)
                assert_eq!(reachable, same_tier, "case {case}: {} -> {}", a.vm_id, b.vm_id);

                if b.tier > a.tier {
                    let controls = graph.required_controls(&a.vm_id, &b.vm_id).unwrap();
                    assert_eq!(controls.len() as u32, b.tier - a.tier, "case {case}");
                }
            }
        }
    }
}

#[test]
fn required_controls_match_the_bfs_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..200 {
        let decl = random_chain(&mut rng);
        let graph = build_hierarchy(&decl).unwrap();
        let vms: Vec<_> = graph.vms().cloned().collect();
        let bottom = vms.iter().filter(|v| v.tier == 1).min_by_key(|v| &v.vm_id).unwrap();
        let top_tier = vms.iter().map(|v| v.tier).max().unwrap();
        let top = vms.iter().filter(|v| v.tier == top_tier).min_by_key(|v| &v.vm_id).unwrap();

        let expected = bfs_controls(&graph, &bottom.vm_id, &top.vm_id)
            .unwrap_or_else(|| panic!("case {case}: oracle found no path"));
        let got: Vec<ControlId> = graph
            .required_controls(&bottom.vm_id, &top.vm_id)
            .unwrap()
            .iter()
            .map(|c| c.control_id.clone())
            .collect();
        assert_eq!(got, expected, "case {case}");
        assert_eq!(got.len() as u32, top_tier - 1, "case {case}: chain gap");
    }
}

#[test]
fn five_tier_chain_crosses_four_controls() {
    let decl = HierarchyDecl {
        tiers: (1..=5)
            .map(|tier| TierDecl { tier, vms: vec![format!("vm-t{tier}")] })
            .collect(),
        controls: (1..5)
            .map(|boundary| ControlDecl {
                id: format!("ctl{boundary}"),
                from_tier: boundary,
                to_tier: None,
                gate_layers: Some(vec![LayerId::Meta]),
            })
            .collect(),
        links: None,
    };
    let graph = build_hierarchy(&decl).unwrap();
    let controls = graph
        .required_controls(&VmId::new("vm-t1"), &VmId::new("vm-t5"))
        .unwrap();
    let ids: Vec<&str> = controls.iter().map(|c| c.control_id.0.as_str()).collect();
    assert_eq!(ids, vec!["ctl1", "ctl2", "ctl3", "ctl4"]);
    assert_eq!(
        bfs_controls(&graph, &VmId::new("vm-t1"), &VmId::new("vm-t5")).unwrap().len(),
        4
    );
}

#[test]
fn explicit_sparse_links_still_validate_or_error_cleanly() {
    // a chain wired with single explicit links instead of the bipartite
    // default: still valid, and the BFS oracle agrees
    let decl = HierarchyDecl {
        tiers: vec![
            TierDecl { tier: 1, vms: vec!["a1".into(), "a2".into()] },
            TierDecl { tier: 2, vms: vec!["b1".into()] },
        ],
        controls: vec![ControlDecl {
            id: "ctl1".into(),
            from_tier: 1,
            to_tier: None,
            gate_layers: Some(vec![LayerId::Meta]),
        }],
        links: Some(vec![
            icsim_core::topology::LinkDecl {
                kind: LinkKind::Virtual,
                a: "a1".into(),
                b: "a2".into(),
                via_control: None,
            },
            icsim_core::topology::LinkDecl {
                kind: LinkKind::Real,
                a: "a1".into(),
                b: "b1".into(),
                via_control: Some("ctl1".into()),
            },
        ]),
    };
    let graph = build_hierarchy(&decl).unwrap();
    assert!(!graph.reachable_without_control(&VmId::new("a2"), &VmId::new("b1")).unwrap());
    assert_eq!(
        graph.required_controls(&VmId::new("a2"), &VmId::new("b1")).unwrap().len(),
        1
    );
    assert_eq!(
        bfs_controls(&graph, &VmId::new("a1"), &VmId::new("b1")).unwrap(),
        vec![ControlId("ctl1".into())]
    );
}
