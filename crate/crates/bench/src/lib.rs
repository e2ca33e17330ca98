//! Fixtures for the criterion benchmarks.

use std::collections::{BTreeMap, BTreeSet};

use micromano::catalog::{Demand, NsDescriptor, VnfDescriptor};
use micromano::hag::{AccessPathConfig, Technology};
use micromano::mano::{NodeCapacity, PlacementInput, SiteRoute, VimCandidate};
use micromano::sdn::{Fabric, SliceProfile, SlicedLink, SwitchConfig, TopologyConfig, TopologyLink};
use micromano::vim::{SiteClass, VimOp};
use micromano::ForwardMode;

/// A service chain of `n` VNFs linked head to tail, to be placed over
/// `vims` sites that all reach each other.
pub fn chain(n: usize, vims: usize) -> (NsDescriptor, BTreeMap<String, VnfDescriptor>, PlacementInput) {
    let ids: Vec<String> = (0..n).map(|i| format!("vnf{i}")).collect();
    let mut nsd = NsDescriptor::new("chain", ids.clone());
    for w in ids.windows(2) {
        nsd = nsd.with_link(format!("{}-{}", w[0], w[1]), (&w[0], "out"), (&w[1], "in"), 100.0, Some(4_000));
    }
    let vnfds = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let d = VnfDescriptor::new(id.as_str(), 2 + (i % 3) as u32, 2048, 20).with_ports(["in", "out"]);
            (id.clone(), d)
        })
        .collect();
    let sites: Vec<String> = (0..vims).map(|i| format!("vim{i}")).collect();
    let candidates = sites
        .iter()
        .enumerate()
        .map(|(i, id)| VimCandidate {
            vim_id: id.clone(),
            site_class: if i % 2 == 0 { SiteClass::Regional } else { SiteClass::Edge },
            permitted: VimOp::full_set().into_iter().collect::<BTreeSet<_>>(),
            used_vcpu: 0,
            total_vcpu: 16,
            nodes: (0..2)
                .map(|k| NodeCapacity {
                    node_id: format!("{id}-n{k}"),
                    free: Demand {
                        vcpu: 8,
                        memory_mb: 16_384,
                        storage_gb: 200,
                    },
                })
                .collect(),
        })
        .collect();
    let mut routes = BTreeMap::new();
    for (i, a) in sites.iter().enumerate() {
        for (j, b) in sites.iter().enumerate() {
            if i != j {
                let latency_us = 300 * (i.abs_diff(j) as u64) + 100;
                routes.insert(
                    (a.clone(), b.clone()),
                    SiteRoute {
                        switches: vec![format!("sw-{a}"), format!("sw-{b}")],
                        latency_us,
                    },
                );
            }
        }
    }
    (
        nsd,
        vnfds,
        PlacementInput {
            vims: candidates,
            routes,
        },
    )
}

/// Outbound side of a two-switch link carrying the given slices, tagged
/// 1, 2, ... in order.
pub fn sliced_link(capacity_mbps: f64, guarantees: &[f64]) -> SlicedLink {
    let cfg = TopologyConfig {
        switches: ["s1", "s2"]
            .map(|id| SwitchConfig {
                id: id.into(),
                mode: ForwardMode::MacLearning,
            })
            .to_vec(),
        links: vec![TopologyLink::new("l", "s1", "s2", 500, capacity_mbps)],
        endpoints: Vec::new(),
    };
    let mut f = Fabric::from_config(&cfg, 1).expect("valid topology");
    let path = ["s1".to_string(), "s2".to_string()];
    for (i, g) in guarantees.iter().enumerate() {
        f.apply_slice(
            SliceProfile {
                slice_id: format!("slice{i}"),
                guaranteed_mbps: *g,
                priority: 0,
                slice_tag: i as u32 + 1,
            },
            &path,
            0,
        )
        .expect("admissible");
    }
    f.sliced_link("l", "s1").expect("link exists")
}

pub fn access_paths() -> Vec<AccessPathConfig> {
    vec![
        AccessPathConfig::new("nr-3500", Technology::Nr3500Mhz, 6_000, 150.0),
        AccessPathConfig::new("nr-28", Technology::Nr28Ghz, 3_000, 400.0),
        AccessPathConfig::new("lte-700", Technology::Lte700Mhz, 25_000, 30.0),
        AccessPathConfig::new("wifi", Technology::Wifi, 8_000, 100.0),
    ]
}
