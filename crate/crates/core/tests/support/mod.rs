//! Generators and independent oracles shared by property and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use micromano::catalog::{
    Catalogue, Colocation, ColocationRule, Demand, LinkEndpoint, NsDescriptor, PlacementClass, VirtualLinkDescriptor,
    VnfDescriptor,
};
use micromano::mano::{
    Mano, ManoConfig, NodeCapacity, NsState, PlacementConstraints, PlacementInput, PlacementPlan, SiteRoute,
    VimCandidate,
};
use micromano::sdn::{ForwardMode, Frame, MacAddr, EndpointConfig, Fabric, SwitchConfig, TopologyConfig, TopologyLink};
use micromano::sim::ms;
use micromano::vim::{NodeConfig, SiteClass, VimConfig, VimOp, VmState};
use rand::seq::SliceRandom;
use rand::Rng;

pub struct PlacementCase {
    pub nsd: NsDescriptor,
    pub vnfds: BTreeMap<String, VnfDescriptor>,
    pub input: PlacementInput,
    pub constraints: PlacementConstraints,
}

fn pick_class(rng: &mut impl Rng) -> PlacementClass {
    match rng.gen_range(0..4) {
        0 => PlacementClass::Edge,
        1 => PlacementClass::Regional,
        _ => PlacementClass::Any,
    }
}

/// A random instance with at most 5 VNFs, 3 VIMs and 4 nodes per VIM.
pub fn random_case(rng: &mut impl Rng) -> PlacementCase {
    let n = rng.gen_range(1..=5);
    let vnf_ids: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let mut vnfds = BTreeMap::new();
    for id in &vnf_ids {
        let mut d = VnfDescriptor::new(
            id.as_str(),
            rng.gen_range(1..=8),
            rng.gen_range(1..=16) * 512,
            rng.gen_range(1..=10) * 10,
        )
        .with_class(pick_class(rng))
        .with_ports(["p0", "p1"]);
        d.name = id.clone();
        vnfds.insert(id.clone(), d);
    }
    let mut links = Vec::new();
    if n > 1 {
        for k in 0..rng.gen_range(0..n) {
            let a = rng.gen_range(0..n);
            let mut b = rng.gen_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            links.push(VirtualLinkDescriptor {
                id: format!("l{k}"),
                endpoints: [
                    LinkEndpoint {
                        vnf: vnf_ids[a].clone(),
                        cp: "p0".into(),
                    },
                    LinkEndpoint {
                        vnf: vnf_ids[b].clone(),
                        cp: "p1".into(),
                    },
                ],
                required_mbps: 10.0,
                max_latency_us: rng.gen_bool(0.5).then(|| rng.gen_range(100..=3000)),
            });
        }
    }
    let mut colocation = Vec::new();
    if n > 1 {
        for _ in 0..rng.gen_range(0..=2) {
            let pair: Vec<&String> = vnf_ids.choose_multiple(rng, 2).collect();
            colocation.push(Colocation {
                a: pair[0].clone(),
                b: pair[1].clone(),
                rule: if rng.gen_bool(0.5) {
                    ColocationRule::SameVim
                } else {
                    ColocationRule::DifferentVim
                },
            });
        }
    }
    let nsd = NsDescriptor {
        id: "ns".into(),
        name: String::new(),
        vnfs: vnf_ids.clone(),
        links,
        colocation,
    };

    let vim_ids = ["a", "b", "c"];
    let mut vims = Vec::new();
    for id in vim_ids {
        let nodes: Vec<NodeCapacity> = (0..rng.gen_range(1..=4))
            .map(|k| NodeCapacity {
                node_id: format!("{id}-n{k}"),
                free: Demand {
                    vcpu: rng.gen_range(0..=16),
                    memory_mb: rng.gen_range(0..=32) * 512,
                    storage_gb: rng.gen_range(0..=20) * 10,
                },
            })
            .collect();
        let mut permitted = VimOp::full_set();
        if rng.gen_bool(0.4) {
            permitted.remove(&VimOp::Usage);
        }
        if rng.gen_bool(0.1) {
            permitted.remove(&VimOp::Allocate);
        }
        let used: u64 = rng.gen_range(0..=8);
        vims.push(VimCandidate {
            vim_id: id.into(),
            site_class: if rng.gen_bool(0.5) {
                SiteClass::Edge
            } else {
                SiteClass::Regional
            },
            permitted,
            used_vcpu: used,
            total_vcpu: used + nodes.iter().map(|nd| nd.free.vcpu).sum::<u64>(),
            nodes,
        });
    }
    let mut routes = BTreeMap::new();
    for (i, a) in vim_ids.iter().enumerate() {
        for b in &vim_ids[i + 1..] {
            if rng.gen_bool(0.85) {
                let r = SiteRoute {
                    switches: vec![format!("sw-{a}"), format!("sw-{b}")],
                    latency_us: rng.gen_range(50..=4000),
                };
                let mut back = r.clone();
                back.switches.reverse();
                routes.insert((a.to_string(), b.to_string()), r);
                routes.insert((b.to_string(), a.to_string()), back);
            }
        }
    }

    let mut constraints = PlacementConstraints::default();
    for id in &vnf_ids {
        if rng.gen_bool(0.15) {
            constraints.pin.insert(id.clone(), vim_ids.choose(rng).unwrap().to_string());
        }
        if rng.gen_bool(0.2) {
            constraints.requires_usage.insert(id.clone());
        }
        if rng.gen_bool(0.1) {
            constraints.class.insert(id.clone(), pick_class(rng));
        }
    }
    for l in &nsd.links {
        if rng.gen_bool(0.2) {
            constraints.max_latency_us.insert(l.id.clone(), rng.gen_range(100..=3000));
        }
    }
    PlacementCase {
        nsd,
        vnfds,
        input: PlacementInput { vims, routes },
        constraints,
    }
}

fn class_of(case: &PlacementCase, vnf: &str) -> PlacementClass {
    case.constraints
        .class
        .get(vnf)
        .copied()
        .unwrap_or(case.vnfds[vnf].placement_class)
}

fn vim_ok(case: &PlacementCase, vnf: &str, vim: &VimCandidate) -> bool {
    let class_ok = match class_of(case, vnf) {
        PlacementClass::Any => true,
        PlacementClass::Edge => vim.site_class == SiteClass::Edge,
        PlacementClass::Regional => vim.site_class == SiteClass::Regional,
    };
    class_ok
        && vim.permitted.contains(&VimOp::Allocate)
        && (!case.constraints.requires_usage.contains(vnf) || vim.permitted.contains(&VimOp::Usage))
        && case.constraints.pin.get(vnf).is_none_or(|p| p == &vim.vim_id)
}

fn route_latency(case: &PlacementCase, a: &str, b: &str) -> Option<u64> {
    if a == b {
        return Some(case.input.routes.get(&(a.into(), b.into())).map_or(0, |r| r.latency_us));
    }
    case.input.routes.get(&(a.into(), b.into())).map(|r| r.latency_us)
}

fn link_bound(case: &PlacementCase, l: &VirtualLinkDescriptor) -> Option<u64> {
    match (l.max_latency_us, case.constraints.max_latency_us.get(&l.id)) {
        (Some(x), Some(y)) => Some(x.min(*y)),
        (x, y) => x.or(y.copied()),
    }
}

fn fits(d: Demand, free: Demand) -> bool {
    d.vcpu <= free.vcpu && d.memory_mb <= free.memory_mb && d.storage_gb <= free.storage_gb
}

fn demand_of(v: &VnfDescriptor) -> Demand {
    Demand {
        vcpu: u64::from(v.vcpu),
        memory_mb: v.memory_mb,
        storage_gb: v.storage_gb,
    }
}

/// VIM-level constraints for a complete VNF -> VIM assignment.
fn vim_assignment_ok(case: &PlacementCase, vims: &[&str]) -> bool {
    let idx = |v: &str| case.nsd.vnfs.iter().position(|x| x == v).unwrap();
    for c in &case.nsd.colocation {
        let same = vims[idx(&c.a)] == vims[idx(&c.b)];
        if same != (c.rule == ColocationRule::SameVim) {
            return false;
        }
    }
    for l in &case.nsd.links {
        let (a, b) = (vims[idx(&l.endpoints[0].vnf)], vims[idx(&l.endpoints[1].vnf)]);
        match route_latency(case, a, b) {
            None => return false,
            Some(lat) if link_bound(case, l).is_some_and(|m| lat > m) => return false,
            _ => {}
        }
    }
    true
}

/// Whether `items` can be packed into nodes with the given free capacity.
fn packable(items: &[Demand], free: &mut [Demand]) -> bool {
    let Some((first, rest)) = items.split_first() else {
        return true;
    };
    for i in 0..free.len() {
        if fits(*first, free[i]) {
            let keep = free[i];
            free[i] = Demand {
                vcpu: keep.vcpu - first.vcpu,
                memory_mb: keep.memory_mb - first.memory_mb,
                storage_gb: keep.storage_gb - first.storage_gb,
            };
            let ok = packable(rest, free);
            free[i] = keep;
            if ok {
                return true;
            }
        }
    }
    false
}

/// Exhaustive search over every VNF -> VIM assignment, then every node
/// packing within each VIM.
pub fn exhaustive_feasible(case: &PlacementCase) -> bool {
    let n = case.nsd.vnfs.len();
    let vims = &case.input.vims;
    let total = vims.len().pow(n as u32);
    'outer: for code in 0..total {
        let mut c = code;
        let mut choice = Vec::with_capacity(n);
        for _ in 0..n {
            choice.push(c % vims.len());
            c /= vims.len();
        }
        for (i, v) in case.nsd.vnfs.iter().enumerate() {
            if !vim_ok(case, v, &vims[choice[i]]) {
                continue 'outer;
            }
        }
        let ids: Vec<&str> = choice.iter().map(|&k| vims[k].vim_id.as_str()).collect();
        if !vim_assignment_ok(case, &ids) {
            continue;
        }
        for (k, vim) in vims.iter().enumerate() {
            let items: Vec<Demand> = case
                .nsd
                .vnfs
                .iter()
                .enumerate()
                .filter(|(i, _)| choice[*i] == k)
                .map(|(_, v)| demand_of(&case.vnfds[v]))
                .collect();
            let mut free: Vec<Demand> = vim.nodes.iter().map(|nd| nd.free).collect();
            if !packable(&items, &mut free) {
                continue 'outer;
            }
        }
        return true;
    }
    false
}

/// Check a plan against every constraint, independently of the placer.
pub fn check_plan(case: &PlacementCase, plan: &PlacementPlan) -> Result<(), String> {
    let mut load: BTreeMap<(&str, &str), Demand> = BTreeMap::new();
    let mut vim_of = Vec::new();
    for v in &case.nsd.vnfs {
        let a = plan.assignments.get(v).ok_or(format!("{v} unassigned"))?;
        let vim = case
            .input
            .vims
            .iter()
            .find(|x| x.vim_id == a.vim_id)
            .ok_or(format!("{v} on unknown vim {}", a.vim_id))?;
        if !vim.nodes.iter().any(|nd| nd.node_id == a.node) {
            return Err(format!("{v} on unknown node {}", a.node));
        }
        if !vim_ok(case, v, vim) {
            return Err(format!("{v} not allowed on {}", a.vim_id));
        }
        let d = demand_of(&case.vnfds[v]);
        let e = load.entry((a.vim_id.as_str(), a.node.as_str())).or_default();
        *e = Demand {
            vcpu: e.vcpu + d.vcpu,
            memory_mb: e.memory_mb + d.memory_mb,
            storage_gb: e.storage_gb + d.storage_gb,
        };
        vim_of.push(a.vim_id.as_str());
    }
    for ((vim, node), used) in &load {
        let free = case
            .input
            .vims
            .iter()
            .find(|x| x.vim_id == *vim)
            .and_then(|x| x.nodes.iter().find(|nd| nd.node_id == *node))
            .unwrap()
            .free;
        if !fits(*used, free) {
            return Err(format!("{vim}/{node} over capacity"));
        }
    }
    if !vim_assignment_ok(case, &vim_of) {
        return Err("colocation or link constraint violated".into());
    }
    for l in &case.nsd.links {
        let idx = |v: &str| case.nsd.vnfs.iter().position(|x| x == v).unwrap();
        let (a, b) = (vim_of[idx(&l.endpoints[0].vnf)], vim_of[idx(&l.endpoints[1].vnf)]);
        let r = plan.link_routes.get(&l.id).ok_or(format!("no route for {}", l.id))?;
        if Some(r.latency_us) != route_latency(case, a, b) {
            return Err(format!("route latency for {} does not match the site route", l.id));
        }
    }
    Ok(())
}

/// Small orchestrator with tight capacity so operations routinely fail.
pub fn fault_mano() -> Mano {
    let mut cat = Catalogue::new();
    cat.register_vnfd(VnfDescriptor::new("small", 1, 1024, 10).with_ports(["eth0"]))
        .unwrap();
    cat.register_vnfd(
        VnfDescriptor::new("medium", 2, 2048, 20)
            .with_ports(["eth0"])
            .with_primitive("configure"),
    )
    .unwrap();
    cat.register_vnfd(
        VnfDescriptor::new("large", 4, 4096, 40)
            .with_ports(["eth0"])
            .with_primitive("configure"),
    )
    .unwrap();
    cat.register_nsd(NsDescriptor::new("pair", ["small", "medium"]).with_link(
        "l",
        ("small", "eth0"),
        ("medium", "eth0"),
        50.0,
        None,
    ))
    .unwrap();
    cat.register_nsd(NsDescriptor::new("big", ["large"])).unwrap();
    cat.register_nsd(
        NsDescriptor::new("spread", ["small", "large"]).with_colocation("small", "large", ColocationRule::DifferentVim),
    )
    .unwrap();
    let topo = TopologyConfig {
        switches: vec![
            SwitchConfig {
                id: "core".into(),
                mode: ForwardMode::MacLearning,
            },
            SwitchConfig {
                id: "edge".into(),
                mode: ForwardMode::MacLearning,
            },
        ],
        links: vec![TopologyLink::new("core-edge", "core", "edge", 500, 1000.0)],
        endpoints: vec![],
    };
    let fabric = Fabric::from_config(&topo, 1).unwrap();
    let mut r1 = VimConfig::standard(
        "r1",
        SiteClass::Regional,
        vec![NodeConfig::new("r1-a", 4, 8192, 100), NodeConfig::new("r1-b", 4, 8192, 100)],
    );
    r1.switch = Some("core".into());
    let mut r2 = VimConfig::standard("r2", SiteClass::Regional, vec![NodeConfig::new("r2-a", 6, 8192, 100)]);
    r2.switch = Some("core".into());
    let mut e1 = VimConfig::restricted("e1", SiteClass::Edge, vec![NodeConfig::new("e1-a", 4, 8192, 100)]);
    e1.switch = Some("edge".into());
    Mano::new(cat, &[r1, r2, e1], fabric, ManoConfig::default()).unwrap()
}

/// Invariants that must hold at every step.
pub fn check_conservation(mano: &Mano) -> Result<(), String> {
    for v in mano.vims().iter() {
        if !v.is_conserved() {
            return Err(format!("vim {} counters diverge from its VM records", v.report().vim_id));
        }
    }
    Ok(())
}

/// Invariants that must hold once nothing is in flight.
pub fn check_quiescent(mano: &Mano) -> Result<(), String> {
    check_conservation(mano)?;
    if mano.vim_used() != mano.running_demand() {
        return Err(format!(
            "vim usage {:?} differs from running demand {:?}",
            mano.vim_used(),
            mano.running_demand()
        ));
    }
    let live: BTreeSet<String> = mano
        .vims()
        .iter()
        .flat_map(|v| {
            v.vms()
                .filter(|vm| vm.state != VmState::Deleted)
                .map(|vm| vm.vm_id.clone())
                .collect::<Vec<_>>()
        })
        .collect();
    let mut owned = BTreeSet::new();
    for inst in mano.instances() {
        let vms: Vec<&String> = inst.replicas.iter().map(|r| &r.vm_id).collect();
        match inst.state {
            NsState::Running => {
                let nsd = mano.catalogue().nsd(&inst.nsd_id).unwrap();
                for vnf in &nsd.vnfs {
                    if inst.replicas_of(vnf) == 0 {
                        return Err(format!("{} running without {vnf}", inst.instance_id));
                    }
                }
                for vm in vms {
                    if !live.contains(vm) {
                        return Err(format!("{} references dead vm {vm}", inst.instance_id));
                    }
                    owned.insert(vm.clone());
                }
            }
            s if s.is_terminal() => {
                if let Some(vm) = vms.iter().find(|vm| live.contains(**vm)) {
                    return Err(format!("{} is {s:?} but vm {vm} is live", inst.instance_id));
                }
            }
            s => return Err(format!("{} still {s:?} after quiescing", inst.instance_id)),
        }
    }
    if let Some(vm) = live.difference(&owned).next() {
        return Err(format!("vm {vm} is live without a running owner"));
    }
    Ok(())
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SequenceSummary {
    pub running: usize,
    pub failed: usize,
    pub terminated: usize,
}

/// One seeded sequence of lifecycle operations with injected VIM and
/// primitive failures, checked after every step and once quiescent.
pub fn fault_sequence(seed: u64, ops: usize) -> Result<SequenceSummary, String> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut mano = fault_mano();
    let nsds = ["pair", "big", "spread"];
    let vims = ["r1", "r2", "e1"];
    let mut now = 0;
    for step in 0..ops {
        now += ms(rng.gen_range(0..=1500));
        mano.poll(now);
        let ids = mano.instance_ids();
        let pick = |rng: &mut rand_chacha::ChaCha8Rng| ids.choose(rng).cloned();
        match rng.gen_range(0..100) {
            0..=29 => {
                let mut c = PlacementConstraints::default();
                if rng.gen_bool(0.3) {
                    c.pin.insert("small".into(), vims.choose(&mut rng).unwrap().to_string());
                }
                let _ = mano.instantiate(nsds.choose(&mut rng).unwrap(), &c, now);
            }
            30..=44 => {
                if let Some(id) = pick(&mut rng) {
                    let vnf = mano.instance(&id).unwrap().plan.assignments.keys().cloned().collect::<Vec<_>>();
                    if let Some(v) = vnf.choose(&mut rng) {
                        let _ = mano.scale(&id, v, if rng.gen_bool(0.6) { 1 } else { -1 }, now);
                    }
                }
            }
            45..=59 => {
                if let Some(id) = pick(&mut rng) {
                    let vnf = mano.instance(&id).unwrap().plan.assignments.keys().cloned().collect::<Vec<_>>();
                    if let Some(v) = vnf.choose(&mut rng) {
                        let _ = mano.migrate(&id, v, vims.choose(&mut rng).unwrap(), now);
                    }
                }
            }
            60..=74 => {
                if let Some(id) = pick(&mut rng) {
                    let _ = mano.terminate(&id, now);
                }
            }
            75..=89 => {
                let op = *[VimOp::Allocate, VimOp::Release, VimOp::Connect, VimOp::Capabilities]
                    .choose(&mut rng)
                    .unwrap();
                let vim = vims.choose(&mut rng).unwrap();
                mano.vims_mut()
                    .get_mut(vim)
                    .unwrap()
                    .inject_fault(op, rng.gen_range(1..=2));
            }
            _ => {
                let vnfd = ["medium", "large"].choose(&mut rng).unwrap();
                mano.inject_primitive_fault(vnfd, "configure", 1);
            }
        }
        check_conservation(&mano).map_err(|e| format!("seed {seed} step {step}: {e}"))?;
    }
    mano.clear_faults();
    mano.run_until_idle(now + ms(1));
    check_quiescent(&mano).map_err(|e| format!("seed {seed} at end: {e}"))?;
    let mut sum = SequenceSummary::default();
    for i in mano.instances() {
        match i.state {
            NsState::Running => sum.running += 1,
            NsState::Failed => sum.failed += 1,
            NsState::Terminated => sum.terminated += 1,
            _ => {}
        }
    }
    Ok(sum)
}

/// Three switches in a line, two endpoints on each.
pub fn line3(mode: ForwardMode) -> Fabric {
    let sw = |id: &str| SwitchConfig { id: id.into(), mode };
    let ep = |id: &str, s: &str, mac: u64| EndpointConfig {
        id: id.into(),
        switch: s.into(),
        mac: Some(MacAddr::local(mac)),
        access: None,
    };
    let cfg = TopologyConfig {
        switches: vec![sw("s1"), sw("s2"), sw("s3")],
        links: vec![
            TopologyLink::new("l12", "s1", "s2", 100, 1000.0),
            TopologyLink::new("l23", "s2", "s3", 100, 1000.0),
        ],
        endpoints: vec![
            ep("a", "s1", 1),
            ep("b", "s1", 2),
            ep("c", "s2", 3),
            ep("d", "s2", 4),
            ep("e", "s3", 5),
            ep("f", "s3", 6),
        ],
    };
    Fabric::from_config(&cfg, 5).unwrap()
}

/// Install a destination rule for every endpoint MAC on every switch,
/// following shortest routes.
pub fn install_complete_tables(f: &mut Fabric) {
    let endpoints: Vec<(String, MacAddr, String, u32)> = f
        .endpoints()
        .map(|e| (e.id.clone(), e.mac, e.switch.clone(), e.port))
        .collect();
    let switches: Vec<String> = f.switches().map(|s| s.switch_id.clone()).collect();
    for sw in &switches {
        for (_, mac, home, port) in &endpoints {
            let out = if sw == home {
                *port
            } else {
                f.next_hop_port(sw, home).expect("connected")
            };
            f.install_flow(
                sw,
                10,
                micromano::sdn::FlowMatch::dst(*mac),
                micromano::sdn::FlowAction::Output { port: out },
                0,
            )
            .unwrap();
        }
    }
}

/// Every ordered (source endpoint, destination MAC) frame, including frames
/// addressed to the sender and to a MAC nobody owns.
pub fn all_frames(f: &Fabric) -> Vec<(String, Frame)> {
    let eps: Vec<(String, MacAddr)> = f.endpoints().map(|e| (e.id.clone(), e.mac)).collect();
    let mut dsts: Vec<MacAddr> = eps.iter().map(|e| e.1).collect();
    dsts.push(MacAddr::local(999));
    let mut out = Vec::new();
    for (id, src) in &eps {
        for d in &dsts {
            out.push((id.clone(), Frame::new(*src, *d)));
        }
    }
    out
}
