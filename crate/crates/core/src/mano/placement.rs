//! VNF placement across VIMs.
//!
//! VNFs are taken in first-fit-decreasing order of vCPU demand. For each one
//! the candidate VIMs are tried from lowest to highest vCPU utilization (ties
//! by id) and, inside a VIM, nodes by id. Colocation and link latency bounds
//! are checked as soon as both ends are assigned. When a branch dead-ends the
//! search backtracks, so a plan is found whenever one exists.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::{ColocationRule, Demand, NsDescriptor, PlacementClass, VnfDescriptor};
use crate::vim::{CapabilityReport, SiteClass, VimOp};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCapacity {
    pub node_id: String,
    pub free: Demand,
}

/// What the placer knows about one VIM.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VimCandidate {
    pub vim_id: String,
    pub site_class: SiteClass,
    pub permitted: BTreeSet<VimOp>,
    pub used_vcpu: u64,
    pub total_vcpu: u64,
    /// Sorted by node id.
    pub nodes: Vec<NodeCapacity>,
}

impl VimCandidate {
    pub fn from_report(report: &CapabilityReport) -> Self {
        let mut nodes: Vec<NodeCapacity> = report
            .nodes
            .iter()
            .map(|n| NodeCapacity {
                node_id: n.node_id.clone(),
                free: n.free,
            })
            .collect();
        nodes.sort_by(|a, b| a.node_id.cmp(&b.node_id));
        Self {
            vim_id: report.vim_id.clone(),
            site_class: report.site_class,
            permitted: report.permitted.clone(),
            used_vcpu: report.total.vcpu - report.free.vcpu,
            total_vcpu: report.total.vcpu,
            nodes,
        }
    }
}

/// Route between the attachment points of two VIMs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteRoute {
    pub switches: Vec<String>,
    pub latency_us: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementInput {
    pub vims: Vec<VimCandidate>,
    /// Keyed by ordered (from, to) VIM ids. A missing pair means unreachable;
    /// a VIM always reaches itself with zero latency.
    pub routes: BTreeMap<(String, String), SiteRoute>,
}

impl PlacementInput {
    pub fn route(&self, a: &str, b: &str) -> Option<SiteRoute> {
        if a == b {
            return Some(self.routes.get(&(a.to_string(), b.to_string())).cloned().unwrap_or(SiteRoute {
                switches: Vec::new(),
                latency_us: 0,
            }));
        }
        self.routes.get(&(a.to_string(), b.to_string())).cloned()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementConstraints {
    /// Overrides the descriptor's placement class.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub class: BTreeMap<String, PlacementClass>,
    /// VNFs that must land on a VIM exposing usage reporting.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub requires_usage: BTreeSet<String>,
    /// Tightens (never loosens) a link's latency bound.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub max_latency_us: BTreeMap<String, u64>,
    /// Forces a VNF onto a specific VIM.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pin: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub vim_id: String,
    pub node: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkRoute {
    pub switches: Vec<String>,
    pub latency_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementPlan {
    pub nsd_id: String,
    pub assignments: BTreeMap<String, Assignment>,
    pub link_routes: BTreeMap<String, LinkRoute>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "constraint", rename_all = "snake_case")]
pub enum Infeasible {
    UnknownVnf { vnf: String },
    NoCandidateVim { vnf: String, class: PlacementClass, requires_usage: bool },
    Capacity { vnf: String, demand: Demand },
    Colocation { a: String, b: String, rule: ColocationRule },
    NoRoute { link: String },
    Latency { link: String, max_latency_us: u64, route_latency_us: u64 },
}

impl fmt::Display for Infeasible {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Infeasible::UnknownVnf { vnf } => write!(f, "vnfd {vnf} is not in the catalogue"),
            Infeasible::NoCandidateVim {
                vnf,
                class,
                requires_usage,
            } => write!(
                f,
                "vnf {vnf}: no VIM matches placement class {class:?}{}",
                if *requires_usage { " with usage reporting" } else { "" }
            ),
            Infeasible::Capacity { vnf, demand } => write!(
                f,
                "vnf {vnf}: no node has capacity for {} vcpu, {} MB, {} GB",
                demand.vcpu, demand.memory_mb, demand.storage_gb
            ),
            Infeasible::Colocation { a, b, rule } => write!(f, "colocation {rule:?} between {a} and {b} cannot be met"),
            Infeasible::NoRoute { link } => write!(f, "link {link}: no route between the assigned sites"),
            Infeasible::Latency {
                link,
                max_latency_us,
                route_latency_us,
            } => write!(
                f,
                "link {link}: route latency {route_latency_us}us exceeds max_latency_us {max_latency_us}"
            ),
        }
    }
}

pub fn class_allows(class: PlacementClass, site: SiteClass) -> bool {
    match class {
        PlacementClass::Any => true,
        PlacementClass::Edge => site == SiteClass::Edge,
        PlacementClass::Regional => site == SiteClass::Regional,
    }
}

/// One VNF to place, already resolved against descriptors and constraints.
#[derive(Debug, Clone)]
pub(crate) struct VnfReq {
    pub id: String,
    pub demand: Demand,
    pub class: PlacementClass,
    pub requires_usage: bool,
    pub pin: Option<String>,
}

#[derive(Debug, Clone)]
pub(crate) struct LinkReq {
    pub id: String,
    pub a: usize,
    pub b: usize,
    pub max_latency_us: Option<u64>,
}

#[derive(Debug, Clone)]
pub(crate) struct ColocReq {
    pub a: usize,
    pub b: usize,
    pub rule: ColocationRule,
}

pub(crate) struct Problem {
    pub vnfs: Vec<VnfReq>,
    pub links: Vec<LinkReq>,
    pub coloc: Vec<ColocReq>,
}

impl Problem {
    pub fn build(
        nsd: &NsDescriptor,
        vnfds: &BTreeMap<String, VnfDescriptor>,
        constraints: &PlacementConstraints,
    ) -> Result<Self, Infeasible> {
        let mut vnfs = Vec::new();
        for id in &nsd.vnfs {
            let d = vnfds.get(id).ok_or_else(|| Infeasible::UnknownVnf { vnf: id.clone() })?;
            vnfs.push(VnfReq {
                id: id.clone(),
                demand: d.demand(),
                class: constraints.class.get(id).copied().unwrap_or(d.placement_class),
                requires_usage: constraints.requires_usage.contains(id),
                pin: constraints.pin.get(id).cloned(),
            });
        }
        let index = |v: &str| {
            nsd.vnfs
                .iter()
                .position(|x| x == v)
                .ok_or_else(|| Infeasible::UnknownVnf { vnf: v.to_string() })
        };
        let mut links = Vec::new();
        for l in &nsd.links {
            let bound = match (l.max_latency_us, constraints.max_latency_us.get(&l.id)) {
                (Some(a), Some(b)) => Some(a.min(*b)),
                (a, b) => a.or(b.copied()),
            };
            links.push(LinkReq {
                id: l.id.clone(),
                a: index(&l.endpoints[0].vnf)?,
                b: index(&l.endpoints[1].vnf)?,
                max_latency_us: bound,
            });
        }
        let mut coloc = Vec::new();
        for c in &nsd.colocation {
            coloc.push(ColocReq {
                a: index(&c.a)?,
                b: index(&c.b)?,
                rule: c.rule,
            });
        }
        Ok(Self { vnfs, links, coloc })
    }
}

fn vim_permits(vim: &VimCandidate, req: &VnfReq) -> bool {
    class_allows(req.class, vim.site_class)
        && vim.permitted.contains(&VimOp::Allocate)
        && (!req.requires_usage || vim.permitted.contains(&VimOp::Usage))
        && req.pin.as_ref().is_none_or(|p| *p == vim.vim_id)
}

struct Search<'a> {
    input: &'a PlacementInput,
    problem: &'a Problem,
    order: Vec<usize>,
    candidates: Vec<Vec<usize>>,
    free: Vec<Vec<Demand>>,
    used_vcpu: Vec<u64>,
    assigned: Vec<Option<(usize, usize)>>,
    failure: Option<(usize, Infeasible)>,
}

impl Search<'_> {
    fn fail(&mut self, depth: usize, why: Infeasible) {
        if self.failure.as_ref().is_none_or(|(d, _)| depth > *d) {
            self.failure = Some((depth, why));
        }
    }

    /// Utilization order: lowest used/total first, then by vim id.
    fn by_utilization(&self, a: usize, b: usize) -> Ordering {
        let (va, vb) = (&self.input.vims[a], &self.input.vims[b]);
        let ua = u128::from(self.used_vcpu[a]) * u128::from(vb.total_vcpu.max(1));
        let ub = u128::from(self.used_vcpu[b]) * u128::from(va.total_vcpu.max(1));
        ua.cmp(&ub).then_with(|| va.vim_id.cmp(&vb.vim_id))
    }

    fn consistent(&self, v: usize, vim: usize) -> Result<(), Infeasible> {
        for c in &self.problem.coloc {
            let other = if c.a == v {
                c.b
            } else if c.b == v {
                c.a
            } else {
                continue;
            };
            if let Some((ov, _)) = self.assigned[other] {
                let same = ov == vim;
                let ok = match c.rule {
                    ColocationRule::SameVim => same,
                    ColocationRule::DifferentVim => !same,
                };
                if !ok {
                    return Err(Infeasible::Colocation {
                        a: self.problem.vnfs[c.a].id.clone(),
                        b: self.problem.vnfs[c.b].id.clone(),
                        rule: c.rule,
                    });
                }
            }
        }
        for l in &self.problem.links {
            let (from, to) = if l.a == v {
                (Some(vim), self.assigned[l.b].map(|x| x.0))
            } else if l.b == v {
                (self.assigned[l.a].map(|x| x.0), Some(vim))
            } else {
                continue;
            };
            let (Some(from), Some(to)) = (from, to) else { continue };
            let vims = &self.input.vims;
            let Some(route) = self.input.route(&vims[from].vim_id, &vims[to].vim_id) else {
                return Err(Infeasible::NoRoute { link: l.id.clone() });
            };
            if let Some(max) = l.max_latency_us {
                if route.latency_us > max {
                    return Err(Infeasible::Latency {
                        link: l.id.clone(),
                        max_latency_us: max,
                        route_latency_us: route.latency_us,
                    });
                }
            }
        }
        Ok(())
    }

    fn dfs(&mut self, depth: usize) -> bool {
        if depth == self.order.len() {
            return true;
        }
        let v = self.order[depth];
        let demand = self.problem.vnfs[v].demand;
        let mut vims = self.candidates[v].clone();
        vims.sort_by(|a, b| self.by_utilization(*a, *b));
        for vim in vims {
            if let Err(why) = self.consistent(v, vim) {
                self.fail(depth, why);
                continue;
            }
            // Nodes with identical free capacity are interchangeable.
            let mut tried: Vec<Demand> = Vec::new();
            let mut any_fit = false;
            for node in 0..self.free[vim].len() {
                let free = self.free[vim][node];
                if !demand.fits_in(&free) || tried.contains(&free) {
                    continue;
                }
                any_fit = true;
                tried.push(free);
                self.free[vim][node] = free - demand;
                self.used_vcpu[vim] += demand.vcpu;
                self.assigned[v] = Some((vim, node));
                if self.dfs(depth + 1) {
                    return true;
                }
                self.assigned[v] = None;
                self.used_vcpu[vim] -= demand.vcpu;
                self.free[vim][node] = free;
            }
            if !any_fit {
                self.fail(
                    depth,
                    Infeasible::Capacity {
                        vnf: self.problem.vnfs[v].id.clone(),
                        demand,
                    },
                );
            }
        }
        false
    }
}

pub(crate) fn solve(problem: &Problem, input: &PlacementInput) -> Result<Vec<(usize, usize)>, Infeasible> {
    let n = problem.vnfs.len();
    let mut candidates = Vec::with_capacity(n);
    for req in &problem.vnfs {
        let c: Vec<usize> = (0..input.vims.len())
            .filter(|&i| vim_permits(&input.vims[i], req))
            .collect();
        if c.is_empty() {
            return Err(Infeasible::NoCandidateVim {
                vnf: req.id.clone(),
                class: req.class,
                requires_usage: req.requires_usage,
            });
        }
        if !c
            .iter()
            .any(|&i| input.vims[i].nodes.iter().any(|nd| req.demand.fits_in(&nd.free)))
        {
            return Err(Infeasible::Capacity {
                vnf: req.id.clone(),
                demand: req.demand,
            });
        }
        candidates.push(c);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| problem.vnfs[*b].demand.vcpu.cmp(&problem.vnfs[*a].demand.vcpu));
    let mut search = Search {
        input,
        problem,
        order,
        candidates,
        free: input
            .vims
            .iter()
            .map(|v| v.nodes.iter().map(|nd| nd.free).collect())
            .collect(),
        used_vcpu: input.vims.iter().map(|v| v.used_vcpu).collect(),
        assigned: vec![None; n],
        failure: None,
    };
    if search.dfs(0) {
        Ok(search.assigned.into_iter().map(|a| a.expect("complete assignment")).collect())
    } else {
        Err(search
            .failure
            .map(|f| f.1)
            .unwrap_or_else(|| Infeasible::Capacity {
                vnf: problem.vnfs.first().map(|v| v.id.clone()).unwrap_or_default(),
                demand: Demand::default(),
            }))
    }
}

pub(crate) fn link_routes(
    problem: &Problem,
    input: &PlacementInput,
    vim_of: impl Fn(usize) -> String,
) -> BTreeMap<String, LinkRoute> {
    problem
        .links
        .iter()
        .filter_map(|l| {
            let r = input.route(&vim_of(l.a), &vim_of(l.b))?;
            Some((
                l.id.clone(),
                LinkRoute {
                    switches: r.switches,
                    latency_us: r.latency_us,
                },
            ))
        })
        .collect()
}

/// Place every VNF of `nsd`. Returns a plan that satisfies node capacities,
/// placement classes, capability requirements, colocation rules and link
/// latency bounds, or the constraint that could not be met.
pub fn place(
    nsd: &NsDescriptor,
    vnfds: &BTreeMap<String, VnfDescriptor>,
    input: &PlacementInput,
    constraints: &PlacementConstraints,
) -> Result<PlacementPlan, Infeasible> {
    let problem = Problem::build(nsd, vnfds, constraints)?;
    let assigned = solve(&problem, input)?;
    let vim_of = |i: usize| input.vims[assigned[i].0].vim_id.clone();
    let assignments = assigned
        .iter()
        .enumerate()
        .map(|(i, (vim, node))| {
            (
                problem.vnfs[i].id.clone(),
                Assignment {
                    vim_id: input.vims[*vim].vim_id.clone(),
                    node: input.vims[*vim].nodes[*node].node_id.clone(),
                },
            )
        })
        .collect();
    Ok(PlacementPlan {
        nsd_id: nsd.id.clone(),
        link_routes: link_routes(&problem, input, vim_of),
        assignments,
    })
}
