//! Resource and service orchestration: placement, network-service lifecycle,
//! configuration primitives, migration, scaling and flow coordination.

mod placement;

pub use placement::{
    class_allows, place, Assignment, Infeasible, LinkRoute, NodeCapacity, PlacementConstraints, PlacementInput,
    PlacementPlan, SiteRoute, VimCandidate,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalogue, Demand, NsDescriptor, VnfDescriptor};
use crate::sdn::{Fabric, FlowAction, FlowMatch, MacAddr, RuleId, SdnError, SliceProfile};
use crate::sim::{secs, SimTime};
use crate::vim::{AllocHints, Session, Vim, VimConfig, VimError, VimOp, VimRegistry, VmState};

use placement::{solve, Problem, VnfReq};

pub const STEERING_PRIORITY: i32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NsState {
    Created,
    Instantiating,
    Configuring,
    Running,
    Scaling,
    Migrating,
    Terminating,
    Terminated,
    Failed,
}

impl NsState {
    pub fn is_terminal(self) -> bool {
        matches!(self, NsState::Terminated | NsState::Failed)
    }

    pub fn can_transition(self, to: NsState) -> bool {
        use NsState::*;
        if self.is_terminal() {
            return false;
        }
        matches!(
            (self, to),
            (Created, Instantiating)
                | (Instantiating, Configuring)
                | (Configuring, Running)
                | (Running, Scaling | Migrating | Terminating)
                | (Scaling | Migrating, Running)
                | (Terminating, Terminated)
                | (_, Failed)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NsState::Created => "created",
            NsState::Instantiating => "instantiating",
            NsState::Configuring => "configuring",
            NsState::Running => "running",
            NsState::Scaling => "scaling",
            NsState::Migrating => "migrating",
            NsState::Terminating => "terminating",
            NsState::Terminated => "terminated",
            NsState::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VnfReplica {
    pub vnf_id: String,
    pub replica: u32,
    pub vim_id: String,
    pub node_id: String,
    pub vm_id: String,
    pub mac: MacAddr,
    /// Fabric endpoint id while attached.
    pub endpoint: Option<String>,
    pub rules: Vec<RuleId>,
    pub demand: Demand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub at: SimTime,
    pub instance: String,
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Pending {
    Instantiate,
    Migrate { replica: usize, new: VnfReplica },
    ScaleOut { new: Vec<VnfReplica> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NsInstance {
    pub instance_id: String,
    pub nsd_id: String,
    pub state: NsState,
    pub plan: PlacementPlan,
    pub constraints: PlacementConstraints,
    pub replicas: Vec<VnfReplica>,
    /// Virtual link id to installed slice id.
    pub slices: BTreeMap<String, String>,
    pub started_at: SimTime,
    pub running_since: Option<SimTime>,
    pub lifetime_s: Option<u64>,
    #[serde(skip)]
    pending: Option<Pending>,
}

impl NsInstance {
    pub fn vm_records(&self) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in &self.replicas {
            out.entry(r.vnf_id.clone()).or_default().push(r.vm_id.clone());
        }
        out
    }

    pub fn replicas_of(&self, vnf: &str) -> usize {
        self.replicas.iter().filter(|r| r.vnf_id == vnf).count()
    }

    pub fn is_busy(&self) -> bool {
        self.pending.is_some()
    }

    pub fn held_demand(&self) -> Demand {
        let pending: Demand = match &self.pending {
            Some(Pending::Migrate { new, .. }) => new.demand,
            Some(Pending::ScaleOut { new }) => new.iter().map(|r| r.demand).sum(),
            _ => Demand::default(),
        };
        self.replicas.iter().map(|r| r.demand).sum::<Demand>() + pending
    }

    fn deadline(&self) -> Option<SimTime> {
        Some(self.running_since? + secs(self.lifetime_s?))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManoError {
    #[error("unknown nsd {0}")]
    UnknownNsd(String),
    #[error("unknown instance {0}")]
    UnknownInstance(String),
    #[error("infeasible: {0}")]
    Infeasible(Infeasible),
    #[error(transparent)]
    Vim(#[from] VimError),
    #[error(transparent)]
    Sdn(#[from] SdnError),
    #[error("primitive {primitive} failed on {vnf}")]
    PrimitiveFailed { vnf: String, primitive: String },
    #[error("instance {instance} is {state}; {op} not allowed")]
    InvalidState {
        instance: String,
        state: &'static str,
        op: &'static str,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("instance {instance} failed: {reason}")]
    InstanceFailed { instance: String, reason: String },
}

impl From<Infeasible> for ManoError {
    fn from(v: Infeasible) -> Self {
        ManoError::Infeasible(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManoConfig {
    #[serde(default = "default_tenant")]
    pub tenant: String,
    /// Install per-VNF static steering flows on every switch.
    #[serde(default)]
    pub sdn_assist: bool,
    #[serde(default = "default_attempts")]
    pub max_cleanup_attempts: u32,
}

fn default_tenant() -> String {
    "micromano".into()
}

fn default_attempts() -> u32 {
    8
}

impl Default for ManoConfig {
    fn default() -> Self {
        Self {
            tenant: default_tenant(),
            sdn_assist: false,
            max_cleanup_attempts: default_attempts(),
        }
    }
}

/// Outcome of an asynchronous step completed by [`Mano::poll`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollOutcome {
    pub instance: String,
    pub state: NsState,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Mano {
    cfg: ManoConfig,
    catalogue: Catalogue,
    vims: VimRegistry,
    fabric: Fabric,
    credentials: BTreeMap<String, String>,
    sessions: BTreeMap<String, Session>,
    instances: BTreeMap<String, NsInstance>,
    audit: Vec<AuditEvent>,
    primitive_faults: BTreeMap<(String, String), u32>,
    deferred_releases: Vec<(String, String)>,
    next_instance: u64,
    next_tag: u32,
    next_slice_gen: u64,
    now: SimTime,
}

impl Mano {
    pub fn new(
        catalogue: Catalogue,
        vim_configs: &[VimConfig],
        fabric: Fabric,
        cfg: ManoConfig,
    ) -> Result<Self, ManoError> {
        let vims = VimRegistry::from_configs(vim_configs)?;
        for c in vim_configs {
            if let Some(sw) = &c.switch {
                if fabric.switch(sw).is_none() {
                    return Err(SdnError::UnknownSwitch(sw.clone()).into());
                }
            }
        }
        Ok(Self {
            cfg,
            catalogue,
            vims,
            fabric,
            credentials: vim_configs.iter().map(|c| (c.id.clone(), c.credential.clone())).collect(),
            sessions: BTreeMap::new(),
            instances: BTreeMap::new(),
            audit: Vec::new(),
            primitive_faults: BTreeMap::new(),
            deferred_releases: Vec::new(),
            next_instance: 1,
            next_tag: 100,
            next_slice_gen: 1,
            now: 0,
        })
    }

    pub fn config(&self) -> &ManoConfig {
        &self.cfg
    }

    pub fn catalogue(&self) -> &Catalogue {
        &self.catalogue
    }

    pub fn vims(&self) -> &VimRegistry {
        &self.vims
    }

    pub fn vims_mut(&mut self) -> &mut VimRegistry {
        &mut self.vims
    }

    pub fn fabric(&self) -> &Fabric {
        &self.fabric
    }

    pub fn fabric_mut(&mut self) -> &mut Fabric {
        &mut self.fabric
    }

    pub fn instance(&self, id: &str) -> Option<&NsInstance> {
        self.instances.get(id)
    }

    pub fn instances(&self) -> impl Iterator<Item = &NsInstance> {
        self.instances.values()
    }

    pub fn audit(&self) -> &[AuditEvent] {
        &self.audit
    }

    pub fn audit_for(&self, instance: &str) -> Vec<&AuditEvent> {
        self.audit.iter().filter(|e| e.instance == instance).collect()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn inject_primitive_fault(&mut self, vnfd: &str, primitive: &str, count: u32) {
        *self
            .primitive_faults
            .entry((vnfd.to_string(), primitive.to_string()))
            .or_default() += count;
    }

    pub fn clear_faults(&mut self) {
        self.primitive_faults.clear();
        for v in self.vims.iter_mut() {
            v.clear_faults();
        }
    }

    /// Σ used resources over every node of every VIM.
    pub fn vim_used(&self) -> Demand {
        self.vims
            .iter()
            .flat_map(|v| v.nodes().map(|n| n.used).collect::<Vec<_>>())
            .sum()
    }

    /// Σ demand of VMs belonging to running instances.
    pub fn running_demand(&self) -> Demand {
        self.instances
            .values()
            .filter(|i| i.state == NsState::Running)
            .map(NsInstance::held_demand)
            .sum()
    }

    /// Rule ids currently installed on behalf of an instance.
    pub fn installed_rules(&self, id: &str) -> Vec<RuleId> {
        let Some(inst) = self.instances.get(id) else {
            return Vec::new();
        };
        let mut out: Vec<RuleId> = inst.replicas.iter().flat_map(|r| r.rules.iter().copied()).collect();
        for sid in inst.slices.values() {
            if let Some(s) = self.fabric.slices().find(|s| &s.profile.slice_id == sid) {
                out.extend(s.rules.iter().map(|r| r.1));
            }
        }
        out.retain(|r| self.fabric.has_rule(*r));
        out
    }

    fn tick(&mut self, now: SimTime) {
        self.now = self.now.max(now);
        self.vims.advance_to(self.now);
    }

    fn log(&mut self, instance: &str, kind: &str, detail: impl Into<String>) {
        let seq = self.audit.len() as u64 + 1;
        self.audit.push(AuditEvent {
            seq,
            at: self.now,
            instance: instance.to_string(),
            kind: kind.to_string(),
            detail: detail.into(),
        });
    }

    fn set_state(&mut self, id: &str, to: NsState) {
        let inst = self.instances.get_mut(id).expect("instance exists");
        let from = inst.state;
        assert!(from.can_transition(to), "illegal transition {from:?} -> {to:?}");
        inst.state = to;
        if to == NsState::Running {
            inst.running_since.get_or_insert(self.now);
        }
        self.log(id, "state", format!("{}->{}", from.as_str(), to.as_str()));
    }

    fn session(&mut self, vim_id: &str, fresh: bool) -> Result<Session, VimError> {
        let now = self.now;
        let valid = self
            .sessions
            .get(vim_id)
            .filter(|s| !fresh && s.expires_at.is_none_or(|e| now < e));
        if let Some(s) = valid {
            return Ok(s.clone());
        }
        let cred = self
            .credentials
            .get(vim_id)
            .ok_or_else(|| VimError::UnknownVim(vim_id.into()))?
            .clone();
        let s = self.vims.connect(vim_id, &cred, now)?;
        self.sessions.insert(vim_id.to_string(), s.clone());
        Ok(s)
    }

    fn vim_call<T>(
        &mut self,
        vim_id: &str,
        mut f: impl FnMut(&mut Vim, &Session, SimTime) -> Result<T, VimError>,
    ) -> Result<T, VimError> {
        let now = self.now;
        let s = self.session(vim_id, false)?;
        match f(self.vims.get_mut(vim_id)?, &s, now) {
            Err(VimError::SessionExpired) => {
                let s = self.session(vim_id, true)?;
                f(self.vims.get_mut(vim_id)?, &s, now)
            }
            r => r,
        }
    }

    fn vnfds(&self) -> BTreeMap<String, VnfDescriptor> {
        self.catalogue.vnfds().map(|v| (v.id.clone(), v.clone())).collect()
    }

    fn vim_switch(&self, vim_id: &str) -> Option<String> {
        self.vims.get(vim_id).ok()?.config().switch.clone()
    }

    /// Capability reports of every VIM plus routes between their switches.
    pub fn placement_input(&mut self, now: SimTime) -> Result<PlacementInput, ManoError> {
        self.tick(now);
        let ids: Vec<String> = self.vims.iter().map(|v| v.id().to_string()).collect();
        let mut vims = Vec::new();
        for id in &ids {
            let report = self.vim_call(id, |v, s, t| v.capabilities(s, t))?;
            vims.push(VimCandidate::from_report(&report));
        }
        let mut routes = BTreeMap::new();
        for a in &ids {
            for b in &ids {
                let (Some(sa), Some(sb)) = (self.vim_switch(a), self.vim_switch(b)) else {
                    continue;
                };
                if let Some(r) = self.fabric.route(&sa, &sb) {
                    routes.insert(
                        (a.clone(), b.clone()),
                        SiteRoute {
                            switches: r.switches,
                            latency_us: r.latency_us,
                        },
                    );
                }
            }
        }
        Ok(PlacementInput { vims, routes })
    }

    pub fn place(
        &mut self,
        nsd_id: &str,
        constraints: &PlacementConstraints,
        now: SimTime,
    ) -> Result<PlacementPlan, ManoError> {
        let nsd = self
            .catalogue
            .nsd(nsd_id)
            .ok_or_else(|| ManoError::UnknownNsd(nsd_id.into()))?
            .clone();
        let input = self.placement_input(now)?;
        Ok(place(&nsd, &self.vnfds(), &input, constraints)?)
    }

    fn allocate_replica(
        &mut self,
        instance: &str,
        vnf_id: &str,
        replica: u32,
        vim_id: &str,
        node: &str,
    ) -> Result<VnfReplica, ManoError> {
        let vnfd = self
            .catalogue
            .vnfd(vnf_id)
            .ok_or_else(|| ManoError::Infeasible(Infeasible::UnknownVnf { vnf: vnf_id.into() }))?
            .clone();
        let tenant = self.cfg.tenant.clone();
        let hints = AllocHints {
            node: Some(node.to_string()),
            flavor: None,
        };
        let vm = self.vim_call(vim_id, |v, s, t| v.allocate(s, &vnfd, &tenant, &hints, t))?;
        self.log(instance, "allocate", format!("{vnf_id}#{replica} -> {vim_id}/{} as {}", vm.node_id, vm.vm_id));
        let mac = self.fabric.allocate_mac();
        Ok(VnfReplica {
            vnf_id: vnf_id.to_string(),
            replica,
            vim_id: vim_id.to_string(),
            node_id: vm.node_id,
            vm_id: vm.vm_id,
            mac,
            endpoint: None,
            rules: Vec::new(),
            demand: vm.demand,
        })
    }

    fn release_vm(&mut self, instance: &str, vim_id: &str, vm_id: &str) {
        let attempts = self.cfg.max_cleanup_attempts.max(1);
        for attempt in 1..=attempts {
            match self.vim_call(vim_id, |v, s, t| v.release(s, vm_id, t)) {
                Ok(()) => {
                    self.log(instance, "release", vm_id.to_string());
                    return;
                }
                Err(VimError::UnknownVm(_)) => return,
                Err(VimError::MigrationInProgress(_)) => {
                    let now = self.now;
                    let _ = self.vims.get_mut(vim_id).map(|v| v.set_migrating(vm_id, false, now));
                }
                Err(e) => {
                    self.log(instance, "cleanup_retry", format!("release {vm_id} attempt {attempt}: {e}"));
                }
            }
        }
        self.deferred_releases.push((vim_id.to_string(), vm_id.to_string()));
    }

    fn retry_deferred(&mut self) {
        let pending = std::mem::take(&mut self.deferred_releases);
        for (vim, vm) in pending {
            self.release_vm("", &vim, &vm);
        }
    }

    fn steering_installs(&self, mac: MacAddr, switch: &str, port: u32) -> Vec<(String, i32, FlowMatch, FlowAction)> {
        self.fabric
            .switches()
            .filter_map(|sw| {
                let out = if sw.switch_id == switch {
                    port
                } else {
                    self.fabric.next_hop_port(&sw.switch_id, switch)?
                };
                Some((
                    sw.switch_id.clone(),
                    STEERING_PRIORITY,
                    FlowMatch::dst(mac),
                    FlowAction::Output { port: out },
                ))
            })
            .collect()
    }

    /// Attach the replica's endpoint and, with SDN assist, install its
    /// steering rules. Returns the ids of the rules installed.
    fn attach_replica(&mut self, r: &mut VnfReplica) -> Result<(), ManoError> {
        let Some(switch) = self.vim_switch(&r.vim_id) else {
            return Ok(());
        };
        let port = self.fabric.attach(&r.vm_id, &switch, r.mac)?;
        r.endpoint = Some(r.vm_id.clone());
        if self.cfg.sdn_assist {
            let installs = self.steering_installs(r.mac, &switch, port);
            r.rules = self.fabric.apply_batch(&installs, &[], self.now)?;
        }
        Ok(())
    }

    fn detach_replica(&mut self, r: &mut VnfReplica) {
        let live: Vec<RuleId> = r.rules.drain(..).filter(|id| self.fabric.has_rule(*id)).collect();
        if !live.is_empty() {
            self.fabric.apply_batch(&[], &live, self.now).expect("live rules");
        }
        if let Some(ep) = r.endpoint.take() {
            let _ = self.fabric.detach(&ep);
        }
    }

    fn discard_replica(&mut self, instance: &str, mut r: VnfReplica) {
        self.detach_replica(&mut r);
        self.release_vm(instance, &r.vim_id, &r.vm_id);
    }

    fn run_primitives(&mut self, instance: &str, vnf_id: &str) -> Result<(), ManoError> {
        let prims = self
            .catalogue
            .vnfd(vnf_id)
            .map(|v| v.config_primitives.clone())
            .unwrap_or_default();
        for p in prims {
            let key = (vnf_id.to_string(), p.name.clone());
            if let Some(n) = self.primitive_faults.get_mut(&key) {
                if *n > 0 {
                    *n -= 1;
                    self.log(instance, "primitive_failed", format!("{vnf_id}:{}", p.name));
                    return Err(ManoError::PrimitiveFailed {
                        vnf: vnf_id.to_string(),
                        primitive: p.name,
                    });
                }
            }
            self.log(instance, "primitive", format!("{vnf_id}:{}", p.name));
        }
        Ok(())
    }

    fn fresh_slice_id(&mut self, instance: &str, link: &str) -> String {
        let g = self.next_slice_gen;
        self.next_slice_gen += 1;
        format!("{instance}/{link}#{g}")
    }

    /// Reserve a slice for one virtual link along `switches`.
    fn install_link_slice(
        &mut self,
        instance: &str,
        nsd: &NsDescriptor,
        link_id: &str,
        switches: &[String],
    ) -> Result<Option<String>, ManoError> {
        let link = nsd.links.iter().find(|l| l.id == link_id).expect("link in nsd");
        if switches.len() < 2 || link.required_mbps <= 0.0 {
            return Ok(None);
        }
        let slice_id = self.fresh_slice_id(instance, link_id);
        let tag = self.next_tag;
        self.next_tag += 1;
        let profile = SliceProfile {
            slice_id: slice_id.clone(),
            guaranteed_mbps: link.required_mbps,
            priority: 0,
            slice_tag: tag,
        };
        self.fabric.apply_slice(profile, switches, self.now)?;
        self.log(instance, "slice", format!("{link_id} via {}", switches.join(">")));
        Ok(Some(slice_id))
    }

    fn remove_slice(&mut self, slice_id: &str) {
        let _ = self.fabric.remove_slice(slice_id, self.now);
    }

    /// Release everything the instance holds, including VMs of a pending
    /// migration or scale-out.
    fn teardown(&mut self, id: &str) {
        let inst = self.instances.get_mut(id).expect("instance exists");
        let replicas = std::mem::take(&mut inst.replicas);
        let slices = std::mem::take(&mut inst.slices);
        let pending = inst.pending.take();
        for sid in slices.values() {
            self.remove_slice(sid);
        }
        match pending {
            Some(Pending::Migrate { replica, new }) => {
                if let Some(old) = replicas.get(replica) {
                    let now = self.now;
                    let _ = self.vims.get_mut(&old.vim_id).map(|v| v.set_migrating(&old.vm_id, false, now));
                }
                self.discard_replica(id, new);
            }
            Some(Pending::ScaleOut { new }) => {
                for r in new {
                    self.discard_replica(id, r);
                }
            }
            _ => {}
        }
        for r in replicas {
            self.discard_replica(id, r);
        }
    }

    fn fail_instance(&mut self, id: &str, reason: &str) {
        self.log(id, "rollback", reason.to_string());
        self.teardown(id);
        self.set_state(id, NsState::Failed);
    }

    /// Start instantiating `nsd_id`. Placement and VM allocation happen now;
    /// configuration completes in [`Mano::poll`] once every VM is active.
    pub fn instantiate(
        &mut self,
        nsd_id: &str,
        constraints: &PlacementConstraints,
        now: SimTime,
    ) -> Result<String, ManoError> {
        self.tick(now);
        let nsd = self
            .catalogue
            .nsd(nsd_id)
            .ok_or_else(|| ManoError::UnknownNsd(nsd_id.into()))?
            .clone();
        let plan = self.place(nsd_id, constraints, now)?;
        let id = format!("ns-{}", self.next_instance);
        self.next_instance += 1;
        let lifetime = nsd
            .vnfs
            .iter()
            .filter_map(|v| self.catalogue.vnfd(v).map(|d| d.lifetime_s))
            .filter(|l| *l > 0)
            .min();
        self.instances.insert(
            id.clone(),
            NsInstance {
                instance_id: id.clone(),
                nsd_id: nsd_id.to_string(),
                state: NsState::Created,
                plan: plan.clone(),
                constraints: constraints.clone(),
                replicas: Vec::new(),
                slices: BTreeMap::new(),
                started_at: self.now,
                running_since: None,
                lifetime_s: lifetime,
                pending: None,
            },
        );
        self.log(&id, "state", "->created");
        self.set_state(&id, NsState::Instantiating);
        for vnf in &nsd.vnfs {
            let a = &plan.assignments[vnf];
            match self.allocate_replica(&id, vnf, 0, &a.vim_id.clone(), &a.node.clone()) {
                Ok(r) => self.instances.get_mut(&id).expect("inserted").replicas.push(r),
                Err(e) => {
                    let reason = e.to_string();
                    self.fail_instance(&id, &reason);
                    return Err(ManoError::InstanceFailed { instance: id, reason });
                }
            }
        }
        self.instances.get_mut(&id).expect("inserted").pending = Some(Pending::Instantiate);
        Ok(id)
    }

    fn vm_active(&self, r: &VnfReplica) -> bool {
        self.vims
            .get(&r.vim_id)
            .ok()
            .and_then(|v| v.vm(&r.vm_id))
            .is_some_and(|vm| matches!(vm.state, VmState::Active | VmState::Migrating))
    }

    fn vm_ready_at(&self, r: &VnfReplica) -> Option<SimTime> {
        let vm = self.vims.get(&r.vim_id).ok()?.vm(&r.vm_id)?;
        (vm.state == VmState::Building).then_some(vm.active_at)
    }

    fn finish_instantiate(&mut self, id: &str) -> Result<(), ManoError> {
        self.set_state(id, NsState::Configuring);
        let nsd = self
            .catalogue
            .nsd(&self.instances[id].nsd_id)
            .expect("nsd registered")
            .clone();
        let mut replicas = std::mem::take(&mut self.instances.get_mut(id).expect("exists").replicas);
        let mut result = Ok(());
        for r in replicas.iter_mut() {
            self.log(id, "vm_active", r.vm_id.clone());
            if let Err(e) = self.attach_replica(r) {
                result = Err(e);
                break;
            }
        }
        self.instances.get_mut(id).expect("exists").replicas = replicas;
        result?;
        let rules = self
            .instances[id]
            .replicas
            .iter()
            .map(|r| r.rules.len())
            .sum::<usize>();
        self.log(id, "flows", format!("{rules} steering rules"));
        let routes = self.instances[id].plan.link_routes.clone();
        for link in &nsd.links {
            let switches = routes.get(&link.id).map(|r| r.switches.clone()).unwrap_or_default();
            if let Some(sid) = self.install_link_slice(id, &nsd, &link.id, &switches)? {
                self.instances
                    .get_mut(id)
                    .expect("exists")
                    .slices
                    .insert(link.id.clone(), sid);
            }
        }
        for vnf in &nsd.vnfs {
            self.run_primitives(id, vnf)?;
        }
        self.set_state(id, NsState::Running);
        Ok(())
    }

    /// Current VIM of each VNF's first replica.
    fn current_sites(&self, inst: &NsInstance) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for r in &inst.replicas {
            out.entry(r.vnf_id.clone()).or_insert_with(|| r.vim_id.clone());
        }
        out
    }

    fn require_state(&self, id: &str, want: NsState, op: &'static str) -> Result<(), ManoError> {
        let inst = self
            .instances
            .get(id)
            .ok_or_else(|| ManoError::UnknownInstance(id.into()))?;
        if inst.state != want || inst.pending.is_some() {
            return Err(ManoError::InvalidState {
                instance: id.into(),
                state: inst.state.as_str(),
                op,
            });
        }
        Ok(())
    }

    /// Start moving the first replica of `vnf_id` to `target_vim`.
    pub fn migrate(&mut self, id: &str, vnf_id: &str, target_vim: &str, now: SimTime) -> Result<(), ManoError> {
        self.tick(now);
        self.require_state(id, NsState::Running, "migrate")?;
        let inst = self.instances[id].clone();
        let idx = inst
            .replicas
            .iter()
            .position(|r| r.vnf_id == vnf_id)
            .ok_or_else(|| ManoError::InvalidRequest(format!("{vnf_id} is not part of {id}")))?;
        let source = inst.replicas[idx].clone();
        if source.vim_id == target_vim {
            return Err(ManoError::InvalidRequest(format!("{vnf_id} already runs on {target_vim}")));
        }
        self.vims.get(target_vim)?;
        let nsd = self.catalogue.nsd(&inst.nsd_id).expect("nsd registered").clone();
        let vnfd = self.catalogue.vnfd(vnf_id).expect("vnfd registered").clone();
        let input = self.placement_input(now)?;

        // Re-check this VNF's constraints with every other VNF where it is.
        let target = input
            .vims
            .iter()
            .find(|v| v.vim_id == target_vim)
            .expect("target has a report")
            .clone();
        let requires_usage = inst.constraints.requires_usage.contains(vnf_id);
        if !class_allows(vnfd.placement_class, target.site_class)
            || !target.permitted.contains(&VimOp::Allocate)
            || (requires_usage && !target.permitted.contains(&VimOp::Usage))
        {
            return Err(Infeasible::NoCandidateVim {
                vnf: vnf_id.into(),
                class: vnfd.placement_class,
                requires_usage,
            }
            .into());
        }
        let demand = vnfd.demand();
        let node = target
            .nodes
            .iter()
            .find(|n| demand.fits_in(&n.free))
            .ok_or_else(|| Infeasible::Capacity {
                vnf: vnf_id.into(),
                demand,
            })?
            .node_id
            .clone();
        let mut sites = self.current_sites(&inst);
        sites.insert(vnf_id.to_string(), target_vim.to_string());
        for c in &nsd.colocation {
            if c.a != vnf_id && c.b != vnf_id {
                continue;
            }
            let same = sites[&c.a] == sites[&c.b];
            let ok = match c.rule {
                crate::catalog::ColocationRule::SameVim => same,
                crate::catalog::ColocationRule::DifferentVim => !same,
            };
            if !ok {
                return Err(Infeasible::Colocation {
                    a: c.a.clone(),
                    b: c.b.clone(),
                    rule: c.rule,
                }
                .into());
            }
        }
        for l in nsd.links.iter().filter(|l| l.endpoints.iter().any(|e| e.vnf == vnf_id)) {
            let route = input
                .route(&sites[&l.endpoints[0].vnf], &sites[&l.endpoints[1].vnf])
                .ok_or_else(|| Infeasible::NoRoute { link: l.id.clone() })?;
            let bound = match (l.max_latency_us, inst.constraints.max_latency_us.get(&l.id)) {
                (Some(a), Some(b)) => Some(a.min(*b)),
                (a, b) => a.or(b.copied()),
            };
            if let Some(max) = bound {
                if route.latency_us > max {
                    return Err(Infeasible::Latency {
                        link: l.id.clone(),
                        max_latency_us: max,
                        route_latency_us: route.latency_us,
                    }
                    .into());
                }
            }
        }

        let new = match self.allocate_replica(id, vnf_id, source.replica, target_vim, &node) {
            Ok(r) => VnfReplica { mac: source.mac, ..r },
            Err(e) => {
                self.log(id, "migrate_failed", e.to_string());
                return Err(e);
            }
        };
        let now = self.now;
        self.vims
            .get_mut(&source.vim_id)?
            .set_migrating(&source.vm_id, true, now)?;
        self.set_state(id, NsState::Migrating);
        self.log(id, "migrate", format!("{vnf_id}: {} -> {target_vim}", source.vim_id));
        self.instances.get_mut(id).expect("exists").pending = Some(Pending::Migrate { replica: idx, new });
        Ok(())
    }

    fn abort_migration(&mut self, id: &str, old: &VnfReplica, new: VnfReplica, reason: &str) {
        self.log(id, "migrate_failed", reason.to_string());
        self.discard_replica(id, new);
        let now = self.now;
        let _ = self
            .vims
            .get_mut(&old.vim_id)
            .map(|v| v.set_migrating(&old.vm_id, false, now));
        self.set_state(id, NsState::Running);
    }

    fn finish_migration(&mut self, id: &str, idx: usize, mut new: VnfReplica) {
        let old = self.instances[id].replicas[idx].clone();
        self.log(id, "vm_active", new.vm_id.clone());
        if let Err(e) = self.attach_replica(&mut new) {
            return self.abort_migration(id, &old, new, &e.to_string());
        }
        if let Err(e) = self.run_primitives(id, &new.vnf_id) {
            return self.abort_migration(id, &old, new, &e.to_string());
        }

        // Re-route the slices of links that touch the migrated VNF.
        let inst = self.instances[id].clone();
        let nsd = self.catalogue.nsd(&inst.nsd_id).expect("nsd registered").clone();
        let mut sites = self.current_sites(&inst);
        sites.insert(new.vnf_id.clone(), new.vim_id.clone());
        let mut new_routes = BTreeMap::new();
        let mut moved_slices: Vec<(String, Option<String>, Option<String>)> = Vec::new();
        let touched: Vec<_> = nsd
            .links
            .iter()
            .filter(|l| idx == self.first_replica(&inst, &new.vnf_id) && l.endpoints.iter().any(|e| e.vnf == new.vnf_id))
            .cloned()
            .collect();
        for l in &touched {
            let (a, b) = (&sites[&l.endpoints[0].vnf], &sites[&l.endpoints[1].vnf]);
            let route = match (self.vim_switch(a), self.vim_switch(b)) {
                (Some(sa), Some(sb)) => self.fabric.route(&sa, &sb),
                _ => None,
            };
            let switches = route.as_ref().map(|r| r.switches.clone()).unwrap_or_default();
            let old_sid = inst.slices.get(&l.id).cloned();
            if let Some(s) = &old_sid {
                self.remove_slice(s);
            }
            match self.install_link_slice(id, &nsd, &l.id, &switches) {
                Ok(sid) => moved_slices.push((l.id.clone(), old_sid, sid)),
                Err(e) => {
                    // Put back what was there before and give up.
                    for (_, _, sid) in &moved_slices {
                        if let Some(s) = sid {
                            self.remove_slice(s);
                        }
                    }
                    let restore: Vec<_> = moved_slices
                        .iter()
                        .map(|m| m.0.clone())
                        .chain(std::iter::once(l.id.clone()))
                        .collect();
                    for link_id in restore {
                        if inst.slices.contains_key(&link_id) {
                            let sw = inst.plan.link_routes.get(&link_id).map(|r| r.switches.clone()).unwrap_or_default();
                            match self.install_link_slice(id, &nsd, &link_id, &sw) {
                                Ok(Some(sid)) => {
                                    self.instances.get_mut(id).expect("exists").slices.insert(link_id, sid);
                                }
                                _ => {
                                    self.instances.get_mut(id).expect("exists").slices.remove(&link_id);
                                }
                            }
                        }
                    }
                    return self.abort_migration(id, &old, new, &e.to_string());
                }
            }
            if let Some(r) = route {
                new_routes.insert(
                    l.id.clone(),
                    LinkRoute {
                        switches: r.switches,
                        latency_us: r.latency_us,
                    },
                );
            }
        }

        // Switch over: the old steering rules go in one atomic batch after the
        // new ones were installed at attach time.
        let mut old = old;
        self.detach_replica(&mut old);
        if let Some(ep) = &new.endpoint {
            let _ = self.fabric.announce(ep, self.now);
        }
        self.log(id, "switchover", format!("{} -> {}", old.vm_id, new.vm_id));
        let now = self.now;
        let _ = self
            .vims
            .get_mut(&old.vim_id)
            .map(|v| v.set_migrating(&old.vm_id, false, now));
        self.release_vm(id, &old.vim_id, &old.vm_id);

        let inst = self.instances.get_mut(id).expect("exists");
        for (link, _, sid) in moved_slices {
            match sid {
                Some(s) => {
                    inst.slices.insert(link, s);
                }
                None => {
                    inst.slices.remove(&link);
                }
            }
        }
        if new.replica == 0 {
            inst.plan.assignments.insert(
                new.vnf_id.clone(),
                Assignment {
                    vim_id: new.vim_id.clone(),
                    node: new.node_id.clone(),
                },
            );
        }
        inst.plan.link_routes.extend(new_routes);
        inst.replicas[idx] = new;
        self.set_state(id, NsState::Running);
    }

    fn first_replica(&self, inst: &NsInstance, vnf: &str) -> usize {
        inst.replicas.iter().position(|r| r.vnf_id == vnf).unwrap_or(usize::MAX)
    }

    /// Add or remove replicas of one VNF. Scale-in completes immediately;
    /// scale-out completes in [`Mano::poll`] once the new VMs are active.
    pub fn scale(&mut self, id: &str, vnf_id: &str, delta: i32, now: SimTime) -> Result<(), ManoError> {
        self.tick(now);
        self.require_state(id, NsState::Running, "scale")?;
        if delta == 0 {
            return Err(ManoError::InvalidRequest("replica_delta must be non-zero".into()));
        }
        let inst = self.instances[id].clone();
        let count = inst.replicas_of(vnf_id);
        if count == 0 {
            return Err(ManoError::InvalidRequest(format!("{vnf_id} is not part of {id}")));
        }
        if delta < 0 {
            let remove = delta.unsigned_abs() as usize;
            if count <= remove {
                return Err(ManoError::InvalidRequest(format!(
                    "{vnf_id} has {count} replicas; at least one must remain"
                )));
            }
            self.set_state(id, NsState::Scaling);
            for _ in 0..remove {
                let inst = self.instances.get_mut(id).expect("exists");
                let pos = inst
                    .replicas
                    .iter()
                    .rposition(|r| r.vnf_id == vnf_id)
                    .expect("replica exists");
                let r = inst.replicas.remove(pos);
                self.log(id, "scale", format!("remove {vnf_id}#{}", r.replica));
                self.discard_replica(id, r);
            }
            self.set_state(id, NsState::Running);
            return Ok(());
        }

        let vnfd = self.catalogue.vnfd(vnf_id).expect("vnfd registered").clone();
        let class = inst.constraints.class.get(vnf_id).copied().unwrap_or(vnfd.placement_class);
        let problem = Problem {
            vnfs: (0..delta)
                .map(|i| VnfReq {
                    id: format!("{vnf_id}+{i}"),
                    demand: vnfd.demand(),
                    class,
                    requires_usage: inst.constraints.requires_usage.contains(vnf_id),
                    pin: None,
                })
                .collect(),
            links: Vec::new(),
            coloc: Vec::new(),
        };
        let input = self.placement_input(now)?;
        let assigned = solve(&problem, &input)?;
        let next_replica = inst.replicas.iter().filter(|r| r.vnf_id == vnf_id).map(|r| r.replica).max().unwrap_or(0) + 1;
        let mut new = Vec::new();
        for (i, (vim, node)) in assigned.into_iter().enumerate() {
            let vim_id = input.vims[vim].vim_id.clone();
            let node_id = input.vims[vim].nodes[node].node_id.clone();
            match self.allocate_replica(id, vnf_id, next_replica + i as u32, &vim_id, &node_id) {
                Ok(r) => new.push(r),
                Err(e) => {
                    for r in new {
                        self.discard_replica(id, r);
                    }
                    self.log(id, "scale_failed", e.to_string());
                    return Err(e);
                }
            }
        }
        self.set_state(id, NsState::Scaling);
        self.log(id, "scale", format!("add {delta} x {vnf_id}"));
        self.instances.get_mut(id).expect("exists").pending = Some(Pending::ScaleOut { new });
        Ok(())
    }

    fn finish_scale_out(&mut self, id: &str, mut new: Vec<VnfReplica>) {
        let mut err = None;
        for r in new.iter_mut() {
            self.log(id, "vm_active", r.vm_id.clone());
            if let Err(e) = self.attach_replica(r) {
                err = Some(e);
                break;
            }
            if let Err(e) = self.run_primitives(id, &r.vnf_id) {
                err = Some(e);
                break;
            }
        }
        if let Some(e) = err {
            self.log(id, "scale_failed", e.to_string());
            for r in new {
                self.discard_replica(id, r);
            }
        } else {
            self.instances.get_mut(id).expect("exists").replicas.extend(new);
        }
        self.set_state(id, NsState::Running);
    }

    /// Release everything and end the instance. Terminal instances are left
    /// as they are.
    pub fn terminate(&mut self, id: &str, now: SimTime) -> Result<NsState, ManoError> {
        self.tick(now);
        let state = self
            .instances
            .get(id)
            .ok_or_else(|| ManoError::UnknownInstance(id.into()))?
            .state;
        match state {
            NsState::Terminated | NsState::Failed => {}
            NsState::Created | NsState::Instantiating | NsState::Configuring => {
                self.fail_instance(id, "terminated before running");
            }
            NsState::Terminating => {
                self.teardown(id);
                self.set_state(id, NsState::Terminated);
            }
            NsState::Running | NsState::Scaling | NsState::Migrating => {
                if state != NsState::Running {
                    self.log(id, "abort", format!("{} aborted by terminate", state.as_str()));
                    self.abort_pending(id);
                }
                self.set_state(id, NsState::Terminating);
                self.teardown(id);
                self.set_state(id, NsState::Terminated);
            }
        }
        Ok(self.instances[id].state)
    }

    fn abort_pending(&mut self, id: &str) {
        let pending = self.instances.get_mut(id).expect("exists").pending.take();
        match pending {
            Some(Pending::Migrate { replica, new }) => {
                let old = self.instances[id].replicas[replica].clone();
                self.abort_migration(id, &old, new, "aborted");
            }
            Some(Pending::ScaleOut { new }) => {
                for r in new {
                    self.discard_replica(id, r);
                }
                self.set_state(id, NsState::Running);
            }
            _ => {}
        }
    }

    /// Progress every instance to `now`: complete steps whose VMs became
    /// active, retry deferred cleanup, and reap instances past their lifetime.
    pub fn poll(&mut self, now: SimTime) -> Vec<PollOutcome> {
        self.tick(now);
        if !self.deferred_releases.is_empty() {
            self.retry_deferred();
        }
        let mut out = Vec::new();
        let ids: Vec<String> = self
            .instances
            .iter()
            .filter(|(_, i)| i.pending.is_some())
            .map(|(k, _)| k.clone())
            .collect();
        for id in ids {
            let inst = &self.instances[&id];
            let ready = match inst.pending.as_ref().expect("filtered") {
                Pending::Instantiate => inst.replicas.iter().all(|r| self.vm_active(r)),
                Pending::Migrate { new, .. } => self.vm_active(new),
                Pending::ScaleOut { new } => new.iter().all(|r| self.vm_active(r)),
            };
            if !ready {
                continue;
            }
            let pending = self.instances.get_mut(&id).expect("exists").pending.take();
            let mut error = None;
            match pending.expect("filtered") {
                Pending::Instantiate => {
                    if let Err(e) = self.finish_instantiate(&id) {
                        error = Some(e.to_string());
                        self.fail_instance(&id, &e.to_string());
                    }
                }
                Pending::Migrate { replica, new } => self.finish_migration(&id, replica, new),
                Pending::ScaleOut { new } => self.finish_scale_out(&id, new),
            }
            out.push(PollOutcome {
                state: self.instances[&id].state,
                instance: id,
                error,
            });
        }
        let expired: Vec<String> = self
            .instances
            .values()
            .filter(|i| i.state == NsState::Running && i.pending.is_none())
            .filter(|i| i.deadline().is_some_and(|d| d <= self.now))
            .map(|i| i.instance_id.clone())
            .collect();
        for id in expired {
            self.log(&id, "lifetime_expired", String::new());
            let state = self.terminate(&id, self.now).expect("instance exists");
            out.push(PollOutcome {
                instance: id,
                state,
                error: None,
            });
        }
        out
    }

    /// Earliest time at which [`Mano::poll`] has work to do.
    pub fn next_wakeup(&self) -> Option<SimTime> {
        let mut t = self.next_step_time();
        for i in self.instances.values().filter(|i| i.state == NsState::Running) {
            if let Some(d) = i.deadline() {
                t = Some(t.map_or(d, |x| x.min(d)));
            }
        }
        t
    }

    fn next_step_time(&self) -> Option<SimTime> {
        let mut t: Option<SimTime> = None;
        let mut take = |x: SimTime| t = Some(t.map_or(x, |y| y.min(x)));
        for i in self.instances.values() {
            let Some(p) = &i.pending else { continue };
            let waiting: Vec<&VnfReplica> = match p {
                Pending::Instantiate => i.replicas.iter().collect(),
                Pending::Migrate { new, .. } => vec![new],
                Pending::ScaleOut { new } => new.iter().collect(),
            };
            let ready = waiting.iter().filter_map(|r| self.vm_ready_at(r)).max();
            take(ready.unwrap_or(self.now).max(self.now));
        }
        if !self.deferred_releases.is_empty() {
            take(self.now + secs(1));
        }
        t
    }

    /// Poll until no lifecycle step is pending. Lifetime deadlines are not
    /// waited for. Returns the virtual time reached.
    pub fn run_until_idle(&mut self, mut now: SimTime) -> SimTime {
        self.tick(now);
        for _ in 0..1_000 {
            match self.next_step_time() {
                Some(t) => {
                    now = t.max(now);
                    self.poll(now);
                }
                None => break,
            }
        }
        now
    }

    /// Instantiate and wait for the outcome.
    pub fn instantiate_now(
        &mut self,
        nsd_id: &str,
        constraints: &PlacementConstraints,
        now: SimTime,
    ) -> Result<(String, SimTime), ManoError> {
        let id = self.instantiate(nsd_id, constraints, now)?;
        let t = self.run_until_idle(now);
        match self.instances[&id].state {
            NsState::Running => Ok((id, t)),
            _ => Err(ManoError::InstanceFailed {
                reason: self
                    .audit_for(&id)
                    .iter()
                    .rev()
                    .find(|e| e.kind == "rollback")
                    .map(|e| e.detail.clone())
                    .unwrap_or_default(),
                instance: id,
            }),
        }
    }

    /// Endpoint ids of the attached replicas of a VNF.
    pub fn endpoints_of(&self, id: &str, vnf: &str) -> Vec<String> {
        self.instances
            .get(id)
            .map(|i| {
                i.replicas
                    .iter()
                    .filter(|r| r.vnf_id == vnf)
                    .filter_map(|r| r.endpoint.clone())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Instance ids in creation order.
    pub fn instance_ids(&self) -> Vec<String> {
        let mut ids: Vec<(u64, String)> = self
            .instances
            .keys()
            .map(|k| (k.trim_start_matches("ns-").parse().unwrap_or(u64::MAX), k.clone()))
            .collect();
        ids.sort();
        ids.into_iter().map(|x| x.1).collect()
    }

    pub fn vims_with_vms(&self) -> BTreeSet<String> {
        self.vims
            .iter()
            .filter(|v| v.vms().any(|vm| vm.state != VmState::Deleted))
            .map(|v| v.id().to_string())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{PlacementClass, VnfDescriptor};
    use crate::sdn::{ForwardMode, SwitchConfig, TopologyConfig, TopologyLink};
    use crate::sim::ms;
    use crate::vim::{NodeConfig, SiteClass};

    fn fabric(mode: ForwardMode) -> Fabric {
        let cfg = TopologyConfig {
            switches: ["core", "edge", "region"]
                .iter()
                .map(|s| SwitchConfig {
                    id: s.to_string(),
                    mode,
                })
                .collect(),
            links: vec![
                TopologyLink::new("c-e", "core", "edge", 2_000, 1_000.0),
                TopologyLink::new("c-r", "core", "region", 8_000, 1_000.0),
            ],
            endpoints: vec![],
        };
        Fabric::from_config(&cfg, 3).unwrap()
    }

    fn mano_with(sdn_assist: bool, regional_vcpu: u64) -> Mano {
        let mut cat = Catalogue::new();
        cat.register_vnfd(
            VnfDescriptor::new("cache", 2, 1024, 10)
                .with_ports(["eth0"])
                .with_primitive("warm")
                .with_primitive("announce"),
        )
        .unwrap();
        cat.register_vnfd(VnfDescriptor::new("upf", 2, 512, 1).with_ports(["eth0"]).with_class(PlacementClass::Edge))
            .unwrap();
        cat.register_vnfd(
            VnfDescriptor::new("fw", 1, 256, 1)
                .with_ports(["eth0"])
                .with_primitive("a")
                .with_primitive("b")
                .with_primitive("c"),
        )
        .unwrap();
        cat.register_nsd(NsDescriptor::new("cache-ns", ["cache"])).unwrap();
        cat.register_nsd(
            NsDescriptor::new("chain", ["upf", "fw"]).with_link("l1", ("upf", "eth0"), ("fw", "eth0"), 100.0, None),
        )
        .unwrap();
        let vims = vec![
            VimConfig::standard("region", SiteClass::Regional, vec![NodeConfig::new("n1", regional_vcpu, 16384, 500)])
                .at_switch("region"),
            VimConfig::restricted("edge", SiteClass::Edge, vec![NodeConfig::new("n1", 4, 8192, 100)]).at_switch("edge"),
        ];
        let mode = if sdn_assist {
            ForwardMode::StaticFlows
        } else {
            ForwardMode::MacLearning
        };
        Mano::new(
            cat,
            &vims,
            fabric(mode),
            ManoConfig {
                sdn_assist,
                ..ManoConfig::default()
            },
        )
        .unwrap()
    }

    fn states(m: &Mano, id: &str) -> Vec<String> {
        m.audit_for(id)
            .into_iter()
            .filter(|e| e.kind == "state")
            .map(|e| e.detail.clone())
            .collect()
    }

    fn pin(vnf: &str, vim: &str) -> PlacementConstraints {
        PlacementConstraints {
            pin: [(vnf.to_string(), vim.to_string())].into(),
            ..Default::default()
        }
    }

    #[test]
    fn happy_path_walks_states_and_orders_audit() {
        let mut m = mano_with(false, 16);
        let id = m.instantiate("cache-ns", &PlacementConstraints::default(), 0).unwrap();
        assert_eq!(m.instance(&id).unwrap().state, NsState::Instantiating);
        assert_eq!(m.next_wakeup(), Some(ms(500)));
        m.poll(ms(499));
        assert_eq!(m.instance(&id).unwrap().state, NsState::Instantiating);
        m.poll(ms(500));
        assert_eq!(m.instance(&id).unwrap().state, NsState::Running);
        assert_eq!(
            states(&m, &id),
            ["->created", "created->instantiating", "instantiating->configuring", "configuring->running"]
        );
        let kinds: Vec<&str> = m.audit_for(&id).iter().map(|e| e.kind.as_str()).filter(|k| *k != "state").collect();
        let first = |k: &str| kinds.iter().position(|x| *x == k).unwrap();
        assert!(first("allocate") < first("flows") && first("flows") < first("primitive"));
        assert_eq!(m.vim_used(), m.running_demand());
    }

    #[test]
    fn quota_failure_rolls_back_first_vm() {
        let mut m = mano_with(false, 16);
        // placement sees room, but the edge VIM refuses the second allocation
        m.vims_mut().get_mut("edge").unwrap().inject_fault(VimOp::Allocate, 1);
        let err = m.instantiate("chain", &pin("fw", "region"), 0).unwrap_err();
        let ManoError::InstanceFailed { instance, .. } = err else { panic!("{err}") };
        assert_eq!(m.instance(&instance).unwrap().state, NsState::Failed);
        assert_eq!(m.vim_used(), Demand::default());
    }

    #[test]
    fn primitive_failure_releases_everything() {
        let mut m = mano_with(true, 16);
        let baseline_rules = m.fabric().installed_rules();
        m.inject_primitive_fault("fw", "b", 1);
        let err = m.instantiate_now("chain", &PlacementConstraints::default(), 0).unwrap_err();
        let ManoError::InstanceFailed { instance, reason } = err else { panic!() };
        assert!(reason.contains("primitive b failed"), "{reason}");
        assert_eq!(m.instance(&instance).unwrap().state, NsState::Failed);
        assert_eq!(m.vim_used(), Demand::default());
        assert_eq!(m.fabric().installed_rules(), baseline_rules);
        assert_eq!(m.fabric().slices().count(), 0);
        assert!(m.fabric().endpoints().next().is_none());
    }

    #[test]
    fn infeasible_placement_creates_nothing() {
        let mut m = mano_with(false, 16);
        let c = PlacementConstraints {
            class: [("cache".to_string(), PlacementClass::Edge)].into(),
            requires_usage: ["cache".to_string()].into(),
            ..Default::default()
        };
        let err = m.instantiate("cache-ns", &c, 0).unwrap_err();
        assert!(matches!(err, ManoError::Infeasible(Infeasible::NoCandidateVim { .. })), "{err}");
        assert_eq!(m.instances().count(), 0);
    }

    #[test]
    fn migration_to_edge_shortens_path_and_keeps_coverage() {
        let mut m = mano_with(true, 16);
        m.fabric_mut()
            .attach_endpoint(&crate::sdn::EndpointConfig {
                id: "ue".into(),
                switch: "edge".into(),
                mac: None,
                access: None,
            })
            .unwrap();
        let (id, t) = m.instantiate_now("cache-ns", &pin("cache", "region"), 0).unwrap();
        let before_ep = m.endpoints_of(&id, "cache")[0].clone();
        let before = m.fabric().path_latency("ue", &before_ep).unwrap();
        let log_start = m.fabric().rule_log().len();
        let mac = m.instance(&id).unwrap().replicas[0].mac;

        m.migrate(&id, "cache", "edge", t).unwrap();
        assert_eq!(m.instance(&id).unwrap().state, NsState::Migrating);
        let t = m.run_until_idle(t);
        assert_eq!(m.instance(&id).unwrap().state, NsState::Running);
        let after_ep = m.endpoints_of(&id, "cache")[0].clone();
        let after = m.fabric().path_latency("ue", &after_ep).unwrap();
        assert!(after < before, "{after} !< {before}");
        assert_eq!(m.instance(&id).unwrap().plan.assignments["cache"].vim_id, "edge");
        assert_eq!(m.vim_used(), m.running_demand());

        // replay the rule log: every switch keeps a rule for the service MAC
        let mut live: BTreeMap<String, BTreeSet<RuleId>> = BTreeMap::new();
        for e in &m.fabric().rule_log()[..log_start] {
            if e.rule.matcher.dst_mac == Some(mac) {
                live.entry(e.switch.clone()).or_default().insert(e.rule.id);
            }
        }
        let log = &m.fabric().rule_log()[log_start..];
        let batches: BTreeSet<u64> = log.iter().map(|e| e.batch).collect();
        for b in batches {
            for e in log.iter().filter(|e| e.batch == b && e.rule.matcher.dst_mac == Some(mac)) {
                let set = live.entry(e.switch.clone()).or_default();
                match e.op {
                    crate::sdn::RuleOp::Install => set.insert(e.rule.id),
                    crate::sdn::RuleOp::Remove => set.remove(&e.rule.id),
                };
            }
            assert!(live.values().all(|s| !s.is_empty()), "gap after batch {b}");
        }
        let ue_mac = m.fabric().endpoint("ue").unwrap().mac;
        let d = m.fabric_mut().send_frame("ue", crate::sdn::Frame::new(ue_mac, mac), t).unwrap();
        assert_eq!(d.accepted, [after_ep].into());
    }

    #[test]
    fn migration_without_capacity_keeps_source() {
        let mut m = mano_with(false, 16);
        let (id, t) = m.instantiate_now("cache-ns", &pin("cache", "region"), 0).unwrap();
        m.vims_mut().get_mut("edge").unwrap().inject_fault(VimOp::Allocate, 1);
        assert!(matches!(m.migrate(&id, "cache", "edge", t), Err(ManoError::Vim(_))));
        assert_eq!(m.instance(&id).unwrap().state, NsState::Running);
        assert_eq!(m.instance(&id).unwrap().replicas[0].vim_id, "region");

        // 3 x 2 vcpu does not fit the 4-vcpu edge node
        m.scale(&id, "cache", 2, t).unwrap();
        let t = m.run_until_idle(t);
        assert!(matches!(m.migrate(&id, "cache", "edge", t), Ok(())));
        let t = m.run_until_idle(t);
        let (id2, t) = m.instantiate_now("cache-ns", &pin("cache", "region"), t).unwrap();
        let err = m.migrate(&id2, "cache", "edge", t).unwrap_err();
        assert!(matches!(err, ManoError::Infeasible(Infeasible::Capacity { .. })), "{err}");
        assert_eq!(m.instance(&id2).unwrap().state, NsState::Running);
    }

    #[test]
    fn scale_out_in_and_atomic_failure() {
        let mut m = mano_with(false, 4);
        let (id, t) = m.instantiate_now("cache-ns", &pin("cache", "region"), 0).unwrap();
        m.scale(&id, "cache", 1, t).unwrap();
        let t = m.run_until_idle(t);
        assert_eq!(m.instance(&id).unwrap().replicas_of("cache"), 2);
        let active = m.vims().iter().flat_map(|v| v.vms()).filter(|v| v.state == VmState::Active).count();
        assert_eq!(active, 2);
        // 4 region + 4 edge vcpu, 4 already used: 3 more does not fit
        let err = m.scale(&id, "cache", 3, t).unwrap_err();
        assert!(matches!(err, ManoError::Infeasible(_)), "{err}");
        assert_eq!(m.instance(&id).unwrap().replicas_of("cache"), 2);
        m.scale(&id, "cache", -1, t).unwrap();
        assert_eq!(m.instance(&id).unwrap().replicas_of("cache"), 1);
        assert!(matches!(m.scale(&id, "cache", -1, t), Err(ManoError::InvalidRequest(_))));
        assert_eq!(m.vim_used(), m.running_demand());
    }

    #[test]
    fn terminate_is_idempotent_and_restores_baseline() {
        let mut m = mano_with(true, 16);
        let (id, t) = m.instantiate_now("chain", &PlacementConstraints::default(), 0).unwrap();
        assert!(m.fabric().installed_rules() > 0);
        assert_eq!(m.terminate(&id, t).unwrap(), NsState::Terminated);
        assert_eq!(m.vim_used(), Demand::default());
        assert_eq!(m.fabric().installed_rules(), 0);
        assert_eq!(m.terminate(&id, t).unwrap(), NsState::Terminated);
        let n = m.audit().len();
        m.terminate(&id, t).unwrap();
        assert_eq!(m.audit().len(), n);

        m.inject_primitive_fault("cache", "warm", 1);
        let failed = match m.instantiate_now("cache-ns", &PlacementConstraints::default(), t) {
            Err(ManoError::InstanceFailed { instance, .. }) => instance,
            other => panic!("{other:?}"),
        };
        assert_eq!(m.terminate(&failed, t).unwrap(), NsState::Failed);
    }

    #[test]
    fn terminate_retries_injected_release_faults() {
        let mut m = mano_with(false, 16);
        let (id, t) = m.instantiate_now("cache-ns", &pin("cache", "region"), 0).unwrap();
        m.vims_mut().get_mut("region").unwrap().inject_fault(VimOp::Release, 3);
        m.terminate(&id, t).unwrap();
        assert_eq!(m.vim_used(), Demand::default());
        assert_eq!(m.audit_for(&id).iter().filter(|e| e.kind == "cleanup_retry").count(), 3);
    }

    #[test]
    fn reaper_enforces_lifetime() {
        let mut m = mano_with(false, 16);
        let mut cat = m.catalogue().clone();
        let mut short = VnfDescriptor::new("probe", 1, 64, 1);
        short.lifetime_s = 10;
        cat.register_vnfd(short).unwrap();
        cat.register_nsd(NsDescriptor::new("probe-ns", ["probe"])).unwrap();
        m.catalogue = cat;
        let (id, t) = m.instantiate_now("probe-ns", &PlacementConstraints::default(), 0).unwrap();
        assert_eq!(m.next_wakeup(), Some(t + secs(10)));
        m.poll(t + secs(10));
        assert_eq!(m.instance(&id).unwrap().state, NsState::Terminated);
        assert!(m.audit_for(&id).iter().any(|e| e.kind == "lifetime_expired"));
    }

    #[test]
    fn slices_follow_plan_routes() {
        let mut m = mano_with(false, 16);
        let (id, _) = m.instantiate_now("chain", &pin("fw", "region"), 0).unwrap();
        let inst = m.instance(&id).unwrap();
        assert_eq!(inst.plan.link_routes["l1"].switches, ["edge", "core", "region"]);
        assert_eq!(inst.slices.len(), 1);
        let s = m.fabric().slices().next().unwrap();
        assert_eq!(s.profile.guaranteed_mbps, 100.0);
        assert_eq!(m.installed_rules(&id).len(), 2);
    }

    #[test]
    fn transition_table() {
        use NsState::*;
        assert!(Created.can_transition(Instantiating));
        assert!(!Created.can_transition(Running));
        assert!(Migrating.can_transition(Running));
        assert!(Running.can_transition(Failed));
        assert!(!Failed.can_transition(Running));
        assert!(!Terminated.can_transition(Failed));
        assert!(!Running.can_transition(Instantiating));
    }
}
