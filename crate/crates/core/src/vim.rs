//! Simulated virtual infrastructure managers.
//!
//! Every VIM speaks the same operation vocabulary. A VIM configured with the
//! `preshared_passthrough` auth mode models a vendor cloud that only exposes a
//! subset of operations: there is no token handshake, each request carries the
//! preshared credential, and anything outside its capability set is refused
//! before touching state.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Demand, VnfDescriptor};
use crate::sim::{ms, SimTime, MICROS_PER_SEC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VimOp {
    Connect,
    Capabilities,
    Allocate,
    Release,
    Usage,
}

impl VimOp {
    pub const ALL: [VimOp; 5] = [
        VimOp::Connect,
        VimOp::Capabilities,
        VimOp::Allocate,
        VimOp::Release,
        VimOp::Usage,
    ];

    pub fn full_set() -> BTreeSet<VimOp> {
        Self::ALL.into_iter().collect()
    }

    /// Default subset for restricted vendor VIMs: no usage/billing.
    pub fn restricted_set() -> BTreeSet<VimOp> {
        [
            VimOp::Connect,
            VimOp::Capabilities,
            VimOp::Allocate,
            VimOp::Release,
        ]
        .into_iter()
        .collect()
    }
}

impl std::fmt::Display for VimOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            VimOp::Connect => "connect",
            VimOp::Capabilities => "capabilities",
            VimOp::Allocate => "allocate",
            VimOp::Release => "release",
            VimOp::Usage => "usage",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthMode {
    StandardToken,
    PresharedPassthrough,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteClass {
    Edge,
    Regional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: String,
    pub vcpu: u64,
    pub memory_mb: u64,
    pub storage_gb: u64,
    #[serde(default)]
    pub flavor_tags: BTreeSet<String>,
}

impl NodeConfig {
    pub fn new(id: impl Into<String>, vcpu: u64, memory_mb: u64, storage_gb: u64) -> Self {
        Self {
            id: id.into(),
            vcpu,
            memory_mb,
            storage_gb,
            flavor_tags: BTreeSet::new(),
        }
    }

    pub fn tagged(mut self, tag: &str) -> Self {
        self.flavor_tags.insert(tag.to_string());
        self
    }
}

fn default_ttl_s() -> u64 {
    3600
}

fn default_build_delay_ms() -> u64 {
    500
}

/// The VIM block of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VimConfig {
    pub id: String,
    pub site_class: SiteClass,
    pub auth_mode: AuthMode,
    pub credential: String,
    /// Omitted means the full set for standard VIMs and the restricted
    /// default for passthrough VIMs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capability_set: Option<BTreeSet<VimOp>>,
    #[serde(default = "default_ttl_s")]
    pub token_ttl_s: u64,
    #[serde(default = "default_build_delay_ms")]
    pub build_delay_ms: u64,
    /// Fabric switch the VIM's provider network attaches to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch: Option<String>,
    pub nodes: Vec<NodeConfig>,
}

impl VimConfig {
    pub fn standard(id: impl Into<String>, site_class: SiteClass, nodes: Vec<NodeConfig>) -> Self {
        Self {
            id: id.into(),
            site_class,
            auth_mode: AuthMode::StandardToken,
            credential: "secret".into(),
            capability_set: None,
            token_ttl_s: default_ttl_s(),
            build_delay_ms: default_build_delay_ms(),
            switch: None,
            nodes,
        }
    }

    pub fn restricted(id: impl Into<String>, site_class: SiteClass, nodes: Vec<NodeConfig>) -> Self {
        Self {
            auth_mode: AuthMode::PresharedPassthrough,
            ..Self::standard(id, site_class, nodes)
        }
    }

    pub fn at_switch(mut self, switch: &str) -> Self {
        self.switch = Some(switch.into());
        self
    }

    pub fn capabilities(&self) -> BTreeSet<VimOp> {
        match (&self.capability_set, self.auth_mode) {
            (Some(set), _) => set.clone(),
            (None, AuthMode::StandardToken) => VimOp::full_set(),
            (None, AuthMode::PresharedPassthrough) => VimOp::restricted_set(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VimError {
    #[error("unknown vim {0}")]
    UnknownVim(String),
    #[error("authentication failed for vim {0}")]
    AuthFailed(String),
    #[error("session expired")]
    SessionExpired,
    #[error("vim {vim}: no node can fit {demand:?}")]
    QuotaExceeded { vim: String, demand: Demand },
    #[error("vim {vim} does not permit {op}")]
    CapabilityDenied { vim: String, op: VimOp },
    #[error("unknown vm {0}")]
    UnknownVm(String),
    #[error("vm {0} is migrating")]
    MigrationInProgress(String),
    #[error("vm {0} is not active")]
    NotActive(String),
    #[error("vim {vim}: injected {op} failure")]
    Injected { vim: String, op: VimOp },
    #[error("invalid vim config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VimAccount {
    pub vim_id: String,
    pub auth_mode: AuthMode,
    pub capability_set: BTreeSet<VimOp>,
    pub site_class: SiteClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeNode {
    pub node_id: String,
    pub total: Demand,
    pub used: Demand,
    pub flavor_tags: BTreeSet<String>,
}

impl ComputeNode {
    pub fn free(&self) -> Demand {
        Demand {
            vcpu: self.total.vcpu - self.used.vcpu,
            memory_mb: self.total.memory_mb - self.used.memory_mb,
            storage_gb: self.total.storage_gb - self.used.storage_gb,
        }
    }

    pub fn fits(&self, d: &Demand) -> bool {
        let f = self.free();
        d.vcpu <= f.vcpu && d.memory_mb <= f.memory_mb && d.storage_gb <= f.storage_gb
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VmState {
    Building,
    Active,
    Migrating,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmRecord {
    pub vm_id: String,
    pub vim_id: String,
    pub vnfd_id: String,
    pub node_id: String,
    pub tenant_id: String,
    pub state: VmState,
    pub demand: Demand,
    pub created_at: SimTime,
    pub active_at: SimTime,
    pub deleted_at: Option<SimTime>,
}

impl VmRecord {
    /// Virtual microseconds spent active (or migrating) up to `now`.
    fn active_micros(&self, now: SimTime) -> u64 {
        let end = self.deleted_at.unwrap_or(now).min(now);
        end.saturating_sub(self.active_at)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TenantUsage {
    pub tenant_id: String,
    pub vcpu_seconds: f64,
    pub gb_storage_seconds: f64,
    pub vm_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub node_id: String,
    pub total: Demand,
    pub used: Demand,
    pub free: Demand,
    pub flavor_tags: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityReport {
    pub vim_id: String,
    pub site_class: SiteClass,
    pub nodes: Vec<NodeSummary>,
    pub total: Demand,
    pub free: Demand,
    pub permitted: BTreeSet<VimOp>,
    pub usage_available: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub vim_id: String,
    pub token: Option<String>,
    pub expires_at: Option<SimTime>,
    credential: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VimAuditEntry {
    pub at: SimTime,
    pub event: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AllocHints {
    pub node: Option<String>,
    pub flavor: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Vim {
    config: VimConfig,
    capabilities: BTreeSet<VimOp>,
    nodes: BTreeMap<String, ComputeNode>,
    vms: BTreeMap<String, VmRecord>,
    tokens: BTreeMap<String, SimTime>,
    audit: Vec<VimAuditEntry>,
    faults: BTreeMap<VimOp, u32>,
    next_vm: u64,
    next_token: u64,
}

impl Vim {
    pub fn new(config: VimConfig) -> Result<Self, VimError> {
        let capabilities = config.capabilities();
        if config.auth_mode == AuthMode::StandardToken && capabilities != VimOp::full_set() {
            return Err(VimError::InvalidConfig(format!(
                "{}: standard VIMs expose the full operation set",
                config.id
            )));
        }
        if !capabilities.contains(&VimOp::Connect) {
            return Err(VimError::InvalidConfig(format!(
                "{}: capability set must include connect",
                config.id
            )));
        }
        let mut nodes = BTreeMap::new();
        for n in &config.nodes {
            let node = ComputeNode {
                node_id: n.id.clone(),
                total: Demand {
                    vcpu: n.vcpu,
                    memory_mb: n.memory_mb,
                    storage_gb: n.storage_gb,
                },
                used: Demand::default(),
                flavor_tags: n.flavor_tags.clone(),
            };
            if nodes.insert(n.id.clone(), node).is_some() {
                return Err(VimError::InvalidConfig(format!(
                    "{}: duplicate node {}",
                    config.id, n.id
                )));
            }
        }
        Ok(Self {
            config,
            capabilities,
            nodes,
            vms: BTreeMap::new(),
            tokens: BTreeMap::new(),
            audit: Vec::new(),
            faults: BTreeMap::new(),
            next_vm: 0,
            next_token: 0,
        })
    }

    pub fn id(&self) -> &str {
        &self.config.id
    }

    pub fn config(&self) -> &VimConfig {
        &self.config
    }

    pub fn site_class(&self) -> SiteClass {
        self.config.site_class
    }

    pub fn account(&self) -> VimAccount {
        VimAccount {
            vim_id: self.config.id.clone(),
            auth_mode: self.config.auth_mode,
            capability_set: self.capabilities.clone(),
            site_class: self.config.site_class,
        }
    }

    pub fn permits(&self, op: VimOp) -> bool {
        self.capabilities.contains(&op)
    }

    pub fn audit_log(&self) -> &[VimAuditEntry] {
        &self.audit
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ComputeNode> {
        self.nodes.values()
    }

    pub fn vm(&self, vm_id: &str) -> Option<&VmRecord> {
        self.vms.get(vm_id)
    }

    pub fn vms(&self) -> impl Iterator<Item = &VmRecord> {
        self.vms.values()
    }

    pub fn build_delay(&self) -> SimTime {
        ms(self.config.build_delay_ms)
    }

    /// Make the next `count` calls of `op` fail with [`VimError::Injected`].
    pub fn inject_fault(&mut self, op: VimOp, count: u32) {
        *self.faults.entry(op).or_default() += count;
    }

    pub fn clear_faults(&mut self) {
        self.faults.clear();
    }

    fn log(&mut self, at: SimTime, event: &str, detail: String) {
        self.audit.push(VimAuditEntry {
            at,
            event: event.to_string(),
            detail,
        });
    }

    /// Promote VMs whose build delay has elapsed.
    pub fn advance_to(&mut self, now: SimTime) {
        for vm in self.vms.values_mut() {
            if vm.state == VmState::Building && vm.active_at <= now {
                vm.state = VmState::Active;
            }
        }
    }

    pub fn connect(&mut self, credential: &str, now: SimTime) -> Result<Session, VimError> {
        if credential != self.config.credential {
            self.log(now, "auth_failed", String::new());
            return Err(VimError::AuthFailed(self.config.id.clone()));
        }
        match self.config.auth_mode {
            AuthMode::StandardToken => {
                let token = format!("{}-tok-{}", self.config.id, self.next_token);
                self.next_token += 1;
                let expires_at = now + self.config.token_ttl_s * MICROS_PER_SEC;
                self.tokens.insert(token.clone(), expires_at);
                self.log(now, "token_issued", token.clone());
                Ok(Session {
                    vim_id: self.config.id.clone(),
                    token: Some(token),
                    expires_at: Some(expires_at),
                    credential: None,
                })
            }
            AuthMode::PresharedPassthrough => Ok(Session {
                vim_id: self.config.id.clone(),
                token: None,
                expires_at: None,
                credential: Some(credential.to_string()),
            }),
        }
    }

    fn check(&mut self, session: &Session, op: VimOp, now: SimTime) -> Result<(), VimError> {
        if session.vim_id != self.config.id {
            return Err(VimError::AuthFailed(self.config.id.clone()));
        }
        match self.config.auth_mode {
            AuthMode::StandardToken => {
                let token = session.token.as_deref().unwrap_or_default();
                match self.tokens.get(token) {
                    None => return Err(VimError::AuthFailed(self.config.id.clone())),
                    Some(&exp) if now >= exp => return Err(VimError::SessionExpired),
                    Some(_) => {}
                }
            }
            AuthMode::PresharedPassthrough => {
                if session.credential.as_deref() != Some(self.config.credential.as_str()) {
                    return Err(VimError::AuthFailed(self.config.id.clone()));
                }
                self.log(now, "passthrough_request", op.to_string());
            }
        }
        if !self.permits(op) {
            return Err(VimError::CapabilityDenied {
                vim: self.config.id.clone(),
                op,
            });
        }
        if let Some(n) = self.faults.get_mut(&op) {
            if *n > 0 {
                *n -= 1;
                return Err(VimError::Injected {
                    vim: self.config.id.clone(),
                    op,
                });
            }
        }
        Ok(())
    }

    /// Capability report without a session; used for internal bookkeeping
    /// such as conservation checks.
    pub fn report(&self) -> CapabilityReport {
        let nodes: Vec<NodeSummary> = self
            .nodes
            .values()
            .map(|n| NodeSummary {
                node_id: n.node_id.clone(),
                total: n.total,
                used: n.used,
                free: n.free(),
                flavor_tags: n.flavor_tags.clone(),
            })
            .collect();
        CapabilityReport {
            vim_id: self.config.id.clone(),
            site_class: self.config.site_class,
            total: nodes.iter().map(|n| n.total).sum(),
            free: nodes.iter().map(|n| n.free).sum(),
            nodes,
            permitted: self.capabilities.clone(),
            usage_available: self.permits(VimOp::Usage),
        }
    }

    pub fn capabilities(&mut self, session: &Session, now: SimTime) -> Result<CapabilityReport, VimError> {
        self.check(session, VimOp::Capabilities, now)?;
        Ok(self.report())
    }

    pub fn allocate(
        &mut self,
        session: &Session,
        vnfd: &VnfDescriptor,
        tenant: &str,
        hints: &AllocHints,
        now: SimTime,
    ) -> Result<VmRecord, VimError> {
        self.check(session, VimOp::Allocate, now)?;
        self.advance_to(now);
        let demand = vnfd.demand();
        let flavor_ok = |n: &ComputeNode| {
            hints
                .flavor
                .as_ref()
                .is_none_or(|f| n.flavor_tags.contains(f))
        };
        let hinted = hints
            .node
            .as_ref()
            .and_then(|h| self.nodes.get(h))
            .filter(|n| flavor_ok(n) && n.fits(&demand))
            .map(|n| n.node_id.clone());
        let node_id = hinted
            .or_else(|| {
                self.nodes
                    .values()
                    .find(|n| flavor_ok(n) && n.fits(&demand))
                    .map(|n| n.node_id.clone())
            })
            .ok_or_else(|| VimError::QuotaExceeded {
                vim: self.config.id.clone(),
                demand,
            })?;

        let node = self.nodes.get_mut(&node_id).expect("node exists");
        node.used = node.used + demand;
        let vm_id = format!("{}-vm-{}", self.config.id, self.next_vm);
        self.next_vm += 1;
        let record = VmRecord {
            vm_id: vm_id.clone(),
            vim_id: self.config.id.clone(),
            vnfd_id: vnfd.id.clone(),
            node_id: node_id.clone(),
            tenant_id: tenant.to_string(),
            state: VmState::Building,
            demand,
            created_at: now,
            active_at: now + self.build_delay(),
            deleted_at: None,
        };
        self.vms.insert(vm_id.clone(), record.clone());
        self.log(now, "allocate", format!("{vm_id} on {node_id}"));
        Ok(record)
    }

    pub fn release(&mut self, session: &Session, vm_id: &str, now: SimTime) -> Result<(), VimError> {
        self.check(session, VimOp::Release, now)?;
        self.advance_to(now);
        let vm = match self.vms.get_mut(vm_id) {
            Some(vm) if vm.state != VmState::Deleted => vm,
            _ => return Err(VimError::UnknownVm(vm_id.to_string())),
        };
        if vm.state == VmState::Migrating {
            return Err(VimError::MigrationInProgress(vm_id.to_string()));
        }
        vm.state = VmState::Deleted;
        vm.deleted_at = Some(now);
        let (node_id, demand) = (vm.node_id.clone(), vm.demand);
        let node = self.nodes.get_mut(&node_id).expect("vm references node");
        node.used = node.used - demand;
        self.log(now, "release", vm_id.to_string());
        Ok(())
    }

    /// Mark an active VM as the source of an in-progress migration (or clear it).
    pub fn set_migrating(&mut self, vm_id: &str, migrating: bool, now: SimTime) -> Result<(), VimError> {
        self.advance_to(now);
        let vm = self
            .vms
            .get_mut(vm_id)
            .filter(|vm| vm.state != VmState::Deleted)
            .ok_or_else(|| VimError::UnknownVm(vm_id.to_string()))?;
        match (vm.state, migrating) {
            (VmState::Active, true) => vm.state = VmState::Migrating,
            (VmState::Migrating, false) => vm.state = VmState::Active,
            (s, _) if (s == VmState::Migrating) == migrating => {}
            _ => return Err(VimError::NotActive(vm_id.to_string())),
        }
        Ok(())
    }

    pub fn usage(&mut self, session: &Session, tenant: &str, now: SimTime) -> Result<TenantUsage, VimError> {
        self.check(session, VimOp::Usage, now)?;
        self.advance_to(now);
        Ok(self.tenant_usage(tenant, now))
    }

    fn tenant_usage(&self, tenant: &str, now: SimTime) -> TenantUsage {
        let mut u = TenantUsage {
            tenant_id: tenant.to_string(),
            ..TenantUsage::default()
        };
        for vm in self.vms.values().filter(|v| v.tenant_id == tenant) {
            let secs = vm.active_micros(now) as f64 / MICROS_PER_SEC as f64;
            u.vcpu_seconds += vm.demand.vcpu as f64 * secs;
            u.gb_storage_seconds += vm.demand.storage_gb as f64 * secs;
            if vm.state != VmState::Deleted {
                u.vm_count += 1;
            }
        }
        u
    }

    /// Σ demand of non-deleted VMs per node, recomputed from the records.
    pub fn recomputed_usage(&self) -> BTreeMap<String, Demand> {
        let mut out: BTreeMap<String, Demand> =
            self.nodes.keys().map(|k| (k.clone(), Demand::default())).collect();
        for vm in self.vms.values().filter(|v| v.state != VmState::Deleted) {
            let e = out.get_mut(&vm.node_id).expect("vm node exists");
            *e = *e + vm.demand;
        }
        out
    }

    /// Conservation: node counters equal recomputed demand and never exceed totals.
    pub fn is_conserved(&self) -> bool {
        let recomputed = self.recomputed_usage();
        self.nodes.values().all(|n| {
            recomputed[&n.node_id] == n.used
                && n.used.vcpu <= n.total.vcpu
                && n.used.memory_mb <= n.total.memory_mb
                && n.used.storage_gb <= n.total.storage_gb
        })
    }
}

/// All VIMs known to the orchestrator, keyed by id.
#[derive(Debug, Clone, Default)]
pub struct VimRegistry {
    vims: BTreeMap<String, Vim>,
}

impl VimRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_configs(configs: &[VimConfig]) -> Result<Self, VimError> {
        let mut reg = Self::new();
        for c in configs {
            reg.add(Vim::new(c.clone())?)?;
        }
        Ok(reg)
    }

    pub fn add(&mut self, vim: Vim) -> Result<(), VimError> {
        if self.vims.contains_key(vim.id()) {
            return Err(VimError::InvalidConfig(format!("duplicate vim {}", vim.id())));
        }
        self.vims.insert(vim.id().to_string(), vim);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&Vim, VimError> {
        self.vims.get(id).ok_or_else(|| VimError::UnknownVim(id.to_string()))
    }

    pub fn get_mut(&mut self, id: &str) -> Result<&mut Vim, VimError> {
        self.vims
            .get_mut(id)
            .ok_or_else(|| VimError::UnknownVim(id.to_string()))
    }

    pub fn connect(&mut self, vim_id: &str, credential: &str, now: SimTime) -> Result<Session, VimError> {
        self.get_mut(vim_id)?.connect(credential, now)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vim> {
        self.vims.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Vim> {
        self.vims.values_mut()
    }

    pub fn len(&self) -> usize {
        self.vims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vims.is_empty()
    }

    pub fn advance_to(&mut self, now: SimTime) {
        for v in self.vims.values_mut() {
            v.advance_to(now);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::secs;

    fn two_node_vim() -> Vim {
        Vim::new(VimConfig::standard(
            "open",
            SiteClass::Regional,
            vec![
                NodeConfig::new("n1", 8, 16_384, 100),
                NodeConfig::new("n2", 8, 16_384, 100),
            ],
        ))
        .unwrap()
    }

    fn restricted_vim() -> Vim {
        Vim::new(VimConfig::restricted(
            "vendor",
            SiteClass::Edge,
            vec![NodeConfig::new("n1", 8, 16_384, 100)],
        ))
        .unwrap()
    }

    #[test]
    fn standard_connect_issues_token_with_ttl() {
        let mut vim = two_node_vim();
        let s = vim.connect("secret", secs(5)).unwrap();
        assert!(s.token.is_some());
        assert_eq!(s.expires_at, Some(secs(5) + secs(3600)));
        assert_eq!(vim.audit_log()[0].event, "token_issued");
    }

    #[test]
    fn wrong_credential_fails() {
        let mut vim = two_node_vim();
        assert_eq!(
            vim.connect("nope", 0),
            Err(VimError::AuthFailed("open".into()))
        );
    }

    #[test]
    fn passthrough_connect_records_no_token() {
        let mut vim = restricted_vim();
        let s = vim.connect("secret", 0).unwrap();
        assert!(s.token.is_none());
        vim.capabilities(&s, 0).unwrap();
        assert!(vim.audit_log().iter().all(|e| e.event != "token_issued"));
    }

    #[test]
    fn expired_session_is_rejected() {
        let mut vim = two_node_vim();
        let s = vim.connect("secret", 0).unwrap();
        assert!(vim.capabilities(&s, secs(3600) - 1).is_ok());
        assert_eq!(vim.capabilities(&s, secs(3600)), Err(VimError::SessionExpired));
    }

    #[test]
    fn capabilities_sum_free_resources() {
        let mut vim = two_node_vim();
        let s = vim.connect("secret", 0).unwrap();
        assert_eq!(vim.capabilities(&s, 0).unwrap().free.vcpu, 16);
        vim.allocate(&s, &VnfDescriptor::new("v", 4, 1024, 1), "t", &AllocHints::default(), 0)
            .unwrap();
        let report = vim.capabilities(&s, 0).unwrap();
        assert_eq!(report.free.vcpu, 12);
        assert!(report.usage_available);
    }

    #[test]
    fn restricted_report_marks_usage_unavailable() {
        let mut vim = restricted_vim();
        let s = vim.connect("secret", 0).unwrap();
        assert!(!vim.capabilities(&s, 0).unwrap().usage_available);
        assert!(matches!(
            vim.usage(&s, "t", 0),
            Err(VimError::CapabilityDenied { op: VimOp::Usage, .. })
        ));
    }

    #[test]
    fn allocate_over_quota_fails_without_side_effects() {
        let mut vim = Vim::new(VimConfig::standard(
            "v",
            SiteClass::Edge,
            vec![NodeConfig::new("n", 2, 4096, 10)],
        ))
        .unwrap();
        let s = vim.connect("secret", 0).unwrap();
        let before = vim.report();
        let r = vim.allocate(&s, &VnfDescriptor::new("big", 4, 1, 0), "t", &AllocHints::default(), 0);
        assert!(matches!(r, Err(VimError::QuotaExceeded { .. })));
        assert_eq!(vim.report(), before);
    }

    #[test]
    fn allocate_then_release_restores_counters() {
        let mut vim = two_node_vim();
        let s = vim.connect("secret", 0).unwrap();
        let before = vim.report();
        let vm = vim
            .allocate(&s, &VnfDescriptor::new("v", 3, 2048, 7), "t", &AllocHints::default(), 0)
            .unwrap();
        assert_eq!(vm.state, VmState::Building);
        vim.advance_to(ms(500));
        assert_eq!(vim.vm(&vm.vm_id).unwrap().state, VmState::Active);
        vim.release(&s, &vm.vm_id, ms(600)).unwrap();
        assert_eq!(vim.report(), before);
        assert_eq!(vim.release(&s, &vm.vm_id, ms(700)), Err(VimError::UnknownVm(vm.vm_id)));
    }

    #[test]
    fn flavor_hint_filters_then_first_fits() {
        let mut vim = Vim::new(VimConfig::standard(
            "kcl",
            SiteClass::Regional,
            vec![
                NodeConfig::new("a", 8, 8192, 50),
                NodeConfig::new("b", 8, 8192, 50).tagged("container_host"),
                NodeConfig::new("c", 8, 8192, 50).tagged("low_latency_kernel"),
            ],
        ))
        .unwrap();
        let s = vim.connect("secret", 0).unwrap();
        let hints = AllocHints {
            node: None,
            flavor: Some("low_latency_kernel".into()),
        };
        let vm = vim
            .allocate(&s, &VnfDescriptor::new("du", 2, 1024, 1), "t", &hints, 0)
            .unwrap();
        // oracle: filter by tag, then first node by id with room
        let expected = vim
            .config()
            .nodes
            .iter()
            .filter(|n| n.flavor_tags.contains("low_latency_kernel"))
            .map(|n| n.id.clone())
            .min()
            .unwrap();
        assert_eq!(vm.node_id, expected);
        let plain = vim
            .allocate(&s, &VnfDescriptor::new("x", 2, 1024, 1), "t", &AllocHints::default(), 0)
            .unwrap();
        assert_eq!(plain.node_id, "a");
    }

    #[test]
    fn release_during_migration_is_refused() {
        let mut vim = two_node_vim();
        let s = vim.connect("secret", 0).unwrap();
        let vm = vim
            .allocate(&s, &VnfDescriptor::new("v", 1, 1, 0), "t", &AllocHints::default(), 0)
            .unwrap();
        vim.set_migrating(&vm.vm_id, true, secs(1)).unwrap();
        assert_eq!(
            vim.release(&s, &vm.vm_id, secs(1)),
            Err(VimError::MigrationInProgress(vm.vm_id.clone()))
        );
        vim.set_migrating(&vm.vm_id, false, secs(1)).unwrap();
        vim.release(&s, &vm.vm_id, secs(1)).unwrap();
    }

    #[test]
    fn usage_accrues_vcpu_seconds_while_active() {
        let mut vim = two_node_vim();
        let s = vim.connect("secret", 0).unwrap();
        let vm = vim
            .allocate(&s, &VnfDescriptor::new("v", 2, 1, 0), "a", &AllocHints::default(), 0)
            .unwrap();
        let active = vm.active_at;
        let u = vim.usage(&s, "a", active + secs(100)).unwrap();
        assert_eq!(u.vcpu_seconds, 200.0);
        assert_eq!(u.vm_count, 1);
        vim.release(&s, &vm.vm_id, active + secs(100)).unwrap();
        let later = vim.usage(&s, "a", active + secs(500)).unwrap();
        assert_eq!(later.vcpu_seconds, 200.0);
        assert_eq!(later.vm_count, 0);
    }

    #[test]
    fn tenants_are_isolated() {
        let run = |with_b: bool| {
            let mut vim = two_node_vim();
            let s = vim.connect("secret", 0).unwrap();
            vim.allocate(&s, &VnfDescriptor::new("v", 2, 1, 1), "a", &AllocHints::default(), 0)
                .unwrap();
            if with_b {
                vim.allocate(&s, &VnfDescriptor::new("w", 4, 1, 3), "b", &AllocHints::default(), 0)
                    .unwrap();
            }
            vim.usage(&s, "a", secs(60)).unwrap()
        };
        assert_eq!(run(false), run(true));
    }

    #[test]
    fn capability_denied_never_mutates() {
        let mut cfg = VimConfig::restricted("v", SiteClass::Edge, vec![NodeConfig::new("n", 8, 8192, 10)]);
        cfg.capability_set = Some([VimOp::Connect, VimOp::Capabilities].into_iter().collect());
        let mut vim = Vim::new(cfg).unwrap();
        let s = vim.connect("secret", 0).unwrap();
        let before = vim.report();
        assert!(matches!(
            vim.allocate(&s, &VnfDescriptor::new("v", 1, 1, 0), "t", &AllocHints::default(), 0),
            Err(VimError::CapabilityDenied { op: VimOp::Allocate, .. })
        ));
        assert_eq!(vim.report(), before);
        assert_eq!(vim.vms().count(), 0);
    }

    #[test]
    fn standard_vim_must_expose_full_set() {
        let mut cfg = VimConfig::standard("v", SiteClass::Edge, vec![]);
        cfg.capability_set = Some(VimOp::restricted_set());
        assert!(matches!(Vim::new(cfg), Err(VimError::InvalidConfig(_))));
    }

    #[test]
    fn injected_fault_consumes_once() {
        let mut vim = two_node_vim();
        let s = vim.connect("secret", 0).unwrap();
        vim.inject_fault(VimOp::Allocate, 1);
        let d = VnfDescriptor::new("v", 1, 1, 0);
        assert!(matches!(
            vim.allocate(&s, &d, "t", &AllocHints::default(), 0),
            Err(VimError::Injected { .. })
        ));
        assert!(vim.allocate(&s, &d, "t", &AllocHints::default(), 0).is_ok());
        assert!(vim.is_conserved());
    }

    #[test]
    fn registry_reports_unknown_vim() {
        let mut reg = VimRegistry::new();
        assert_eq!(
            reg.connect("nope", "x", 0),
            Err(VimError::UnknownVim("nope".into()))
        );
    }
}
