//! VNF and network-service descriptors and the catalogue that holds them.
//!
//! Descriptor documents are JSON objects carrying `"kind": "vnfd" | "nsd"`
//! and `"version": 1` next to the descriptor fields.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const DESCRIPTOR_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid value at {path}: {message}")]
    Value { path: String, message: String },
    #[error("duplicate descriptor id {0}")]
    DuplicateId(String),
    #[error("nsd {nsd} references unknown vnfd {vnfd}")]
    DanglingReference { nsd: String, vnfd: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<CatalogError>,
    },
}

impl CatalogError {
    fn value(path: impl Into<String>, message: impl Into<String>) -> Self {
        CatalogError::Value {
            path: path.into(),
            message: message.into(),
        }
    }

    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        CatalogError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementClass {
    Edge,
    Regional,
    #[default]
    Any,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigPrimitive {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VnfDescriptor {
    pub id: String,
    #[serde(default)]
    pub name: String,
    pub vcpu: u32,
    pub memory_mb: u64,
    pub storage_gb: u64,
    /// Advisory maximum instance lifetime in seconds; 0 means unbounded.
    #[serde(default)]
    pub lifetime_s: u64,
    #[serde(default)]
    pub connection_points: Vec<String>,
    #[serde(default)]
    pub config_primitives: Vec<ConfigPrimitive>,
    #[serde(default)]
    pub placement_class: PlacementClass,
}

impl VnfDescriptor {
    pub fn new(id: impl Into<String>, vcpu: u32, memory_mb: u64, storage_gb: u64) -> Self {
        Self {
            id: id.into(),
            name: String::new(),
            vcpu,
            memory_mb,
            storage_gb,
            lifetime_s: 0,
            connection_points: Vec::new(),
            config_primitives: Vec::new(),
            placement_class: PlacementClass::Any,
        }
    }

    pub fn with_class(mut self, class: PlacementClass) -> Self {
        self.placement_class = class;
        self
    }

    pub fn with_ports<I, S>(mut self, ports: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.connection_points = ports.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_primitive(mut self, name: impl Into<String>) -> Self {
        self.config_primitives.push(ConfigPrimitive {
            name: name.into(),
            parameters: BTreeMap::new(),
        });
        self
    }

    pub fn demand(&self) -> Demand {
        Demand {
            vcpu: u64::from(self.vcpu),
            memory_mb: self.memory_mb,
            storage_gb: self.storage_gb,
        }
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        if self.id.is_empty() {
            return Err(CatalogError::value("id", "must not be empty"));
        }
        if self.vcpu < 1 {
            return Err(CatalogError::value("vcpu", "must be at least 1"));
        }
        if self.memory_mb == 0 {
            return Err(CatalogError::value("memory_mb", "must be positive"));
        }
        let mut seen = BTreeSet::new();
        for (i, cp) in self.connection_points.iter().enumerate() {
            if !seen.insert(cp) {
                return Err(CatalogError::value(
                    format!("connection_points[{i}]"),
                    format!("duplicate connection point {cp}"),
                ));
            }
        }
        Ok(())
    }
}

/// Compute/memory/storage requirement of a VNF (or a sum of them).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demand {
    pub vcpu: u64,
    pub memory_mb: u64,
    pub storage_gb: u64,
}

impl std::ops::Add for Demand {
    type Output = Demand;
    fn add(self, o: Demand) -> Demand {
        Demand {
            vcpu: self.vcpu + o.vcpu,
            memory_mb: self.memory_mb + o.memory_mb,
            storage_gb: self.storage_gb + o.storage_gb,
        }
    }
}

impl std::ops::Sub for Demand {
    type Output = Demand;
    fn sub(self, o: Demand) -> Demand {
        Demand {
            vcpu: self.vcpu - o.vcpu,
            memory_mb: self.memory_mb - o.memory_mb,
            storage_gb: self.storage_gb - o.storage_gb,
        }
    }
}

impl Demand {
    /// True if every component is at most the matching one in `capacity`.
    pub fn fits_in(&self, capacity: &Demand) -> bool {
        self.vcpu <= capacity.vcpu && self.memory_mb <= capacity.memory_mb && self.storage_gb <= capacity.storage_gb
    }
}

impl std::iter::Sum for Demand {
    fn sum<I: Iterator<Item = Demand>>(iter: I) -> Demand {
        iter.fold(Demand::default(), |a, b| a + b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkEndpoint {
    pub vnf: String,
    pub cp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VirtualLinkDescriptor {
    pub id: String,
    pub endpoints: [LinkEndpoint; 2],
    pub required_mbps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_latency_us: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColocationRule {
    SameVim,
    DifferentVim,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Colocation {
    pub a: String,
    pub b: String,
    pub rule: ColocationRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NsDescriptor {
    pub id: String,
    #[serde(default)]
    pub name: String,
    pub vnfs: Vec<String>,
    #[serde(default)]
    pub links: Vec<VirtualLinkDescriptor>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub colocation: Vec<Colocation>,
}

impl NsDescriptor {
    pub fn new<I, S>(id: impl Into<String>, vnfs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            id: id.into(),
            name: String::new(),
            vnfs: vnfs.into_iter().map(Into::into).collect(),
            links: Vec::new(),
            colocation: Vec::new(),
        }
    }

    pub fn with_link(
        mut self,
        id: impl Into<String>,
        a: (&str, &str),
        b: (&str, &str),
        required_mbps: f64,
        max_latency_us: Option<u64>,
    ) -> Self {
        self.links.push(VirtualLinkDescriptor {
            id: id.into(),
            endpoints: [
                LinkEndpoint {
                    vnf: a.0.into(),
                    cp: a.1.into(),
                },
                LinkEndpoint {
                    vnf: b.0.into(),
                    cp: b.1.into(),
                },
            ],
            required_mbps,
            max_latency_us,
        });
        self
    }

    pub fn with_colocation(mut self, a: &str, b: &str, rule: ColocationRule) -> Self {
        self.colocation.push(Colocation {
            a: a.into(),
            b: b.into(),
            rule,
        });
        self
    }

    /// Checks that do not need the rest of the catalogue.
    pub fn validate(&self) -> Result<(), CatalogError> {
        if self.id.is_empty() {
            return Err(CatalogError::value("id", "must not be empty"));
        }
        if self.vnfs.is_empty() {
            return Err(CatalogError::value("vnfs", "must list at least one vnfd"));
        }
        let members: BTreeSet<&str> = self.vnfs.iter().map(String::as_str).collect();
        if members.len() != self.vnfs.len() {
            return Err(CatalogError::value("vnfs", "vnfd ids must be unique"));
        }
        let mut link_ids = BTreeSet::new();
        for (i, link) in self.links.iter().enumerate() {
            if !link_ids.insert(link.id.as_str()) {
                return Err(CatalogError::value(
                    format!("links[{i}].id"),
                    format!("duplicate link id {}", link.id),
                ));
            }
            if link.required_mbps.is_nan() || link.required_mbps <= 0.0 {
                return Err(CatalogError::value(
                    format!("links[{i}].required_mbps"),
                    "must be positive",
                ));
            }
            for (j, ep) in link.endpoints.iter().enumerate() {
                if !members.contains(ep.vnf.as_str()) {
                    return Err(CatalogError::value(
                        format!("links[{i}].endpoints[{j}]"),
                        format!("endpoint {}:{} is not a member vnf", ep.vnf, ep.cp),
                    ));
                }
            }
            if link.endpoints[0] == link.endpoints[1] {
                return Err(CatalogError::value(
                    format!("links[{i}].endpoints"),
                    "endpoints must be distinct connection points",
                ));
            }
        }
        for (i, c) in self.colocation.iter().enumerate() {
            for side in [&c.a, &c.b] {
                if !members.contains(side.as_str()) {
                    return Err(CatalogError::value(
                        format!("colocation[{i}]"),
                        format!("{side} is not a member vnf"),
                    ));
                }
            }
            if c.a == c.b {
                return Err(CatalogError::value(
                    format!("colocation[{i}]"),
                    "constraint must name two different vnfs",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Descriptor {
    Vnfd(VnfDescriptor),
    Nsd(NsDescriptor),
}

impl Descriptor {
    pub fn id(&self) -> &str {
        match self {
            Descriptor::Vnfd(d) => &d.id,
            Descriptor::Nsd(d) => &d.id,
        }
    }

    pub fn to_json(&self) -> Value {
        let (kind, mut value) = match self {
            Descriptor::Vnfd(d) => ("vnfd", serde_json::to_value(d)),
            Descriptor::Nsd(d) => ("nsd", serde_json::to_value(d)),
        };
        let obj = value
            .as_mut()
            .expect("descriptors always serialize")
            .as_object_mut()
            .expect("descriptors serialize to objects");
        obj.insert("kind".into(), Value::from(kind));
        obj.insert("version".into(), Value::from(DESCRIPTOR_VERSION));
        value.expect("descriptors always serialize")
    }
}

fn typed<T: serde::de::DeserializeOwned>(value: Value) -> Result<T, CatalogError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CatalogError::schema(if path == "." { "$".into() } else { path }, e.into_inner().to_string())
    })
}

/// Parse a descriptor document. Never panics, whatever the input bytes.
pub fn parse_descriptor(document: &[u8]) -> Result<Descriptor, CatalogError> {
    let value: Value =
        serde_json::from_slice(document).map_err(|e| CatalogError::schema("$", e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(CatalogError::schema("$", "descriptor must be a JSON object"));
    };
    let kind = match obj.remove("kind") {
        Some(Value::String(k)) => k,
        Some(_) => return Err(CatalogError::schema("kind", "must be a string")),
        None => return Err(CatalogError::schema("kind", "missing field")),
    };
    match obj.remove("version") {
        Some(v) if v.as_u64() == Some(DESCRIPTOR_VERSION) => {}
        Some(v) => {
            return Err(CatalogError::schema(
                "version",
                format!("unsupported version {v}, expected {DESCRIPTOR_VERSION}"),
            ))
        }
        None => return Err(CatalogError::schema("version", "missing field")),
    }
    let body = Value::Object(obj);
    match kind.as_str() {
        "vnfd" => {
            let d: VnfDescriptor = typed(body)?;
            d.validate()?;
            Ok(Descriptor::Vnfd(d))
        }
        "nsd" => {
            let d: NsDescriptor = typed(body)?;
            d.validate()?;
            Ok(Descriptor::Nsd(d))
        }
        other => Err(CatalogError::schema(
            "kind",
            format!("unknown kind {other:?}, expected \"vnfd\" or \"nsd\""),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSummary {
    pub id: String,
    pub name: String,
    pub vnf_count: usize,
    pub demand: Demand,
}

#[derive(Debug, Clone, Default)]
pub struct Catalogue {
    vnfds: BTreeMap<String, VnfDescriptor>,
    nsds: BTreeMap<String, NsDescriptor>,
}

impl Catalogue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn vnfd(&self, id: &str) -> Option<&VnfDescriptor> {
        self.vnfds.get(id)
    }

    pub fn nsd(&self, id: &str) -> Option<&NsDescriptor> {
        self.nsds.get(id)
    }

    pub fn vnfds(&self) -> impl Iterator<Item = &VnfDescriptor> {
        self.vnfds.values()
    }

    pub fn nsds(&self) -> impl Iterator<Item = &NsDescriptor> {
        self.nsds.values()
    }

    fn id_taken(&self, id: &str) -> bool {
        self.vnfds.contains_key(id) || self.nsds.contains_key(id)
    }

    pub fn register(&mut self, descriptor: Descriptor) -> Result<(), CatalogError> {
        match descriptor {
            Descriptor::Vnfd(d) => self.register_vnfd(d),
            Descriptor::Nsd(d) => self.register_nsd(d),
        }
    }

    pub fn register_vnfd(&mut self, vnfd: VnfDescriptor) -> Result<(), CatalogError> {
        vnfd.validate()?;
        if self.id_taken(&vnfd.id) {
            return Err(CatalogError::DuplicateId(vnfd.id));
        }
        self.vnfds.insert(vnfd.id.clone(), vnfd);
        Ok(())
    }

    pub fn register_nsd(&mut self, nsd: NsDescriptor) -> Result<(), CatalogError> {
        self.check_nsd(&nsd)?;
        if self.id_taken(&nsd.id) {
            return Err(CatalogError::DuplicateId(nsd.id));
        }
        self.nsds.insert(nsd.id.clone(), nsd);
        Ok(())
    }

    /// Validate an NSD against the VNFDs currently registered.
    pub fn check_nsd(&self, nsd: &NsDescriptor) -> Result<(), CatalogError> {
        nsd.validate()?;
        for v in &nsd.vnfs {
            if !self.vnfds.contains_key(v) {
                return Err(CatalogError::DanglingReference {
                    nsd: nsd.id.clone(),
                    vnfd: v.clone(),
                });
            }
        }
        for (i, link) in nsd.links.iter().enumerate() {
            for (j, ep) in link.endpoints.iter().enumerate() {
                let vnfd = &self.vnfds[&ep.vnf];
                if !vnfd.connection_points.contains(&ep.cp) {
                    return Err(CatalogError::value(
                        format!("links[{i}].endpoints[{j}]"),
                        format!(
                            "endpoint {}:{} names a connection point not declared by vnfd {}",
                            ep.vnf, ep.cp, vnfd.id
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Sum of member VNFD demands for an NSD.
    pub fn nsd_demand(&self, nsd: &NsDescriptor) -> Demand {
        nsd.vnfs
            .iter()
            .filter_map(|v| self.vnfds.get(v))
            .map(VnfDescriptor::demand)
            .sum()
    }

    pub fn list_services(&self) -> Vec<ServiceSummary> {
        self.nsds
            .values()
            .map(|nsd| ServiceSummary {
                id: nsd.id.clone(),
                name: nsd.name.clone(),
                vnf_count: nsd.vnfs.len(),
                demand: self.nsd_demand(nsd),
            })
            .collect()
    }

    /// Load every `*.json` descriptor in `dir`. VNFDs are registered before
    /// NSDs so that NSD references resolve regardless of file order.
    pub fn load_dir(dir: &Path) -> Result<Self, CatalogError> {
        let io = |source| CatalogError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        files.sort();

        let mut parsed = Vec::with_capacity(files.len());
        for path in files {
            let bytes = fs::read(&path).map_err(|source| CatalogError::Io {
                path: path.clone(),
                source,
            })?;
            let d = parse_descriptor(&bytes).map_err(|e| CatalogError::InFile {
                path: path.clone(),
                source: Box::new(e),
            })?;
            parsed.push((path, d));
        }
        parsed.sort_by_key(|(_, d)| matches!(d, Descriptor::Nsd(_)));

        let mut catalogue = Catalogue::new();
        for (path, d) in parsed {
            catalogue.register(d).map_err(|e| CatalogError::InFile {
                path,
                source: Box::new(e),
            })?;
        }
        Ok(catalogue)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vnfd_doc(extra: &str) -> String {
        format!(
            r#"{{"kind":"vnfd","version":1,"id":"v1","vcpu":1,"memory_mb":1024,"storage_gb":10,"lifetime_s":0{extra}}}"#
        )
    }

    #[test]
    fn minimal_vnfd_parses_with_empty_primitives() {
        let Descriptor::Vnfd(d) = parse_descriptor(vnfd_doc("").as_bytes()).unwrap() else {
            panic!("expected vnfd");
        };
        assert_eq!(d.id, "v1");
        assert!(d.config_primitives.is_empty());
        assert_eq!(d.placement_class, PlacementClass::Any);
    }

    #[test]
    fn zero_vcpu_is_a_value_error_at_vcpu() {
        let doc = r#"{"kind":"vnfd","version":1,"id":"v1","vcpu":0,"memory_mb":1024,"storage_gb":10}"#;
        match parse_descriptor(doc.as_bytes()) {
            Err(CatalogError::Value { path, .. }) => assert_eq!(path, "vcpu"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ill_typed_field_reports_its_path() {
        let doc = r#"{"kind":"vnfd","version":1,"id":"v1","vcpu":"two","memory_mb":1,"storage_gb":1}"#;
        match parse_descriptor(doc.as_bytes()) {
            Err(CatalogError::Schema { path, .. }) => assert_eq!(path, "vcpu"),
            other => panic!("unexpected {other:?}"),
        }
        let doc = r#"{"kind":"vnfd","version":1,"id":"v1","vcpu":1,"storage_gb":1}"#;
        assert!(matches!(
            parse_descriptor(doc.as_bytes()),
            Err(CatalogError::Schema { .. })
        ));
    }

    #[test]
    fn missing_kind_or_bad_version_is_schema_error() {
        for doc in [
            r#"{"version":1,"id":"v1"}"#,
            r#"{"kind":"vnfd","version":2,"id":"v1","vcpu":1,"memory_mb":1,"storage_gb":1}"#,
            r#"{"kind":"pnfd","version":1}"#,
            r#"[1,2]"#,
        ] {
            assert!(
                matches!(parse_descriptor(doc.as_bytes()), Err(CatalogError::Schema { .. })),
                "{doc}"
            );
        }
    }

    #[test]
    fn duplicate_connection_points_rejected() {
        let doc = vnfd_doc(r#","connection_points":["eth0","eth0"]"#);
        assert!(matches!(
            parse_descriptor(doc.as_bytes()),
            Err(CatalogError::Value { .. })
        ));
    }

    #[test]
    fn nsd_link_to_undeclared_connection_point_names_endpoint() {
        let mut cat = Catalogue::new();
        cat.register_vnfd(VnfDescriptor::new("v1", 1, 1, 0).with_ports(["eth0"]))
            .unwrap();
        cat.register_vnfd(VnfDescriptor::new("v2", 1, 1, 0).with_ports(["eth0"]))
            .unwrap();
        let doc = r#"{"kind":"nsd","version":1,"id":"ns","vnfs":["v1","v2"],
            "links":[{"id":"l","endpoints":[{"vnf":"v1","cp":"eth0"},{"vnf":"v2","cp":"eth9"}],"required_mbps":10}]}"#;
        let d = parse_descriptor(doc.as_bytes()).unwrap();
        match cat.register(d) {
            Err(CatalogError::Value { path, message }) => {
                assert_eq!(path, "links[0].endpoints[1]");
                assert!(message.contains("v2:eth9"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nsd_link_to_non_member_rejected_at_parse() {
        let doc = r#"{"kind":"nsd","version":1,"id":"ns","vnfs":["v1"],
            "links":[{"id":"l","endpoints":[{"vnf":"v1","cp":"a"},{"vnf":"v3","cp":"a"}],"required_mbps":10}]}"#;
        assert!(matches!(
            parse_descriptor(doc.as_bytes()),
            Err(CatalogError::Value { .. })
        ));
        let empty = r#"{"kind":"nsd","version":1,"id":"ns","vnfs":[]}"#;
        assert!(matches!(
            parse_descriptor(empty.as_bytes()),
            Err(CatalogError::Value { .. })
        ));
    }

    #[test]
    fn register_flow() {
        let mut cat = Catalogue::new();
        cat.register_vnfd(VnfDescriptor::new("v1", 1, 512, 1)).unwrap();
        cat.register_nsd(NsDescriptor::new("ns1", ["v1"])).unwrap();
        assert!(cat.vnfd("v1").is_some());
        assert!(cat.nsd("ns1").is_some());

        assert!(matches!(
            cat.register_nsd(NsDescriptor::new("ns2", ["v9"])),
            Err(CatalogError::DanglingReference { ref vnfd, .. }) if vnfd == "v9"
        ));
        assert!(matches!(
            cat.register_vnfd(VnfDescriptor::new("v1", 1, 512, 1)),
            Err(CatalogError::DuplicateId(_))
        ));
        assert!(matches!(
            cat.register_nsd(NsDescriptor::new("ns1", ["v1"])),
            Err(CatalogError::DuplicateId(_))
        ));
    }

    #[test]
    fn list_services_aggregates_demand() {
        let mut cat = Catalogue::new();
        assert!(cat.list_services().is_empty());
        cat.register_vnfd(VnfDescriptor::new("a", 1, 100, 1)).unwrap();
        cat.register_vnfd(VnfDescriptor::new("b", 3, 200, 5)).unwrap();
        cat.register_nsd(NsDescriptor::new("ns", ["a", "b"])).unwrap();
        let s = &cat.list_services()[0];
        assert_eq!(s.vnf_count, 2);
        assert_eq!(
            s.demand,
            Demand {
                vcpu: 4,
                memory_mb: 300,
                storage_gb: 6
            }
        );
    }

    #[test]
    fn round_trip_through_json() {
        let d = Descriptor::Vnfd(
            VnfDescriptor::new("up", 2, 2048, 4)
                .with_ports(["n3", "n6"])
                .with_primitive("configure")
                .with_class(PlacementClass::Edge),
        );
        let doc = serde_json::to_vec(&d.to_json()).unwrap();
        assert_eq!(parse_descriptor(&doc).unwrap(), d);
    }

    proptest! {
        #[test]
        fn parser_is_total_on_arbitrary_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = parse_descriptor(&bytes);
        }

        #[test]
        fn parser_is_total_on_json_shaped_input(
            kind in prop_oneof![Just("vnfd"), Just("nsd"), Just("x")],
            vcpu in -2i64..4,
            mem in prop_oneof![Just(serde_json::json!(0)), Just(serde_json::json!(64)), Just(serde_json::json!("a"))],
        ) {
            let doc = serde_json::json!({"kind": kind, "version": 1, "id": "v", "vcpu": vcpu, "memory_mb": mem, "storage_gb": 0, "vnfs": ["v"]});
            let _ = parse_descriptor(doc.to_string().as_bytes());
        }
    }
}
