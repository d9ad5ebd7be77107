//! Run configuration: one TOML file per experiment.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::models::{HardwareOverrides, HardwareParams, ModelConfig};
use crate::partition::{
    anneal_partition, partition_blocks, partition_caveman, AnnealConfig, EnergyKind, PartitionMap,
};
use crate::sync::{LookaheadMode, WindowAdvance};
use crate::time::SimTime;
use crate::topology::{gen_as_like, gen_caveman, gen_flows, gen_linear, Flow, NetworkSpec, RouterId};

pub const MAX_DUPLICATION: u32 = 8;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Validation { field: String, message: String },
}

impl ConfigError {
    fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TopologyConfig {
    Linear { routers: u32 },
    Caveman { caves: usize, cave_size: usize },
    AsLike {
        routers: u32,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowKind {
    /// Linear networks: a single flow between the two end routers.
    /// Random flows elsewhere.
    #[default]
    Auto,
    EndToEnd,
    Random,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub kind: FlowKind,
    pub seed: u64,
    /// Memories per flow at each end router; 50 end-to-end, 25 random.
    pub lanes: Option<u32>,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionMethod {
    #[default]
    #[serde(rename = "blocks")]
    Blocks,
    #[serde(rename = "caveman")]
    Caveman,
    #[serde(rename = "anneal-p1")]
    AnnealP1,
    #[serde(rename = "anneal-p2")]
    AnnealP2,
    #[serde(rename = "anneal-p3")]
    AnnealP3,
    #[serde(rename = "explicit")]
    Explicit,
}

impl std::str::FromStr for PartitionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "blocks" => PartitionMethod::Blocks,
            "caveman" => PartitionMethod::Caveman,
            "anneal-p1" => PartitionMethod::AnnealP1,
            "anneal-p2" => PartitionMethod::AnnealP2,
            "anneal-p3" => PartitionMethod::AnnealP3,
            "explicit" => PartitionMethod::Explicit,
            _ => return Err(format!("unknown partition method {s:?}")),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub method: PartitionMethod,
    pub iterations: Option<u64>,
    pub cooling: Option<f64>,
    pub initial_temperature: Option<f64>,
    pub seed: u64,
    /// Worker of each router, for the explicit method.
    pub assign: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Features {
    pub batching: bool,
    pub offloading: bool,
    pub purification: bool,
    pub duplication_factor: u32,
}

impl Default for Features {
    fn default() -> Self {
        Features {
            batching: true,
            offloading: true,
            purification: false,
            duplication_factor: 0,
        }
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportKind {
    #[default]
    Thread,
    Tcp,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvanceMode {
    #[default]
    GlobalMin,
    Fixed,
}

impl From<AdvanceMode> for WindowAdvance {
    fn from(a: AdvanceMode) -> Self {
        match a {
            AdvanceMode::GlobalMin => WindowAdvance::GlobalMin,
            AdvanceMode::Fixed => WindowAdvance::Fixed,
        }
    }
}

/// Checks that cost time or memory; off unless asked for.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Diagnostics {
    /// Keep every executed sort key.
    pub trace: bool,
    /// Check QSM ownership after every window.
    pub audit: bool,
    /// Keep every window bound.
    pub windows: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub topology: TopologyConfig,
    #[serde(default)]
    pub flows: FlowConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_end_ms")]
    pub end_time_ms: f64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Memories per router; unlimited when absent.
    #[serde(default)]
    pub memory_capacity: Option<u32>,
    #[serde(default)]
    pub hardware: HardwareParams,
    /// Per-router overrides keyed by router id.
    #[serde(default)]
    pub routers: BTreeMap<String, HardwareOverrides>,
    /// Per-link overrides keyed by link index.
    #[serde(default)]
    pub links: BTreeMap<String, HardwareOverrides>,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub lookahead: LookaheadMode,
    #[serde(default)]
    pub advance: AdvanceMode,
    #[serde(default)]
    pub transport: TransportKind,
    #[serde(default)]
    pub features: Features,
    /// Listen address of the global QSM; overridden by `QNET_QSM_ENDPOINT`.
    #[serde(default)]
    pub server_endpoint: Option<String>,
    #[serde(default)]
    pub diagnostics: Diagnostics,
}

fn default_end_ms() -> f64 {
    100.0
}

fn default_workers() -> usize {
    1
}

impl RunConfig {
    /// A linear network with everything else at its default.
    pub fn linear(routers: u32) -> Self {
        RunConfig {
            topology: TopologyConfig::Linear { routers },
            flows: FlowConfig::default(),
            seed: 0,
            end_time_ms: default_end_ms(),
            workers: 1,
            memory_capacity: None,
            hardware: HardwareParams::default(),
            routers: BTreeMap::new(),
            links: BTreeMap::new(),
            partition: PartitionConfig::default(),
            lookahead: LookaheadMode::default(),
            advance: AdvanceMode::default(),
            transport: TransportKind::default(),
            features: Features::default(),
            server_endpoint: None,
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn caveman(caves: usize, cave_size: usize) -> Self {
        RunConfig {
            topology: TopologyConfig::Caveman { caves, cave_size },
            partition: PartitionConfig {
                method: PartitionMethod::Caveman,
                ..PartitionConfig::default()
            },
            ..RunConfig::linear(2)
        }
    }

    pub fn end_time(&self) -> SimTime {
        SimTime::from_secs_f64(self.end_time_ms * 1e-3)
    }

    /// Digest of everything that determines simulation results. Worker
    /// count, partitioning, transport, lookahead and QSM flags are left
    /// out, so a parallel run hashes like its sequential baseline.
    pub fn config_hash(&self) -> String {
        let model = serde_json::json!({
            "topology": self.topology,
            "flows": self.flows,
            "seed": self.seed,
            "end_time_ms": self.end_time_ms,
            "memory_capacity": self.memory_capacity,
            "hardware": self.hardware,
            "routers": self.routers,
            "links": self.links,
            "purification": self.features.purification,
        });
        let digest = Sha256::digest(serde_json::to_vec(&model).expect("config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.end_time_ms.is_finite() && self.end_time_ms > 0.0) {
            return Err(ConfigError::field("end_time_ms", "must be positive"));
        }
        if self.workers == 0 {
            return Err(ConfigError::field("workers", "must be at least 1"));
        }
        if self.features.duplication_factor > MAX_DUPLICATION {
            return Err(ConfigError::field(
                "features.duplication_factor",
                format!("must be at most {MAX_DUPLICATION}"),
            ));
        }
        if self.flows.lanes == Some(0) {
            return Err(ConfigError::field("flows.lanes", "must be at least 1"));
        }
        self.hardware
            .validate()
            .map_err(|e| ConfigError::field(format!("hardware.{}", e.field), e.message))?;
        Ok(())
    }

    fn router_overrides(&self, routers: u32) -> Result<BTreeMap<RouterId, HardwareOverrides>, ConfigError> {
        let mut out = BTreeMap::new();
        for (k, o) in &self.routers {
            let r: RouterId = k
                .parse()
                .ok()
                .filter(|&r| r < routers)
                .ok_or_else(|| ConfigError::field(format!("routers.{k}"), format!("no router {k}")))?;
            self.hardware
                .with(o)
                .validate()
                .map_err(|e| ConfigError::field(format!("routers.{k}.{}", e.field), e.message))?;
            out.insert(r, o.clone());
        }
        Ok(out)
    }

    fn link_overrides(&self, links: usize) -> Result<BTreeMap<usize, HardwareOverrides>, ConfigError> {
        let mut out = BTreeMap::new();
        for (k, o) in &self.links {
            let i: usize = k
                .parse()
                .ok()
                .filter(|&i| i < links)
                .ok_or_else(|| ConfigError::field(format!("links.{k}"), format!("no link {k}")))?;
            self.hardware
                .with(o)
                .validate()
                .map_err(|e| ConfigError::field(format!("links.{k}.{}", e.field), e.message))?;
            out.insert(i, o.clone());
        }
        Ok(out)
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

/// Everything derived from a config before any simulation starts.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub spec: NetworkSpec,
    pub model: ModelConfig,
    pub pmap: PartitionMap,
}

fn topology_error(e: impl std::fmt::Display) -> ConfigError {
    ConfigError::field("topology", e.to_string())
}

pub fn build_network(cfg: &RunConfig) -> Result<NetworkSpec, ConfigError> {
    let mut spec = match cfg.topology {
        TopologyConfig::Linear { routers } => gen_linear(routers),
        TopologyConfig::Caveman { caves, cave_size } => gen_caveman(caves, cave_size),
        TopologyConfig::AsLike { routers, seed } => gen_as_like(routers, seed),
    }
    .map_err(topology_error)?;

    let links = cfg.link_overrides(spec.links.len())?;
    for (i, l) in spec.links.iter_mut().enumerate() {
        l.length_km = links.get(&i).and_then(|o| o.qc_length).unwrap_or(cfg.hardware.qc_length);
    }

    let linear = matches!(cfg.topology, TopologyConfig::Linear { .. });
    let end_to_end = match cfg.flows.kind {
        FlowKind::Auto => linear,
        FlowKind::EndToEnd => true,
        FlowKind::Random => false,
    };
    spec.flows = if end_to_end {
        if !linear {
            return Err(ConfigError::field("flows.kind", "end-to-end flows need a linear topology"));
        }
        let lanes = cfg.flows.lanes.unwrap_or(50);
        vec![Flow {
            source: 0,
            dest: spec.routers - 1,
            path: (0..spec.routers).collect(),
            lanes,
        }]
    } else {
        gen_flows(&spec, cfg.flows.seed, cfg.flows.lanes.unwrap_or(25))
    };
    Ok(spec)
}

pub fn build_partition(cfg: &RunConfig, spec: &NetworkSpec) -> Result<PartitionMap, ConfigError> {
    let p = cfg.workers;
    let pc = &cfg.partition;
    let field = |e: crate::topology::TopologyError| ConfigError::field("partition", e.to_string());
    let anneal = |energy| {
        let defaults = AnnealConfig::default();
        let ac = AnnealConfig {
            iterations: pc.iterations.unwrap_or(defaults.iterations),
            initial_temperature: pc.initial_temperature,
            cooling: pc.cooling.unwrap_or(defaults.cooling),
            seed: pc.seed,
            energy,
        };
        anneal_partition(spec, p, &ac).map(|r| r.pmap).map_err(field)
    };
    match pc.method {
        PartitionMethod::Blocks => partition_blocks(spec, p).map_err(field),
        PartitionMethod::Caveman => partition_caveman(spec, p).map_err(field),
        PartitionMethod::AnnealP1 => anneal(EnergyKind::P1),
        PartitionMethod::AnnealP2 => anneal(EnergyKind::P2),
        PartitionMethod::AnnealP3 => anneal(EnergyKind::P3),
        PartitionMethod::Explicit => {
            let assign = pc
                .assign
                .clone()
                .ok_or_else(|| ConfigError::field("partition.assign", "required by the explicit method"))?;
            if assign.len() != spec.routers as usize {
                return Err(ConfigError::field(
                    "partition.assign",
                    format!("has {} entries for {} routers", assign.len(), spec.routers),
                ));
            }
            if let Some(r) = assign.iter().position(|&w| w >= p) {
                return Err(ConfigError::field(
                    format!("partition.assign.{r}"),
                    format!("worker {} out of range for {p} workers", assign[r]),
                ));
            }
            let used: BTreeSet<usize> = assign.iter().copied().collect();
            if used.len() != p {
                return Err(ConfigError::field("partition.assign", format!("leaves a worker of {p} empty")));
            }
            Ok(PartitionMap { workers: p, assign })
        }
    }
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared, ConfigError> {
    cfg.validate()?;
    let spec = build_network(cfg)?;
    let model = ModelConfig {
        hardware: cfg.hardware.clone(),
        router_overrides: cfg.router_overrides(spec.routers)?,
        link_overrides: cfg.link_overrides(spec.links.len())?,
        purification: cfg.features.purification,
        memory_capacity: cfg.memory_capacity,
    };
    let pmap = build_partition(cfg, &spec)?;
    Ok(Prepared { spec, model, pmap })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_hardware_block_means_defaults() {
        let cfg = parse_config("[topology]\nkind = \"linear\"\nrouters = 4\n[hardware]\n").unwrap();
        assert_eq!(cfg.hardware, HardwareParams::default());
        assert_eq!(cfg.end_time(), SimTime::from_ms(100));
        assert_eq!(cfg.workers, 1);
        assert!(cfg.features.batching && cfg.features.offloading);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config("[topology]\nkind = \"linear\"\nrouters = 4\n[hardware]\nwarp = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(m) if m.contains("warp")));
        assert!(parse_config("bogus = 1\n[topology]\nkind = \"linear\"\nrouters = 4\n").is_err());
    }

    #[test]
    fn negative_length_names_the_field() {
        let err = parse_config("[topology]\nkind = \"linear\"\nrouters = 4\n[hardware]\nqc_length = -1.0\n").unwrap_err();
        assert!(matches!(&err, ConfigError::Validation { field, .. } if field == "hardware.qc_length"), "{err}");
        let mut cfg = RunConfig::linear(4);
        cfg.links.insert(
            "2".into(),
            HardwareOverrides {
                qc_length: Some(-3.0),
                ..HardwareOverrides::default()
            },
        );
        let err = prepare(&cfg).unwrap_err();
        assert!(matches!(&err, ConfigError::Validation { field, .. } if field == "links.2.qc_length"), "{err}");
    }

    #[test]
    fn explicit_map_must_cover_every_router() {
        let text = "workers = 2\n[topology]\nkind = \"linear\"\nrouters = 4\n[partition]\nmethod = \"explicit\"\nassign = [0, 0, 1]\n";
        let cfg = parse_config(text).unwrap();
        let err = prepare(&cfg).unwrap_err();
        assert!(matches!(&err, ConfigError::Validation { field, .. } if field == "partition.assign"), "{err}");
        let ok = parse_config(&text.replace("[0, 0, 1]", "[0, 0, 1, 1]")).unwrap();
        assert_eq!(prepare(&ok).unwrap().pmap.assign, vec![0, 0, 1, 1]);
    }

    #[test]
    fn link_lengths_follow_overrides() {
        let mut cfg = RunConfig::linear(3);
        cfg.links.insert(
            "1".into(),
            HardwareOverrides {
                qc_length: Some(10.0),
                ..HardwareOverrides::default()
            },
        );
        let spec = build_network(&cfg).unwrap();
        assert_eq!(spec.links[0].length_km, 1.0);
        assert_eq!(spec.links[1].length_km, 10.0);
        assert_eq!(spec.flows.len(), 1);
        assert_eq!(spec.flows[0].lanes, 50);
        assert_eq!(spec.memory_demand(), vec![50, 100, 50]);
    }

    #[test]
    fn hash_ignores_parallel_knobs() {
        let a = RunConfig::linear(8);
        let mut b = a.clone();
        b.workers = 4;
        b.lookahead = LookaheadMode::HalfClassical;
        b.features.batching = false;
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed = 1;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = RunConfig::caveman(4, 4);
        cfg.workers = 4;
        cfg.routers.insert(
            "3".into(),
            HardwareOverrides {
                swap_success: Some(0.5),
                ..HardwareOverrides::default()
            },
        );
        let back = parse_config(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
