//! Static assignment of memories and channel slots to flows.
//!
//! Every worker builds the same layout from the same network spec, so
//! memory addresses and slot numbers agree everywhere.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::params::{AttemptGrid, HardwareParams};
use super::{ModelConfig, ModelError};
use crate::event::EntityId;
use crate::partition::PartitionMap;
use crate::sync::Placement;
use crate::topology::{Flow, Link, NetworkSpec, RouterId, TopologyError};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MemAddr {
    pub router: RouterId,
    pub index: u32,
}

/// Which end of a hop a memory sits on, in the flow's direction.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// How a slot takes part in purification.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Role {
    Plain,
    Kept { sacrificial: u32 },
    Sacrificial { kept: u32 },
}

/// One lane of one hop of one flow: a memory at each end and a time slot
/// on the link's channel.
#[derive(Clone, Debug)]
pub struct Slot {
    pub flow: u32,
    pub hop: u32,
    pub lane: u32,
    pub link: u32,
    pub left: MemAddr,
    pub right: MemAddr,
    pub grid: AttemptGrid,
    pub role: Role,
}

impl Slot {
    pub fn mem(&self, side: Side) -> MemAddr {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }

    pub fn other(&self, side: Side) -> MemAddr {
        match side {
            Side::Left => self.right,
            Side::Right => self.left,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct MemInfo {
    pub slot: u32,
    pub side: Side,
}

#[derive(Clone, Debug)]
pub struct Layout {
    pub routers: u32,
    pub links: Vec<Link>,
    pub flows: Vec<Flow>,
    pub slots: Vec<Slot>,
    /// `memories[r][i]` describes memory `i` of router `r`.
    pub memories: Vec<Vec<MemInfo>>,
    flow_base: Vec<u32>,
    pub router_params: Vec<HardwareParams>,
    pub link_params: Vec<HardwareParams>,
    pub global: HardwareParams,
}

impl Layout {
    pub fn new(spec: &NetworkSpec, cfg: &ModelConfig) -> Result<Self, ModelError> {
        cfg.hardware.validate().map_err(|e| ModelError::Param(e.within("hardware.")))?;
        let n = spec.routers as usize;
        let mut router_params = vec![cfg.hardware.clone(); n];
        for (&r, o) in &cfg.router_overrides {
            let slot = router_params
                .get_mut(r as usize)
                .ok_or(ModelError::Topology(TopologyError::InvalidSize(format!("override for unknown router {r}"))))?;
            *slot = cfg.hardware.with(o);
            slot.validate().map_err(|e| ModelError::Param(e.within(&format!("routers.{r}."))))?;
        }
        let mut link_params = Vec::with_capacity(spec.links.len());
        for (i, l) in spec.links.iter().enumerate() {
            let mut p = match cfg.link_overrides.get(&i) {
                Some(o) => cfg.hardware.with(o),
                None => cfg.hardware.clone(),
            };
            p.qc_length = l.length_km;
            p.validate().map_err(|e| ModelError::Param(e.within(&format!("links.{i}."))))?;
            link_params.push(p);
        }
        if let Some(&i) = cfg.link_overrides.keys().find(|&&i| i >= spec.links.len()) {
            return Err(ModelError::Topology(TopologyError::InvalidSize(format!(
                "override for unknown link {i}"
            ))));
        }

        let demand = spec.memory_demand();
        if let Some(cap) = cfg.memory_capacity {
            if let Some((r, &d)) = demand.iter().enumerate().find(|(_, &d)| d > cap) {
                return Err(ModelError::Capacity {
                    router: r as RouterId,
                    demand: d,
                    capacity: cap,
                });
            }
        }

        let mut memories: Vec<Vec<MemInfo>> = vec![Vec::new(); n];
        let mut frames = vec![0u32; spec.links.len()];
        let mut slots = Vec::new();
        let mut flow_base = Vec::with_capacity(spec.flows.len());
        for (fi, flow) in spec.flows.iter().enumerate() {
            if flow.lanes == 0 || flow.path.len() < 2 || flow.path[0] != flow.source || *flow.path.last().unwrap() != flow.dest {
                return Err(ModelError::Topology(TopologyError::InvalidFlow(fi)));
            }
            flow_base.push(slots.len() as u32);
            for (hop, w) in flow.path.windows(2).enumerate() {
                let link = spec
                    .link_index(w[0], w[1])
                    .ok_or(ModelError::Topology(TopologyError::InvalidFlow(fi)))?;
                let lp = &link_params[link];
                for lane in 0..flow.lanes {
                    let s = slots.len() as u32;
                    let mut alloc = |r: RouterId, side: Side| {
                        let m = &mut memories[r as usize];
                        m.push(MemInfo { slot: s, side });
                        MemAddr {
                            router: r,
                            index: m.len() as u32 - 1,
                        }
                    };
                    let left = alloc(w[0], Side::Left);
                    let right = alloc(w[1], Side::Right);
                    let grid = AttemptGrid::new(lp.memory_period(), lp.frame(), frames[link]);
                    frames[link] += 1;
                    let role = if !cfg.purification {
                        Role::Plain
                    } else if lane % 2 == 0 && lane + 1 < flow.lanes {
                        Role::Kept { sacrificial: s + 1 }
                    } else if lane % 2 == 1 {
                        Role::Sacrificial { kept: s - 1 }
                    } else {
                        Role::Plain
                    };
                    slots.push(Slot {
                        flow: fi as u32,
                        hop: hop as u32,
                        lane,
                        link: link as u32,
                        left,
                        right,
                        grid,
                        role,
                    });
                }
            }
        }

        Ok(Layout {
            routers: spec.routers,
            links: spec.links.clone(),
            flows: spec.flows.clone(),
            slots,
            memories,
            flow_base,
            router_params,
            link_params,
            global: cfg.hardware.clone(),
        })
    }

    pub fn slot_of(&self, flow: u32, hop: u32, lane: u32) -> u32 {
        self.flow_base[flow as usize] + hop * self.flows[flow as usize].lanes + lane
    }

    pub fn info(&self, m: MemAddr) -> MemInfo {
        self.memories[m.router as usize][m.index as usize]
    }

    /// Position of the memory's router along its flow's path.
    pub fn position(&self, m: MemAddr) -> u32 {
        let info = self.info(m);
        let slot = &self.slots[info.slot as usize];
        match info.side {
            Side::Left => slot.hop,
            Side::Right => slot.hop + 1,
        }
    }

    /// The memory at path position `pos` facing the source.
    pub fn toward_source(&self, flow: u32, pos: u32, lane: u32) -> Option<MemAddr> {
        (pos > 0).then(|| self.slots[self.slot_of(flow, pos - 1, lane) as usize].right)
    }

    /// The memory at path position `pos` facing the destination.
    pub fn toward_dest(&self, flow: u32, pos: u32, lane: u32) -> Option<MemAddr> {
        let hops = self.flows[flow as usize].hops() as u32;
        (pos < hops).then(|| self.slots[self.slot_of(flow, pos, lane) as usize].left)
    }

    pub fn router_entity(&self, r: RouterId) -> EntityId {
        EntityId(r)
    }

    pub fn bsm_entity(&self, link: u32) -> EntityId {
        EntityId(self.routers + link)
    }

    pub fn entity_count(&self) -> usize {
        self.routers as usize + self.links.len()
    }

    /// `Some(r)` for router entities, `None` for BSM nodes.
    pub fn as_router(&self, e: EntityId) -> Option<RouterId> {
        (e.0 < self.routers).then_some(e.0)
    }

    pub fn as_link(&self, e: EntityId) -> Option<u32> {
        (e.0 >= self.routers).then(|| e.0 - self.routers)
    }

    pub fn entity_name(&self, e: EntityId) -> String {
        match self.as_router(e) {
            Some(r) => format!("router:{r}"),
            None => {
                let l = &self.links[(e.0 - self.routers) as usize];
                format!("bsm:{}-{}", l.a, l.b)
            }
        }
    }

    /// Routers follow the partition; a BSM node lives with the lower-id
    /// router of its link and is lagged when its link is in `lagged_links`.
    pub fn placement(&self, pmap: &PartitionMap, lagged_links: &BTreeSet<(RouterId, RouterId)>) -> Placement {
        let mut worker = pmap.assign.clone();
        let mut lagged = vec![false; self.routers as usize];
        for l in &self.links {
            worker.push(pmap.worker_of(l.a.min(l.b)));
            lagged.push(lagged_links.contains(&(l.a.min(l.b), l.a.max(l.b))));
        }
        Placement::new(worker, lagged)
    }
}
