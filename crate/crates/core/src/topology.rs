//! Network topologies and traffic flows.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::EntityRng;

pub type RouterId = u32;

/// Default fiber length between adjacent routers, in km.
pub const DEFAULT_LINK_KM: f64 = 1.0;
/// Independent repeater chains opened per flow.
pub const DEFAULT_LANES: u32 = 25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("{workers} workers cannot evenly hold {units} caves")]
    IndivisiblePartition { units: usize, workers: usize },
    #[error("quantum link graph is disconnected")]
    Disconnected,
    #[error("invalid link {0}-{1}")]
    InvalidLink(RouterId, RouterId),
    #[error("flow {0} has an invalid path")]
    InvalidFlow(usize),
}

/// Undirected quantum link; a BSM node sits at the midpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub a: RouterId,
    pub b: RouterId,
    pub length_km: f64,
}

impl Link {
    pub fn new(a: RouterId, b: RouterId) -> Self {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        Link {
            a,
            b,
            length_km: DEFAULT_LINK_KM,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flow {
    pub source: RouterId,
    pub dest: RouterId,
    /// Shortest path from source to destination, both inclusive.
    pub path: Vec<RouterId>,
    pub lanes: u32,
}

impl Flow {
    pub fn hops(&self) -> usize {
        self.path.len() - 1
    }

    /// Memories this flow needs at `router`: one per lane at the ends, two
    /// per lane in between.
    pub fn demand_at(&self, router: RouterId) -> u32 {
        match self.path.iter().position(|&r| r == router) {
            None => 0,
            Some(i) if i == 0 || i == self.path.len() - 1 => self.lanes,
            Some(_) => 2 * self.lanes,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caves {
    pub count: usize,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub routers: u32,
    pub links: Vec<Link>,
    #[serde(default)]
    pub flows: Vec<Flow>,
    /// Cave structure when the graph came from the caveman generator.
    #[serde(default)]
    pub caves: Option<Caves>,
}

impl NetworkSpec {
    pub fn new(routers: u32, links: Vec<Link>) -> Result<Self, TopologyError> {
        let spec = NetworkSpec {
            routers,
            links,
            flows: Vec::new(),
            caves: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.routers < 2 {
            return Err(TopologyError::InvalidSize(format!(
                "need at least 2 routers, got {}",
                self.routers
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &self.links {
            if l.a == l.b || l.b >= self.routers || !seen.insert((l.a.min(l.b), l.a.max(l.b))) {
                return Err(TopologyError::InvalidLink(l.a, l.b));
            }
            if !(l.length_km.is_finite() && l.length_km >= 0.0) {
                return Err(TopologyError::InvalidLink(l.a, l.b));
            }
        }
        if bfs(&self.adjacency(), 0).iter().any(|d| d.is_none()) {
            return Err(TopologyError::Disconnected);
        }
        for (i, f) in self.flows.iter().enumerate() {
            let ok = f.path.len() >= 2
                && f.path[0] == f.source
                && *f.path.last().unwrap() == f.dest
                && f.path.windows(2).all(|w| self.link_index(w[0], w[1]).is_some());
            if !ok {
                return Err(TopologyError::InvalidFlow(i));
            }
        }
        Ok(())
    }

    /// Sorted neighbor lists.
    pub fn adjacency(&self) -> Vec<Vec<RouterId>> {
        let mut adj = vec![Vec::new(); self.routers as usize];
        for l in &self.links {
            adj[l.a as usize].push(l.b);
            adj[l.b as usize].push(l.a);
        }
        for n in &mut adj {
            n.sort_unstable();
        }
        adj
    }

    pub fn link_index(&self, a: RouterId, b: RouterId) -> Option<usize> {
        let (a, b) = (a.min(b), a.max(b));
        self.links.iter().position(|l| l.a == a && l.b == b)
    }

    /// Total memories each router needs to serve all flows.
    pub fn memory_demand(&self) -> Vec<u32> {
        let mut d = vec![0u32; self.routers as usize];
        for f in &self.flows {
            for &r in &f.path {
                d[r as usize] += f.demand_at(r);
            }
        }
        d
    }

    /// Renames router `r` to `perm[r]`. Cave metadata is dropped since ids
    /// no longer follow the cave layout.
    pub fn relabel(&self, perm: &[RouterId]) -> Result<NetworkSpec, TopologyError> {
        let mut seen = vec![false; self.routers as usize];
        if perm.len() != seen.len() {
            return Err(TopologyError::InvalidSize("permutation length".into()));
        }
        for &r in perm {
            if r >= self.routers || std::mem::replace(&mut seen[r as usize], true) {
                return Err(TopologyError::InvalidSize("not a permutation".into()));
            }
        }
        let map = |r: RouterId| perm[r as usize];
        let links = self
            .links
            .iter()
            .map(|l| Link { length_km: l.length_km, ..Link::new(map(l.a), map(l.b)) })
            .collect();
        let flows = self
            .flows
            .iter()
            .map(|f| Flow {
                source: map(f.source),
                dest: map(f.dest),
                path: f.path.iter().map(|&r| map(r)).collect(),
                lanes: f.lanes,
            })
            .collect();
        let spec = NetworkSpec { routers: self.routers, links, flows, caves: None };
        spec.validate()?;
        Ok(spec)
    }

    pub fn total_memories(&self) -> u64 {
        self.memory_demand().iter().map(|&m| m as u64).sum()
    }
}

/// Hop distances from `src`; `None` for unreachable routers.
pub fn bfs(adj: &[Vec<RouterId>], src: RouterId) -> Vec<Option<usize>> {
    bfs_tree(adj, src).0
}

fn bfs_tree(adj: &[Vec<RouterId>], src: RouterId) -> (Vec<Option<usize>>, Vec<Option<RouterId>>) {
    let mut dist = vec![None; adj.len()];
    let mut parent = vec![None; adj.len()];
    dist[src as usize] = Some(0);
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        let du = dist[u as usize].unwrap();
        for &v in &adj[u as usize] {
            if dist[v as usize].is_none() {
                dist[v as usize] = Some(du + 1);
                parent[v as usize] = Some(u);
                q.push_back(v);
            }
        }
    }
    (dist, parent)
}

/// Deterministic shortest path: BFS over sorted adjacency.
pub fn shortest_path(adj: &[Vec<RouterId>], src: RouterId, dst: RouterId) -> Option<Vec<RouterId>> {
    let (dist, parent) = bfs_tree(adj, src);
    dist[dst as usize]?;
    let mut path = vec![dst];
    let mut cur = dst;
    while let Some(p) = parent[cur as usize] {
        path.push(p);
        cur = p;
    }
    path.reverse();
    Some(path)
}

pub fn gen_linear(n: u32) -> Result<NetworkSpec, TopologyError> {
    if n < 2 {
        return Err(TopologyError::InvalidSize(format!("linear network needs n >= 2, got {n}")));
    }
    NetworkSpec::new(n, (0..n - 1).map(|i| Link::new(i, i + 1)).collect())
}

/// `n_caves` cliques of `k` routers. In each cave the edge between its first
/// two routers is replaced by an edge from its first router to the last
/// router of the previous cave, closing the caves into a ring.
pub fn gen_caveman(n_caves: usize, k: usize) -> Result<NetworkSpec, TopologyError> {
    if n_caves < 2 || k < 2 {
        return Err(TopologyError::InvalidSize(format!(
            "caveman graph needs n_caves >= 2 and k >= 2, got ({n_caves}, {k})"
        )));
    }
    let n = n_caves * k;
    let mut links = Vec::with_capacity(n_caves * k * (k - 1) / 2);
    for c in 0..n_caves {
        let start = c * k;
        for i in start..start + k {
            for j in i + 1..start + k {
                if (i, j) != (start, start + 1) {
                    links.push(Link::new(i as u32, j as u32));
                }
            }
        }
        links.push(Link::new(start as u32, ((start + n - 1) % n) as u32));
    }
    let mut spec = NetworkSpec::new(n as u32, links)?;
    spec.caves = Some(Caves { count: n_caves, size: k });
    Ok(spec)
}

/// Internet-like graph grown by preferential attachment.
///
/// Each new router attaches to one existing router chosen with probability
/// proportional to degree, and with probability 1/4 to a second one. The
/// result is a sparse core of hubs with many low-degree edge routers.
pub fn gen_as_like(n: u32, seed: u64) -> Result<NetworkSpec, TopologyError> {
    if n < 2 {
        return Err(TopologyError::InvalidSize(format!("AS-like network needs n >= 2, got {n}")));
    }
    let mut rng = EntityRng::derive(seed, "topology:as");
    let mut links = vec![Link::new(0, 1)];
    // Each endpoint appears once per incident link.
    let mut ends: Vec<RouterId> = vec![0, 1];
    for v in 2..n {
        let first = ends[rng.below(ends.len())];
        links.push(Link::new(v, first));
        let extra = rng.bernoulli(0.25);
        let second = ends[rng.below(ends.len())];
        ends.extend([v, first]);
        if extra && second != first {
            links.push(Link::new(v, second));
            ends.extend([v, second]);
        }
    }
    NetworkSpec::new(n, links)
}

/// `ceil(Exp(1))`, at least 1.
pub fn draw_hop_count(rng: &mut EntityRng) -> usize {
    let u = rng.next_f64();
    let x = -(1.0 - u).ln();
    (x.ceil() as usize).max(1)
}

/// One flow per router. The hop count is drawn from `ceil(Exp(1))`; the
/// destination is uniform among routers at that distance, or at the nearest
/// distance that exists.
pub fn gen_flows(spec: &NetworkSpec, seed: u64, lanes: u32) -> Vec<Flow> {
    let adj = spec.adjacency();
    let mut rng = EntityRng::derive(seed, "topology:flows");
    let mut flows = Vec::with_capacity(spec.routers as usize);
    for src in 0..spec.routers {
        let h = draw_hop_count(&mut rng);
        let (dist, _) = bfs_tree(&adj, src);
        let max_d = dist.iter().flatten().copied().max().unwrap_or(0);
        let target = if max_d == 0 {
            continue;
        } else {
            (1..=max_d)
                .filter(|&d| dist.iter().any(|x| *x == Some(d)))
                .min_by_key(|&d| (d.abs_diff(h), d))
                .unwrap()
        };
        let candidates: Vec<RouterId> = (0..spec.routers)
            .filter(|&r| dist[r as usize] == Some(target))
            .collect();
        let dest = candidates[rng.below(candidates.len())];
        let path = shortest_path(&adj, src, dest).expect("reachable");
        flows.push(Flow {
            source: src,
            dest,
            path,
            lanes,
        });
    }
    flows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_has_n_minus_one_links() {
        assert_eq!(gen_linear(5).unwrap().links.len(), 4);
        assert!(matches!(gen_linear(1), Err(TopologyError::InvalidSize(_))));
    }

    #[test]
    fn caveman_sizes_and_edge_count() {
        for (c, k) in [(4usize, 4usize), (128, 8), (3, 3)] {
            let g = gen_caveman(c, k).unwrap();
            assert_eq!(g.routers as usize, c * k);
            assert_eq!(g.links.len(), c * k * (k - 1) / 2);
        }
    }

    #[test]
    fn caveman_ring_edges() {
        let g = gen_caveman(4, 4).unwrap();
        assert!(g.link_index(0, 1).is_none());
        assert!(g.link_index(0, 15).is_some());
        assert!(g.link_index(4, 3).is_some());
        let cross = g.links.iter().filter(|l| l.a / 4 != l.b / 4).count();
        assert_eq!(cross, 4);
    }

    #[test]
    fn as_like_is_connected_and_heavy_tailed() {
        let g = gen_as_like(1024, 0).unwrap();
        let adj = g.adjacency();
        let max_deg = adj.iter().map(Vec::len).max().unwrap();
        let leaves = adj.iter().filter(|n| n.len() == 1).count();
        assert!(max_deg >= 30, "max degree {max_deg}");
        assert!(leaves > 300, "leaves {leaves}");
        assert_eq!(g, gen_as_like(1024, 0).unwrap());
    }

    #[test]
    fn flows_reproducible_and_valid() {
        let mut g = gen_caveman(8, 4).unwrap();
        let a = gen_flows(&g, 9, DEFAULT_LANES);
        assert_eq!(a, gen_flows(&g, 9, DEFAULT_LANES));
        assert_ne!(a, gen_flows(&g, 10, DEFAULT_LANES));
        g.flows = a;
        g.validate().unwrap();
        let adj = g.adjacency();
        for f in &g.flows {
            assert_eq!(bfs(&adj, f.source)[f.dest as usize], Some(f.hops()));
        }
    }

    #[test]
    fn two_router_flows() {
        let g = gen_linear(2).unwrap();
        let f = gen_flows(&g, 1, 25);
        assert_eq!(f.len(), 2);
        assert_eq!(f[0].path, vec![0, 1]);
        assert_eq!(f[1].path, vec![1, 0]);
    }

    #[test]
    fn memory_demand_per_role() {
        let mut g = gen_linear(4).unwrap();
        g.flows = vec![Flow { source: 0, dest: 3, path: vec![0, 1, 2, 3], lanes: 25 }];
        assert_eq!(g.memory_demand(), vec![25, 50, 50, 25]);
        assert_eq!(g.total_memories(), 150);
    }

    #[test]
    fn rejects_duplicate_and_self_links() {
        assert!(NetworkSpec::new(3, vec![Link::new(0, 1), Link::new(1, 0), Link::new(1, 2)]).is_err());
        assert!(NetworkSpec::new(2, vec![Link::new(1, 1)]).is_err());
        assert_eq!(NetworkSpec::new(3, vec![Link::new(0, 1)]), Err(TopologyError::Disconnected));
    }
}
