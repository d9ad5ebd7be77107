//! Router-to-worker assignment and partition quality measures.

use serde::{Deserialize, Serialize};

use crate::event::WorkerId;
use crate::rng::EntityRng;
use crate::topology::{NetworkSpec, RouterId, TopologyError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionMap {
    pub workers: usize,
    /// `assign[r]` is the worker owning router `r`.
    pub assign: Vec<WorkerId>,
}

impl PartitionMap {
    pub fn worker_of(&self, r: RouterId) -> WorkerId {
        self.assign[r as usize]
    }

    pub fn routers_on(&self, w: WorkerId) -> Vec<RouterId> {
        (0..self.assign.len() as RouterId)
            .filter(|&r| self.assign[r as usize] == w)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.workers];
        for &w in &self.assign {
            s[w] += 1;
        }
        s
    }

    pub fn validate(&self, routers: u32) -> Result<(), TopologyError> {
        if self.workers == 0 || self.assign.len() != routers as usize {
            return Err(TopologyError::InvalidSize("partition does not cover every router".into()));
        }
        if let Some(&w) = self.assign.iter().find(|&&w| w >= self.workers) {
            return Err(TopologyError::InvalidSize(format!("worker {w} out of range")));
        }
        Ok(())
    }
}

fn check_workers(spec: &NetworkSpec, p: usize) -> Result<(), TopologyError> {
    if p == 0 || p > spec.routers as usize {
        return Err(TopologyError::InvalidSize(format!(
            "{p} workers for {} routers",
            spec.routers
        )));
    }
    Ok(())
}

/// Contiguous blocks of router ids; block sizes differ by at most one.
pub fn partition_blocks(spec: &NetworkSpec, p: usize) -> Result<PartitionMap, TopologyError> {
    check_workers(spec, p)?;
    let n = spec.routers as usize;
    let (base, extra) = (n / p, n % p);
    let mut assign = Vec::with_capacity(n);
    for w in 0..p {
        let size = base + usize::from(w < extra);
        assign.extend(std::iter::repeat(w).take(size));
    }
    Ok(PartitionMap { workers: p, assign })
}

/// Whole caves per worker, neighboring caves together.
pub fn partition_caveman(spec: &NetworkSpec, p: usize) -> Result<PartitionMap, TopologyError> {
    check_workers(spec, p)?;
    let caves = spec
        .caves
        .ok_or_else(|| TopologyError::InvalidSize("network has no cave structure".into()))?;
    if caves.count % p != 0 {
        return Err(TopologyError::IndivisiblePartition {
            units: caves.count,
            workers: p,
        });
    }
    let per = caves.count / p;
    let assign = (0..spec.routers as usize)
        .map(|r| (r / caves.size) / per)
        .collect();
    Ok(PartitionMap { workers: p, assign })
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnergyKind {
    /// Flows whose path crosses a worker boundary.
    P1,
    /// Quantum links between different workers.
    P2,
    /// Coefficient of variation of per-worker memory load.
    P3,
}

/// Population standard deviation over mean; 0 for an all-zero load.
pub fn coefficient_of_variation(loads: &[f64]) -> f64 {
    if loads.is_empty() {
        return 0.0;
    }
    let n = loads.len() as f64;
    let mean = loads.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = loads.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

pub fn worker_memory_loads(spec: &NetworkSpec, pmap: &PartitionMap) -> Vec<f64> {
    let mut loads = vec![0.0; pmap.workers];
    for (r, d) in spec.memory_demand().into_iter().enumerate() {
        loads[pmap.assign[r]] += d as f64;
    }
    loads
}

pub fn energy(spec: &NetworkSpec, pmap: &PartitionMap, kind: EnergyKind) -> f64 {
    match kind {
        EnergyKind::P1 => spec
            .flows
            .iter()
            .filter(|f| {
                f.path
                    .windows(2)
                    .any(|w| pmap.worker_of(w[0]) != pmap.worker_of(w[1]))
            })
            .count() as f64,
        EnergyKind::P2 => spec
            .links
            .iter()
            .filter(|l| pmap.worker_of(l.a) != pmap.worker_of(l.b))
            .count() as f64,
        EnergyKind::P3 => coefficient_of_variation(&worker_memory_loads(spec, pmap)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealConfig {
    pub iterations: u64,
    /// `None` starts at the initial energy, or 1 if that is zero.
    pub initial_temperature: Option<f64>,
    pub cooling: f64,
    pub seed: u64,
    pub energy: EnergyKind,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            iterations: 10_000,
            initial_temperature: None,
            cooling: 0.995,
            seed: 0,
            energy: EnergyKind::P2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnealResult {
    pub pmap: PartitionMap,
    pub initial_energy: f64,
    pub energy: f64,
    pub accepted: u64,
}

/// Simulated annealing over router swaps between workers, starting from the
/// even block assignment. Returns the lowest-energy state seen.
pub fn anneal_partition(
    spec: &NetworkSpec,
    p: usize,
    cfg: &AnnealConfig,
) -> Result<AnnealResult, TopologyError> {
    if !(cfg.cooling > 0.0 && cfg.cooling < 1.0) {
        return Err(TopologyError::InvalidSize(format!("cooling {} not in (0, 1)", cfg.cooling)));
    }
    let mut cur = partition_blocks(spec, p)?;
    let e0 = energy(spec, &cur, cfg.energy);
    let mut result = AnnealResult {
        pmap: cur.clone(),
        initial_energy: e0,
        energy: e0,
        accepted: 0,
    };
    if p < 2 {
        return Ok(result);
    }
    let mut rng = EntityRng::derive(cfg.seed, "partition:anneal");
    let mut t = cfg
        .initial_temperature
        .unwrap_or(if e0 > 0.0 { e0 } else { 1.0 });
    let mut e = e0;
    let n = spec.routers as usize;
    for _ in 0..cfg.iterations {
        let a = rng.below(n);
        let mut b = rng.below(n);
        while cur.assign[b] == cur.assign[a] {
            b = rng.below(n);
        }
        cur.assign.swap(a, b);
        let e_new = energy(spec, &cur, cfg.energy);
        let u = rng.next_f64();
        let delta = e_new - e;
        if delta <= 0.0 || u < (-delta / t).exp() {
            e = e_new;
            result.accepted += 1;
            if e < result.energy {
                result.energy = e;
                result.pmap = cur.clone();
            }
        } else {
            cur.assign.swap(a, b);
        }
        t *= cfg.cooling;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{gen_caveman, gen_linear, Flow};

    #[test]
    fn blocks_on_linear_1024() {
        let g = gen_linear(1024).unwrap();
        let p = partition_blocks(&g, 128).unwrap();
        assert!(p.assign[..8].iter().all(|&w| w == 0));
        assert_eq!(p.assign[8], 1);
        assert!(p.sizes().iter().all(|&s| s == 8));
    }

    #[test]
    fn uneven_blocks_differ_by_one() {
        let g = gen_linear(10).unwrap();
        let s = partition_blocks(&g, 4).unwrap().sizes();
        assert_eq!(s, vec![3, 3, 2, 2]);
    }

    #[test]
    fn single_worker() {
        let mut g = gen_caveman(4, 4).unwrap();
        g.flows = crate::topology::gen_flows(&g, 1, 25);
        let p = partition_blocks(&g, 1).unwrap();
        assert!(p.assign.iter().all(|&w| w == 0));
        for k in [EnergyKind::P1, EnergyKind::P2, EnergyKind::P3] {
            assert_eq!(energy(&g, &p, k), 0.0);
        }
    }

    #[test]
    fn caveman_alignment() {
        let g = gen_caveman(128, 8).unwrap();
        let p = partition_caveman(&g, 128).unwrap();
        assert_eq!(energy(&g, &p, EnergyKind::P2), 128.0);
        assert!(matches!(
            partition_caveman(&g, 3),
            Err(TopologyError::IndivisiblePartition { units: 128, workers: 3 })
        ));
        let q = partition_caveman(&g, 64).unwrap();
        assert_eq!(q.worker_of(15), 0);
        assert_eq!(q.worker_of(16), 1);
    }

    #[test]
    fn hand_counted_energies() {
        let mut g = gen_linear(4).unwrap();
        g.flows = vec![Flow { source: 0, dest: 3, path: vec![0, 1, 2, 3], lanes: 25 }];
        let p = partition_blocks(&g, 2).unwrap();
        assert_eq!(energy(&g, &p, EnergyKind::P1), 1.0);
        assert_eq!(energy(&g, &p, EnergyKind::P2), 1.0);
    }

    #[test]
    fn cv_of_loads() {
        let cv = coefficient_of_variation(&[100.0, 100.0, 100.0, 140.0]);
        assert!((cv - 0.157_459_164).abs() < 1e-6, "{cv}");
        assert_eq!(coefficient_of_variation(&[7.0; 5]), 0.0);
    }

    #[test]
    fn zero_iterations_returns_blocks() {
        let g = gen_caveman(4, 4).unwrap();
        let cfg = AnnealConfig { iterations: 0, ..Default::default() };
        let r = anneal_partition(&g, 4, &cfg).unwrap();
        assert_eq!(r.pmap, partition_blocks(&g, 4).unwrap());
    }

    #[test]
    fn anneal_reaches_cave_alignment() {
        let g = gen_caveman(4, 4).unwrap();
        let aligned = energy(&g, &partition_caveman(&g, 4).unwrap(), EnergyKind::P2);
        assert_eq!(aligned, 4.0);
        let perm: Vec<u32> = (0..16).map(|r| r * 5 % 16).collect();
        let g = g.relabel(&perm).unwrap();
        let cfg = AnnealConfig { seed: 3, ..Default::default() };
        let r = anneal_partition(&g, 4, &cfg).unwrap();
        assert!(r.initial_energy > aligned);
        assert!(r.energy <= aligned);
        assert!(r.energy <= r.initial_energy);
        assert_eq!(r.pmap.sizes(), vec![4; 4]);
        assert_eq!(r, anneal_partition(&g, 4, &cfg).unwrap());
    }
}
