//! Weighted undirected interaction topologies and their Laplacian spectra.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{invalid, Result};

/// Label used by the switching signal to name a topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TopologyId(pub u32);

impl core::fmt::Display for TopologyId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An undirected weighted graph over agents `1..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    id: TopologyId,
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl Topology {
    /// Builds a topology from 1-based edges. Each unordered pair may appear
    /// once; weights must be positive and finite.
    pub fn new(id: TopologyId, n: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        if n == 0 {
            return Err(invalid("a topology needs at least one agent"));
        }
        let mut seen = BTreeSet::new();
        for &(i, j, w) in &edges {
            if i == 0 || j == 0 || i > n || j > n {
                return Err(invalid(format!("edge ({i}, {j}) references an agent outside 1..={n}")));
            }
            if i == j {
                return Err(invalid(format!("self-loop at agent {i}")));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(invalid(format!("edge ({i}, {j}) has non-positive weight {w}")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(invalid(format!("edge ({i}, {j}) listed twice")));
            }
        }
        Ok(Self { id, n, edges })
    }

    /// Unit-weight topology from 1-based vertex pairs.
    pub fn unit(id: TopologyId, n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        Self::new(id, n, pairs.iter().map(|&(i, j)| (i, j, 1.0)).collect())
    }

    pub fn id(&self) -> TopologyId {
        self.id
    }

    pub fn agent_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn with_id(mut self, id: TopologyId) -> Self {
        self.id = id;
        self
    }

    /// Union-find connectivity.
    pub fn is_connected(&self) -> bool {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut components = self.n;
        for &(i, j, _) in &self.edges {
            let (a, b) = (find(&mut parent, i - 1), find(&mut parent, j - 1));
            if a != b {
                parent[a] = b;
                components -= 1;
            }
        }
        components == 1
    }

    /// Relabels agents: agent `i` becomes `perm[i - 1]` (1-based targets).
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(invalid("permutation length differs from agent count"));
        }
        let edges = self.edges.iter().map(|&(i, j, w)| (perm[i - 1], perm[j - 1], w)).collect();
        Self::new(self.id, self.n, edges)
    }
}

/// `L = D - A`; row sums are zero by construction.
pub fn laplacian(topology: &Topology) -> DMatrix<f64> {
    let n = topology.n;
    let mut l = DMatrix::zeros(n, n);
    for &(i, j, w) in &topology.edges {
        let (a, b) = (i - 1, j - 1);
        l[(a, b)] -= w;
        l[(b, a)] -= w;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| l[(i, j)]).sum();
        l[(i, i)] = -off;
    }
    l
}

/// Eigen-decomposition of a Laplacian, eigenvalues ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    pub eigenvalues: DVector<f64>,
    /// Orthogonal eigenvector matrix, one eigenvector per column; the first
    /// component above `1e-12` in each column is positive.
    pub q: DMatrix<f64>,
}

pub fn spectral_decomposition(l: &DMatrix<f64>) -> Result<SpectralData> {
    if !l.is_square() || l.nrows() == 0 {
        return Err(invalid("Laplacian must be square and non-empty"));
    }
    crate::linalg::ensure_finite(l, "Laplacian")?;
    let asym = (l - l.transpose()).amax();
    if asym > 1e-10 * l.amax().max(1.0) {
        return Err(invalid(format!("Laplacian is not symmetric (max asymmetry {asym:e})")));
    }
    let n = l.nrows();
    let eig = l.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = DVector::from_fn(n, |k, _| eig.eigenvalues[order[k]]);
    let mut q = DMatrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        if let Some(first) = col.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                col = -col;
            }
        }
        q.set_column(k, &col);
    }
    Ok(SpectralData { eigenvalues, q })
}

/// Outcome of the topology-level defense condition: distinct Laplacian
/// eigenvalues and a monitored agent whose eigenvector row has no zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct DefenseVerdict {
    pub distinct_eigs: bool,
    pub witness_agents: Vec<usize>,
    pub satisfied: bool,
    /// Smallest gap between consecutive eigenvalues.
    pub min_gap: f64,
    /// Some inspected eigenvector entry fell in the ambiguous band
    /// `(1e-10, 1e-8]`.
    pub uncertain: bool,
}

pub const EIGEN_GAP_TOL: f64 = 1e-8;
pub const Q_ENTRY_TOL: f64 = 1e-8;
const Q_ENTRY_FLOOR: f64 = 1e-10;

/// `monitored` holds 1-based agent indices.
pub fn check_defense_condition(spec: &SpectralData, monitored: &[usize]) -> Result<DefenseVerdict> {
    let n = spec.eigenvalues.len();
    if monitored.is_empty() {
        return Err(invalid("monitored set is empty"));
    }
    if let Some(&bad) = monitored.iter().find(|&&i| i == 0 || i > n) {
        return Err(invalid(format!("monitored agent {bad} outside 1..={n}")));
    }
    let lambda_max = spec.eigenvalues.iter().copied().fold(0.0, f64::max);
    let min_gap = spec
        .eigenvalues
        .as_slice()
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let distinct_eigs = n == 1 || min_gap > EIGEN_GAP_TOL * (1.0 + lambda_max);

    let mut uncertain = false;
    let mut witness_agents = Vec::new();
    for &i in monitored {
        let row = spec.q.row(i - 1);
        if row.iter().all(|x| x.abs() > Q_ENTRY_TOL) {
            witness_agents.push(i);
        }
        if row.iter().any(|x| x.abs() > Q_ENTRY_FLOOR && x.abs() <= Q_ENTRY_TOL) {
            uncertain = true;
        }
    }
    let satisfied = distinct_eigs && !witness_agents.is_empty();
    Ok(DefenseVerdict { distinct_eigs, witness_agents, satisfied, min_gap, uncertain })
}

/// Topology generators with unit weights.
pub mod library {
    use super::*;

    pub fn path(id: TopologyId, n: usize) -> Topology {
        let pairs: Vec<_> = (1..n).map(|i| (i, i + 1)).collect();
        Topology::unit(id, n, &pairs).expect("path edges are valid")
    }

    /// Path visiting the agents in the given order.
    pub fn path_through(id: TopologyId, order: &[usize]) -> Result<Topology> {
        let pairs: Vec<_> = order.windows(2).map(|w| (w[0], w[1])).collect();
        Topology::unit(id, order.len(), &pairs)
    }

    pub fn cycle(id: TopologyId, n: usize) -> Topology {
        let mut pairs: Vec<_> = (1..n).map(|i| (i, i + 1)).collect();
        if n > 2 {
            pairs.push((n, 1));
        }
        Topology::unit(id, n, &pairs).expect("cycle edges are valid")
    }

    /// Star with agent 1 at the center.
    pub fn star(id: TopologyId, n: usize) -> Topology {
        let pairs: Vec<_> = (2..=n).map(|i| (1, i)).collect();
        Topology::unit(id, n, &pairs).expect("star edges are valid")
    }

    pub fn complete(id: TopologyId, n: usize) -> Topology {
        let mut pairs = Vec::new();
        for i in 1..=n {
            for j in i + 1..=n {
                pairs.push((i, j));
            }
        }
        Topology::unit(id, n, &pairs).expect("complete edges are valid")
    }

    /// `base` plus two leaf agents `twins` hung off the same `hub`, so that
    /// `e_a - e_b` is a Laplacian eigenvector with eigenvalue 1. The twins
    /// must not appear in `base`.
    pub fn with_twin_leaves(base: &Topology, twins: (usize, usize), hub: usize) -> Result<Topology> {
        let touches = |a: usize| base.edges().iter().any(|&(i, j, _)| i == a || j == a);
        if touches(twins.0) || touches(twins.1) {
            return Err(invalid("twin agents must be isolated in the base topology"));
        }
        let mut edges = base.edges().to_vec();
        edges.push((twins.0, hub, 1.0));
        edges.push((twins.1, hub, 1.0));
        Topology::new(base.id(), base.agent_count(), edges)
    }

    /// Random connected unit-weight graph: a random spanning tree plus each
    /// remaining pair with probability `extra_edge_prob`.
    pub fn random_connected<R: Rng + ?Sized>(id: TopologyId, n: usize, extra_edge_prob: f64, rng: &mut R) -> Topology {
        let mut order: Vec<usize> = (1..=n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut set = BTreeSet::new();
        for k in 1..n {
            let parent = order[rng.random_range(0..k)];
            let child = order[k];
            set.insert((parent.min(child), parent.max(child)));
        }
        for i in 1..=n {
            for j in i + 1..=n {
                if !set.contains(&(i, j)) && rng.random_bool(extra_edge_prob.clamp(0.0, 1.0)) {
                    set.insert((i, j));
                }
            }
        }
        let pairs: Vec<_> = set.into_iter().collect();
        Topology::unit(id, n, &pairs).expect("generated edges are valid")
    }

    /// The 16-agent topologies used by the reference experiment. Topologies
    /// 1 and 2 keep agents 4 and 5 as twin leaves of a common hub; 3 and 4
    /// are Hamiltonian paths that pass the defense condition for
    /// monitored agents {1, 2, 3}.
    pub fn experiment(id: u32) -> Option<Topology> {
        let tid = TopologyId(id);
        match id {
            1 => {
                let mut pairs = alloc::vec![(1, 2), (2, 3), (3, 6)];
                pairs.extend((6..16).map(|i| (i, i + 1)));
                pairs.extend([(4, 6), (5, 6)]);
                Topology::unit(tid, 16, &pairs).ok()
            }
            2 => {
                let mut pairs = alloc::vec![(1, 3), (3, 2), (2, 16), (16, 7), (7, 12)];
                pairs.extend([(12, 9), (9, 14), (14, 11), (11, 8), (8, 15), (15, 6), (6, 13), (13, 10)]);
                pairs.extend([(1, 10), (4, 11), (5, 11)]);
                Topology::unit(tid, 16, &pairs).ok()
            }
            3 => Some(path(tid, 16)),
            4 => path_through(tid, &[1, 3, 5, 7, 9, 11, 13, 15, 16, 14, 12, 10, 8, 6, 4, 2]).ok(),
            _ => None,
        }
    }
}
