//! Switched state-space model of the damped second-order consensus network
//! with attack channels: `ż = A_σ z + ğ`, `y = C z + D ğ`, where
//! `z = [x; v]` stacks positions over velocities.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::graph::{laplacian, Topology, TopologyId};
use crate::linalg::{forced_exponential, matrix_exponential};

/// Piecewise-constant switching signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSchedule {
    sequence: Vec<(TopologyId, f64)>,
    t0: f64,
    periodic: bool,
}

/// One activation of a topology, `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub index: usize,
    pub topology: TopologyId,
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn dwell(&self) -> f64 {
        self.end - self.start
    }
}

impl SwitchingSchedule {
    pub fn new(sequence: Vec<(TopologyId, f64)>, t0: f64, periodic: bool) -> Result<Self> {
        if sequence.is_empty() {
            return Err(invalid("switching schedule is empty"));
        }
        if !t0.is_finite() {
            return Err(invalid("schedule start time must be finite"));
        }
        if let Some((id, tau)) = sequence.iter().find(|(_, tau)| !(*tau > 0.0) || !tau.is_finite()) {
            return Err(invalid(format!("dwell time {tau} for topology {id} is not positive")));
        }
        Ok(Self { sequence, t0, periodic })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn sequence(&self) -> &[(TopologyId, f64)] {
        &self.sequence
    }

    pub fn period(&self) -> f64 {
        self.sequence.iter().map(|(_, tau)| tau).sum()
    }

    pub fn min_dwell(&self) -> f64 {
        self.sequence.iter().map(|(_, tau)| *tau).fold(f64::INFINITY, f64::min)
    }

    /// End of a finite schedule, `None` when periodic.
    pub fn end(&self) -> Option<f64> {
        (!self.periodic).then(|| self.t0 + self.period())
    }

    pub fn topology_ids(&self) -> BTreeSet<TopologyId> {
        self.sequence.iter().map(|(id, _)| *id).collect()
    }

    /// The `k`-th activation, if it exists.
    pub fn interval(&self, k: usize) -> Option<Interval> {
        let len = self.sequence.len();
        if !self.periodic && k >= len {
            return None;
        }
        let cycles = k / len;
        let pos = k % len;
        let before: f64 = self.sequence[..pos].iter().map(|(_, tau)| tau).sum();
        let start = self.t0 + cycles as f64 * self.period() + before;
        let (topology, tau) = self.sequence[pos];
        Some(Interval { index: k, topology, start, end: start + tau })
    }

    /// Activations that begin before `until`.
    pub fn intervals_until(&self, until: f64) -> Vec<Interval> {
        let mut out = Vec::new();
        let mut k = 0;
        while let Some(iv) = self.interval(k) {
            if iv.start >= until {
                break;
            }
            out.push(iv);
            k += 1;
        }
        out
    }

    /// Active topology at `t`; switch instants belong to the new interval.
    pub fn active_topology(&self, t: f64) -> Result<Interval> {
        if !t.is_finite() || t < self.t0 {
            return Err(Error::OutOfRange { t });
        }
        let period = self.period();
        let elapsed = t - self.t0;
        let cycles = if self.periodic { libm::floor(elapsed / period) as usize } else { 0 };
        if !self.periodic && elapsed >= period {
            return Err(Error::OutOfRange { t });
        }
        let len = self.sequence.len();
        let mut k = cycles * len;
        loop {
            let Some(iv) = self.interval(k) else {
                return Err(Error::OutOfRange { t });
            };
            if t < iv.end {
                if t >= iv.start {
                    return Ok(iv);
                }
                // Rounding in the cycle estimate landed one interval late.
                k = k.saturating_sub(1);
                continue;
            }
            k += 1;
        }
    }
}

/// Input `direction · e^{rate (t - origin)}` entering the state equation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpInput {
    pub direction: DVector<f64>,
    pub rate: f64,
    pub origin: f64,
}

impl ExpInput {
    pub fn amplitude(&self, t: f64) -> f64 {
        libm::exp(self.rate * (t - self.origin))
    }
}

/// State after `dt` starting from `z` at time `t` under fixed dynamics `a`.
pub(crate) fn transfer(a: &DMatrix<f64>, z: &DVector<f64>, t: f64, dt: f64, input: Option<&ExpInput>) -> Result<DVector<f64>> {
    match input {
        None => Ok(matrix_exponential(a, dt)? * z),
        Some(inp) => {
            let n = z.len();
            let step = forced_exponential(a, &inp.direction, inp.rate, dt)?;
            Ok(apply_augmented(&step, z, inp.amplitude(t), n))
        }
    }
}

pub(crate) fn apply_augmented(step: &DMatrix<f64>, z: &DVector<f64>, amplitude: f64, n: usize) -> DVector<f64> {
    step.view((0, 0), (n, n)) * z + step.view((0, n), (n, 1)) * amplitude
}

/// Monitored agents and the defender's position/velocity output weights.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub monitored: Vec<usize>,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
}

impl OutputConfig {
    pub fn new(monitored: Vec<usize>, c1: Vec<f64>, c2: Vec<f64>) -> Result<Self> {
        if monitored.is_empty() {
            return Err(invalid("monitored set is empty"));
        }
        if c1.len() != monitored.len() || c2.len() != monitored.len() {
            return Err(invalid("c1/c2 must have one entry per monitored agent"));
        }
        if monitored.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("monitored agents must be strictly increasing"));
        }
        if c1.iter().chain(&c2).any(|c| !c.is_finite()) {
            return Err(invalid("output coefficients must be finite"));
        }
        if c1.iter().zip(&c2).any(|(a, b)| *a == 0.0 && *b == 0.0) {
            return Err(invalid("every monitored agent needs a nonzero position or velocity weight"));
        }
        Ok(Self { monitored, c1, c2 })
    }

    /// Velocity-only outputs with unit weights.
    pub fn velocities(monitored: Vec<usize>) -> Result<Self> {
        let k = monitored.len();
        Self::new(monitored, alloc::vec![0.0; k], alloc::vec![1.0; k])
    }

    pub fn len(&self) -> usize {
        self.monitored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monitored.is_empty()
    }
}

/// Misbehaving agents, their sensor-channel weights and timing limits.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackerConfig {
    pub misbehaving: BTreeSet<usize>,
    /// One weight per monitored agent.
    pub d: Vec<f64>,
    pub inference_delay: f64,
    pub pause_lead: f64,
}

impl AttackerConfig {
    pub fn new(misbehaving: BTreeSet<usize>, d: Vec<f64>, inference_delay: f64, pause_lead: f64) -> Result<Self> {
        if !(inference_delay >= 0.0) || !(pause_lead >= 0.0) || !inference_delay.is_finite() || !pause_lead.is_finite() {
            return Err(invalid("attacker delays must be finite and non-negative"));
        }
        if d.iter().any(|x| !x.is_finite()) {
            return Err(invalid("attacker output weights must be finite"));
        }
        Ok(Self { misbehaving, d, inference_delay, pause_lead })
    }

    pub fn d_is_zero(&self) -> bool {
        self.d.iter().all(|&x| x == 0.0)
    }
}

/// `[[0, I], [-L, -I]]`.
#[allow(non_snake_case)]
pub fn assemble_A(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        a[(i, n + i)] = 1.0;
        a[(n + i, n + i)] = -1.0;
        for j in 0..n {
            a[(n + i, j)] = -l[(i, j)];
        }
    }
    a
}

/// Output matrices, one row per monitored agent. `D` acts on the stacked
/// injection `ğ = [0; ḡ]`, so it only reaches the monitored velocities.
pub fn assemble_output(
    cfg: &OutputConfig,
    attacker: Option<&AttackerConfig>,
    n: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let m = cfg.len();
    if let Some(&bad) = cfg.monitored.iter().find(|&&i| i == 0 || i > n) {
        return Err(invalid(format!("monitored agent {bad} outside 1..={n}")));
    }
    let mut c = DMatrix::zeros(m, 2 * n);
    let mut d = DMatrix::zeros(m, 2 * n);
    for (k, &i) in cfg.monitored.iter().enumerate() {
        c[(k, i - 1)] = cfg.c1[k];
        c[(k, n + i - 1)] = cfg.c2[k];
    }
    if let Some(att) = attacker {
        if att.d.len() != m {
            return Err(invalid("attacker d must have one entry per monitored agent"));
        }
        for (k, &i) in cfg.monitored.iter().enumerate() {
            d[(k, n + i - 1)] = att.d[k];
        }
    }
    Ok((c, d))
}

/// The full switched family plus output and schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedSystem {
    n: usize,
    laplacians: BTreeMap<TopologyId, DMatrix<f64>>,
    a: BTreeMap<TopologyId, DMatrix<f64>>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    schedule: SwitchingSchedule,
}

impl SwitchedSystem {
    pub fn new(
        topologies: &[Topology],
        schedule: SwitchingSchedule,
        output: &OutputConfig,
        attacker: Option<&AttackerConfig>,
    ) -> Result<Self> {
        let n = topologies.first().ok_or_else(|| invalid("no topologies given"))?.agent_count();
        let mut laplacians = BTreeMap::new();
        let mut a = BTreeMap::new();
        for t in topologies {
            if t.agent_count() != n {
                return Err(invalid("all topologies must share the agent count"));
            }
            let l = laplacian(t);
            a.insert(t.id(), assemble_A(&l));
            if laplacians.insert(t.id(), l).is_some() {
                return Err(invalid(format!("topology id {} defined twice", t.id())));
            }
        }
        if let Some(missing) = schedule.topology_ids().into_iter().find(|id| !a.contains_key(id)) {
            return Err(invalid(format!("schedule references unknown topology {missing}")));
        }
        if let Some(att) = attacker {
            if let Some(&bad) = att.misbehaving.iter().find(|&&k| k == 0 || k > n) {
                return Err(invalid(format!("misbehaving agent {bad} outside 1..={n}")));
            }
        }
        let (c, d) = assemble_output(output, attacker, n)?;
        Ok(Self { n, laplacians, a, c, d, schedule })
    }

    pub fn agent_count(&self) -> usize {
        self.n
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn a(&self, id: TopologyId) -> Option<&DMatrix<f64>> {
        self.a.get(&id)
    }

    pub fn laplacian(&self, id: TopologyId) -> Option<&DMatrix<f64>> {
        self.laplacians.get(&id)
    }

    pub fn topology_ids(&self) -> impl Iterator<Item = TopologyId> + '_ {
        self.a.keys().copied()
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn schedule(&self) -> &SwitchingSchedule {
        &self.schedule
    }

    pub(crate) fn a_of(&self, iv: &Interval) -> &DMatrix<f64> {
        &self.a[&iv.topology]
    }

    /// Exact state transfer from `from` to `to` (`from <= to`), switching
    /// topologies as scheduled and applying an optional exponential input.
    pub fn propagate(&self, z: &DVector<f64>, from: f64, to: f64, input: Option<&ExpInput>) -> Result<DVector<f64>> {
        if z.len() != self.state_dim() {
            return Err(invalid("state length does not match the system"));
        }
        if !(to >= from) {
            return Err(invalid("propagation must move forward in time"));
        }
        let mut t = from;
        let mut state = z.clone();
        while t < to {
            let iv = self.schedule.active_topology(t)?;
            let stop = iv.end.min(to);
            state = transfer(self.a_of(&iv), &state, t, stop - t, input)?;
            t = stop;
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::library::path;
    use alloc::vec;
    use nalgebra::{dmatrix, DVector};

    const T1: TopologyId = TopologyId(1);
    const T2: TopologyId = TopologyId(2);

    #[test]
    fn single_agent_matrix() {
        assert_eq!(assemble_A(&dmatrix![0.0]), dmatrix![0.0, 1.0; 0.0, -1.0]);
    }

    #[test]
    fn block_placement_for_path() {
        let l = laplacian(&path(T1, 3));
        let a = assemble_A(&l);
        assert_eq!(a.view((3, 0), (3, 3)), -&l);
        assert_eq!(a.view((0, 3), (3, 3)), DMatrix::<f64>::identity(3, 3));
        assert_eq!(a.view((3, 3), (3, 3)), -DMatrix::<f64>::identity(3, 3));
        assert_eq!(a.view((0, 0), (3, 3)), DMatrix::<f64>::zeros(3, 3));
    }

    #[test]
    fn eigenvalues_follow_laplacian_quadratic() {
        let a = assemble_A(&laplacian(&path(T1, 3)));
        let mut got: Vec<_> = a.complex_eigenvalues().iter().copied().collect();
        let mut want = Vec::new();
        for lam in [0.0f64, 1.0, 3.0] {
            let disc = nalgebra::Complex::new(1.0 - 4.0 * lam, 0.0);
            let root = nalgebra::ComplexField::sqrt(disc);
            want.push((root - 1.0) * 0.5);
            want.push((-root - 1.0) * 0.5);
        }
        let key = |z: &nalgebra::Complex<f64>| (z.re * 1e6) as i64 * 1_000_000_000 + (z.im * 1e6) as i64;
        got.sort_by_key(key);
        want.sort_by_key(key);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).norm_sqr() < 1e-18, "{g} vs {w}");
        }
    }

    #[test]
    fn consensus_direction_is_invariant() {
        let a = assemble_A(&laplacian(&path(T1, 4)));
        let mut one = DVector::zeros(8);
        one.rows_mut(0, 4).fill(1.0);
        assert_eq!(&a * &one, DVector::zeros(8));
    }

    #[test]
    fn output_matrices() {
        let cfg = OutputConfig::new(vec![1], vec![1.0], vec![0.0]).unwrap();
        let (c, d) = assemble_output(&cfg, None, 2).unwrap();
        assert_eq!(c, dmatrix![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(d, dmatrix![0.0, 0.0, 0.0, 0.0]);

        let att = AttackerConfig::new(BTreeSet::new(), vec![2.0], 0.0, 0.0).unwrap();
        let (_, d) = assemble_output(&cfg, Some(&att), 2).unwrap();
        assert_eq!(d, dmatrix![0.0, 0.0, 2.0, 0.0]);

        let vel = OutputConfig::velocities(vec![1, 2, 3]).unwrap();
        let (c, _) = assemble_output(&vel, None, 16).unwrap();
        assert_eq!(c.view((0, 0), (3, 16)), DMatrix::<f64>::zeros(3, 16));
        assert_eq!(c.view((0, 16), (3, 3)), DMatrix::<f64>::identity(3, 3));
        assert_eq!(c.view((0, 19), (3, 13)), DMatrix::<f64>::zeros(3, 13));
    }

    #[test]
    fn output_rows_follow_monitored_agents() {
        let cfg = OutputConfig::new(vec![2, 4], vec![1.0, 0.0], vec![0.5, 1.0]).unwrap();
        let att = AttackerConfig::new(BTreeSet::new(), vec![0.0, 3.0], 0.0, 0.0).unwrap();
        let (c, d) = assemble_output(&cfg, Some(&att), 4).unwrap();
        assert_eq!((c[(0, 1)], c[(0, 5)], c[(1, 3)], c[(1, 7)]), (1.0, 0.5, 0.0, 1.0));
        assert_eq!(c.iter().filter(|x| **x != 0.0).count(), 3);
        assert_eq!(d[(1, 7)], 3.0);
        assert_eq!(d.iter().filter(|x| **x != 0.0).count(), 1);
    }

    #[test]
    fn output_rejects_out_of_range_monitors() {
        let cfg = OutputConfig::velocities(vec![1, 2, 3]).unwrap();
        assert!(assemble_output(&cfg, None, 2).is_err());
    }

    #[test]
    fn output_config_validation() {
        assert!(OutputConfig::new(vec![1], vec![0.0], vec![0.0]).is_err());
        assert!(OutputConfig::new(vec![2, 1], vec![1.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(OutputConfig::new(vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn active_topology_periodic() {
        let s = SwitchingSchedule::new(vec![(T1, 2.0), (T2, 2.0)], 0.0, true).unwrap();
        let iv = s.active_topology(0.0).unwrap();
        assert_eq!((iv.topology, iv.start, iv.end), (T1, 0.0, 2.0));
        let iv = s.active_topology(2.0).unwrap();
        assert_eq!((iv.topology, iv.start, iv.end), (T2, 2.0, 4.0));
        let iv = s.active_topology(5.5).unwrap();
        assert_eq!((iv.topology, iv.start, iv.end), (T1, 4.0, 6.0));
        assert!(s.active_topology(-0.1).is_err());
    }

    #[test]
    fn finite_schedule_ends() {
        let s = SwitchingSchedule::new(vec![(T1, 1.0), (T2, 0.5)], 1.0, false).unwrap();
        assert_eq!(s.active_topology(2.2).unwrap().topology, T2);
        assert!(matches!(s.active_topology(2.5), Err(Error::OutOfRange { .. })));
        assert_eq!(s.end(), Some(2.5));
    }

    #[test]
    fn schedule_validation() {
        assert!(SwitchingSchedule::new(vec![], 0.0, true).is_err());
        assert!(SwitchingSchedule::new(vec![(T1, 0.0)], 0.0, true).is_err());
    }

    #[test]
    fn system_validation() {
        let s = SwitchingSchedule::new(vec![(T2, 1.0)], 0.0, true).unwrap();
        let out = OutputConfig::velocities(vec![1]).unwrap();
        assert!(SwitchedSystem::new(&[path(T1, 3)], s, &out, None).is_err());
    }
}
