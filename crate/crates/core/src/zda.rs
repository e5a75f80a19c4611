//! Attacker side: zero-dynamics attack synthesis, intermittent pause/resume
//! planning, multi-topology feasibility and the resulting attack signals.
//!
//! Injections enter the velocity channel only, so an input vector `g` over
//! the agents stacks into the state as `ğ = [0; g]`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::graph::TopologyId;
use crate::linalg::{matrix_exponential, pencil_kernel, pencil_zeros, subspace_intersection, RankPolicy, Subspace};
use crate::observability::{paused_unobservable_subspace, unobservable_subspace};
use crate::sysmodel::{AttackerConfig, ExpInput, SwitchedSystem, SwitchingSchedule};

/// Entries below this (relative to the largest) count as zero when
/// normalising directions.
const SIGNIFICANT: f64 = 1e-9;

/// `2n x |K|` map from injections at the agents in `support` to the state.
pub fn injection_matrix(n: usize, support: &BTreeSet<usize>) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(2 * n, support.len());
    for (j, &k) in support.iter().enumerate() {
        b[(n + k - 1, j)] = 1.0;
    }
    b
}

/// Velocity-channel stacking `[0; g]` of an agent-indexed input.
pub fn stack_input(g: &DVector<f64>) -> DVector<f64> {
    let n = g.len();
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(n, n).copy_from(g);
    out
}

/// `P(η) = [[ηI - A, I], [-C, D]]`, acting on `[z; -ğ]`.
pub fn kernel_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>, eta: f64) -> DMatrix<f64> {
    let s = a.nrows();
    let m = c.nrows();
    let mut p = DMatrix::zeros(s + m, 2 * s);
    p.view_mut((0, 0), (s, s)).copy_from(&(DMatrix::identity(s, s) * eta - a));
    p.view_mut((0, s), (s, s)).fill_with_identity();
    p.view_mut((s, 0), (m, s)).copy_from(&-c);
    p.view_mut((s, s), (m, s)).copy_from(d);
    p
}

/// One zero-dynamics direction for a single topology.
#[derive(Debug, Clone, PartialEq)]
pub struct ZdaEntry {
    pub eta: f64,
    /// Initial deviation, length `2n`.
    pub z0: DVector<f64>,
    /// Injection per agent, length `n`, zero outside the support.
    pub g: DVector<f64>,
    /// The direction comes from a pencil with a kernel at every `η`, so
    /// `eta` was chosen rather than forced.
    pub free: bool,
}

impl ZdaEntry {
    pub fn stacked_input(&self) -> DVector<f64> {
        stack_input(&self.g)
    }

    /// `‖P(η) [z0; -ğ]‖`.
    pub fn kernel_residual(&self, a: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
        let s = a.nrows();
        let mut w = DVector::zeros(2 * s);
        w.rows_mut(0, s).copy_from(&self.z0);
        w.rows_mut(s, s).copy_from(&-self.stacked_input());
        (kernel_matrix(a, c, d, self.eta) * w).norm()
    }

    /// Agents with a nonzero injection.
    pub fn support(&self) -> BTreeSet<usize> {
        self.g.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, _)| i + 1).collect()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self { eta: self.eta, z0: &self.z0 * alpha, g: &self.g * alpha, free: self.free }
    }
}

/// Real zero-dynamics directions of `(A, C, D)` with injections restricted to
/// `support`, most destabilising first.
///
/// When the pencil has a kernel for every `η`, one extra direction at
/// `free_eta` is included. Directions with zero injection (pure unobservable
/// modes such as the consensus drift) are dropped.
pub fn synthesize_zda(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    support: &BTreeSet<usize>,
    free_eta: f64,
    policy: &RankPolicy,
) -> Result<Vec<ZdaEntry>> {
    if support.is_empty() {
        return Ok(Vec::new());
    }
    let s = a.nrows();
    if !s.is_multiple_of(2) || c.ncols() != s || d.shape() != c.shape() {
        return Err(invalid("A, C and D do not describe a second-order network"));
    }
    let n = s / 2;
    if let Some(&bad) = support.iter().find(|&&k| k == 0 || k > n) {
        return Err(invalid(format!("misbehaving agent {bad} outside 1..={n}")));
    }
    if !free_eta.is_finite() {
        return Err(invalid("free eta must be finite"));
    }
    let b = injection_matrix(n, support);
    let dk = d * &b;
    let zeros = pencil_zeros(a, &b, c, &dk, policy)?;

    let mut candidates: Vec<(f64, bool)> = Vec::new();
    for z in zeros.zeros.iter().filter(|z| z.is_real(1e-9)) {
        if !candidates.iter().any(|(e, _)| (e - z.eta.re).abs() <= 1e-9 * (1.0 + e.abs())) {
            candidates.push((z.eta.re, false));
        }
    }
    if zeros.free_kernel {
        match candidates.iter_mut().find(|(e, _)| (*e - free_eta).abs() <= 1e-9 * (1.0 + e.abs())) {
            Some(hit) => hit.1 = true,
            None => candidates.push((free_eta, true)),
        }
    }

    let mut out = Vec::new();
    for (eta, free) in candidates {
        if let Some(entry) = strongest_direction(a, &b, c, &dk, eta, free, policy)? {
            out.push(entry);
        }
    }
    out.sort_by(|x, y| {
        y.eta
            .total_cmp(&x.eta)
            .then(x.support().len().cmp(&y.support().len()))
    });
    Ok(out)
}

/// Kernel combination at `eta` with the largest injection, normalised.
fn strongest_direction(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    dk: &DMatrix<f64>,
    eta: f64,
    free: bool,
    policy: &RankPolicy,
) -> Result<Option<ZdaEntry>> {
    let kernel = pencil_kernel(a, b, c, dk, eta, policy)?;
    if kernel.is_empty() {
        return Ok(None);
    }
    let s = a.nrows();
    let k = b.ncols();
    let mut zs = DMatrix::zeros(s, kernel.len());
    let mut gs = DMatrix::zeros(k, kernel.len());
    for (j, (z, g)) in kernel.iter().enumerate() {
        zs.set_column(j, z);
        gs.set_column(j, g);
    }
    let svd = gs.clone().svd(false, true);
    let (best, sigma) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, -1.0), |acc, (i, &sv)| if sv > acc.1 { (i, sv) } else { acc });
    if sigma <= policy.threshold(1.0) * 10.0 {
        return Ok(None);
    }
    let alpha = svd.v_t.expect("right singular vectors requested").row(best).transpose();
    let z = &zs * &alpha;
    let g_k = &gs * &alpha;
    let n = s / 2;
    let mut g = b.rows(n, n) * g_k;
    let mut z = z;
    normalise(&mut z, &mut g, n);
    Ok(Some(ZdaEntry { eta, z0: z, g, free }))
}

/// Scale so the largest position entry has unit modulus and the first
/// significant one is negative; falls back to the whole state when the
/// positions vanish.
fn normalise(z: &mut DVector<f64>, g: &mut DVector<f64>, n: usize) {
    let positions = z.rows(0, n).amax();
    let part = if positions > SIGNIFICANT * z.amax() { 0..n } else { 0..2 * n };
    let peak = part.clone().map(|i| z[i].abs()).fold(0.0, f64::max);
    if peak == 0.0 {
        return;
    }
    let first = part.clone().map(|i| z[i]).find(|x| x.abs() > SIGNIFICANT * peak).unwrap_or(1.0);
    let scale = if first > 0.0 { -1.0 / peak } else { 1.0 / peak };
    *z *= scale;
    *g *= scale;
    let floor = f64::EPSILON * 16.0 * g.amax().max(1.0);
    g.iter_mut().filter(|x| x.abs() <= floor).for_each(|x| *x = 0.0);
}

/// Per-topology attack directions sharing one support.
#[derive(Debug, Clone, PartialEq)]
pub struct ZdaPolicy {
    pub support: BTreeSet<usize>,
    pub entries: BTreeMap<TopologyId, ZdaEntry>,
}

impl ZdaPolicy {
    /// Best direction for each attacked topology; topologies that resist
    /// the attack get no entry.
    pub fn synthesize(
        system: &SwitchedSystem,
        support: &BTreeSet<usize>,
        attacked: &BTreeSet<TopologyId>,
        free_eta: f64,
        policy: &RankPolicy,
    ) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for &id in attacked {
            let a = system.a(id).ok_or_else(|| invalid(format!("unknown topology {id}")))?;
            if let Some(best) = synthesize_zda(a, system.c(), system.d(), support, free_eta, policy)?.into_iter().next() {
                entries.insert(id, best);
            }
        }
        Ok(Self { support: support.clone(), entries })
    }

    /// Wraps hand-written entries after checking the support constraint.
    pub fn from_entries(support: BTreeSet<usize>, entries: BTreeMap<TopologyId, ZdaEntry>) -> Result<Self> {
        for (id, e) in &entries {
            if e.z0.len() != 2 * e.g.len() {
                return Err(invalid(format!("entry for topology {id}: z0 must have twice the length of g")));
            }
            if let Some(bad) = e.support().into_iter().find(|k| !support.contains(k)) {
                return Err(invalid(format!("entry for topology {id} injects at agent {bad} outside the support")));
            }
        }
        Ok(Self { support, entries })
    }
}

/// Attack activity inside one activation `[t_k, t_{k+1})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackWindow {
    pub interval: usize,
    pub topology: TopologyId,
    pub resume: f64,
    pub pause: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntermittentSchedule {
    pub windows: Vec<AttackWindow>,
}

/// Resume/pause windows for intervals starting before `horizon`. `attacked`
/// of `None` attacks every topology. The initial topology is known, so the
/// first window opens at `t_0`; later ones wait for the inference delay.
pub fn plan_intermittent(
    schedule: &SwitchingSchedule,
    attacker: &AttackerConfig,
    attacked: Option<&BTreeSet<TopologyId>>,
    horizon: f64,
) -> Result<IntermittentSchedule> {
    let delay = attacker.inference_delay;
    let lead = attacker.pause_lead;
    let mut windows = Vec::new();
    for iv in schedule.intervals_until(horizon) {
        if attacked.is_some_and(|t| !t.contains(&iv.topology)) {
            continue;
        }
        let resume = if iv.index == 0 { iv.start } else { iv.start + delay };
        let pause = iv.end - lead;
        if !(resume < pause) {
            return Err(Error::InfeasibleSchedule(format!(
                "interval {} on topology {} ({:.6}..{:.6}) leaves no time between inference and pause",
                iv.index, iv.topology, iv.start, iv.end
            )));
        }
        windows.push(AttackWindow { interval: iv.index, topology: iv.topology, resume, pause });
    }
    Ok(IntermittentSchedule { windows })
}

/// One interval of a feasibility plan; `window` is `(resume, pause)`.
#[derive(Debug, Clone, Copy)]
pub struct FeasibilityStep<'a> {
    pub a: &'a DMatrix<f64>,
    pub dwell: f64,
    pub window: Option<(f64, f64)>,
}

fn feasible_set(
    plan: &[FeasibilityStep],
    kernels: &[Subspace],
    policy: &RankPolicy,
) -> Result<Subspace> {
    let (last, rest) = kernels.split_last().ok_or_else(|| invalid("plan has no steps"))?;
    let mut current = last.clone();
    for (q, kernel) in rest.iter().enumerate().rev() {
        if current.dim() == 0 {
            break;
        }
        let step = &plan[q];
        let active = step.window.map_or(0.0, |(resume, pause)| pause - resume);
        let back = matrix_exponential(step.a, -(step.dwell - active))?;
        current = subspace_intersection(kernel, &current.image_invertible(&back), policy)?;
    }
    Ok(current)
}

/// Whether a nonzero initial deviation stays hidden over the whole plan:
/// membership in both the running-output and held-output recursions.
pub fn feasibility_check(z0: &DVector<f64>, plan: &[FeasibilityStep], c: &DMatrix<f64>, policy: &RankPolicy) -> bool {
    if plan.is_empty() || z0.iter().all(|x| *x == 0.0) || z0.len() != c.ncols() {
        return false;
    }
    let check = || -> Result<bool> {
        let running = plan.iter().map(|s| unobservable_subspace(s.a, c, policy)).collect::<Result<Vec<_>>>()?;
        let held = plan.iter().map(|s| paused_unobservable_subspace(s.a, c, policy)).collect::<Result<Vec<_>>>()?;
        let hat = feasible_set(plan, &running, policy)?;
        let tilde = feasible_set(plan, &held, policy)?;
        Ok(hat.contains(z0, 1e-8) && tilde.contains(z0, 1e-8))
    };
    check().unwrap_or(false)
}

/// An active stretch of exponential injection `g e^{η (t - start)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Burst {
    pub start: f64,
    pub end: f64,
    pub topology: Option<TopologyId>,
    pub eta: f64,
    pub g: DVector<f64>,
    /// Output injection carried over from earlier bursts.
    pub held_before: DVector<f64>,
}

/// Instantaneous change of the plant state.
#[derive(Debug, Clone, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub delta: DVector<f64>,
}

/// Fully resolved attack: what the plant receives at every instant.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackProgram {
    /// Added to the plant's initial state (falsified initial data).
    pub offset: DVector<f64>,
    pub bursts: Vec<Burst>,
    /// Windows the attacker could not use because no kernel partner existed.
    pub skipped: Vec<AttackWindow>,
    pub jumps: Vec<Jump>,
    /// Output injection once the last burst has paused.
    pub held_after: DVector<f64>,
    d: DMatrix<f64>,
}

impl AttackProgram {
    pub fn none(system: &SwitchedSystem) -> Self {
        let s = system.state_dim();
        Self {
            offset: DVector::zeros(s),
            bursts: Vec::new(),
            skipped: Vec::new(),
            jumps: Vec::new(),
            held_after: DVector::zeros(system.output_dim()),
            d: system.d().clone(),
        }
    }

    /// Uninterrupted injection from `t_0` on, ignoring switches.
    pub fn continuous(system: &SwitchedSystem, entry: &ZdaEntry) -> Result<Self> {
        check_entry(system, entry)?;
        let mut p = Self::none(system);
        p.offset = entry.z0.clone();
        p.bursts.push(Burst {
            start: system.schedule().t0(),
            end: f64::INFINITY,
            topology: None,
            eta: entry.eta,
            g: entry.g.clone(),
            held_before: DVector::zeros(system.output_dim()),
        });
        Ok(p)
    }

    /// Injection started at `kappa > t_0` without any masking: the plant
    /// state is falsified by `z0` at `kappa` and `g e^{η (t - κ)}` follows.
    pub fn naive_mid_start(system: &SwitchedSystem, kappa: f64, entry: &ZdaEntry) -> Result<Self> {
        check_entry(system, entry)?;
        let t0 = system.schedule().t0();
        if !(kappa > t0) || !kappa.is_finite() {
            return Err(invalid("naive start time must lie after t0"));
        }
        let mut p = Self::none(system);
        p.jumps.push(Jump { time: kappa, delta: entry.z0.clone() });
        p.bursts.push(Burst {
            start: kappa,
            end: f64::INFINITY,
            topology: None,
            eta: entry.eta,
            g: entry.g.clone(),
            held_before: DVector::zeros(system.output_dim()),
        });
        Ok(p)
    }

    /// Intermittent attack: starts from the policy entry of the initial
    /// topology and, at every later resume, recomputes the growth rate and
    /// injection that keep the current deviation in the pencil kernel.
    /// Windows without such a partner are skipped.
    pub fn intermittent(
        system: &SwitchedSystem,
        policy: &ZdaPolicy,
        plan: &IntermittentSchedule,
    ) -> Result<Self> {
        let t0 = system.schedule().t0();
        let mut p = Self::none(system);
        let first = system.schedule().active_topology(t0)?;
        let Some(entry) = policy.entries.get(&first.topology) else {
            p.skipped = plan.windows.clone();
            return Ok(p);
        };
        check_entry(system, entry)?;
        p.offset = entry.z0.clone();
        let support = &policy.support;
        let mut deviation = entry.z0.clone();
        let mut clock = t0;
        let mut held = DVector::zeros(system.output_dim());
        for w in &plan.windows {
            deviation = system.propagate(&deviation, clock, w.resume, None)?;
            clock = w.resume;
            let chosen = if w.resume == t0 && w.topology == first.topology {
                Some((entry.eta, entry.g.clone()))
            } else {
                let a = system.a(w.topology).expect("scheduled topology");
                kernel_partner(a, system.c(), system.d(), support, &deviation, &held)
            };
            let Some((eta, g)) = chosen else {
                p.skipped.push(*w);
                continue;
            };
            let input = ExpInput { direction: stack_input(&g), rate: eta, origin: w.resume };
            deviation = system.propagate(&deviation, w.resume, w.pause, Some(&input))?;
            clock = w.pause;
            let burst = Burst { start: w.resume, end: w.pause, topology: Some(w.topology), eta, g, held_before: held.clone() };
            held += p.output_part(&burst, w.pause);
            p.bursts.push(burst);
        }
        p.held_after = held;
        Ok(p)
    }

    /// `D ğ(t)` of one burst evaluated at `t` (continuous from the left at
    /// the pause).
    fn output_part(&self, burst: &Burst, t: f64) -> DVector<f64> {
        &self.d * stack_input(&burst.g) * libm::exp(burst.eta * (t - burst.start))
    }

    /// Burst active at `t` (`start <= t < end`).
    pub fn burst_at(&self, t: f64) -> Option<&Burst> {
        self.bursts.iter().find(|b| b.start <= t && t < b.end)
    }

    /// Forcing term for the state equation at `t`, if any.
    pub fn input_at(&self, t: f64) -> Option<ExpInput> {
        self.burst_at(t).map(|b| ExpInput { direction: stack_input(&b.g), rate: b.eta, origin: b.start })
    }

    /// Agent input injection and monitored-output injection at `t`.
    pub fn attack_signals(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        let n = self.offset.len() / 2;
        if let Some(b) = self.burst_at(t) {
            let amp = libm::exp(b.eta * (t - b.start));
            return (&b.g * amp, &b.held_before + self.output_part(b, t));
        }
        let held = self
            .bursts
            .iter()
            .find(|b| t < b.start)
            .map_or_else(|| self.held_after.clone(), |b| b.held_before.clone());
        (DVector::zeros(n), held)
    }

    /// Times at which the attack changes character.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.bursts.iter().flat_map(|b| [b.start, b.end]).filter(|t| t.is_finite()).collect();
        out.extend(self.jumps.iter().map(|j| j.time));
        out
    }
}

fn check_entry(system: &SwitchedSystem, entry: &ZdaEntry) -> Result<()> {
    if entry.z0.len() != system.state_dim() || entry.g.len() != system.agent_count() {
        return Err(invalid("attack entry does not match the system size"));
    }
    if !entry.eta.is_finite() || entry.z0.iter().chain(entry.g.iter()).any(|x| !x.is_finite()) {
        return Err(invalid("attack entry has non-finite values"));
    }
    Ok(())
}

/// Growth rate and injection keeping `deviation` on an exponential
/// trajectory with invisible output: least squares on
/// `η z - B g = A z`, `D_K g = -(C z + held)`, accepted only when exact.
pub fn kernel_partner(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    support: &BTreeSet<usize>,
    deviation: &DVector<f64>,
    held: &DVector<f64>,
) -> Option<(f64, DVector<f64>)> {
    let s = a.nrows();
    let n = s / 2;
    let m = c.nrows();
    let scale = deviation.norm();
    if support.is_empty() || scale == 0.0 {
        return None;
    }
    let b = injection_matrix(n, support);
    let k = b.ncols();
    let mut lhs = DMatrix::zeros(s + m, 1 + k);
    lhs.view_mut((0, 0), (s, 1)).copy_from(deviation);
    lhs.view_mut((0, 1), (s, k)).copy_from(&-&b);
    lhs.view_mut((s, 1), (m, k)).copy_from(&(d * &b));
    let mut rhs = DVector::zeros(s + m);
    rhs.rows_mut(0, s).copy_from(&(a * deviation));
    rhs.rows_mut(s, m).copy_from(&-(c * deviation + held));
    let sol = lhs.clone().svd(true, true).solve(&rhs, 1e-12 * scale).ok()?;
    let tol = 1e-8 * (1.0 + a.norm()) * scale;
    if (&lhs * &sol - &rhs).norm() > tol {
        return None;
    }
    let g_k = sol.rows(1, k).into_owned();
    Some((sol[0], b.rows(n, n) * g_k))
}
