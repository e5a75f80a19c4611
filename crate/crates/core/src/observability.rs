//! Defender-side analysis: observability matrices, the recursive
//! unobservable subspace of a switching plan, and detectability
//! classification for intermittent zero-dynamics attacks.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::graph::{check_defense_condition, spectral_decomposition, DefenseVerdict, TopologyId};
use crate::linalg::{
    largest_invariant_subspace, matrix_exponential, nullspace_scaled, preimage, subspace_intersection, RankPolicy,
    Subspace,
};
use crate::sysmodel::{OutputConfig, SwitchedSystem};

fn stacked_powers(a: &DMatrix<f64>, c: &DMatrix<f64>, first: usize, count: usize) -> DMatrix<f64> {
    let p = c.nrows();
    let n = a.nrows();
    let mut out = DMatrix::zeros(p * count, n);
    let mut block = c.clone();
    for _ in 0..first {
        block = &block * a;
    }
    for k in 0..count {
        out.view_mut((k * p, 0), (p, n)).copy_from(&block);
        block = &block * a;
    }
    out
}

/// `[C; CA; …; CA^{N-1}]` with `N` the state dimension.
pub fn obs_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dims(a, c)?;
    Ok(stacked_powers(a, c, 0, a.nrows()))
}

/// `[CA; CA²; …; CA^N]`: the output derivatives seen while the sensor
/// channel is held constant.
pub fn obs_matrix_paused(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dims(a, c)?;
    Ok(stacked_powers(a, c, 1, a.nrows()))
}

fn check_dims(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() || c.ncols() != a.nrows() {
        return Err(invalid("A must be square with as many columns as C"));
    }
    Ok(())
}

/// `ker` of [`obs_matrix`], computed as the largest `A`-invariant subspace
/// inside `ker C` so that no matrix powers are formed.
pub fn unobservable_subspace(a: &DMatrix<f64>, c: &DMatrix<f64>, policy: &RankPolicy) -> Result<Subspace> {
    check_dims(a, c)?;
    let scale = c.norm().max(1.0);
    let ker_c = nullspace_scaled(c, scale, policy);
    Ok(largest_invariant_subspace(a, &ker_c, policy))
}

/// `ker` of [`obs_matrix_paused`]: states that `A` maps into the
/// unobservable subspace.
pub fn paused_unobservable_subspace(a: &DMatrix<f64>, c: &DMatrix<f64>, policy: &RankPolicy) -> Result<Subspace> {
    let unobs = unobservable_subspace(a, c, policy)?;
    Ok(preimage(a, &unobs, policy))
}

/// One step of a switching plan: dynamics and how long they act.
#[derive(Debug, Clone, Copy)]
pub struct PlanStep<'a> {
    pub a: &'a DMatrix<f64>,
    pub dwell: f64,
}

/// Backward recursion `N_m = ker O_m`,
/// `N_q = ker O_q ∩ e^{-A_q τ_q} N_{q+1}`; returns `N_1`.
pub fn unobservable_subspace_sequence(plan: &[PlanStep], c: &DMatrix<f64>, policy: &RankPolicy) -> Result<Subspace> {
    let kernels = plan
        .iter()
        .map(|s| unobservable_subspace(s.a, c, policy))
        .collect::<Result<Vec<_>>>()?;
    backward_recursion(plan, &kernels, |s| Ok(s.dwell), policy)
}

pub(crate) fn backward_recursion<F>(
    plan: &[PlanStep],
    kernels: &[Subspace],
    mut flow_time: F,
    policy: &RankPolicy,
) -> Result<Subspace>
where
    F: FnMut(&PlanStep) -> Result<f64>,
{
    let (last, rest) = kernels.split_last().ok_or_else(|| invalid("plan has no steps"))?;
    let mut current = last.clone();
    for (q, kernel) in rest.iter().enumerate().rev() {
        if current.dim() == 0 {
            break;
        }
        let step = &plan[q];
        if !(step.dwell > 0.0) {
            return Err(invalid("dwell times must be positive"));
        }
        let backward = matrix_exponential(step.a, -flow_time(step)?)?;
        let pulled = current.image_invertible(&backward);
        current = subspace_intersection(kernel, &pulled, policy)?;
    }
    Ok(current)
}

/// Output pattern of the monitored agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputCase {
    /// `c_i1 = 0`, `c_i2 ≠ 0` for every monitored agent.
    VelocityOnly,
    /// `c_i1 ≠ 0`, `c_i2 = 0`.
    PositionOnly,
    /// `c_i1 = c_i2 ≠ 0`.
    PartialEqual,
    PartialGeneral,
}

impl OutputCase {
    pub fn of(cfg: &OutputConfig) -> Self {
        let pairs = || cfg.c1.iter().zip(&cfg.c2);
        if pairs().all(|(a, b)| *a == 0.0 && *b != 0.0) {
            Self::VelocityOnly
        } else if pairs().all(|(a, b)| *a != 0.0 && *b == 0.0) {
            Self::PositionOnly
        } else if pairs().all(|(a, b)| *a != 0.0 && a == b) {
            Self::PartialEqual
        } else {
            Self::PartialGeneral
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::VelocityOnly => "velocity-only",
            Self::PositionOnly => "position-only",
            Self::PartialEqual => "partial-equal",
            Self::PartialGeneral => "partial-general",
        }
    }

    /// Limit unobservable subspace predicted for this case when every
    /// topology passes the defense condition.
    pub fn closed_form(&self, n: usize) -> Option<Subspace> {
        let policy = RankPolicy::default();
        match self {
            Self::VelocityOnly => Some(Subspace::span_of(&[stacked(n, 1.0, 0.0)], 2 * n, &policy)),
            Self::PositionOnly => Some(Subspace::zero(2 * n)),
            Self::PartialEqual => Some(Subspace::span_of(&[stacked(n, 1.0, -1.0)], 2 * n, &policy)),
            Self::PartialGeneral => None,
        }
    }
}

/// `[a·1_n; b·1_n]`.
pub fn stacked(n: usize, a: f64, b: f64) -> DVector<f64> {
    DVector::from_fn(2 * n, |i, _| if i < n { a } else { b })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologyCondition {
    pub topology: TopologyId,
    pub verdict: DefenseVerdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectabilityReport {
    pub case: OutputCase,
    pub n_infinity: Subspace,
    pub detectable: bool,
    pub conditions: Vec<TopologyCondition>,
    /// First scheduled topology violating the defense condition.
    pub failing_topology: Option<TopologyId>,
    /// Whether the computed limit matches the closed form of the case;
    /// `None` when the case has no closed form or the condition fails.
    pub closed_form_match: Option<bool>,
    /// `ξ_0 > t_0 or D = 0`, evaluated for the partial-equal case.
    pub resume_or_clean_sensors: Option<bool>,
    pub periods_used: usize,
}

/// Limit of the unobservable-subspace recursion: periodic schedules are
/// unrolled until the dimension is unchanged over two consecutive periods.
pub fn n_infinity(system: &SwitchedSystem, policy: &RankPolicy) -> Result<(Subspace, usize)> {
    let schedule = system.schedule();
    let per_period = schedule.sequence().len();
    let c = system.c();
    let kernels_by_id: Vec<(TopologyId, Subspace)> = system
        .topology_ids()
        .map(|id| Ok((id, unobservable_subspace(system.a(id).expect("id from system"), c, policy)?)))
        .collect::<Result<_>>()?;
    let kernel_of = |id: TopologyId| kernels_by_id.iter().find(|(k, _)| *k == id).map(|(_, s)| s.clone()).unwrap();

    let run = |periods: usize| -> Result<Subspace> {
        let mut plan = Vec::new();
        let mut kernels = Vec::new();
        for k in 0..periods * per_period {
            let (id, tau) = schedule.sequence()[k % per_period];
            plan.push(PlanStep { a: system.a(id).expect("scheduled id"), dwell: tau });
            kernels.push(kernel_of(id));
        }
        backward_recursion(&plan, &kernels, |s| Ok(s.dwell), policy)
    };

    if !schedule.is_periodic() {
        return Ok((run(1)?, 1));
    }
    let max_periods = system.state_dim() + 2;
    let mut prev = run(1)?;
    for periods in 2..=max_periods {
        let next = run(periods)?;
        if next.dim() == prev.dim() {
            return Ok((next, periods));
        }
        prev = next;
    }
    Ok((prev, max_periods))
}

/// Detectability of intermittent zero-dynamics attacks under the given
/// outputs. `first_resume` is the attacker's first resume time; `None`
/// means the attack starts at `t_0`.
pub fn classify_detectability(
    system: &SwitchedSystem,
    cfg: &OutputConfig,
    first_resume: Option<f64>,
    policy: &RankPolicy,
) -> Result<DetectabilityReport> {
    let case = OutputCase::of(cfg);
    let mut conditions = Vec::new();
    for id in system.schedule().topology_ids() {
        let l = system.laplacian(id).expect("scheduled id");
        let spec = spectral_decomposition(l)?;
        conditions.push(TopologyCondition { topology: id, verdict: check_defense_condition(&spec, &cfg.monitored)? });
    }
    let failing_topology = conditions.iter().find(|c| !c.verdict.satisfied).map(|c| c.topology);
    let (n_inf, periods_used) = n_infinity(system, policy)?;

    let closed_form_match = match (failing_topology, case.closed_form(system.agent_count())) {
        (None, Some(expected)) => Some(expected.distance(&n_inf) < 1e-8),
        _ => None,
    };
    let t0 = system.schedule().t0();
    let d_zero = system.d().iter().all(|&x| x == 0.0);
    let resume_or_clean_sensors =
        (case == OutputCase::PartialEqual).then(|| first_resume.unwrap_or(t0) > t0 || d_zero);

    let detectable = failing_topology.is_none()
        && match case {
            OutputCase::VelocityOnly | OutputCase::PositionOnly => true,
            OutputCase::PartialEqual => resume_or_clean_sensors == Some(true),
            OutputCase::PartialGeneral => n_inf.dim() == 0,
        };

    Ok(DetectabilityReport {
        case,
        n_infinity: n_inf,
        detectable,
        conditions,
        failing_topology,
        closed_form_match,
        resume_or_clean_sensors,
        periods_used,
    })
}
