//! Piecewise-exact simulation of the nominal and attacked networks, twin-run
//! residuals and thresholded detection.

use alloc::collections::btree_map::Entry;
use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::graph::TopologyId;
use crate::linalg::{forced_exponential, matrix_exponential};
use crate::sysmodel::{apply_augmented, SwitchedSystem};
use crate::zda::{stack_input, AttackProgram};

/// Sample times closer than this are merged.
pub const GRID_MERGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    Switch,
    Resume,
    Pause,
    /// A planned window was dropped because no stealthy update existed.
    Skip,
    Jump,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Switch => "switch",
            EventKind::Resume => "resume",
            EventKind::Pause => "pause",
            EventKind::Skip => "skip",
            EventKind::Jump => "jump",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub topology: Option<TopologyId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub events: Vec<Event>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least the initial sample")
    }

    /// Events stamped on sample `k`.
    pub fn events_at(&self, k: usize) -> impl Iterator<Item = &Event> + '_ {
        let t = self.times[k];
        self.events.iter().filter(move |e| (e.time - t).abs() <= GRID_MERGE_TOL)
    }
}

/// `t0 + k dt` up to `end`, plus `end` and every extra time inside
/// `[t0, end]`. Extra times win over nearby regular samples so events land
/// on the grid exactly.
pub fn sample_grid(t0: f64, end: f64, dt: f64, extra: &[f64]) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid("dt must be positive"));
    }
    if !(end >= t0) || !end.is_finite() || !t0.is_finite() {
        return Err(invalid("horizon must be finite and non-negative"));
    }
    let steps = libm::floor((end - t0) / dt + 1e-9) as usize;
    let mut points: Vec<(f64, bool)> = (0..=steps).map(|k| (t0 + k as f64 * dt, false)).collect();
    points.push((end, true));
    points.extend(extra.iter().filter(|t| **t >= t0 && **t <= end).map(|&t| (t, true)));
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, bool)> = Vec::with_capacity(points.len());
    for p in points {
        match out.last_mut() {
            Some(last) if (p.0 - last.0).abs() <= GRID_MERGE_TOL => {
                if p.1 && !last.1 {
                    *last = p;
                }
            }
            _ => out.push(p),
        }
    }
    Ok(out.into_iter().map(|(t, _)| t).filter(|t| *t <= end).collect())
}

fn schedule_events(system: &SwitchedSystem, end: f64) -> Vec<Event> {
    system
        .schedule()
        .intervals_until(end)
        .into_iter()
        .filter(|iv| iv.index > 0)
        .map(|iv| Event { time: iv.start, kind: EventKind::Switch, topology: Some(iv.topology) })
        .collect()
}

fn attack_events(program: &AttackProgram, end: f64) -> Vec<Event> {
    let mut out = Vec::new();
    for b in &program.bursts {
        out.push(Event { time: b.start, kind: EventKind::Resume, topology: b.topology });
        if b.end.is_finite() {
            out.push(Event { time: b.end, kind: EventKind::Pause, topology: b.topology });
        }
    }
    for w in &program.skipped {
        out.push(Event { time: w.resume, kind: EventKind::Skip, topology: Some(w.topology) });
    }
    for j in &program.jumps {
        out.push(Event { time: j.time, kind: EventKind::Jump, topology: None });
    }
    out.retain(|e| e.time <= end);
    out
}

/// Event times of the schedule and attack up to `end`.
pub fn event_times(system: &SwitchedSystem, program: Option<&AttackProgram>, end: f64) -> Vec<f64> {
    let mut times: Vec<f64> = schedule_events(system, end).iter().map(|e| e.time).collect();
    if let Some(p) = program {
        times.extend(attack_events(p, end).iter().map(|e| e.time));
    }
    times
}

/// Simulates over `[t0, t0 + horizon]` on the regular grid refined by all
/// event times.
pub fn integrate(
    system: &SwitchedSystem,
    program: Option<&AttackProgram>,
    z_init: &DVector<f64>,
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    let t0 = system.schedule().t0();
    let end = t0 + horizon;
    let grid = sample_grid(t0, end, dt, &event_times(system, program, end))?;
    integrate_on(system, program, z_init, &grid)
}

/// Simulates on a caller-supplied increasing grid, which must contain every
/// event time. Each step uses the exact flow of the active topology with
/// the attack input integrated in closed form.
pub fn integrate_on(
    system: &SwitchedSystem,
    program: Option<&AttackProgram>,
    z_init: &DVector<f64>,
    grid: &[f64],
) -> Result<Trajectory> {
    let s = system.state_dim();
    if z_init.len() != s {
        return Err(invalid("initial state length does not match the system"));
    }
    if z_init.iter().any(|x| !x.is_finite()) {
        return Err(invalid("initial state must be finite"));
    }
    let (&first, &last) = match (grid.first(), grid.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(invalid("sample grid is empty")),
    };
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("sample grid must be strictly increasing"));
    }
    let mut events = schedule_events(system, last);
    if let Some(p) = program {
        events.extend(attack_events(p, last));
    }
    events.retain(|e| e.time >= first);
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.kind.cmp(&b.kind)));

    let mut cache: BTreeMap<(TopologyId, Option<usize>, i64), DMatrix<f64>> = BTreeMap::new();
    let mut times = Vec::with_capacity(grid.len());
    let mut states = Vec::with_capacity(grid.len());
    let mut outputs = Vec::with_capacity(grid.len());
    let mut z = z_init.clone();
    apply_jumps(program, first, &mut z);
    let record = |t: f64, z: &DVector<f64>, outputs: &mut Vec<DVector<f64>>| {
        let mut y = system.c() * z;
        if let Some(p) = program {
            y += p.attack_signals(t).1;
        }
        outputs.push(y);
    };
    times.push(first);
    record(first, &z, &mut outputs);
    states.push(z.clone());

    for w in grid.windows(2) {
        let (t, next) = (w[0], w[1]);
        let step = next - t;
        let iv = system.schedule().active_topology(t)?;
        let burst = program.and_then(|p| p.bursts.iter().position(|b| b.start <= t && t < b.end).map(|i| (p, i)));
        let key = (iv.topology, burst.map(|(_, i)| i), libm::round(step * 1e12) as i64);
        let a = system.a(iv.topology).expect("scheduled topology");
        z = match burst {
            None => {
                if let Entry::Vacant(slot) = cache.entry(key) {
                    slot.insert(matrix_exponential(a, step)?);
                }
                &cache[&key] * &z
            }
            Some((p, i)) => {
                let b = &p.bursts[i];
                if let Entry::Vacant(slot) = cache.entry(key) {
                    slot.insert(forced_exponential(a, &stack_input(&b.g), b.eta, step)?);
                }
                apply_augmented(&cache[&key], &z, libm::exp(b.eta * (t - b.start)), s)
            }
        };
        apply_jumps(program, next, &mut z);
        times.push(next);
        record(next, &z, &mut outputs);
        states.push(z.clone());
    }
    Ok(Trajectory { times, states, outputs, events })
}

fn apply_jumps(program: Option<&AttackProgram>, t: f64, z: &mut DVector<f64>) {
    if let Some(p) = program {
        for j in p.jumps.iter().filter(|j| (j.time - t).abs() <= GRID_MERGE_TOL) {
            *z += &j.delta;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionVerdict {
    pub detected: bool,
    pub first_detection_time: Option<f64>,
    pub peak_residual: f64,
    pub threshold: f64,
}

/// Flags the attack once `max_i |r_i|` exceeds `threshold` on
/// `min_consecutive` consecutive samples; the detection time is the last of
/// those samples.
pub fn detect(times: &[f64], residuals: &[DVector<f64>], threshold: f64, min_consecutive: usize) -> Result<DetectionVerdict> {
    if !(threshold > 0.0) {
        return Err(invalid("detection threshold must be positive"));
    }
    if times.len() != residuals.len() {
        return Err(invalid("residuals and times differ in length"));
    }
    let need = min_consecutive.max(1);
    let mut run = 0;
    let mut first = None;
    let mut peak = 0.0f64;
    for (t, r) in times.iter().zip(residuals) {
        let level = r.amax();
        peak = peak.max(level);
        if level > threshold {
            run += 1;
            if run >= need && first.is_none() {
                first = Some(*t);
            }
        } else {
            run = 0;
        }
    }
    Ok(DetectionVerdict { detected: first.is_some(), first_detection_time: first, peak_residual: peak, threshold })
}

/// Everything needed for one nominal-versus-attacked comparison.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub system: SwitchedSystem,
    pub attack: AttackProgram,
    /// Initial state the defender's reference model is seeded with.
    pub reference: DVector<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub threshold: f64,
    pub min_consecutive: usize,
}

#[derive(Debug, Clone)]
pub struct TwinRunResult {
    pub nominal: Trajectory,
    pub attacked: Trajectory,
    /// `y_attacked - y_nominal` on the shared grid.
    pub residuals: Vec<DVector<f64>>,
    pub verdict: DetectionVerdict,
}

impl TwinRunResult {
    /// `z_attacked - z_nominal` at sample `k`.
    pub fn deviation(&self, k: usize) -> DVector<f64> {
        &self.attacked.states[k] - &self.nominal.states[k]
    }
}

/// Runs the reference model from the defender's initial state and the plant
/// from the falsified one under attack, on one shared grid.
pub fn twin_run(scenario: &Scenario) -> Result<TwinRunResult> {
    let system = &scenario.system;
    let t0 = system.schedule().t0();
    let end = t0 + scenario.horizon;
    let grid = sample_grid(t0, end, scenario.dt, &event_times(system, Some(&scenario.attack), end))?;
    let nominal = integrate_on(system, None, &scenario.reference, &grid)?;
    let start = &scenario.reference + &scenario.attack.offset;
    let attacked = integrate_on(system, Some(&scenario.attack), &start, &grid)?;
    if nominal.times != attacked.times {
        return Err(invalid("nominal and attacked runs ended on different grids"));
    }
    let residuals: Vec<DVector<f64>> =
        attacked.outputs.iter().zip(&nominal.outputs).map(|(ya, yn)| ya - yn).collect();
    let verdict = detect(&nominal.times, &residuals, scenario.threshold, scenario.min_consecutive)?;
    Ok(TwinRunResult { nominal, attacked, residuals, verdict })
}
