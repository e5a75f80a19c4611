//! Subcommand implementations. Each returns a JSON report plus the outcome
//! that decides the exit code.

use std::fmt;
use std::path::PathBuf;

use rayon::prelude::*;
use serde_json::{json, Value};

use zdasim_core::graph::{check_defense_condition, spectral_decomposition, TopologyId};
use zdasim_core::linalg::RankPolicy;
use zdasim_core::observability::classify_detectability;
use zdasim_core::sim::{twin_run, Scenario, TwinRunResult};
use zdasim_core::sysmodel::SwitchedSystem;
use zdasim_core::zda::{feasibility_check, plan_intermittent, AttackProgram, FeasibilityStep, IntermittentSchedule, ZdaPolicy};

use crate::config::{AttackMode, ConfigError, ScenarioConfig};
use crate::output::{trajectory_csv, write_file};

/// Non-error results that still map to distinct exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    DefenseUnsatisfied,
    AttackResistant,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Ok => 0,
            Outcome::DefenseUnsatisfied => 2,
            Outcome::AttackResistant => 3,
        }
    }
}

#[derive(Debug)]
pub enum CommandError {
    Config(ConfigError),
    Core(zdasim_core::Error),
    Io(PathBuf, std::io::Error),
}

impl fmt::Display for CommandError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CommandError::Config(e) => write!(f, "{e}"),
            CommandError::Core(e) => write!(f, "{e}"),
            CommandError::Io(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

impl std::error::Error for CommandError {}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        CommandError::Config(e)
    }
}

impl From<zdasim_core::Error> for CommandError {
    fn from(e: zdasim_core::Error) -> Self {
        CommandError::Core(e)
    }
}

pub type CmdResult = Result<(Value, Outcome), CommandError>;

pub fn check_defense(cfg: &ScenarioConfig) -> CmdResult {
    cfg.validate()?;
    let system = cfg.system()?;
    let monitored = &cfg.system.monitored;
    let mut rows = Vec::new();
    let mut all = true;
    for id in system.schedule().topology_ids() {
        let spec = spectral_decomposition(system.laplacian(id).expect("scheduled topology"))?;
        let v = check_defense_condition(&spec, monitored)?;
        all &= v.satisfied;
        rows.push(json!({
            "topology": id.0,
            "distinct_eigenvalues": v.distinct_eigs,
            "min_eigenvalue_gap": v.min_gap,
            "witness_agents": v.witness_agents,
            "satisfied": v.satisfied,
            "uncertain": v.uncertain,
        }));
    }
    let report = json!({ "monitored": monitored, "topologies": rows, "satisfied": all });
    Ok((report, if all { Outcome::Ok } else { Outcome::DefenseUnsatisfied }))
}

/// Synthesised directions with explicit entries taking precedence.
fn resolve_policy(cfg: &ScenarioConfig, system: &SwitchedSystem) -> Result<ZdaPolicy, CommandError> {
    let attack = cfg.attack.as_ref().ok_or_else(|| ConfigError::Invalid("the `attack` block is required".into()))?;
    let support = attack.misbehaving.iter().copied().collect();
    let mut policy = ZdaPolicy::synthesize(system, &support, &cfg.attacked()?, attack.eta, &RankPolicy::default())?;
    if let Some(explicit) = cfg.explicit_policy(system.agent_count())? {
        policy.entries.extend(explicit.entries);
    }
    Ok(policy)
}

fn plan(cfg: &ScenarioConfig, system: &SwitchedSystem) -> Result<IntermittentSchedule, CommandError> {
    let attacker = cfg.attacker()?.expect("attack block checked by caller");
    let end = system.schedule().t0() + cfg.horizon()?;
    let attacked = cfg.attacked()?;
    Ok(plan_intermittent(system.schedule(), &attacker, Some(&attacked), end)?)
}

fn windows_json(plan: &IntermittentSchedule) -> Value {
    plan.windows
        .iter()
        .map(|w| json!({ "interval": w.interval, "topology": w.topology.0, "resume": w.resume, "pause": w.pause }))
        .collect()
}

pub fn synthesize(cfg: &ScenarioConfig) -> CmdResult {
    cfg.validate()?;
    let system = cfg.system()?;
    let policy = resolve_policy(cfg, &system)?;
    let attacked = cfg.attacked()?;
    let entries: Vec<Value> = policy
        .entries
        .iter()
        .map(|(id, e)| {
            let a = system.a(*id).expect("known topology");
            json!({
                "topology": id.0,
                "eta": e.eta,
                "free_rate": e.free,
                "z0": e.z0.as_slice(),
                "g": e.g.as_slice(),
                "kernel_residual": e.kernel_residual(a, system.c(), system.d()),
            })
        })
        .collect();
    let resistant: Vec<u32> = attacked.iter().filter(|id| !policy.entries.contains_key(id)).map(|id| id.0).collect();
    let mut report = json!({
        "support": policy.support,
        "entries": entries,
        "resistant_topologies": resistant,
    });
    let mode = cfg.attack.as_ref().map(|a| a.mode);
    if mode == Some(AttackMode::IntermittentZda) {
        let schedule = plan(cfg, &system)?;
        report["windows"] = windows_json(&schedule);
        let t0 = system.schedule().t0();
        let first = system.schedule().active_topology(t0)?.topology;
        if let Some(entry) = policy.entries.get(&first) {
            report["feasible_over_plan"] = json!(feasible_over_plan(&system, &schedule, &entry.z0)?);
        }
    }
    let path = out_path(cfg, "policy.json");
    write_file(&path, &pretty(&report))?;
    let outcome = if policy.entries.is_empty() { Outcome::AttackResistant } else { Outcome::Ok };
    Ok((report, outcome))
}

/// Whether `z0` stays hidden across every interval the plan touches.
fn feasible_over_plan(system: &SwitchedSystem, plan: &IntermittentSchedule, z0: &nalgebra::DVector<f64>) -> Result<bool, CommandError> {
    let Some(last) = plan.windows.last() else { return Ok(false) };
    let mut steps = Vec::new();
    for k in 0..=last.interval {
        let iv = system.schedule().interval(k).expect("planned interval exists");
        let window = plan.windows.iter().find(|w| w.interval == k).map(|w| (w.resume, w.pause));
        steps.push(FeasibilityStep { a: system.a(iv.topology).expect("scheduled"), dwell: iv.dwell(), window });
    }
    Ok(feasibility_check(z0, &steps, system.c(), &RankPolicy::default()))
}

/// Builds the attack the scenario describes; `None` when the attacker has
/// no usable direction on the initial topology.
fn build_attack(cfg: &ScenarioConfig, system: &SwitchedSystem) -> Result<Option<AttackProgram>, CommandError> {
    let mode = cfg.attack.as_ref().map_or(AttackMode::None, |a| a.mode);
    if mode == AttackMode::None {
        return Ok(Some(AttackProgram::none(system)));
    }
    let policy = resolve_policy(cfg, system)?;
    let t0 = system.schedule().t0();
    let first: TopologyId = system.schedule().active_topology(t0)?.topology;
    let Some(entry) = policy.entries.get(&first) else { return Ok(None) };
    let program = match mode {
        AttackMode::Zda => AttackProgram::continuous(system, entry)?,
        AttackMode::NaiveMidstart => {
            let kappa = cfg.attack.as_ref().and_then(|a| a.kappa).expect("validated");
            AttackProgram::naive_mid_start(system, kappa, entry)?
        }
        AttackMode::IntermittentZda => AttackProgram::intermittent(system, &policy, &plan(cfg, system)?)?,
        AttackMode::None => unreachable!(),
    };
    Ok(Some(program))
}

fn run_scenario(cfg: &ScenarioConfig) -> Result<Option<(SwitchedSystem, AttackProgram, TwinRunResult)>, CommandError> {
    cfg.validate()?;
    let system = cfg.system()?;
    let Some(attack) = build_attack(cfg, &system)? else { return Ok(None) };
    let scenario = Scenario {
        system: system.clone(),
        attack: attack.clone(),
        reference: cfg.initial_state(system.agent_count())?,
        horizon: cfg.horizon()?,
        dt: cfg.sim.dt,
        threshold: cfg.sim.threshold,
        min_consecutive: cfg.sim.min_consecutive,
    };
    let run = twin_run(&scenario)?;
    Ok(Some((system, attack, run)))
}

fn verdict_json(cfg: &ScenarioConfig, system: &SwitchedSystem, attack: &AttackProgram, run: &TwinRunResult) -> Value {
    let n = system.agent_count();
    let last = run.attacked.last_state();
    let x = last.rows(0, n);
    let bursts: Vec<Value> = attack
        .bursts
        .iter()
        .map(|b| {
            json!({
                "topology": b.topology.map(|t| t.0),
                "resume": b.start,
                "pause": if b.end.is_finite() { json!(b.end) } else { Value::Null },
                "eta": b.eta,
                "g": b.g.as_slice(),
            })
        })
        .collect();
    let skipped: Vec<Value> =
        attack.skipped.iter().map(|w| json!({ "interval": w.interval, "topology": w.topology.0, "resume": w.resume })).collect();
    json!({
        "mode": cfg.attack.as_ref().map_or(AttackMode::None, |a| a.mode),
        "detected": run.verdict.detected,
        "first_detection_time": run.verdict.first_detection_time,
        "peak_residual": run.verdict.peak_residual,
        "threshold": run.verdict.threshold,
        "min_consecutive": cfg.sim.min_consecutive,
        "samples": run.nominal.len(),
        "final_time": run.nominal.times.last(),
        "final_position_spread": x.max() - x.min(),
        "final_max_speed": last.rows(n, n).amax(),
        "attack_windows": bursts,
        "skipped_windows": skipped,
    })
}

pub fn simulate(cfg: &ScenarioConfig) -> CmdResult {
    let Some((system, attack, run)) = run_scenario(cfg)? else {
        return Ok((json!({ "error": "no attack direction exists on the initial topology" }), Outcome::AttackResistant));
    };
    let verdict = verdict_json(cfg, &system, &attack, &run);
    write_file(&out_path(cfg, "trajectory.csv"), &trajectory_csv(&system, &run))?;
    write_file(&out_path(cfg, "verdict.json"), &pretty(&verdict))?;
    Ok((verdict, Outcome::Ok))
}

pub fn classify(cfg: &ScenarioConfig) -> CmdResult {
    cfg.validate()?;
    let system = cfg.system()?;
    let output = cfg.output_config()?;
    let first_resume = match cfg.attack.as_ref().map(|a| a.mode) {
        Some(AttackMode::IntermittentZda) => plan(cfg, &system)?.windows.first().map(|w| w.resume),
        Some(AttackMode::NaiveMidstart) => cfg.attack.as_ref().and_then(|a| a.kappa),
        _ => None,
    };
    let r = classify_detectability(&system, &output, first_resume, &RankPolicy::default())?;
    let basis: Vec<Vec<f64>> = r.n_infinity.basis().column_iter().map(|c| c.iter().copied().collect()).collect();
    let report = json!({
        "output_case": r.case.name(),
        "detectable": r.detectable,
        "limit_unobservable_dim": r.n_infinity.dim(),
        "limit_unobservable_basis": basis,
        "periods_used": r.periods_used,
        "failing_topology": r.failing_topology.map(|t| t.0),
        "closed_form_match": r.closed_form_match,
        "resume_or_clean_sensors": r.resume_or_clean_sensors,
        "conditions": r.conditions.iter().map(|c| json!({
            "topology": c.topology.0,
            "satisfied": c.verdict.satisfied,
            "witness_agents": c.verdict.witness_agents,
        })).collect::<Vec<_>>(),
    });
    Ok((report, Outcome::Ok))
}

/// Grid over inference delay, pause lead and threshold, run in parallel.
pub fn sweep(cfg: &ScenarioConfig) -> CmdResult {
    cfg.validate()?;
    let grid = cfg.sweep.clone().unwrap_or_default();
    let attack = cfg.attack.as_ref();
    let axis = |values: &Vec<f64>, fallback: f64| if values.is_empty() { vec![fallback] } else { values.clone() };
    let delays = axis(&grid.inference_delay, attack.map_or(0.0, |a| a.inference_delay));
    let leads = axis(&grid.pause_lead, attack.map_or(0.0, |a| a.pause_lead));
    let thresholds = axis(&grid.threshold, cfg.sim.threshold);
    let mut points = Vec::new();
    for &d in &delays {
        for &l in &leads {
            for &t in &thresholds {
                points.push((d, l, t));
            }
        }
    }
    let rows: Vec<Value> = points
        .par_iter()
        .map(|&(delay, lead, threshold)| {
            let mut local = cfg.clone();
            if let Some(a) = local.attack.as_mut() {
                a.inference_delay = delay;
                a.pause_lead = lead;
            }
            local.sim.threshold = threshold;
            let base = json!({ "inference_delay": delay, "pause_lead": lead, "threshold": threshold });
            let mut row = base;
            match run_scenario(&local) {
                Ok(Some((_, attack, run))) => {
                    row["status"] = json!("ran");
                    row["detected"] = json!(run.verdict.detected);
                    row["first_detection_time"] = json!(run.verdict.first_detection_time);
                    row["peak_residual"] = json!(run.verdict.peak_residual);
                    row["skipped_windows"] = json!(attack.skipped.len());
                }
                Ok(None) => row["status"] = json!("resistant"),
                Err(CommandError::Core(zdasim_core::Error::InfeasibleSchedule(_))) => row["status"] = json!("infeasible"),
                Err(e) => row["status"] = json!(format!("error: {e}")),
            }
            row
        })
        .collect();
    let mut table = String::from("inference_delay,pause_lead,threshold,status,detected,first_detection_time,peak_residual,skipped_windows\n");
    for r in &rows {
        let cell = |k: &str| match &r[k] {
            Value::Null => String::new(),
            Value::String(s) => s.replace(',', ";"),
            v => v.to_string(),
        };
        let cols = ["inference_delay", "pause_lead", "threshold", "status", "detected", "first_detection_time", "peak_residual", "skipped_windows"];
        table.push_str(&cols.iter().map(|c| cell(c)).collect::<Vec<_>>().join(","));
        table.push('\n');
    }
    write_file(&out_path(cfg, "sweep.csv"), &table)?;
    Ok((json!({ "points": rows }), Outcome::Ok))
}

fn out_path(cfg: &ScenarioConfig, suffix: &str) -> PathBuf {
    cfg.output.dir.join(format!("{}_{suffix}", cfg.output.prefix))
}

pub fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values always serialise");
    s.push('\n');
    s
}

impl From<(PathBuf, std::io::Error)> for CommandError {
    fn from((p, e): (PathBuf, std::io::Error)) -> Self {
        CommandError::Io(p, e)
    }
}
