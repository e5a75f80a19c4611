//! Scenario files: one JSON document with `system`, `attack`, `sim`,
//! `output` and optional `sweep` blocks.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use zdasim_core::graph::{library, Topology, TopologyId};
use zdasim_core::sysmodel::{AttackerConfig, OutputConfig, SwitchedSystem, SwitchingSchedule};
use zdasim_core::zda::{ZdaEntry, ZdaPolicy};

#[derive(Debug)]
pub enum ConfigError {
    Io(PathBuf, std::io::Error),
    /// Parse failure with 1-based line and column.
    Syntax { path: PathBuf, line: usize, column: usize, message: String },
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            ConfigError::Syntax { path, line, column, message } => {
                write!(f, "{}:{line}:{column}: {message}", path.display())
            }
            ConfigError::Invalid(m) => write!(f, "invalid scenario: {m}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<zdasim_core::Error> for ConfigError {
    fn from(e: zdasim_core::Error) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub system: SystemBlock,
    #[serde(default)]
    pub attack: Option<AttackBlock>,
    #[serde(default)]
    pub sim: SimBlock,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub sweep: Option<SweepBlock>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub topologies: Vec<TopologySpec>,
    pub schedule: ScheduleSpec,
    pub monitored: Vec<usize>,
    /// Position weights; defaults to zeros.
    #[serde(default)]
    pub c1: Option<Vec<f64>>,
    /// Velocity weights; defaults to ones.
    #[serde(default)]
    pub c2: Option<Vec<f64>>,
}

/// Either an explicit edge list or a named family.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub id: u32,
    #[serde(default)]
    pub n: Option<usize>,
    /// `[i, j]` or `[i, j, weight]`, 1-based.
    #[serde(default)]
    pub edges: Option<Vec<Vec<f64>>>,
    /// `path`, `cycle`, `star`, `complete` (needs `n`) or `experiment-1`
    /// through `experiment-4`.
    #[serde(default)]
    pub family: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    /// `[topology id, dwell]` pairs.
    pub sequence: Vec<(u32, f64)>,
    #[serde(default)]
    pub t0: f64,
    #[serde(default = "yes")]
    pub periodic: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    None,
    Zda,
    IntermittentZda,
    NaiveMidstart,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AttackBlock {
    pub mode: AttackMode,
    #[serde(default)]
    pub misbehaving: Vec<usize>,
    /// Topologies the attacker injects under; all scheduled ones if absent.
    #[serde(default)]
    pub attacked: Option<Vec<u32>>,
    #[serde(default)]
    pub inference_delay: f64,
    #[serde(default)]
    pub pause_lead: f64,
    /// Output-channel weights, one per monitored agent; zeros if absent.
    #[serde(default)]
    pub d: Option<Vec<f64>>,
    /// Growth rate used when a topology admits a kernel at every rate.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Start time of the naive attack.
    #[serde(default)]
    pub kappa: Option<f64>,
    /// Explicit directions replacing synthesis for the listed topologies.
    #[serde(default)]
    pub policy: Vec<PolicyEntrySpec>,
}

fn default_eta() -> f64 {
    0.5
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEntrySpec {
    pub topology: u32,
    pub eta: f64,
    pub z0: Vec<f64>,
    pub g: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    /// Duration; four schedule periods if absent.
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_consecutive")]
    pub min_consecutive: usize,
    #[serde(default)]
    pub seed: u64,
    /// Initial positions; drawn from the seed if absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub v0: Option<Vec<f64>>,
}

impl Default for SimBlock {
    fn default() -> Self {
        Self {
            horizon: None,
            dt: default_dt(),
            threshold: default_threshold(),
            min_consecutive: default_consecutive(),
            seed: 0,
            x0: None,
            v0: None,
        }
    }
}

fn default_dt() -> f64 {
    0.01
}

fn default_threshold() -> f64 {
    1e-3
}

fn default_consecutive() -> usize {
    3
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_prefix")]
    pub prefix: String,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: default_dir(), prefix: default_prefix() }
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_prefix() -> String {
    "run".to_string()
}

/// Parameter grid for `sweep`; absent axes keep the scenario's value.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    #[serde(default)]
    pub inference_delay: Vec<f64>,
    #[serde(default)]
    pub pause_lead: Vec<f64>,
    #[serde(default)]
    pub threshold: Vec<f64>,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| {
            let full = e.to_string();
            let suffix = format!(" at line {} column {}", e.line(), e.column());
            let message = full.strip_suffix(&suffix).unwrap_or(&full).to_string();
            ConfigError::Syntax { path: path.to_path_buf(), line: e.line(), column: e.column(), message }
        })
    }

    pub fn agent_count(&self) -> Result<usize, ConfigError> {
        let first = self.system.topologies.first().ok_or_else(|| invalid("system.topologies is empty"))?;
        Ok(build_topology(first)?.agent_count())
    }

    pub fn topologies(&self) -> Result<Vec<Topology>, ConfigError> {
        self.system.topologies.iter().map(build_topology).collect()
    }

    pub fn schedule(&self) -> Result<SwitchingSchedule, ConfigError> {
        let s = &self.system.schedule;
        let seq = s.sequence.iter().map(|(id, tau)| (TopologyId(*id), *tau)).collect();
        Ok(SwitchingSchedule::new(seq, s.t0, s.periodic)?)
    }

    pub fn output_config(&self) -> Result<OutputConfig, ConfigError> {
        let m = self.system.monitored.len();
        let c1 = self.system.c1.clone().unwrap_or_else(|| vec![0.0; m]);
        let c2 = self.system.c2.clone().unwrap_or_else(|| vec![1.0; m]);
        Ok(OutputConfig::new(self.system.monitored.clone(), c1, c2)?)
    }

    pub fn attacker(&self) -> Result<Option<AttackerConfig>, ConfigError> {
        let Some(a) = &self.attack else { return Ok(None) };
        let m = self.system.monitored.len();
        let d = a.d.clone().unwrap_or_else(|| vec![0.0; m]);
        Ok(Some(AttackerConfig::new(a.misbehaving.iter().copied().collect(), d, a.inference_delay, a.pause_lead)?))
    }

    pub fn system(&self) -> Result<SwitchedSystem, ConfigError> {
        let attacker = self.attacker()?;
        Ok(SwitchedSystem::new(&self.topologies()?, self.schedule()?, &self.output_config()?, attacker.as_ref())?)
    }

    pub fn horizon(&self) -> Result<f64, ConfigError> {
        let h = match self.sim.horizon {
            Some(h) => h,
            None => 4.0 * self.schedule()?.period(),
        };
        if !(h >= 0.0) || !h.is_finite() {
            return Err(invalid("sim.horizon must be finite and non-negative"));
        }
        Ok(h)
    }

    /// Topologies under attack: the configured list or every scheduled one.
    pub fn attacked(&self) -> Result<BTreeSet<TopologyId>, ConfigError> {
        let scheduled = self.schedule()?.topology_ids();
        match self.attack.as_ref().and_then(|a| a.attacked.as_ref()) {
            None => Ok(scheduled),
            Some(list) => {
                let set: BTreeSet<TopologyId> = list.iter().map(|&i| TopologyId(i)).collect();
                if let Some(bad) = set.iter().find(|id| !scheduled.contains(id)) {
                    return Err(invalid(format!("attack.attacked lists topology {bad}, which is never scheduled")));
                }
                Ok(set)
            }
        }
    }

    /// Hand-written policy entries, checked against the system size.
    pub fn explicit_entries(&self, n: usize) -> Result<Vec<(TopologyId, ZdaEntry)>, ConfigError> {
        let Some(a) = &self.attack else { return Ok(Vec::new()) };
        a.policy
            .iter()
            .map(|p| {
                if p.z0.len() != 2 * n || p.g.len() != n {
                    return Err(invalid(format!(
                        "attack.policy for topology {}: z0 needs {} entries and g needs {n}",
                        p.topology,
                        2 * n
                    )));
                }
                let entry = ZdaEntry {
                    eta: p.eta,
                    z0: DVector::from_vec(p.z0.clone()),
                    g: DVector::from_vec(p.g.clone()),
                    free: false,
                };
                Ok((TopologyId(p.topology), entry))
            })
            .collect()
    }

    /// Checks that explicit entries respect the misbehaving set.
    pub fn explicit_policy(&self, n: usize) -> Result<Option<ZdaPolicy>, ConfigError> {
        let Some(a) = &self.attack else { return Ok(None) };
        if a.policy.is_empty() {
            return Ok(None);
        }
        let entries = self.explicit_entries(n)?.into_iter().collect();
        Ok(Some(ZdaPolicy::from_entries(a.misbehaving.iter().copied().collect(), entries)?))
    }

    /// Reference initial state `[x0; v0]`, drawn from the seed when absent.
    pub fn initial_state(&self, n: usize) -> Result<DVector<f64>, ConfigError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.sim.seed);
        let mut part = |given: &Option<Vec<f64>>, name: &str, lo: f64, hi: f64| -> Result<Vec<f64>, ConfigError> {
            match given {
                Some(v) if v.len() == n => Ok(v.clone()),
                Some(v) => Err(invalid(format!("sim.{name} has {} entries, expected {n}", v.len()))),
                None => Ok((0..n).map(|_| rng.random_range(lo..hi)).collect()),
            }
        };
        let x = part(&self.sim.x0, "x0", 0.0, 5.0)?;
        let v = part(&self.sim.v0, "v0", 0.0, 10.0)?;
        Ok(DVector::from_iterator(2 * n, x.into_iter().chain(v)))
    }

    /// Structural checks that do not need any numerics.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let system = self.system()?;
        let n = system.agent_count();
        if !(self.sim.dt > 0.0) || !self.sim.dt.is_finite() {
            return Err(invalid("sim.dt must be positive"));
        }
        if !(self.sim.threshold > 0.0) {
            return Err(invalid("sim.threshold must be positive"));
        }
        self.horizon()?;
        self.initial_state(n)?;
        if let Some(a) = &self.attack {
            if a.mode == AttackMode::NaiveMidstart && a.kappa.is_none() {
                return Err(invalid("attack.kappa is required for naive-midstart"));
            }
            self.attacked()?;
            self.explicit_policy(n)?;
        }
        Ok(())
    }
}

fn build_topology(spec: &TopologySpec) -> Result<Topology, ConfigError> {
    let id = TopologyId(spec.id);
    match (&spec.edges, &spec.family) {
        (Some(edges), None) => {
            let n = spec.n.ok_or_else(|| invalid(format!("topology {id}: `n` is required with `edges`")))?;
            let mut list = Vec::with_capacity(edges.len());
            for e in edges {
                let (i, j, w) = match e.as_slice() {
                    [i, j] => (*i, *j, 1.0),
                    [i, j, w] => (*i, *j, *w),
                    _ => return Err(invalid(format!("topology {id}: edges must be [i, j] or [i, j, w]"))),
                };
                if i.fract() != 0.0 || j.fract() != 0.0 || i < 1.0 || j < 1.0 {
                    return Err(invalid(format!("topology {id}: agent indices must be positive integers")));
                }
                list.push((i as usize, j as usize, w));
            }
            Ok(Topology::new(id, n, list)?)
        }
        (None, Some(family)) => {
            let need_n = || spec.n.ok_or_else(|| invalid(format!("topology {id}: family `{family}` needs `n`")));
            let g = match family.as_str() {
                "path" => library::path(id, need_n()?),
                "cycle" => library::cycle(id, need_n()?),
                "star" => library::star(id, need_n()?),
                "complete" => library::complete(id, need_n()?),
                other => {
                    let k = other
                        .strip_prefix("experiment-")
                        .and_then(|k| k.parse::<u32>().ok())
                        .and_then(library::experiment)
                        .ok_or_else(|| invalid(format!("topology {id}: unknown family `{other}`")))?;
                    k.with_id(id)
                }
            };
            if let Some(n) = spec.n {
                if n != g.agent_count() {
                    return Err(invalid(format!("topology {id}: family has {} agents, n says {n}", g.agent_count())));
                }
            }
            Ok(g)
        }
        _ => Err(invalid(format!("topology {id}: give exactly one of `edges` or `family`"))),
    }
}
