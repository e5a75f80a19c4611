//! File writers: trajectory CSV and plain text files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use zdasim_core::sim::TwinRunResult;
use zdasim_core::sysmodel::SwitchedSystem;

/// `t, x_1..x_n, v_1..v_n, y_1..y_m, r_1..r_m, event` for the attacked
/// plant. Values use the shortest round-trip representation, so equal runs
/// give byte-identical files.
pub fn trajectory_csv(system: &SwitchedSystem, run: &TwinRunResult) -> String {
    let n = system.agent_count();
    let m = system.output_dim();
    let mut out = String::from("t");
    for (prefix, count) in [("x", n), ("v", n), ("y", m), ("r", m)] {
        for i in 1..=count {
            let _ = write!(out, ",{prefix}_{i}");
        }
    }
    out.push_str(",event\n");
    let traj = &run.attacked;
    for k in 0..traj.len() {
        let _ = write!(out, "{}", traj.times[k]);
        for v in traj.states[k].iter().chain(traj.outputs[k].iter()).chain(run.residuals[k].iter()) {
            let _ = write!(out, ",{v:e}");
        }
        let events: Vec<String> = traj
            .events_at(k)
            .map(|e| match e.topology {
                Some(t) => format!("{}:{}", e.kind.name(), t),
                None => e.kind.name().to_string(),
            })
            .collect();
        out.push(',');
        out.push_str(&events.join(";"));
        out.push('\n');
    }
    out
}

/// Writes `contents`, creating parent directories as needed.
pub fn write_file(path: &Path, contents: &str) -> Result<(), (PathBuf, std::io::Error)> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| (parent.to_path_buf(), e))?;
    }
    fs::write(path, contents).map_err(|e| (path.to_path_buf(), e))
}
