//! Deterministic writers for the CSV/JSON artifacts.

use anyhow::Result;
use hbnet::{fmt_csv, PatternLabel, SimulationResult};
use std::path::Path;

/// Trajectory CSV: `t,u_1,v_1,...,u_N,v_N` (scalar nodes: `t,x_1..x_N`).
pub fn simulation_csv(result: &SimulationResult) -> String {
    let (n, p) = result.layout;
    let mut header = String::from("t");
    for node in 1..=n {
        if p == 1 {
            header.push_str(&format!(",x_{node}"));
        } else {
            header.push_str(&format!(",u_{node},v_{node}"));
        }
    }
    header.push('\n');
    let mut out = header;
    for (i, &t) in result.times.iter().enumerate() {
        out.push_str(&fmt_csv(t));
        let state = result.state_at(i);
        for v in state {
            out.push(',');
            out.push_str(&fmt_csv(*v));
        }
        out.push('\n');
    }
    out
}

pub fn classification_json(label: &PatternLabel) -> Result<String> {
    Ok(serde_json::to_string_pretty(label)?)
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}
