//! Experiment configuration: one JSON document per experiment, overridable
//! from the command line through dotted paths.

use anyhow::{anyhow, bail, Context, Result};
use hbnet::{
    ExponentPolicy, NewtonSettings, NodeDynamics, NodeModel, PrimerParams, RingTopology,
    StepSettings, WilsonCowanParams,
};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub topology: Option<TopologySection>,
    #[serde(default)]
    pub numerics: NumericsSection,
    #[serde(default)]
    pub task: TaskSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSection {
    Primer {
        w: f64,
        drive: f64,
        beta: f64,
        tau_intra: f64,
    },
    WilsonCowan {
        kappa: f64,
        w_uu: f64,
        w_vu: f64,
        w_uv: f64,
        w_vv: f64,
        i_u: f64,
        i_v: f64,
        beta: f64,
        tau_intra: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub n: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    pub total_weight: f64,
    pub profile: ProfileSection,
    #[serde(default)]
    pub self_weight: f64,
    pub tau_inter: f64,
    /// Overrides the model's self-delay when set (ring experiments often
    /// share node parameters but change the intra-node delay).
    #[serde(default)]
    pub tau_intra: Option<f64>,
}

fn default_eps() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSection {
    ExpDecay { rate: f64 },
    Geometric { ratio: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsSection {
    pub m: usize,
    pub newton: NewtonSection,
    pub scan: ScanSection,
    pub real_roots: RealRootsSection,
    pub continuation: ContinuationSection,
    /// Integrator step; derived from the delays and period when absent.
    pub dt: Option<f64>,
    pub dt_out: Option<f64>,
    pub classify: ClassifySection,
}

impl Default for NumericsSection {
    fn default() -> Self {
        Self {
            m: 30,
            newton: NewtonSection::default(),
            scan: ScanSection::default(),
            real_roots: RealRootsSection::default(),
            continuation: ContinuationSection::default(),
            dt: None,
            dt_out: None,
            classify: ClassifySection::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonSection {
    pub tol_residual: f64,
    pub max_iter: usize,
    pub damping_factor: f64,
    pub min_damping: f64,
    pub finite_difference_jacobian: bool,
}

impl Default for NewtonSection {
    fn default() -> Self {
        let d = NewtonSettings::default();
        Self {
            tol_residual: d.tol_residual,
            max_iter: d.max_iter,
            damping_factor: d.damping_factor,
            min_damping: d.min_damping,
            finite_difference_jacobian: d.finite_difference_jacobian,
        }
    }
}

impl NewtonSection {
    pub fn to_settings(&self) -> NewtonSettings {
        NewtonSettings {
            tol_residual: self.tol_residual,
            max_iter: self.max_iter,
            damping_factor: self.damping_factor,
            min_damping: self.min_damping,
            finite_difference_jacobian: self.finite_difference_jacobian,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub nu: (f64, f64),
    /// Imaginary range; `None` selects `[~0, 3 pi / T]`.
    pub omega: Option<(f64, f64)>,
    pub resolution: (usize, usize),
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            nu: (-3.0, 1.0),
            omega: None,
            resolution: (81, 61),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealRootsSection {
    pub interval: (f64, f64),
    pub grid: usize,
}

impl Default for RealRootsSection {
    fn default() -> Self {
        Self {
            interval: (-3.0, 1.0),
            grid: 400,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationSection {
    pub ds0: f64,
    pub ds_max: f64,
    pub max_halvings: usize,
    pub grow_after: usize,
    pub grow_factor: f64,
    pub max_points: usize,
    pub exponent_interval: (f64, f64),
    pub exponent_grid: usize,
    pub full_scan_every: usize,
    pub scan_resolution: (usize, usize),
    pub verdict_threshold: f64,
    pub monitor_exponents: bool,
}

impl Default for ContinuationSection {
    fn default() -> Self {
        let s = StepSettings::default();
        let e = ExponentPolicy::default();
        Self {
            ds0: s.ds0,
            ds_max: s.ds_max,
            max_halvings: s.max_halvings,
            grow_after: s.grow_after,
            grow_factor: s.grow_factor,
            max_points: s.max_points,
            exponent_interval: e.interval,
            exponent_grid: e.grid,
            full_scan_every: e.full_scan_every,
            scan_resolution: e.scan_resolution,
            verdict_threshold: e.verdict_threshold,
            monitor_exponents: e.enabled,
        }
    }
}

impl ContinuationSection {
    pub fn step_settings(&self) -> StepSettings {
        StepSettings {
            ds0: self.ds0,
            ds_max: self.ds_max,
            max_halvings: self.max_halvings,
            grow_after: self.grow_after,
            grow_factor: self.grow_factor,
            max_points: self.max_points,
        }
    }

    pub fn exponent_policy(&self) -> ExponentPolicy {
        ExponentPolicy {
            enabled: self.monitor_exponents,
            interval: self.exponent_interval,
            grid: self.exponent_grid,
            full_scan_every: self.full_scan_every,
            scan_resolution: self.scan_resolution,
            verdict_threshold: self.verdict_threshold,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifySection {
    pub periods: usize,
    pub sync_tol: f64,
    pub wave_tol: f64,
    pub drift_tol: f64,
}

impl Default for ClassifySection {
    fn default() -> Self {
        let d = hbnet::ClassifyOptions::default();
        Self {
            periods: d.periods,
            sync_tol: d.sync_tol,
            wave_tol: d.wave_tol,
            drift_tol: d.drift_tol,
        }
    }
}

impl ClassifySection {
    pub fn to_options(&self) -> hbnet::ClassifyOptions {
        hbnet::ClassifyOptions {
            periods: self.periods,
            sync_tol: self.sync_tol,
            wave_tol: self.wave_tol,
            drift_tol: self.drift_tol,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub solve: SolveTask,
    pub spectrum: SpectrumTask,
    #[serde(rename = "continue")]
    pub continuation: ContinueTask,
    pub simulate: SimulateTask,
    pub verify: VerifyTask,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveTask {
    pub guess: GuessSpec,
    pub wave_mode: usize,
}

impl Default for SolveTask {
    fn default() -> Self {
        Self {
            guess: GuessSpec::Simulate {
                t_end: 400.0,
                history_offset: 0.05,
            },
            wave_mode: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GuessSpec {
    /// Bootstrap from a transient simulation of the synchronous equation.
    Simulate { t_end: f64, history_offset: f64 },
    /// Seed from a stored orbit file.
    OrbitFile { path: String },
    /// Sinusoid of the given amplitude and period around the steady state
    /// (first component), for orbits with no stable transient to follow.
    Sinusoid { amplitude: f64, period: f64 },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumTask {
    /// Modes to scan; default 0..=N/2 (conjugates synthesised).
    pub modes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinueTask {
    pub range: (f64, f64),
    pub direction: f64,
    /// Dotted config path of the continuation parameter.
    pub parameter: String,
    /// Embed all orbits in a JSON sidecar next to the branch CSV.
    pub embed_orbits: bool,
}

impl Default for ContinueTask {
    fn default() -> Self {
        Self {
            range: (0.0, 1.0),
            direction: 1.0,
            parameter: "topology.tau_inter".into(),
            embed_orbits: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateTask {
    pub t_end: f64,
    pub seed: SeedSpec,
}

impl Default for SimulateTask {
    fn default() -> Self {
        Self {
            t_end: 1000.0,
            seed: SeedSpec::Random {
                scale: 1e-3,
                rng_seed: 1,
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SeedSpec {
    /// Constant history at the given per-node state (length p).
    Constant { state: Vec<f64> },
    /// The orbit passed on the command line, perturbed along one circulant
    /// mode.
    OrbitPerturbation { mode: usize, amplitude: f64 },
    /// The orbit passed on the command line (or the steady state without
    /// one), plus uniform random per-node offsets.
    Random { scale: f64, rng_seed: u64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyTask {
    pub periods: usize,
}

impl Default for VerifyTask {
    fn default() -> Self {
        Self { periods: 5 }
    }
}

/// Apply a `--override key=value` pair to the raw JSON document.
pub fn apply_override(value: &mut serde_json::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override must look like path.to.key=value (got {spec:?})"))?;
    let new_value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = value;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        if i + 1 == segments.len() {
            match cursor {
                serde_json::Value::Object(map) => {
                    map.insert(segment.to_string(), new_value);
                    return Ok(());
                }
                _ => bail!("override path {path:?} does not address an object"),
            }
        }
        cursor = match cursor {
            serde_json::Value::Object(map) => map
                .entry(segment.to_string())
                .or_insert_with(|| serde_json::Value::Object(Default::default())),
            _ => bail!("override path {path:?} does not address an object"),
        };
    }
    unreachable!()
}

/// Parse and validate a configuration from raw JSON.
pub fn config_from_value(value: serde_json::Value) -> Result<ExperimentConfig> {
    let config: ExperimentConfig =
        serde_json::from_value(value).context("configuration schema error")?;
    // surface invalid physical parameters now, with field names
    build_model(&config)?;
    Ok(config)
}

/// Build the node model (plus optional ring) from a configuration.
pub fn build_model(config: &ExperimentConfig) -> Result<NodeModel> {
    let tau_override = config.topology.as_ref().and_then(|t| t.tau_intra);
    let dynamics = match &config.model {
        ModelSection::Primer {
            w,
            drive,
            beta,
            tau_intra,
        } => NodeDynamics::Primer(
            PrimerParams::new(*w, *drive, *beta, tau_override.unwrap_or(*tau_intra))
                .map_err(|e| anyhow!("model.{e}"))?,
        ),
        ModelSection::WilsonCowan {
            kappa,
            w_uu,
            w_vu,
            w_uv,
            w_vv,
            i_u,
            i_v,
            beta,
            tau_intra,
        } => NodeDynamics::WilsonCowan(
            WilsonCowanParams::new(
                *kappa,
                *w_uu,
                *w_vu,
                *w_uv,
                *w_vv,
                *i_u,
                *i_v,
                *beta,
                tau_override.unwrap_or(*tau_intra),
            )
            .map_err(|e| anyhow!("model.{e}"))?,
        ),
    };
    let topology = match &config.topology {
        None => None,
        Some(t) => {
            let topo = match &t.profile {
                ProfileSection::ExpDecay { rate } => {
                    RingTopology::exp_decay(t.n, t.eps, t.total_weight, *rate, t.tau_inter)
                }
                ProfileSection::Geometric { ratio } => {
                    RingTopology::geometric(t.n, t.eps, t.total_weight, *ratio, t.tau_inter)
                }
            }
            .map_err(|e| anyhow!("topology.{e}"))?;
            Some(
                topo.with_self_weight(t.self_weight)
                    .map_err(|e| anyhow!("topology.{e}"))?,
            )
        }
    };
    Ok(NodeModel {
        dynamics,
        topology,
    })
}
